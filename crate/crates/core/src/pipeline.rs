//! The two-stage semi-supervised training loop.
//!
//! Stage 1 (before the boundary at `stage2_start_fraction` of total
//! iterations): the student trains on labeled data only while the rewarder
//! and generator pre-train against each other on the labeled pool. Stage 2:
//! the EMA teacher pseudo-labels each unlabeled batch (optionally screening
//! several candidates per item under the annealed decay schedule), the
//! selection policy filters them, the student trains on labeled plus
//! selected-pseudo losses, and the rewarder/generator continue on a random
//! subsample of the mixed pool. The teacher tracks the student by EMA
//! throughout, and evaluation always reads the teacher.
//!
//! Student and rewarder optimization are fully decoupled: separate parameter
//! sets, separate optimizers, and stop-gradient forwards everywhere the two
//! interact.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{generate_dataset, Dataset, DatasetSpec, RawLabel, TrainingView};
use crate::error::{Error, Result};
use crate::labels::{argmax, nearest_soft_onehot, LabelCodec, LabelVector};
use crate::metrics::{
    evaluate, pseudo_label_quality, EvalMetric, MetricsRecord, QualityReport, RunSummary,
};
use crate::model::StudentNet;
use crate::optim::{ema_update, Adam};
use crate::rewarder::{
    alternating_update, AuxLosses, Generator, Rewarder, RewarderConfig, RewarderLossConfig,
};
use crate::selection::{decay_forward_count, DecayMode, SelectionStrategy};
use crate::tape::{LossKind, Tape};
use crate::tensor::Tensor;

fn default_stage2_fraction() -> f64 {
    0.10
}
fn default_subsample_ratio() -> f64 {
    0.1
}
fn default_batch() -> usize {
    16
}
fn default_student_lr() -> f64 {
    2e-3
}
fn default_rewarder_lr() -> f64 {
    5e-4
}
fn default_ema() -> f64 {
    0.999
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_embed_dim() -> usize {
    128
}
fn default_augment() -> f64 {
    0.05
}
fn default_interval() -> u64 {
    50
}
fn default_eval_subset() -> usize {
    400
}
fn default_selection() -> SelectionStrategy {
    SelectionStrategy::parse("reward_average")
        .expect("default strategy")
        .with_decay(DecayMode::Annealed { cap: 10 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_iters: u64,
    /// Stage-2 start as a fraction of total iterations (the scheduler T).
    #[serde(default = "default_stage2_fraction")]
    pub stage2_start_fraction: f64,
    /// Fraction of the mixed pool used per stage-2 rewarder update.
    #[serde(default = "default_subsample_ratio")]
    pub subsample_ratio: f64,
    #[serde(default = "default_batch")]
    pub batch_labeled: usize,
    #[serde(default = "default_batch")]
    pub batch_unlabeled: usize,
    #[serde(default = "default_batch")]
    pub batch_reward: usize,
    #[serde(default = "default_student_lr")]
    pub student_lr: f64,
    /// Decoupled weight decay for the student optimizer; 0 keeps plain Adam.
    #[serde(default)]
    pub student_weight_decay: f64,
    #[serde(default = "default_rewarder_lr")]
    pub rewarder_lr: f64,
    #[serde(default)]
    pub rewarder_loss: RewarderLossKindConfig,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_ema")]
    pub ema_momentum: f64,
    #[serde(default = "default_hidden")]
    pub student_hidden: Vec<usize>,
    #[serde(default = "default_selection")]
    pub selection: SelectionStrategy,
    /// Weak-augmentation noise as a fraction of per-feature std.
    #[serde(default = "default_augment")]
    pub augment_noise: f64,
    /// Fraction of pseudo labels replaced by uniform noise, for the
    /// noisy-teacher experiments. 0 disables injection.
    #[serde(default)]
    pub teacher_noise: f64,
    #[serde(default = "default_interval")]
    pub log_interval: u64,
    /// Unlabeled slice used for pseudo-label quality metrics.
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    /// Restrict the stage-2 rewarder pool to labeled pairs only (the
    /// alternative reading of the stage-2 target provenance).
    #[serde(default)]
    pub stage2_rewarder_labeled_only: bool,
    /// Halt after this many logged intervals without improvement; best-so-far
    /// bookkeeping happens regardless.
    #[serde(default)]
    pub early_stop_patience: Option<u64>,
    pub dataset: DatasetSpec,
}

/// Rewarder loss selector limited to the supported pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewarderLossKindConfig {
    #[default]
    Mse,
    Bce,
}

impl RewarderLossKindConfig {
    pub fn as_loss_kind(&self) -> LossKind {
        match self {
            RewarderLossKindConfig::Mse => LossKind::Mse,
            RewarderLossKindConfig::Bce => LossKind::Bce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stage2_start_fraction) {
            return Err(Error::Config("stage2_start_fraction must lie in [0, 1]".into()));
        }
        if !(self.subsample_ratio > 0.0 && self.subsample_ratio <= 1.0) {
            return Err(Error::Config("subsample_ratio must lie in (0, 1]".into()));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 || self.batch_reward == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.student_lr <= 0.0 || self.rewarder_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config("ema_momentum must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.teacher_noise) {
            return Err(Error::Config("teacher_noise must lie in [0, 1]".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be >= 1".into()));
        }
        if self.student_hidden.is_empty() {
            return Err(Error::Config("student needs at least one hidden layer".into()));
        }
        self.selection.validate()?;
        self.dataset.validate()?;
        Ok(())
    }

    /// First stage-2 iteration (0-based).
    pub fn stage_boundary(&self) -> u64 {
        (self.stage2_start_fraction * self.total_iters as f64).floor() as u64
    }

    /// Supervised loss for the task: cross-entropy for classification,
    /// l1 on soft one-hot vectors for regression.
    pub fn supervised_loss_kind(&self, codec: &LabelCodec) -> LossKind {
        if codec.is_regression() {
            LossKind::L1
        } else {
            LossKind::CrossEntropy
        }
    }

    fn rewarder_loss_config(&self) -> RewarderLossConfig {
        RewarderLossConfig {
            loss_kind: self.rewarder_loss.as_loss_kind(),
            learning_rate: self.rewarder_lr,
            ..RewarderLossConfig::default()
        }
    }
}

/// Per-step report, mostly for tests and probes.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub iteration: u64,
    pub stage: u8,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub loss_total: f64,
    pub aux: Option<AuxLosses>,
    pub selected: usize,
    pub unlabeled_batch: usize,
    pub rewarder_subsample: usize,
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<MetricsRecord>,
    pub student: StudentNet,
    pub teacher: StudentNet,
    pub rewarder: Rewarder,
    pub generator: Generator,
}

/// Pseudo labels plus confidences for a batch of teacher outputs:
/// argmax one-hot and max-softmax confidence for classification; nearest
/// soft one-hot with confidence pinned to 1 for regression.
pub fn pseudo_label_generate(
    teacher: &StudentNet,
    x: &Tensor,
    codec: &LabelCodec,
) -> Result<(Vec<LabelVector>, Vec<f64>)> {
    let (outputs, _) = teacher.forward_pure(x)?;
    let mut labels = Vec::with_capacity(x.rows());
    let mut confidences = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = outputs.row(i);
        if codec.is_regression() {
            labels.push(nearest_soft_onehot(row, codec)?);
            confidences.push(1.0);
        } else {
            let k = argmax(row);
            let max = row[k];
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            confidences.push(1.0 / sum);
            labels.push(crate::labels::encode_onehot(k, codec)?);
        }
    }
    Ok((labels, confidences))
}

/// Mean supervised loss of a student on an encoded batch, gradient-free.
pub fn supervised_loss(
    student: &StudentNet,
    x: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::Domain("supervised loss on an empty batch".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let (out, _, _) = student.forward_on(&mut tape, xv, true)?;
    let tv = tape.input(targets);
    let loss = tape.loss(kind, out, tv)?;
    Ok(tape.scalar_value(loss))
}

struct LossAccum {
    labeled: f64,
    unlabeled: f64,
    rewarder: f64,
    generator: f64,
    aux_steps: u64,
    steps: u64,
}

impl LossAccum {
    fn new() -> Self {
        LossAccum { labeled: 0.0, unlabeled: 0.0, rewarder: 0.0, generator: 0.0, aux_steps: 0, steps: 0 }
    }

    fn add(&mut self, stats: &StepStats) {
        self.labeled += stats.loss_labeled;
        self.unlabeled += stats.loss_unlabeled;
        self.steps += 1;
        if let Some(aux) = stats.aux {
            self.rewarder += aux.rewarder;
            self.generator += aux.generator;
            self.aux_steps += 1;
        }
    }

    fn drain(&mut self) -> (f64, f64, Option<f64>, Option<f64>) {
        let n = self.steps.max(1) as f64;
        let a = self.aux_steps.max(1) as f64;
        let out = (
            self.labeled / n,
            self.unlabeled / n,
            (self.aux_steps > 0).then_some(self.rewarder / a),
            (self.aux_steps > 0).then_some(self.generator / a),
        );
        *self = LossAccum::new();
        out
    }
}

pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    view: TrainingView<'a>,
    codec: LabelCodec,
    loss_kind: LossKind,
    reward_cfg: RewarderLossConfig,
    boundary: u64,
    iteration: u64,
    student: StudentNet,
    teacher: StudentNet,
    rewarder: Rewarder,
    generator: Generator,
    opt_student: Adam,
    opt_rewarder: Adam,
    opt_generator: Adam,
    rng: ChaCha8Rng,
    feature_std: Vec<f64>,
    records: Vec<MetricsRecord>,
    accum: LossAccum,
    best_primary: f64,
    best_eval: EvalMetric,
    best_iteration: u64,
    intervals_since_best: u64,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let codec = data.codec.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let student = StudentNet::new(
            data.input_dim(),
            &cfg.student_hidden,
            codec.len(),
            &mut rng,
        )?;
        let teacher = student.clone();
        let rcfg = RewarderConfig::new(student.feature_dim(), codec.len())
            .with_embed_dim(cfg.embed_dim);
        let rewarder = Rewarder::new(rcfg, &mut rng);
        let generator = Generator::new(student.feature_dim(), codec.len(), &mut rng);
        let loss_kind = cfg.supervised_loss_kind(&codec);
        let reward_cfg = cfg.rewarder_loss_config();
        reward_cfg.validate()?;
        let feature_std = data.feature_std();
        let eval = evaluate(&teacher, &data.test_x, &data.test_y, &codec)?;
        Ok(Trainer {
            cfg,
            data,
            view: data.training_view(),
            codec,
            loss_kind,
            reward_cfg,
            boundary: cfg.stage_boundary(),
            iteration: 0,
            student,
            teacher,
            rewarder,
            generator,
            opt_student: Adam::new(cfg.student_lr).with_weight_decay(cfg.student_weight_decay),
            opt_rewarder: Adam::new(cfg.rewarder_lr),
            opt_generator: Adam::new(cfg.rewarder_lr),
            rng,
            feature_std,
            records: Vec::new(),
            accum: LossAccum::new(),
            best_primary: eval.primary(),
            best_eval: eval,
            best_iteration: 0,
            intervals_since_best: 0,
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn stage(&self) -> u8 {
        if self.iteration < self.boundary {
            1
        } else {
            2
        }
    }

    pub fn student(&self) -> &StudentNet {
        &self.student
    }

    pub fn teacher(&self) -> &StudentNet {
        &self.teacher
    }

    pub fn rewarder(&self) -> &Rewarder {
        &self.rewarder
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Student, rewarder, and generator parameter buffers must be pairwise
    /// distinct allocations: the optimizers cannot share parameters.
    pub fn optimizers_disjoint(&self) -> bool {
        let mut ptrs: Vec<*const f64> = Vec::new();
        for set in [&self.student.params, &self.rewarder.params, &self.generator.params] {
            for (_, t) in set.iter() {
                ptrs.push(t.data().as_ptr());
            }
        }
        let before = ptrs.len();
        ptrs.sort();
        ptrs.dedup();
        ptrs.len() == before
    }

    fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
        let d = x.cols();
        let mut flat = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            flat.extend_from_slice(x.row(i));
        }
        Tensor::from_vec(vec![idx.len(), d], flat).expect("gather shape")
    }

    fn sample_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
        if batch >= n {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, batch).into_vec()
        }
    }

    fn augment_rows(
        rng: &mut ChaCha8Rng,
        x: &Tensor,
        feature_std: &[f64],
        sigma: f64,
    ) -> Tensor {
        if sigma == 0.0 {
            return x.clone();
        }
        let d = x.cols();
        let mut out = x.data().to_vec();
        for i in 0..x.rows() {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                out[i * d + j] += sigma * feature_std[j] * z;
            }
        }
        Tensor::from_vec(x.shape().to_vec(), out).expect("augment shape")
    }

    fn augment(&mut self, x: &Tensor) -> Tensor {
        Self::augment_rows(&mut self.rng, x, &self.feature_std, self.cfg.augment_noise)
    }

    fn encode_rows(&self, labels: &[LabelVector]) -> Result<Tensor> {
        let c = self.codec.len();
        let mut flat = Vec::with_capacity(labels.len() * c);
        for l in labels {
            flat.extend_from_slice(l.values());
        }
        Tensor::from_vec(vec![labels.len(), c], flat)
    }

    fn encode_raw(&self, labels: &[RawLabel]) -> Result<Tensor> {
        let c = self.codec.len();
        let mut flat = Vec::with_capacity(labels.len() * c);
        for l in labels {
            flat.extend_from_slice(l.encode(&self.codec)?.values());
        }
        Tensor::from_vec(vec![labels.len(), c], flat)
    }

    /// Replace a pseudo label with uniform noise with probability
    /// `teacher_noise` (the noisy-teacher harness knob).
    fn inject_noise(
        rng: &mut ChaCha8Rng,
        label: LabelVector,
        codec: &LabelCodec,
        noise: f64,
    ) -> Result<LabelVector> {
        if noise <= 0.0 || rng.gen_range(0.0..1.0) >= noise {
            return Ok(label);
        }
        match codec {
            LabelCodec::Regression { range: (lo, hi), .. } => {
                let y = rng.gen_range(*lo..*hi);
                crate::labels::encode_soft_onehot(y, codec)
            }
            _ => {
                let c = rng.gen_range(0..codec.len());
                crate::labels::encode_onehot(c, codec)
            }
        }
    }

    /// Teacher pseudo-labeling with optional multi-forward screening.
    /// Returns per-item (label, confidence, reward): rewards only when the
    /// policy consumes them.
    fn generate_screened(
        rng: &mut ChaCha8Rng,
        teacher: &StudentNet,
        rewarder: &Rewarder,
        codec: &LabelCodec,
        cfg: &TrainConfig,
        feature_std: &[f64],
        x: &Tensor,
        indices: &[usize],
        n_forwards: u64,
        use_rewarder: bool,
    ) -> Result<(Vec<LabelVector>, Vec<f64>, Vec<f64>)> {
        let mut labels = Vec::with_capacity(indices.len());
        let mut confidences = Vec::with_capacity(indices.len());
        let mut rewards = Vec::with_capacity(indices.len());
        let d = x.cols();
        for &i in indices {
            let row = Self::gather_rows(x, &[i]);
            if n_forwards <= 1 {
                let (mut ls, cs) = pseudo_label_generate(teacher, &row, codec)?;
                let label =
                    Self::inject_noise(rng, ls.pop().expect("one label"), codec, cfg.teacher_noise)?;
                if use_rewarder {
                    let feats = teacher.feature_extract(&row)?;
                    let score = rewarder.score(feats.row(0), label.values())?;
                    rewards.push(score);
                }
                labels.push(label);
                confidences.push(cs[0]);
            } else {
                // Independent weak views, one teacher forward each, keep the
                // highest-reward candidate.
                let n = n_forwards as usize;
                let mut views = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let aug = Self::augment_rows(rng, &row, feature_std, cfg.augment_noise);
                    views.extend_from_slice(aug.data());
                }
                let views = Tensor::from_vec(vec![n, d], views)?;
                let (cand_labels, cand_conf) = pseudo_label_generate(teacher, &views, codec)?;
                let cand_labels: Vec<LabelVector> = cand_labels
                    .into_iter()
                    .map(|l| Self::inject_noise(rng, l, codec, cfg.teacher_noise))
                    .collect::<Result<_>>()?;
                let feats = teacher.feature_extract(&views)?;
                let mut label_flat = Vec::with_capacity(n * codec.len());
                for l in &cand_labels {
                    label_flat.extend_from_slice(l.values());
                }
                let label_mat = Tensor::from_vec(vec![n, codec.len()], label_flat)?;
                let scores = rewarder.score_batch(&feats, &label_mat)?;
                let mut best = 0;
                for (k, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = k;
                    }
                }
                labels.push(cand_labels[best].clone());
                confidences.push(cand_conf[best]);
                rewards.push(scores[best]);
            }
        }
        Ok((labels, confidences, rewards))
    }

    /// One student update from labeled (and optionally selected pseudo)
    /// batches. Unlabeled term is `sum(selected H) / batch_unlabeled` per the
    /// total-loss decomposition.
    fn student_update(
        &mut self,
        labeled_x: &Tensor,
        labeled_targets: &Tensor,
        unlabeled: Option<(&Tensor, &Tensor, usize)>,
    ) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let lx = tape.input(labeled_x);
        let (l_out, _, vars) = self.student.forward_on(&mut tape, lx, false)?;
        let lt = tape.input(labeled_targets);
        let loss_l = tape.loss(self.loss_kind, l_out, lt)?;

        let mut loss_u_value = 0.0;
        let total = match unlabeled {
            Some((ux, ut, batch_u)) if ux.rows() > 0 => {
                let uxv = tape.input(ux);
                // Parameters already live on this tape; rebuilding the
                // forward against the same vars keeps one optimizer step.
                let (u_out, _) = self.student_forward_shared(&mut tape, uxv, &vars)?;
                let utv = tape.input(ut);
                let mean_u = tape.loss(self.loss_kind, u_out, utv)?;
                let scaled = tape.scale(mean_u, ux.rows() as f64 / batch_u as f64);
                loss_u_value = tape.scalar_value(scaled);
                tape.add(loss_l, scaled)?
            }
            _ => loss_l,
        };
        let loss_l_value = tape.scalar_value(loss_l);
        let total_value = tape.scalar_value(total);
        tape.backward(total)?;
        for (i, v) in vars.iter().enumerate() {
            tape.write_grad(*v, self.student.params.at_mut(i))?;
        }
        self.opt_student.step(&mut self.student.params)?;
        Ok((loss_l_value, loss_u_value, total_value))
    }

    /// Forward pass reusing parameter vars already registered on the tape.
    fn student_forward_shared(
        &self,
        tape: &mut Tape,
        x: crate::tape::Var,
        vars: &[crate::tape::Var],
    ) -> Result<(crate::tape::Var, crate::tape::Var)> {
        let mut h = x;
        let mut vi = 0;
        for _ in 0..self.student.hidden.len() {
            let z = tape.matmul(h, vars[vi])?;
            let z = tape.add_bias(z, vars[vi + 1])?;
            h = tape.relu(z);
            vi += 2;
        }
        let out = tape.matmul(h, vars[vi])?;
        let out = tape.add_bias(out, vars[vi + 1])?;
        Ok((out, h))
    }

    fn rewarder_update(&mut self, features: &Tensor, truths: &Tensor) -> Result<AuxLosses> {
        alternating_update(
            &mut self.rewarder,
            &mut self.generator,
            features,
            truths,
            &self.reward_cfg,
            &mut self.opt_rewarder,
            &mut self.opt_generator,
        )
    }

    fn stage1_step(&mut self) -> Result<StepStats> {
        let n_labeled = self.view.labeled_x.rows();
        let li = Self::sample_indices(&mut self.rng, n_labeled, self.cfg.batch_labeled);
        let lx = Self::gather_rows(self.view.labeled_x, &li);
        let lx = self.augment(&lx);
        let ly: Vec<RawLabel> = li.iter().map(|&i| self.view.labeled_y[i]).collect();
        let targets = self.encode_raw(&ly)?;
        let (loss_l, _, total) = self.student_update(&lx, &targets, None)?;

        let aux = if self.cfg.selection.uses_rewarder() {
            let ri = Self::sample_indices(&mut self.rng, n_labeled, self.cfg.batch_reward);
            let rx = Self::gather_rows(self.view.labeled_x, &ri);
            let rx = self.augment(&rx);
            let feats = self.teacher.feature_extract(&rx)?;
            let ry: Vec<RawLabel> = ri.iter().map(|&i| self.view.labeled_y[i]).collect();
            let truths = self.encode_raw(&ry)?;
            Some(self.rewarder_update(&feats, &truths)?)
        } else {
            None
        };

        ema_update(&mut self.teacher.params, &self.student.params, self.cfg.ema_momentum)?;
        Ok(StepStats {
            iteration: self.iteration,
            stage: 1,
            loss_labeled: loss_l,
            loss_unlabeled: 0.0,
            loss_total: total,
            aux,
            selected: 0,
            unlabeled_batch: 0,
            rewarder_subsample: 0,
        })
    }

    fn stage2_step(&mut self) -> Result<StepStats> {
        let use_rewarder = self.cfg.selection.uses_rewarder();
        let n_labeled = self.view.labeled_x.rows();
        let n_unlabeled = self.view.unlabeled_x.rows();

        let li = Self::sample_indices(&mut self.rng, n_labeled, self.cfg.batch_labeled);
        let lx = Self::gather_rows(self.view.labeled_x, &li);
        let lx_aug = self.augment(&lx);
        let ly: Vec<RawLabel> = li.iter().map(|&i| self.view.labeled_y[i]).collect();
        let l_targets = self.encode_raw(&ly)?;

        let ui = Self::sample_indices(&mut self.rng, n_unlabeled, self.cfg.batch_unlabeled);
        let n_forwards = self.decay_forwards(use_rewarder)?;
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let generated = Self::generate_screened(
            &mut rng,
            &self.teacher,
            &self.rewarder,
            &self.codec,
            self.cfg,
            &self.feature_std,
            self.view.unlabeled_x,
            &ui,
            n_forwards,
            use_rewarder,
        );
        self.rng = rng;
        let (pseudo, confidences, rewards) = generated?;

        let selection = self.cfg.selection.apply(&confidences, &rewards)?;
        let selected_idx = selection.selected_indices();

        // Student: labeled term plus the masked unlabeled term on fresh weak
        // views of the selected items.
        let (loss_l, loss_u, total) = if selected_idx.is_empty() {
            self.student_update(&lx_aug, &l_targets, None)?
        } else {
            let sel_rows: Vec<usize> = selected_idx.iter().map(|&k| ui[k]).collect();
            let ux = Self::gather_rows(self.view.unlabeled_x, &sel_rows);
            let ux = self.augment(&ux);
            let sel_labels: Vec<LabelVector> =
                selected_idx.iter().map(|&k| pseudo[k].clone()).collect();
            let u_targets = self.encode_rows(&sel_labels)?;
            self.student_update(
                &lx_aug,
                &l_targets,
                Some((&ux, &u_targets, self.cfg.batch_unlabeled)),
            )?
        };

        // Rewarder/generator on a random subsample of labeled + selected
        // pseudo pairs, freshly augmented.
        let mut subsample_size = 0;
        let aux = if use_rewarder {
            let mut pool_x: Vec<usize> = li.clone();
            let mut pool_from_unlabeled = vec![false; li.len()];
            let mut pool_y: Vec<LabelVector> = ly
                .iter()
                .map(|y| y.encode(&self.codec))
                .collect::<Result<_>>()?;
            if !self.cfg.stage2_rewarder_labeled_only {
                for &k in &selected_idx {
                    pool_x.push(ui[k]);
                    pool_from_unlabeled.push(true);
                    pool_y.push(pseudo[k].clone());
                }
            }
            let n_pool = pool_x.len();
            subsample_size = (self.cfg.subsample_ratio * n_pool as f64).round() as usize;
            if subsample_size >= 1 {
                let pick = Self::sample_indices(&mut self.rng, n_pool, subsample_size);
                let d = self.view.labeled_x.cols();
                let mut flat = Vec::with_capacity(pick.len() * d);
                let mut labels = Vec::with_capacity(pick.len());
                for &p in &pick {
                    let src = if pool_from_unlabeled[p] {
                        self.view.unlabeled_x.row(pool_x[p])
                    } else {
                        self.view.labeled_x.row(pool_x[p])
                    };
                    flat.extend_from_slice(src);
                    labels.push(pool_y[p].clone());
                }
                let rx = Tensor::from_vec(vec![pick.len(), d], flat)?;
                let rx = self.augment(&rx);
                let feats = self.teacher.feature_extract(&rx)?;
                let truths = self.encode_rows(&labels)?;
                Some(self.rewarder_update(&feats, &truths)?)
            } else {
                None
            }
        } else {
            None
        };

        ema_update(&mut self.teacher.params, &self.student.params, self.cfg.ema_momentum)?;
        Ok(StepStats {
            iteration: self.iteration,
            stage: 2,
            loss_labeled: loss_l,
            loss_unlabeled: loss_u,
            loss_total: total,
            aux,
            selected: selected_idx.len(),
            unlabeled_batch: ui.len(),
            rewarder_subsample: subsample_size,
        })
    }

    fn decay_forwards(&self, use_rewarder: bool) -> Result<u64> {
        if !use_rewarder {
            return Ok(1);
        }
        match self.cfg.selection.decay {
            DecayMode::Off => Ok(1),
            DecayMode::Annealed { cap } => {
                decay_forward_count(self.cfg.total_iters, self.iteration.max(1), cap)
            }
        }
    }

    /// Run one training step and advance the iteration counter.
    pub fn step(&mut self) -> Result<StepStats> {
        let stats = if self.stage() == 1 {
            self.stage1_step()?
        } else {
            self.stage2_step()?
        };
        self.iteration += 1;
        self.accum.add(&stats);
        Ok(stats)
    }

    /// Evaluate the teacher and the pseudo-label pipeline on held-out data.
    /// Uses a derived RNG stream so training randomness is untouched.
    fn log_record(&mut self) -> Result<()> {
        let (loss_l, loss_u, loss_r, loss_g) = self.accum.drain();
        let eval = evaluate(&self.teacher, &self.data.test_x, &self.data.test_y, &self.codec)?;

        let mut rec = MetricsRecord {
            iteration: self.iteration,
            stage: self.stage(),
            loss_labeled: loss_l,
            loss_unlabeled: loss_u,
            loss_rewarder: loss_r,
            loss_generator: loss_g,
            eval,
            pseudo_accuracy_pct: None,
            pseudo_reward_target: None,
            selected_reward_target: None,
            rejected_reward_target: None,
            selected_accuracy_pct: None,
            rejected_accuracy_pct: None,
            sampling_rate: None,
            mean_reward: None,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };

        if self.stage() == 2 && self.iteration > 0 {
            self.quality_metrics(&mut rec)?;
        }
        self.records.push(rec);

        let primary = eval.primary();
        if primary < self.best_primary {
            self.best_primary = primary;
            self.best_eval = eval;
            self.best_iteration = self.iteration;
            self.intervals_since_best = 0;
        } else {
            self.intervals_since_best += 1;
        }
        Ok(())
    }

    /// Pseudo-label quality on a fixed unlabeled slice, mirroring the
    /// training-time generation (noise injection and screening included).
    /// This is the only place hidden truths are read.
    fn quality_metrics(&mut self, rec: &mut MetricsRecord) -> Result<()> {
        let slice = self.cfg.eval_subset.min(self.view.unlabeled_x.rows());
        if slice == 0 {
            return Ok(());
        }
        let indices: Vec<usize> = (0..slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(self.iteration + 1)),
        );
        let use_rewarder = self.cfg.selection.uses_rewarder();
        let n_forwards = self.decay_forwards(use_rewarder)?;
        let (pseudo, confidences, rewards) = Self::generate_screened(
            &mut rng,
            &self.teacher,
            &self.rewarder,
            &self.codec,
            self.cfg,
            &self.feature_std,
            self.view.unlabeled_x,
            &indices,
            n_forwards,
            use_rewarder,
        )?;
        let selection = self.cfg.selection.apply(&confidences, &rewards)?;

        let truths = &self.data.hidden.0[..slice];
        let all = pseudo_label_quality(&pseudo, truths, &self.codec, self.reward_cfg.metric)?;
        if let Some(QualityReport { accuracy_pct, mean_reward_target }) = all {
            rec.pseudo_accuracy_pct = accuracy_pct;
            rec.pseudo_reward_target = Some(mean_reward_target);
        }

        let (mut sel_p, mut sel_t, mut rej_p, mut rej_t) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, keep) in selection.mask.iter().enumerate() {
            if *keep {
                sel_p.push(pseudo[k].clone());
                sel_t.push(truths[k]);
            } else {
                rej_p.push(pseudo[k].clone());
                rej_t.push(truths[k]);
            }
        }
        if let Some(q) = pseudo_label_quality(&sel_p, &sel_t, &self.codec, self.reward_cfg.metric)? {
            rec.selected_reward_target = Some(q.mean_reward_target);
            rec.selected_accuracy_pct = q.accuracy_pct;
        }
        if let Some(q) = pseudo_label_quality(&rej_p, &rej_t, &self.codec, self.reward_cfg.metric)? {
            rec.rejected_reward_target = Some(q.mean_reward_target);
            rec.rejected_accuracy_pct = q.accuracy_pct;
        }
        rec.sampling_rate = Some(selection.sampling_rate);
        if use_rewarder && !rewards.is_empty() {
            rec.mean_reward = Some(rewards.iter().sum::<f64>() / rewards.len() as f64);
        }
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Run to completion (or early stop), logging on the configured interval.
    pub fn run(mut self, out_dir: Option<&Path>) -> Result<RunOutput> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        if self.cfg.total_iters == 0 {
            self.log_record()?;
        }
        let mut halted = false;
        for _ in 0..self.cfg.total_iters {
            let crossing = self.iteration == self.boundary && self.boundary > 0;
            if crossing {
                if let Some(dir) = out_dir {
                    self.save_checkpoint(&dir.join("checkpoint_boundary.ckpt"))?;
                }
            }
            self.step()?;
            let done = self.iteration == self.cfg.total_iters;
            if self.iteration % self.cfg.log_interval == 0 || done {
                self.log_record()?;
                if let Some(patience) = self.cfg.early_stop_patience {
                    if self.intervals_since_best > patience {
                        halted = true;
                        break;
                    }
                }
            }
        }
        let _ = halted;
        self.finish(out_dir)
    }

    fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save_namespaced(
            path,
            &[
                ("student", &self.student.params),
                ("teacher", &self.teacher.params),
                ("rewarder", &self.rewarder.params),
                ("generator", &self.generator.params),
            ],
        )
    }

    /// Close out the run: final summary plus optional artifact files.
    pub fn finish(mut self, out_dir: Option<&Path>) -> Result<RunOutput> {
        if self.records.is_empty() {
            self.log_record()?;
        }
        let final_eval = self.records.last().expect("at least one record").eval;
        let summary = RunSummary {
            strategy: self.cfg.selection.name(),
            seed: self.cfg.seed,
            iterations_run: self.iteration,
            final_eval,
            best_eval: self.best_eval,
            best_iteration: self.best_iteration,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            student_params: self.student.num_params(),
            rewarder_params: self.rewarder.num_params(),
            generator_params: self.generator.num_params(),
            config: serde_json::to_value(self.cfg)
                .map_err(|e| Error::Config(format!("config snapshot failed: {e}")))?,
        };
        if let Some(dir) = out_dir {
            crate::metrics::write_metrics_csv(
                &self.records,
                self.codec.is_regression(),
                &dir.join("metrics.csv"),
            )?;
            let json = serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
            std::fs::write(dir.join("summary.json"), json)?;
            self.save_checkpoint(&dir.join("checkpoint_final.ckpt"))?;
        }
        Ok(RunOutput {
            summary,
            records: self.records,
            student: self.student,
            teacher: self.teacher,
            rewarder: self.rewarder,
            generator: self.generator,
        })
    }
}

/// Networks rebuilt from a checkpoint.
pub struct RestoredNets {
    pub student: StudentNet,
    pub teacher: StudentNet,
    pub rewarder: Rewarder,
    pub generator: Generator,
}

/// Rebuild all four networks from a namespaced checkpoint, using the config
/// for the architecture sizes.
pub fn restore_nets(cfg: &TrainConfig, data: &Dataset, ckpt: &Path) -> Result<RestoredNets> {
    let entries = checkpoint::load(ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let codec = &data.codec;
    let mut student = StudentNet::new(data.input_dim(), &cfg.student_hidden, codec.len(), &mut rng)?;
    let mut teacher = student.clone();
    let rcfg =
        RewarderConfig::new(student.feature_dim(), codec.len()).with_embed_dim(cfg.embed_dim);
    let mut rewarder = Rewarder::new(rcfg, &mut rng);
    let mut generator = Generator::new(student.feature_dim(), codec.len(), &mut rng);
    student.params.load_from(&checkpoint::filter_namespace(&entries, "student"))?;
    teacher.params.load_from(&checkpoint::filter_namespace(&entries, "teacher"))?;
    rewarder.params.load_from(&checkpoint::filter_namespace(&entries, "rewarder"))?;
    generator.params.load_from(&checkpoint::filter_namespace(&entries, "generator"))?;
    Ok(RestoredNets { student, teacher, rewarder, generator })
}

/// Build (predicted reward, correctness) pairs over the unlabeled split for
/// calibration analysis: the teacher pseudo-labels each item once, the
/// rewarder scores it, and correctness compares against the hidden truth
/// (class match, or same bin for regression).
pub fn calibration_pairs(
    teacher: &StudentNet,
    rewarder: &Rewarder,
    data: &Dataset,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let (pseudo, _) = pseudo_label_generate(teacher, &data.unlabeled_x, &data.codec)?;
    let feats = teacher.feature_extract(&data.unlabeled_x)?;
    let c = data.codec.len();
    let mut label_flat = Vec::with_capacity(pseudo.len() * c);
    for l in &pseudo {
        label_flat.extend_from_slice(l.values());
    }
    let labels = Tensor::from_vec(vec![pseudo.len(), c], label_flat)?;
    let scores = rewarder.score_batch(&feats, &labels)?;
    let correct: Vec<bool> = pseudo
        .iter()
        .zip(data.hidden.0.iter())
        .map(|(p, truth)| match truth {
            RawLabel::Class(cls) => p.active_index() == Some(*cls),
            RawLabel::Value(v) => match v.encode(&data.codec) {
                Ok(enc) => p.active_index() == enc.active_index(),
                Err(_) => false,
            },
        })
        .collect();
    Ok((scores, correct))
}

/// Train with a freshly generated dataset, no artifact files.
pub fn train_run(cfg: &TrainConfig) -> Result<RunOutput> {
    let data = generate_dataset(&cfg.dataset)?;
    Trainer::new(cfg, &data)?.run(None)
}

/// Train on an existing dataset, optionally writing metrics.csv,
/// summary.json, and boundary/final checkpoints into `out_dir`.
pub fn train_run_with(
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    Trainer::new(cfg, data)?.run(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetKind;
    use crate::selection::SelectionKind;

    pub(crate) fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            total_iters: 40,
            stage2_start_fraction: 0.25,
            subsample_ratio: 0.5,
            batch_labeled: 8,
            batch_unlabeled: 8,
            batch_reward: 8,
            student_lr: 5e-3,
            student_weight_decay: 0.0,
            rewarder_lr: 1e-3,
            rewarder_loss: RewarderLossKindConfig::Mse,
            embed_dim: 8,
            ema_momentum: 0.5,
            student_hidden: vec![12],
            selection: SelectionStrategy::new(SelectionKind::RewardAverage),
            augment_noise: 0.05,
            teacher_noise: 0.0,
            log_interval: 10,
            eval_subset: 40,
            stage2_rewarder_labeled_only: false,
            early_stop_patience: None,
            dataset: DatasetSpec {
                kind: DatasetKind::GaussianBlobs { classes: 3, dims: 6, spread: 0.25 },
                n_labeled_per_class: 4,
                n_unlabeled: 60,
                n_test: 60,
                seed,
            },
        }
    }

    #[test]
    fn pseudo_label_examples() {
        // Logits [2, -1]: confidence of the argmax is 1 / (1 + e^-3).
        let codec = LabelCodec::classification(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = StudentNet::new(2, &[2], 2, &mut rng).unwrap();
        // Identity-ish head: force outputs = inputs via hand-set weights.
        for (_, t) in net.params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        net.params.get_mut("fc1.w").unwrap().data_mut().copy_from_slice(&[1., 0., 0., 1.]);
        net.params.get_mut("head.w").unwrap().data_mut().copy_from_slice(&[1., 0., 0., 1.]);

        let x = Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap();
        // relu keeps [2, 0]; head passes through; logits [2, 0]... to get
        // [2, -1] feed bias on the head.
        net.params.get_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.0, -1.0]);
        let (labels, confs) = pseudo_label_generate(&net, &x, &codec).unwrap();
        assert_eq!(labels[0].active_index(), Some(0));
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((confs[0] - expected).abs() < 1e-12, "conf {}", confs[0]);

        // Symmetric logits break ties to the lowest index.
        let x_tie = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        net.params.get_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.5, 0.5]);
        let (labels, _) = pseudo_label_generate(&net, &x_tie, &codec).unwrap();
        assert_eq!(labels[0].active_index(), Some(0));
    }

    #[test]
    fn boundary_arithmetic() {
        let mut cfg = tiny_config(1);
        cfg.total_iters = 1000;
        cfg.stage2_start_fraction = 0.1;
        assert_eq!(cfg.stage_boundary(), 100);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();

        for _ in 0..99 {
            t.step().unwrap();
        }
        assert_eq!(t.stage(), 1, "one step before the boundary is still stage 1");
        let stats = t.step().unwrap();
        assert_eq!(stats.stage, 1, "the boundary-crossing step itself is stage 1");
        assert_eq!(t.stage(), 2, "at the boundary the state flips to stage 2");
    }

    #[test]
    fn stage1_ignores_unlabeled_data() {
        // Corrupting every unlabeled feature must not change stage-1 steps.
        let cfg = tiny_config(3);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut garbled = data.clone();
        for v in garbled.unlabeled_x.data_mut() {
            *v = -*v * 7.0 + 3.0;
        }
        let mut a = Trainer::new(&cfg, &data).unwrap();
        let mut b = Trainer::new(&cfg, &garbled).unwrap();
        let boundary = cfg.stage_boundary();
        for _ in 0..boundary {
            a.step().unwrap();
            b.step().unwrap();
        }
        for (ta, tb) in a.student().params.iter().zip(b.student().params.iter()) {
            assert_eq!(ta.1.data(), tb.1.data(), "stage-1 student depends on unlabeled data");
        }
    }

    #[test]
    fn stage2_loss_decomposes_exactly() {
        let cfg = tiny_config(5);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let mut saw_unlabeled = false;
        for _ in 0..cfg.total_iters {
            let stats = t.step().unwrap();
            assert!(
                (stats.loss_total - (stats.loss_labeled + stats.loss_unlabeled)).abs() <= 1e-12,
                "loss decomposition violated"
            );
            if stats.loss_unlabeled > 0.0 {
                saw_unlabeled = true;
            }
        }
        assert!(saw_unlabeled, "no stage-2 step selected anything");
    }

    #[test]
    fn subsample_size_matches_counting_oracle() {
        let mut cfg = tiny_config(7);
        cfg.subsample_ratio = 0.25;
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        for _ in 0..cfg.total_iters {
            let stats = t.step().unwrap();
            if stats.stage == 2 {
                let pool = cfg.batch_labeled.min(data.labeled_x.rows()) + stats.selected;
                let expected = (0.25 * pool as f64).round() as usize;
                assert_eq!(stats.rewarder_subsample, expected);
            }
        }
    }

    #[test]
    fn lambda_one_uses_full_pool() {
        let mut cfg = tiny_config(9);
        cfg.subsample_ratio = 1.0;
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        for _ in 0..cfg.total_iters {
            let stats = t.step().unwrap();
            if stats.stage == 2 {
                let pool = cfg.batch_labeled.min(data.labeled_x.rows()) + stats.selected;
                assert_eq!(stats.rewarder_subsample, pool);
            }
        }
    }

    #[test]
    fn zero_iterations_yields_initial_record_only() {
        let mut cfg = tiny_config(11);
        cfg.total_iters = 0;
        let out = train_run(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].iteration, 0);
        assert_eq!(out.summary.iterations_run, 0);
    }

    #[test]
    fn same_seed_same_metrics() {
        let cfg = tiny_config(13);
        let a = train_run(&cfg).unwrap();
        let b = train_run(&cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(crate::metrics::metrics_csv_row(ra), crate::metrics::metrics_csv_row(rb));
        }
    }

    #[test]
    fn ema_zero_makes_teacher_track_student() {
        let mut cfg = tiny_config(15);
        cfg.ema_momentum = 0.0;
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        for _ in 0..10 {
            t.step().unwrap();
            for (s, te) in t.student().params.iter().zip(t.teacher().params.iter()) {
                assert_eq!(s.1.data(), te.1.data());
            }
        }
    }

    #[test]
    fn supervised_only_never_selects() {
        let mut cfg = tiny_config(17);
        cfg.selection = SelectionStrategy::new(SelectionKind::ConfidenceFixed { tau: 1.0 });
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        for _ in 0..cfg.total_iters {
            let stats = t.step().unwrap();
            assert_eq!(stats.selected, 0);
            assert_eq!(stats.loss_unlabeled, 0.0);
            assert!(stats.aux.is_none(), "baseline must not train the rewarder");
        }
    }

    #[test]
    fn optimizers_are_structurally_disjoint() {
        let cfg = tiny_config(19);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        assert!(t.optimizers_disjoint());
        for _ in 0..5 {
            t.step().unwrap();
            assert!(t.optimizers_disjoint());
        }
    }

    #[test]
    fn metrics_iterations_strictly_increase_and_cover_intervals() {
        let mut cfg = tiny_config(21);
        cfg.total_iters = 35;
        cfg.log_interval = 10;
        let out = train_run(&cfg).unwrap();
        let iters: Vec<u64> = out.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![10, 20, 30, 35]);
    }

    #[test]
    fn invalid_config_rejected_before_any_step() {
        let mut cfg = tiny_config(23);
        cfg.subsample_ratio = 0.0;
        assert!(matches!(train_run(&cfg), Err(Error::Config(_))));
        let mut cfg = tiny_config(23);
        cfg.stage2_start_fraction = 1.5;
        assert!(matches!(train_run(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn features_change_after_teacher_moves() {
        let cfg = tiny_config(25);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut t = Trainer::new(&cfg, &data).unwrap();
        let x = Tensor::matrix(1, 6, data.unlabeled_x.row(0).to_vec()).unwrap();
        let before = t.teacher().feature_extract(&x).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        let after = t.teacher().feature_extract(&x).unwrap();
        assert_ne!(before.data(), after.data());
    }

    #[test]
    fn taint_check_hidden_truths_only_touch_quality_columns() {
        let cfg = tiny_config(27);
        let data = generate_dataset(&cfg.dataset).unwrap();
        let mut shuffled = data.clone();
        shuffled.hidden.0.rotate_left(7);

        let a = Trainer::new(&cfg, &data).unwrap().run(None).unwrap();
        let b = Trainer::new(&cfg, &shuffled).unwrap().run(None).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            // Training-derived columns identical...
            assert_eq!(ra.iteration, rb.iteration);
            assert_eq!(ra.loss_labeled, rb.loss_labeled);
            assert_eq!(ra.loss_unlabeled, rb.loss_unlabeled);
            assert_eq!(ra.loss_rewarder, rb.loss_rewarder);
            assert_eq!(ra.eval, rb.eval);
            assert_eq!(ra.sampling_rate, rb.sampling_rate);
            assert_eq!(ra.mean_reward, rb.mean_reward);
        }
        // ...and the final models bitwise equal.
        for (ta, tb) in a.student.params.iter().zip(b.student.params.iter()) {
            assert_eq!(ta.1.data(), tb.1.data());
        }
    }
}
