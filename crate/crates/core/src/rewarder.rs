//! The rewarder network, the fake-label generator, and their alternating
//! stop-gradient losses.
//!
//! The rewarder scores a (feature, label) pair:
//!
//! ```text
//! score = sigmoid(mlp(cross_attention(emb_x(feature), emb_y(label))))
//! ```
//!
//! Both sides carry a single vector (sequence length 1), so the scaled
//! dot-product attention degenerates to a gated linear mixing: the label
//! embedding forms the query, the feature embedding forms key and value, and
//! a sigmoid of the scaled q·k dot product gates the value before the output
//! projection. The query is added back as a residual.
//!
//! The generator maps a feature to a fake label through a 4-layer MLP
//! (256/128/64 hidden units); fake labels pass through a row softmax so they
//! live on the simplex like encoded labels. Rewarder and generator train
//! against each other with alternating losses: each sees the other only
//! through a gradient-free forward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{label_similarity, SimilarityMetric};
use crate::optim::{Adam, ParamSet};
use crate::tape::{LossKind, Tape, Var};
use crate::tensor::Tensor;

/// Generator hidden widths, outermost first.
pub const GENERATOR_HIDDEN: [usize; 3] = [256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewarderConfig {
    pub feature_dim: usize,
    pub label_dim: usize,
    pub embed_dim: usize,
}

impl RewarderConfig {
    pub fn new(feature_dim: usize, label_dim: usize) -> Self {
        RewarderConfig { feature_dim, label_dim, embed_dim: 128 }
    }

    pub fn with_embed_dim(mut self, embed_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self
    }
}

/// Loss settings for rewarder training.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewarderLossConfig {
    /// `mse` (default) or `bce`; the generator objective is always `l2`.
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub metric: SimilarityMetric,
}

impl Default for RewarderLossConfig {
    fn default() -> Self {
        RewarderLossConfig {
            loss_kind: LossKind::Mse,
            learning_rate: 5e-4,
            metric: SimilarityMetric::ScaledCosine,
        }
    }
}

impl RewarderLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.loss_kind, LossKind::Mse | LossKind::Bce) {
            return Err(Error::Config("rewarder loss must be mse or bce".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("rewarder learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn linear_init<R: Rng>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    let std = (1.0 / fan_in as f64).sqrt();
    params.push(format!("{name}.w"), Tensor::randn(vec![fan_in, fan_out], std, rng));
    params.push(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
}

fn linear_on(
    tape: &mut Tape,
    x: Var,
    vars: &[Var],
    idx: &mut usize,
) -> Result<Var> {
    let w = vars[*idx];
    let b = vars[*idx + 1];
    *idx += 2;
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

fn register_params(tape: &mut Tape, params: &ParamSet, frozen: bool) -> Vec<Var> {
    params
        .iter()
        .map(|(_, t)| if frozen { tape.input(t) } else { tape.param(t) })
        .collect()
}

fn write_back_grads(tape: &Tape, vars: &[Var], params: &mut ParamSet) -> Result<()> {
    for (i, v) in vars.iter().enumerate() {
        tape.write_grad(*v, params.at_mut(i))?;
    }
    Ok(())
}

/// Cross-attention scoring network `R(x, y)`.
#[derive(Debug, Clone)]
pub struct Rewarder {
    pub config: RewarderConfig,
    pub params: ParamSet,
}

impl Rewarder {
    pub fn new<R: Rng>(config: RewarderConfig, rng: &mut R) -> Self {
        let d = config.embed_dim;
        let mut params = ParamSet::new();
        linear_init(&mut params, "emb_x", config.feature_dim, d, rng);
        linear_init(&mut params, "emb_y", config.label_dim, d, rng);
        linear_init(&mut params, "attn.q", d, d, rng);
        linear_init(&mut params, "attn.k", d, d, rng);
        linear_init(&mut params, "attn.v", d, d, rng);
        linear_init(&mut params, "attn.out", d, d, rng);
        linear_init(&mut params, "mlp.fc1", d, d, rng);
        linear_init(&mut params, "mlp.fc2", d, 1, rng);
        Rewarder { config, params }
    }

    /// Record the forward pass on `tape`. `features` is `[B, feature_dim]`,
    /// `labels` is `[B, label_dim]`; the result is `[B, 1]` with every score
    /// strictly inside (0, 1). With `frozen` the parameters join the tape as
    /// gradient-free inputs (gradients still flow through to `labels`).
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        features: Var,
        labels: Var,
        frozen: bool,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_dims(tape.shape_of(features), tape.shape_of(labels))?;
        let vars = register_params(tape, &self.params, frozen);
        let mut i = 0;
        let ex = linear_on(tape, features, &vars, &mut i)?;
        let ey = linear_on(tape, labels, &vars, &mut i)?;
        let q = linear_on(tape, ey, &vars, &mut i)?;
        let k = linear_on(tape, ex, &vars, &mut i)?;
        let v = linear_on(tape, ex, &vars, &mut i)?;
        // Degenerate single-token attention: sigmoid-gated value.
        let qk = tape.mul(q, k)?;
        let dots = tape.sum_rows(qk);
        let scaled = tape.scale(dots, 1.0 / (self.config.embed_dim as f64).sqrt());
        let gate = tape.sigmoid(scaled);
        let gated = tape.row_scale(gate, v)?;
        let projected = linear_on(tape, gated, &vars, &mut i)?;
        let mixed = tape.add(projected, q)?;
        let h = linear_on(tape, mixed, &vars, &mut i)?;
        let h = tape.relu(h);
        let logit = linear_on(tape, h, &vars, &mut i)?;
        let score = tape.sigmoid(logit);
        Ok((score, vars))
    }

    fn check_dims(&self, f_shape: &[usize], l_shape: &[usize]) -> Result<()> {
        let fw = *f_shape.last().unwrap_or(&0);
        let lw = *l_shape.last().unwrap_or(&0);
        if fw != self.config.feature_dim || lw != self.config.label_dim {
            return Err(Error::Shape(format!(
                "rewarder configured for feature_dim {} / label_dim {}, got {fw} / {lw}",
                self.config.feature_dim, self.config.label_dim
            )));
        }
        Ok(())
    }

    /// Score a batch without recording gradients.
    pub fn score_batch(&self, features: &Tensor, labels: &Tensor) -> Result<Vec<f64>> {
        if features.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        let mut tape = Tape::new();
        let f = tape.input(features);
        let l = tape.input(labels);
        let (score, _) = self.forward_on(&mut tape, f, l, true)?;
        Ok(tape.value(score).to_vec())
    }

    /// Score one (feature, label) pair.
    pub fn score(&self, feature: &[f64], label: &[f64]) -> Result<f64> {
        let f = Tensor::matrix(1, feature.len(), feature.to_vec())?;
        let l = Tensor::matrix(1, label.len(), label.to_vec())?;
        Ok(self.score_batch(&f, &l)?[0])
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Closed-form parameter count for the architecture.
    pub fn expected_param_count(feature_dim: usize, label_dim: usize, embed_dim: usize) -> usize {
        let d = embed_dim;
        (feature_dim * d + d)            // emb_x
            + (label_dim * d + d)        // emb_y
            + 4 * (d * d + d)            // attention q/k/v/out
            + (d * d + d)                // mlp fc1
            + (d + 1)                    // mlp fc2
    }
}

/// Fake-label generator `G(x)`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub feature_dim: usize,
    pub label_dim: usize,
    pub params: ParamSet,
}

impl Generator {
    pub fn new<R: Rng>(feature_dim: usize, label_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut prev = feature_dim;
        for (i, width) in GENERATOR_HIDDEN.iter().enumerate() {
            linear_init(&mut params, &format!("fc{}", i + 1), prev, *width, rng);
            prev = *width;
        }
        linear_init(&mut params, "fc4", prev, label_dim, rng);
        Generator { feature_dim, label_dim, params }
    }

    /// Raw (pre-softmax) fake labels, `[B, label_dim]`.
    pub fn forward_on(&self, tape: &mut Tape, features: Var, frozen: bool) -> Result<(Var, Vec<Var>)> {
        let fw = *tape.shape_of(features).last().unwrap_or(&0);
        if fw != self.feature_dim {
            return Err(Error::Shape(format!(
                "generator configured for feature_dim {}, got {fw}",
                self.feature_dim
            )));
        }
        let vars = register_params(tape, &self.params, frozen);
        let mut i = 0;
        let mut h = features;
        for _ in 0..GENERATOR_HIDDEN.len() {
            h = linear_on(tape, h, &vars, &mut i)?;
            h = tape.relu(h);
        }
        let raw = linear_on(tape, h, &vars, &mut i)?;
        Ok((raw, vars))
    }

    /// Softmax-normalized fake labels without recording gradients.
    pub fn fake_labels(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.input(features);
        let (raw, _) = self.forward_on(&mut tape, f, true)?;
        let soft = tape.softmax_rows(raw)?;
        Tensor::from_vec(tape.shape_of(soft).to_vec(), tape.value(soft).to_vec())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn expected_param_count(feature_dim: usize, label_dim: usize) -> usize {
        let [h1, h2, h3] = GENERATOR_HIDDEN;
        (feature_dim * h1 + h1) + (h1 * h2 + h2) + (h2 * h3 + h3) + (h3 * label_dim + label_dim)
    }
}

fn check_batch(features: &Tensor, rows_needed: usize) -> Result<()> {
    if features.rows() == 0 || features.numel() == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    if features.rows() != rows_needed {
        return Err(Error::Shape(format!(
            "batch has {} rows, expected {rows_needed}",
            features.rows()
        )));
    }
    Ok(())
}

/// Rewarder objective: score fake labels against their similarity to the
/// ground truth, with the generator held gradient-free. On return the
/// rewarder parameters carry gradients; the generator is untouched.
pub fn rewarder_loss_backward(
    rewarder: &mut Rewarder,
    generator: &Generator,
    features: &Tensor,
    truth_labels: &Tensor,
    cfg: &RewarderLossConfig,
) -> Result<f64> {
    check_batch(features, truth_labels.rows())?;
    let fake = generator.fake_labels(features)?;
    let batch = features.rows();
    let mut targets = Vec::with_capacity(batch);
    for i in 0..batch {
        targets.push(label_similarity(truth_labels.row(i), fake.row(i), cfg.metric)?);
    }
    let mut tape = Tape::new();
    let f = tape.input(features);
    let y = tape.input(&fake);
    let (score, vars) = rewarder.forward_on(&mut tape, f, y, false)?;
    let target = tape.constant(vec![batch, 1], targets)?;
    let loss = tape.loss(cfg.loss_kind, score, target)?;
    let value = tape.scalar_value(loss);
    tape.backward(loss)?;
    write_back_grads(&tape, &vars, &mut rewarder.params)?;
    Ok(value)
}

/// Rewarder loss value without touching any gradients.
pub fn rewarder_loss(
    rewarder: &Rewarder,
    generator: &Generator,
    features: &Tensor,
    truth_labels: &Tensor,
    cfg: &RewarderLossConfig,
) -> Result<f64> {
    check_batch(features, truth_labels.rows())?;
    let fake = generator.fake_labels(features)?;
    let batch = features.rows();
    let mut targets = Vec::with_capacity(batch);
    for i in 0..batch {
        targets.push(label_similarity(truth_labels.row(i), fake.row(i), cfg.metric)?);
    }
    let mut tape = Tape::new();
    let f = tape.input(features);
    let y = tape.input(&fake);
    let (score, _) = rewarder.forward_on(&mut tape, f, y, true)?;
    let target = tape.constant(vec![batch, 1], targets)?;
    let loss = tape.loss(cfg.loss_kind, score, target)?;
    Ok(tape.scalar_value(loss))
}

/// Generator objective: push fake labels toward reward 1 under a frozen
/// rewarder. On return the generator parameters carry gradients; the
/// rewarder is untouched.
pub fn generator_loss_backward(
    rewarder: &Rewarder,
    generator: &mut Generator,
    features: &Tensor,
    _cfg: &RewarderLossConfig,
) -> Result<f64> {
    check_batch(features, features.rows())?;
    let batch = features.rows();
    let mut tape = Tape::new();
    let f = tape.input(features);
    let (raw, gvars) = generator.forward_on(&mut tape, f, false)?;
    let fake = tape.softmax_rows(raw)?;
    let (score, _) = rewarder.forward_on(&mut tape, f, fake, true)?;
    let ones = tape.constant(vec![batch, 1], vec![1.0; batch])?;
    let loss = tape.mse(score, ones)?;
    let value = tape.scalar_value(loss);
    tape.backward(loss)?;
    write_back_grads(&tape, &gvars, &mut generator.params)?;
    Ok(value)
}

/// Generator loss value without touching any gradients.
pub fn generator_loss(
    rewarder: &Rewarder,
    generator: &Generator,
    features: &Tensor,
) -> Result<f64> {
    check_batch(features, features.rows())?;
    let batch = features.rows();
    let mut tape = Tape::new();
    let f = tape.input(features);
    let (raw, _) = generator.forward_on(&mut tape, f, true)?;
    let fake = tape.softmax_rows(raw)?;
    let (score, _) = rewarder.forward_on(&mut tape, f, fake, true)?;
    let ones = tape.constant(vec![batch, 1], vec![1.0; batch])?;
    let loss = tape.mse(score, ones)?;
    Ok(tape.scalar_value(loss))
}

/// Auxiliary loss pair from one alternating update.
#[derive(Debug, Clone, Copy, Default)]
pub struct AuxLosses {
    pub rewarder: f64,
    pub generator: f64,
}

impl AuxLosses {
    pub fn total(&self) -> f64 {
        self.rewarder + self.generator
    }
}

/// One alternating step: rewarder backward + Adam step, then generator
/// backward + Adam step, each against the other's gradient-free forward.
pub fn alternating_update(
    rewarder: &mut Rewarder,
    generator: &mut Generator,
    features: &Tensor,
    truth_labels: &Tensor,
    cfg: &RewarderLossConfig,
    opt_rewarder: &mut Adam,
    opt_generator: &mut Adam,
) -> Result<AuxLosses> {
    let r_loss = rewarder_loss_backward(rewarder, generator, features, truth_labels, cfg)?;
    opt_rewarder.step(&mut rewarder.params)?;
    let g_loss = generator_loss_backward(rewarder, generator, features, cfg)?;
    opt_generator.step(&mut generator.params)?;
    Ok(AuxLosses { rewarder: r_loss, generator: g_loss })
}
