//! Synthetic dataset generation and CSV export.
//!
//! Three desk-scale task families: Gaussian blobs and concentric rings for
//! classification, and a nonlinear scalar-target task standing in for
//! rotation-angle regression. Every unlabeled example keeps a hidden ground
//! truth, carried in a separate [`HiddenTruths`] value that only the metric
//! computations receive — the training path never sees it.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelCodec;
use crate::numfmt::g6;
use crate::tensor::Tensor;

/// Hard ceiling on generated points, to turn runaway configs into errors.
const MAX_POINTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianBlobs { classes: usize, dims: usize, spread: f64 },
    ConcentricRings { classes: usize, dims: usize },
    RotationRegression { range: (f64, f64), bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub n_labeled_per_class: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_labeled_per_class == 0 || self.n_unlabeled == 0 || self.n_test == 0 {
            return Err(Error::Config("dataset counts must be positive".into()));
        }
        let classes = self.classes();
        let total = self.n_labeled_per_class * classes + self.n_unlabeled + self.n_test;
        if total > MAX_POINTS {
            return Err(Error::Config(format!(
                "requested {total} points exceeds the generable population ({MAX_POINTS})"
            )));
        }
        match &self.kind {
            DatasetKind::GaussianBlobs { classes, dims, spread } => {
                if *classes < 2 || *dims < 2 {
                    return Err(Error::Config("blobs need >= 2 classes and >= 2 dims".into()));
                }
                if *spread <= 0.0 {
                    return Err(Error::Config("blob spread must be positive".into()));
                }
            }
            DatasetKind::ConcentricRings { classes, dims } => {
                if *classes < 2 || *dims < 2 {
                    return Err(Error::Config("rings need >= 2 classes and >= 2 dims".into()));
                }
            }
            DatasetKind::RotationRegression { range: (lo, hi), bins } => {
                if !(lo < hi) {
                    return Err(Error::Config("regression range is empty".into()));
                }
                if *bins < 1 {
                    return Err(Error::Config("regression needs >= 1 bin".into()));
                }
            }
        }
        Ok(())
    }

    /// Classes for classification, bins for regression.
    pub fn classes(&self) -> usize {
        match &self.kind {
            DatasetKind::GaussianBlobs { classes, .. } => *classes,
            DatasetKind::ConcentricRings { classes, .. } => *classes,
            DatasetKind::RotationRegression { bins, .. } => *bins,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            DatasetKind::GaussianBlobs { dims, .. } => *dims,
            DatasetKind::ConcentricRings { dims, .. } => *dims,
            DatasetKind::RotationRegression { .. } => 16,
        }
    }

    pub fn codec(&self) -> Result<LabelCodec> {
        match &self.kind {
            DatasetKind::GaussianBlobs { classes, .. }
            | DatasetKind::ConcentricRings { classes, .. } => LabelCodec::classification(*classes),
            DatasetKind::RotationRegression { range: (lo, hi), bins } => {
                LabelCodec::regression(*bins, *lo, *hi)
            }
        }
    }
}

/// Raw (unencoded) label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawLabel {
    Class(usize),
    Value(f64),
}

impl RawLabel {
    pub fn class(&self) -> Option<usize> {
        match self {
            RawLabel::Class(c) => Some(*c),
            RawLabel::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            RawLabel::Value(v) => Some(*v),
            RawLabel::Class(_) => None,
        }
    }

    pub fn encode(&self, codec: &LabelCodec) -> Result<crate::labels::LabelVector> {
        match self {
            RawLabel::Class(c) => crate::labels::encode_onehot(*c, codec),
            RawLabel::Value(v) => crate::labels::encode_soft_onehot(*v, codec),
        }
    }
}

/// Ground truth for the unlabeled split. Handed only to evaluation code;
/// [`Dataset::training_view`] strips it from what the trainer sees.
#[derive(Debug, Clone)]
pub struct HiddenTruths(pub Vec<RawLabel>);

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub codec: LabelCodec,
    pub labeled_x: Tensor,
    pub labeled_y: Vec<RawLabel>,
    pub unlabeled_x: Tensor,
    pub hidden: HiddenTruths,
    pub test_x: Tensor,
    pub test_y: Vec<RawLabel>,
}

/// What the training loop is allowed to see: no hidden truths.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub labeled_x: &'a Tensor,
    pub labeled_y: &'a [RawLabel],
    pub unlabeled_x: &'a Tensor,
}

impl Dataset {
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labeled_x: &self.labeled_x,
            labeled_y: &self.labeled_y,
            unlabeled_x: &self.unlabeled_x,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Per-feature standard deviation of the labeled features, used to scale
    /// the weak-augmentation noise. Labeled-only keeps stage-1 training
    /// fully independent of the unlabeled split.
    pub fn feature_std(&self) -> Vec<f64> {
        let d = self.input_dim();
        let total = self.labeled_x.rows();
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        let mut count = 0.0;
        for i in 0..total {
            count += 1.0;
            let row = self.labeled_x.row(i);
            for j in 0..d {
                let delta = row[j] - mean[j];
                mean[j] += delta / count;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        m2.iter().map(|v| (v / (total as f64 - 1.0).max(1.0)).sqrt()).collect()
    }
}

struct Generators {
    centroids: Vec<Vec<f64>>,
}

/// Deterministic synthesis from the spec. Same spec (including seed) gives
/// byte-identical splits.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let codec = spec.codec()?;
    let dims = spec.input_dim();
    let gens = prepare_generators(spec, &mut rng);

    let classes = spec.classes();
    let n_labeled = spec.n_labeled_per_class * classes;

    // Class-balanced labeled split, then shuffled so batches mix classes.
    let mut labeled: Vec<(Vec<f64>, RawLabel)> = Vec::with_capacity(n_labeled);
    for class in 0..classes {
        for _ in 0..spec.n_labeled_per_class {
            labeled.push(sample_point(spec, &gens, class, &mut rng));
        }
    }
    labeled.shuffle(&mut rng);

    let draw_iid = |n: usize, rng: &mut ChaCha8Rng| -> Vec<(Vec<f64>, RawLabel)> {
        (0..n)
            .map(|_| {
                let class = rng.gen_range(0..classes);
                sample_point(spec, &gens, class, rng)
            })
            .collect()
    };
    let unlabeled = draw_iid(spec.n_unlabeled, &mut rng);
    let test = draw_iid(spec.n_test, &mut rng);

    let pack = |rows: &[(Vec<f64>, RawLabel)]| -> Result<(Tensor, Vec<RawLabel>)> {
        let mut flat = Vec::with_capacity(rows.len() * dims);
        let mut ys = Vec::with_capacity(rows.len());
        for (x, y) in rows {
            flat.extend_from_slice(x);
            ys.push(*y);
        }
        Ok((Tensor::from_vec(vec![rows.len(), dims], flat)?, ys))
    };

    let (labeled_x, labeled_y) = pack(&labeled)?;
    let (unlabeled_x, hidden_y) = pack(&unlabeled)?;
    let (test_x, test_y) = pack(&test)?;

    Ok(Dataset {
        spec: spec.clone(),
        codec,
        labeled_x,
        labeled_y,
        unlabeled_x,
        hidden: HiddenTruths(hidden_y),
        test_x,
        test_y,
    })
}

fn prepare_generators(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Generators {
    match &spec.kind {
        DatasetKind::GaussianBlobs { classes, dims, .. } => {
            // Unit-norm centroids, resampled until pairwise distances stay
            // reasonable so class difficulty is set by `spread` alone.
            let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(*classes);
            while centroids.len() < *classes {
                let mut c: Vec<f64> = (0..*dims)
                    .map(|_| StandardNormal.sample(rng))
                    .collect::<Vec<f64>>();
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in &mut c {
                    *v /= norm;
                }
                let ok = centroids.iter().all(|other| {
                    let d2: f64 =
                        c.iter().zip(other.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() > 1.0
                });
                if ok {
                    centroids.push(c);
                }
            }
            Generators { centroids }
        }
        _ => Generators { centroids: Vec::new() },
    }
}

fn sample_point(
    spec: &DatasetSpec,
    gens: &Generators,
    class: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, RawLabel) {
    match &spec.kind {
        DatasetKind::GaussianBlobs { dims, spread, .. } => {
            let centroid = &gens.centroids[class];
            let x: Vec<f64> = (0..*dims)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    centroid[j] + spread * z
                })
                .collect();
            (x, RawLabel::Class(class))
        }
        DatasetKind::ConcentricRings { classes: _, dims } => {
            let radius = 1.0 + class as f64;
            let phi: f64 = rng.gen_range(0.0..(2.0 * PI));
            let mut x = Vec::with_capacity(*dims);
            let noise = 0.15;
            let n0: f64 = StandardNormal.sample(rng);
            let n1: f64 = StandardNormal.sample(rng);
            x.push(radius * phi.cos() + noise * n0);
            x.push(radius * phi.sin() + noise * n1);
            for _ in 2..*dims {
                let z: f64 = StandardNormal.sample(rng);
                x.push(0.5 * z);
            }
            (x, RawLabel::Class(class))
        }
        DatasetKind::RotationRegression { range: (lo, hi), bins } => {
            // Draw uniformly inside the requested bin so labeled splits stay
            // balanced across bins.
            let width = (hi - lo) / *bins as f64;
            let y = lo + width * class as f64 + rng.gen_range(0.0..1.0) * width;
            // Angle forced into a quarter turn so cos/sin identify it uniquely.
            let theta = (y - lo) / (hi - lo) * (PI / 2.0);
            let dims = spec.input_dim();
            let mut x = Vec::with_capacity(dims);
            let n0: f64 = StandardNormal.sample(rng);
            let n1: f64 = StandardNormal.sample(rng);
            x.push(theta.cos() + 0.05 * n0);
            x.push(theta.sin() + 0.05 * n1);
            for _ in 2..dims {
                let z: f64 = StandardNormal.sample(rng);
                x.push(z);
            }
            (x, RawLabel::Value(y))
        }
    }
}

fn label_field(label: &RawLabel) -> String {
    match label {
        RawLabel::Class(c) => c.to_string(),
        RawLabel::Value(v) => g6(*v),
    }
}

fn write_rows(
    path: &Path,
    x: &Tensor,
    labels: Option<&[RawLabel]>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = x.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..x.rows() {
        let mut fields: Vec<String> = x.row(i).iter().map(|v| g6(*v)).collect();
        if let Some(ys) = labels {
            fields.push(label_field(&ys[i]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Export the splits as CSV: `labeled.csv`, `unlabeled.csv`, `test.csv`,
/// plus `unlabeled_truth.csv` holding the hidden labels for evaluation only.
pub fn export_csv(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join("labeled.csv"), &data.labeled_x, Some(&data.labeled_y))?;
    write_rows(&dir.join("unlabeled.csv"), &data.unlabeled_x, None)?;
    write_rows(&dir.join("test.csv"), &data.test_x, Some(&data.test_y))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("unlabeled_truth.csv"))?);
    writeln!(out, "label")?;
    for y in &data.hidden.0 {
        writeln!(out, "{}", label_field(y))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_spec(spread: f64, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::GaussianBlobs { classes: 4, dims: 16, spread },
            n_labeled_per_class: 4,
            n_unlabeled: 100,
            n_test: 200,
            seed,
        }
    }

    #[test]
    fn labeled_split_is_class_balanced() {
        let data = generate_dataset(&blob_spec(0.3, 7)).unwrap();
        assert_eq!(data.labeled_x.rows(), 16);
        let mut counts = [0usize; 4];
        for y in &data.labeled_y {
            counts[y.class().unwrap()] += 1;
        }
        assert_eq!(counts, [4, 4, 4, 4]);
        assert_eq!(data.unlabeled_x.rows(), 100);
        assert_eq!(data.hidden.0.len(), 100);
        assert_eq!(data.test_x.rows(), 200);
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate_dataset(&blob_spec(0.3, 9)).unwrap();
        let b = generate_dataset(&blob_spec(0.3, 9)).unwrap();
        assert_eq!(a.labeled_x.data(), b.labeled_x.data());
        assert_eq!(a.test_x.data(), b.test_x.data());
        let c = generate_dataset(&blob_spec(0.3, 10)).unwrap();
        assert_ne!(a.labeled_x.data(), c.labeled_x.data());
    }

    #[test]
    fn csv_export_is_byte_identical_per_seed() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        export_csv(&generate_dataset(&blob_spec(0.3, 3)).unwrap(), dir_a.path()).unwrap();
        export_csv(&generate_dataset(&blob_spec(0.3, 3)).unwrap(), dir_b.path()).unwrap();
        for name in ["labeled.csv", "unlabeled.csv", "test.csv", "unlabeled_truth.csv"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn nearest_centroid_oracle_on_tight_blobs() {
        // Well-separated blobs: a nearest-centroid classifier built from the
        // labeled split must exceed 99% on the test split.
        let data = generate_dataset(&blob_spec(0.05, 11)).unwrap();
        let dims = data.input_dim();
        let mut centroids = vec![vec![0.0; dims]; 4];
        let mut counts = [0usize; 4];
        for i in 0..data.labeled_x.rows() {
            let c = data.labeled_y[i].class().unwrap();
            counts[c] += 1;
            for (j, v) in data.labeled_x.row(i).iter().enumerate() {
                centroids[c][j] += v;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            for v in centroid.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut correct = 0;
        for i in 0..data.test_x.rows() {
            let row = data.test_x.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = row.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == data.test_y[i].class().unwrap() {
                correct += 1;
            }
        }
        let acc = correct as f64 / data.test_x.rows() as f64;
        assert!(acc >= 0.99, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn splits_are_disjoint() {
        let data = generate_dataset(&blob_spec(0.3, 13)).unwrap();
        let rows = |t: &Tensor| -> Vec<Vec<u64>> {
            (0..t.rows())
                .map(|i| t.row(i).iter().map(|v| v.to_bits()).collect())
                .collect()
        };
        let labeled = rows(&data.labeled_x);
        let unlabeled = rows(&data.unlabeled_x);
        let test = rows(&data.test_x);
        for r in &unlabeled {
            assert!(!labeled.contains(r));
            assert!(!test.contains(r));
        }
        for r in &labeled {
            assert!(!test.contains(r));
        }
    }

    #[test]
    fn regression_labels_lie_in_range() {
        let spec = DatasetSpec {
            kind: DatasetKind::RotationRegression { range: (0.0, 90.0), bins: 8 },
            n_labeled_per_class: 2,
            n_unlabeled: 64,
            n_test: 64,
            seed: 5,
        };
        let data = generate_dataset(&spec).unwrap();
        assert_eq!(data.labeled_x.rows(), 16);
        for y in data.labeled_y.iter().chain(data.test_y.iter()) {
            let v = y.value().unwrap();
            assert!((0.0..=90.0).contains(&v));
        }
        assert!(data.codec.is_regression());
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut spec = blob_spec(0.3, 1);
        spec.n_test = 0;
        assert!(matches!(generate_dataset(&spec), Err(Error::Config(_))));

        let mut huge = blob_spec(0.3, 1);
        huge.n_unlabeled = MAX_POINTS;
        assert!(matches!(generate_dataset(&huge), Err(Error::Config(_))));
    }

    #[test]
    fn rings_have_expected_geometry() {
        let spec = DatasetSpec {
            kind: DatasetKind::ConcentricRings { classes: 3, dims: 6 },
            n_labeled_per_class: 8,
            n_unlabeled: 32,
            n_test: 32,
            seed: 2,
        };
        let data = generate_dataset(&spec).unwrap();
        for i in 0..data.labeled_x.rows() {
            let row = data.labeled_x.row(i);
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            let class = data.labeled_y[i].class().unwrap() as f64;
            assert!((r - (1.0 + class)).abs() < 1.0, "radius {r} for class {class}");
        }
    }
}
