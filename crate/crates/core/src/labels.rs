//! Label encoding and the label-similarity reward target.
//!
//! Classification labels are one-hot. Regression labels use a soft one-hot:
//! the scalar is affinely normalized from its raw range onto `[0, C]`,
//! divided into `C` equal bins, and bin `k` (where `k <= y < k+1`) holds
//! `1 + (y - k)`, every other position zero. Multi-task labels are the
//! concatenation of their per-task encodings.
//!
//! The reward target for a pseudo label is its similarity to the true label,
//! by default the scaled cosine `dot / (2 |a| |b|) + 0.5`, which lives in
//! `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pushed just below 2.0 so the `[1, 2)` invariant survives the `y = C` edge.
const SOFT_ONEHOT_MAX: f64 = 2.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum LabelCodec {
    Classification { num_classes: usize },
    Regression { bins: usize, range: (f64, f64) },
    MultiLabel { parts: Vec<LabelCodec> },
}

impl LabelCodec {
    pub fn classification(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "classification needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(LabelCodec::Classification { num_classes })
    }

    pub fn regression(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 1 {
            return Err(Error::Config("regression needs at least 1 bin".into()));
        }
        if !(lo < hi) {
            return Err(Error::Config(format!("regression range [{lo}, {hi}] is empty")));
        }
        Ok(LabelCodec::Regression { bins, range: (lo, hi) })
    }

    pub fn multi_label(parts: Vec<LabelCodec>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("multi-label codec needs at least one part".into()));
        }
        Ok(LabelCodec::MultiLabel { parts })
    }

    /// Encoded vector length.
    pub fn len(&self) -> usize {
        match self {
            LabelCodec::Classification { num_classes } => *num_classes,
            LabelCodec::Regression { bins, .. } => *bins,
            LabelCodec::MultiLabel { parts } => parts.iter().map(|p| p.len()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, LabelCodec::Regression { .. })
    }
}

/// An encoded label together with the codec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    values: Vec<f64>,
    codec: LabelCodec,
}

impl LabelVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn codec(&self) -> &LabelCodec {
        &self.codec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the active (nonzero) position. Meaningful for one-hot and
    /// soft one-hot vectors.
    pub fn active_index(&self) -> Option<usize> {
        self.values.iter().position(|v| *v != 0.0)
    }
}

/// One-hot encoding for a class index.
pub fn encode_onehot(class_index: usize, codec: &LabelCodec) -> Result<LabelVector> {
    let LabelCodec::Classification { num_classes } = codec else {
        return Err(Error::Domain("encode_onehot requires a classification codec".into()));
    };
    if class_index >= *num_classes {
        return Err(Error::Domain(format!(
            "class index {class_index} out of range for {num_classes} classes"
        )));
    }
    let mut values = vec![0.0; *num_classes];
    values[class_index] = 1.0;
    Ok(LabelVector { values, codec: codec.clone() })
}

/// Soft one-hot encoding for a raw regression scalar.
pub fn encode_soft_onehot(y: f64, codec: &LabelCodec) -> Result<LabelVector> {
    let LabelCodec::Regression { bins, range: (lo, hi) } = codec else {
        return Err(Error::Domain("encode_soft_onehot requires a regression codec".into()));
    };
    let c = *bins as f64;
    let normalized = (y - lo) / (hi - lo) * c;
    if !normalized.is_finite() || normalized < 0.0 || normalized > c {
        return Err(Error::Domain(format!(
            "regression label {y} falls outside range [{lo}, {hi}]"
        )));
    }
    // k <= y < k+1; the y = C edge maps into the last bin.
    let k = (normalized.floor() as usize).min(bins - 1);
    let value = (1.0 + (normalized - k as f64)).min(SOFT_ONEHOT_MAX);
    let mut values = vec![0.0; *bins];
    values[k] = value;
    Ok(LabelVector { values, codec: codec.clone() })
}

/// Inverse of [`encode_soft_onehot`], back to raw units.
pub fn decode_regression(v: &LabelVector) -> Result<f64> {
    let LabelCodec::Regression { bins, range: (lo, hi) } = &v.codec else {
        return Err(Error::Domain("decode_regression requires a regression codec".into()));
    };
    let nonzero: Vec<usize> = v
        .values
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect();
    if nonzero.len() != 1 {
        return Err(Error::Domain(format!(
            "soft one-hot must have exactly one nonzero entry, found {}",
            nonzero.len()
        )));
    }
    let k = nonzero[0];
    let value = v.values[k];
    if !(1.0..2.0).contains(&value) {
        return Err(Error::Domain(format!(
            "soft one-hot entry {value} at bin {k} outside [1, 2)"
        )));
    }
    let normalized = k as f64 + (value - 1.0);
    Ok(lo + normalized / *bins as f64 * (hi - lo))
}

/// Snap an arbitrary real vector onto the nearest valid soft one-hot: the
/// argmax bin wins (lowest index on ties) and its value is clamped to
/// `[1, 2)`. Used to read a regression head's raw output as a label.
pub fn nearest_soft_onehot(raw: &[f64], codec: &LabelCodec) -> Result<LabelVector> {
    let LabelCodec::Regression { bins, .. } = codec else {
        return Err(Error::Domain("nearest_soft_onehot requires a regression codec".into()));
    };
    if raw.len() != *bins {
        return Err(Error::Shape(format!(
            "raw output length {} does not match {bins} bins",
            raw.len()
        )));
    }
    let k = argmax(raw);
    let mut values = vec![0.0; *bins];
    values[k] = raw[k].clamp(1.0, SOFT_ONEHOT_MAX);
    Ok(LabelVector { values, codec: codec.clone() })
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Concatenate per-task labels into one multi-label vector, in declared
/// order. A single part passes through unchanged.
pub fn concat_multilabel(parts: &[LabelVector]) -> Result<LabelVector> {
    match parts {
        [] => Err(Error::Domain("concat_multilabel needs at least one part".into())),
        [only] => Ok(only.clone()),
        _ => {
            let values: Vec<f64> = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
            let codec = LabelCodec::MultiLabel {
                parts: parts.iter().map(|p| p.codec.clone()).collect(),
            };
            Ok(LabelVector { values, codec })
        }
    }
}

/// Similarity metric between encoded labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// `dot / (2 |a| |b|) + 0.5`, in `[0, 1]`.
    ScaledCosine,
    /// `exp(-|a - b|^2)`, in `(0, 1]`.
    NegL2,
    /// Registered name only; reported by the ablations as miscalibrated and
    /// rejected here with an unsupported-variant error.
    JsDivergence,
}

impl Default for SimilarityMetric {
    fn default() -> Self {
        SimilarityMetric::ScaledCosine
    }
}

/// Label similarity between two raw encoded vectors.
pub fn label_similarity(a: &[f64], b: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("label vectors are empty".into()));
    }
    match metric {
        SimilarityMetric::ScaledCosine => {
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Domain("label similarity of an all-zero vector".into()));
            }
            let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
            Ok((cos / 2.0 + 0.5).clamp(0.0, 1.0))
        }
        SimilarityMetric::NegL2 => {
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok((-d2).exp())
        }
        SimilarityMetric::JsDivergence => Err(Error::Unsupported(
            "js_divergence reward target is registered but not supported".into(),
        )),
    }
}

/// Reward target for a pseudo label: its similarity to the ground truth.
pub fn reward_target(
    pseudo: &LabelVector,
    truth: &LabelVector,
    metric: SimilarityMetric,
) -> Result<f64> {
    label_similarity(pseudo.values(), truth.values(), metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn class4() -> LabelCodec {
        LabelCodec::classification(4).unwrap()
    }

    fn reg(bins: usize) -> LabelCodec {
        LabelCodec::regression(bins, 0.0, bins as f64).unwrap()
    }

    #[test]
    fn onehot_examples() {
        assert_eq!(encode_onehot(2, &class4()).unwrap().values(), &[0., 0., 1., 0.]);
        let c2 = LabelCodec::classification(2).unwrap();
        assert_eq!(encode_onehot(0, &c2).unwrap().values(), &[1., 0.]);
        assert!(matches!(encode_onehot(5, &class4()), Err(Error::Domain(_))));
    }

    #[test]
    fn codec_validation() {
        assert!(LabelCodec::classification(1).is_err());
        assert!(LabelCodec::regression(0, 0.0, 1.0).is_err());
        assert!(LabelCodec::regression(4, 2.0, 2.0).is_err());
        assert!(LabelCodec::multi_label(vec![]).is_err());
    }

    #[test]
    fn soft_onehot_examples() {
        let c = reg(5);
        let v = encode_soft_onehot(2.3, &c).unwrap();
        assert_eq!(v.active_index(), Some(2));
        assert!((v.values()[2] - 1.3).abs() < 1e-12);

        let v0 = encode_soft_onehot(0.0, &c).unwrap();
        assert_eq!(v0.values(), &[1., 0., 0., 0., 0.]);

        // y = C edge rule: last bin, value pinned just under 2.
        let edge = encode_soft_onehot(5.0, &c).unwrap();
        assert_eq!(edge.active_index(), Some(4));
        assert!(edge.values()[4] < 2.0 && edge.values()[4] > 1.999_999);
        let back = decode_regression(&edge).unwrap();
        assert!((back - 5.0).abs() < 1e-9);

        assert!(matches!(encode_soft_onehot(5.1, &c), Err(Error::Domain(_))));
        assert!(matches!(encode_soft_onehot(-0.1, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn decode_examples() {
        let c = reg(5);
        let v = encode_soft_onehot(2.3, &c).unwrap();
        assert!((decode_regression(&v).unwrap() - 2.3).abs() < 1e-12);

        let zero = LabelVector { values: vec![0.0; 5], codec: c.clone() };
        assert!(matches!(decode_regression(&zero), Err(Error::Domain(_))));

        let double = LabelVector { values: vec![1.5, 1.5, 0., 0., 0.], codec: c };
        assert!(matches!(decode_regression(&double), Err(Error::Domain(_))));
    }

    #[test]
    fn decode_respects_raw_range() {
        let c = LabelCodec::regression(4, -10.0, 30.0).unwrap();
        for y in [-10.0, -3.2, 0.0, 17.9, 29.99] {
            let v = encode_soft_onehot(y, &c).unwrap();
            assert!((decode_regression(&v).unwrap() - y).abs() < 1e-9, "y = {y}");
        }
    }

    #[test]
    fn concat_examples() {
        let a = encode_onehot(0, &LabelCodec::classification(2).unwrap()).unwrap();
        let b = encode_onehot(1, &LabelCodec::classification(3).unwrap()).unwrap();
        let cat = concat_multilabel(&[a.clone(), b]).unwrap();
        assert_eq!(cat.values(), &[1., 0., 0., 1., 0.]);
        assert_eq!(cat.codec().len(), 5);

        let single = concat_multilabel(&[a.clone()]).unwrap();
        assert_eq!(single, a);

        assert!(matches!(concat_multilabel(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn similarity_trivials() {
        let c = class4();
        let v = encode_onehot(1, &c).unwrap();
        assert_eq!(reward_target(&v, &v, SimilarityMetric::ScaledCosine).unwrap(), 1.0);

        let a = encode_onehot(0, &c).unwrap();
        let b = encode_onehot(1, &c).unwrap();
        assert_eq!(reward_target(&a, &b, SimilarityMetric::ScaledCosine).unwrap(), 0.5);

        let neg: Vec<f64> = v.values().iter().map(|x| -x).collect();
        assert_eq!(label_similarity(v.values(), &neg, SimilarityMetric::ScaledCosine).unwrap(), 0.0);
    }

    #[test]
    fn parallel_soft_onehots_score_one() {
        let c = reg(3);
        let a = LabelVector { values: vec![0.0, 1.5, 0.0], codec: c.clone() };
        let b = LabelVector { values: vec![0.0, 1.2, 0.0], codec: c.clone() };
        assert_eq!(reward_target(&a, &b, SimilarityMetric::ScaledCosine).unwrap(), 1.0);

        // Disjoint bins are orthogonal.
        let d = LabelVector { values: vec![1.7, 0.0, 0.0], codec: c };
        assert_eq!(reward_target(&a, &d, SimilarityMetric::ScaledCosine).unwrap(), 0.5);
    }

    #[test]
    fn neg_l2_squashed_into_unit_interval() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let s = label_similarity(&a, &b, SimilarityMetric::NegL2).unwrap();
        assert!((s - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(label_similarity(&a, &a, SimilarityMetric::NegL2).unwrap(), 1.0);
    }

    #[test]
    fn js_divergence_is_registered_but_unsupported() {
        let a = [1.0, 0.0];
        assert!(matches!(
            label_similarity(&a, &a, SimilarityMetric::JsDivergence),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mismatched_lengths_are_shape_errors() {
        assert!(matches!(
            label_similarity(&[1.0], &[1.0, 0.0], SimilarityMetric::ScaledCosine),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn nearest_soft_onehot_clamps() {
        let c = reg(3);
        let v = nearest_soft_onehot(&[0.2, 2.9, -0.3], &c).unwrap();
        assert_eq!(v.active_index(), Some(1));
        assert!(v.values()[1] < 2.0 && v.values()[1] >= 1.0);
        assert!(decode_regression(&v).is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(y in 0.0f64..8.0) {
            let c = reg(8);
            let v = encode_soft_onehot(y, &c).unwrap();
            let back = decode_regression(&v).unwrap();
            prop_assert!((back - y).abs() < 1e-9);
        }

        #[test]
        fn similarity_is_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            prop_assume!(na > 1e-9 && nb > 1e-9);
            let ab = label_similarity(&a, &b, SimilarityMetric::ScaledCosine).unwrap();
            let ba = label_similarity(&b, &a, SimilarityMetric::ScaledCosine).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn interpolation_similarity_is_monotone(
            c in 3usize..12,
            steps in 2usize..8,
        ) {
            let codec = LabelCodec::classification(c).unwrap();
            let truth = encode_onehot(0, &codec).unwrap();
            let other = encode_onehot(1, &codec).unwrap();
            let mut prev = -1.0;
            for s in 0..=steps {
                let alpha = s as f64 / steps as f64;
                let mix: Vec<f64> = truth
                    .values()
                    .iter()
                    .zip(other.values())
                    .map(|(t, u)| alpha * t + (1.0 - alpha) * u)
                    .collect();
                let sim = label_similarity(&mix, truth.values(), SimilarityMetric::ScaledCosine)
                    .unwrap();
                prop_assert!(sim > prev, "similarity not increasing at alpha={alpha}");
                prev = sim;
            }
        }

        #[test]
        fn multilabel_length_adds_up(
            sizes in proptest::collection::vec(2usize..6, 2..5)
        ) {
            let parts: Vec<LabelVector> = sizes
                .iter()
                .map(|s| encode_onehot(s - 1, &LabelCodec::classification(*s).unwrap()).unwrap())
                .collect();
            let cat = concat_multilabel(&parts).unwrap();
            let total: usize = sizes.iter().sum();
            prop_assert_eq!(cat.len(), total);
            prop_assert_eq!(cat.codec().len(), total);
        }
    }
}
