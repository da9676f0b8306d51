//! Pseudo-label filtering policies.
//!
//! Confidence thresholding is the hand-crafted baseline; the reward policies
//! threshold on rewarder scores instead: against the per-batch mean, a fixed
//! cut, or by keeping the top-k. Every comparison is a strict `>`, so a
//! constant-score batch selects nothing.
//!
//! The annealed multi-forward "decay" schedule divides total steps by the
//! current iteration (rounded up, capped) to decide how many candidate
//! pseudo labels to screen per example.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    ConfidenceFixed { tau: f64 },
    RewardAverage,
    RewardFixed { tau: f64 },
    RewardTopK { k: usize },
    AcceptAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    Off,
    Annealed { cap: u64 },
}

pub const DEFAULT_DECAY_CAP: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SelectionConfigRepr", into = "SelectionConfigRepr")]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    pub decay: DecayMode,
}

/// Flat config-file form: `selection.kind`, `selection.tau`, `selection.k`,
/// `selection.decay_enabled`, `selection.decay_cap`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectionConfigRepr {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default = "default_decay_enabled")]
    decay_enabled: bool,
    #[serde(default = "default_decay_cap")]
    decay_cap: u64,
}

fn default_decay_enabled() -> bool {
    true
}

fn default_decay_cap() -> u64 {
    DEFAULT_DECAY_CAP
}

impl TryFrom<SelectionConfigRepr> for SelectionStrategy {
    type Error = Error;

    fn try_from(repr: SelectionConfigRepr) -> Result<Self> {
        let kind = match repr.kind.as_str() {
            "confidence_fixed" | "confidence" => SelectionKind::ConfidenceFixed {
                tau: repr.tau.ok_or_else(|| {
                    Error::Config("confidence_fixed requires selection.tau".into())
                })?,
            },
            "reward_average" => SelectionKind::RewardAverage,
            "reward_fixed" => SelectionKind::RewardFixed {
                tau: repr
                    .tau
                    .ok_or_else(|| Error::Config("reward_fixed requires selection.tau".into()))?,
            },
            "reward_topk" => SelectionKind::RewardTopK {
                k: repr.k.ok_or_else(|| Error::Config("reward_topk requires selection.k".into()))?,
            },
            "accept_all" => SelectionKind::AcceptAll,
            "supervised" => SelectionKind::ConfidenceFixed { tau: 1.0 },
            other => return Err(Error::Config(format!("unknown selection kind '{other}'"))),
        };
        let decay = if repr.decay_enabled {
            DecayMode::Annealed { cap: repr.decay_cap }
        } else {
            DecayMode::Off
        };
        let s = SelectionStrategy { kind, decay };
        s.validate()?;
        Ok(s)
    }
}

impl From<SelectionStrategy> for SelectionConfigRepr {
    fn from(s: SelectionStrategy) -> Self {
        let (kind, tau, k) = match s.kind {
            SelectionKind::ConfidenceFixed { tau } => ("confidence_fixed", Some(tau), None),
            SelectionKind::RewardAverage => ("reward_average", None, None),
            SelectionKind::RewardFixed { tau } => ("reward_fixed", Some(tau), None),
            SelectionKind::RewardTopK { k } => ("reward_topk", None, Some(k)),
            SelectionKind::AcceptAll => ("accept_all", None, None),
        };
        let (decay_enabled, decay_cap) = match s.decay {
            DecayMode::Off => (false, DEFAULT_DECAY_CAP),
            DecayMode::Annealed { cap } => (true, cap),
        };
        SelectionConfigRepr { kind: kind.into(), tau, k, decay_enabled, decay_cap }
    }
}

impl SelectionStrategy {
    pub fn new(kind: SelectionKind) -> Self {
        SelectionStrategy { kind, decay: DecayMode::Off }
    }

    pub fn with_decay(mut self, decay: DecayMode) -> Self {
        self.decay = decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SelectionKind::ConfidenceFixed { tau } | SelectionKind::RewardFixed { tau } => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Error::Domain(format!("threshold {tau} outside [0, 1]")));
                }
            }
            SelectionKind::RewardTopK { k } => {
                if k < 1 {
                    return Err(Error::Domain("top-k needs k >= 1".into()));
                }
            }
            _ => {}
        }
        if let DecayMode::Annealed { cap } = self.decay {
            if cap < 1 {
                return Err(Error::Domain("decay cap must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Whether this policy needs rewarder scores (and rewarder training).
    pub fn uses_rewarder(&self) -> bool {
        matches!(
            self.kind,
            SelectionKind::RewardAverage
                | SelectionKind::RewardFixed { .. }
                | SelectionKind::RewardTopK { .. }
        )
    }

    /// Apply the policy. `confidences` feed the confidence baseline,
    /// `rewards` feed the reward policies; `accept_all` keeps everything.
    pub fn apply(&self, confidences: &[f64], rewards: &[f64]) -> Result<SelectionResult> {
        match self.kind {
            SelectionKind::ConfidenceFixed { tau } => select_confidence(confidences, tau),
            SelectionKind::RewardAverage => select_reward_average(rewards),
            SelectionKind::RewardFixed { tau } => select_reward_fixed(rewards, tau),
            SelectionKind::RewardTopK { k } => select_reward_topk(rewards, k),
            SelectionKind::AcceptAll => {
                let scores = if rewards.is_empty() { confidences } else { rewards };
                Ok(SelectionResult::new(vec![true; scores.len()], scores.to_vec()))
            }
        }
    }

    /// Parse a compact spec such as `reward_average`, `confidence_fixed:0.95`,
    /// `reward_topk:16`, `accept_all`, or the alias `supervised`
    /// (confidence threshold 1, which selects nothing).
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let parse_tau = |arg: Option<&str>| -> Result<f64> {
            arg.ok_or_else(|| Error::Config(format!("{name} needs a threshold, e.g. {name}:0.95")))?
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold in {spec}")))
        };
        let kind = match name {
            "confidence_fixed" | "confidence" => {
                SelectionKind::ConfidenceFixed { tau: parse_tau(arg)? }
            }
            "reward_average" => SelectionKind::RewardAverage,
            "reward_fixed" => SelectionKind::RewardFixed { tau: parse_tau(arg)? },
            "reward_topk" => {
                let k = arg
                    .ok_or_else(|| Error::Config("reward_topk needs k, e.g. reward_topk:16".into()))?
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad k in {spec}")))?;
                SelectionKind::RewardTopK { k }
            }
            "accept_all" => SelectionKind::AcceptAll,
            "supervised" => SelectionKind::ConfidenceFixed { tau: 1.0 },
            other => return Err(Error::Config(format!("unknown selection kind '{other}'"))),
        };
        let s = SelectionStrategy::new(kind)
            .with_decay(DecayMode::Annealed { cap: DEFAULT_DECAY_CAP });
        s.validate()?;
        Ok(s)
    }

    pub fn name(&self) -> String {
        match self.kind {
            SelectionKind::ConfidenceFixed { tau } if tau >= 1.0 => "supervised".into(),
            SelectionKind::ConfidenceFixed { tau } => format!("confidence_fixed:{tau}"),
            SelectionKind::RewardAverage => "reward_average".into(),
            SelectionKind::RewardFixed { tau } => format!("reward_fixed:{tau}"),
            SelectionKind::RewardTopK { k } => format!("reward_topk:{k}"),
            SelectionKind::AcceptAll => "accept_all".into(),
        }
    }
}

/// Mask over an unlabeled batch plus the scores that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub mask: Vec<bool>,
    pub scores: Vec<f64>,
    pub sampling_rate: f64,
}

impl SelectionResult {
    pub fn new(mask: Vec<bool>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(mask.len(), scores.len());
        let selected = mask.iter().filter(|m| **m).count();
        let sampling_rate =
            if mask.is_empty() { 0.0 } else { selected as f64 / mask.len() as f64 };
        SelectionResult { mask, scores, sampling_rate }
    }

    pub fn selected_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Confidence baseline: keep items whose max-softmax confidence beats `tau`.
pub fn select_confidence(probs: &[f64], tau: f64) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("confidence threshold {tau} outside [0, 1]")));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain("confidence outside [0, 1]".into()));
    }
    let mask = probs.iter().map(|p| *p > tau).collect();
    Ok(SelectionResult::new(mask, probs.to_vec()))
}

/// Dynamic average threshold: the per-batch mean reward is the cut.
pub fn select_reward_average(scores: &[f64]) -> Result<SelectionResult> {
    if scores.is_empty() {
        return Err(Error::Domain("reward selection on an empty batch".into()));
    }
    // A constant batch must select nothing under strict >; summing can land
    // one ulp off the common value, so pin that case.
    let mean = if scores.iter().all(|s| *s == scores[0]) {
        scores[0]
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let mask = scores.iter().map(|s| *s > mean).collect();
    Ok(SelectionResult::new(mask, scores.to_vec()))
}

/// Fixed reward threshold.
pub fn select_reward_fixed(scores: &[f64], tau: f64) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("reward threshold {tau} outside [0, 1]")));
    }
    if scores.is_empty() {
        return Err(Error::Domain("reward selection on an empty batch".into()));
    }
    let mask = scores.iter().map(|s| *s > tau).collect();
    Ok(SelectionResult::new(mask, scores.to_vec()))
}

/// Keep the `min(k, batch)` highest scores; ties break to the lowest index.
pub fn select_reward_topk(scores: &[f64], k: usize) -> Result<SelectionResult> {
    if k < 1 {
        return Err(Error::Domain("top-k needs k >= 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::Domain("reward selection on an empty batch".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let mut mask = vec![false; scores.len()];
    for idx in order.into_iter().take(k.min(scores.len())) {
        mask[idx] = true;
    }
    Ok(SelectionResult::new(mask, scores.to_vec()))
}

/// Annealed multi-forward count: `min(cap, ceil(total_steps / current_iter))`,
/// never below 1.
pub fn decay_forward_count(total_steps: u64, current_iter: u64, cap: u64) -> Result<u64> {
    if current_iter < 1 {
        return Err(Error::Domain("decay schedule needs current_iter >= 1".into()));
    }
    if cap < 1 {
        return Err(Error::Domain("decay cap must be >= 1".into()));
    }
    Ok(total_steps.div_ceil(current_iter).clamp(1, cap))
}

/// Screen `n_forwards` candidate pseudo labels and keep the highest-reward
/// one. The closure produces candidate `(label, reward)` pairs — one teacher
/// forward under an independent weak augmentation each — so with
/// `n_forwards == 1` this reduces to plain pseudo-labeling.
pub fn multi_forward_screen<F>(n_forwards: u64, mut candidate: F) -> Result<(LabelVector, f64)>
where
    F: FnMut(u64) -> Result<(LabelVector, f64)>,
{
    if n_forwards < 1 {
        return Err(Error::Domain("multi-forward screening needs n_forwards >= 1".into()));
    }
    let mut best = candidate(0)?;
    for i in 1..n_forwards {
        let cand = candidate(i)?;
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confidence_examples() {
        let r = select_confidence(&[0.3, 0.99], 0.95).unwrap();
        assert_eq!(r.mask, vec![false, true]);
        assert_eq!(r.sampling_rate, 0.5);

        let all = select_confidence(&[0.3, 0.99], 0.0).unwrap();
        assert!(all.mask.iter().all(|m| *m));

        let none = select_confidence(&[0.3, 0.99], 1.0).unwrap();
        assert!(none.mask.iter().all(|m| !*m));

        assert!(select_confidence(&[0.5], 1.5).is_err());
        assert!(select_confidence(&[1.4], 0.5).is_err());
    }

    #[test]
    fn reward_average_examples() {
        let r = select_reward_average(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(r.mask, vec![false, false, true, true]);

        // Constant batch selects nothing under strict >.
        let c = select_reward_average(&[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(c.selected_count(), 0);

        assert!(select_reward_average(&[]).is_err());
    }

    #[test]
    fn reward_average_mean_shift_invariance() {
        let scores = [0.1, 0.5, 0.2, 0.9];
        let base = select_reward_average(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 0.05).collect();
        let moved = select_reward_average(&shifted).unwrap();
        assert_eq!(base.mask, moved.mask);
    }

    #[test]
    fn topk_examples() {
        let r = select_reward_topk(&[0.9, 0.1, 0.5, 0.7], 2).unwrap();
        assert_eq!(r.selected_indices(), vec![0, 3]);

        let all = select_reward_topk(&[0.2, 0.3], 10).unwrap();
        assert_eq!(all.selected_count(), 2);

        let tie = select_reward_topk(&[0.5, 0.5, 0.1], 1).unwrap();
        assert_eq!(tie.selected_indices(), vec![0]);

        assert!(select_reward_topk(&[0.5], 0).is_err());
    }

    #[test]
    fn decay_schedule_examples() {
        assert_eq!(decay_forward_count(1000, 100, 10).unwrap(), 10);
        assert_eq!(decay_forward_count(1000, 500, 10).unwrap(), 2);
        assert_eq!(decay_forward_count(1000, 1000, 10).unwrap(), 1);
        assert_eq!(decay_forward_count(1000, 5000, 10).unwrap(), 1);
        assert_eq!(decay_forward_count(1000, 1, 10).unwrap(), 10);
        assert!(decay_forward_count(1000, 0, 10).is_err());
    }

    #[test]
    fn decay_is_non_increasing() {
        let mut prev = u64::MAX;
        for iter in 1..=2000 {
            let n = decay_forward_count(2000, iter, 10).unwrap();
            assert!(n <= prev);
            assert!(n >= 1);
            prev = n;
        }
    }

    #[test]
    fn screen_degenerate_and_argmax() {
        let codec = crate::labels::LabelCodec::classification(3).unwrap();
        let mk = |c: usize, r: f64| {
            let lv = crate::labels::encode_onehot(c, &codec).unwrap();
            (lv, r)
        };
        let single = multi_forward_screen(1, |_| Ok(mk(1, 0.4))).unwrap();
        assert_eq!(single.0.active_index(), Some(1));
        assert_eq!(single.1, 0.4);

        let rewards = [0.3, 0.9, 0.5];
        let best = multi_forward_screen(3, |i| Ok(mk(i as usize, rewards[i as usize]))).unwrap();
        assert_eq!(best.0.active_index(), Some(1));
        assert_eq!(best.1, 0.9);

        assert!(multi_forward_screen(0, |_| Ok(mk(0, 0.0))).is_err());
    }

    #[test]
    fn strategy_parsing() {
        let s = SelectionStrategy::parse("confidence_fixed:0.95").unwrap();
        assert_eq!(s.kind, SelectionKind::ConfidenceFixed { tau: 0.95 });
        assert!(!s.uses_rewarder());

        let s = SelectionStrategy::parse("reward_topk:16").unwrap();
        assert_eq!(s.kind, SelectionKind::RewardTopK { k: 16 });
        assert!(s.uses_rewarder());

        let s = SelectionStrategy::parse("supervised").unwrap();
        assert_eq!(s.kind, SelectionKind::ConfidenceFixed { tau: 1.0 });
        assert_eq!(s.name(), "supervised");

        assert!(SelectionStrategy::parse("reward_average").is_ok());
        assert!(SelectionStrategy::parse("bogus").is_err());
        assert!(SelectionStrategy::parse("confidence_fixed:1.2").is_err());
    }

    #[test]
    fn accept_all_recovers_unfiltered_regime() {
        let strategy = SelectionStrategy::new(SelectionKind::AcceptAll);
        let r = strategy.apply(&[0.1, 0.2], &[0.9, 0.8]).unwrap();
        assert_eq!(r.sampling_rate, 1.0);

        // Confidence tau = 0 also keeps everything with positive confidence.
        let zero = SelectionStrategy::new(SelectionKind::ConfidenceFixed { tau: 0.0 });
        let r = zero.apply(&[0.1, 0.2], &[]).unwrap();
        assert_eq!(r.sampling_rate, 1.0);
    }

    proptest! {
        #[test]
        fn sampling_rate_is_mean_of_mask(
            scores in proptest::collection::vec(0.01f64..0.99, 1..40)
        ) {
            let r = select_reward_average(&scores).unwrap();
            let mean = r.mask.iter().filter(|m| **m).count() as f64 / r.mask.len() as f64;
            prop_assert_eq!(r.sampling_rate, mean);
        }

        #[test]
        fn average_split_is_nontrivial_for_nonconstant_scores(
            scores in proptest::collection::vec(0.01f64..0.99, 2..40)
        ) {
            let distinct = scores.iter().any(|s| (*s - scores[0]).abs() > 1e-12);
            prop_assume!(distinct);
            let r = select_reward_average(&scores).unwrap();
            let selected = r.selected_count();
            prop_assert!(selected > 0 && selected < scores.len());
        }

        #[test]
        fn topk_count_is_exact(
            scores in proptest::collection::vec(0.0f64..1.0, 1..30),
            k in 1usize..40,
        ) {
            let r = select_reward_topk(&scores, k).unwrap();
            prop_assert_eq!(r.selected_count(), k.min(scores.len()));
        }
    }
}
