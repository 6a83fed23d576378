//! Trust-based filtering of label-flipping clients and trust-weighted
//! aggregation.
//!
//! Each round the server compares every client's accuracy on its own data
//! (scored with the received global model) against the mean over
//! non-malicious clients. The squared deviation is subtracted from the
//! client's trust when below the mean and added otherwise; trust is then
//! clamped at zero and renormalized to sum to one over non-malicious
//! clients. A client whose trust sits at or below `1 / (k · n)` is flagged,
//! and after `cnt_max` flags it is permanently excluded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub trust_lr: f64,
    /// Threshold divisor `k`; must exceed 1.
    pub k_factor: u32,
    pub cnt_max: u32,
    pub num_clients: usize,
}

impl DefenseConfig {
    pub const DEFAULT_TRUST_LR: f64 = 1.0;
    pub const DEFAULT_K_FACTOR: u32 = 2;
    pub const DEFAULT_CNT_MAX: u32 = 3;

    pub fn with_defaults(num_clients: usize) -> Self {
        Self {
            trust_lr: Self::DEFAULT_TRUST_LR,
            k_factor: Self::DEFAULT_K_FACTOR,
            cnt_max: Self::DEFAULT_CNT_MAX,
            num_clients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trust_lr > 0.0 && self.trust_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "trust_lr must be positive, got {}",
                self.trust_lr
            )));
        }
        if self.k_factor <= 1 {
            return Err(Error::InvalidArgument("k_factor must exceed 1".into()));
        }
        if self.cnt_max < 1 {
            return Err(Error::InvalidArgument("cnt_max must be at least 1".into()));
        }
        if self.num_clients < 2 {
            return Err(Error::InvalidArgument("num_clients must be at least 2".into()));
        }
        Ok(())
    }

    /// `1 / (k · n)`.
    pub fn trust_threshold(&self) -> f64 {
        1.0 / (f64::from(self.k_factor) * self.num_clients as f64)
    }
}

/// Server-side defense memory: trust scores, flag counters and the
/// malicious list, indexed by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub trust: Vec<f64>,
    pub flags: Vec<u32>,
    pub malicious: BTreeSet<usize>,
}

impl TrustState {
    pub fn num_clients(&self) -> usize {
        self.trust.len()
    }

    pub fn is_malicious(&self, client: usize) -> bool {
        self.malicious.contains(&client)
    }

    /// Sum of trust over clients not in the malicious list.
    pub fn honest_trust_sum(&self) -> f64 {
        self.trust
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.malicious.contains(i))
            .map(|(_, t)| t)
            .sum()
    }
}

pub fn init_trust(num_clients: usize) -> Result<TrustState> {
    if num_clients < 2 {
        return Err(Error::InvalidArgument("num_clients must be at least 2".into()));
    }
    Ok(TrustState {
        trust: vec![1.0 / num_clients as f64; num_clients],
        flags: vec![0; num_clients],
        malicious: BTreeSet::new(),
    })
}

pub fn sq_deviation(acc: f64, acc_avg: f64) -> f64 {
    (acc - acc_avg) * (acc - acc_avg)
}

/// Filters over every client `0..n`.
pub fn mal_node_filter(
    state: &TrustState,
    accuracies: &BTreeMap<usize, f64>,
    cfg: &DefenseConfig,
) -> Result<TrustState> {
    let clients: Vec<usize> = (0..state.num_clients()).collect();
    mal_node_filter_over(state, &clients, accuracies, cfg)
}

/// One filtering pass restricted to `clients` (a round's participants).
/// Clients outside the set keep their trust and flags, though they still
/// take part in normalization.
pub fn mal_node_filter_over(
    state: &TrustState,
    clients: &[usize],
    accuracies: &BTreeMap<usize, f64>,
    cfg: &DefenseConfig,
) -> Result<TrustState> {
    cfg.validate()?;
    if state.num_clients() != cfg.num_clients {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_clients,
            actual: state.num_clients(),
        });
    }
    let mut active: Vec<usize> = clients
        .iter()
        .copied()
        .filter(|c| !state.malicious.contains(c))
        .collect();
    active.sort_unstable();
    active.dedup();

    let mut scores = Vec::with_capacity(active.len());
    for &c in &active {
        if c >= state.num_clients() {
            return Err(Error::InvalidArgument(format!("client {c} does not exist")));
        }
        let acc = *accuracies.get(&c).ok_or(Error::MissingAccuracy(c))?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::InvalidArgument(format!(
                "accuracy {acc} of client {c} is outside [0, 1]"
            )));
        }
        scores.push((c, acc));
    }
    if scores.is_empty() {
        return normalize_trust(state);
    }
    let acc_avg = scores.iter().map(|&(_, a)| a).sum::<f64>() / scores.len() as f64;

    let threshold = cfg.trust_threshold();
    let mut next = state.clone();
    for (c, acc) in scores {
        let d = sq_deviation(acc, acc_avg);
        let tau = &mut next.trust[c];
        if acc < acc_avg {
            *tau -= cfg.trust_lr * d;
        } else {
            *tau += cfg.trust_lr * d;
        }
        *tau = tau.max(0.0);
        if *tau <= threshold {
            next.flags[c] += 1;
            if next.flags[c] >= cfg.cnt_max {
                next.malicious.insert(c);
            }
        }
    }
    normalize_trust(&next)
}

/// Divides non-malicious trust by its sum; malicious entries are untouched.
pub fn normalize_trust(state: &TrustState) -> Result<TrustState> {
    let total = state.honest_trust_sum();
    if state.malicious.len() >= state.num_clients() || !(total > 0.0) {
        return Err(Error::DegenerateTrust(total));
    }
    let mut next = state.clone();
    for (i, tau) in next.trust.iter_mut().enumerate() {
        if !state.malicious.contains(&i) {
            *tau /= total;
        }
    }
    Ok(next)
}

/// Clients among `candidates` allowed to contribute: not malicious and
/// trust strictly above the threshold.
pub fn contributors<'a>(
    candidates: impl IntoIterator<Item = &'a usize>,
    state: &TrustState,
    cfg: &DefenseConfig,
) -> Vec<usize> {
    let threshold = cfg.trust_threshold();
    candidates
        .into_iter()
        .copied()
        .filter(|&c| c < state.num_clients() && !state.is_malicious(c) && state.trust[c] > threshold)
        .collect()
}

/// Trust-weighted mean of the contributing clients' models, summed in
/// ascending client order.
pub fn weighted_aggregate(
    models: &BTreeMap<usize, ParamVector>,
    state: &TrustState,
    cfg: &DefenseConfig,
) -> Result<ParamVector> {
    let ids = contributors(models.keys(), state, cfg);
    let first = ids
        .first()
        .map(|id| &models[id])
        .ok_or(Error::AggregationStarved)?;
    let arch = first.arch();
    let total: f64 = ids.iter().map(|&c| state.trust[c]).sum();
    if !(total > 0.0) {
        return Err(Error::AggregationStarved);
    }
    let mut out = vec![0.0; first.len()];
    for &c in &ids {
        let model = &models[&c];
        if model.arch() != arch {
            return Err(Error::ArchMismatch);
        }
        let weight = state.trust[c] / total;
        for (o, v) in out.iter_mut().zip(model.values()) {
            *o += weight * v;
        }
    }
    ParamVector::new(arch, out)
}

/// Relative client-side cost of evaluating on `eval_fraction` of the local
/// data compared with `local_epochs` epochs of training (forward plus a
/// backward pass costing two forwards).
pub fn compute_overhead_estimate(local_epochs: usize, eval_fraction: f64) -> Result<f64> {
    if local_epochs < 1 {
        return Err(Error::InvalidArgument("local_epochs must be at least 1".into()));
    }
    if !(eval_fraction > 0.0 && eval_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eval_fraction must lie in (0, 1], got {eval_fraction}"
        )));
    }
    Ok(eval_fraction / (3.0 * local_epochs as f64))
}
