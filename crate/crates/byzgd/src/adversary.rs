//! Byzantine behavior injection.
//!
//! The adversary selects a fault set each round and replaces those workers'
//! gradient reports. It sees every honest gradient of the current round, so
//! strategies like [`AttackStrategy::OmniscientMeanShift`] can steer the
//! plain average to an arbitrary value. Workers' stored data is never
//! touched; only the reported messages are.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::vector::{mean_of_vectors, ModelVector};

/// Catalog of reproducible Byzantine strategies. The serialized names
/// (`none`, `sign_flip`, ...) are the config-file contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AttackStrategy {
    /// Faulty workers echo their true gradients.
    None,
    /// Faulty workers report `-scale` times the mean of the true gradients.
    SignFlip { scale: f64 },
    /// Faulty workers report a fixed vector. Also models a silent worker
    /// whose missing message the server replaces with an arbitrary value.
    Constant { vector: ModelVector },
    /// Faulty workers report a `magnitude`-scaled unit vector pointing from
    /// the current mean toward `target`.
    PullToward { target: ModelVector, magnitude: f64 },
    /// Faulty workers split the correction that forces the arithmetic mean of
    /// all reports to equal `target_average`.
    OmniscientMeanShift { target_average: ModelVector },
}

impl AttackStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            AttackStrategy::None => "none",
            AttackStrategy::SignFlip { .. } => "sign_flip",
            AttackStrategy::Constant { .. } => "constant",
            AttackStrategy::PullToward { .. } => "pull_toward",
            AttackStrategy::OmniscientMeanShift { .. } => "omniscient_mean_shift",
        }
    }
}

/// How the fault set is chosen each round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FaultSetPolicy {
    /// The same workers are faulty every round.
    Fixed { ids: Vec<usize> },
    /// A fresh set of `count` workers is drawn each round; the set changes
    /// between rounds but is deterministic in `(seed, round)`.
    ResampleEachRound { count: usize, seed: u64 },
}

impl FaultSetPolicy {
    /// Number of workers the policy corrupts per round.
    pub fn budget(&self) -> usize {
        match self {
            FaultSetPolicy::Fixed { ids } => ids.len(),
            FaultSetPolicy::ResampleEachRound { count, .. } => *count,
        }
    }

    pub fn validate(&self, workers: usize) -> Result<()> {
        match self {
            FaultSetPolicy::Fixed { ids } => {
                let set: BTreeSet<usize> = ids.iter().copied().collect();
                if set.len() != ids.len() {
                    return Err(Error::invalid("fixed fault set contains duplicate ids"));
                }
                if let Some(&bad) = set.iter().find(|&&id| id >= workers) {
                    return Err(Error::invalid(format!(
                        "fault id {bad} out of range for {workers} workers"
                    )));
                }
            }
            FaultSetPolicy::ResampleEachRound { count, .. } => {
                if *count > workers {
                    return Err(Error::invalid(format!(
                        "fault budget {count} exceeds worker count {workers}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A strategy plus a fault-set policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub strategy: AttackStrategy,
    pub policy: FaultSetPolicy,
}

impl AttackSpec {
    /// No faulty workers at all.
    pub fn benign() -> Self {
        Self {
            strategy: AttackStrategy::None,
            policy: FaultSetPolicy::Fixed { ids: Vec::new() },
        }
    }
}

/// All worker reports for one round plus the mask of attacker-controlled
/// entries. Unmasked entries are the true local gradients, bit for bit.
#[derive(Clone, Debug)]
pub struct RoundReports {
    pub reports: Vec<ModelVector>,
    pub byzantine_mask: Vec<bool>,
}

impl RoundReports {
    pub fn byzantine_count(&self) -> usize {
        self.byzantine_mask.iter().filter(|&&b| b).count()
    }
}

/// Fault set for a round: deterministic in `(policy, round)`.
pub fn select_fault_set(
    policy: &FaultSetPolicy,
    workers: usize,
    round: usize,
) -> Result<BTreeSet<usize>> {
    policy.validate(workers)?;
    match policy {
        FaultSetPolicy::Fixed { ids } => Ok(ids.iter().copied().collect()),
        FaultSetPolicy::ResampleEachRound { count, seed } => {
            let mut rng = derive_rng(*seed, "fault-set", &[round as u64]);
            Ok(sample(&mut rng, workers, *count).into_iter().collect())
        }
    }
}

/// Replaces the fault set's reports according to the strategy. Honest
/// entries pass through untouched.
pub fn apply_attack(
    spec: &AttackSpec,
    honest_gradients: &[ModelVector],
    fault_set: &BTreeSet<usize>,
    _round: usize,
) -> Result<RoundReports> {
    let m = honest_gradients.len();
    if m == 0 {
        return Err(Error::invalid("no worker gradients to attack"));
    }
    let dim = honest_gradients[0].dim();
    if let Some(&bad) = fault_set.iter().find(|&&id| id >= m) {
        return Err(Error::invalid(format!(
            "fault id {bad} out of range for {m} workers"
        )));
    }

    let mut reports = honest_gradients.to_vec();
    let mut byzantine_mask = vec![false; m];
    for &id in fault_set {
        byzantine_mask[id] = true;
    }

    if fault_set.is_empty() {
        return Ok(RoundReports { reports, byzantine_mask });
    }

    match &spec.strategy {
        AttackStrategy::None => {}
        AttackStrategy::SignFlip { scale } => {
            let mean = mean_of_vectors(honest_gradients)?;
            let forged = mean.scale(-scale);
            for &id in fault_set {
                reports[id] = forged.clone();
            }
        }
        AttackStrategy::Constant { vector } => {
            if vector.dim() != dim {
                return Err(Error::invalid("constant attack vector has wrong dimension"));
            }
            for &id in fault_set {
                reports[id] = vector.clone();
            }
        }
        AttackStrategy::PullToward { target, magnitude } => {
            if target.dim() != dim {
                return Err(Error::invalid("pull target has wrong dimension"));
            }
            let mean = mean_of_vectors(honest_gradients)?;
            let direction = target - &mean;
            let norm = direction.norm();
            let forged = if norm == 0.0 {
                ModelVector::zeros(dim)
            } else {
                direction.scale(magnitude / norm)
            };
            for &id in fault_set {
                reports[id] = forged.clone();
            }
        }
        AttackStrategy::OmniscientMeanShift { target_average } => {
            if target_average.dim() != dim {
                return Err(Error::invalid("target average has wrong dimension"));
            }
            // The mean of all m reports must equal the target, so the faulty
            // workers jointly report m * target - (sum of honest reports),
            // split equally.
            let mut honest_sum = ModelVector::zeros(dim);
            for (id, g) in honest_gradients.iter().enumerate() {
                if !fault_set.contains(&id) {
                    honest_sum = &honest_sum + g;
                }
            }
            let correction =
                (&target_average.scale(m as f64) - &honest_sum).scale(1.0 / fault_set.len() as f64);
            for &id in fault_set {
                reports[id] = correction.clone();
            }
        }
    }

    Ok(RoundReports { reports, byzantine_mask })
}
