//! The synchronous round loop.
//!
//! Each round the server broadcasts the current iterate, workers compute
//! local empirical gradients, the adversary rewrites the fault set's reports,
//! the server aggregates, and gradient descent steps. Two aggregation rules
//! are provided: plain averaging ([`run_standard_bgd`]) and geometric
//! median-of-means ([`run_byzantine_gd`]). Everything in a run is
//! deterministic in the config; only `wall_ms` varies between executions.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use log::warn;

use crate::adversary::{apply_attack, select_fault_set, AttackSpec};
use crate::aggregation::{median_of_means, AggregatorConfig};
use crate::error::{Error, Result};
use crate::problem::{local_empirical_gradient, DataShard, LossModel};
use crate::vector::{mean_of_vectors, ModelVector};

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Total number of samples across all workers.
    pub n_total: usize,
    /// Number of workers.
    pub workers: usize,
    /// Upper bound on simultaneously faulty workers.
    pub byzantine_budget: usize,
    /// Gradient step size.
    pub step_size: f64,
    /// Number of synchronous rounds.
    pub rounds: usize,
    pub theta0: ModelVector,
    pub aggregator: AggregatorConfig,
    pub attack: AttackSpec,
    /// Master seed recorded with the run; data generation and the attack
    /// policy carry their own derived seeds.
    pub seed: u64,
}

impl RunConfig {
    /// Default round count: `4 * ceil(log2(n_total))`.
    pub fn default_rounds(n_total: usize) -> usize {
        let bits = if n_total <= 1 {
            1
        } else {
            usize::BITS as usize - (n_total - 1).leading_zeros() as usize
        };
        4 * bits.max(1)
    }

    pub fn batch_count(&self) -> usize {
        self.aggregator.batch_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        if self.n_total == 0 || !self.n_total.is_multiple_of(self.workers) {
            return Err(Error::invalid(format!(
                "total sample count {} must be a positive multiple of worker count {}",
                self.n_total, self.workers
            )));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("round count must be at least 1"));
        }
        if self.theta0.dim() == 0 || !self.theta0.is_finite() {
            return Err(Error::invalid("theta0 must be non-empty and finite"));
        }
        self.aggregator.validate_for(self.workers)?;
        if self.byzantine_budget > self.workers {
            return Err(Error::invalid(format!(
                "byzantine budget {} exceeds worker count {}",
                self.byzantine_budget, self.workers
            )));
        }
        self.attack.policy.validate(self.workers)?;
        if self.attack.policy.budget() > self.byzantine_budget {
            return Err(Error::invalid(format!(
                "attack policy corrupts {} workers but the budget is {}",
                self.attack.policy.budget(),
                self.byzantine_budget
            )));
        }
        if self.byzantine_budget >= 1 && self.aggregator.batch_count <= 2 * self.byzantine_budget {
            warn!(
                "batch count {} is not above twice the byzantine budget {}; the aggregate can be \
                 overwhelmed",
                self.aggregator.batch_count, self.byzantine_budget
            );
        }
        Ok(())
    }
}

/// Per-round record of a run.
#[derive(Clone, Debug)]
pub struct RoundTrace {
    /// Round index, 1-based and strictly increasing.
    pub round: usize,
    /// Iterate after this round's step.
    pub theta: ModelVector,
    /// Distance to the ground truth after the step.
    pub error: f64,
    /// Distance between the aggregated gradient and the population gradient
    /// at the pre-step iterate; absent when the loss model has no closed-form
    /// population gradient.
    pub agg_deviation: Option<f64>,
    pub fault_set: BTreeSet<usize>,
    /// Wall-clock time of the round. Measurement only; never part of
    /// determinism comparisons.
    pub wall_ms: f64,
}

/// One gradient descent step: `theta - eta * gradient`.
pub fn gd_step(theta: &ModelVector, gradient: &ModelVector, eta: f64) -> ModelVector {
    theta.add_scaled(-eta, gradient)
}

#[derive(Clone, Copy, PartialEq)]
enum Aggregation {
    Mean,
    MedianOfMeans,
}

fn validate_shards(config: &RunConfig, shards: &[DataShard], theta_star: &ModelVector) -> Result<()> {
    config.validate()?;
    if shards.len() != config.workers {
        return Err(Error::invalid(format!(
            "expected {} shards, got {}",
            config.workers,
            shards.len()
        )));
    }
    let per_worker = config.n_total / config.workers;
    if shards.iter().any(|s| s.samples.len() != per_worker) {
        return Err(Error::invalid(format!(
            "every shard must hold exactly {per_worker} samples"
        )));
    }
    if theta_star.dim() != config.theta0.dim() {
        return Err(Error::invalid("theta_star and theta0 dimensions differ"));
    }
    Ok(())
}

fn run_loop(
    config: &RunConfig,
    model: &dyn LossModel,
    shards: &[DataShard],
    theta_star: &ModelVector,
    aggregation: Aggregation,
) -> Result<Vec<RoundTrace>> {
    validate_shards(config, shards, theta_star)?;

    let mut theta = config.theta0.clone();
    let mut traces = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let start = Instant::now();

        let honest: Vec<ModelVector> = shards
            .iter()
            .map(|shard| local_empirical_gradient(model, shard, &theta))
            .collect::<Result<_>>()?;

        let fault_set = select_fault_set(&config.attack.policy, config.workers, round)?;
        let reports = apply_attack(&config.attack, &honest, &fault_set, round)?;

        let aggregate = match aggregation {
            Aggregation::Mean => mean_of_vectors(&reports.reports)?,
            Aggregation::MedianOfMeans => median_of_means(&reports.reports, &config.aggregator)?,
        };

        let agg_deviation = model
            .population_gradient(&theta, theta_star)
            .map(|pop| (&aggregate - &pop).norm());

        theta = gd_step(&theta, &aggregate, config.step_size);
        let error = (&theta - theta_star).norm();

        traces.push(RoundTrace {
            round,
            theta: theta.clone(),
            error,
            agg_deviation,
            fault_set,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(traces)
}

/// Gradient descent with plain averaging of the reports. Converges fast when
/// every report is honest and is defenseless otherwise.
pub fn run_standard_bgd(
    config: &RunConfig,
    model: &dyn LossModel,
    shards: &[DataShard],
    theta_star: &ModelVector,
) -> Result<Vec<RoundTrace>> {
    run_loop(config, model, shards, theta_star, Aggregation::Mean)
}

/// Gradient descent with geometric median-of-means aggregation.
pub fn run_byzantine_gd(
    config: &RunConfig,
    model: &dyn LossModel,
    shards: &[DataShard],
    theta_star: &ModelVector,
) -> Result<Vec<RoundTrace>> {
    run_loop(config, model, shards, theta_star, Aggregation::MedianOfMeans)
}

/// Idealized descent on the population gradient itself, no data involved.
pub fn run_population_gd(
    model: &dyn LossModel,
    theta0: &ModelVector,
    theta_star: &ModelVector,
    eta: f64,
    rounds: usize,
) -> Result<Vec<RoundTrace>> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let mut theta = theta0.clone();
    let mut traces = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let start = Instant::now();
        let gradient = crate::problem::population_gradient(model, &theta, theta_star)?;
        theta = gd_step(&theta, &gradient, eta);
        traces.push(RoundTrace {
            round,
            theta: theta.clone(),
            error: (&theta - theta_star).norm(),
            agg_deviation: Some(0.0),
            fault_set: BTreeSet::new(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(traces)
}

/// Writes traces as CSV with header
/// `round,error,agg_deviation,n_byzantine,wall_ms`. An absent deviation is an
/// empty cell.
pub fn write_traces_csv<W: Write>(mut writer: W, traces: &[RoundTrace]) -> Result<()> {
    writeln!(writer, "round,error,agg_deviation,n_byzantine,wall_ms")?;
    for t in traces {
        let dev = t
            .agg_deviation
            .map(|d| format!("{d}"))
            .unwrap_or_default();
        writeln!(
            writer,
            "{},{},{},{},{}",
            t.round,
            t.error,
            dev,
            t.fault_set.len(),
            t.wall_ms
        )?;
    }
    Ok(())
}

/// Equality of everything a run determines: iterates, errors, deviations, and
/// fault sets. Wall-clock times are measurement noise and excluded.
pub fn traces_equal_bitwise(a: &[RoundTrace], b: &[RoundTrace]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|(x, y)| {
            x.round == y.round
                && x.fault_set == y.fault_set
                && x.error.to_bits() == y.error.to_bits()
                && x.agg_deviation.map(f64::to_bits) == y.agg_deviation.map(f64::to_bits)
                && x.theta.dim() == y.theta.dim()
                && x.theta
                    .iter()
                    .zip(y.theta.iter())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AttackStrategy, FaultSetPolicy};
    use crate::problem::{generate_linear_regression, shard_samples, LinearRegression};

    fn base_config(n_total: usize, workers: usize, k: usize, dim: usize) -> RunConfig {
        RunConfig {
            n_total,
            workers,
            byzantine_budget: 0,
            step_size: 0.5,
            rounds: 30,
            theta0: ModelVector::zeros(dim),
            aggregator: AggregatorConfig::new(k),
            attack: AttackSpec::benign(),
            seed: 0,
        }
    }

    #[test]
    fn gd_step_with_zero_gradient_is_identity() {
        let theta = ModelVector::new(vec![1.0, -2.0]);
        let stepped = gd_step(&theta, &ModelVector::zeros(2), 0.7);
        assert_eq!(stepped, theta);
    }

    #[test]
    fn population_descent_halves_the_error_each_round() {
        let model = LinearRegression::new(3);
        let theta_star = ModelVector::new(vec![1.0, -2.0, 4.0]);
        let theta0 = ModelVector::zeros(3);
        let traces = run_population_gd(&model, &theta0, &theta_star, 0.5, 20).unwrap();
        let mut prev = (&theta0 - &theta_star).norm();
        for t in &traces {
            let ratio = t.error / prev;
            assert!((ratio - 0.5).abs() < 1e-12, "round {}: ratio {ratio}", t.round);
            // The measured rate respects the contraction bound sqrt(1 - L^2/(4 M^2)).
            assert!(ratio <= (1.0f64 - 0.25).sqrt());
            prev = t.error;
        }
    }

    #[test]
    fn byzantine_gd_with_one_batch_no_faults_matches_standard_bgd_bitwise() {
        let dim = 4;
        let theta_star = ModelVector::new(vec![2.0, -1.0, 0.5, 1.5]);
        let samples = generate_linear_regression(&theta_star, 400, 5).unwrap();
        let shards = shard_samples(&samples, 8).unwrap();
        let model = LinearRegression::new(dim);
        let config = base_config(400, 8, 1, dim);
        let standard = run_standard_bgd(&config, &model, &shards, &theta_star).unwrap();
        let robust = run_byzantine_gd(&config, &model, &shards, &theta_star).unwrap();
        assert!(traces_equal_bitwise(&standard, &robust));
    }

    #[test]
    fn mean_shift_to_zero_freezes_standard_bgd() {
        let dim = 3;
        let theta_star = ModelVector::new(vec![1.0, 1.0, -1.0]);
        let samples = generate_linear_regression(&theta_star, 300, 6).unwrap();
        let shards = shard_samples(&samples, 6).unwrap();
        let model = LinearRegression::new(dim);
        let mut config = base_config(300, 6, 1, dim);
        config.byzantine_budget = 1;
        config.attack = AttackSpec {
            strategy: AttackStrategy::OmniscientMeanShift {
                target_average: ModelVector::zeros(dim),
            },
            policy: FaultSetPolicy::ResampleEachRound { count: 1, seed: 9 },
        };
        let traces = run_standard_bgd(&config, &model, &shards, &theta_star).unwrap();
        let initial_error = (&config.theta0 - &theta_star).norm();
        for t in &traces {
            // The forced mean is zero up to summation rounding, so the
            // iterate stays put up to machine-level drift.
            assert!(
                (&t.theta - &config.theta0).norm() < 1e-12,
                "round {} moved by {}",
                t.round,
                (&t.theta - &config.theta0).norm()
            );
            assert!((t.error - initial_error).abs() < 1e-12);
        }
    }

    #[test]
    fn single_worker_single_sample_is_plain_gd() {
        let theta_star = ModelVector::new(vec![3.0]);
        let samples = generate_linear_regression(&theta_star, 1, 12).unwrap();
        let shards = shard_samples(&samples, 1).unwrap();
        let model = LinearRegression::new(1);
        let mut config = base_config(1, 1, 1, 1);
        config.rounds = 5;
        let traces = run_standard_bgd(&config, &model, &shards, &theta_star).unwrap();

        // Hand-rolled single-machine gradient descent on the same sample.
        let (w, y) = (samples[0].covariate[0], samples[0].response);
        let mut theta = 0.0;
        for t in &traces {
            theta -= 0.5 * (w * (w * theta - y));
            assert_eq!(t.theta[0].to_bits(), theta.to_bits());
        }
    }

    #[test]
    fn identical_configs_produce_identical_traces() {
        let dim = 3;
        let theta_star = ModelVector::new(vec![0.5, 0.5, -0.5]);
        let samples = generate_linear_regression(&theta_star, 240, 8).unwrap();
        let shards = shard_samples(&samples, 12).unwrap();
        let model = LinearRegression::new(dim);
        let mut config = base_config(240, 12, 4, dim);
        config.byzantine_budget = 2;
        config.attack = AttackSpec {
            strategy: AttackStrategy::SignFlip { scale: 5.0 },
            policy: FaultSetPolicy::ResampleEachRound { count: 2, seed: 14 },
        };
        let a = run_byzantine_gd(&config, &model, &shards, &theta_star).unwrap();
        let b = run_byzantine_gd(&config, &model, &shards, &theta_star).unwrap();
        assert!(traces_equal_bitwise(&a, &b));
    }

    #[test]
    fn full_batching_steps_on_the_median_worker_gradient() {
        // One dimension, k = m: each round's aggregate is the 1-D median of
        // the worker gradients, checked against a sort-based oracle on the
        // first round.
        let theta_star = ModelVector::new(vec![1.5]);
        let samples = generate_linear_regression(&theta_star, 35, 23).unwrap();
        let shards = shard_samples(&samples, 5).unwrap();
        let model = LinearRegression::new(1);
        let mut config = base_config(35, 5, 5, 1);
        config.rounds = 1;
        let traces = run_byzantine_gd(&config, &model, &shards, &theta_star).unwrap();

        let mut worker_gradients: Vec<f64> = shards
            .iter()
            .map(|s| {
                crate::problem::local_empirical_gradient(&model, s, &config.theta0).unwrap()[0]
            })
            .collect();
        worker_gradients.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = worker_gradients[2];
        let expected = config.theta0[0] - 0.5 * median;
        assert!(
            (traces[0].theta[0] - expected).abs() < 1e-12,
            "stepped to {} instead of {expected}",
            traces[0].theta[0]
        );
    }

    #[test]
    fn error_becomes_non_increasing_without_faults() {
        let dim = 5;
        let theta_star = ModelVector::new(vec![1.0, 2.0, 3.0, -1.0, 0.5]);
        let samples = generate_linear_regression(&theta_star, 2000, 19).unwrap();
        let shards = shard_samples(&samples, 20).unwrap();
        let model = LinearRegression::new(dim);
        let mut config = base_config(2000, 20, 5, dim);
        config.rounds = 25;
        let traces = run_byzantine_gd(&config, &model, &shards, &theta_star).unwrap();
        // Geometric convergence until the statistical floor, bounded wobble after.
        let final_error = traces.last().unwrap().error;
        let mut at_floor = false;
        for w in traces.windows(2) {
            if w[0].error <= 1.5 * final_error {
                at_floor = true;
            }
            if !at_floor {
                assert!(
                    w[1].error <= w[0].error * 1.001,
                    "error rose before the floor: {} -> {}",
                    w[0].error,
                    w[1].error
                );
            } else {
                assert!(w[1].error <= 2.0 * final_error);
            }
        }
        assert!(at_floor, "never reached the floor region");
        assert!(final_error < 0.2);
    }

    #[test]
    fn config_validation_names_the_violation() {
        let mut config = base_config(96, 8, 3, 2);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("batch count"), "unexpected message: {err}");
        config.aggregator.batch_count = 4;
        config.n_total = 101;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("multiple of worker count"), "unexpected message: {err}");
    }

    #[test]
    fn trace_csv_has_the_documented_header() {
        let traces = vec![RoundTrace {
            round: 1,
            theta: ModelVector::zeros(1),
            error: 0.25,
            agg_deviation: None,
            fault_set: BTreeSet::from([2]),
            wall_ms: 0.1,
        }];
        let mut buf = Vec::new();
        write_traces_csv(&mut buf, &traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "round,error,agg_deviation,n_byzantine,wall_ms");
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,0.25,,1,"), "row was {row}");
    }
}
