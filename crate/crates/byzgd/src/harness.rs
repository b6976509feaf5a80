//! Experiment runner: TOML config parsing, seed management, sweeps over
//! `(k, q, attack)`, CSV/JSON emission.
//!
//! Outputs under the configured directory:
//!
//! ```text
//! out/
//!   config.toml     resolved config actually used (echo)
//!   summary.json    one record per sweep point
//!   traces/<point>/rep000.csv ...
//! ```
//!
//! Everything except the `wall_ms` trace column is deterministic in the
//! master seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand_distr::StandardNormal;
use rand::RngExt as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackSpec, AttackStrategy, FaultSetPolicy};
use crate::aggregation::AggregatorConfig;
use crate::diagnostics::{
    compute_constants_for, default_theta_grid, estimate_good_event, DEFAULT_GRID_POINTS,
};
use crate::engine::{
    run_byzantine_gd, run_standard_bgd, write_traces_csv, RoundTrace, RunConfig,
};
use crate::error::{Error, Result};
use crate::problem::{
    generate_linear_regression, shard_samples, LinearRegression, LossModel, ProblemSpec,
};
use crate::rng::{derive_rng, derive_seed};
use crate::vector::ModelVector;

pub const LINEAR_REGRESSION_KIND: &str = "linear_regression";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSection {
    pub n_total: usize,
    pub workers: usize,
    pub k: usize,
    #[serde(default)]
    pub q: usize,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    pub seed: u64,
    /// Approximation slack for the geometric median; defaults to `1/n_total`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Norm-trim threshold; trimming is off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Initial iterate; defaults to the zero vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub d: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub theta_star: ThetaStarSpec,
}

fn default_kind() -> String {
    LINEAR_REGRESSION_KIND.to_string()
}

fn default_radius() -> f64 {
    crate::problem::DEFAULT_DOMAIN_RADIUS
}

/// Ground truth: either an explicit vector or a seeded random direction of
/// the given norm (fresh per repetition).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ThetaStarSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackSection {
    #[serde(flatten)]
    pub strategy: AttackStrategy,
    /// `"fixed"` (uses `ids`) or `"resample"` (fresh set each round).
    #[serde(default = "default_fault_set")]
    pub fault_set: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<usize>>,
}

fn default_fault_set() -> String {
    "resample".to_string()
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            strategy: AttackStrategy::None,
            fault_set: default_fault_set(),
            ids: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSection {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Outlier batch fraction for the theory constants; defaults to the
    /// midpoint of `(q/k, 1/2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub estimate_good_event: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub good_event_resamples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Also write each repetition's generated dataset as headerless CSV.
    #[serde(default)]
    pub snapshot_datasets: bool,
}

fn default_repetitions() -> usize {
    1
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            repetitions: 1,
            output_dir: None,
            alpha: None,
            delta: None,
            estimate_good_event: false,
            good_event_resamples: None,
            grid_points: None,
            snapshot_datasets: false,
        }
    }
}

/// Optional lists to sweep; missing lists fall back to the base value.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<Vec<String>>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.kind != LINEAR_REGRESSION_KIND {
            return Err(Error::config(format!(
                "unknown problem kind '{}'; only '{LINEAR_REGRESSION_KIND}' is available",
                self.problem.kind
            )));
        }
        if self.problem.d == 0 {
            return Err(Error::config("problem.d must be at least 1"));
        }
        match (&self.problem.theta_star.explicit, self.problem.theta_star.norm) {
            (Some(v), None) => {
                if v.len() != self.problem.d {
                    return Err(Error::config(format!(
                        "problem.theta_star.explicit has {} coordinates, problem.d is {}",
                        v.len(),
                        self.problem.d
                    )));
                }
                ModelVector::validated(v.clone())?;
            }
            (None, Some(norm)) => {
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(Error::config("problem.theta_star.norm must be positive"));
                }
            }
            _ => {
                return Err(Error::config(
                    "problem.theta_star needs exactly one of 'explicit' or 'norm'",
                ));
            }
        }
        match self.attack.fault_set.as_str() {
            "fixed" => {
                if self.attack.ids.is_none() {
                    return Err(Error::config("attack.fault_set = \"fixed\" requires attack.ids"));
                }
            }
            "resample" => {}
            other => {
                return Err(Error::config(format!(
                    "attack.fault_set must be \"fixed\" or \"resample\", got \"{other}\""
                )));
            }
        }
        if self.experiment.repetitions == 0 {
            return Err(Error::config("experiment.repetitions must be at least 1"));
        }
        if let Some(theta0) = &self.run.theta0 {
            if theta0.len() != self.problem.d {
                return Err(Error::config(format!(
                    "run.theta0 has {} coordinates, problem.d is {}",
                    theta0.len(),
                    self.problem.d
                )));
            }
        }
        // Every sweep point must produce a valid run config; checked by
        // building them all.
        for point in self.sweep_points()? {
            self.run_config_for(&point, 0)?;
        }
        Ok(())
    }

    /// Fills every defaulted field so the echoed config is self-contained.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        out.run.rounds = Some(self.rounds());
        out.run.gamma = Some(self.gamma());
        out.run.max_iterations = Some(self.max_iterations());
        out.run.tolerance = Some(self.tolerance());
        out.run.theta0 = Some(self.theta0().into_vec());
        if out.experiment.output_dir.is_none() {
            return Err(Error::config(
                "no output directory: set experiment.output_dir or pass --out",
            ));
        }
        Ok(out)
    }

    pub fn rounds(&self) -> usize {
        self.run.rounds.unwrap_or_else(|| RunConfig::default_rounds(self.run.n_total))
    }

    pub fn gamma(&self) -> f64 {
        self.run.gamma.unwrap_or(1.0 / self.run.n_total as f64)
    }

    pub fn max_iterations(&self) -> usize {
        self.run.max_iterations.unwrap_or(200)
    }

    pub fn tolerance(&self) -> f64 {
        self.run.tolerance.unwrap_or(1e-10)
    }

    pub fn theta0(&self) -> ModelVector {
        match &self.run.theta0 {
            Some(coords) => ModelVector::new(coords.clone()),
            None => ModelVector::zeros(self.problem.d),
        }
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        LinearRegression::with_radius(self.problem.d, self.problem.radius)
            .spec()
            .clone()
    }

    /// Cross product of the sweep lists; a single base point without a sweep.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let ks = self
            .sweep
            .as_ref()
            .and_then(|s| s.k.clone())
            .unwrap_or_else(|| vec![self.run.k]);
        let qs = self
            .sweep
            .as_ref()
            .and_then(|s| s.q.clone())
            .unwrap_or_else(|| vec![self.run.q]);
        let attacks = self
            .sweep
            .as_ref()
            .and_then(|s| s.attack.clone())
            .unwrap_or_else(|| vec![self.attack.strategy.label().to_string()]);
        let mut points = Vec::new();
        let mut index = 0;
        for k in &ks {
            for q in &qs {
                for attack in &attacks {
                    points.push(SweepPoint {
                        index,
                        batch_count: *k,
                        byzantine_budget: *q,
                        attack: self.strategy_for(attack)?,
                    });
                    index += 1;
                }
            }
        }
        Ok(points)
    }

    /// Maps a sweep attack name to a concrete strategy: `none` is always
    /// available, any other name must match the `[attack]` section so its
    /// parameters are defined.
    fn strategy_for(&self, name: &str) -> Result<AttackStrategy> {
        if name == "none" {
            return Ok(AttackStrategy::None);
        }
        if name == self.attack.strategy.label() {
            return Ok(self.attack.strategy.clone());
        }
        Err(Error::config(format!(
            "sweep attack '{name}' has no parameters; the [attack] section defines '{}'",
            self.attack.strategy.label()
        )))
    }

    fn fault_policy_for(&self, point: &SweepPoint, rep: usize) -> Result<FaultSetPolicy> {
        match self.attack.fault_set.as_str() {
            "fixed" => {
                let ids = self.attack.ids.clone().unwrap_or_default();
                if ids.len() != point.byzantine_budget {
                    return Err(Error::config(format!(
                        "attack.ids has {} entries but q is {}",
                        ids.len(),
                        point.byzantine_budget
                    )));
                }
                Ok(FaultSetPolicy::Fixed { ids })
            }
            _ => Ok(FaultSetPolicy::ResampleEachRound {
                count: point.byzantine_budget,
                seed: derive_seed(self.run.seed, "attack", &[point.index as u64, rep as u64]),
            }),
        }
    }

    /// Concrete engine config for one sweep point and repetition.
    pub fn run_config_for(&self, point: &SweepPoint, rep: usize) -> Result<RunConfig> {
        let mut aggregator = AggregatorConfig::new(point.batch_count);
        aggregator.gamma = self.gamma();
        aggregator.trim_threshold = self.run.tau;
        aggregator.max_iterations = self.max_iterations();
        aggregator.tolerance = self.tolerance();
        let config = RunConfig {
            n_total: self.run.n_total,
            workers: self.run.workers,
            byzantine_budget: point.byzantine_budget,
            step_size: self.run.eta,
            rounds: self.rounds(),
            theta0: self.theta0(),
            aggregator,
            attack: AttackSpec {
                strategy: point.attack.clone(),
                policy: self.fault_policy_for(point, rep)?,
            },
            seed: self.run.seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Ground truth for a repetition: the explicit vector, or a fresh seeded
    /// random direction of the configured norm.
    pub fn theta_star_for(&self, rep: usize) -> Result<ModelVector> {
        match (&self.problem.theta_star.explicit, self.problem.theta_star.norm) {
            (Some(coords), _) => ModelVector::validated(coords.clone()),
            (None, Some(norm)) => {
                let mut rng = derive_rng(self.run.seed, "theta-star", &[rep as u64]);
                let direction = ModelVector::new(
                    (0..self.problem.d)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
                direction.with_norm(norm)
            }
            _ => Err(Error::config("theta_star is unspecified")),
        }
    }
}

/// One point of the `(k, q, attack)` sweep grid.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub batch_count: usize,
    pub byzantine_budget: usize,
    pub attack: AttackStrategy,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!(
            "point{:02}_k{}_q{}_{}",
            self.index,
            self.batch_count,
            self.byzantine_budget,
            self.attack.label()
        )
    }
}

/// Aggregates for one sweep point.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPointSummary {
    pub batch_count: usize,
    pub byzantine_budget: usize,
    pub attack: String,
    pub repetitions: usize,
    pub final_error_mean: f64,
    pub final_error_min: f64,
    pub final_error_max: f64,
    /// Mean over repetitions of the first round whose error is within 10% of
    /// that repetition's final error.
    pub rounds_to_floor_mean: f64,
    /// `eta * xi1 / rho` when the contraction margin is positive.
    pub theory_floor: Option<f64>,
    pub theory_rho: Option<f64>,
    pub good_event_frequency: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub algorithm: String,
    pub master_seed: u64,
    pub points: Vec<SweepPointSummary>,
}

/// Both sides of a standard-vs-robust comparison on identical data.
#[derive(Clone, Debug, Serialize)]
pub struct BaselineComparison {
    pub standard: Summary,
    pub robust: Summary,
}

#[derive(Clone, Copy, PartialEq)]
enum Algorithm {
    Standard,
    MedianOfMeans,
}

impl Algorithm {
    fn label(&self) -> &'static str {
        match self {
            Algorithm::Standard => "standard_bgd",
            Algorithm::MedianOfMeans => "byzantine_gd",
        }
    }
}

struct RepOutcome {
    final_error: f64,
    rounds_to_floor: usize,
}

fn rounds_to_floor(traces: &[RoundTrace]) -> usize {
    let final_error = traces.last().map(|t| t.error).unwrap_or(0.0);
    let target = final_error * 1.1;
    traces
        .iter()
        .find(|t| t.error <= target)
        .map(|t| t.round)
        .unwrap_or(traces.len())
}

fn execute_repetition(
    config: &ExperimentConfig,
    model: &dyn LossModel,
    point: &SweepPoint,
    rep: usize,
    algorithm: Algorithm,
    trace_path: Option<&Path>,
) -> Result<RepOutcome> {
    let run_config = config.run_config_for(point, rep)?;
    let theta_star = config.theta_star_for(rep)?;
    let data_seed = derive_seed(config.run.seed, "dataset", &[point.index as u64, rep as u64]);
    let samples = generate_linear_regression(&theta_star, config.run.n_total, data_seed)?;
    if config.experiment.snapshot_datasets {
        if let Some(path) = trace_path {
            let snapshot = path.with_extension("dataset.csv");
            let file = fs::File::create(snapshot)?;
            crate::problem::write_samples_csv(std::io::BufWriter::new(file), &samples)?;
        }
    }
    let shards = shard_samples(&samples, config.run.workers)?;
    let traces = match algorithm {
        Algorithm::Standard => run_standard_bgd(&run_config, model, &shards, &theta_star)?,
        Algorithm::MedianOfMeans => run_byzantine_gd(&run_config, model, &shards, &theta_star)?,
    };
    if let Some(path) = trace_path {
        let file = fs::File::create(path)?;
        write_traces_csv(std::io::BufWriter::new(file), &traces)?;
    }
    Ok(RepOutcome {
        final_error: traces.last().map(|t| t.error).unwrap_or(f64::NAN),
        rounds_to_floor: rounds_to_floor(&traces),
    })
}

fn theory_defaults(k: usize, q: usize) -> Option<(f64, f64)> {
    let fault_fraction = q as f64 / k as f64;
    if fault_fraction >= 0.5 {
        return None;
    }
    let alpha = 0.5 * (fault_fraction + 0.5);
    let delta = 0.5 * (alpha - fault_fraction);
    Some((alpha, delta))
}

fn summarize_point(
    config: &ExperimentConfig,
    point: &SweepPoint,
    outcomes: &[RepOutcome],
) -> Result<SweepPointSummary> {
    let finals: Vec<f64> = outcomes.iter().map(|o| o.final_error).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rtf = outcomes.iter().map(|o| o.rounds_to_floor as f64).sum::<f64>()
        / outcomes.len() as f64;

    let explicit = config.experiment.alpha.is_some() || config.experiment.delta.is_some();
    let params = match (config.experiment.alpha, config.experiment.delta) {
        (Some(a), Some(d)) => Some((a, d)),
        (Some(a), None) => {
            Some((a, 0.5 * (a - point.byzantine_budget as f64 / point.batch_count as f64)))
        }
        (None, Some(d)) => {
            theory_defaults(point.batch_count, point.byzantine_budget).map(|(a, _)| (a, d))
        }
        (None, None) => theory_defaults(point.batch_count, point.byzantine_budget),
    };

    let mut theory_floor = None;
    let mut theory_rho = None;
    let mut good_event_frequency = None;
    if let Some((alpha, delta)) = params {
        let constants = compute_constants_for(
            &config.problem_spec(),
            config.run.n_total,
            point.batch_count,
            point.byzantine_budget,
            config.run.eta,
            alpha,
            delta,
        );
        match constants {
            Ok(constants) => {
                theory_rho = Some(constants.rho);
                if constants.error_floor.is_finite() {
                    theory_floor = Some(constants.error_floor);
                }
                if config.experiment.estimate_good_event {
                    let theta_star = config.theta_star_for(0)?;
                    let grid = default_theta_grid(
                        &config.problem_spec(),
                        &theta_star,
                        &config.theta0(),
                        config.experiment.grid_points.unwrap_or(DEFAULT_GRID_POINTS),
                        derive_seed(config.run.seed, "grid", &[point.index as u64]),
                    );
                    let estimate = estimate_good_event(
                        config.run.n_total,
                        config.run.workers,
                        &theta_star,
                        &constants,
                        &grid,
                        config.experiment.good_event_resamples.unwrap_or(50),
                        derive_seed(config.run.seed, "good-event", &[point.index as u64]),
                    )?;
                    good_event_frequency = Some(estimate.frequency);
                }
            }
            Err(e) if explicit => return Err(e),
            Err(_) => {}
        }
    }

    Ok(SweepPointSummary {
        batch_count: point.batch_count,
        byzantine_budget: point.byzantine_budget,
        attack: point.attack.label().to_string(),
        repetitions: outcomes.len(),
        final_error_mean: mean,
        final_error_min: min,
        final_error_max: max,
        rounds_to_floor_mean: rtf,
        theory_floor,
        theory_rho,
        good_event_frequency,
    })
}

fn output_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    config
        .experiment
        .output_dir
        .clone()
        .ok_or_else(|| Error::config("no output directory: set experiment.output_dir or pass --out"))
}

fn write_config_echo(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let echo = config.resolved()?.to_toml_string()?;
    fs::write(dir.join("config.toml"), echo)?;
    Ok(())
}

fn run_points(
    config: &ExperimentConfig,
    points: &[SweepPoint],
    algorithm: Algorithm,
    trace_subdir: &str,
) -> Result<Summary> {
    let dir = output_dir(config)?;
    fs::create_dir_all(&dir)?;
    write_config_echo(config, &dir)?;
    let model = LinearRegression::with_radius(config.problem.d, config.problem.radius);

    let mut summaries = Vec::with_capacity(points.len());
    for point in points {
        let point_dir = dir.join(trace_subdir).join(point.dir_name());
        fs::create_dir_all(&point_dir)?;
        let outcomes: Vec<RepOutcome> = (0..config.experiment.repetitions)
            .into_par_iter()
            .map(|rep| {
                let trace_path = point_dir.join(format!("rep{rep:03}.csv"));
                execute_repetition(config, &model, point, rep, algorithm, Some(&trace_path))
            })
            .collect::<Result<_>>()?;
        summaries.push(summarize_point(config, point, &outcomes)?);
    }
    Ok(Summary {
        algorithm: algorithm.label().to_string(),
        master_seed: config.run.seed,
        points: summaries,
    })
}

fn write_summary_json(summary: &impl Serialize, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::config(format!("summary serialization failed: {e}")))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Runs the base configuration (no sweep) with median-of-means aggregation.
pub fn run_single(config: &ExperimentConfig) -> Result<Summary> {
    let mut base = config.clone();
    base.sweep = None;
    let points = base.sweep_points()?;
    let summary = run_points(&base, &points, Algorithm::MedianOfMeans, "traces")?;
    write_summary_json(&summary, &output_dir(&base)?.join("summary.json"))?;
    Ok(summary)
}

/// Runs the full `(k, q, attack)` sweep with median-of-means aggregation.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Summary> {
    let points = config.sweep_points()?;
    let summary = run_points(config, &points, Algorithm::MedianOfMeans, "traces")?;
    write_summary_json(&summary, &output_dir(config)?.join("summary.json"))?;
    Ok(summary)
}

/// Runs plain averaging and median-of-means on identical data and seeds.
pub fn compare_baselines(config: &ExperimentConfig) -> Result<BaselineComparison> {
    let mut base = config.clone();
    base.sweep = None;
    let points = base.sweep_points()?;
    let standard = run_points(&base, &points, Algorithm::Standard, "traces/standard")?;
    let robust = run_points(&base, &points, Algorithm::MedianOfMeans, "traces/robust")?;
    let comparison = BaselineComparison { standard, robust };
    write_summary_json(&comparison, &output_dir(&base)?.join("comparison.json"))?;
    Ok(comparison)
}
