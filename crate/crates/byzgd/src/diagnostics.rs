//! Theory-side calculators and Monte Carlo checkers.
//!
//! Everything here sits beside the algorithm, not inside it: concentration
//! radii and the convergence constants they imply, the per-batch deviation
//! function `Z_l(theta)` (batch-mean gradient minus population gradient), an
//! empirical estimator for the event that enough batches deviate uniformly
//! little, and spot checks of the sub-exponential tail constants claimed for
//! the linear-regression instance.
//!
//! All logarithms are natural.

use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::c_alpha;
use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::problem::{
    local_empirical_gradient, population_gradient, DataShard, LinearRegression, LossModel,
    ProblemSpec, SampleStream,
};
use crate::rng::{derive_rng, derive_seed};
use crate::vector::{mean_of_vectors, ModelVector};

/// Default number of random grid points for the good-event estimator, on top
/// of the optimum and the initial iterate.
pub const DEFAULT_GRID_POINTS: usize = 64;

/// Binary divergence `D(p || q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))`.
///
/// Both arguments must lie strictly inside `(0, 1)`.
pub fn binary_divergence(delta_prime: f64, delta: f64) -> Result<f64> {
    for (name, v) in [("delta_prime", delta_prime), ("delta", delta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!(
                "{name} must lie strictly inside (0, 1), got {v}"
            )));
        }
    }
    Ok(delta_prime * (delta_prime / delta).ln()
        + (1.0 - delta_prime) * ((1.0 - delta_prime) / (1.0 - delta)).ln())
}

/// Concentration radius for the norm of an n-sample mean of sub-exponential
/// gradients: `sqrt(2) * sigma * sqrt((d ln 6 + ln(3/delta)) / n)`.
pub fn deviation_radius(n: usize, dim: usize, delta: f64, sigma: f64) -> f64 {
    std::f64::consts::SQRT_2
        * sigma
        * ((dim as f64 * 6.0_f64.ln() + (3.0 / delta).ln()) / n as f64).sqrt()
}

/// High-probability bound on the spectral norm of the empirical second-moment
/// matrix of `n` standard-normal design vectors:
/// `(sqrt(n) + sqrt(d) + sqrt(2 ln(4/delta)))^2 / n`.
pub fn gaussian_design_spectral_bound(n: usize, dim: usize, delta: f64) -> f64 {
    let root = (n as f64).sqrt() + (dim as f64).sqrt() + (2.0 * (4.0 / delta).ln()).sqrt();
    root * root / n as f64
}

/// Radius of the uniform (over the whole domain ball) deviation bound for the
/// normalized gradient increments, evaluated at batch sample count `n`.
///
/// The empirical-smoothness constant inside the formula is evaluated at the
/// same `delta` as everything else, with the Gaussian-design closed form of
/// the shipped linear-regression instance.
pub fn uniform_deviation_radius(n: usize, dim: usize, delta: f64, problem: &ProblemSpec) -> Result<f64> {
    let sigma2 = problem.increment_subexp_scale;
    let alpha2 = problem.increment_subexp_tail;
    let sigma1 = problem.grad_subexp_scale;
    let smoothness = problem
        .gradient_lipschitz
        .max(gaussian_design_spectral_bound(n, dim, delta));
    let nf = n as f64;
    let df = dim as f64;
    let radicand = df * (18.0 * smoothness / sigma2).ln()
        + 0.5 * df * (nf / df).ln()
        + (6.0 * sigma2 * sigma2 * problem.domain_radius * nf.sqrt() / (alpha2 * sigma1 * delta))
            .ln();
    if !(radicand.is_finite() && radicand >= 0.0) {
        return Err(Error::invalid(format!(
            "uniform deviation radius undefined for n = {n}, d = {dim}, delta = {delta}"
        )));
    }
    Ok(sigma2 * (2.0 / nf).sqrt() * radicand.sqrt())
}

/// Per-round contraction margin of approximate gradient descent at step size
/// `L / (2 M^2)`: `1 - sqrt(1 - L^2/(4 M^2)) - xi2 L / (2 M^2)`.
/// Convergence claims require a positive margin.
pub fn contraction_margin(strong_convexity: f64, gradient_lipschitz: f64, xi2: f64) -> f64 {
    let ratio = strong_convexity / (2.0 * gradient_lipschitz);
    1.0 - (1.0 - ratio * ratio).sqrt()
        - xi2 * strong_convexity / (2.0 * gradient_lipschitz * gradient_lipschitz)
}

/// The constants a run's convergence bound is built from, plus the
/// preconditions they rely on.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryConstants {
    pub samples_per_batch: usize,
    pub dim: usize,
    pub batch_count: usize,
    pub byzantine_budget: usize,
    pub alpha: f64,
    pub delta: f64,
    pub c_alpha: f64,
    /// Concentration radius of the batch-mean gradient at the optimum.
    pub delta1: f64,
    /// Same radius with the increment scale parameter.
    pub delta1_prime: f64,
    /// Uniform deviation radius of the normalized increments.
    pub delta2: f64,
    /// Additive precision of the aggregated gradient: `4 c_alpha delta1`.
    pub xi1: f64,
    /// Multiplicative precision of the aggregated gradient: `8 c_alpha delta2`.
    pub xi2: f64,
    /// Contraction margin; the convergence bound is vacuous unless positive.
    pub rho: f64,
    /// Asymptotic error bound `eta xi1 / rho`; infinite when `rho <= 0`.
    pub error_floor: f64,
    /// Lower bound on the probability that enough batches deviate uniformly
    /// little: `1 - exp(-k D(alpha - q/k || delta))`.
    pub good_event_prob_lower: f64,
    /// Whether `delta1 <= sigma1^2 / alpha1` (small-deviation regime).
    pub delta1_small_deviation: bool,
    /// Whether `delta2 <= sigma2^2 / alpha2`.
    pub delta2_small_deviation: bool,
    pub contraction_positive: bool,
}

impl TheoryConstants {
    pub fn csv_header() -> &'static str {
        "samples_per_batch,dim,batch_count,byzantine_budget,alpha,delta,c_alpha,delta1,\
         delta1_prime,delta2,xi1,xi2,rho,error_floor,good_event_prob_lower,\
         delta1_small_deviation,delta2_small_deviation,contraction_positive"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.samples_per_batch,
            self.dim,
            self.batch_count,
            self.byzantine_budget,
            self.alpha,
            self.delta,
            self.c_alpha,
            self.delta1,
            self.delta1_prime,
            self.delta2,
            self.xi1,
            self.xi2,
            self.rho,
            self.error_floor,
            self.good_event_prob_lower,
            self.delta1_small_deviation,
            self.delta2_small_deviation,
            self.contraction_positive
        )
    }
}

/// Evaluates every run-level theory constant for a problem and run shape.
pub fn compute_constants(
    problem: &ProblemSpec,
    config: &RunConfig,
    alpha: f64,
    delta: f64,
) -> Result<TheoryConstants> {
    compute_constants_for(
        problem,
        config.n_total,
        config.batch_count(),
        config.byzantine_budget,
        config.step_size,
        alpha,
        delta,
    )
}

/// Same as [`compute_constants`] without requiring a full run config.
pub fn compute_constants_for(
    problem: &ProblemSpec,
    n_total: usize,
    batch_count: usize,
    byzantine_budget: usize,
    step_size: f64,
    alpha: f64,
    delta: f64,
) -> Result<TheoryConstants> {
    problem.validate()?;
    if batch_count == 0 || n_total == 0 || !n_total.is_multiple_of(batch_count) {
        return Err(Error::invalid(format!(
            "batch count {batch_count} must be positive and divide the sample count {n_total}"
        )));
    }
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let n = n_total / batch_count;
    let fault_fraction = byzantine_budget as f64 / batch_count as f64;
    if !(alpha > fault_fraction && alpha < 0.5) {
        return Err(Error::invalid(format!(
            "alpha must lie in (q/k, 1/2) = ({fault_fraction}, 0.5), got {alpha}"
        )));
    }
    if !(delta > 0.0 && delta <= alpha - fault_fraction) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, alpha - q/k] = (0, {}], got {delta}",
            alpha - fault_fraction
        )));
    }

    let amplification = c_alpha(alpha);
    let delta1 = deviation_radius(n, problem.dim, delta, problem.grad_subexp_scale);
    let delta1_prime = deviation_radius(n, problem.dim, delta, problem.increment_subexp_scale);
    let delta2 = uniform_deviation_radius(n, problem.dim, delta, problem)?;
    let xi1 = 4.0 * amplification * delta1;
    let xi2 = 8.0 * amplification * delta2;
    let rho = contraction_margin(problem.strong_convexity, problem.gradient_lipschitz, xi2);
    let error_floor = if rho > 0.0 {
        step_size * xi1 / rho
    } else {
        f64::INFINITY
    };
    let divergence = binary_divergence(alpha - fault_fraction, delta)?;
    let good_event_prob_lower = 1.0 - (-(batch_count as f64) * divergence).exp();

    Ok(TheoryConstants {
        samples_per_batch: n,
        dim: problem.dim,
        batch_count,
        byzantine_budget,
        alpha,
        delta,
        c_alpha: amplification,
        delta1,
        delta1_prime,
        delta2,
        xi1,
        xi2,
        rho,
        error_floor,
        good_event_prob_lower,
        delta1_small_deviation: delta1
            <= problem.grad_subexp_scale * problem.grad_subexp_scale / problem.grad_subexp_tail,
        delta2_small_deviation: delta2
            <= problem.increment_subexp_scale * problem.increment_subexp_scale
                / problem.increment_subexp_tail,
        contraction_positive: rho > 0.0,
    })
}

/// Deviation of one batch's mean gradient from the population gradient:
/// `Z(theta) = batch-mean gradient - grad F(theta)`. Requires a loss model
/// with a closed-form population gradient.
pub fn batch_deviation(
    model: &dyn LossModel,
    batch_shards: &[DataShard],
    theta: &ModelVector,
    theta_star: &ModelVector,
) -> Result<ModelVector> {
    if batch_shards.is_empty() {
        return Err(Error::invalid("batch deviation of an empty batch"));
    }
    let pop = population_gradient(model, theta, theta_star)?;
    let locals: Vec<ModelVector> = batch_shards
        .iter()
        .map(|shard| local_empirical_gradient(model, shard, theta))
        .collect::<Result<_>>()?;
    let batch_mean = mean_of_vectors(&locals)?;
    Ok(&batch_mean - &pop)
}

/// Result of evaluating the good-event condition on one dataset.
#[derive(Clone, Debug)]
pub struct GoodEventCheck {
    /// Batches whose deviation stays within the bound at every grid point.
    pub satisfied_batches: usize,
    pub batch_satisfied: Vec<bool>,
    /// Required count `k (1 - alpha) + q`.
    pub threshold: f64,
    pub holds: bool,
}

/// Checks, over a finite grid of model points, how many batches satisfy
/// `c_alpha ||Z(theta)|| <= xi2 ||theta - theta*|| + xi1` everywhere, and
/// whether enough of them do.
pub fn check_good_event(
    model: &dyn LossModel,
    shards: &[DataShard],
    theta_star: &ModelVector,
    constants: &TheoryConstants,
    theta_grid: &[ModelVector],
) -> Result<GoodEventCheck> {
    if theta_grid.is_empty() {
        return Err(Error::invalid("good-event grid must be non-empty"));
    }
    let k = constants.batch_count;
    if k == 0 || !shards.len().is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "batch count {k} does not divide shard count {}",
            shards.len()
        )));
    }
    let batch_size = shards.len() / k;
    let mut batch_satisfied = Vec::with_capacity(k);
    for batch in 0..k {
        let slice = &shards[batch * batch_size..(batch + 1) * batch_size];
        let mut ok = true;
        for theta in theta_grid {
            let z = batch_deviation(model, slice, theta, theta_star)?;
            let allowed = constants.xi2 * (theta - theta_star).norm() + constants.xi1;
            if constants.c_alpha * z.norm() > allowed {
                ok = false;
                break;
            }
        }
        batch_satisfied.push(ok);
    }
    let satisfied_batches = batch_satisfied.iter().filter(|&&b| b).count();
    let threshold =
        k as f64 * (1.0 - constants.alpha) + constants.byzantine_budget as f64;
    Ok(GoodEventCheck {
        satisfied_batches,
        batch_satisfied,
        threshold,
        holds: satisfied_batches as f64 >= threshold,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodEventEstimate {
    /// Fraction of data resamples on which the good event held.
    pub frequency: f64,
    pub resamples: usize,
    pub mean_satisfied_batches: f64,
}

/// Monte Carlo estimate of the good-event probability under the
/// linear-regression data distribution: draws fresh datasets, evaluates
/// [`check_good_event`] on each, and reports the frequency.
pub fn estimate_good_event(
    n_total: usize,
    workers: usize,
    theta_star: &ModelVector,
    constants: &TheoryConstants,
    theta_grid: &[ModelVector],
    resamples: usize,
    seed: u64,
) -> Result<GoodEventEstimate> {
    if resamples == 0 {
        return Err(Error::invalid("resample count must be at least 1"));
    }
    let model = LinearRegression::new(theta_star.dim());
    let checks: Vec<GoodEventCheck> = (0..resamples)
        .into_par_iter()
        .map(|i| -> Result<GoodEventCheck> {
            let data_seed = derive_seed(seed, "good-event-data", &[i as u64]);
            let samples =
                crate::problem::generate_linear_regression(theta_star, n_total, data_seed)?;
            let shards = crate::problem::shard_samples(&samples, workers)?;
            check_good_event(&model, &shards, theta_star, constants, theta_grid)
        })
        .collect::<Result<_>>()?;
    let held = checks.iter().filter(|c| c.holds).count();
    let mean_satisfied =
        checks.iter().map(|c| c.satisfied_batches as f64).sum::<f64>() / resamples as f64;
    Ok(GoodEventEstimate {
        frequency: held as f64 / resamples as f64,
        resamples,
        mean_satisfied_batches: mean_satisfied,
    })
}

/// Random model points inside the domain ball around the optimum, plus the
/// optimum and the initial iterate themselves.
pub fn default_theta_grid(
    problem: &ProblemSpec,
    theta_star: &ModelVector,
    theta0: &ModelVector,
    random_points: usize,
    seed: u64,
) -> Vec<ModelVector> {
    let dim = problem.dim;
    let radius = problem.domain_radius * (dim as f64).sqrt();
    let mut rng = derive_rng(seed, "theta-grid", &[]);
    let mut grid = Vec::with_capacity(random_points + 2);
    for _ in 0..random_points {
        let direction =
            ModelVector::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        let u: f64 = rng.random();
        let r = radius * u.powf(1.0 / dim as f64);
        match direction.with_norm(r) {
            Ok(point) => grid.push(theta_star + &point),
            Err(_) => grid.push(theta_star.clone()),
        }
    }
    grid.push(theta_star.clone());
    grid.push(theta0.clone());
    grid
}

/// Outcome of an empirical moment-generating-function check.
#[derive(Clone, Debug, Serialize)]
pub struct MgfCheck {
    pub lambda: f64,
    pub samples: usize,
    pub empirical: f64,
    /// `exp(sigma^2 lambda^2 / 2)` with 5% slack.
    pub bound: f64,
    pub passes: bool,
}

const MGF_SLACK: f64 = 1.05;

/// Empirical MGF of one coordinate of the sample gradient at the optimum,
/// against the sub-exponential envelope with the gradient scale constant.
pub fn check_gradient_mgf_at_optimum(
    dim: usize,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<MgfCheck> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let model = LinearRegression::new(dim);
    let theta_star = ModelVector::zeros(dim);
    let direction = ModelVector::unit(dim, 0);
    let mut acc = 0.0;
    for sample in SampleStream::new(&theta_star, 1.0, seed)?.take(samples) {
        let g = model.sample_gradient(&sample, &theta_star)?;
        acc += (lambda * g.dot(&direction)).exp();
    }
    let empirical = acc / samples as f64;
    let sigma = model.spec().grad_subexp_scale;
    let bound = (sigma * sigma * lambda * lambda / 2.0).exp() * MGF_SLACK;
    Ok(MgfCheck { lambda, samples, empirical, bound, passes: empirical <= bound })
}

/// Empirical MGF of the normalized gradient increment
/// `<h(X, theta) - E h(X, theta), v> / ||theta - theta*||` at a fixed model
/// point mixing the probe direction and an orthogonal one, against the
/// envelope with the increment scale constant.
pub fn check_increment_mgf(dim: usize, lambda: f64, samples: usize, seed: u64) -> Result<MgfCheck> {
    if dim < 2 {
        return Err(Error::invalid("increment check needs dimension at least 2"));
    }
    if samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let model = LinearRegression::new(dim);
    let theta_star = ModelVector::zeros(dim);
    let direction = ModelVector::unit(dim, 0);
    // theta - theta* = (e1 + e2)/sqrt(2): unit offset with equal weight on the
    // probe direction and an orthogonal one.
    let offset =
        (&ModelVector::unit(dim, 0) + &ModelVector::unit(dim, 1)).scale(std::f64::consts::FRAC_1_SQRT_2);
    let theta = &theta_star + &offset;
    let expected_increment = offset.clone();
    let separation = offset.norm();

    let mut acc = 0.0;
    for sample in SampleStream::new(&theta_star, 1.0, seed)?.take(samples) {
        let g_theta = model.sample_gradient(&sample, &theta)?;
        let g_star = model.sample_gradient(&sample, &theta_star)?;
        let increment = &(&g_theta - &g_star) - &expected_increment;
        acc += (lambda * increment.dot(&direction) / separation).exp();
    }
    let empirical = acc / samples as f64;
    let sigma = model.spec().increment_subexp_scale;
    let bound = (sigma * sigma * lambda * lambda / 2.0).exp() * MGF_SLACK;
    Ok(MgfCheck { lambda, samples, empirical, bound, passes: empirical <= bound })
}

/// Outcome of the empirical design-covariance spectral check.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralCheck {
    pub trials: usize,
    /// The closed-form high-probability bound being tested.
    pub bound: f64,
    /// Fraction of trials whose top eigenvalue stayed under the bound.
    pub frequency: f64,
    pub max_observed: f64,
    /// True when the frequency is at least 0.95.
    pub passes: bool,
}

/// Draws fresh n-sample design matrices and checks how often the spectral
/// norm of `(1/n) sum_i w_i w_i^T` stays below
/// [`gaussian_design_spectral_bound`].
pub fn check_design_spectral_bound(
    n: usize,
    dim: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<SpectralCheck> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("sample and trial counts must be at least 1"));
    }
    let bound = gaussian_design_spectral_bound(n, dim, delta);
    let theta_star = ModelVector::zeros(dim);
    let tops: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let stream_seed = derive_seed(seed, "design-matrix", &[trial as u64]);
            let mut second_moment = vec![vec![0.0; dim]; dim];
            for sample in SampleStream::new(&theta_star, 1.0, stream_seed)?.take(n) {
                let w = sample.covariate.as_slice();
                for i in 0..dim {
                    for j in 0..dim {
                        second_moment[i][j] += w[i] * w[j];
                    }
                }
            }
            for row in second_moment.iter_mut() {
                for v in row.iter_mut() {
                    *v /= n as f64;
                }
            }
            let mut rng = derive_rng(seed, "power-iteration", &[trial as u64]);
            Ok(largest_eigenvalue(&second_moment, &mut rng))
        })
        .collect::<Result<_>>()?;
    let under = tops.iter().filter(|&&t| t <= bound).count();
    let frequency = under as f64 / trials as f64;
    Ok(SpectralCheck {
        trials,
        bound,
        frequency,
        max_observed: tops.iter().copied().fold(0.0, f64::max),
        passes: frequency >= 0.95,
    })
}

/// Top eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration with a random start.
fn largest_eigenvalue<R: RngExt>(matrix: &[Vec<f64>], rng: &mut R) -> f64 {
    let dim = matrix.len();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut rayleigh = 0.0;
    for _ in 0..300 {
        let mut next = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                next[i] += matrix[i][j] * v[j];
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        rayleigh = norm_dot(matrix, &next);
        v = next;
    }
    rayleigh
}

fn norm_dot(matrix: &[Vec<f64>], v: &[f64]) -> f64 {
    let dim = matrix.len();
    let mut quad = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            quad += v[i] * matrix[i][j] * v[j];
        }
    }
    quad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_linear_regression_with_noise, shard_samples, Sample};

    fn linreg_spec(dim: usize) -> ProblemSpec {
        LinearRegression::new(dim).spec().clone()
    }

    #[test]
    fn divergence_of_equal_arguments_is_zero() {
        for d in [0.05, 0.3, 0.9] {
            assert!(binary_divergence(d, d).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_matches_direct_evaluation() {
        let d = binary_divergence(0.3, 0.1).unwrap();
        assert!((d - 0.15366358680379863).abs() / 0.15366358680379863 < 1e-12);
    }

    #[test]
    fn divergence_grows_with_separation() {
        let near = binary_divergence(0.3, 0.1).unwrap();
        let far = binary_divergence(0.4, 0.1).unwrap();
        assert!(far > near);
        assert!((far - 0.3112386795830576).abs() / 0.3112386795830576 < 1e-12);
    }

    #[test]
    fn divergence_rejects_boundary_arguments() {
        assert!(binary_divergence(0.0, 0.5).is_err());
        assert!(binary_divergence(0.5, 1.0).is_err());
        assert!(binary_divergence(1.0, 0.5).is_err());
    }

    #[test]
    fn deviation_radius_matches_hand_value() {
        let expected = 0.2967284230032752;
        let got = deviation_radius(1000, 10, 0.05, std::f64::consts::SQRT_2);
        assert!((got - expected).abs() / expected < 1e-12, "got {got}");
    }

    #[test]
    fn deviation_radius_scales_by_inverse_sqrt2_per_doubling() {
        // Doubling n scales the radius by exactly 1/sqrt(2).
        let a = deviation_radius(1500, 20, 0.05, 1.7);
        let b = deviation_radius(3000, 20, 0.05, 1.7);
        let ratio = b / a;
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn contraction_margin_matches_hand_value() {
        let rho = contraction_margin(1.0, 1.0, 0.0);
        assert!((rho - 0.13397459621556135).abs() < 1e-15);
    }

    #[test]
    fn constants_match_hand_derived_values_at_desk_scale() {
        // n_total = 24000, k = 12, q = 4, alpha = 0.35, delta = alpha - q/k - 0.01.
        let problem = linreg_spec(20);
        let alpha = 0.35;
        let delta = alpha - 4.0 / 12.0 - 0.01;
        let c = compute_constants_for(&problem, 24000, 12, 4, 0.5, alpha, delta).unwrap();
        let close = |got: f64, want: f64| (got - want).abs() / want.abs() < 1e-9;
        assert!(close(c.c_alpha, 4.333333333333333), "c_alpha {}", c.c_alpha);
        assert!(close(c.delta1, 0.2896357608007874), "delta1 {}", c.delta1);
        assert!(close(c.delta1_prime, 0.5792715216015748), "delta1' {}", c.delta1_prime);
        assert!(close(c.delta2, 0.897258349165416), "delta2 {}", c.delta2);
        assert!(close(c.xi1, 5.020353187213647), "xi1 {}", c.xi1);
        assert!(close(c.xi2, 31.104956104401083), "xi2 {}", c.xi2);
        assert!(close(c.rho, -15.41850345598498), "rho {}", c.rho);
        assert!(c.error_floor.is_infinite() && !c.contraction_positive);
        assert!(
            close(c.good_event_prob_lower, 0.06186762051698148),
            "good event lower bound {}",
            c.good_event_prob_lower
        );
        // delta1 = 0.2896 <= sigma1^2/alpha1 = sqrt(2); delta2 = 0.897 <= sigma2^2/alpha2 = 1.
        assert!(c.delta1_small_deviation);
        assert!(c.delta2_small_deviation);
    }

    #[test]
    fn constants_match_hand_derived_values_in_contracting_regime() {
        let problem = linreg_spec(20);
        let c = compute_constants_for(&problem, 100_000_000, 1, 0, 0.5, 0.25, 0.1).unwrap();
        let close = |got: f64, want: f64| (got - want).abs() / want.abs() < 1e-9;
        assert!(close(c.delta1, 0.0012527790989032865));
        assert!(close(c.delta2, 0.005726325257908974));
        assert!(close(c.xi1, 0.015033349186839436));
        assert!(close(c.xi2, 0.13743180618981538));
        assert!(close(c.rho, 0.06525869312065367));
        assert!(close(c.error_floor, 0.11518273250618885));
        assert!(c.contraction_positive && c.delta2_small_deviation);
    }

    #[test]
    fn floor_tracks_the_batch_size_scaling() {
        // floor(n1) / floor(n2) = sqrt(n2/n1) * rho(n2)/rho(n1): the additive
        // precision term scales exactly like 1/sqrt(n).
        let problem = linreg_spec(20);
        let a = compute_constants_for(&problem, 100_000_000, 1, 0, 0.5, 0.25, 0.1).unwrap();
        let b = compute_constants_for(&problem, 400_000_000, 1, 0, 0.5, 0.25, 0.1).unwrap();
        let lhs = a.error_floor / b.error_floor;
        let rhs = 2.0 * (b.rho / a.rho);
        assert!((lhs - rhs).abs() / rhs < 1e-12, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn constants_reject_out_of_range_parameters() {
        let problem = linreg_spec(4);
        // alpha below the fault fraction q/k.
        assert!(compute_constants_for(&problem, 1000, 10, 4, 0.5, 0.3, 0.01).is_err());
        // delta above alpha - q/k.
        assert!(compute_constants_for(&problem, 1000, 10, 2, 0.5, 0.3, 0.2).is_err());
        // batch count not dividing the sample count.
        assert!(compute_constants_for(&problem, 1000, 7, 0, 0.5, 0.3, 0.1).is_err());
    }

    #[test]
    fn batch_deviation_is_zero_at_the_optimum_without_noise() {
        let model = LinearRegression::new(3);
        let theta_star = ModelVector::new(vec![0.5, -0.5, 1.0]);
        let samples =
            generate_linear_regression_with_noise(&theta_star, 0.0, 60, 3).unwrap();
        let shards = shard_samples(&samples, 6).unwrap();
        let z = batch_deviation(&model, &shards, &theta_star, &theta_star).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn batch_deviation_of_single_sample_matches_hand_formula() {
        let model = LinearRegression::new(2);
        let theta_star = ModelVector::zeros(2);
        let theta = ModelVector::new(vec![1.0, 2.0]);
        let sample = Sample { covariate: ModelVector::new(vec![0.5, -1.0]), response: 0.25 };
        let shard = DataShard { worker_id: 0, samples: vec![sample.clone()] };
        let z = batch_deviation(&model, &[shard], &theta, &theta_star).unwrap();
        let g = model.sample_gradient(&sample, &theta).unwrap();
        let expected = &g - &(&theta - &theta_star);
        assert_eq!(z, expected);
    }

    #[test]
    fn batch_deviation_obeys_the_law_of_large_numbers() {
        let model = LinearRegression::new(4);
        let theta_star = ModelVector::new(vec![1.0, 0.0, -1.0, 2.0]);
        let theta = ModelVector::new(vec![0.0, 1.0, 1.0, 0.0]);
        let samples = crate::problem::generate_linear_regression(&theta_star, 100_000, 8).unwrap();
        let shards = shard_samples(&samples, 10).unwrap();
        let z = batch_deviation(&model, &shards, &theta, &theta_star).unwrap();
        let budget = 0.05 * (1.0 + (&theta - &theta_star).norm());
        assert!(z.norm() <= budget, "deviation {} exceeds {budget}", z.norm());
    }

    fn tiny_constants(problem: &ProblemSpec, k: usize, alpha: f64) -> TheoryConstants {
        let mut c = compute_constants_for(problem, 40 * k, k, 0, 0.5, alpha, alpha / 2.0).unwrap();
        c.samples_per_batch = 40;
        c
    }

    #[test]
    fn good_event_is_certain_with_vacuous_bounds() {
        let problem = linreg_spec(2);
        let theta_star = ModelVector::new(vec![1.0, -1.0]);
        let mut constants = tiny_constants(&problem, 4, 0.3);
        constants.xi1 = 1e9;
        constants.xi2 = 1e9;
        let grid = vec![theta_star.clone(), ModelVector::zeros(2)];
        let est = estimate_good_event(160, 8, &theta_star, &constants, &grid, 5, 41).unwrap();
        assert_eq!(est.frequency, 1.0);
        assert_eq!(est.mean_satisfied_batches, 4.0);
    }

    #[test]
    fn good_event_is_impossible_with_zero_bounds() {
        let problem = linreg_spec(2);
        let theta_star = ModelVector::new(vec![1.0, -1.0]);
        let mut constants = tiny_constants(&problem, 4, 0.3);
        constants.xi1 = 0.0;
        constants.xi2 = 0.0;
        let grid = vec![ModelVector::zeros(2)];
        let est = estimate_good_event(160, 8, &theta_star, &constants, &grid, 5, 42).unwrap();
        assert_eq!(est.frequency, 0.0);
    }

    #[test]
    fn single_batch_single_point_reduces_to_a_norm_comparison() {
        let model = LinearRegression::new(2);
        let problem = linreg_spec(2);
        let theta_star = ModelVector::zeros(2);
        let theta = ModelVector::new(vec![1.0, 0.0]);
        let samples = vec![
            Sample { covariate: ModelVector::new(vec![1.0, 0.0]), response: 0.0 },
            Sample { covariate: ModelVector::new(vec![0.0, 1.0]), response: 0.0 },
        ];
        let shards = shard_samples(&samples, 1).unwrap();
        let mut constants = tiny_constants(&problem, 1, 0.3);
        // Z(theta) by hand: gradients are (1,0)*1 and (0,1)*0 -> mean (0.5, 0);
        // population gradient is (1, 0); Z = (-0.5, 0), norm 0.5.
        let z = batch_deviation(&model, &shards, &theta, &theta_star).unwrap();
        assert!((z.norm() - 0.5).abs() < 1e-15);

        // Condition: c_alpha * 0.5 <= xi2 * 1 + xi1.
        let grid = std::slice::from_ref(&theta);
        constants.xi1 = 0.0;
        constants.xi2 = constants.c_alpha * 0.5 + 1e-9;
        let check = check_good_event(&model, &shards, &theta_star, &constants, grid).unwrap();
        assert_eq!(check.satisfied_batches, 1);
        constants.xi2 = constants.c_alpha * 0.5 - 1e-9;
        let check = check_good_event(&model, &shards, &theta_star, &constants, grid).unwrap();
        assert_eq!(check.satisfied_batches, 0);
    }

    #[test]
    fn grid_stays_inside_the_domain_ball() {
        let problem = linreg_spec(3);
        let theta_star = ModelVector::new(vec![1.0, 2.0, 3.0]);
        let theta0 = ModelVector::zeros(3);
        let grid = default_theta_grid(&problem, &theta_star, &theta0, 32, 13);
        assert_eq!(grid.len(), 34);
        let radius = problem.domain_radius * 3.0_f64.sqrt();
        for point in grid.iter().take(32) {
            assert!((point - &theta_star).norm() <= radius + 1e-9);
        }
    }

    #[test]
    fn mgf_checks_pass_at_reduced_sample_counts() {
        let g = check_gradient_mgf_at_optimum(5, 0.5, 20_000, 51).unwrap();
        assert!(g.passes, "gradient MGF {} vs bound {}", g.empirical, g.bound);
        let h = check_increment_mgf(5, 0.5, 20_000, 52).unwrap();
        assert!(h.passes, "increment MGF {} vs bound {}", h.empirical, h.bound);
    }

    #[test]
    fn spectral_check_passes_at_reduced_scale() {
        let s = check_design_spectral_bound(500, 10, 0.05, 40, 53).unwrap();
        assert!(s.passes, "frequency {} max {}", s.frequency, s.max_observed);
        assert!(s.max_observed > 1.0);
    }

    #[test]
    fn power_iteration_finds_a_planted_eigenvalue() {
        // diag(4, 1, 0.25) has top eigenvalue 4.
        let m = vec![
            vec![4.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.25],
        ];
        let mut rng = derive_rng(1, "eig-test", &[]);
        let top = largest_eigenvalue(&m, &mut rng);
        assert!((top - 4.0).abs() < 1e-9);
    }
}
