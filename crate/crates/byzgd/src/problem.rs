//! The statistical learning problem: per-sample losses and gradients, data
//! generation, and sharding across workers.
//!
//! The only shipped loss model is synthetic linear regression with standard
//! normal covariates and unit noise: `y = <w, theta*> + noise`. The
//! [`LossModel`] trait keeps the rest of the crate agnostic to that choice.

use std::io::{BufRead, Write};

use rand::RngExt;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::vector::ModelVector;

/// One observation: covariate vector and scalar response.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub covariate: ModelVector,
    pub response: f64,
}

/// The contiguous slice of the dataset held by one worker.
#[derive(Clone, Debug)]
pub struct DataShard {
    pub worker_id: usize,
    pub samples: Vec<Sample>,
}

/// Curvature and tail constants of a loss model, used by the theory-side
/// calculators in [`crate::diagnostics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dim: usize,
    /// Strong-convexity constant of the population risk.
    pub strong_convexity: f64,
    /// Lipschitz constant of the population gradient.
    pub gradient_lipschitz: f64,
    /// Sub-exponential scale of the sample gradient at the optimum.
    pub grad_subexp_scale: f64,
    /// Sub-exponential tail parameter of the sample gradient at the optimum.
    pub grad_subexp_tail: f64,
    /// Sub-exponential scale of the normalized gradient increment.
    pub increment_subexp_scale: f64,
    /// Sub-exponential tail parameter of the normalized gradient increment.
    pub increment_subexp_tail: f64,
    /// Domain radius parameter: the search region is contained in the ball of
    /// radius `domain_radius * sqrt(dim)` around the optimum.
    pub domain_radius: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("problem dimension must be at least 1"));
        }
        let positives = [
            ("strong_convexity", self.strong_convexity),
            ("gradient_lipschitz", self.gradient_lipschitz),
            ("grad_subexp_scale", self.grad_subexp_scale),
            ("grad_subexp_tail", self.grad_subexp_tail),
            ("increment_subexp_scale", self.increment_subexp_scale),
            ("increment_subexp_tail", self.increment_subexp_tail),
            ("domain_radius", self.domain_radius),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.strong_convexity > self.gradient_lipschitz {
            return Err(Error::invalid(
                "strong_convexity must not exceed gradient_lipschitz",
            ));
        }
        Ok(())
    }
}

/// A differentiable per-sample loss.
///
/// `population_gradient` returns `None` when the model has no closed form for
/// it; the simulator then skips the diagnostics that need one.
pub trait LossModel: Send + Sync {
    fn spec(&self) -> &ProblemSpec;

    fn dim(&self) -> usize {
        self.spec().dim
    }

    fn loss(&self, sample: &Sample, theta: &ModelVector) -> Result<f64>;

    fn sample_gradient(&self, sample: &Sample, theta: &ModelVector) -> Result<ModelVector>;

    fn population_gradient(
        &self,
        _theta: &ModelVector,
        _theta_star: &ModelVector,
    ) -> Option<ModelVector> {
        None
    }
}

/// Gradient of the population risk, or `unsupported-operation` if the model
/// has no closed form for it.
pub fn population_gradient(
    model: &dyn LossModel,
    theta: &ModelVector,
    theta_star: &ModelVector,
) -> Result<ModelVector> {
    model
        .population_gradient(theta, theta_star)
        .ok_or_else(|| Error::unsupported("loss model has no closed-form population gradient"))
}

/// Squared loss on a linear model: `f(x, theta) = (<w, theta> - y)^2 / 2`.
#[derive(Clone, Debug)]
pub struct LinearRegression {
    spec: ProblemSpec,
}

pub const DEFAULT_DOMAIN_RADIUS: f64 = 2.0;

impl LinearRegression {
    pub fn new(dim: usize) -> Self {
        Self::with_radius(dim, DEFAULT_DOMAIN_RADIUS)
    }

    pub fn with_radius(dim: usize, domain_radius: f64) -> Self {
        Self {
            spec: ProblemSpec {
                dim,
                strong_convexity: 1.0,
                gradient_lipschitz: 1.0,
                grad_subexp_scale: std::f64::consts::SQRT_2,
                grad_subexp_tail: std::f64::consts::SQRT_2,
                increment_subexp_scale: 8.0_f64.sqrt(),
                increment_subexp_tail: 8.0,
                domain_radius,
            },
        }
    }
}

fn check_dims(sample: &Sample, theta: &ModelVector) -> Result<()> {
    if sample.covariate.dim() != theta.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: covariate has {}, model has {}",
            sample.covariate.dim(),
            theta.dim()
        )));
    }
    Ok(())
}

impl LossModel for LinearRegression {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn loss(&self, sample: &Sample, theta: &ModelVector) -> Result<f64> {
        check_dims(sample, theta)?;
        let residual = sample.covariate.dot(theta) - sample.response;
        Ok(0.5 * residual * residual)
    }

    fn sample_gradient(&self, sample: &Sample, theta: &ModelVector) -> Result<ModelVector> {
        check_dims(sample, theta)?;
        let residual = sample.covariate.dot(theta) - sample.response;
        Ok(sample.covariate.scale(residual))
    }

    fn population_gradient(
        &self,
        theta: &ModelVector,
        theta_star: &ModelVector,
    ) -> Option<ModelVector> {
        Some(theta - theta_star)
    }
}

/// Endless stream of linear-regression samples.
///
/// Covariates and noise come from independent streams derived from the seed,
/// so the covariate sequence does not change when the noise scale does.
pub struct SampleStream {
    theta_star: ModelVector,
    noise_std: f64,
    covariate_rng: ChaCha12Rng,
    noise_rng: ChaCha12Rng,
}

impl SampleStream {
    pub fn new(theta_star: &ModelVector, noise_std: f64, rng_seed: u64) -> Result<Self> {
        if !theta_star.is_finite() || theta_star.dim() == 0 {
            return Err(Error::invalid("theta_star must be non-empty and finite"));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        Ok(Self {
            theta_star: theta_star.clone(),
            noise_std,
            covariate_rng: derive_rng(rng_seed, "covariates", &[]),
            noise_rng: derive_rng(rng_seed, "noise", &[]),
        })
    }
}

impl Iterator for SampleStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        let coords: Vec<f64> = (0..self.theta_star.dim())
            .map(|_| self.covariate_rng.sample(StandardNormal))
            .collect();
        let covariate = ModelVector::new(coords);
        let noise: f64 = self.noise_rng.sample(StandardNormal);
        let response = covariate.dot(&self.theta_star) + self.noise_std * noise;
        Some(Sample { covariate, response })
    }
}

/// `n` linear-regression samples with unit noise, deterministic in the seed.
pub fn generate_linear_regression(
    theta_star: &ModelVector,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<Sample>> {
    generate_linear_regression_with_noise(theta_star, 1.0, n, rng_seed)
}

/// Same as [`generate_linear_regression`] with an explicit noise scale.
/// `noise_std = 0` produces exact linear responses.
pub fn generate_linear_regression_with_noise(
    theta_star: &ModelVector,
    noise_std: f64,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Ok(SampleStream::new(theta_star, noise_std, rng_seed)?
        .take(n)
        .collect())
}

/// Splits a dataset into `workers` contiguous shards of identical size.
pub fn shard_samples(samples: &[Sample], workers: usize) -> Result<Vec<DataShard>> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("cannot shard an empty dataset"));
    }
    if !samples.len().is_multiple_of(workers) {
        return Err(Error::invalid(format!(
            "dataset size {} is not divisible by worker count {workers}",
            samples.len()
        )));
    }
    let shard_size = samples.len() / workers;
    Ok(samples
        .chunks(shard_size)
        .enumerate()
        .map(|(worker_id, chunk)| DataShard {
            worker_id,
            samples: chunk.to_vec(),
        })
        .collect())
}

/// Mean of the per-sample gradients over a shard.
pub fn local_empirical_gradient(
    model: &dyn LossModel,
    shard: &DataShard,
    theta: &ModelVector,
) -> Result<ModelVector> {
    if shard.samples.is_empty() {
        return Err(Error::invalid("local gradient of an empty shard"));
    }
    let dim = theta.dim();
    let mut acc = vec![0.0; dim];
    for sample in &shard.samples {
        let g = model.sample_gradient(sample, theta)?;
        for (a, c) in acc.iter_mut().zip(g.iter()) {
            *a += c;
        }
    }
    let n = shard.samples.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(ModelVector::new(acc))
}

/// Writes samples as headerless CSV: d covariate columns, then the response.
/// Floats are printed with round-trip precision.
pub fn write_samples_csv<W: Write>(mut writer: W, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let mut row = String::new();
        for c in s.covariate.iter() {
            row.push_str(&format!("{c}"));
            row.push(',');
        }
        row.push_str(&format!("{}", s.response));
        writeln!(writer, "{row}")?;
    }
    Ok(())
}

/// Reads samples from the CSV layout produced by [`write_samples_csv`].
pub fn read_samples_csv<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut dim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if fields.len() < 2 {
            return Err(Error::Parse(format!(
                "line {}: expected at least 2 columns",
                lineno + 1
            )));
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse(format!(
                    "line {}: expected {expected} covariate columns, got {d}",
                    lineno + 1
                )));
            }
            _ => {}
        }
        let covariate = ModelVector::validated(fields[..d].to_vec())?;
        let response = fields[d];
        if !response.is_finite() {
            return Err(Error::Parse(format!("line {}: non-finite response", lineno + 1)));
        }
        samples.push(Sample { covariate, response });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::RngExt;

    fn finite_difference_gradient(
        model: &dyn LossModel,
        sample: &Sample,
        theta: &ModelVector,
    ) -> ModelVector {
        let h = 1e-6;
        let coords = (0..theta.dim())
            .map(|i| {
                let mut plus = theta.as_slice().to_vec();
                let mut minus = theta.as_slice().to_vec();
                plus[i] += h;
                minus[i] -= h;
                let fp = model.loss(sample, &ModelVector::new(plus)).unwrap();
                let fm = model.loss(sample, &ModelVector::new(minus)).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect();
        ModelVector::new(coords)
    }

    #[test]
    fn zero_signal_zero_noise_gives_zero_responses() {
        let theta_star = ModelVector::zeros(3);
        let samples =
            generate_linear_regression_with_noise(&theta_star, 0.0, 50, 7).unwrap();
        assert!(samples.iter().all(|s| s.response == 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let theta_star = ModelVector::new(vec![0.5, -1.0]);
        let a = generate_linear_regression(&theta_star, 100, 99).unwrap();
        let b = generate_linear_regression(&theta_star, 100, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_rejects_bad_input() {
        let theta_star = ModelVector::new(vec![1.0]);
        assert!(generate_linear_regression(&theta_star, 0, 1).is_err());
        let bad = ModelVector::new(vec![f64::NAN]);
        assert!(generate_linear_regression(&bad, 10, 1).is_err());
    }

    #[test]
    fn ols_recovers_slope_in_one_dimension() {
        // Closed-form least squares on the generated set: slope = sum(w*y)/sum(w^2).
        let theta_star = ModelVector::new(vec![2.0]);
        let samples = generate_linear_regression(&theta_star, 100_000, 31).unwrap();
        let (mut swy, mut sww) = (0.0, 0.0);
        for s in &samples {
            let w = s.covariate[0];
            swy += w * s.response;
            sww += w * w;
        }
        let slope = swy / sww;
        assert!(
            (slope - 2.0).abs() < 0.05,
            "OLS slope {slope} not within 0.05 of 2"
        );
    }

    #[test]
    fn sample_gradient_unit_cases() {
        let model = LinearRegression::new(2);
        let e1 = ModelVector::unit(2, 0);
        let sample = Sample { covariate: e1.clone(), response: 0.0 };
        let g = model.sample_gradient(&sample, &e1).unwrap();
        assert_eq!(g, e1);

        // residual zero: <w, theta> = y
        let sample = Sample {
            covariate: ModelVector::new(vec![1.0, 2.0]),
            response: 5.0,
        };
        let theta = ModelVector::new(vec![1.0, 2.0]);
        let g = model.sample_gradient(&sample, &theta).unwrap();
        assert_eq!(g, ModelVector::zeros(2));
    }

    #[test]
    fn sample_gradient_rejects_dimension_mismatch() {
        let model = LinearRegression::new(2);
        let sample = Sample {
            covariate: ModelVector::new(vec![1.0, 2.0, 3.0]),
            response: 0.0,
        };
        assert!(model.sample_gradient(&sample, &ModelVector::zeros(2)).is_err());
        assert!(model.loss(&sample, &ModelVector::zeros(2)).is_err());
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let model = LinearRegression::new(3);
        let mut rng = derive_rng(5, "fd-test", &[]);
        for _ in 0..20 {
            let covariate =
                ModelVector::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let theta =
                ModelVector::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let response: f64 = rng.random_range(-2.0..2.0);
            let sample = Sample { covariate, response };
            let g = model.sample_gradient(&sample, &theta).unwrap();
            let fd = finite_difference_gradient(&model, &sample, &theta);
            for i in 0..3 {
                let denom = g[i].abs().max(1e-3);
                assert!(
                    (g[i] - fd[i]).abs() / denom < 1e-6,
                    "coordinate {i}: analytic {} vs finite-difference {}",
                    g[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn local_gradient_of_single_sample_equals_sample_gradient() {
        let model = LinearRegression::new(2);
        let sample = Sample {
            covariate: ModelVector::new(vec![1.5, -0.5]),
            response: 0.7,
        };
        let theta = ModelVector::new(vec![0.3, 0.9]);
        let shard = DataShard { worker_id: 0, samples: vec![sample.clone()] };
        let lg = local_empirical_gradient(&model, &shard, &theta).unwrap();
        let sg = model.sample_gradient(&sample, &theta).unwrap();
        assert_eq!(lg, sg);
    }

    #[test]
    fn local_gradient_cancellation() {
        // Two samples whose gradients are g and -g average to zero.
        let model = LinearRegression::new(2);
        let w = ModelVector::new(vec![1.0, 2.0]);
        let theta = ModelVector::new(vec![0.5, 0.5]);
        let y1 = 0.25;
        let y2 = 2.0 * w.dot(&theta) - y1;
        let shard = DataShard {
            worker_id: 0,
            samples: vec![
                Sample { covariate: w.clone(), response: y1 },
                Sample { covariate: w.clone(), response: y2 },
            ],
        };
        let g = local_empirical_gradient(&model, &shard, &theta).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn local_gradient_rejects_empty_shard() {
        let model = LinearRegression::new(2);
        let shard = DataShard { worker_id: 0, samples: vec![] };
        assert!(local_empirical_gradient(&model, &shard, &ModelVector::zeros(2)).is_err());
    }

    #[test]
    fn full_dataset_gradient_matches_matrix_oracle() {
        // Dense oracle: (1/N) W^T (W theta - y) assembled with nalgebra.
        let model = LinearRegression::new(4);
        let theta_star = ModelVector::new(vec![1.0, -2.0, 0.5, 3.0]);
        let samples = generate_linear_regression(&theta_star, 240, 11).unwrap();
        let theta = ModelVector::new(vec![0.1, 0.2, -0.3, 0.4]);

        let shard = DataShard { worker_id: 0, samples: samples.clone() };
        let ours = local_empirical_gradient(&model, &shard, &theta).unwrap();

        let n = samples.len();
        let w = nalgebra::DMatrix::from_fn(n, 4, |i, j| samples[i].covariate[j]);
        let y = nalgebra::DVector::from_fn(n, |i, _| samples[i].response);
        let th = nalgebra::DVector::from_column_slice(theta.as_slice());
        let oracle = w.transpose() * (&w * th - y) / (n as f64);
        for i in 0..4 {
            assert!(
                (ours[i] - oracle[i]).abs() < 1e-10,
                "coordinate {i}: {} vs oracle {}",
                ours[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn population_gradient_cases() {
        let model = LinearRegression::new(3);
        let theta_star = ModelVector::new(vec![1.0, 1.0, 1.0]);
        let g = population_gradient(&model, &theta_star, &theta_star).unwrap();
        assert_eq!(g, ModelVector::zeros(3));

        let theta = &theta_star + &ModelVector::unit(3, 1);
        let g = population_gradient(&model, &theta, &theta_star).unwrap();
        assert_eq!(g, ModelVector::unit(3, 1));
    }

    #[test]
    fn average_of_local_gradients_approaches_population_gradient() {
        let d = 5;
        let model = LinearRegression::new(d);
        let theta_star = ModelVector::new(vec![0.4, -0.2, 1.0, 0.0, -1.5]);
        let theta = ModelVector::new(vec![1.0, 1.0, 1.0, 1.0, 1.0]);
        let samples = generate_linear_regression(&theta_star, 100_000, 17).unwrap();
        let shards = shard_samples(&samples, 100).unwrap();
        let locals: Vec<ModelVector> = shards
            .iter()
            .map(|s| local_empirical_gradient(&model, s, &theta).unwrap())
            .collect();
        let avg = crate::vector::mean_of_vectors(&locals).unwrap();
        let pop = population_gradient(&model, &theta, &theta_star).unwrap();
        assert!(
            (&avg - &pop).norm() < 0.05,
            "empirical average deviates from population gradient by {}",
            (&avg - &pop).norm()
        );
    }

    #[test]
    fn sharding_is_an_exact_partition() {
        let theta_star = ModelVector::new(vec![1.0, 2.0]);
        let samples = generate_linear_regression(&theta_star, 120, 3).unwrap();
        let shards = shard_samples(&samples, 8).unwrap();
        assert_eq!(shards.len(), 8);
        assert!(shards.iter().all(|s| s.samples.len() == 15));
        assert!(shards.iter().enumerate().all(|(i, s)| s.worker_id == i));
        let rejoined: Vec<Sample> = shards
            .iter()
            .flat_map(|s| s.samples.iter().cloned())
            .collect();
        assert_eq!(rejoined, samples);
    }

    #[test]
    fn sharding_rejects_uneven_split() {
        let theta_star = ModelVector::new(vec![1.0]);
        let samples = generate_linear_regression(&theta_star, 10, 3).unwrap();
        assert!(shard_samples(&samples, 3).is_err());
        assert!(shard_samples(&samples, 0).is_err());
    }

    #[test]
    fn gradient_at_optimum_is_nearly_unbiased() {
        // Norm of the n-sample mean gradient at theta* stays below 5*sqrt(d/n)
        // in at least 95% of seeds. The constant is a test calibration.
        let d = 5;
        let n = 2000;
        let model = LinearRegression::new(d);
        let theta_star = ModelVector::new(vec![0.7, -0.1, 0.3, 0.9, -0.4]);
        let threshold = 5.0 * (d as f64 / n as f64).sqrt();
        let mut passes = 0;
        let seeds = 60;
        for seed in 0..seeds {
            let samples = generate_linear_regression(&theta_star, n, 1000 + seed).unwrap();
            let shard = DataShard { worker_id: 0, samples };
            let g = local_empirical_gradient(&model, &shard, &theta_star).unwrap();
            if g.norm() <= threshold {
                passes += 1;
            }
        }
        assert!(
            passes as f64 >= 0.95 * seeds as f64,
            "only {passes}/{seeds} seeds under the unbiasedness threshold"
        );
    }

    #[test]
    fn linear_regression_carries_its_tail_constants() {
        let spec = LinearRegression::new(7).spec().clone();
        assert_eq!(spec.strong_convexity, 1.0);
        assert_eq!(spec.gradient_lipschitz, 1.0);
        assert_eq!(spec.grad_subexp_scale, 2.0_f64.sqrt());
        assert_eq!(spec.grad_subexp_tail, 2.0_f64.sqrt());
        assert_eq!(spec.increment_subexp_scale, 8.0_f64.sqrt());
        assert_eq!(spec.increment_subexp_tail, 8.0);
        spec.validate().unwrap();
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let theta_star = ModelVector::new(vec![0.123456789, -9.87654321e-3]);
        let samples = generate_linear_regression(&theta_star, 30, 77).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &samples).unwrap();
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back, samples);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip_preserves_arbitrary_finite_values(
            rows in proptest::collection::vec(
                (proptest::collection::vec(-1e100..1e100f64, 4), -1e100..1e100f64),
                1..16,
            ),
        ) {
            let samples: Vec<Sample> = rows
                .iter()
                .map(|(w, y)| Sample { covariate: ModelVector::new(w.clone()), response: *y })
                .collect();
            let mut buf = Vec::new();
            write_samples_csv(&mut buf, &samples).unwrap();
            let back = read_samples_csv(buf.as_slice()).unwrap();
            proptest::prop_assert_eq!(back, samples);
        }
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let data = "1.0,2.0,3.0\n1.0,2.0\n";
        assert!(read_samples_csv(data.as_bytes()).is_err());
    }
}
