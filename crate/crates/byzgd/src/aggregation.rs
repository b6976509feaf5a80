//! Robust gradient aggregation: geometric median, norm trimming, and the
//! median-of-means rule.
//!
//! The geometric median of points `z_1..z_n` minimizes `sum_i ||y - z_i||`.
//! It is computed here by iteratively reweighted averaging (Weiszfeld), which
//! is plenty at desk scale, together with a certificate: for any iterate `y`
//! the convex objective satisfies `f(opt) >= f(y) - ||grad f(y)|| * R(y)`
//! where `R(y) = max_i ||y - z_i||` bounds the distance from `y` to any point
//! of the convex hull (which contains the minimizer). The best such lower
//! bound across iterates certifies the returned point's approximation ratio.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{mean_of_vectors, ModelVector};

/// Relative coincidence threshold for the Weiszfeld singularity guard.
const SINGULARITY_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    /// Number of batches the worker reports are grouped into.
    pub batch_count: usize,
    /// Approximation slack: the solver targets a `(1 + gamma)`-approximate
    /// geometric median.
    pub gamma: f64,
    /// Batch means with norm above this threshold are discarded before the
    /// median. `None` disables trimming.
    pub trim_threshold: Option<f64>,
    pub max_iterations: usize,
    /// Relative-change stopping threshold for the inner solver.
    pub tolerance: f64,
}

impl AggregatorConfig {
    pub fn new(batch_count: usize) -> Self {
        Self {
            batch_count,
            gamma: 0.0,
            trim_threshold: None,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }

    /// Checks the config against a worker count: `1 <= k <= m` and `k | m`.
    pub fn validate_for(&self, workers: usize) -> Result<()> {
        if self.batch_count == 0 {
            return Err(Error::invalid("batch count must be at least 1"));
        }
        if self.batch_count > workers {
            return Err(Error::invalid(format!(
                "batch count {} exceeds worker count {workers}",
                self.batch_count
            )));
        }
        if !workers.is_multiple_of(self.batch_count) {
            return Err(Error::invalid(format!(
                "batch count {} does not divide worker count {workers}",
                self.batch_count
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be finite and non-negative"));
        }
        if let Some(tau) = self.trim_threshold {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::invalid("trim threshold must be positive"));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Output of [`geometric_median`].
#[derive(Clone, Debug)]
pub struct MedianResult {
    pub point: ModelVector,
    /// Sum of distances from `point` to the inputs.
    pub objective: f64,
    pub iterations_used: usize,
    /// Certified upper bound on `objective / optimum`. Infinite when no
    /// positive lower bound on the optimum was established.
    pub certified_ratio: f64,
}

fn validate_points(points: &[ModelVector]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("geometric median of an empty point set"))?;
    let dim = first.dim();
    for p in points {
        if p.dim() != dim {
            return Err(Error::invalid("points have mismatched dimensions"));
        }
        if !p.is_finite() {
            return Err(Error::invalid("points contain non-finite coordinates"));
        }
    }
    Ok(dim)
}

fn objective(points: &[ModelVector], y: &ModelVector) -> f64 {
    points.iter().map(|p| y.distance(p)).sum()
}

fn coordinate_wise_median(points: &[ModelVector], dim: usize) -> ModelVector {
    let mut coords = Vec::with_capacity(dim);
    let mut column = Vec::with_capacity(points.len());
    for j in 0..dim {
        column.clear();
        column.extend(points.iter().map(|p| p[j]));
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let n = column.len();
        let m = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        coords.push(m);
    }
    ModelVector::new(coords)
}

/// One iteratively-reweighted-averaging step. Returns `None` when the current
/// iterate coincides with a data point (relative to that point's norm scale),
/// which would make the weights singular.
pub(crate) fn weiszfeld_step(points: &[ModelVector], y: &ModelVector) -> Option<ModelVector> {
    let dim = y.dim();
    let mut weight_sum = 0.0;
    let mut acc = vec![0.0; dim];
    for p in points {
        let dist = y.distance(p);
        if dist <= SINGULARITY_GUARD * p.norm().max(1.0) {
            return None;
        }
        let w = 1.0 / dist;
        weight_sum += w;
        for (a, c) in acc.iter_mut().zip(p.iter()) {
            *a += w * c;
        }
    }
    for a in acc.iter_mut() {
        *a /= weight_sum;
    }
    Some(ModelVector::new(acc))
}

/// Lower bound on the optimal objective from the iterate `y`.
///
/// Splitting the points into those coincident with `y` (multiplicity `mu`,
/// each within the guard distance) and the rest, convexity of the norm gives
/// for every `z` in the hull
/// `f(z) >= f(y) - 2 * (coincident distance sum) - max(||g|| - mu, 0) * R`,
/// where `g` sums the unit directions of the non-coincident points and
/// `R = max_i ||y - z_i||` bounds the hull radius around `y`. With no
/// coincidences this is the plain gradient bound; at a data point satisfying
/// the optimality condition `||g|| <= mu` it certifies the point itself.
fn objective_lower_bound(points: &[ModelVector], y: &ModelVector) -> f64 {
    let dim = y.dim();
    let mut fy = 0.0;
    let mut max_dist = 0.0_f64;
    let mut grad = vec![0.0; dim];
    let mut multiplicity = 0usize;
    let mut coincident_sum = 0.0;
    for p in points {
        let dist = y.distance(p);
        fy += dist;
        max_dist = max_dist.max(dist);
        if dist <= SINGULARITY_GUARD * p.norm().max(1.0) {
            multiplicity += 1;
            coincident_sum += dist;
            continue;
        }
        for ((g, yc), pc) in grad.iter_mut().zip(y.iter()).zip(p.iter()) {
            *g += (yc - pc) / dist;
        }
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    fy - 2.0 * coincident_sum - (grad_norm - multiplicity as f64).max(0.0) * max_dist
}

/// Approximate geometric median of a non-empty point set.
///
/// Returns the best iterate found; `certified_ratio <= 1 + gamma` certifies
/// that its objective is within that factor of the optimum. Certification can
/// fail (ratio stays above the target or infinite) without the point being
/// bad; callers decide how much to trust an uncertified result.
pub fn geometric_median(points: &[ModelVector], cfg: &AggregatorConfig) -> Result<MedianResult> {
    let dim = validate_points(points)?;

    let mut y = coordinate_wise_median(points, dim);
    let mut best_point = y.clone();
    let mut best_obj = objective(points, &y);
    for p in points {
        let f = objective(points, p);
        if f < best_obj {
            best_obj = f;
            best_point = p.clone();
        }
    }
    if points.len() == 1 || best_obj == 0.0 {
        return Ok(MedianResult {
            point: best_point,
            objective: best_obj,
            iterations_used: 0,
            certified_ratio: 1.0,
        });
    }

    let target = 1.0 + cfg.gamma;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut prev = y.clone();
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        lower_bound = lower_bound.max(objective_lower_bound(points, &y));
        if lower_bound > 0.0 && best_obj <= target * lower_bound {
            break;
        }
        let next = match weiszfeld_step(points, &y) {
            Some(next) => next,
            None => {
                // Iterate landed on a data point: nudge it by averaging with
                // the previous iterate and retry from there.
                let nudged = (&y + &prev).scale(0.5);
                if nudged == y {
                    break;
                }
                prev = y;
                y = nudged;
                continue;
            }
        };
        let f = objective(points, &next);
        if f < best_obj {
            best_obj = f;
            best_point = next.clone();
        }
        let step = next.distance(&y);
        prev = std::mem::replace(&mut y, next);
        if step <= cfg.tolerance * y.norm().max(1e-300) {
            lower_bound = lower_bound.max(objective_lower_bound(points, &y));
            break;
        }
    }

    let certified_ratio = if lower_bound > 0.0 {
        (best_obj / lower_bound).max(1.0)
    } else {
        f64::INFINITY
    };
    Ok(MedianResult {
        point: best_point,
        objective: best_obj,
        iterations_used: iterations,
        certified_ratio,
    })
}

/// Keeps the points with norm at most `tau`, preserving order. Signals
/// [`Error::AllTrimmed`] when nothing survives.
pub fn trim_by_norm(points: &[ModelVector], tau: f64) -> Result<Vec<ModelVector>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid("trim threshold must be positive"));
    }
    let kept: Vec<ModelVector> = points
        .iter()
        .filter(|p| p.norm() <= tau)
        .cloned()
        .collect();
    if kept.is_empty() && !points.is_empty() {
        return Err(Error::AllTrimmed { threshold: tau });
    }
    Ok(kept)
}

/// Median-of-means aggregation of `m` worker-indexed gradients.
///
/// The gradients are grouped into `cfg.batch_count` contiguous batches fixed
/// by index, averaged within each batch, optionally trimmed by norm, and the
/// geometric median of the surviving batch means is returned. With one batch
/// this is exactly the arithmetic mean; with `batch_count == m` it is the
/// geometric median of the raw gradients.
pub fn median_of_means(gradients: &[ModelVector], cfg: &AggregatorConfig) -> Result<ModelVector> {
    cfg.validate_for(gradients.len())?;
    validate_points(gradients)?;
    let k = cfg.batch_count;
    let batch_size = gradients.len() / k;

    let mut batch_means = Vec::with_capacity(k);
    for batch in 0..k {
        let lo = batch * batch_size;
        batch_means.push(mean_of_vectors(&gradients[lo..lo + batch_size])?);
    }

    let points = match cfg.trim_threshold {
        None => batch_means,
        Some(tau) => match trim_by_norm(&batch_means, tau) {
            Ok(kept) => kept,
            Err(Error::AllTrimmed { threshold }) => {
                warn!("all {k} batch means exceed trim threshold {threshold}; using untrimmed set");
                batch_means
            }
            Err(e) => return Err(e),
        },
    };

    if points.len() == 1 {
        return Ok(points.into_iter().next().expect("one point"));
    }
    Ok(geometric_median(&points, cfg)?.point)
}

/// Robustness amplification constant `2(1 - alpha) / (1 - 2 alpha)` of the
/// approximate-median displacement bound.
pub fn c_alpha(alpha: f64) -> f64 {
    2.0 * (1.0 - alpha) / (1.0 - 2.0 * alpha)
}

/// Checks the displacement bound for an approximate geometric median: given
/// that at least `(1 - alpha) * n` of the points lie in the ball of radius
/// `r`, the returned point must satisfy
/// `||point|| <= c_alpha * r + gamma * max_i ||z_i|| / (1 - 2 alpha)`.
///
/// Errors when the point budget precondition does not hold, since the bound
/// is not asserted in that case.
pub fn check_robustness_bound(
    points: &[ModelVector],
    alpha: f64,
    r: f64,
    result: &MedianResult,
    gamma: f64,
) -> Result<bool> {
    validate_points(points)?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid("alpha must lie in (0, 1/2)"));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid("gamma must be finite and non-negative"));
    }
    let n = points.len();
    let inliers = points.iter().filter(|p| p.norm() <= r).count();
    if (inliers as f64) < (1.0 - alpha) * n as f64 {
        return Err(Error::invalid(format!(
            "only {inliers}/{n} points lie in the radius-{r} ball; need at least (1 - alpha) n"
        )));
    }
    let max_norm = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let bound = c_alpha(alpha) * r + gamma * max_norm / (1.0 - 2.0 * alpha);
    Ok(result.point.norm() <= bound)
}
