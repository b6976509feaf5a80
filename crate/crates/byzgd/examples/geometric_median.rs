//! The geometric median against gross outliers: the mean of a contaminated
//! point cloud is dragged arbitrarily far; the median stays near the inliers
//! and respects a closed-form displacement bound.
//!
//! Run with `cargo run --example geometric_median`.

use byzgd::aggregation::{c_alpha, check_robustness_bound, geometric_median, AggregatorConfig};
use byzgd::rng::derive_rng;
use byzgd::vector::{mean_of_vectors, ModelVector};
use rand::RngExt;
use rand_distr::StandardNormal;

fn main() -> byzgd::Result<()> {
    let dim = 5;
    let inliers = 9;
    let outliers = 2;
    let radius = 1.0;
    let outlier_distance = 1e6;
    let mut rng = derive_rng(7, "cloud", &[]);

    let mut points = Vec::new();
    for _ in 0..inliers {
        let direction: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let u: f64 = rng.random();
        points.push(
            ModelVector::new(direction).with_norm(radius * u.powf(1.0 / dim as f64))?,
        );
    }
    for _ in 0..outliers {
        let direction: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        points.push(ModelVector::new(direction).with_norm(outlier_distance)?);
    }

    let mean = mean_of_vectors(&points)?;
    println!(
        "{inliers} points inside the unit ball, {outliers} planted at distance {outlier_distance:.0e}"
    );
    println!("norm of the mean:             {:12.2}", mean.norm());

    let mut cfg = AggregatorConfig::new(1);
    cfg.gamma = 1e-6;
    let median = geometric_median(&points, &cfg)?;
    println!("norm of the geometric median: {:12.4}", median.point.norm());
    println!(
        "solver: objective {:.4}, {} iterations, certified ratio {:.9}",
        median.objective, median.iterations_used, median.certified_ratio
    );

    // With at least (1 - alpha) n points in the radius-r ball, the median's
    // norm is at most c_alpha * r plus a gamma-proportional slack.
    let alpha = outliers as f64 / points.len() as f64;
    let bound = c_alpha(alpha) * radius + 1e-6 * outlier_distance / (1.0 - 2.0 * alpha);
    let holds = check_robustness_bound(&points, alpha, radius, &median, 1e-6)?;
    println!(
        "displacement bound c_alpha * r + slack = {bound:.4} (alpha = {alpha:.3}); holds: {holds}"
    );
    Ok(())
}
