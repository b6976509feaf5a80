//! One aggregation round under every shipped attack strategy: how far the
//! plain average and the median-of-means land from the honest mean.
//!
//! Run with `cargo run --example attack_catalog`.

use std::collections::BTreeSet;

use byzgd::adversary::{apply_attack, select_fault_set, AttackSpec, AttackStrategy, FaultSetPolicy};
use byzgd::aggregation::{median_of_means, AggregatorConfig};
use byzgd::rng::derive_rng;
use byzgd::vector::{mean_of_vectors, ModelVector};
use rand::RngExt;
use rand_distr::StandardNormal;

fn main() -> byzgd::Result<()> {
    // Three faulty workers can corrupt at most three of the twelve batches,
    // well under the breakdown point of the geometric median.
    let dim = 8;
    let workers = 24;
    let batches = 12;
    let faults = 3;
    let mut rng = derive_rng(3, "gradients", &[]);

    // Honest gradients: a common signal plus worker noise.
    let signal = ModelVector::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let honest: Vec<ModelVector> = (0..workers)
        .map(|_| {
            let noise =
                ModelVector::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
            signal.add_scaled(0.2, &noise)
        })
        .collect();
    let honest_mean = mean_of_vectors(&honest)?;

    let strategies = [
        AttackStrategy::None,
        AttackStrategy::SignFlip { scale: 10.0 },
        AttackStrategy::Constant { vector: ModelVector::new(vec![1e4; dim]) },
        AttackStrategy::PullToward { target: ModelVector::zeros(dim), magnitude: 100.0 },
        AttackStrategy::OmniscientMeanShift { target_average: ModelVector::zeros(dim) },
    ];

    println!(
        "{workers} workers, {faults} faulty, {batches} batches; distances are to the honest mean\n"
    );
    println!("{:<24} {:>14} {:>16}", "strategy", "plain average", "median-of-means");
    let policy = FaultSetPolicy::ResampleEachRound { count: faults, seed: 11 };
    let fault_set: BTreeSet<usize> = select_fault_set(&policy, workers, 1)?;
    for strategy in strategies {
        let spec = AttackSpec { strategy: strategy.clone(), policy: policy.clone() };
        let reports = apply_attack(&spec, &honest, &fault_set, 1)?;
        let average = mean_of_vectors(&reports.reports)?;
        let robust = median_of_means(&reports.reports, &AggregatorConfig::new(batches))?;
        println!(
            "{:<24} {:>14.4} {:>16.4}",
            strategy.label(),
            (&average - &honest_mean).norm(),
            (&robust - &honest_mean).norm()
        );
    }
    println!("\nthe average chases every forgery; the median-of-means stays with the majority");
    Ok(())
}
