//! Plain averaging vs median-of-means on the same attacked runs: a single
//! omniscient worker pins averaging at the starting point every round, while
//! the robust aggregate converges to the statistical floor.
//!
//! Run with `cargo run --example fragility_vs_resilience`.

use byzgd::harness::{compare_baselines, ExperimentConfig};

fn main() -> byzgd::Result<()> {
    let out = std::env::temp_dir().join("byzgd-example-fragility");
    let config_text = format!(
        r#"
        [run]
        n_total = 6000
        workers = 24
        k = 8
        q = 1
        eta = 0.5
        rounds = 40
        seed = 17

        [problem]
        d = 10

        [problem.theta_star]
        norm = 5.0

        [attack]
        strategy = "omniscient_mean_shift"
        target_average = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]

        [experiment]
        repetitions = 5
        output_dir = "{}"
        "#,
        out.display()
    );
    let config = ExperimentConfig::from_toml_str(&config_text)?;
    let comparison = compare_baselines(&config)?;

    let standard = &comparison.standard.points[0];
    let robust = &comparison.robust.points[0];
    println!("one omniscient faulty worker forces the report average to zero each round\n");
    println!("initial error (|theta0 - theta*|): 5.0");
    println!(
        "plain averaging:  final error mean {:.6} over {} runs (no progress at all)",
        standard.final_error_mean, standard.repetitions
    );
    println!(
        "median-of-means:  final error mean {:.6}, floor reached around round {:.0}",
        robust.final_error_mean, robust.rounds_to_floor_mean
    );
    println!(
        "\nerror ratio robust/standard: {:.5}",
        robust.final_error_mean / standard.final_error_mean
    );
    println!("traces and summaries under {}", out.display());
    Ok(())
}
