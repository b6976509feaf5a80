//! The theory-side calculators: convergence constants for a run shape, the
//! good-event probability bound, and the empirical tail checks backing the
//! linear-regression constants.
//!
//! Run with `cargo run --example theory_constants`.

use byzgd::diagnostics::{
    check_design_spectral_bound, check_gradient_mgf_at_optimum, check_increment_mgf,
    compute_constants_for, default_theta_grid, estimate_good_event, TheoryConstants,
};
use byzgd::problem::{LinearRegression, LossModel};
use byzgd::vector::ModelVector;

fn main() -> byzgd::Result<()> {
    let dim = 10;
    let n_total = 12000;
    let workers = 24;
    let k = 8;
    let q = 2;
    let alpha = 0.35;
    let delta = alpha - q as f64 / k as f64 - 0.01;

    let problem = LinearRegression::new(dim).spec().clone();
    let constants = compute_constants_for(&problem, n_total, k, q, 0.5, alpha, delta)?;
    println!("constants for N = {n_total}, k = {k}, q = {q}, d = {dim}:");
    println!("{}", TheoryConstants::csv_header());
    println!("{}\n", constants.csv_row());
    println!(
        "the contraction margin is {} here, so the convergence bound is {};",
        constants.rho,
        if constants.contraction_positive { "active" } else { "vacuous at this scale" }
    );
    println!("the aggregate-precision pair (xi1, xi2) still powers the good-event check.\n");

    // How often does the sampled data actually satisfy the per-batch uniform
    // deviation bound at enough batches?
    let theta_star = ModelVector::new(vec![0.5; dim]);
    let theta0 = ModelVector::zeros(dim);
    let grid = default_theta_grid(&problem, &theta_star, &theta0, 32, 5);
    let estimate =
        estimate_good_event(n_total, workers, &theta_star, &constants, &grid, 40, 6)?;
    println!(
        "good event over {} fresh datasets: frequency {:.3}, mean satisfied batches {:.2}/{k}",
        estimate.resamples, estimate.frequency, estimate.mean_satisfied_batches
    );
    println!(
        "closed-form lower bound: {:.4}\n",
        constants.good_event_prob_lower
    );

    // Empirical checks of the tail constants the formulas assume.
    let g = check_gradient_mgf_at_optimum(dim, 0.5, 200_000, 1)?;
    println!(
        "gradient-at-optimum MGF at lambda = {}: {:.4} vs bound {:.4} -> {}",
        g.lambda, g.empirical, g.bound, if g.passes { "ok" } else { "violated" }
    );
    let h = check_increment_mgf(dim, 0.5, 200_000, 2)?;
    println!(
        "normalized gradient-increment MGF:       {:.4} vs bound {:.4} -> {}",
        h.empirical, h.bound, if h.passes { "ok" } else { "violated" }
    );
    let s = check_design_spectral_bound(1000, dim, 0.05, 60, 3)?;
    println!(
        "design second-moment spectral norm under {:.4} in {:.0}% of {} draws -> {}",
        s.bound, 100.0 * s.frequency, s.trials, if s.passes { "ok" } else { "violated" }
    );
    Ok(())
}
