//! Synthetic linear-regression data: generation, sharding across workers,
//! and the CSV snapshot format.
//!
//! Run with `cargo run --example generate_dataset`.

use byzgd::problem::{
    generate_linear_regression, read_samples_csv, shard_samples, write_samples_csv,
};
use byzgd::vector::ModelVector;

fn main() -> byzgd::Result<()> {
    let theta_star = ModelVector::new(vec![2.0, -1.0, 0.5]);
    let n = 6000;
    let workers = 12;
    let seed = 42;

    let samples = generate_linear_regression(&theta_star, n, seed)?;
    println!("generated {n} samples with ground truth {:?}", theta_star.as_slice());

    let shards = shard_samples(&samples, workers)?;
    println!(
        "sharded into {} shards of {} samples each (contiguous, disjoint)",
        shards.len(),
        shards[0].samples.len()
    );

    // Ordinary least squares on the pooled data recovers the ground truth up
    // to the statistical error of n samples.
    let d = theta_star.dim();
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for s in &samples {
        let w = s.covariate.as_slice();
        for i in 0..d {
            rhs[i] += w[i] * s.response;
            for (g, wj) in gram[i].iter_mut().zip(w) {
                *g += w[i] * wj;
            }
        }
    }
    // Small dense solve by Gaussian elimination.
    let mut a = gram;
    let mut b = rhs;
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in 0..d {
            if row != col {
                let f = a[row][col] / pivot_row[col];
                for (v, pv) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                    *v -= f * pv;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let ols: Vec<f64> = (0..d).map(|i| b[i] / a[i][i]).collect();
    let gap = ols
        .iter()
        .zip(theta_star.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("pooled least-squares estimate {ols:?}");
    println!("distance to ground truth {gap:.4} (scale 1/sqrt(n) = {:.4})", 1.0 / (n as f64).sqrt());

    // Round-trip the snapshot format: headerless CSV, full precision.
    let mut buf = Vec::new();
    write_samples_csv(&mut buf, &samples[..3])?;
    print!("first rows of the CSV snapshot:\n{}", String::from_utf8_lossy(&buf));
    let back = read_samples_csv(buf.as_slice())?;
    assert_eq!(back, samples[..3]);
    println!("round-trip through CSV is bit-exact");
    Ok(())
}
