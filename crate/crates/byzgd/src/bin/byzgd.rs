use std::io::{BufRead, BufReader, Read};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use byzgd::aggregation::{geometric_median, AggregatorConfig};
use byzgd::diagnostics::{compute_constants_for, TheoryConstants};
use byzgd::error::{Error, Result};
use byzgd::harness::{run_single, run_sweep, ExperimentConfig};
use byzgd::problem::ProblemSpec;
use byzgd::vector::ModelVector;

#[derive(Parser)]
#[command(name = "byzgd", version, about = "Byzantine-tolerant gradient descent simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base configuration and write traces plus a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides experiment.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full (k, q, attack) sweep from the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geometric median of CSV points (one point per row; stdin by default).
    /// Prints the median coordinates and the certified ratio as one CSV row.
    Median {
        /// CSV file to read; stdin when omitted.
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        gamma: f64,
        #[arg(long = "max-iters", default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Trim points with norm above this threshold first.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Evaluate the run-level theory constants and print them as CSV.
    Constants {
        #[arg(long = "n-total")]
        n_total: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        q: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
        /// Strong-convexity constant.
        #[arg(long = "L", default_value_t = 1.0)]
        strong_convexity: f64,
        /// Gradient-Lipschitz constant.
        #[arg(long = "M", default_value_t = 1.0)]
        gradient_lipschitz: f64,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        sigma1: f64,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        alpha1: f64,
        #[arg(long, default_value_t = 2.8284271247461903)]
        sigma2: f64,
        #[arg(long, default_value_t = 8.0)]
        alpha2: f64,
        /// Domain radius parameter.
        #[arg(long, default_value_t = byzgd::problem::DEFAULT_DOMAIN_RADIUS)]
        r: f64,
        /// Step size; defaults to L / (2 M^2).
        #[arg(long)]
        eta: Option<f64>,
        /// Also print the CSV header line.
        #[arg(long)]
        header: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let summary = run_single(&config)?;
            print_summary_lines(&summary);
            Ok(())
        }
        Command::Sweep { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let summary = run_sweep(&config)?;
            print_summary_lines(&summary);
            Ok(())
        }
        Command::Median { file, gamma, max_iters, tol, tau } => {
            let points = match file {
                Some(path) => read_points(BufReader::new(std::fs::File::open(path)?))?,
                None => read_points(BufReader::new(std::io::stdin().lock()))?,
            };
            let mut cfg = AggregatorConfig::new(1);
            cfg.gamma = gamma;
            cfg.max_iterations = max_iters;
            cfg.tolerance = tol;
            let inputs = match tau {
                Some(tau) => byzgd::aggregation::trim_by_norm(&points, tau)?,
                None => points,
            };
            let result = geometric_median(&inputs, &cfg)?;
            let mut row: Vec<String> = result.point.iter().map(|c| format!("{c}")).collect();
            row.push(format!("{}", result.certified_ratio));
            println!("{}", row.join(","));
            Ok(())
        }
        Command::Constants {
            n_total,
            k,
            q,
            d,
            alpha,
            delta,
            strong_convexity,
            gradient_lipschitz,
            sigma1,
            alpha1,
            sigma2,
            alpha2,
            r,
            eta,
            header,
        } => {
            let problem = ProblemSpec {
                dim: d,
                strong_convexity,
                gradient_lipschitz,
                grad_subexp_scale: sigma1,
                grad_subexp_tail: alpha1,
                increment_subexp_scale: sigma2,
                increment_subexp_tail: alpha2,
                domain_radius: r,
            };
            let eta = eta
                .unwrap_or(strong_convexity / (2.0 * gradient_lipschitz * gradient_lipschitz));
            let constants = compute_constants_for(&problem, n_total, k, q, eta, alpha, delta)?;
            if header {
                println!("{}", TheoryConstants::csv_header());
            }
            println!("{}", constants.csv_row());
            Ok(())
        }
    }
}

fn load_config(
    path: &std::path::Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    if let Some(out) = out {
        config.experiment.output_dir = Some(out);
    }
    config.resolved()
}

fn print_summary_lines(summary: &byzgd::harness::Summary) {
    for p in &summary.points {
        let floor = p
            .theory_floor
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        println!(
            "k={} q={} attack={} reps={} final_error mean={:.6} min={:.6} max={:.6} \
             rounds_to_floor={:.1} theory_floor={floor}",
            p.batch_count,
            p.byzantine_budget,
            p.attack,
            p.repetitions,
            p.final_error_mean,
            p.final_error_min,
            p.final_error_max,
            p.rounds_to_floor_mean,
        );
    }
}

fn read_points<R: Read + BufRead>(reader: R) -> Result<Vec<ModelVector>> {
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        points.push(ModelVector::validated(coords)?);
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points supplied".to_string()));
    }
    Ok(points)
}
