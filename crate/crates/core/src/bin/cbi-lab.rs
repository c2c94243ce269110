use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cbi_lab::coefficients::DerivedCoefficients;
use cbi_lab::harness::{run_convergence, ConvergenceConfig, SpectralDocument};
use cbi_lab::io::{self, IoError, ModelDocument, RunMetadata};
use cbi_lab::model::check_moment_condition;
use cbi_lab::moments::{classify, mean_at};
use cbi_lab::simulate::{
    sample_limit_exact, simulate_cbi_ensemble, LimitSample, Path, Scheme, MAX_CBI_DT,
};
use cbi_lab::{Error, ValidatedModel};

#[derive(Parser)]
#[command(name = "cbi-lab", version, about = "Critical multi-type CBI processes and their diffusion limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model document (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Check admissibility and report the verified moment order.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Largest moment order to check.
        #[arg(long, default_value_t = 2)]
        q: u32,
    },
    /// Criticality regime and Perron data of the effective branching matrix.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// All derived coefficients as JSON.
    Coeffs {
        #[command(flatten)]
        common: Common,
    },
    /// Exact mean on the grid 0, dt, ..., T (mean.csv).
    Mean {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
    },
    /// CBI paths on the grid 0, dt, ..., T (paths.csv).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = MAX_CBI_DT)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
    },
    /// Limit diffusion paths (limit.csv).
    Limit {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        /// Draw the time-T marginal exactly instead of Euler paths.
        #[arg(long)]
        exact: bool,
    },
    /// Monte Carlo convergence study (report.json, ks.csv, freq.csv, moments.csv).
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long = "n-grid", value_delimiter = ',', default_values_t = [25usize, 50, 100, 200])]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1)]
        q: u32,
    },
}

fn init_threads() {
    let n = std::env::var("CBI_LAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size thread pool: {e}");
        }
    }
}

fn load(common: &Common) -> Result<(ModelDocument, ValidatedModel), Error> {
    let doc = io::read_model_document(&common.model)?;
    let model = doc.to_model()?;
    Ok((doc, model))
}

fn fmt_vec(v: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = v
        .into_iter()
        .map(|x| format!("{}", (x * 1e12).round() / 1e12 + 0.0))
        .collect();
    format!("({})", parts.join(", "))
}

fn time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>, Error> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite()) {
        return Err(cbi_lab::simulate::SimulationError::InvalidParameter(format!(
            "need T > 0 and dt > 0, got T = {horizon}, dt = {dt}"
        ))
        .into());
    }
    let steps = (horizon / dt).round() as usize;
    Ok((0..=steps).map(|k| (k as f64 * dt).min(horizon)).collect())
}

fn write_metadata(
    dir: &FsPath,
    command: &str,
    common: &Common,
    doc: ModelDocument,
    params: serde_json::Value,
    started: chrono::DateTime<chrono::Utc>,
) -> Result<(), IoError> {
    let meta = RunMetadata::new(command, common.seed, doc, params, started);
    io::write_json(&dir.join("metadata.json"), &meta)
}

fn run(cli: Cli) -> Result<(), Error> {
    let started = chrono::Utc::now();
    match cli.command {
        Command::Validate { common, q } => {
            let (_, model) = load(&common)?;
            let order = check_moment_condition(&model, q);
            println!("valid: d = {}", model.d());
            println!(
                "moment condition q = {}: {} (nu tail {}, mu tails {})",
                q,
                if order.verified { "holds" } else { "fails" },
                order.nu_tail,
                fmt_vec(order.mu_tails.iter().copied())
            );
        }
        Command::Classify { common } => {
            let (_, model) = load(&common)?;
            let class = classify(&model)?;
            let coeffs = DerivedCoefficients::compute(&model)?;
            let sp = SpectralDocument::from(&coeffs.spectral);
            println!("regime: {}", class.regime);
            println!("s: {:e}", class.s);
            println!("u={}", fmt_vec(sp.u.iter().copied()));
            println!("v={}", fmt_vec(sp.v.iter().copied()));
            match sp.kappa {
                Some(k) => println!("kappa: {k}"),
                None => println!("kappa: inf"),
            }
            println!("cconst: {}", sp.cconst);
        }
        Command::Coeffs { common } => {
            let (_, model) = load(&common)?;
            let coeffs = DerivedCoefficients::compute(&model)?;
            let text = serde_json::to_string_pretty(&coeffs.to_document())
                .expect("coefficient documents always serialize");
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Command::Mean {
            common,
            horizon,
            dt,
        } => {
            let (_, model) = load(&common)?;
            let times = time_grid(horizon, dt)?;
            let means = times
                .iter()
                .map(|&t| mean_at(&model, t).map(|m| m.iter().copied().collect()))
                .collect::<Result<Vec<Vec<f64>>, _>>()?;
            let path = common.out.join("mean.csv");
            io::write_text(&path, &io::mean_csv(&times, &means))?;
            println!("wrote {}", path.display());
        }
        Command::Simulate {
            ref common,
            horizon,
            dt,
            paths,
        } => {
            let (doc, model) = load(common)?;
            let ensemble = simulate_cbi_ensemble(&model, horizon, dt, paths, common.seed)?;
            let path = common.out.join("paths.csv");
            io::write_text(&path, &io::paths_csv(&ensemble))?;
            let params = json!({ "T": horizon, "dt": dt, "paths": paths });
            write_metadata(&common.out, "simulate", common, doc, params, started)?;
            println!("wrote {}", path.display());
        }
        Command::Limit {
            ref common,
            horizon,
            dt,
            paths,
            exact,
        } => {
            let (doc, model) = load(common)?;
            let coeffs = DerivedCoefficients::compute(&model)?;
            let (a, b) = (coeffs.a, coeffs.b);
            let ensemble: Vec<Path> = if exact {
                let LimitSample { values, .. } = sample_limit_exact(a, b, horizon, paths, common.seed)?;
                values
                    .into_iter()
                    .enumerate()
                    .map(|(i, x)| Path {
                        times: vec![horizon],
                        states: vec![vec![x]],
                        seed: common.seed,
                        stream: i as u64,
                        scheme: Scheme::LimitExact,
                    })
                    .collect()
            } else {
                (0..paths as u64)
                    .map(|i| {
                        cbi_lab::simulate::simulate_limit_euler_stream(
                            a,
                            b,
                            horizon,
                            dt,
                            common.seed,
                            i,
                            0.0,
                        )
                    })
                    .collect::<Result<_, _>>()?
            };
            let path = common.out.join("limit.csv");
            io::write_text(&path, &io::paths_csv(&ensemble))?;
            let params = json!({ "T": horizon, "dt": dt, "paths": paths, "exact": exact, "a": a, "b": b });
            write_metadata(&common.out, "limit", common, doc, params, started)?;
            println!("wrote {}", path.display());
        }
        Command::Converge {
            ref common,
            ref n_grid,
            paths,
            t,
            q,
        } => {
            let (doc, model) = load(common)?;
            let config = ConvergenceConfig {
                n_grid: n_grid.clone(),
                t,
                paths,
                seed: common.seed,
                q,
                ..ConvergenceConfig::default()
            };
            let mut report = run_convergence(&model, &config)?;
            report.model = doc.clone();
            io::write_report_bundle(&common.out, &report)?;
            let params = serde_json::to_value(&config).expect("config serializes");
            write_metadata(&common.out, "converge", common, doc, params, started)?;
            for l in &report.levels {
                let stat = l.ks.or(l.degenerate_error).unwrap_or(f64::NAN);
                println!("n = {:>5}  statistic = {:.4}  threshold = {:.4}", l.n, stat, l.threshold);
            }
            println!(
                "{}",
                if report.summary.passed { "converged" } else { "not converged" }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) | Error::Io(IoError::Parse { .. }) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
