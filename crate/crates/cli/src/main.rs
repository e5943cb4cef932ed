//! `dtwgi`: distances, generators and experiment runners on the command line.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtwgi::experiments::{
    self, bench_rotation, bench_timing, forecast_best, forecast_study, load_dir, loss_trace_table,
    pair_distance, retrieval, rotation_medians, run_barycenter, timing_slope, BarycenterMethod,
    CoverCorpusSpec, ForecastStudySpec, Method, PairConfig, RetrievalMethod, RotationBenchSpec,
    TimingSpec,
};
use dtwgi::forecast::Backend;
use dtwgi::io::{gi_result_json, read_series, write_series};
use dtwgi::synth::{generate, GeneratorSpec, Kind};
use dtwgi::{Error, Family, SolverConfig};

#[derive(Parser)]
#[command(
    name = "dtwgi",
    version,
    about = "Time series alignment under global feature-space transforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// softDTW smoothing
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Solver starts (the first from the identity map, others random)
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            patience: self.patience,
            step_size: self.step_size,
            gamma: self.gamma,
            restarts: self.restarts,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Distance between two series files
    Dist {
        file_x: PathBuf,
        file_y: PathBuf,
        /// dtw | softdtw | dtw-gi | softdtw-gi
        #[arg(long, default_value = "dtw")]
        method: String,
        /// stiefel | affine | transposition
        #[arg(long, default_value = "affine")]
        family: String,
        /// Start softdtw-gi from the dtw-gi solution
        #[arg(long)]
        warm_start: bool,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write cost, transform and path as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic series (or, with --kind covers, a cover-song corpus directory)
    Gen {
        /// spiral2d | spiral3d | folium | random_walk | chroma_like | motion_like | covers
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Feature count for random_walk and chroma_like
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Planar rotation angle (radians)
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        /// Seed of a random monotone time warp
        #[arg(long)]
        warp: Option<u64>,
        #[arg(long, default_value_t = 0.3)]
        warp_strength: f64,
        /// Song pairs for --kind covers
        #[arg(long, default_value_t = 40)]
        pairs: usize,
        #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
        seed: u64,
        /// Output file (directory for covers); stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runtime against length and dimensionality
    BenchTiming {
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128, 256, 512, 1024])]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32, 64, 128])]
        dims: Vec<usize>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "dtw,softdtw,dtw-gi,softdtw-gi"
        )]
        methods: Vec<String>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Solver iterations per GI run
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Costs of rotated noisy spiral pairs relative to the unrotated ones
    BenchRotation {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 16)]
        angles: usize,
        #[arg(long, value_delimiter = ',', default_value = "dtw,dtw-gi")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 12)]
        restarts: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Barycenter of a set of series files
    Barycenter {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// dba-gi | soft-gi | dba | softdtw
        #[arg(long, default_value = "dba-gi")]
        method: String,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value = "affine")]
        family: String,
        #[command(flatten)]
        solver: SolverArgs,
        /// Barycenter series file
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (defaults to <out>.loss.csv)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Attention-kernel forecasting on a synthetic rotated motion corpus
    ForecastStudy {
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-2, 1e-1, 1.0])]
        lambda_grid: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "L2,L2+Procrustes,softDTW,softDTW+Procrustes,softDTW-GI"
        )]
        backends: Vec<String>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank a corpus directory for every query file; matches share a file stem
    Retrieval {
        #[arg(long)]
        query_dir: PathBuf,
        #[arg(long)]
        corpus_dir: PathBuf,
        /// dtw | dtw+oti | dtw-gi-stiefel | dtw-gi-oti
        #[arg(long, default_value = "dtw-gi-oti")]
        method: String,
        #[arg(long, default_value_t = 12)]
        restarts: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
        k: Vec<usize>,
        #[arg(long, env = dtwgi::rng::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>, Error> {
    items.iter().map(|s| s.trim().parse()).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid("output", format!("cannot serialize result: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Dist {
            file_x,
            file_y,
            method,
            family,
            warm_start,
            solver,
            out,
        } => {
            let method: Method = method.parse()?;
            let family: Family = family.parse()?;
            let cfg = PairConfig {
                solver: solver.config(),
                family,
                warm_start,
            };
            cfg.solver.validate()?;
            let x = read_series(&file_x)?;
            let y = read_series(&file_y)?;
            let result = pair_distance(&x, &y, method, &cfg)?;
            println!("{}", result.cost);
            if let Some(out) = out {
                write_json(&out, &gi_result_json(&result))?;
            }
        }
        Command::Gen {
            kind,
            length,
            dims,
            noise,
            theta,
            warp,
            warp_strength,
            pairs,
            seed,
            out,
        } => {
            if kind == "covers" {
                let spec = CoverCorpusSpec {
                    pairs,
                    length,
                    dims: dims.unwrap_or(12),
                    noise_std: if noise > 0.0 {
                        noise
                    } else {
                        CoverCorpusSpec::default().noise_std
                    },
                    seed,
                    ..CoverCorpusSpec::default()
                };
                let dir =
                    out.ok_or_else(|| Error::invalid("output", "--kind covers needs --out DIR"))?;
                experiments::write_cover_corpus(&dir, &spec)?;
                return Ok(());
            }
            let kind: Kind = kind.parse()?;
            let mut spec = GeneratorSpec::new(kind, length)
                .with_noise(noise)
                .with_seed(seed)
                .with_warp_strength(warp_strength);
            if let Some(p) = dims {
                spec = spec.with_dims(p);
            }
            if let Some(t) = theta {
                spec = spec.with_angle(t);
            }
            if let Some(w) = warp {
                spec = spec.with_warp(w);
            }
            let series = generate(&spec)?;
            match out {
                Some(path) => write_series(path, &series)?,
                None => print!("{}", dtwgi::io::format_series(&series)),
            }
        }
        Command::BenchTiming {
            lengths,
            dims,
            methods,
            trials,
            iterations,
            seed,
            out,
        } => {
            let mut spec = TimingSpec {
                methods: parse_list(&methods)?,
                lengths,
                dims,
                trials,
                seed,
                ..TimingSpec::default()
            };
            spec.pair.solver.max_iter = iterations;
            spec.pair.solver.patience = iterations;
            let rows = bench_timing(&spec)?;
            experiments::timing_table(&rows).write(&out)?;
            for &m in &spec.methods {
                let by_t = timing_slope(&rows, m, true, spec.length_sweep_dims);
                let by_p = timing_slope(&rows, m, false, spec.dim_sweep_length);
                eprintln!(
                    "{}: log-log slope vs T {}, vs p {}",
                    m.name(),
                    by_t.map_or("n/a".into(), |s| format!("{s:.2}")),
                    by_p.map_or("n/a".into(), |s| format!("{s:.2}")),
                );
            }
        }
        Command::BenchRotation {
            trials,
            angles,
            methods,
            restarts,
            gamma,
            seed,
            out,
        } => {
            let mut spec = RotationBenchSpec {
                trials,
                angles,
                methods: parse_list(&methods)?,
                ..RotationBenchSpec::default()
            };
            spec.data.seed = seed;
            spec.pair.solver.restarts = restarts;
            spec.pair.solver.gamma = gamma;
            spec.pair.solver.seed = seed;
            spec.pair.solver.validate()?;
            let rows = bench_rotation(&spec)?;
            experiments::rotation_table(&rows).write(&out)?;
            for &m in &spec.methods {
                let worst = rotation_medians(&rows, m)
                    .into_iter()
                    .map(|(_, r)| r)
                    .fold(f64::NEG_INFINITY, f64::max);
                eprintln!("{}: largest median ratio {worst:.3}", m.name());
            }
        }
        Command::Barycenter {
            inputs,
            method,
            length,
            dim,
            family,
            solver,
            out,
            trace,
        } => {
            let method: BarycenterMethod = method.parse()?;
            let family: Family = family.parse()?;
            let cfg = solver.config();
            cfg.validate()?;
            let series = inputs
                .iter()
                .map(read_series)
                .collect::<Result<Vec<_>, _>>()?;
            let bary = run_barycenter(series, method, length, dim, family, &cfg)?;
            write_series(&out, &bary.series)?;
            let trace = trace.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".loss.csv");
                PathBuf::from(name)
            });
            loss_trace_table(&bary).write(trace)?;
            println!("{}", bary.loss);
        }
        Command::ForecastStudy {
            lambda_grid,
            backends,
            trials,
            gamma,
            seed,
            out,
        } => {
            let mut spec = ForecastStudySpec {
                trials,
                lambdas: lambda_grid,
                backends: parse_list::<Backend>(&backends)?,
                seed,
                ..ForecastStudySpec::default()
            };
            spec.backend.solver.gamma = gamma;
            spec.backend.solver.seed = seed;
            let rows = forecast_study(&spec)?;
            experiments::forecast_table(&rows).write(&out)?;
            for (b, lambda, m) in forecast_best(&rows) {
                eprintln!("{}: best median error {m:.4} at lambda {lambda}", b.name());
            }
        }
        Command::Retrieval {
            query_dir,
            corpus_dir,
            method,
            restarts,
            k,
            seed,
            out,
        } => {
            let method: RetrievalMethod = method.parse()?;
            let cfg = SolverConfig {
                restarts,
                seed,
                ..SolverConfig::default()
            };
            cfg.validate()?;
            let (queries, qdiag) = load_dir(&query_dir)?;
            let (corpus, cdiag) = load_dir(&corpus_dir)?;
            for d in qdiag.iter().chain(&cdiag) {
                eprintln!("skipped {d}");
            }
            let report = retrieval(&queries, &corpus, method, &cfg, &k)?;
            for d in &report.diagnostics {
                eprintln!("{d}");
            }
            report.table().write(&out)?;
            println!("MR1 {}", report.mr1());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
