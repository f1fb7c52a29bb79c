use std::path::PathBuf;
use std::process::ExitCode;

use ccot::coclust::KernelConfig;
use ccot::simulate::{generate_lbm, LbmConfig};
use clap::{Args, Parser, Subcommand};

use ccot_cli::bench::{bench, write_report, BenchConfig};
use ccot_cli::run::{parse_bandwidth, parse_eps, write_dense, write_truth};
use ccot_cli::{ingest, run, CliError, Format, Method, MethodSettings, Result, RunManifest, Source};

#[derive(Parser)]
#[command(name = "ccot", version, about = "Co-clustering through entropic optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a matrix file and report its shape.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "dense-csv")]
        format: Format,
    },
    /// Co-cluster one input and write partitions, summary and traces.
    Run(RunArgs),
    /// Repeated runs on simulation presets, reported as CSV.
    Bench(BenchArgs),
    /// Generate a latent block model matrix as dense CSV.
    Simulate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Optional file for the true labels.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MethodArgs {
    /// ccot or ccot-gw.
    #[arg(long, default_value = "ccot")]
    method: Method,
    /// Sinkhorn sharpness for ccot (default: picked from a grid) or the
    /// inner sharpness for ccot-gw.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of sub-matrix samples (ccot).
    #[arg(long)]
    samples: Option<usize>,
    /// Samples allowed beyond --samples for reaching every row (ccot).
    #[arg(long)]
    max_extra_samples: Option<usize>,
    /// Barycenter weights `eps_r,eps_c` (ccot-gw).
    #[arg(long)]
    eps: Option<String>,
    /// Kernel bandwidth, `auto` or a number (ccot-gw).
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MethodArgs {
    fn settings(&self) -> Result<MethodSettings> {
        let mut s = MethodSettings::default();
        if let Some(l) = self.lambda {
            match self.method {
                Method::Ccot => s.ccot.lambda = Some(l),
                Method::CcotGw => s.gw.lambda = l,
            }
        }
        if let Some(n) = self.samples {
            s.ccot.n_samples = n;
        }
        if let Some(n) = self.max_extra_samples {
            s.ccot.max_extra_samples = n;
        }
        if let Some(e) = &self.eps {
            (s.gw.eps_r, s.gw.eps_c) = parse_eps(e)?;
        }
        if let Some(sigma) = &self.sigma {
            s.kernel = KernelConfig::Gaussian {
                sigma: parse_bandwidth(sigma)?,
            };
        }
        Ok(s)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Input matrix file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "dense-csv")]
    format: Format,
    /// Simulation preset (D1..D4) instead of an input file.
    #[arg(long)]
    preset: Option<String>,
    /// Exclude zero entries from block means (default: on for triplet input).
    #[arg(long)]
    exclude_zeros: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated preset names.
    #[arg(long, value_delimiter = ',', default_value = "D1,D2,D3,D4")]
    presets: Vec<String>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "ccot,ccot-gw")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, format } => {
            let a = ingest(&input, format)?;
            let nonzeros = a.values().iter().filter(|&&v| v != 0.0).count();
            println!("{} rows, {} columns, {nonzeros} nonzeros", a.nrows(), a.ncols());
        }
        Command::Run(args) => {
            let source = match (args.input, args.preset) {
                (Some(path), None) => Source::File { path, format: args.format },
                (None, Some(name)) => Source::Preset(name),
                _ => return Err(CliError::Usage("give exactly one of --input and --preset".into())),
            };
            let manifest = RunManifest {
                source,
                method: args.method.method,
                settings: args.method.settings()?,
                exclude_zeros: args.exclude_zeros,
                out: args.out,
                seed: args.method.seed,
            };
            let out = run(&manifest)?;
            println!(
                "g = {}, m = {}, {:.2} s; outputs in {}",
                out.result.g,
                out.result.m,
                out.wall_seconds,
                manifest.out.display()
            );
        }
        Command::Bench(args) => {
            let cfg = BenchConfig {
                presets: args.presets,
                methods: args.methods,
                repeats: args.repeats,
                seed: args.method.seed,
                settings: args.method.settings()?,
            };
            let rows = bench(&cfg)?;
            write_report(&args.out, &rows)?;
            let failures: usize = rows.iter().map(|r| r.failures).sum();
            println!("{} report rows, {failures} failed runs; written to {}", rows.len(), args.out.display());
        }
        Command::Simulate { preset, seed, out, truth } => {
            let cfg = LbmConfig::preset(&preset)?.with_seed(seed);
            let (a, t) = generate_lbm(&cfg)?;
            write_dense(&out, &a)?;
            if let Some(path) = truth {
                write_truth(&path, &a, &t)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
