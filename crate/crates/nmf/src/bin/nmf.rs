use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nmf::harness::{self, Algorithm, DataSource, InitMethod, RunConfig, RunMetrics};
use nmf::{io, NmfError, Result, TransportKind};

#[derive(Parser)]
#[command(name = "nmf", version, about = "Nonnegative matrix factorization, sequential and distributed")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Factorize a matrix and write per-iteration metrics.
    Run(RunArgs),
    /// Write a synthetic data matrix.
    Synth(SynthArgs),
    /// Convert between CSV and DMAT1 (chosen by file extension).
    Convert { input: PathBuf, output: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgArg {
    Hals,
    Bcd,
    Anls,
    Admm,
    Dadmm,
    Dbcd,
    Did,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    InProcess,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    ScaledRandom,
    Kmeans,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "did")]
    alg: AlgArg,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "in-process")]
    transport: TransportArg,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data matrix (`.csv` or DMAT1). Overrides --m and --n.
    #[arg(long, conflicts_with = "planted")]
    input: Option<PathBuf>,
    /// Synthesize an exactly rank-K matrix instead of uniform noise.
    #[arg(long)]
    planted: bool,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Wall-clock cap in seconds.
    #[arg(long, default_value_t = 600.0)]
    max_time: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, value_enum, default_value = "scaled-random")]
    init: InitArg,
    /// Per-collective timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Write the final B here.
    #[arg(long)]
    b_out: Option<PathBuf>,
    /// Write the final C here (not available with --transport tcp).
    #[arg(long)]
    c_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Plant an exact rank-K factorization instead of uniform entries.
    #[arg(long)]
    planted_k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn seconds(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).map_err(|_| NmfError::Config(format!("bad {what}: {s}")))
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let algorithm = match self.alg {
            AlgArg::Hals => Algorithm::Hals,
            AlgArg::Bcd => Algorithm::Bcd,
            AlgArg::Anls => Algorithm::Anls,
            AlgArg::Admm => Algorithm::Admm,
            AlgArg::Dadmm => Algorithm::Dadmm,
            AlgArg::Dbcd => Algorithm::Dbcd,
            AlgArg::Did => Algorithm::Did,
        };
        let data = match (&self.input, self.planted) {
            (Some(path), _) => DataSource::File(path.clone()),
            (None, true) => DataSource::Planted,
            (None, false) => DataSource::Uniform,
        };
        let transport = match self.transport {
            TransportArg::InProcess => TransportKind::InProcess,
            TransportArg::Tcp => TransportKind::Tcp,
        };
        if transport == TransportKind::Tcp && self.c_out.is_some() {
            return Err(NmfError::Config("--c-out is not available over TCP".into()));
        }
        Ok(RunConfig {
            algorithm,
            m: self.m,
            n: self.n,
            k: self.k,
            p: self.p,
            epsilon: self.eps,
            max_iters: self.max_iters,
            max_time: seconds(self.max_time, "--max-time")?,
            rho: self.rho,
            seed: self.seed,
            transport,
            data,
            init: match self.init {
                InitArg::ScaledRandom => InitMethod::ScaledRandom,
                InitArg::Kmeans => InitMethod::Kmeans,
            },
            timeout: seconds(self.timeout, "--timeout")?,
            out: self.out.clone(),
        })
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn parse_env<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    env_var(name)
        .map(|v| v.parse().map_err(|_| NmfError::Config(format!("{name}={v:?} is not valid"))))
        .transpose()
}

fn finish(args: &RunArgs, metrics: &RunMetrics, write: bool) -> Result<()> {
    if write {
        if let Some(path) = &args.b_out {
            io::save_matrix(path, &metrics.b)?;
        }
        if let Some(path) = &args.c_out {
            io::save_matrix(path, &metrics.c)?;
        }
        eprintln!(
            "{}: {} iterations, converged={}, objective={:e}, {:.3}s",
            metrics.algorithm.name(),
            metrics.iterations,
            metrics.converged,
            metrics.rows.last().map_or(0.5 * metrics.initial_residual_sq, |r| r.objective),
            metrics.total_time.as_secs_f64()
        );
    }
    Ok(())
}

/// Spawns one child process per rank, all pointed at the same rendezvous.
fn launch_tcp(config: &RunConfig) -> Result<()> {
    let addr = match parse_env::<SocketAddr>("NMF_ADDR")? {
        Some(a) => a,
        None => TcpListener::bind("127.0.0.1:0")?.local_addr()?,
    };
    let exe = std::env::current_exe()?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut children = Vec::with_capacity(config.p);
    for rank in 0..config.p {
        let child = Command::new(&exe)
            .args(&args)
            .env("NMF_ADDR", addr.to_string())
            .env("NMF_RANK", rank.to_string())
            .env("NMF_WORLD", config.p.to_string())
            .spawn()?;
        children.push(child);
    }
    let mut failed = Vec::new();
    for (rank, mut child) in children.into_iter().enumerate() {
        if !child.wait()?.success() {
            failed.push(rank);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(NmfError::Config(format!("ranks {failed:?} exited with errors")))
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = args.config()?;
    if config.transport == TransportKind::InProcess || !config.algorithm.is_distributed() {
        let metrics = harness::run(&config)?;
        return finish(args, &metrics, true);
    }
    match parse_env::<usize>("NMF_RANK")? {
        None => launch_tcp(&config),
        Some(rank) => {
            if let Some(world) = parse_env::<usize>("NMF_WORLD")? {
                config.p = world;
            }
            let addr = parse_env::<SocketAddr>("NMF_ADDR")?
                .ok_or_else(|| NmfError::Config("NMF_ADDR must be set with NMF_RANK".into()))?;
            let metrics = harness::run_rank(&config, rank, addr)?;
            finish(args, &metrics, rank == 0)
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let x = match args.planted_k {
        Some(k) => harness::planted_data(args.m, args.n, k, args.seed)?,
        None => harness::synth_data(args.m, args.n, args.seed),
    };
    io::save_matrix(&args.out, &x)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Convert { input, output } => io::load_matrix(input).and_then(|m| io::save_matrix(output, &m)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nmf: {e}");
            ExitCode::FAILURE
        }
    }
}
