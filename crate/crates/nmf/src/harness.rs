//! Running factorizations end to end: data, initialization, the iteration
//! loop with its stopping rule, and per-iteration metrics.
//!
//! # Random numbers
//!
//! All randomness comes from SplitMix64 seeded with the 64-bit seed itself.
//! A uniform draw is `(next_u64 >> 11) * 2^-53`, so it lies in `[0, 1)`.
//! Matrices are filled in column-major order. Synthetic data uses `seed`;
//! factor initialization uses `seed ^ INIT_SEED_SALT`, so the same seed never
//! reuses the data stream.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use nmf_core::distributed::{Allreduce, DadmmWorker, DbcdWorker, DidWorker, StepReport};
use nmf_core::kernels::{admm_iterate, anls_iterate, bcd_iterate, hals_iterate, AdmmAuxState, FactorState};
use nmf_core::matrix::{frob_norm_sq, matmul, residual};
use nmf_core::{ColumnBlock, DenseMatrix};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::comm::{CommStats, CommWorld, TransportKind, DEFAULT_TIMEOUT};
use crate::error::{NmfError, Result};

pub const INIT_SEED_SALT: u64 = 0x5851_F42D_4C95_7F2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hals,
    Bcd,
    Anls,
    Admm,
    Dadmm,
    Dbcd,
    Did,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Hals,
        Algorithm::Bcd,
        Algorithm::Anls,
        Algorithm::Admm,
        Algorithm::Dadmm,
        Algorithm::Dbcd,
        Algorithm::Did,
    ];

    pub fn is_distributed(self) -> bool {
        matches!(self, Algorithm::Dadmm | Algorithm::Dbcd | Algorithm::Did)
    }

    /// Whether every iterate is guaranteed not to increase the objective.
    pub fn is_descent(self) -> bool {
        !matches!(self, Algorithm::Admm | Algorithm::Dadmm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hals => "hals",
            Algorithm::Bcd => "bcd",
            Algorithm::Anls => "anls",
            Algorithm::Admm => "admm",
            Algorithm::Dadmm => "dadmm",
            Algorithm::Dbcd => "dbcd",
            Algorithm::Did => "did",
        }
    }
}

impl FromStr for Algorithm {
    type Err = NmfError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NmfError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    ScaledRandom,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Entries i.i.d. uniform on `[0, 1)`.
    Uniform,
    /// `X = B* C*` with uniform `B*` (M x K) and `C*` (K x N).
    Planted,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub max_time: Duration,
    pub rho: f64,
    pub seed: u64,
    pub transport: TransportKind,
    pub data: DataSource,
    pub init: InitMethod,
    /// Per-collective timeout.
    pub timeout: Duration,
    /// Metrics CSV destination. Only rank 0 writes.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Did,
            m: 5,
            n: 1000,
            k: 3,
            p: 1,
            epsilon: 1e-6,
            max_iters: 1000,
            max_time: Duration::from_secs(600),
            rho: 1.0,
            seed: 42,
            transport: TransportKind::InProcess,
            data: DataSource::Uniform,
            init: InitMethod::ScaledRandom,
            timeout: DEFAULT_TIMEOUT,
            out: None,
        }
    }
}

impl RunConfig {
    /// Checks everything that does not need the data. `m` and `n` are
    /// checked again once a file has been loaded.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NmfError::Config(msg));
        if self.p == 0 {
            return bad("P must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !self.algorithm.is_distributed() && self.p != 1 {
            return bad(format!("{} is sequential; P must be 1", self.algorithm.name()));
        }
        if self.data != DataSource::Uniform && self.data != DataSource::Planted {
            return Ok(());
        }
        self.validate_shape(self.m, self.n)
    }

    fn validate_shape(&self, m: usize, n: usize) -> Result<()> {
        if m == 0 || n == 0 {
            return Err(NmfError::Config(format!("empty data matrix {m}x{n}")));
        }
        if self.k > m.min(n) {
            return Err(NmfError::Config(format!("K = {} exceeds min(M, N) = {}", self.k, m.min(n))));
        }
        if self.p > n {
            return Err(NmfError::Config(format!("P = {} exceeds N = {n}", self.p)));
        }
        Ok(())
    }

    /// The data matrix this config describes.
    pub fn load_data(&self) -> Result<DenseMatrix> {
        let x = match &self.data {
            DataSource::Uniform => synth_data(self.m, self.n, self.seed),
            DataSource::Planted => planted_data(self.m, self.n, self.k, self.seed)?,
            DataSource::File(path) => crate::io::load_matrix(path)?,
        };
        self.validate_shape(x.rows(), x.cols())?;
        if !x.is_nonnegative() {
            return Err(NmfError::Config("data matrix has negative entries".into()));
        }
        Ok(x)
    }
}

fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| uniform(rng)).collect();
    DenseMatrix::new(rows, cols, data).expect("uniform draws are finite")
}

fn rng_for(seed: u64) -> SplitMix64 {
    SplitMix64::from_seed(seed.to_le_bytes())
}

/// `M x N` matrix of uniform `[0, 1)` draws, column-major from `SplitMix64(seed)`.
pub fn synth_data(m: usize, n: usize, seed: u64) -> DenseMatrix {
    uniform_matrix(m, n, &mut rng_for(seed))
}

/// Exactly rank-`K` nonnegative data: `B*` then `C*` drawn from one stream.
pub fn planted_data(m: usize, n: usize, k: usize, seed: u64) -> Result<DenseMatrix> {
    let mut rng = rng_for(seed);
    let b = uniform_matrix(m, k, &mut rng);
    let c = uniform_matrix(k, n, &mut rng);
    Ok(matmul(&b, &c)?)
}

/// Initial `(B, C)`, identical for every algorithm given the same seed.
///
/// Scaled-random draws `B` then `C` uniformly and multiplies both by
/// `sqrt(mean(X) / K)`. K-means runs Lloyd's algorithm on the columns of `X`:
/// `B` holds the centroids, `C` the one-hot assignments plus 0.1.
pub fn init_factors(x: &DenseMatrix, k: usize, seed: u64, method: InitMethod) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = x.shape();
    if k == 0 || k > m.min(n) {
        return Err(NmfError::Config(format!("K = {k} must be in 1..=min(M, N) = {}", m.min(n))));
    }
    let mut rng = rng_for(seed ^ INIT_SEED_SALT);
    match method {
        InitMethod::ScaledRandom => {
            let mean = x.as_slice().iter().sum::<f64>() / x.len() as f64;
            let s = (mean / k as f64).sqrt();
            let mut b = uniform_matrix(m, k, &mut rng);
            let mut c = uniform_matrix(k, n, &mut rng);
            b.scale(s);
            c.scale(s);
            Ok((b, c))
        }
        InitMethod::Kmeans => Ok(kmeans_init(x, k, &mut rng)),
    }
}

const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_init(x: &DenseMatrix, k: usize, rng: &mut SplitMix64) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = x.shape();
    // k distinct starting columns by a partial Fisher-Yates shuffle.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut centroids = DenseMatrix::from_fn(m, k, |r, c| x.get(r, order[c]));
    let mut assign = vec![usize::MAX; n];

    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for j in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(x.col(j), centroids.col(c))))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            changed |= assign[j] != best;
            assign[j] = best;
            dist[j] = d;
        }
        let mut sums = DenseMatrix::zeros(m, k);
        let mut counts = vec![0usize; k];
        for j in 0..n {
            counts[assign[j]] += 1;
            for (s, v) in sums.col_mut(assign[j]).iter_mut().zip(x.col(j)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Empty cluster: take over the point worst served by its centroid.
                let far = (0..n)
                    .fold(0, |best, j| if dist[j] > dist[best] { j } else { best });
                centroids.col_mut(c).copy_from_slice(x.col(far));
                dist[far] = 0.0;
                assign[far] = c;
                changed = true;
            } else {
                for (dst, s) in centroids.col_mut(c).iter_mut().zip(sums.col(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let c = DenseMatrix::from_fn(k, n, |i, j| if assign[j] == i { 1.1 } else { 0.1 });
    (centroids, c)
}

/// `||E_t||^2 <= epsilon ||E_0||^2`. A zero initial residual counts as converged.
///
/// Evaluated as the ratio `E_t / E_0 <= epsilon`: `1e-6 * 100.0` rounds below
/// `1e-4`, while `1e-4 / 100.0` rounds to exactly `1e-6`.
pub fn stopping_check(e_t_sq: f64, e_0_sq: f64, epsilon: f64) -> bool {
    e_0_sq <= 0.0 || e_t_sq / e_0_sq <= epsilon
}

/// One row per completed iteration. Counters and times are this iteration's
/// increments, not running totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub objective: f64,
    pub residual_sq: f64,
    pub allreduce_calls: u64,
    pub bytes: u64,
    pub compute_s: f64,
    pub comm_s: f64,
    /// `||B||_F^2` after the iteration. Kept in memory, not written to CSV.
    pub b_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub rows: Vec<MetricsRow>,
    pub iterations: usize,
    pub converged: bool,
    pub total_time: Duration,
    pub initial_residual_sq: f64,
    /// Totals for rank 0; all zero for sequential runs.
    pub comm: CommStats,
    pub b: DenseMatrix,
    /// The full `C` for in-process runs; the local block for a TCP rank.
    pub c: DenseMatrix,
}

pub const METRICS_HEADER: [&str; 7] = ["iter", "objective", "residual_sq", "allreduce_calls", "bytes", "compute_s", "comm_s"];

impl RunMetrics {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.iter.to_string(),
                format!("{:?}", r.objective),
                format!("{:?}", r.residual_sq),
                r.allreduce_calls.to_string(),
                r.bytes.to_string(),
                format!("{:?}", r.compute_s),
                format!("{:?}", r.comm_s),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Runs `config` to convergence, the iteration cap or the time cap, and
/// writes the metrics CSV if `config.out` is set.
///
/// Distributed algorithms run `P` ranks as threads over the in-process
/// transport; for TCP, each process calls [`run_rank`] instead.
pub fn run(config: &RunConfig) -> Result<RunMetrics> {
    config.validate()?;
    let x = config.load_data()?;
    let (b0, c0) = init_factors(&x, config.k, config.seed, config.init)?;
    let metrics = run_with(config, &x, b0, c0)?;
    if let Some(path) = &config.out {
        metrics.save_csv(path)?;
    }
    Ok(metrics)
}

/// [`run`] on explicit data and starting factors.
pub fn run_with(config: &RunConfig, x: &DenseMatrix, b0: DenseMatrix, c0: DenseMatrix) -> Result<RunMetrics> {
    config.validate()?;
    config.validate_shape(x.rows(), x.cols())?;
    if !config.algorithm.is_distributed() {
        return run_sequential(config, x, b0, c0);
    }
    if config.transport == TransportKind::Tcp {
        return Err(NmfError::Config("TCP runs are launched one process per rank".into()));
    }
    let start = Instant::now();
    let worlds = CommWorld::in_process(config.p, config.timeout)?;
    let outcomes: Vec<Result<RankOutcome>> = thread::scope(|scope| {
        let handles: Vec<_> = worlds
            .into_iter()
            .map(|world| {
                let (b0, c0) = (b0.clone(), &c0);
                scope.spawn(move || rank_loop(config, x, b0, c0, world, start))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| h.join().unwrap_or(Err(NmfError::RankPanicked { rank })))
            .collect()
    });
    // Report the root cause: a failing rank makes its peers time out or disconnect.
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(e @ (NmfError::Timeout { .. } | NmfError::Disconnected { .. })) => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let blocks: Vec<DenseMatrix> = ok.iter().map(|o| o.c_block.clone()).collect();
    for (rank, o) in ok.iter().enumerate().skip(1) {
        if !bitwise_eq(&o.metrics.b, &ok[0].metrics.b) {
            return Err(NmfError::ReplicaMismatch { rank });
        }
    }
    let mut metrics = ok.swap_remove(0).metrics;
    metrics.c = DenseMatrix::hstack(&blocks)?;
    metrics.total_time = start.elapsed();
    Ok(metrics)
}

fn bitwise_eq(a: &DenseMatrix, b: &DenseMatrix) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// One rank of a TCP run. Every process derives the data and the starting
/// factors from the same config, so no distinguished root ships them.
pub fn run_rank(config: &RunConfig, rank: usize, addr: std::net::SocketAddr) -> Result<RunMetrics> {
    config.validate()?;
    if !config.algorithm.is_distributed() {
        return Err(NmfError::Config(format!("{} is sequential", config.algorithm.name())));
    }
    let x = config.load_data()?;
    let (b0, c0) = init_factors(&x, config.k, config.seed, config.init)?;
    let start = Instant::now();
    let mut world = CommWorld::tcp(rank, config.p, addr, config.timeout)?;
    world.barrier()?;
    let outcome = rank_loop(config, &x, b0, &c0, world, start)?;
    let mut metrics = outcome.metrics;
    metrics.c = outcome.c_block;
    metrics.total_time = start.elapsed();
    if let (0, Some(path)) = (rank, &config.out) {
        metrics.save_csv(path)?;
    }
    Ok(metrics)
}

struct RankOutcome {
    metrics: RunMetrics,
    c_block: DenseMatrix,
}

enum Worker {
    Dbcd(DbcdWorker),
    Did(DidWorker),
    Dadmm(DadmmWorker),
}

impl Worker {
    fn iterate(&mut self, world: &mut CommWorld, b: &mut DenseMatrix) -> Result<StepReport> {
        match self {
            Worker::Dbcd(w) => w.iterate(world, b),
            Worker::Did(w) => w.iterate(world, b),
            Worker::Dadmm(w) => w.iterate(world, b),
        }
    }

    fn into_c_block(self) -> DenseMatrix {
        match self {
            Worker::Dbcd(w) => w.block.c_block,
            Worker::Did(w) => w.block.c_block,
            Worker::Dadmm(w) => w.block.c_block,
        }
    }
}

fn empty_metrics(config: &RunConfig, e0: f64, b: DenseMatrix, c: DenseMatrix) -> RunMetrics {
    RunMetrics {
        algorithm: config.algorithm,
        rows: Vec::new(),
        iterations: 0,
        converged: false,
        total_time: Duration::ZERO,
        initial_residual_sq: e0,
        comm: CommStats::default(),
        b,
        c,
    }
}

fn rank_loop(
    config: &RunConfig,
    x: &DenseMatrix,
    mut b: DenseMatrix,
    c0: &DenseMatrix,
    mut world: CommWorld,
    start: Instant,
) -> Result<RankOutcome> {
    let block = ColumnBlock::for_rank(x, c0, world.rank(), world.size())?;
    let mut initial = [nmf_core::distributed::local_residual_sq(&block, &b)?];
    world.allreduce_metric(&mut initial)?;
    let e0 = initial[0];

    let mut worker = match config.algorithm {
        Algorithm::Dbcd => Worker::Dbcd(DbcdWorker::new(block, &b)?),
        Algorithm::Did => Worker::Did(DidWorker::new(block)),
        Algorithm::Dadmm => Worker::Dadmm(DadmmWorker::new(block, &b, config.rho)?),
        other => unreachable!("{} is sequential", other.name()),
    };
    let mut metrics = empty_metrics(config, e0, DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, 0));
    metrics.converged = stopping_check(e0, e0, config.epsilon);

    while !metrics.converged && metrics.iterations < config.max_iters {
        let before = world.stats();
        let t0 = Instant::now();
        let step = worker.iterate(&mut world, &mut b)?;
        let algorithmic = world.stats();
        // [local residual, over-time flag]; every rank takes the same decision.
        let over = (start.elapsed() >= config.max_time) as u8 as f64;
        let mut monitor = [step.local_residual_sq, over];
        world.allreduce_metric(&mut monitor)?;
        let wall = t0.elapsed();
        let after = world.stats();
        let comm = after.comm_wall_time - before.comm_wall_time;
        world.add_compute_time(wall.saturating_sub(comm));

        let residual_sq = monitor[0] + step.residual_correction;
        metrics.iterations += 1;
        metrics.rows.push(MetricsRow {
            iter: metrics.iterations,
            objective: 0.5 * residual_sq,
            residual_sq,
            allreduce_calls: algorithmic.allreduce_calls - before.allreduce_calls,
            bytes: algorithmic.bytes_sent - before.bytes_sent,
            compute_s: wall.saturating_sub(comm).as_secs_f64(),
            comm_s: comm.as_secs_f64(),
            b_norm_sq: frob_norm_sq(&b),
        });
        metrics.converged = stopping_check(residual_sq, e0, config.epsilon);
        if monitor[1] > 0.0 {
            break;
        }
    }
    metrics.comm = world.stats();
    metrics.b = b;
    Ok(RankOutcome {
        metrics,
        c_block: worker.into_c_block(),
    })
}

fn run_sequential(config: &RunConfig, x: &DenseMatrix, b0: DenseMatrix, c0: DenseMatrix) -> Result<RunMetrics> {
    let start = Instant::now();
    let mut state = FactorState::new(x, b0, c0)?;
    let mut admm = match config.algorithm {
        Algorithm::Admm => Some(AdmmAuxState::new(&state, config.rho)?),
        _ => None,
    };
    let e0 = state.residual_sq();
    let mut metrics = empty_metrics(config, e0, DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, 0));
    metrics.converged = stopping_check(e0, e0, config.epsilon);

    while !metrics.converged && metrics.iterations < config.max_iters && start.elapsed() < config.max_time {
        let t0 = Instant::now();
        match config.algorithm {
            Algorithm::Hals => {
                hals_iterate(x, &mut state)?;
            }
            Algorithm::Bcd => {
                bcd_iterate(x, &mut state)?;
            }
            Algorithm::Anls => {
                anls_iterate(x, &mut state)?;
            }
            Algorithm::Admm => admm_iterate(x, &mut state, admm.as_mut().expect("admm state"))?,
            other => unreachable!("{} is distributed", other.name()),
        }
        let wall = t0.elapsed();
        let residual_sq = state.residual_sq();
        metrics.iterations += 1;
        metrics.comm.compute_wall_time += wall;
        metrics.rows.push(MetricsRow {
            iter: metrics.iterations,
            objective: 0.5 * residual_sq,
            residual_sq,
            allreduce_calls: 0,
            bytes: 0,
            compute_s: wall.as_secs_f64(),
            comm_s: 0.0,
            b_norm_sq: frob_norm_sq(&state.b),
        });
        metrics.converged = stopping_check(residual_sq, e0, config.epsilon);
    }
    metrics.total_time = start.elapsed();
    metrics.b = state.b;
    metrics.c = state.c;
    Ok(metrics)
}

/// `||X - BC||_F^2` recomputed from scratch.
pub fn recompute_residual_sq(x: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<f64> {
    Ok(frob_norm_sq(&residual(x, b, c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_boundaries() {
        assert!(stopping_check(1e-4, 100.0, 1e-6));
        assert!(!stopping_check(2e-4, 100.0, 1e-6));
        assert!(stopping_check(100.0, 100.0, 1.0));
        assert!(stopping_check(5.0, 0.0, 1e-6));
    }

    #[test]
    fn uniform_draws_match_splitmix_reference() {
        // SplitMix64 from state 0: first output 0xE220A8397B1DCDAF.
        let x = synth_data(1, 1, 0);
        assert_eq!(x.get(0, 0), (0xE220_A839_7B1D_CDAFu64 >> 11) as f64 / (1u64 << 53) as f64);
    }

    #[test]
    fn synth_is_seeded_and_in_range() {
        let a = synth_data(3, 7, 9);
        assert_eq!(a, synth_data(3, 7, 9));
        assert_ne!(a, synth_data(3, 7, 10));
        assert!(a.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn scaled_random_scale() {
        // mean(X) = 0.25, K = 1 -> every entry is a uniform draw times 0.5.
        let x = DenseMatrix::from_fn(2, 3, |_, _| 0.25);
        let (b, c) = init_factors(&x, 1, 3, InitMethod::ScaledRandom).unwrap();
        let mut rng = rng_for(3 ^ INIT_SEED_SALT);
        for v in b.as_slice().iter().chain(c.as_slice()) {
            assert_eq!(*v, uniform(&mut rng) * 0.5);
        }
    }

    #[test]
    fn kmeans_recovers_two_clusters() {
        let x = DenseMatrix::from_rows(&[&[0.0, 0.1, 5.0, 5.1, 0.05], &[0.0, 0.1, 5.0, 5.2, 0.0]]).unwrap();
        let (b, c) = init_factors(&x, 2, 1, InitMethod::Kmeans).unwrap();
        let mut centers: Vec<f64> = (0..2).map(|i| b.get(0, i)).collect();
        centers.sort_by(f64::total_cmp);
        assert!((centers[0] - 0.05).abs() < 1e-12 && (centers[1] - 5.05).abs() < 1e-12);
        for j in 0..5 {
            let col = c.col(j);
            assert!((col.iter().sum::<f64>() - 1.2).abs() < 1e-15);
            assert_eq!(col.iter().filter(|&&v| v == 1.1).count(), 1);
        }
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        // Three identical columns and one outlier with K = 3: two centroids start
        // on the same point, one of them ends up empty and is re-seeded.
        let x = DenseMatrix::from_rows(&[&[1.0, 1.0, 1.0, 9.0], &[1.0, 1.0, 1.0, 9.0]]).unwrap();
        let (b, c) = init_factors(&x, 2, 5, InitMethod::Kmeans).unwrap();
        assert!(b.is_nonnegative() && c.is_nonnegative());
        let mut centers: Vec<f64> = (0..2).map(|i| b.get(0, i)).collect();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, vec![1.0, 9.0]);
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::default();
        ok.validate().unwrap();
        for bad in [
            RunConfig { k: 6, ..ok.clone() },
            RunConfig { p: 0, ..ok.clone() },
            RunConfig { epsilon: 0.0, ..ok.clone() },
            RunConfig { rho: -1.0, ..ok.clone() },
            RunConfig { algorithm: Algorithm::Bcd, p: 2, ..ok.clone() },
            RunConfig { n: 3, p: 4, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(NmfError::Config(_))), "{bad:?}");
        }
        assert_eq!("DID".parse::<Algorithm>().unwrap(), Algorithm::Did);
        assert!("mu".parse::<Algorithm>().is_err());
    }

    #[test]
    fn epsilon_one_converges_immediately() {
        for alg in Algorithm::ALL {
            let p = if alg.is_distributed() { 2 } else { 1 };
            let cfg = RunConfig { algorithm: alg, epsilon: 1.0, n: 20, p, ..RunConfig::default() };
            let m = run(&cfg).unwrap();
            assert!(m.converged && m.iterations == 0 && m.rows.is_empty(), "{alg:?}");
        }
    }
}
