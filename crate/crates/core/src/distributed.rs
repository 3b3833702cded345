//! Per-rank workers for distributed NMF over column blocks.
//!
//! Every rank owns a contiguous block of columns of `X` and `C` and a full
//! copy of `B`. The only cross-rank operation is [`Allreduce::allreduce_sum`];
//! as long as it is deterministic, every rank ends each iteration with a
//! bit-identical `B`.
//!
//! * DBCD: coordinate descent with one reduction per basis column (`K` per iteration).
//! * DID: the same iterate with one reduction per iteration; later basis
//!   columns are corrected locally with `delta b` instead of re-reducing.
//! * DADMM: ADMM on the column-separable split `Y_i = B C_i`, one reduction
//!   of `(C C^T, (U + Y) C^T)` per iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{
    b_column_close, b_column_open, b_column_solve, c_sweep_column, column_norms, SweepReport,
};
use crate::matrix::{
    axpy, dot, matmul, matmul_nt, matmul_tn, nonneg, residual_column, sum_sq, ColumnBlock,
    DenseMatrix,
};
use crate::nnls::{nnls_rows, GramSystem};
use crate::DEGENERATE_NORM_SQ;

/// Sum-allreduce over matrix payloads.
///
/// Every rank must call it with the same sequence of identically shaped
/// payloads. On return each payload holds the entrywise sum over all ranks,
/// bit-identical on every rank.
pub trait Allreduce {
    type Error: From<Error>;

    fn rank(&self) -> usize;

    fn size(&self) -> usize;

    fn allreduce_sum(&mut self, payload: &mut [DenseMatrix]) -> core::result::Result<(), Self::Error>;
}

/// The one-rank collective: the sum over a single rank is the payload itself.
#[derive(Debug, Default, Clone)]
pub struct SoloComm {
    pub calls: u64,
}

impl Allreduce for SoloComm {
    type Error = Error;

    fn rank(&self) -> usize {
        0
    }

    fn size(&self) -> usize {
        1
    }

    fn allreduce_sum(&mut self, _payload: &mut [DenseMatrix]) -> Result<()> {
        self.calls += 1;
        Ok(())
    }
}

/// What one worker iteration tells the driver about the residual.
///
/// The global `||X - BC||_F^2` is `sum over ranks of local_residual_sq`
/// plus `residual_correction`, which is already global and identical on
/// every rank.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub local_residual_sq: f64,
    pub residual_correction: f64,
    pub skipped: usize,
}

fn check_block(block: &ColumnBlock, b: &DenseMatrix) -> Result<()> {
    let (m, k) = b.shape();
    let n = block.local_cols();
    if block.x_block.rows() != m || block.c_block.shape() != (k, n) {
        return Err(Error::DimensionMismatch {
            op: "column block",
            left: block.x_block.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Local `||X_i - B C_i||_F^2`.
pub fn local_residual_sq(block: &ColumnBlock, b: &DenseMatrix) -> Result<f64> {
    check_block(block, b)?;
    let mut e = vec![0.0; b.rows()];
    let mut total = 0.0;
    for j in 0..block.local_cols() {
        residual_column(block.x_block.col(j), b, block.c_block.col(j), &mut e);
        total += sum_sq(&e);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// DBCD

/// DBCD worker. Holds the block and its residual `E_i = X_i - B C_i`.
#[derive(Debug, Clone)]
pub struct DbcdWorker {
    pub block: ColumnBlock,
    residual: DenseMatrix,
}

impl DbcdWorker {
    pub fn new(block: ColumnBlock, b: &DenseMatrix) -> Result<Self> {
        check_block(&block, b)?;
        let mut residual = DenseMatrix::zeros(block.x_block.rows(), block.local_cols());
        for j in 0..block.local_cols() {
            residual_column(block.x_block.col(j), b, block.c_block.col(j), residual.col_mut(j));
        }
        Ok(Self { block, residual })
    }

    pub fn residual(&self) -> &DenseMatrix {
        &self.residual
    }

    /// One DBCD iteration: [`Self::c_phase`] then [`Self::b_phase`].
    pub fn iterate<C: Allreduce>(
        &mut self,
        comm: &mut C,
        b: &mut DenseMatrix,
    ) -> core::result::Result<StepReport, C::Error> {
        let mut report = self.c_phase(b)?;
        let after = self.b_phase(comm, b)?;
        report.skipped += after.skipped;
        report.local_residual_sq = after.local_residual_sq;
        Ok(report)
    }

    /// Recomputes `e_j = x_j - B c_j` and sweeps every `c_j`. No communication.
    pub fn c_phase(&mut self, b: &DenseMatrix) -> Result<StepReport> {
        let mut report = SweepReport::default();
        dbcd_c_phase(&mut self.block, b, &mut self.residual, &mut report)?;
        Ok(StepReport {
            local_residual_sq: sum_sq(self.residual.as_slice()),
            residual_correction: 0.0,
            skipped: report.skipped,
        })
    }

    /// Updates the basis columns in order, with one `(y, z)` allreduce each.
    pub fn b_phase<C: Allreduce>(
        &mut self,
        comm: &mut C,
        b: &mut DenseMatrix,
    ) -> core::result::Result<StepReport, C::Error> {
        check_block(&self.block, b)?;
        let mut report = SweepReport::default();
        let (m, k) = b.shape();
        for i in 0..k {
            let mut b_i = b.col(i).to_vec();
            let (y, z) = b_column_open(&b_i, &self.block.c_block, i, &mut self.residual);
            let mut payload = [
                DenseMatrix::new(m, 1, y).map_err(C::Error::from)?,
                DenseMatrix::new(1, 1, vec![z]).map_err(C::Error::from)?,
            ];
            comm.allreduce_sum(&mut payload)?;
            let z = payload[1].get(0, 0);
            report.skip_if(!b_column_solve(&mut b_i, payload[0].as_slice(), z));
            b_column_close(&b_i, &self.block.c_block, i, &mut self.residual);
            b.col_mut(i).copy_from_slice(&b_i);
        }
        Ok(StepReport {
            local_residual_sq: sum_sq(self.residual.as_slice()),
            residual_correction: 0.0,
            skipped: report.skipped,
        })
    }
}

fn dbcd_c_phase(
    block: &mut ColumnBlock,
    b: &DenseMatrix,
    residual: &mut DenseMatrix,
    report: &mut SweepReport,
) -> Result<()> {
    check_block(block, b)?;
    if residual.shape() != block.x_block.shape() {
        return Err(Error::DimensionMismatch {
            op: "residual block",
            left: residual.shape(),
            right: block.x_block.shape(),
        });
    }
    let norms = column_norms(b);
    for j in 0..block.local_cols() {
        let e_j = residual.col_mut(j);
        residual_column(block.x_block.col(j), b, block.c_block.col(j), e_j);
        c_sweep_column(b, &norms, block.c_block.col_mut(j), e_j, report);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DID

/// The single per-iteration DID message.
///
/// `w` (`M x K`): column `i` is `sum_j e_j c_ij`. `v` (`K x K`, lower
/// triangular): entry `(i, k)`, `i >= k`, is `sum_j c_ij c_kj`.
#[derive(Debug, Clone, PartialEq)]
pub struct DidMessage {
    pub w: DenseMatrix,
    pub v: DenseMatrix,
}

impl DidMessage {
    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(m, k),
            v: DenseMatrix::zeros(k, k),
        }
    }

    /// `v` with its upper triangle mirrored in.
    fn v_sym(&self, i: usize, k: usize) -> f64 {
        if i >= k {
            self.v.get(i, k)
        } else {
            self.v.get(k, i)
        }
    }
}

/// `delta b_i = b_i^{t+1} - b_i^t`, one column per basis column.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaB(pub DenseMatrix);

impl DeltaB {
    pub fn column(&self, i: usize) -> &[f64] {
        self.0.col(i)
    }
}

/// DID C-phase: `e_j = x_j - B c_j`, then the coordinate sweep over `c_j`.
/// On return `residual` holds `e_j` for the updated `c_j`.
pub fn did_c_phase(
    block: &mut ColumnBlock,
    b: &DenseMatrix,
    residual: &mut DenseMatrix,
) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    dbcd_c_phase(block, b, residual, &mut report)?;
    Ok(report)
}

/// Builds `(W_i, V_i)` from the block's current `C` and residual.
pub fn did_build_message(block: &ColumnBlock, residual: &DenseMatrix) -> Result<DidMessage> {
    if residual.cols() != block.local_cols() {
        return Err(Error::DimensionMismatch {
            op: "did_build_message",
            left: residual.shape(),
            right: block.c_block.shape(),
        });
    }
    let mut msg = DidMessage::zeros(residual.rows(), block.c_block.rows());
    for j in 0..block.local_cols() {
        accumulate_message(&mut msg, residual.col(j), block.c_block.col(j));
    }
    Ok(msg)
}

#[inline]
fn accumulate_message(msg: &mut DidMessage, e_j: &[f64], c_j: &[f64]) {
    for (i, &c_ij) in c_j.iter().enumerate() {
        axpy(c_ij, e_j, msg.w.col_mut(i));
        let v_col = msg.v.col_mut(i);
        for (kk, &c_kj) in c_j.iter().enumerate().skip(i) {
            v_col[kk] += c_kj * c_ij;
        }
    }
}

/// Applies the incremental basis update from the reduced message, `i`
/// ascending:
///
/// ```text
/// b_i' = [b_i + w_i / v_ii - sum_{k<i} (v_ik / v_ii) delta b_k]_+
/// delta b_i = b_i' - b_i
/// ```
///
/// Columns with `v_ii` below [`DEGENERATE_NORM_SQ`] keep `b_i` and get
/// `delta b_i = 0`. Returns the deltas and the number of skipped columns.
pub fn did_update_b(b: &mut DenseMatrix, msg: &DidMessage) -> Result<(DeltaB, usize)> {
    let (m, k) = b.shape();
    if msg.w.shape() != (m, k) || msg.v.shape() != (k, k) {
        return Err(Error::DimensionMismatch {
            op: "did_update_b",
            left: b.shape(),
            right: msg.w.shape(),
        });
    }
    let mut delta = DenseMatrix::zeros(m, k);
    let mut skipped = 0;
    for i in 0..k {
        let v_ii = msg.v.get(i, i);
        if v_ii < DEGENERATE_NORM_SQ {
            skipped += 1;
            continue;
        }
        for r in 0..m {
            let old = b.get(r, i);
            let mut t = old + msg.w.get(r, i) / v_ii;
            for kk in 0..i {
                t -= (msg.v.get(i, kk) / v_ii) * delta.get(r, kk);
            }
            let new = nonneg(t);
            b.set(r, i, new);
            delta.set(r, i, new - old);
        }
    }
    Ok((DeltaB(delta), skipped))
}

/// Change in `||E||_F^2` caused by `E -> E - sum_i delta b_i c_i^r`:
/// `-2 sum_i delta b_i . w_i + sum_{i,k} (delta b_i . delta b_k) v_ik`.
pub fn did_residual_correction(msg: &DidMessage, delta: &DeltaB) -> f64 {
    let k = msg.v.rows();
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for i in 0..k {
        linear += dot(delta.column(i), msg.w.col(i));
        for kk in 0..k {
            quadratic += dot(delta.column(i), delta.column(kk)) * msg.v_sym(i, kk);
        }
    }
    quadratic - 2.0 * linear
}

/// DID worker. Keeps only an `M`-vector of scratch; the residual block is
/// never stored.
#[derive(Debug, Clone)]
pub struct DidWorker {
    pub block: ColumnBlock,
    scratch: Vec<f64>,
}

impl DidWorker {
    pub fn new(block: ColumnBlock) -> Self {
        let scratch = vec![0.0; block.x_block.rows()];
        Self { block, scratch }
    }

    /// One DID iteration with exactly one allreduce call. The C-phase and the
    /// message build are fused per column; the arithmetic matches
    /// [`did_c_phase`] followed by [`did_build_message`] bit for bit.
    pub fn iterate<C: Allreduce>(
        &mut self,
        comm: &mut C,
        b: &mut DenseMatrix,
    ) -> core::result::Result<StepReport, C::Error> {
        check_block(&self.block, b)?;
        let (m, k) = b.shape();
        self.scratch.resize(m, 0.0);
        let mut report = SweepReport::default();
        let norms = column_norms(b);
        let mut msg = DidMessage::zeros(m, k);
        let mut local_sq = 0.0;
        for j in 0..self.block.local_cols() {
            let e_j = &mut self.scratch[..];
            residual_column(self.block.x_block.col(j), b, self.block.c_block.col(j), e_j);
            let c_j = self.block.c_block.col_mut(j);
            c_sweep_column(b, &norms, c_j, e_j, &mut report);
            local_sq += sum_sq(e_j);
            accumulate_message(&mut msg, e_j, c_j);
        }
        let mut payload = [msg.w, msg.v];
        comm.allreduce_sum(&mut payload)?;
        let [w, v] = payload;
        let msg = DidMessage { w, v };
        let (delta, skipped) = did_update_b(b, &msg)?;
        Ok(StepReport {
            local_residual_sq: local_sq,
            residual_correction: did_residual_correction(&msg, &delta),
            skipped: report.skipped + skipped,
        })
    }
}

// ---------------------------------------------------------------------------
// DADMM

/// Per-rank ADMM variables: scaled dual `U_i`, auxiliary `Y_i`, penalty `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct DadmmWorkerState {
    pub u: DenseMatrix,
    pub y: DenseMatrix,
    pub rho: f64,
}

impl DadmmWorkerState {
    /// `Y_i = B C_i` (the coupling constraint holds at the start) and `U_i = 0`.
    pub fn new(block: &ColumnBlock, b: &DenseMatrix, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidPenalty(rho));
        }
        check_block(block, b)?;
        let y = matmul(b, &block.c_block)?;
        Ok(Self {
            u: DenseMatrix::zeros(y.rows(), y.cols()),
            y,
            rho,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DadmmWorker {
    pub block: ColumnBlock,
    pub state: DadmmWorkerState,
}

impl DadmmWorker {
    pub fn new(block: ColumnBlock, b: &DenseMatrix, rho: f64) -> Result<Self> {
        let state = DadmmWorkerState::new(&block, b, rho)?;
        Ok(Self { block, state })
    }

    /// One DADMM iteration, exactly one allreduce:
    ///
    /// ```text
    /// U_i = U_i + (Y_i - B C_i)
    /// Y_i = (X_i - rho U_i + rho B C_i) / (1 + rho)
    /// C_i = argmin_{C_i >= 0} ||U_i + Y_i - B C_i||
    /// (W, H) = Allreduce(C_i C_i^T, (U_i + Y_i) C_i^T)
    /// B = argmin_{B >= 0} via the Gram system (W, H)
    /// ```
    pub fn iterate<C: Allreduce>(
        &mut self,
        comm: &mut C,
        b: &mut DenseMatrix,
    ) -> core::result::Result<StepReport, C::Error> {
        check_block(&self.block, b)?;
        let rho = self.state.rho;
        let st = &mut self.state;
        let bc = matmul(b, &self.block.c_block)?;
        for ((u, &y), &p) in st.u.as_mut_slice().iter_mut().zip(st.y.as_slice()).zip(bc.as_slice()) {
            *u += y - p;
        }
        let inv = 1.0 / (1.0 + rho);
        for (((y, &x), &u), &p) in st
            .y
            .as_mut_slice()
            .iter_mut()
            .zip(self.block.x_block.as_slice())
            .zip(st.u.as_slice())
            .zip(bc.as_slice())
        {
            *y = (x - rho * u + rho * p) * inv;
        }
        let mut target = st.u.clone();
        target.add_assign(&st.y)?;

        let c_sys = GramSystem::new(matmul_tn(b, b)?, matmul_tn(&target, b)?)?;
        self.block.c_block = nnls_rows(&c_sys)?.transpose();

        let mut payload = [
            matmul_nt(&self.block.c_block, &self.block.c_block)?,
            matmul_nt(&target, &self.block.c_block)?,
        ];
        comm.allreduce_sum(&mut payload)?;
        let [gram, rhs] = payload;
        *b = nnls_rows(&GramSystem::new(gram, rhs)?)?;

        let mut report = SweepReport::default();
        for i in 0..b.cols() {
            report.skip_if(c_sys.gram().get(i, i) <= DEGENERATE_NORM_SQ);
        }
        Ok(StepReport {
            local_residual_sq: local_residual_sq(&self.block, b)?,
            residual_correction: 0.0,
            skipped: report.skipped,
        })
    }
}
