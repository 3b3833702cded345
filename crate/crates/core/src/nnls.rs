//! Nonnegative least squares in Gram form.
//!
//! Every row `m` of the right-hand side `R` defines an independent problem
//!
//! ```text
//! minimize_{b >= 0}  1/2 b G b^T - b r_m^T
//! ```
//!
//! which is what `min_{B >= 0} ||Y - B C||_F^2` reduces to with `G = C C^T`
//! and `R = Y C^T`. Rows are solved by block principal pivoting; a projected
//! gradient loop takes over if pivoting stalls or a passive subsystem is
//! singular.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, nonneg, Cholesky, DenseMatrix};
use crate::DEGENERATE_NORM_SQ;

/// Absolute KKT tolerance for unit-scale problems; scaled up with the data.
pub const KKT_TOL: f64 = 1e-8;

/// Largest `K` the enumeration oracle accepts.
pub const ORACLE_MAX_K: usize = 12;

const PG_MAX_ITERS: usize = 20_000;

/// Gram matrix `G` (`K x K`, symmetric PSD) with right-hand side `R` (`M x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    gram: DenseMatrix,
    rhs: DenseMatrix,
}

impl GramSystem {
    pub fn new(gram: DenseMatrix, rhs: DenseMatrix) -> Result<Self> {
        let k = gram.rows();
        if gram.cols() != k || rhs.cols() != k {
            return Err(Error::DimensionMismatch {
                op: "GramSystem::new",
                left: gram.shape(),
                right: rhs.shape(),
            });
        }
        let sym_tol = 1e-12 * gram.max_abs().max(1.0);
        for i in 0..k {
            if gram.get(i, i) < 0.0 {
                return Err(Error::DegenerateGram { reason: "negative diagonal entry" });
            }
            for j in 0..i {
                if (gram.get(i, j) - gram.get(j, i)).abs() > sym_tol {
                    return Err(Error::DegenerateGram { reason: "not symmetric" });
                }
            }
        }
        Ok(Self { gram, rhs })
    }

    pub fn gram(&self) -> &DenseMatrix {
        &self.gram
    }

    pub fn rhs(&self) -> &DenseMatrix {
        &self.rhs
    }

    pub fn k(&self) -> usize {
        self.gram.rows()
    }

    /// Coordinates with a (numerically) zero diagonal. They are excluded
    /// from every solve and come back as 0.
    fn live_coords(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&i| self.gram.get(i, i) > DEGENERATE_NORM_SQ)
            .collect()
    }

    /// Sum of the per-row objectives for a candidate solution.
    pub fn objective(&self, solution: &DenseMatrix) -> f64 {
        (0..self.rhs.rows())
            .map(|m| row_objective(&self.gram, &solution.row(m), &self.rhs.row(m)))
            .sum()
    }

    /// Worst KKT violation over all rows of `solution`.
    pub fn kkt_residual(&self, solution: &DenseMatrix) -> f64 {
        (0..self.rhs.rows())
            .map(|m| kkt_residual(&self.gram, &solution.row(m), &self.rhs.row(m)))
            .fold(0.0, f64::max)
    }
}

/// `1/2 b G b^T - b r^T`.
pub fn row_objective(gram: &DenseMatrix, b: &[f64], r: &[f64]) -> f64 {
    let g = gradient(gram, b, r);
    // 1/2 b G b - b r = 1/2 b (G b - r) - 1/2 b r
    0.5 * dot(b, &g) - 0.5 * dot(b, r)
}

/// Largest violation of `b >= 0`, `g >= 0`, `b . g = 0` where `g = b G - r`.
pub fn kkt_residual(gram: &DenseMatrix, b: &[f64], r: &[f64]) -> f64 {
    let g = gradient(gram, b, r);
    let mut worst: f64 = 0.0;
    for (&bk, &gk) in b.iter().zip(&g) {
        worst = worst.max(-bk).max(-gk);
    }
    worst.max(dot(b, &g).abs())
}

fn gradient(gram: &DenseMatrix, b: &[f64], r: &[f64]) -> Vec<f64> {
    (0..r.len())
        .map(|k| dot(b, gram.col(k)) - r[k])
        .collect()
}

/// Solves every row subproblem of `sys`. The result is `M x K` and nonnegative.
pub fn nnls_rows(sys: &GramSystem) -> Result<DenseMatrix> {
    let (m, k) = sys.rhs.shape();
    let live = sys.live_coords();
    let sub = SubGram::new(&sys.gram, &live);
    let mut out = DenseMatrix::zeros(m, k);
    let mut failure: Option<f64> = None;
    let mut r_live = vec![0.0; live.len()];
    for row in 0..m {
        for (slot, &i) in r_live.iter_mut().zip(&live) {
            *slot = sys.rhs.get(row, i);
        }
        let (x, ok) = solve_row(&sub, &r_live);
        if !ok {
            let res = kkt_residual_dense(&sub, &x, &r_live);
            failure = Some(failure.map_or(res, |w: f64| w.max(res)));
        }
        for (&i, &v) in live.iter().zip(&x) {
            out.set(row, i, v);
        }
    }
    match failure {
        None => Ok(out),
        Some(kkt_residual) => Err(Error::NnlsNotConverged {
            best: out,
            kkt_residual,
        }),
    }
}

/// Exact reference solver: tries every passive set per row and keeps the
/// feasible KKT point with the lowest objective. Exponential in `K`.
pub fn nnls_oracle(sys: &GramSystem) -> Result<DenseMatrix> {
    let k = sys.k();
    if k > ORACLE_MAX_K {
        return Err(Error::OracleTooLarge { k, max: ORACLE_MAX_K });
    }
    let m = sys.rhs.rows();
    let live = sys.live_coords();
    let n = live.len();
    let g_scale = sys.gram.max_abs().max(1.0);
    let mut out = DenseMatrix::zeros(m, k);
    for row in 0..m {
        let r: Vec<f64> = live.iter().map(|&i| sys.rhs.get(row, i)).collect();
        let r_scale = r.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1u32 << n) {
            let passive: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            let mut x = vec![0.0; n];
            if !passive.is_empty() {
                let a: Vec<Vec<f64>> = passive
                    .iter()
                    .map(|&p| passive.iter().map(|&q| sys.gram.get(live[p], live[q])).collect())
                    .collect();
                let rhs: Vec<f64> = passive.iter().map(|&p| r[p]).collect();
                let Some(sol) = gauss_solve(a, rhs, 1e-13 * g_scale) else {
                    continue;
                };
                if sol.iter().any(|&v| v < -1e-12 * r_scale) {
                    continue;
                }
                for (&p, v) in passive.iter().zip(sol) {
                    x[p] = nonneg(v);
                }
            }
            let mut feasible = true;
            for i in (0..n).filter(|i| mask & (1 << i) == 0) {
                let g: f64 = (0..n).map(|q| x[q] * sys.gram.get(live[q], live[i])).sum::<f64>() - r[i];
                if g < -1e-9 * r_scale.max(g_scale) {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                continue;
            }
            let obj = {
                let gx: Vec<f64> = (0..n)
                    .map(|i| (0..n).map(|q| sys.gram.get(live[i], live[q]) * x[q]).sum())
                    .collect();
                (0..n).map(|i| 0.5 * x[i] * gx[i] - x[i] * r[i]).sum::<f64>()
            };
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
        let (_, x) = best.ok_or(Error::DegenerateGram {
            reason: "oracle found no KKT point",
        })?;
        for (&i, v) in live.iter().zip(x) {
            out.set(row, i, v);
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting; `None` when a pivot falls
/// below `pivot_tol`.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, pivot_tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= pivot_tol {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Gram restricted to the live coordinates, stored dense row-major.
struct SubGram {
    n: usize,
    g: Vec<f64>,
    scale: f64,
}

impl SubGram {
    fn new(gram: &DenseMatrix, live: &[usize]) -> Self {
        let n = live.len();
        let mut g = Vec::with_capacity(n * n);
        for &i in live {
            for &j in live {
                g.push(gram.get(i, j));
            }
        }
        let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        Self { n, g, scale }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    fn gradient(&self, x: &[f64], r: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = dot(&self.g[i * self.n..(i + 1) * self.n], x) - r[i];
        }
    }

    fn principal(&self, idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(idx.len(), idx.len(), |a, b| self.at(idx[a], idx[b]))
    }
}

fn kkt_residual_dense(g: &SubGram, x: &[f64], r: &[f64]) -> f64 {
    let mut grad = vec![0.0; g.n];
    g.gradient(x, r, &mut grad);
    let mut worst: f64 = 0.0;
    for (&xk, &gk) in x.iter().zip(&grad) {
        worst = worst.max(-xk).max(-gk);
    }
    worst.max(dot(x, &grad).abs())
}

fn kkt_tolerance(g: &SubGram, x: &[f64], r: &[f64]) -> f64 {
    let x_scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let r_scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    KKT_TOL * (1.0f64).max(g.scale * x_scale * x_scale).max(r_scale * x_scale).max(r_scale)
}

/// Returns the row solution and whether it meets the KKT tolerance.
fn solve_row(g: &SubGram, r: &[f64]) -> (Vec<f64>, bool) {
    let n = g.n;
    if n == 0 {
        return (Vec::new(), true);
    }
    let x = match principal_pivoting(g, r) {
        Some(x) => x,
        None => vec![0.0; n],
    };
    if kkt_residual_dense(g, &x, r) <= kkt_tolerance(g, &x, r) {
        return (x, true);
    }
    let x = projected_gradient(g, r, x);
    let ok = kkt_residual_dense(g, &x, r) <= kkt_tolerance(g, &x, r);
    (x, ok)
}

/// Block principal pivoting for one row. `None` asks for the fallback:
/// a singular passive block, too many non-improving exchanges, or the cap.
fn principal_pivoting(g: &SubGram, r: &[f64]) -> Option<Vec<f64>> {
    let n = g.n;
    let r_scale = r.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let grad_tol = 1e-12 * r_scale.max(g.scale);
    let max_iters = 100 * n;
    let max_stall = 3 * n;

    let mut passive = vec![false; n];
    let mut x = vec![0.0; n];
    let mut y: Vec<f64> = r.iter().map(|v| -v).collect();
    let mut best_infeasible = n + 1;
    let mut backup_budget = 3;
    let mut stall = 0;

    for _ in 0..max_iters {
        let infeasible: Vec<usize> = (0..n)
            .filter(|&i| if passive[i] { x[i] < 0.0 } else { y[i] < -grad_tol })
            .collect();
        if infeasible.is_empty() {
            for v in &mut x {
                *v = nonneg(*v);
            }
            return Some(x);
        }
        if infeasible.len() < best_infeasible {
            best_infeasible = infeasible.len();
            backup_budget = 3;
            stall = 0;
            for &i in &infeasible {
                passive[i] = !passive[i];
            }
        } else {
            stall += 1;
            if stall > max_stall {
                return None;
            }
            if backup_budget > 0 {
                backup_budget -= 1;
                for &i in &infeasible {
                    passive[i] = !passive[i];
                }
            } else {
                let last = *infeasible.last().unwrap();
                passive[last] = !passive[last];
            }
        }

        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        x.iter_mut().for_each(|v| *v = 0.0);
        if !idx.is_empty() {
            let chol = Cholesky::factor(&g.principal(&idx)).ok()?;
            let mut sol: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
            chol.solve_in_place(&mut sol);
            for (&i, v) in idx.iter().zip(sol) {
                x[i] = v;
            }
        }
        g.gradient(&x, r, &mut y);
        for &i in &idx {
            y[i] = 0.0;
        }
    }
    None
}

/// Projected gradient with fixed step `1 / lambda_max(G)`, started from `x0`
/// clamped to the feasible set.
fn projected_gradient(g: &SubGram, r: &[f64], x0: Vec<f64>) -> Vec<f64> {
    let n = g.n;
    let lambda = lambda_max(g);
    if !(lambda > 0.0) {
        return vec![0.0; n];
    }
    let step = 1.0 / lambda;
    let mut x: Vec<f64> = x0.into_iter().map(nonneg).collect();
    let mut grad = vec![0.0; n];
    for _ in 0..PG_MAX_ITERS {
        g.gradient(&x, r, &mut grad);
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let next = nonneg(x[i] - step * grad[i]);
            moved = moved.max((next - x[i]).abs());
            x[i] = next;
        }
        if moved == 0.0 {
            break;
        }
    }
    x
}

/// Largest eigenvalue of the PSD Gram by power iteration on the Rayleigh quotient.
fn lambda_max(g: &SubGram) -> f64 {
    let n = g.n;
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..200 {
        for i in 0..n {
            w[i] = dot(&g.g[i * n..(i + 1) * n], &v);
        }
        let vv = dot(&v, &v);
        if vv == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w) / vv;
        let norm = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if norm == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            v[i] = w[i] / norm;
        }
        if (next - est).abs() <= 1e-12 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    // The Rayleigh quotient approaches lambda_max from below; pad it so the
    // step never overshoots.
    est * 1.01
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sys(g: &[&[f64]], r: &[&[f64]]) -> GramSystem {
        GramSystem::new(
            DenseMatrix::from_rows(g).unwrap(),
            DenseMatrix::from_rows(r).unwrap(),
        )
        .unwrap()
    }

    fn close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
        a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_with_mixed_signs() {
        let s = sys(&[&[1., 0.], &[0., 1.]], &[&[1., -1.]]);
        let want = DenseMatrix::from_rows(&[&[1., 0.]]).unwrap();
        assert!(close(&nnls_rows(&s).unwrap(), &want, 1e-15));
        assert!(close(&nnls_oracle(&s).unwrap(), &want, 1e-15));
    }

    #[test]
    fn identity_with_nonnegative_rhs_returns_rhs() {
        let r = DenseMatrix::from_rows(&[&[0.5, 2., 0.], &[3., 0.25, 1.]]).unwrap();
        let s = GramSystem::new(DenseMatrix::identity(3), r.clone()).unwrap();
        assert!(close(&nnls_rows(&s).unwrap(), &r, 1e-15));
    }

    #[test]
    fn coupled_two_by_two() {
        let s = sys(&[&[2., 1.], &[1., 2.]], &[&[1., 1.]]);
        let x = nnls_rows(&s).unwrap();
        assert!((x.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((x.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_case_is_projection() {
        for (g, r) in [(2.0, 3.0), (4.0, -1.0), (0.5, 0.0)] {
            let s = sys(&[&[g]], &[&[r]]);
            let want = if r / g > 0.0 { r / g } else { 0.0 };
            assert!((nnls_rows(&s).unwrap().get(0, 0) - want).abs() < 1e-15);
            assert!((nnls_oracle(&s).unwrap().get(0, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_diagonal_coordinate_is_dropped() {
        let s = sys(&[&[0., 0.], &[0., 2.]], &[&[0., 4.]]);
        let x = nnls_rows(&s).unwrap();
        assert_eq!(x.get(0, 0), 0.0);
        assert!((x.get(0, 1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_asymmetric_or_negative_gram() {
        let asym = GramSystem::new(
            DenseMatrix::from_rows(&[&[1., 0.5], &[0., 1.]]).unwrap(),
            DenseMatrix::zeros(1, 2),
        );
        assert!(matches!(asym, Err(Error::DegenerateGram { .. })));
        let neg = GramSystem::new(DenseMatrix::from_rows(&[&[-1.]]).unwrap(), DenseMatrix::zeros(1, 1));
        assert!(matches!(neg, Err(Error::DegenerateGram { .. })));
    }

    #[test]
    fn singular_psd_gram_still_solves() {
        // G = a a^T with a = (1, 1): rank one; any b1 + b2 = 2 is optimal.
        let s = sys(&[&[1., 1.], &[1., 1.]], &[&[2., 2.]]);
        let x = nnls_rows(&s).unwrap();
        assert!(x.is_nonnegative());
        assert!((x.get(0, 0) + x.get(0, 1) - 2.0).abs() < 1e-8);
        let oracle = nnls_oracle(&s).unwrap();
        assert!((s.objective(&x) - s.objective(&oracle)).abs() < 1e-8);
    }

    #[test]
    fn oracle_refuses_large_k() {
        let s = GramSystem::new(DenseMatrix::identity(13), DenseMatrix::zeros(1, 13)).unwrap();
        assert_eq!(nnls_oracle(&s).unwrap_err(), Error::OracleTooLarge { k: 13, max: 12 });
    }

    fn psd_system() -> impl Strategy<Value = GramSystem> {
        (1usize..=6, 1usize..4, 1usize..5).prop_flat_map(|(k, extra, m)| {
            let rows = k + extra;
            (
                proptest::collection::vec(-1.0f64..1.0, rows * k),
                proptest::collection::vec(-2.0f64..2.0, m * k),
            )
                .prop_map(move |(a, r)| {
                    let a = DenseMatrix::new(rows, k, a).unwrap();
                    let g = crate::matrix::matmul_tn(&a, &a).unwrap();
                    GramSystem::new(g, DenseMatrix::new(m, k, r).unwrap()).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn matches_oracle_objective(s in psd_system()) {
            let x = nnls_rows(&s).unwrap();
            let o = nnls_oracle(&s).unwrap();
            prop_assert!(x.is_nonnegative());
            let (fx, fo) = (s.objective(&x), s.objective(&o));
            prop_assert!(fx <= fo + 1e-8 * fo.abs().max(1.0), "{fx} vs {fo}");
            prop_assert!(s.kkt_residual(&x) <= 1e-8);
        }

        #[test]
        fn positive_scaling_of_rhs_scales_solution(s in psd_system(), scale in 0.01f64..100.0) {
            let x = nnls_rows(&s).unwrap();
            let mut r = s.rhs().clone();
            r.scale(scale);
            let scaled = nnls_rows(&GramSystem::new(s.gram().clone(), r).unwrap()).unwrap();
            let tol = 1e-9 * scale.max(1.0) * x.max_abs().max(1.0);
            for (a, b) in scaled.as_slice().iter().zip(x.as_slice()) {
                prop_assert!((a - scale * b).abs() <= tol, "{a} vs {}", scale * b);
            }
        }
    }
}
