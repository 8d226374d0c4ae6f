//! Convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ zᵀPz + qᵀz
//! subject to  A z  = b
//!             G z <= h
//!             lb <= z <= ub      (entries may be ±∞)
//! ```
//!
//! Multipliers follow the `∇f = Σ multiplier · ∇constraint` convention with every
//! inequality written as `c(z) >= 0`. Stationarity therefore reads
//!
//! ```text
//! P z + q - Aᵀ dual_eq + Gᵀ dual_ineq - dual_box = 0
//! ```
//!
//! with `dual_ineq >= 0` and `dual_box` positive on active lower bounds and negative
//! on active upper bounds. With this convention `dual_eq` is the sensitivity of the
//! optimal value to `b`.

mod ipm;

use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

pub use ipm::IpmSettings;

/// A convex QP in the standard form described in the module docs.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Quadratic term, stored with both triangles.
    pub p: CscMatrix<f64>,
    pub q: Vec<f64>,
    pub a_eq: CscMatrix<f64>,
    pub b_eq: Vec<f64>,
    pub g_ineq: CscMatrix<f64>,
    pub h_ineq: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
    pub dual_box: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Set when the solve did not reach optimality.
    pub diagnostic: Option<String>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Components of the KKT residual. [`kkt_residual`] returns their maximum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktBreakdown {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktBreakdown {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h_ineq.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let pz = spmv(&self.p, z);
        0.5 * dot(z, &pz) + dot(&self.q, z)
    }

    /// Checks dimensions, symmetry and positive semidefiniteness of `P`.
    pub fn check(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::dim("P", n, self.p.nrows().max(self.p.ncols())));
        }
        if self.a_eq.ncols() != n {
            return Err(Error::dim("A columns", n, self.a_eq.ncols()));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::dim("b", self.a_eq.nrows(), self.b_eq.len()));
        }
        if self.g_ineq.ncols() != n {
            return Err(Error::dim("G columns", n, self.g_ineq.ncols()));
        }
        if self.g_ineq.nrows() != self.h_ineq.len() {
            return Err(Error::dim("h", self.g_ineq.nrows(), self.h_ineq.len()));
        }
        if self.lb.len() != n {
            return Err(Error::dim("lb", n, self.lb.len()));
        }
        if self.ub.len() != n {
            return Err(Error::dim("ub", n, self.ub.len()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.q) || !finite(&self.b_eq) || !finite(&self.h_ineq) {
            return Err(Error::Qp("non-finite entry in q, b or h".into()));
        }
        if self.lb.iter().any(|x| x.is_nan() || *x == f64::INFINITY)
            || self.ub.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY)
        {
            return Err(Error::Qp("invalid bound".into()));
        }
        check_psd(&self.p)
    }
}

fn check_psd(p: &CscMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let dense = nalgebra::DMatrix::from(p);
    let scale = dense.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (dense[(i, j)] - dense[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Qp(format!("P is not symmetric at ({i}, {j})")));
            }
        }
    }
    // Gershgorin first; fall back to an eigenvalue probe.
    let gershgorin_ok = (0..n).all(|i| {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| dense[(i, j)].abs()).sum();
        dense[(i, i)] - off >= -1e-12 * scale
    });
    if gershgorin_ok {
        return Ok(());
    }
    let eig = nalgebra::SymmetricEigen::new(dense);
    let min = eig.eigenvalues.min();
    if min < -1e-9 * scale {
        return Err(Error::Qp(format!(
            "P is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Solves `p` to the absolute KKT tolerance `tol` with default settings.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iters: usize) -> Result<QpSolution> {
    solve_qp_with(
        p,
        &IpmSettings {
            tol,
            max_iters,
            ..IpmSettings::default()
        },
    )
}

pub fn solve_qp_with(p: &QpProblem, settings: &IpmSettings) -> Result<QpSolution> {
    if !(settings.tol > 0.0) {
        return Err(Error::Validation(format!(
            "tolerance must be positive, got {}",
            settings.tol
        )));
    }
    p.check()?;
    Ok(ipm::solve(p, settings))
}

/// Maximum of the primal, dual and complementarity residuals of `s` for `p`.
pub fn kkt_residual(p: &QpProblem, s: &QpSolution) -> Result<f64> {
    Ok(kkt_breakdown(p, s)?.max())
}

pub fn kkt_breakdown(p: &QpProblem, s: &QpSolution) -> Result<KktBreakdown> {
    let n = p.num_vars();
    if s.z.len() != n {
        return Err(Error::dim("z", n, s.z.len()));
    }
    if s.dual_eq.len() != p.num_eq() {
        return Err(Error::dim("dual_eq", p.num_eq(), s.dual_eq.len()));
    }
    if s.dual_ineq.len() != p.num_ineq() {
        return Err(Error::dim("dual_ineq", p.num_ineq(), s.dual_ineq.len()));
    }
    if s.dual_box.len() != n {
        return Err(Error::dim("dual_box", n, s.dual_box.len()));
    }
    Ok(breakdown_raw(p, &s.z, &s.dual_eq, &s.dual_ineq, &s.dual_box))
}

pub(crate) fn breakdown_raw(
    p: &QpProblem,
    z: &[f64],
    nu: &[f64],
    mu: &[f64],
    zbox: &[f64],
) -> KktBreakdown {
    let az = spmv(&p.a_eq, z);
    let gz = spmv(&p.g_ineq, z);
    let mut primal: f64 = 0.0;
    for (v, b) in az.iter().zip(&p.b_eq) {
        primal = primal.max((v - b).abs());
    }
    for (v, h) in gz.iter().zip(&p.h_ineq) {
        primal = primal.max(v - h);
    }
    for j in 0..z.len() {
        primal = primal.max(p.lb[j] - z[j]).max(z[j] - p.ub[j]);
    }

    let mut grad = spmv(&p.p, z);
    for (g, q) in grad.iter_mut().zip(&p.q) {
        *g += q;
    }
    let at_nu = spmv_t(&p.a_eq, nu);
    let gt_mu = spmv_t(&p.g_ineq, mu);
    let mut dual: f64 = 0.0;
    for j in 0..z.len() {
        dual = dual.max((grad[j] - at_nu[j] + gt_mu[j] - zbox[j]).abs());
    }
    for m in mu {
        dual = dual.max(-m);
    }

    let mut comp: f64 = 0.0;
    for (m, (v, h)) in mu.iter().zip(gz.iter().zip(&p.h_ineq)) {
        comp = comp.max((m * (h - v)).abs());
    }
    for j in 0..z.len() {
        let d = zbox[j];
        if d > 0.0 {
            if p.lb[j].is_finite() {
                comp = comp.max((d * (z[j] - p.lb[j])).abs());
            } else {
                dual = dual.max(d);
            }
        } else if d < 0.0 {
            if p.ub[j].is_finite() {
                comp = comp.max((d * (p.ub[j] - z[j])).abs());
            } else {
                dual = dual.max(-d);
            }
        }
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !(finite(z) && finite(nu) && finite(mu) && finite(zbox)) {
        return KktBreakdown {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            complementarity: f64::INFINITY,
        };
    }
    KktBreakdown {
        primal: primal.max(0.0),
        dual,
        complementarity: comp,
    }
}

/// Incremental assembly of a [`QpProblem`] from triplets.
#[derive(Debug, Clone)]
pub struct QpBuilder {
    n: usize,
    p: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl QpBuilder {
    /// `n` free variables with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p: Vec::new(),
            q: vec![0.0; n],
            a: Vec::new(),
            b: Vec::new(),
            g: Vec::new(),
            h: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `v` to `P[i][j]` and `P[j][i]` (once when `i == j`).
    pub fn add_quad(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        self.p.push((i, j, v));
        if i != j {
            self.p.push((j, i, v));
        }
        self
    }

    pub fn add_linear(&mut self, j: usize, v: f64) -> &mut Self {
        self.q[j] += v;
        self
    }

    pub fn bounds(&mut self, j: usize, lo: f64, hi: f64) -> &mut Self {
        self.lb[j] = lo;
        self.ub[j] = hi;
        self
    }

    /// Appends `Σ coef·z[col] = rhs` and returns its row index.
    pub fn eq_row(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.b.len();
        self.a.extend(terms.iter().map(|&(c, v)| (r, c, v)));
        self.b.push(rhs);
        r
    }

    /// Appends `Σ coef·z[col] <= rhs` and returns its row index.
    pub fn le_row(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.h.len();
        self.g.extend(terms.iter().map(|&(c, v)| (r, c, v)));
        self.h.push(rhs);
        r
    }

    pub fn build(self) -> QpProblem {
        let n = self.n;
        let csc = |rows: usize, trip: &[(usize, usize, f64)]| {
            let mut coo = CooMatrix::new(rows, n);
            for &(r, c, v) in trip {
                coo.push(r, c, v);
            }
            CscMatrix::from(&coo)
        };
        QpProblem {
            p: csc(n, &self.p),
            q: self.q,
            a_eq: csc(self.b.len(), &self.a),
            b_eq: self.b,
            g_ineq: csc(self.h.len(), &self.g),
            h_ineq: self.h,
            lb: self.lb,
            ub: self.ub,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `M x`
pub(crate) fn spmv(m: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (j, col) in m.col_iter().enumerate() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (&r, &v) in col.row_indices().iter().zip(col.values()) {
            out[r] += v * xj;
        }
    }
    out
}

/// `Mᵀ y`
pub(crate) fn spmv_t(m: &CscMatrix<f64>, y: &[f64]) -> Vec<f64> {
    m.col_iter()
        .map(|col| {
            col.row_indices()
                .iter()
                .zip(col.values())
                .map(|(&r, &v)| v * y[r])
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: f64, q: f64, lo: f64, hi: f64) -> QpBuilder {
        let mut b = QpBuilder::new(1);
        b.add_quad(0, 0, p).add_linear(0, q).bounds(0, lo, hi);
        b
    }

    #[test]
    fn active_lower_bound() {
        // min z² s.t. z >= 1
        let p = scalar(2.0, 0.0, 1.0, f64::INFINITY).build();
        let s = solve_qp(&p, 1e-10, 100).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 1.0).abs() < 1e-9);
        assert!((s.dual_box[0] - 2.0).abs() < 1e-8);
        assert!(kkt_residual(&p, &s).unwrap() <= 1e-8);
    }

    #[test]
    fn equality_multiplier_is_sensitivity() {
        // min (z-3)² s.t. z = 1  → dual_eq = d/db (b-3)² at b = 1 = -4
        let mut b = scalar(2.0, -6.0, f64::NEG_INFINITY, f64::INFINITY);
        b.eq_row(&[(0, 1.0)], 1.0);
        let p = b.build();
        let s = solve_qp(&p, 1e-10, 100).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 1.0).abs() < 1e-9);
        assert!((s.dual_eq[0] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn perturbed_point_residual_grows() {
        let p = scalar(2.0, 0.0, 1.0, f64::INFINITY).build();
        let mut s = solve_qp(&p, 1e-10, 100).unwrap();
        assert!(kkt_residual(&p, &s).unwrap() <= 1e-8);
        s.z[0] += 0.1;
        // active gradient is 2 at z = 1
        assert!(kkt_residual(&p, &s).unwrap() >= 0.1 * 2.0 - 1e-12);
    }

    #[test]
    fn infeasible_point_reports_violation() {
        let mut b = QpBuilder::new(2);
        b.le_row(&[(0, 1.0), (1, 1.0)], 1.0);
        b.eq_row(&[(0, 1.0)], 0.5);
        let p = b.build();
        let s = QpSolution {
            z: vec![0.5, 1.5],
            dual_eq: vec![0.0],
            dual_ineq: vec![0.0],
            dual_box: vec![0.0, 0.0],
            status: QpStatus::MaxIters,
            kkt_residual: f64::NAN,
            iterations: 0,
            diagnostic: None,
        };
        let k = kkt_breakdown(&p, &s).unwrap();
        assert!((k.primal - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_psd() {
        let p = scalar(-1.0, 0.0, 0.0, 1.0).build();
        assert!(matches!(solve_qp(&p, 1e-8, 50), Err(Error::Qp(_))));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut p = scalar(1.0, 0.0, 0.0, 1.0).build();
        p.lb.push(0.0);
        assert!(matches!(solve_qp(&p, 1e-8, 50), Err(Error::Dimension { .. })));
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let p = scalar(1.0, 0.0, 2.0, 1.0).build();
        let s = solve_qp(&p, 1e-8, 50).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.diagnostic.is_some());
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let mut b = QpBuilder::new(2);
        b.add_quad(0, 0, 1.0).add_quad(1, 1, 1.0);
        b.bounds(0, 0.0, 1.0).bounds(1, 0.0, 1.0);
        b.eq_row(&[(0, 1.0), (1, 1.0)], 3.0);
        let s = solve_qp(&b.build(), 1e-8, 100).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn pure_lp_with_fixed_variable() {
        // min -x - y s.t. x + y <= 1.5, 0 <= x <= 1, y fixed at 0.25
        let mut b = QpBuilder::new(2);
        b.add_linear(0, -1.0).add_linear(1, -1.0);
        b.bounds(0, 0.0, 1.0).bounds(1, 0.25, 0.25);
        b.le_row(&[(0, 1.0), (1, 1.0)], 1.5);
        let p = b.build();
        let s = solve_qp(&p, 1e-9, 100).unwrap();
        assert!(s.is_optimal(), "{:?}", s);
        assert!((s.z[0] - 1.0).abs() < 1e-8);
        assert_eq!(s.z[1], 0.25);
        assert!(kkt_residual(&p, &s).unwrap() <= 1e-9);
    }
}
