//! Mehrotra predictor-corrector interior point method.
//!
//! Box constraints are kept strictly feasible; equality and general inequality rows
//! are handled infeasibly. Each Newton system is reduced to constraint space for
//! every variable whose Hessian row is diagonal and positive, so the dense factor is
//! `(#coupled vars + #rows)` wide instead of `(n + #rows)`.

use nalgebra::{DMatrix, DVector};

use super::{breakdown_raw, spmv, spmv_t, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone)]
pub struct IpmSettings {
    /// Absolute tolerance on the KKT residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Fraction-to-boundary factor for step lengths.
    pub step_fraction: f64,
    /// Iterative refinement passes per Newton solve.
    pub refinement: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
            step_fraction: 0.995,
            refinement: 2,
        }
    }
}

/// Problem after fixed variables and rows without free columns have been removed.
struct Reduced {
    qp: QpProblem,
    /// Original index of each reduced variable.
    free: Vec<usize>,
    fixed: Vec<(usize, f64)>,
    /// Original index of each kept equality and inequality row.
    eq_rows: Vec<usize>,
    in_rows: Vec<usize>,
}

/// Lower limit on barrier Hessian diagonals (primal regularization).
const PRIMAL_REG: f64 = 1e-12;
/// Diagonal curvature below which a variable stays in the dense block.
const ELIMINATION_FLOOR: f64 = 1e-7;

fn is_fixed(lo: f64, hi: f64) -> bool {
    lo.is_finite() && hi.is_finite() && hi - lo <= 1e-13 * lo.abs().max(hi.abs()).max(1.0)
}

/// Rows of `m` touching at least one free column.
fn live_rows(m: &nalgebra_sparse::CscMatrix<f64>, map: &[usize]) -> Vec<bool> {
    let mut live = vec![false; m.nrows()];
    for (j, col) in m.col_iter().enumerate() {
        if map[j] == usize::MAX {
            continue;
        }
        for (&r, &v) in col.row_indices().iter().zip(col.values()) {
            if v != 0.0 {
                live[r] = true;
            }
        }
    }
    live
}

/// Returns the reduced problem, or a diagnostic when a removed row is violated.
fn reduce(p: &QpProblem, tol: f64) -> Result<Reduced, String> {
    let n = p.num_vars();
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    let mut fixed = Vec::new();
    for j in 0..n {
        if is_fixed(p.lb[j], p.ub[j]) {
            fixed.push((j, p.lb[j]));
        } else {
            map[j] = free.len();
            free.push(j);
        }
    }
    let eq_live = live_rows(&p.a_eq, &map);
    let in_live = live_rows(&p.g_ineq, &map);
    if fixed.is_empty() && eq_live.iter().all(|&l| l) && in_live.iter().all(|&l| l) {
        return Ok(Reduced {
            qp: p.clone(),
            free,
            fixed,
            eq_rows: (0..p.num_eq()).collect(),
            in_rows: (0..p.num_ineq()).collect(),
        });
    }
    let mut zfix = vec![0.0; n];
    for &(j, v) in &fixed {
        zfix[j] = v;
    }
    // Constant parts contributed by the fixed variables.
    let pz = spmv(&p.p, &zfix);
    let az = spmv(&p.a_eq, &zfix);
    let gz = spmv(&p.g_ineq, &zfix);
    let eq_rows: Vec<usize> = (0..p.num_eq()).filter(|&r| eq_live[r]).collect();
    let in_rows: Vec<usize> = (0..p.num_ineq()).filter(|&r| in_live[r]).collect();
    for r in (0..p.num_eq()).filter(|&r| !eq_live[r]) {
        let gap = p.b_eq[r] - az[r];
        if gap.abs() > tol {
            return Err(format!("equality row {r} has no free variable and misses its target by {gap:e}"));
        }
    }
    for r in (0..p.num_ineq()).filter(|&r| !in_live[r]) {
        let gap = gz[r] - p.h_ineq[r];
        if gap > tol {
            return Err(format!("inequality row {r} has no free variable and is violated by {gap:e}"));
        }
    }
    let mut row_map_eq = vec![usize::MAX; p.num_eq()];
    for (k, &r) in eq_rows.iter().enumerate() {
        row_map_eq[r] = k;
    }
    let mut row_map_in = vec![usize::MAX; p.num_ineq()];
    for (k, &r) in in_rows.iter().enumerate() {
        row_map_in[r] = k;
    }
    let sub = |m: &nalgebra_sparse::CscMatrix<f64>, rows: &[usize], nrows: usize| {
        let mut coo = nalgebra_sparse::CooMatrix::new(nrows, free.len());
        for (j, col) in m.col_iter().enumerate() {
            if map[j] == usize::MAX {
                continue;
            }
            for (&r, &v) in col.row_indices().iter().zip(col.values()) {
                if rows[r] != usize::MAX {
                    coo.push(rows[r], map[j], v);
                }
            }
        }
        nalgebra_sparse::CscMatrix::from(&coo)
    };
    let nf = free.len();
    let qp = QpProblem {
        p: sub(&p.p, &map, nf),
        q: free.iter().map(|&j| p.q[j] + pz[j]).collect(),
        a_eq: sub(&p.a_eq, &row_map_eq, eq_rows.len()),
        b_eq: eq_rows.iter().map(|&r| p.b_eq[r] - az[r]).collect(),
        g_ineq: sub(&p.g_ineq, &row_map_in, in_rows.len()),
        h_ineq: in_rows.iter().map(|&r| p.h_ineq[r] - gz[r]).collect(),
        lb: free.iter().map(|&j| p.lb[j]).collect(),
        ub: free.iter().map(|&j| p.ub[j]).collect(),
    };
    Ok(Reduced {
        qp,
        free,
        fixed,
        eq_rows,
        in_rows,
    })
}

/// Reference to the original problem's solution layout.
struct Expanded {
    z: Vec<f64>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    zbox: Vec<f64>,
}

fn expand(orig: &QpProblem, red: &Reduced, z: &[f64], nu: &[f64], mu: &[f64], zb: &[f64]) -> Expanded {
    let n = orig.num_vars();
    let mut zf = vec![0.0; n];
    let mut zbox = vec![0.0; n];
    for (k, &j) in red.free.iter().enumerate() {
        zf[j] = z[k];
        zbox[j] = zb[k];
    }
    for &(j, v) in &red.fixed {
        zf[j] = v;
    }
    let mut nu_full = vec![0.0; orig.num_eq()];
    for (k, &r) in red.eq_rows.iter().enumerate() {
        nu_full[r] = nu[k];
    }
    let mut mu_full = vec![0.0; orig.num_ineq()];
    for (k, &r) in red.in_rows.iter().enumerate() {
        mu_full[r] = mu[k];
    }
    if !red.fixed.is_empty() {
        // Box multipliers of fixed variables absorb the stationarity residual.
        let mut grad = spmv(&orig.p, &zf);
        let at = spmv_t(&orig.a_eq, &nu_full);
        let gt = spmv_t(&orig.g_ineq, &mu_full);
        for j in 0..n {
            grad[j] += orig.q[j] - at[j] + gt[j];
        }
        for &(j, _) in &red.fixed {
            zbox[j] = grad[j];
        }
    }
    Expanded {
        z: zf,
        nu: nu_full,
        mu: mu_full,
        zbox,
    }
}

pub(super) fn solve(orig: &QpProblem, settings: &IpmSettings) -> QpSolution {
    let n = orig.num_vars();
    if let Some(j) = (0..n).find(|&j| orig.lb[j] > orig.ub[j]) {
        return QpSolution {
            z: (0..n)
                .map(|k| clamp_finite(0.0, orig.lb[k], orig.ub[k]))
                .collect(),
            dual_eq: vec![0.0; orig.num_eq()],
            dual_ineq: vec![0.0; orig.num_ineq()],
            dual_box: vec![0.0; n],
            status: QpStatus::Infeasible,
            kkt_residual: orig.lb[j] - orig.ub[j],
            iterations: 0,
            diagnostic: Some(format!(
                "lower bound {} exceeds upper bound {} on variable {j}",
                orig.lb[j], orig.ub[j]
            )),
        };
    }
    let red = match reduce(orig, settings.tol) {
        Ok(red) => red,
        Err(msg) => {
            let z: Vec<f64> = (0..n).map(|k| clamp_finite(0.0, orig.lb[k], orig.ub[k])).collect();
            let (nu, mu, zb) = (vec![0.0; orig.num_eq()], vec![0.0; orig.num_ineq()], vec![0.0; n]);
            let kkt = breakdown_raw(orig, &z, &nu, &mu, &zb).max();
            return QpSolution {
                z,
                dual_eq: nu,
                dual_ineq: mu,
                dual_box: zb,
                status: QpStatus::Infeasible,
                kkt_residual: kkt,
                iterations: 0,
                diagnostic: Some(msg),
            };
        }
    };
    let mut ipm = Ipm::new(&red.qp, settings);
    let outcome = ipm.run();
    let ex = expand(orig, &red, &ipm.z, &ipm.nu, &ipm.mu, &ipm.zbox());
    let kkt = breakdown_raw(orig, &ex.z, &ex.nu, &ex.mu, &ex.zbox);
    let resid = kkt.max();
    let (status, diagnostic) = match outcome {
        Outcome::Converged if resid <= settings.tol => (QpStatus::Optimal, None),
        Outcome::Converged => (
            QpStatus::MaxIters,
            Some(format!(
                "reduced problem converged but full KKT residual is {resid:e}"
            )),
        ),
        Outcome::Stalled(msg) => {
            if kkt.primal > settings.tol.sqrt() {
                (QpStatus::Infeasible, Some(msg))
            } else {
                (QpStatus::MaxIters, Some(msg))
            }
        }
        Outcome::MaxIters => {
            if kkt.primal > settings.tol.sqrt() && ipm.primal_stagnant() {
                (
                    QpStatus::Infeasible,
                    Some(format!(
                        "primal residual stagnated at {:e} after {} iterations",
                        kkt.primal, ipm.iter
                    )),
                )
            } else {
                (
                    QpStatus::MaxIters,
                    Some(format!(
                        "iteration limit reached with KKT residual {resid:e}"
                    )),
                )
            }
        }
    };
    QpSolution {
        z: ex.z,
        dual_eq: ex.nu,
        dual_ineq: ex.mu,
        dual_box: ex.zbox,
        status,
        kkt_residual: resid,
        iterations: ipm.iter,
        diagnostic,
    }
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    let v = if lo.is_finite() { v.max(lo) } else { v };
    if hi.is_finite() {
        v.min(hi)
    } else {
        v
    }
}

enum Outcome {
    Converged,
    Stalled(String),
    MaxIters,
}

struct Ipm<'a> {
    p: &'a QpProblem,
    settings: &'a IpmSettings,
    n: usize,
    m_eq: usize,
    m_in: usize,
    z: Vec<f64>,
    nu: Vec<f64>,
    mu: Vec<f64>,
    s: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    has_l: Vec<bool>,
    has_u: Vec<bool>,
    /// Variables always kept in the dense block: non-diagonal Hessian rows, or no
    /// curvature and no bounds. Others join per iteration when their barrier
    /// curvature becomes too small to eliminate safely.
    always_coupled: Vec<bool>,
    pdiag: Vec<f64>,
    /// Columns of `C = [A; G]` as `(row, value)` lists.
    ccols: Vec<Vec<(usize, f64)>>,
    iter: usize,
    primal_hist: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    req: Vec<f64>,
    rin: Vec<f64>,
}

impl Residuals {
    fn primal(&self) -> f64 {
        inf_norm(&self.req).max(inf_norm(&self.rin))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

struct Direction {
    dz: Vec<f64>,
    dnu: Vec<f64>,
    dmu: Vec<f64>,
    ds: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a QpProblem, settings: &'a IpmSettings) -> Self {
        let n = p.num_vars();
        let m_eq = p.num_eq();
        let m_in = p.num_ineq();
        let has_l: Vec<bool> = p.lb.iter().map(|v| v.is_finite()).collect();
        let has_u: Vec<bool> = p.ub.iter().map(|v| v.is_finite()).collect();

        let mut pdiag = vec![0.0; n];
        let mut offdiag = vec![false; n];
        for (j, col) in p.p.col_iter().enumerate() {
            for (&r, &v) in col.row_indices().iter().zip(col.values()) {
                if r == j {
                    pdiag[j] += v;
                } else if v != 0.0 {
                    offdiag[j] = true;
                }
            }
        }
        let always_coupled: Vec<bool> = (0..n)
            .map(|j| offdiag[j] || (pdiag[j] <= 0.0 && !(has_l[j] || has_u[j])))
            .collect();

        // Interior starting point for the box; unit slacks and multipliers otherwise.
        let z: Vec<f64> = (0..n)
            .map(|j| match (has_l[j], has_u[j]) {
                (true, true) => 0.5 * (p.lb[j] + p.ub[j]),
                (true, false) => p.lb[j].max(0.0) + 1.0,
                (false, true) => p.ub[j].min(0.0) - 1.0,
                (false, false) => 0.0,
            })
            .collect();
        let gz = spmv(&p.g_ineq, &z);
        let s: Vec<f64> = gz
            .iter()
            .zip(&p.h_ineq)
            .map(|(g, h)| (h - g).max(1.0))
            .collect();
        let ccols = (0..n)
            .map(|j| {
                let a = p.a_eq.col(j);
                let g = p.g_ineq.col(j);
                a.row_indices()
                    .iter()
                    .zip(a.values())
                    .map(|(&r, &v)| (r, v))
                    .chain(
                        g.row_indices()
                            .iter()
                            .zip(g.values())
                            .map(|(&r, &v)| (m_eq + r, v)),
                    )
                    .collect()
            })
            .collect();
        Self {
            p,
            settings,
            n,
            m_eq,
            m_in,
            z,
            nu: vec![0.0; m_eq],
            mu: vec![1.0; m_in],
            s,
            zl: has_l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            zu: has_u.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            has_l,
            has_u,
            always_coupled,
            pdiag,
            ccols,
            iter: 0,
            primal_hist: Vec::new(),
        }
    }

    fn zbox(&self) -> Vec<f64> {
        self.zl.iter().zip(&self.zu).map(|(l, u)| l - u).collect()
    }

    fn wl(&self, j: usize) -> f64 {
        self.z[j] - self.p.lb[j]
    }

    fn wu(&self, j: usize) -> f64 {
        self.p.ub[j] - self.z[j]
    }

    fn pairs(&self) -> usize {
        self.m_in
            + self.has_l.iter().filter(|&&b| b).count()
            + self.has_u.iter().filter(|&&b| b).count()
    }

    fn mean_comp(&self) -> f64 {
        let k = self.pairs();
        if k == 0 {
            return 0.0;
        }
        let mut total: f64 = self.s.iter().zip(&self.mu).map(|(a, b)| a * b).sum();
        for j in 0..self.n {
            if self.has_l[j] {
                total += self.wl(j) * self.zl[j];
            }
            if self.has_u[j] {
                total += self.wu(j) * self.zu[j];
            }
        }
        total / k as f64
    }

    fn max_comp(&self) -> f64 {
        let mut c: f64 = self
            .s
            .iter()
            .zip(&self.mu)
            .fold(0.0, |a, (x, y)| a.max(x * y));
        for j in 0..self.n {
            if self.has_l[j] {
                c = c.max(self.wl(j) * self.zl[j]);
            }
            if self.has_u[j] {
                c = c.max(self.wu(j) * self.zu[j]);
            }
        }
        c
    }

    fn residuals(&self) -> Residuals {
        let p = self.p;
        let mut rd = spmv(&p.p, &self.z);
        let at = spmv_t(&p.a_eq, &self.nu);
        let gt = spmv_t(&p.g_ineq, &self.mu);
        for j in 0..self.n {
            rd[j] += p.q[j] - at[j] + gt[j] - self.zl[j] + self.zu[j];
        }
        let mut req = spmv(&p.a_eq, &self.z);
        for (r, b) in req.iter_mut().zip(&p.b_eq) {
            *r -= b;
        }
        let mut rin = spmv(&p.g_ineq, &self.z);
        for ((r, h), s) in rin.iter_mut().zip(&p.h_ineq).zip(&self.s) {
            *r += s - h;
        }
        Residuals { rd, req, rin }
    }

    fn primal_stagnant(&self) -> bool {
        let h = &self.primal_hist;
        if h.len() < 10 {
            return false;
        }
        let recent = h[h.len() - 1];
        let earlier = h[h.len() - 10];
        recent > 0.5 * earlier
    }

    fn run(&mut self) -> Outcome {
        let tol = self.settings.tol;
        let target = 0.1 * tol;
        let mut small_steps = 0;
        while self.iter < self.settings.max_iters {
            let res = self.residuals();
            let primal = res.primal();
            let dual = inf_norm(&res.rd);
            let comp = self.max_comp();
            self.primal_hist.push(primal);
            if !(primal.is_finite() && dual.is_finite() && comp.is_finite()) {
                return Outcome::Stalled("non-finite residual".into());
            }
            if primal <= target && dual <= target && comp <= target {
                return Outcome::Converged;
            }
            // Divergence of the iterates signals an infeasible or unbounded instance.
            let scale = inf_norm(&self.z).max(inf_norm(&self.mu)).max(inf_norm(&self.nu));
            if !scale.is_finite() || scale > 1e14 {
                return Outcome::Stalled(format!(
                    "iterates diverged (norm {scale:e}) with primal residual {primal:e}"
                ));
            }
            self.iter += 1;

            let mu_avg = self.mean_comp();
            let Some(kkt) = self.factor() else {
                return Outcome::Stalled("singular Newton system".into());
            };

            // Predictor.
            let aff = self.direction(&kkt, &res, 0.0, None);
            let alpha_aff = self.step_length(&aff, 1.0);
            let sigma = if self.pairs() == 0 {
                0.0
            } else {
                let mu_aff = self.comp_after(&aff, alpha_aff);
                if mu_avg > 0.0 {
                    (mu_aff / mu_avg).powi(3).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            };

            // Corrector.
            let dir = self.direction(&kkt, &res, sigma * mu_avg, Some(&aff));
            let alpha = self.step_length(&dir, self.settings.step_fraction);
            self.apply(&dir, alpha);

            if alpha < 1e-10 {
                small_steps += 1;
                if small_steps >= 5 {
                    return Outcome::Stalled(format!(
                        "step length collapsed with primal residual {primal:e}"
                    ));
                }
            } else {
                small_steps = 0;
            }
        }
        Outcome::MaxIters
    }

    fn h_diag(&self, j: usize) -> f64 {
        let mut h = self.pdiag[j];
        if self.has_l[j] {
            h += self.zl[j] / self.wl(j);
        }
        if self.has_u[j] {
            h += self.zu[j] / self.wu(j);
        }
        h
    }

    /// Factorizes the reduced Newton matrix
    /// `[H_FF  C_Fᵀ; C_F  -(E + C_D H_D⁻¹ C_Dᵀ)]` with `C = [A; G]`.
    fn factor(&self) -> Option<Kkt> {
        let hdiag: Vec<f64> = (0..self.n).map(|j| self.h_diag(j).max(PRIMAL_REG)).collect();
        let mut coupled = Vec::new();
        let mut coupled_pos = vec![usize::MAX; self.n];
        for j in 0..self.n {
            if self.always_coupled[j] || hdiag[j] < ELIMINATION_FLOOR {
                coupled_pos[j] = coupled.len();
                coupled.push(j);
            }
        }
        let nf = coupled.len();
        let m = self.m_eq + self.m_in;
        let dim = nf + m;
        let mut k = DMatrix::<f64>::zeros(dim, dim);

        // H_FF
        for (a, &j) in coupled.iter().enumerate() {
            let col = self.p.p.col(j);
            for (&r, &v) in col.row_indices().iter().zip(col.values()) {
                let b = coupled_pos[r];
                if b != usize::MAX {
                    k[(b, a)] += v;
                }
            }
            k[(a, a)] += hdiag[j] - self.pdiag[j];
        }
        // -E
        for i in 0..self.m_in {
            k[(nf + self.m_eq + i, nf + self.m_eq + i)] -= self.s[i] / self.mu[i];
        }
        for j in 0..self.n {
            let entries = self.constraint_col(j);
            let pos = coupled_pos[j];
            if pos != usize::MAX {
                for &(r, v) in entries {
                    k[(nf + r, pos)] += v;
                    k[(pos, nf + r)] += v;
                }
            } else {
                let inv = 1.0 / hdiag[j];
                for &(r1, v1) in entries {
                    for &(r2, v2) in entries {
                        k[(nf + r1, nf + r2)] -= v1 * v2 * inv;
                    }
                }
            }
        }
        let lu = if dim == 0 {
            None
        } else {
            let lu = k.lu();
            if !lu.is_invertible() {
                return None;
            }
            Some(lu)
        };
        Some(Kkt {
            lu,
            hdiag,
            coupled,
            coupled_pos,
        })
    }

    /// Nonzeros of column `j` of `C = [A; G]` as `(row, value)`.
    fn constraint_col(&self, j: usize) -> &[(usize, f64)] {
        &self.ccols[j]
    }

    /// Newton direction for target complementarity `target`; `corr` adds the
    /// second-order Mehrotra term from the affine direction.
    fn direction(&self, kkt: &Kkt, res: &Residuals, target: f64, corr: Option<&Direction>) -> Direction {
        let n = self.n;
        // Complementarity right-hand sides.
        let r_s: Vec<f64> = (0..self.m_in)
            .map(|i| {
                let mut r = -self.s[i] * self.mu[i] + target;
                if let Some(c) = corr {
                    r -= c.ds[i] * c.dmu[i];
                }
                r
            })
            .collect();
        let r_l: Vec<f64> = (0..n)
            .map(|j| {
                if !self.has_l[j] {
                    return 0.0;
                }
                let mut r = -self.wl(j) * self.zl[j] + target;
                if let Some(c) = corr {
                    r -= c.dz[j] * c.dzl[j];
                }
                r
            })
            .collect();
        let r_u: Vec<f64> = (0..n)
            .map(|j| {
                if !self.has_u[j] {
                    return 0.0;
                }
                let mut r = -self.wu(j) * self.zu[j] + target;
                if let Some(c) = corr {
                    r += c.dz[j] * c.dzu[j];
                }
                r
            })
            .collect();

        let mut rhs1 = vec![0.0; n];
        for j in 0..n {
            let mut v = -res.rd[j];
            if self.has_l[j] {
                v += r_l[j] / self.wl(j);
            }
            if self.has_u[j] {
                v -= r_u[j] / self.wu(j);
            }
            rhs1[j] = v;
        }
        let mut rhs2 = vec![0.0; self.m_eq + self.m_in];
        for i in 0..self.m_eq {
            rhs2[i] = -res.req[i];
        }
        for i in 0..self.m_in {
            rhs2[self.m_eq + i] = -(r_s[i] + self.mu[i] * res.rin[i]) / self.mu[i];
        }

        let (dz, dy) = self.solve_full(kkt, &rhs1, &rhs2);

        let dnu: Vec<f64> = dy[..self.m_eq].iter().map(|v| -v).collect();
        let dmu: Vec<f64> = dy[self.m_eq..].to_vec();
        let gdz = spmv(&self.p.g_ineq, &dz);
        let ds: Vec<f64> = (0..self.m_in).map(|i| -res.rin[i] - gdz[i]).collect();
        let dzl: Vec<f64> = (0..n)
            .map(|j| {
                if self.has_l[j] {
                    (r_l[j] - self.zl[j] * dz[j]) / self.wl(j)
                } else {
                    0.0
                }
            })
            .collect();
        let dzu: Vec<f64> = (0..n)
            .map(|j| {
                if self.has_u[j] {
                    (r_u[j] + self.zu[j] * dz[j]) / self.wu(j)
                } else {
                    0.0
                }
            })
            .collect();
        Direction {
            dz,
            dnu,
            dmu,
            ds,
            dzl,
            dzu,
        }
    }

    /// Solves `[H Cᵀ; C -E] [dz; dy] = [r1; r2]` with iterative refinement.
    fn solve_full(&self, kkt: &Kkt, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut dz, mut dy) = self.solve_reduced(kkt, r1, r2);
        for _ in 0..self.settings.refinement {
            let (e1, e2) = self.full_residual(kkt, &dz, &dy, r1, r2);
            let (cz, cy) = self.solve_reduced(kkt, &e1, &e2);
            for (a, b) in dz.iter_mut().zip(&cz) {
                *a += b;
            }
            for (a, b) in dy.iter_mut().zip(&cy) {
                *a += b;
            }
        }
        (dz, dy)
    }

    fn full_residual(&self, kkt: &Kkt, dz: &[f64], dy: &[f64], r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        // H dz = P dz + (hdiag - pdiag) dz
        let mut h = spmv(&self.p.p, dz);
        for j in 0..n {
            h[j] += (kkt.hdiag[j] - self.pdiag[j]) * dz[j];
        }
        let at = spmv_t(&self.p.a_eq, &dy[..self.m_eq]);
        let gt = spmv_t(&self.p.g_ineq, &dy[self.m_eq..]);
        let e1: Vec<f64> = (0..n).map(|j| r1[j] - h[j] - at[j] - gt[j]).collect();
        let adz = spmv(&self.p.a_eq, dz);
        let gdz = spmv(&self.p.g_ineq, dz);
        let mut e2 = vec![0.0; self.m_eq + self.m_in];
        for i in 0..self.m_eq {
            e2[i] = r2[i] - adz[i];
        }
        for i in 0..self.m_in {
            let k = self.m_eq + i;
            e2[k] = r2[k] - gdz[i] + self.s[i] / self.mu[i] * dy[k];
        }
        (e1, e2)
    }

    fn solve_reduced(&self, kkt: &Kkt, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = kkt.coupled.len();
        let m = self.m_eq + self.m_in;
        let mut rhs = DVector::<f64>::zeros(nf + m);
        for (a, &j) in kkt.coupled.iter().enumerate() {
            rhs[a] = r1[j];
        }
        for i in 0..m {
            rhs[nf + i] = r2[i];
        }
        for j in 0..self.n {
            if kkt.coupled_pos[j] != usize::MAX {
                continue;
            }
            let inv = r1[j] / kkt.hdiag[j];
            for &(r, v) in self.constraint_col(j) {
                rhs[nf + r] -= v * inv;
            }
        }
        let sol = match &kkt.lu {
            Some(lu) => lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(nf + m)),
            None => rhs,
        };
        let dy: Vec<f64> = sol.as_slice()[nf..].to_vec();
        let mut dz = vec![0.0; self.n];
        for j in 0..self.n {
            let pos = kkt.coupled_pos[j];
            if pos != usize::MAX {
                dz[j] = sol[pos];
            } else {
                let ct: f64 = self
                    .constraint_col(j)
                    .iter()
                    .map(|&(r, v)| v * dy[r])
                    .sum();
                dz[j] = (r1[j] - ct) / kkt.hdiag[j];
            }
        }
        (dz, dy)
    }

    fn step_length(&self, d: &Direction, fraction: f64) -> f64 {
        let mut alpha: f64 = 1.0 / fraction;
        let mut limit = |x: f64, dx: f64| {
            if dx < 0.0 {
                alpha = alpha.min(-x / dx);
            }
        };
        for i in 0..self.m_in {
            limit(self.s[i], d.ds[i]);
            limit(self.mu[i], d.dmu[i]);
        }
        for j in 0..self.n {
            if self.has_l[j] {
                limit(self.wl(j), d.dz[j]);
                limit(self.zl[j], d.dzl[j]);
            }
            if self.has_u[j] {
                limit(self.wu(j), -d.dz[j]);
                limit(self.zu[j], d.dzu[j]);
            }
        }
        (fraction * alpha).min(1.0)
    }

    fn comp_after(&self, d: &Direction, a: f64) -> f64 {
        let k = self.pairs();
        let mut total = 0.0;
        for i in 0..self.m_in {
            total += (self.s[i] + a * d.ds[i]) * (self.mu[i] + a * d.dmu[i]);
        }
        for j in 0..self.n {
            if self.has_l[j] {
                total += (self.wl(j) + a * d.dz[j]) * (self.zl[j] + a * d.dzl[j]);
            }
            if self.has_u[j] {
                total += (self.wu(j) - a * d.dz[j]) * (self.zu[j] + a * d.dzu[j]);
            }
        }
        total / k as f64
    }

    fn apply(&mut self, d: &Direction, a: f64) {
        for j in 0..self.n {
            self.z[j] += a * d.dz[j];
            if self.has_l[j] {
                self.zl[j] += a * d.dzl[j];
            }
            if self.has_u[j] {
                self.zu[j] += a * d.dzu[j];
            }
        }
        for i in 0..self.m_eq {
            self.nu[i] += a * d.dnu[i];
        }
        for i in 0..self.m_in {
            self.s[i] += a * d.ds[i];
            self.mu[i] += a * d.dmu[i];
        }
    }
}

struct Kkt {
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Regularized diagonal of the barrier Hessian.
    hdiag: Vec<f64>,
    /// Variables kept in the dense block for this factorization.
    coupled: Vec<usize>,
    coupled_pos: Vec<usize>,
}
