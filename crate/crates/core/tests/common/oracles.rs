//! Independent numerical oracles shared by the test targets.

use microtrade::qp::{solve_qp, QpBuilder, QpProblem, QpSolution};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dense(p: &QpProblem) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from(&p.p), DMatrix::from(&p.a_eq), DMatrix::from(&p.g_ineq))
}

/// KKT residual recomputed with dense algebra, independent of the crate's own
/// residual routine.
pub fn dense_kkt(p: &QpProblem, s: &QpSolution) -> f64 {
    let (pm, a, g) = dense(p);
    let z = DVector::from_column_slice(&s.z);
    let nu = DVector::from_column_slice(&s.dual_eq);
    let mu = DVector::from_column_slice(&s.dual_ineq);
    let zb = DVector::from_column_slice(&s.dual_box);
    let mut worst: f64 = 0.0;
    let az = &a * &z;
    for (v, b) in az.iter().zip(&p.b_eq) {
        worst = worst.max((v - b).abs());
    }
    let gz = &g * &z;
    for ((v, h), m) in gz.iter().zip(&p.h_ineq).zip(mu.iter()) {
        worst = worst.max(v - h).max(-m).max((m * (h - v)).abs());
    }
    let stat = &pm * &z + DVector::from_column_slice(&p.q) - a.transpose() * nu + g.transpose() * mu - zb;
    worst = worst.max(stat.amax());
    for j in 0..z.len() {
        worst = worst.max(p.lb[j] - z[j]).max(z[j] - p.ub[j]);
        let d = s.dual_box[j];
        if d > 0.0 {
            worst = worst.max(if p.lb[j].is_finite() { d * (z[j] - p.lb[j]) } else { d });
        } else if d < 0.0 {
            worst = worst.max(if p.ub[j].is_finite() { -d * (p.ub[j] - z[j]) } else { -d });
        }
    }
    worst
}

/// Random bounded feasible instance: PSD (possibly singular) Hessian, finite
/// boxes, and rows built around an interior point.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, eq: usize, ineq: usize) -> QpProblem {
    let rank = r.gen_range(0..=n);
    let b = DMatrix::from_fn(rank, n, |_, _| r.gen_range(-1.0..1.0));
    let p = b.transpose() * b;
    let z0: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
    let mut qb = QpBuilder::new(n);
    for i in 0..n {
        for j in 0..=i {
            if p[(i, j)] != 0.0 {
                qb.add_quad(i, j, p[(i, j)]);
            }
        }
        qb.add_linear(i, r.gen_range(-3.0..3.0));
        let wide = r.gen_bool(0.2);
        let (lo, hi) = if wide { (-100.0, 100.0) } else { (z0[i] - r.gen_range(0.1..3.0), z0[i] + r.gen_range(0.1..3.0)) };
        qb.bounds(i, lo, hi);
    }
    for _ in 0..eq {
        let terms = random_row(r, n);
        let rhs = terms.iter().map(|(j, v)| v * z0[*j]).sum();
        qb.eq_row(&terms, rhs);
    }
    for _ in 0..ineq {
        let terms = random_row(r, n);
        let rhs = terms.iter().map(|(j, v)| v * z0[*j]).sum::<f64>() + r.gen_range(0.0..1.0);
        qb.le_row(&terms, rhs);
    }
    qb.build()
}

pub fn random_row(r: &mut ChaCha8Rng, n: usize) -> Vec<(usize, f64)> {
    let mut row = Vec::new();
    for j in 0..n {
        if r.gen_bool(0.6) {
            row.push((j, r.gen_range(-1.0..1.0)));
        }
    }
    row
}

pub fn hand_instances() -> Vec<QpProblem> {
    let mut out = Vec::new();
    // min z² s.t. z >= 1
    let mut b = QpBuilder::new(1);
    b.add_quad(0, 0, 2.0).bounds(0, 1.0, f64::INFINITY);
    out.push(b.build());
    // min (z − 3)² s.t. z = 1
    let mut b = QpBuilder::new(1);
    b.add_quad(0, 0, 2.0).add_linear(0, -6.0);
    b.eq_row(&[(0, 1.0)], 1.0);
    out.push(b.build());
    // min x + y s.t. x + y >= 1, 0 <= x, y <= 1
    let mut b = QpBuilder::new(2);
    b.add_linear(0, 1.0).add_linear(1, 2.0).bounds(0, 0.0, 1.0).bounds(1, 0.0, 1.0);
    b.le_row(&[(0, -1.0), (1, -1.0)], -1.0);
    out.push(b.build());
    // projection of (2, 2) onto the simplex
    let mut b = QpBuilder::new(2);
    b.add_quad(0, 0, 2.0).add_quad(1, 1, 2.0).add_linear(0, -4.0).add_linear(1, -4.0);
    b.bounds(0, 0.0, f64::INFINITY).bounds(1, 0.0, f64::INFINITY);
    b.eq_row(&[(0, 1.0), (1, 1.0)], 1.0);
    out.push(b.build());
    out
}

/// `argmin Σ λ_k (x_k − e_k) + ρ/2 (x_k − e_k)²` over the pair with `x_0 + x_1 = 0`.
pub fn pair_minimizer(e: [f64; 2], lambda: [f64; 2], rho: f64) -> [f64; 2] {
    let mut b = QpBuilder::new(2);
    for k in 0..2 {
        b.add_quad(k, k, rho).add_linear(k, lambda[k] - rho * e[k]);
    }
    b.eq_row(&[(0, 1.0), (1, 1.0)], 0.0);
    let s = solve_qp(&b.build(), 1e-13, 50).unwrap();
    [s.z[0], s.z[1]]
}

/// Damped Newton on `−ln(δ − Σπ) + Σ ρ/2 (π̂ − π)² − γ π`.
pub fn newton_p2(delta: f64, pi_hat: &[f64], gamma: &[f64], rho: f64) -> Vec<f64> {
    let m = pi_hat.len();
    let f = |p: &DVector<f64>| {
        let slack = delta - p.sum();
        if slack <= 0.0 {
            return f64::INFINITY;
        }
        -slack.ln()
            + (0..m)
                .map(|j| 0.5 * rho * (pi_hat[j] - p[j]).powi(2) - gamma[j] * p[j])
                .sum::<f64>()
    };
    let mut p = DVector::from_element(m, (delta - 1.0) / m as f64);
    for _ in 0..200 {
        let slack = delta - p.sum();
        let grad = DVector::from_fn(m, |j, _| 1.0 / slack + rho * (p[j] - pi_hat[j]) - gamma[j]);
        if grad.amax() < 1e-14 {
            break;
        }
        let hess = DMatrix::identity(m, m) * rho + DMatrix::from_element(m, m, 1.0 / (slack * slack));
        let step = hess.cholesky().unwrap().solve(&grad);
        let mut t = 1.0;
        let f0 = f(&p);
        while f(&(&p - &step * t)) > f0 - 1e-4 * t * grad.dot(&step) && t > 1e-12 {
            t *= 0.5;
        }
        p -= step * t;
    }
    p.iter().copied().collect()
}

