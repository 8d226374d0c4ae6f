mod common;

use common::oracles::{dense, dense_kkt, hand_instances, random_instance};
use common::rng;
use microtrade::qp::{kkt_breakdown, kkt_residual, solve_qp, QpBuilder, QpProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const TOL: f64 = 1e-8;

#[test]
fn hand_examples() {
    let s = solve_qp(&hand_instances()[0], TOL, 100).unwrap();
    assert!((s.z[0] - 1.0).abs() < 1e-8);
    let s = solve_qp(&hand_instances()[1], TOL, 100).unwrap();
    assert!((s.z[0] - 1.0).abs() < 1e-8);
    assert!((s.dual_eq[0] + 4.0).abs() < 1e-7, "{:?}", s.dual_eq);
    assert!(kkt_residual(&hand_instances()[1], &s).unwrap() <= TOL);
    let s = solve_qp(&hand_instances()[2], TOL, 100).unwrap();
    assert!((s.z[0] - 1.0).abs() < 1e-7 && s.z[1].abs() < 1e-7);
    let s = solve_qp(&hand_instances()[3], TOL, 100).unwrap();
    assert!((s.z[0] - 0.5).abs() < 1e-7 && (s.z[1] - 0.5).abs() < 1e-7);
}

#[test]
fn twenty_instance_kkt_suite() {
    let mut r = rng(20);
    let mut instances = hand_instances();
    while instances.len() < 20 {
        let n = r.gen_range(3..16);
        let eq = r.gen_range(0..4.min(n));
        let ineq = r.gen_range(0..6);
        instances.push(random_instance(&mut r, n, eq, ineq));
    }
    for (k, p) in instances.iter().enumerate() {
        let s = solve_qp(p, TOL, 200).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "instance {k}: {:?}", s.diagnostic);
        assert!(s.kkt_residual <= TOL, "instance {k}: {}", s.kkt_residual);
        let own = dense_kkt(p, &s);
        assert!(own <= TOL, "instance {k}: dense recheck {own}");
    }
}

fn project(z: &mut [f64], lb: &[f64], ub: &[f64]) {
    for j in 0..z.len() {
        z[j] = z[j].clamp(lb[j], ub[j]);
    }
}

#[test]
fn matches_projected_gradient() {
    let mut r = rng(10);
    for _ in 0..5 {
        let n = 10;
        let b = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
        let pm = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| r.gen_range(-5.0..5.0));
        let lb: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..0.0)).collect();
        let ub: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let mut qb = QpBuilder::new(n);
        for i in 0..n {
            for j in 0..=i {
                qb.add_quad(i, j, pm[(i, j)]);
            }
            qb.add_linear(i, q[i]).bounds(i, lb[i], ub[i]);
        }
        let s = solve_qp(&qb.build(), TOL, 200).unwrap();

        let step = 1.0 / pm.symmetric_eigenvalues().max();
        let mut z = vec![0.0; n];
        project(&mut z, &lb, &ub);
        for _ in 0..200_000 {
            let g = &pm * DVector::from_column_slice(&z) + &q;
            let mut next: Vec<f64> = z.iter().zip(g.iter()).map(|(v, d)| v - step * d).collect();
            project(&mut next, &lb, &ub);
            let moved = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            z = next;
            if moved < 1e-15 {
                break;
            }
        }
        for (a, b) in s.z.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}

fn feasible(p: &QpProblem, z: &[f64], tol: f64) -> bool {
    let (_, a, g) = dense(p);
    let zv = DVector::from_column_slice(z);
    (&a * &zv).iter().zip(&p.b_eq).all(|(v, b)| (v - b).abs() <= tol)
        && (&g * &zv).iter().zip(&p.h_ineq).all(|(v, h)| *v <= h + tol)
        && (0..z.len()).all(|j| z[j] >= p.lb[j] - tol && z[j] <= p.ub[j] + tol)
}

/// The optimum beats every point of a random feasible sample. Samples are convex
/// combinations of optima under random linear objectives.
#[test]
fn optimum_beats_feasible_samples() {
    let mut r = rng(7);
    for _ in 0..4 {
        let n = r.gen_range(4..10);
        let p = random_instance(&mut r, n, 2.min(n - 1), 3);
        let s = solve_qp(&p, TOL, 200).unwrap();
        let best = p.objective(&s.z);
        let vertices: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let mut lp = p.clone();
                lp.p = nalgebra_sparse::CscMatrix::zeros(n, n);
                lp.q = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
                solve_qp(&lp, TOL, 200).unwrap().z
            })
            .collect();
        let mut count = 0;
        for _ in 0..120 {
            let w: Vec<f64> = (0..vertices.len()).map(|_| r.gen::<f64>()).collect();
            let total: f64 = w.iter().sum();
            let z: Vec<f64> = (0..n)
                .map(|j| vertices.iter().zip(&w).map(|(v, c)| v[j] * c / total).sum())
                .collect();
            assert!(feasible(&p, &z, 1e-7));
            assert!(best <= p.objective(&z) + 1e-7 * (1.0 + best.abs()));
            count += 1;
        }
        assert!(count >= 100);
    }
}

#[test]
fn repeated_solves_are_identical() {
    let mut r = rng(3);
    let p = random_instance(&mut r, 12, 3, 4);
    let a = solve_qp(&p, TOL, 200).unwrap();
    let b = solve_qp(&p, TOL, 200).unwrap();
    assert_eq!(a.z, b.z);
    assert_eq!(a.dual_eq, b.dual_eq);
    assert_eq!(a.dual_ineq, b.dual_ineq);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn zero_weight_variable_keeps_objective() {
    let mut r = rng(4);
    let p = random_instance(&mut r, 8, 2, 2);
    let base = solve_qp(&p, TOL, 200).unwrap();

    let n = p.num_vars();
    let grow = |m: &nalgebra_sparse::CscMatrix<f64>, rows: usize| {
        let mut coo = nalgebra_sparse::CooMatrix::new(rows, n + 1);
        for (i, j, v) in m.triplet_iter() {
            coo.push(i, j, *v);
        }
        nalgebra_sparse::CscMatrix::from(&coo)
    };
    let mut wide = p.clone();
    wide.p = grow(&p.p, n + 1);
    wide.a_eq = grow(&p.a_eq, p.num_eq());
    wide.g_ineq = grow(&p.g_ineq, p.num_ineq());
    wide.q.push(0.0);
    wide.lb.push(0.0);
    wide.ub.push(1.0);
    let ext = solve_qp(&wide, TOL, 200).unwrap();
    let (a, b) = (p.objective(&base.z), wide.objective(&ext.z));
    assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn perturbation_raises_residual() {
    let p = &hand_instances()[0];
    let mut s = solve_qp(p, TOL, 100).unwrap();
    s.z[0] += 0.1;
    // The active gradient at the optimum is 2.
    assert!(kkt_residual(p, &s).unwrap() >= 0.1 * 2.0 - 1e-9);

    s.z[0] = 0.5;
    let k = kkt_breakdown(p, &s).unwrap();
    assert!((k.primal - 0.5).abs() < 1e-12);
}
