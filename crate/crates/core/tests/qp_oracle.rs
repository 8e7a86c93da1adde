//! The active-set solver against independent brute-force minimizers.

use kcbf_core::numerics::{solve_qp, solve_qp_with, NumericsError, QpOptions, QpProblem, KKT_TOL};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random feasible problem with `n ≤ 4` variables and `≤ 6` rows. Rows are
/// built around a point inside the box so the feasible set is nonempty.
fn random_problem(rng: &mut ChaCha8Rng, n: usize, rows: usize, infinite_bounds: bool) -> QpProblem {
    let hessian_diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
    let linear_term: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut lower_bounds = Vec::with_capacity(n);
    let mut upper_bounds = Vec::with_capacity(n);
    for _ in 0..n {
        let lo: f64 = rng.random_range(-2.0..0.0);
        let hi: f64 = rng.random_range(0.1..2.0);
        let open = infinite_bounds && rng.random_bool(0.3);
        lower_bounds.push(if open && rng.random_bool(0.5) { f64::NEG_INFINITY } else { lo });
        upper_bounds.push(if open { f64::INFINITY } else { hi });
    }
    let inner: Vec<f64> = (0..n)
        .map(|i| {
            let lo = lower_bounds[i].max(-2.0);
            let hi = upper_bounds[i].min(2.0);
            rng.random_range(lo..=hi)
        })
        .collect();
    let mut ineq_normals = Vec::with_capacity(rows);
    let mut ineq_offsets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let at: f64 = a.iter().zip(&inner).map(|(a, x)| a * x).sum();
        ineq_offsets.push(at - rng.random_range(0.0..0.5));
        ineq_normals.push(a);
    }
    QpProblem { hessian_diag, linear_term, ineq_normals, ineq_offsets, lower_bounds, upper_bounds }
}

/// Every constraint as a row `(a, b)` of `aᵀx ≥ b`, box bounds included.
fn all_rows(p: &QpProblem) -> Vec<(Vec<f64>, f64)> {
    let n = p.dim();
    let mut rows: Vec<(Vec<f64>, f64)> = p.ineq_normals.iter().cloned().zip(p.ineq_offsets.iter().copied()).collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        if p.lower_bounds[i].is_finite() {
            e[i] = 1.0;
            rows.push((e.clone(), p.lower_bounds[i]));
        }
        if p.upper_bounds[i].is_finite() {
            e[i] = -1.0;
            rows.push((e, -p.upper_bounds[i]));
        }
    }
    rows
}

fn feasible(rows: &[(Vec<f64>, f64)], x: &[f64], tol: f64) -> bool {
    rows.iter().all(|(a, b)| a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() >= b - tol)
}

/// Every row holds or is missed by at most `dist` in Euclidean distance.
fn within_distance(rows: &[(Vec<f64>, f64)], x: &[f64], dist: f64) -> bool {
    rows.iter().all(|(a, b)| {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() >= b - dist * norm
    })
}

fn subsets(m: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for k in 0..m {
        let extended: Vec<Vec<usize>> =
            out.iter().filter(|s| s.len() < max).map(|s| s.iter().copied().chain([k]).collect()).collect();
        out.extend(extended);
    }
    out
}

/// Enumerates every face of up to `n` constraints held as equalities, solves
/// the equality-constrained problem on it and keeps the best feasible point.
/// The minimizer lies on some face and is stationary there, so the best
/// feasible candidate is the global minimizer.
fn face_oracle(p: &QpProblem) -> Vec<f64> {
    let n = p.dim();
    let rows = all_rows(p);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for face in subsets(rows.len(), n) {
        let k = face.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        for i in 0..n {
            kkt[(i, i)] = p.hessian_diag[i];
            rhs[i] = -p.linear_term[i];
        }
        for (r, &j) in face.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + r)] = -rows[j].0[i];
                kkt[(n + r, i)] = rows[j].0[i];
            }
            rhs[n + r] = rows[j].1;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x: Vec<f64> = sol.iter().take(n).copied().collect();
        if !feasible(&rows, &x, 1e-10) {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x));
        }
    }
    best.expect("feasible problem has a stationary face").1
}

/// Grid search at step `1e-3` over the box, then a compass search whose
/// step and feasibility band shrink tenfold down to `1e-10`. In 2-D the
/// compass includes the tangent of every row so it can slide along slanted
/// active rows, where the objective may be nearly flat.
fn grid_oracle(p: &QpProblem) -> Vec<f64> {
    let n = p.dim();
    assert!(n <= 2, "grid oracle is for one or two variables");
    let rows = all_rows(p);
    let lo: Vec<f64> = p.lower_bounds.iter().map(|v| v.max(-3.0)).collect();
    let hi: Vec<f64> = p.upper_bounds.iter().map(|v| v.min(3.0)).collect();
    let counts: Vec<usize> = (0..n).map(|i| ((hi[i] - lo[i]) / 1e-3).floor() as usize + 1).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for flat in 0..counts.iter().product::<usize>() {
        let mut rest = flat;
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[i] = lo[i] + (rest % counts[i]) as f64 * 1e-3;
            rest /= counts[i];
        }
        if within_distance(&rows, &x, 1e-3) {
            let f = p.objective(&x);
            if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                best = Some((f, x));
            }
        }
    }
    let (_, mut x) = best.expect("grid hits the feasible set");
    let directions: Vec<Vec<f64>> = if n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        let mut dirs: Vec<Vec<f64>> = (0..360).map(|d| (d as f64).to_radians()).map(|t| vec![t.cos(), t.sin()]).collect();
        // both tangents of every row, so the search can slide along an edge
        for (a, _) in &rows {
            let norm = a[0].hypot(a[1]);
            dirs.push(vec![-a[1] / norm, a[0] / norm]);
            dirs.push(vec![a[1] / norm, -a[0] / norm]);
        }
        dirs
    };
    let mut step = 1e-3;
    while step > 1e-10 {
        step /= 10.0;
        // excess distance outside the band first, objective second
        let merit = |y: &[f64]| -> Option<(f64, f64)> {
            if (0..n).any(|i| y[i] < lo[i] || y[i] > hi[i]) {
                return None;
            }
            let excess = rows
                .iter()
                .map(|(a, b)| {
                    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let miss = (b - a.iter().zip(y).map(|(a, x)| a * x).sum::<f64>()) / norm;
                    (miss - step).max(0.0)
                })
                .fold(0.0, f64::max);
            Some((excess, p.objective(y)))
        };
        let mut current = merit(&x).expect("incumbent stays in the box");
        let mut moved = true;
        for _ in 0..100_000 {
            if !moved {
                break;
            }
            moved = false;
            for d in &directions {
                let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
                if let Some(m) = merit(&y) {
                    if m.0 < current.0 || (m.0 == current.0 && m.1 < current.1) {
                        current = m;
                        x = y;
                        moved = true;
                    }
                }
            }
        }
    }
    x
}

/// Stationarity of the returned primal-dual pair, recomputed here.
fn stationarity(p: &QpProblem, x: &[f64], duals: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..p.dim())
        .map(|i| {
            let mut s = p.hessian_diag[i] * x[i] + p.linear_term[i] - lower[i] + upper[i];
            for (a, mu) in p.ineq_normals.iter().zip(duals) {
                s -= mu * a[i];
            }
            s.abs()
        })
        .fold(0.0, f64::max)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
pub fn thousand_random_problems_match_face_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_x = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    for k in 0..1000 {
        let n = rng.random_range(1..=4);
        let rows = rng.random_range(0..=6);
        let p = random_problem(&mut rng, n, rows, k % 4 == 0);
        let sol = solve_qp(&p, KKT_TOL).unwrap_or_else(|e| panic!("problem {k}: {e}"));
        let oracle = face_oracle(&p);
        worst_x = worst_x.max(max_diff(&sol.x_star, &oracle));
        let stat = stationarity(&p, &sol.x_star, &sol.duals, &sol.lower_duals, &sol.upper_duals);
        worst_kkt = worst_kkt.max(stat).max(sol.kkt_residual);
        assert!(sol.duals.iter().chain(&sol.lower_duals).chain(&sol.upper_duals).all(|d| *d >= 0.0), "problem {k}");
        for i in 0..n {
            assert!(sol.x_star[i] >= p.lower_bounds[i] - 1e-12 && sol.x_star[i] <= p.upper_bounds[i] + 1e-12);
        }
    }
    assert!(worst_x <= 1e-5, "max |x - x_oracle| = {worst_x:e}");
    assert!(worst_kkt <= 1e-8, "max KKT residual = {worst_kkt:e}");
}

#[test]
pub fn low_dimensional_problems_match_refined_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..40 {
        let n = if k < 30 { 1 } else { 2 };
        let rows = rng.random_range(0..=3);
        let p = random_problem(&mut rng, n, rows, false);
        let sol = solve_qp(&p, KKT_TOL).unwrap();
        let grid = grid_oracle(&p);
        assert!(max_diff(&sol.x_star, &grid) <= 1e-5, "problem {k}: {:?} vs grid {:?}", sol.x_star, grid);
    }
}

#[test]
pub fn pivot_order_does_not_change_the_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for k in 0..300 {
        let n = rng.random_range(1..=4);
        let rows = rng.random_range(1..=6);
        let p = random_problem(&mut rng, n, rows, false);
        let base = solve_qp(&p, KKT_TOL).unwrap();
        let total = rows + 2 * n;
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(&mut rng);
            let opts = QpOptions { pivot_order: Some(order), ..QpOptions::default() };
            let other = solve_qp_with(&p, &opts).unwrap();
            assert!(max_diff(&base.x_star, &other.x_star) <= 1e-9, "problem {k}");
        }
    }
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_problem(&mut rng, 3, 5, true);
    assert_eq!(solve_qp(&p, KKT_TOL).unwrap(), solve_qp(&p, KKT_TOL).unwrap());
}

#[test]
fn empty_feasible_set_is_reported() {
    // x ≥ 0.5 and −x ≥ 0 together are empty
    let mut p = QpProblem::unconstrained(vec![1.0], vec![0.0]);
    p.ineq_normals = vec![vec![1.0], vec![-1.0]];
    p.ineq_offsets = vec![0.5, 0.0];
    assert!(matches!(solve_qp(&p, KKT_TOL), Err(NumericsError::Infeasible)));
}

#[test]
fn halfspace_example_matches_analytic_projection() {
    // ½u² s.t. u ≥ 0.5, box [−1, 1]
    let mut p = QpProblem::unconstrained(vec![1.0], vec![0.0]);
    p.lower_bounds = vec![-1.0];
    p.upper_bounds = vec![1.0];
    p.ineq_normals = vec![vec![1.0]];
    p.ineq_offsets = vec![0.5];
    let sol = solve_qp(&p, KKT_TOL).unwrap();
    // u = u_nom + a(b − aᵀu_nom)/‖a‖²
    let analytic = 0.0 + 1.0 * (0.5 - 0.0) / 1.0;
    assert!((sol.x_star[0] - analytic).abs() <= 1e-12);
    assert!((sol.duals[0] - 0.5).abs() <= 1e-12);
    assert!((grid_oracle(&p)[0] - analytic).abs() <= 1e-6);
}
