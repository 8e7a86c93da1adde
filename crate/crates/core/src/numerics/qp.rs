//! Dual active-set QP solver for problems with a diagonal Hessian.
//!
//! ```text
//!     minimize    ½ xᵀ diag(h) x + gᵀ x
//!     subject to  a_kᵀ x ≥ b_k          k = 0..m
//!                 lower ≤ x ≤ upper      (entries may be infinite)
//! ```
//!
//! The iteration follows Goldfarb & Idnani: start from the unconstrained
//! minimizer, repeatedly pick a violated constraint and move along the
//! projected direction while keeping the working set dual feasible. Box
//! bounds enter the working set as fixed coordinates. Problem sizes here are
//! a handful of variables, so every subproblem is re-solved densely instead
//! of updating factorizations. The returned point is re-solved once more on
//! the final working set and certified against the KKT conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Default KKT certificate tolerance.
pub const KKT_TOL: f64 = 1e-8;

const DEPENDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub hessian_diag: Vec<f64>,
    pub linear_term: Vec<f64>,
    /// Rows `a_k` of the constraints `a_kᵀ x ≥ b_k`.
    pub ineq_normals: Vec<Vec<f64>>,
    pub ineq_offsets: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl QpProblem {
    /// Problem with no constraints and an unbounded box.
    pub fn unconstrained(hessian_diag: Vec<f64>, linear_term: Vec<f64>) -> Self {
        let n = hessian_diag.len();
        Self {
            hessian_diag,
            linear_term,
            ineq_normals: Vec::new(),
            ineq_offsets: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n],
            upper_bounds: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let n = self.dim();
        if n == 0 {
            return Err(NumericsError::Dimension("QP has no decision variables".into()));
        }
        if self.linear_term.len() != n || self.lower_bounds.len() != n || self.upper_bounds.len() != n {
            return Err(NumericsError::Dimension(format!(
                "expected {n} entries in linear term and bounds, got {}/{}/{}",
                self.linear_term.len(),
                self.lower_bounds.len(),
                self.upper_bounds.len()
            )));
        }
        if self.ineq_normals.len() != self.ineq_offsets.len() {
            return Err(NumericsError::Dimension(format!(
                "{} constraint rows but {} offsets",
                self.ineq_normals.len(),
                self.ineq_offsets.len()
            )));
        }
        if let Some(row) = self.ineq_normals.iter().find(|r| r.len() != n) {
            return Err(NumericsError::Dimension(format!("constraint row of length {} (expected {n})", row.len())));
        }
        if self.hessian_diag.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(NumericsError::InvalidArgument("hessian diagonal must be strictly positive".into()));
        }
        let finite_data = self.linear_term.iter().chain(self.ineq_offsets.iter()).all(|v| v.is_finite())
            && self.ineq_normals.iter().flatten().all(|v| v.is_finite());
        if !finite_data {
            return Err(NumericsError::InvalidArgument("non-finite problem data".into()));
        }
        for i in 0..n {
            let (lo, hi) = (self.lower_bounds[i], self.upper_bounds[i]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(NumericsError::InvalidArgument(format!("bad bounds [{lo}, {hi}] on variable {i}")));
            }
            if lo > hi {
                return Err(NumericsError::Infeasible);
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear_term)
            .map(|((xi, h), g)| 0.5 * h * xi * xi + g * xi)
            .sum()
    }
}

/// Identifies a constraint of a [`QpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActiveConstraint {
    Affine(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x_star: Vec<f64>,
    /// Every constraint tight within tolerance, sorted.
    pub active_set: Vec<ActiveConstraint>,
    /// Multipliers of the affine rows.
    pub duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    /// Max-norm of stationarity, primal feasibility, dual sign and
    /// complementarity violations.
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Scan order used to pick the constraint that enters the working set.
    /// `None` picks the most violated constraint. Indices refer to the
    /// internal ordering: affine rows, then finite lower bounds, then finite
    /// upper bounds.
    pub pivot_order: Option<Vec<usize>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: KKT_TOL, max_iterations: 500, pivot_order: None }
    }
}

pub fn solve_qp(problem: &QpProblem, tol: f64) -> Result<QpSolution, NumericsError> {
    solve_qp_with(problem, &QpOptions { tol, ..QpOptions::default() })
}

struct Row {
    tag: ActiveConstraint,
    normal: DVector<f64>,
    offset: f64,
}

fn collect_rows(problem: &QpProblem) -> Vec<Row> {
    let n = problem.dim();
    let mut rows = Vec::with_capacity(problem.ineq_normals.len() + 2 * n);
    for (k, (a, b)) in problem.ineq_normals.iter().zip(&problem.ineq_offsets).enumerate() {
        rows.push(Row { tag: ActiveConstraint::Affine(k), normal: DVector::from_column_slice(a), offset: *b });
    }
    for (i, lo) in problem.lower_bounds.iter().enumerate() {
        if lo.is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push(Row { tag: ActiveConstraint::Lower(i), normal: e, offset: *lo });
        }
    }
    for (i, hi) in problem.upper_bounds.iter().enumerate() {
        if hi.is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            rows.push(Row { tag: ActiveConstraint::Upper(i), normal: e, offset: -*hi });
        }
    }
    rows
}

/// Solves the equality-constrained subproblem on `working` through the full
/// KKT system `[H −N; Nᵀ 0][x; λ] = [−g; b]`, which stays well conditioned
/// when the Hessian diagonal spans several orders of magnitude.
fn solve_on_working_set(
    hinv: &DVector<f64>,
    g: &DVector<f64>,
    rows: &[Row],
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = hinv.len();
    let q = working.len();
    if q == 0 {
        return Some((-hinv.component_mul(g), DVector::zeros(0)));
    }
    let mut kkt = DMatrix::zeros(n + q, n + q);
    let mut rhs = DVector::zeros(n + q);
    for i in 0..n {
        kkt[(i, i)] = 1.0 / hinv[i];
        rhs[i] = -g[i];
    }
    for (j, &k) in working.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + j)] = -rows[k].normal[i];
            kkt[(n + j, i)] = rows[k].normal[i];
        }
        rhs[n + j] = rows[k].offset;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // one step of iterative refinement
    let correction = lu.solve(&(&rhs - &kkt * &sol))?;
    sol += correction;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, q).into_owned()))
}

pub fn solve_qp_with(problem: &QpProblem, options: &QpOptions) -> Result<QpSolution, NumericsError> {
    problem.validate()?;
    let n = problem.dim();
    let rows = collect_rows(problem);
    let hinv = DVector::from_iterator(n, problem.hessian_diag.iter().map(|h| 1.0 / h));
    let g = DVector::from_column_slice(&problem.linear_term);
    let scale = 1.0 + g.amax() + problem.ineq_offsets.iter().fold(0.0_f64, |m, b| m.max(b.abs()));

    let order: Vec<usize> = match &options.pivot_order {
        Some(order) => {
            let mut seen = vec![false; rows.len()];
            let mut out: Vec<usize> = order.iter().copied().filter(|&k| k < rows.len()).collect();
            out.iter().for_each(|&k| seen[k] = true);
            out.extend((0..rows.len()).filter(|k| !seen[*k]));
            out
        }
        None => (0..rows.len()).collect(),
    };

    let mut x = -hinv.component_mul(&g);
    let mut working: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    let violation_tol = |k: usize| 1e-13 * scale * (1.0 + rows[k].offset.abs());

    loop {
        // choose the entering constraint
        let mut entering: Option<(usize, f64)> = None;
        for &k in &order {
            if working.contains(&k) {
                continue;
            }
            let s = rows[k].normal.dot(&x) - rows[k].offset;
            if s < -violation_tol(k) {
                match (&options.pivot_order, entering) {
                    (Some(_), None) => {
                        entering = Some((k, s));
                        break;
                    }
                    (None, None) => entering = Some((k, s)),
                    (None, Some((_, best))) if s < best => entering = Some((k, s)),
                    _ => {}
                }
            }
        }
        let Some((p, _)) = entering else { break };
        let np = rows[p].normal.clone();
        let mut up = 0.0;

        loop {
            iterations += 1;
            if iterations > options.max_iterations {
                return Err(NumericsError::MaxIterations(options.max_iterations));
            }
            let q = working.len();
            let hn_p = hinv.component_mul(&np);
            let (z, r) = if q == 0 {
                (hn_p.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, q, |i, j| rows[working[j]].normal[i]);
                let hn = DMatrix::from_fn(n, q, |i, j| hinv[i] * nmat[(i, j)]);
                let m = nmat.transpose() * &hn;
                let r = m.lu().solve(&(nmat.transpose() * &hn_p)).ok_or(NumericsError::MaxIterations(iterations))?;
                (&hn_p - hn * &r, r)
            };

            // largest dual step that keeps working-set multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut blocking = None;
            for j in 0..q {
                if r[j] > DEPENDENCE_TOL {
                    let t = mult[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        blocking = Some(j);
                    }
                }
            }

            let s_p = np.dot(&x) - rows[p].offset;
            let curvature = z.dot(&np);
            if z.amax() <= DEPENDENCE_TOL * (1.0 + hn_p.amax()) || curvature <= 0.0 {
                // the entering normal is spanned by the working set
                let Some(l) = blocking else { return Err(NumericsError::Infeasible) };
                for j in 0..q {
                    mult[j] -= t1 * r[j];
                }
                up += t1;
                working.remove(l);
                mult.remove(l);
                continue;
            }

            let t2 = -s_p / curvature;
            let t = t1.min(t2);
            x += &z * t;
            for j in 0..q {
                mult[j] -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                working.push(p);
                mult.push(up);
                break;
            }
            let l = blocking.expect("finite t1 implies a blocking constraint");
            working.remove(l);
            mult.remove(l);
        }
    }

    // polish on the final working set
    if let Some((xp, lam)) = solve_on_working_set(&hinv, &g, &rows, &working) {
        let primal_ok = rows.iter().all(|row| row.normal.dot(&xp) - row.offset >= -options.tol);
        let dual_ok = lam.iter().all(|l| *l >= -options.tol);
        if primal_ok && dual_ok {
            x = xp;
            mult = lam.iter().map(|l| l.max(0.0)).collect();
        }
    }
    // clip into the box; bounded coordinates in the working set are exact
    for i in 0..n {
        x[i] = x[i].clamp(problem.lower_bounds[i], problem.upper_bounds[i]);
    }

    let m = problem.ineq_normals.len();
    let mut duals = vec![0.0; m];
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for (&k, &mu) in working.iter().zip(&mult) {
        match rows[k].tag {
            ActiveConstraint::Affine(j) => duals[j] = mu,
            ActiveConstraint::Lower(i) => lower_duals[i] = mu,
            ActiveConstraint::Upper(i) => upper_duals[i] = mu,
        }
    }

    let x_star: Vec<f64> = x.iter().copied().collect();
    let kkt_residual = kkt_residual(problem, &x_star, &duals, &lower_duals, &upper_duals);

    let mut active_set: Vec<ActiveConstraint> = rows
        .iter()
        .filter(|row| (row.normal.dot(&x) - row.offset).abs() <= options.tol)
        .map(|row| row.tag)
        .collect();
    active_set.sort();

    let solution = QpSolution {
        objective: problem.objective(&x_star),
        x_star,
        active_set,
        duals,
        lower_duals,
        upper_duals,
        kkt_residual,
        iterations,
    };
    let hx_scale = 1.0 + solution.x_star.iter().zip(&problem.hessian_diag).fold(0.0_f64, |a, (x, h)| a.max((x * h).abs()));
    if kkt_residual > options.tol * scale.max(hx_scale) {
        log::warn!("QP certificate residual {kkt_residual:e} above tolerance {:e}", options.tol);
        return Err(NumericsError::MaxIterations(iterations));
    }
    Ok(solution)
}

/// KKT residual of a candidate primal/dual pair.
pub fn kkt_residual(problem: &QpProblem, x: &[f64], duals: &[f64], lower_duals: &[f64], upper_duals: &[f64]) -> f64 {
    let n = problem.dim();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let mut stat = problem.hessian_diag[i] * x[i] + problem.linear_term[i] - lower_duals[i] + upper_duals[i];
        for (a, mu) in problem.ineq_normals.iter().zip(duals) {
            stat -= mu * a[i];
        }
        worst = worst.max(stat.abs());
        let lo_slack = x[i] - problem.lower_bounds[i];
        let hi_slack = problem.upper_bounds[i] - x[i];
        worst = worst.max((-lo_slack).max(0.0)).max((-hi_slack).max(0.0));
        worst = worst.max((-lower_duals[i]).max(0.0)).max((-upper_duals[i]).max(0.0));
        if lower_duals[i] != 0.0 {
            worst = worst.max((lower_duals[i] * lo_slack).abs());
        }
        if upper_duals[i] != 0.0 {
            worst = worst.max((upper_duals[i] * hi_slack).abs());
        }
    }
    for ((a, b), mu) in problem.ineq_normals.iter().zip(&problem.ineq_offsets).zip(duals) {
        let s: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() - b;
        worst = worst.max((-s).max(0.0)).max((-mu).max(0.0));
        if *mu != 0.0 {
            worst = worst.max((mu * s).abs());
        }
    }
    worst
}
