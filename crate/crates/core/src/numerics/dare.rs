use nalgebra::DMatrix;

use super::NumericsError;

/// Convergence threshold on successive Riccati iterates (max norm).
pub const RICCATI_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    /// State feedback gain, `u = -K x`.
    pub gain: DMatrix<f64>,
    pub cost_to_go: DMatrix<f64>,
    pub iterations: usize,
}

/// Solves `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` by fixed-point iteration
/// from `P = Q` and returns `K = (R + BᵀPB)⁻¹ BᵀPA`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution, NumericsError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(NumericsError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if r.clone().cholesky().is_none() {
        return Err(NumericsError::InvalidArgument("R must be positive definite".into()));
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let pb = &p * b;
        let s = r + &bt * &pb;
        let bpa = &bt * &p * a;
        let chol = s.cholesky().ok_or_else(|| NumericsError::InvalidArgument("R + BᵀPB lost definiteness".into()))?;
        let k = chol.solve(&bpa);
        let mut next = q + &at * &p * a - (&at * &pb) * &k;
        // keep the iterate symmetric against round-off drift
        next = (&next + next.transpose()) * 0.5;
        last_step = (&next - &p).amax();
        if !last_step.is_finite() {
            break;
        }
        p = next;
        if last_step < RICCATI_TOL {
            let s = r + &bt * &p * b;
            let gain = s
                .cholesky()
                .ok_or_else(|| NumericsError::InvalidArgument("R + BᵀPB lost definiteness".into()))?
                .solve(&(&bt * &p * a));
            return Ok(DareSolution { gain, cost_to_go: p, iterations: it });
        }
    }
    Err(NumericsError::NoConvergence { iterations: MAX_ITERATIONS, last_step })
}
