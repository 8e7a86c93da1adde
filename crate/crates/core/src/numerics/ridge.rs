use nalgebra::DMatrix;

use super::NumericsError;

/// Relative pivot threshold below which an unregularized Gram matrix is
/// treated as rank deficient.
const GRAM_RANK_TOL: f64 = 1e-12;

/// Ridge least squares `G = Y Fᵀ (F Fᵀ + λI)⁻¹`.
///
/// `features` is `p × N` (one sample per column), `targets` is `q × N`.
/// The normal equations are solved with a Cholesky factorization of the
/// `p × p` Gram matrix.
pub fn solve_ridge(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, NumericsError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(NumericsError::InvalidArgument(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    if features.ncols() == 0 {
        return Err(NumericsError::InvalidArgument("no samples".into()));
    }
    if features.ncols() != targets.ncols() {
        return Err(NumericsError::Dimension(format!(
            "features have {} samples, targets {}",
            features.ncols(),
            targets.ncols()
        )));
    }
    let p = features.nrows();
    let mut gram = features * features.transpose();
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let max_diag = (0..p).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    let chol = gram.clone().cholesky().ok_or(NumericsError::SingularGram { pivot: 0.0 })?;
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if lambda == 0.0 && min_pivot <= GRAM_RANK_TOL * max_diag.max(f64::MIN_POSITIVE) {
        return Err(NumericsError::SingularGram { pivot: min_pivot });
    }
    // (F Fᵀ + λI) Gᵀ = F Yᵀ
    let rhs = features * targets.transpose();
    let gt = chol.solve(&rhs);
    Ok(gt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_action_row_recovers_state_coefficient() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let y = DMatrix::from_row_slice(1, 2, &[0.9, 1.8]);
        let g = solve_ridge(&f, &y, 1e-10).unwrap();
        // closed form: (0.9*1 + 1.8*2) / (1 + 4 + 1e-10) and 0 / 1e-10 = 0
        assert!((g[(0, 0)] - 0.9).abs() < 1e-9);
        assert!(g[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = DMatrix::from_fn(3, 20, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::zeros(2, 20);
        let g = solve_ridge(&f, &y, 1e-4).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recovers_known_linear_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let mut f = DMatrix::zeros(2, n);
        let mut y = DMatrix::zeros(1, n);
        for j in 0..n {
            let z: f64 = rng.random_range(-2.0..2.0);
            let u: f64 = rng.random_range(-1.0..1.0);
            f[(0, j)] = z;
            f[(1, j)] = u;
            y[(0, j)] = 0.9 * z + 0.1 * u;
        }
        let g = solve_ridge(&f, &y, 1e-10).unwrap();
        assert!((g[(0, 0)] - 0.9).abs() < 1e-8, "{g}");
        assert!((g[(0, 1)] - 0.1).abs() < 1e-8, "{g}");
    }

    #[test]
    fn singular_gram_without_regularization() {
        let f = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let y = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(solve_ridge(&f, &y, 0.0), Err(NumericsError::SingularGram { .. })));
        assert!(solve_ridge(&f, &y, 1e-6).is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = DMatrix::<f64>::zeros(2, 3);
        let y = DMatrix::<f64>::zeros(1, 4);
        assert!(matches!(solve_ridge(&f, &y, 1.0), Err(NumericsError::Dimension(_))));
        let y = DMatrix::<f64>::zeros(1, 3);
        assert!(matches!(solve_ridge(&f, &y, -1.0), Err(NumericsError::InvalidArgument(_))));
    }

    #[test]
    fn shrinkage_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = DMatrix::from_fn(4, 30, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(3, 30, |_, _| rng.random_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3] {
            let g = solve_ridge(&f, &y, lambda).unwrap();
            let norm = g.norm();
            assert!(norm <= prev + 1e-12, "lambda {lambda}: {norm} > {prev}");
            prev = norm;
        }
    }
}
