use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dictionary, KoopmanError};
use crate::numerics::solve_ridge;

/// Default open-loop horizon for the multi-step fit error.
pub const DEFAULT_MSE_HORIZON: usize = 10;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One sampled step `(y, u, y⁺)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub y_plus: Vec<f64>,
}

impl Transition {
    pub fn new(y: Vec<f64>, u: Vec<f64>, y_plus: Vec<f64>) -> Self {
        Self { y, u, y_plus }
    }
}

/// Lifted linear predictor `z⁺ = A z + B u` over a fixed dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub dictionary: Dictionary,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub ridge_lambda: f64,
    pub fit_mse1: f64,
    pub fit_mse_h: f64,
    pub mse_horizon: usize,
}

impl KoopmanModel {
    /// Builds a model from known matrices; fit metrics are set to zero.
    pub fn from_matrices(dictionary: Dictionary, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, KoopmanError> {
        let n = dictionary.lifted_dim();
        if a.shape() != (n, n) || b.nrows() != n || b.ncols() == 0 {
            return Err(KoopmanError::Dimension(format!(
                "A is {:?}, B is {:?} for lifted dimension {n}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self { dictionary, a, b, ridge_lambda: 0.0, fit_mse1: 0.0, fit_mse_h: 0.0, mse_horizon: 1 })
    }

    pub fn lifted_dim(&self) -> usize {
        self.dictionary.lifted_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        self.dictionary.lift(y)
    }

    /// `A z + B u`.
    pub fn predict(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        let u = DVector::from_column_slice(u);
        (&self.a * z + &self.b * u).iter().copied().collect()
    }

    /// Koopman residual `ψ(y⁺) − Aψ(y) − Bu`.
    pub fn residual(&self, t: &Transition) -> Vec<f64> {
        let z = self.lift(&t.y);
        let z_plus = self.lift(&t.y_plus);
        let pred = self.predict(&z, &t.u);
        z_plus.iter().zip(&pred).map(|(a, b)| a - b).collect()
    }

    pub fn to_json(&self) -> Result<String, KoopmanError> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self, KoopmanError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<(), KoopmanError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KoopmanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Versioned on-disk layout; matrices are stored row-major.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dictionary: Dictionary,
    lifted_dim: usize,
    action_dim: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    ridge_lambda: f64,
    fit_mse1: f64,
    fit_mse_h: f64,
    mse_horizon: usize,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, KoopmanError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(KoopmanError::Dimension("ragged matrix in model file".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl From<&KoopmanModel> for ModelFile {
    fn from(m: &KoopmanModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            dictionary: m.dictionary.clone(),
            lifted_dim: m.lifted_dim(),
            action_dim: m.action_dim(),
            a: rows_of(&m.a),
            b: rows_of(&m.b),
            ridge_lambda: m.ridge_lambda,
            fit_mse1: m.fit_mse1,
            fit_mse_h: m.fit_mse_h,
            mse_horizon: m.mse_horizon,
        }
    }
}

impl TryFrom<ModelFile> for KoopmanModel {
    type Error = KoopmanError;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(KoopmanError::Format(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                f.format_version
            )));
        }
        // re-validate the dictionary invariants
        let dictionary = Dictionary::new(
            f.dictionary.state_dim(),
            f.dictionary.centers().to_vec(),
            f.dictionary.bandwidths().to_vec(),
        )?;
        if dictionary.lifted_dim() != f.lifted_dim || f.a.len() != f.lifted_dim || f.b.len() != f.lifted_dim {
            return Err(KoopmanError::Dimension("model file dimensions disagree".into()));
        }
        let a = matrix_from_rows(&f.a, f.lifted_dim)?;
        let b = matrix_from_rows(&f.b, f.action_dim)?;
        Ok(Self {
            dictionary,
            a,
            b,
            ridge_lambda: f.ridge_lambda,
            fit_mse1: f.fit_mse1,
            fit_mse_h: f.fit_mse_h,
            mse_horizon: f.mse_horizon,
        })
    }
}

fn check_transitions(dictionary: &Dictionary, transitions: &[Transition]) -> Result<usize, KoopmanError> {
    let first = transitions.first().ok_or_else(|| KoopmanError::InvalidArgument("no transitions".into()))?;
    let action_dim = first.u.len();
    if action_dim == 0 {
        return Err(KoopmanError::Dimension("transitions carry empty actions".into()));
    }
    let sd = dictionary.state_dim();
    for t in transitions {
        if t.y.len() != sd || t.y_plus.len() != sd || t.u.len() != action_dim {
            return Err(KoopmanError::Dimension(format!(
                "transition dims y={} u={} y+={} (expected {sd}/{action_dim}/{sd})",
                t.y.len(),
                t.u.len(),
                t.y_plus.len()
            )));
        }
    }
    Ok(action_dim)
}

/// Fits `[A B]` by ridge regression on the lifted transitions and records
/// one-step and `horizon`-step prediction errors.
pub fn fit_model(dictionary: &Dictionary, transitions: &[Transition], ridge_lambda: f64) -> Result<KoopmanModel, KoopmanError> {
    fit_model_with_horizon(dictionary, transitions, ridge_lambda, DEFAULT_MSE_HORIZON)
}

pub fn fit_model_with_horizon(
    dictionary: &Dictionary,
    transitions: &[Transition],
    ridge_lambda: f64,
    horizon: usize,
) -> Result<KoopmanModel, KoopmanError> {
    let action_dim = check_transitions(dictionary, transitions)?;
    let nz = dictionary.lifted_dim();
    let n = transitions.len();
    if n < nz + action_dim {
        log::warn!("fitting a {nz}+{action_dim} dimensional model from only {n} samples");
    }
    let mut features = DMatrix::zeros(nz + action_dim, n);
    let mut targets = DMatrix::zeros(nz, n);
    let mut z = vec![0.0; nz];
    for (j, t) in transitions.iter().enumerate() {
        dictionary.lift_into(&t.y, &mut z);
        for i in 0..nz {
            features[(i, j)] = z[i];
        }
        for (i, u) in t.u.iter().enumerate() {
            features[(nz + i, j)] = *u;
        }
        dictionary.lift_into(&t.y_plus, &mut z);
        for i in 0..nz {
            targets[(i, j)] = z[i];
        }
    }
    let g = solve_ridge(&features, &targets, ridge_lambda)?;
    let a = g.columns(0, nz).into_owned();
    let b = g.columns(nz, action_dim).into_owned();
    let mut model = KoopmanModel {
        dictionary: dictionary.clone(),
        a,
        b,
        ridge_lambda,
        fit_mse1: 0.0,
        fit_mse_h: 0.0,
        mse_horizon: horizon,
    };
    model.fit_mse1 = one_step_mse(&model, transitions);
    model.fit_mse_h = multi_step_mse(&model, transitions, horizon);
    Ok(model)
}

/// `(1/N) Σ ‖z⁺ − A z − B u‖²`.
pub fn one_step_mse(model: &KoopmanModel, transitions: &[Transition]) -> f64 {
    if transitions.is_empty() {
        return 0.0;
    }
    let total: f64 = transitions.iter().map(|t| model.residual(t).iter().map(|r| r * r).sum::<f64>()).sum();
    total / transitions.len() as f64
}

/// Length of the contiguous run starting at each index: transition `i+1`
/// continues `i` when its `y` equals the previous `y_plus` bitwise.
fn run_lengths(transitions: &[Transition]) -> Vec<usize> {
    let n = transitions.len();
    let mut len = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        if transitions[i + 1].y == transitions[i].y_plus {
            len[i] = len[i + 1] + 1;
        }
    }
    len
}

/// `(1/N) Σ_i Σ_{k=1..H} ‖z_{i+k} − ẑ_{i+k}‖²` over every start index with
/// `H` contiguous transitions, rolling the model open loop from `z_i`.
pub fn multi_step_mse(model: &KoopmanModel, transitions: &[Transition], horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    let runs = run_lengths(transitions);
    let mut total = 0.0;
    let mut starts = 0usize;
    for i in 0..transitions.len() {
        if runs[i] < horizon {
            continue;
        }
        starts += 1;
        let mut z_hat = model.lift(&transitions[i].y);
        for k in 0..horizon {
            let t = &transitions[i + k];
            z_hat = model.predict(&z_hat, &t.u);
            let z_true = model.lift(&t.y_plus);
            total += z_true.iter().zip(&z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    if starts == 0 {
        log::warn!("no contiguous segment of length {horizon}; multi-step error undefined");
        return f64::NAN;
    }
    total / starts as f64
}
