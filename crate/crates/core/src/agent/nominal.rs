//! Model-based nominal controllers used for filter-only runs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::{cartpole_step, quadrotor2d_step, CartPoleParams, QuadrotorParams};
use crate::numerics::{solve_dare, NumericsError};
use crate::safety_filter::ActionBox;

const FD_STEP: f64 = 1e-6;

/// Central-difference Jacobians `(∂f/∂x, ∂f/∂u)` of a discrete-time map.
pub fn linearize(
    f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    x_eq: &[f64],
    u_eq: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x_eq.len();
    let m = u_eq.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut hi = x_eq.to_vec();
        let mut lo = x_eq.to_vec();
        hi[j] += FD_STEP;
        lo[j] -= FD_STEP;
        let (fp, fm) = (f(&hi, u_eq), f(&lo, u_eq));
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    for j in 0..m {
        let mut hi = u_eq.to_vec();
        let mut lo = u_eq.to_vec();
        hi[j] += FD_STEP;
        lo[j] -= FD_STEP;
        let (fp, fm) = (f(x_eq, &hi), f(x_eq, &lo));
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }
    (a, b)
}

/// `u = clamp(u_eq − K(x − x_eq))`.
pub fn lqr_nominal(gain: &DMatrix<f64>, state: &[f64], equilibrium: &[f64], u_eq: &[f64], action_box: &ActionBox) -> Vec<f64> {
    let dx = DVector::from_iterator(state.len(), state.iter().zip(equilibrium).map(|(x, e)| x - e));
    let u = gain * dx;
    let raw: Vec<f64> = u_eq.iter().zip(u.iter()).map(|(e, v)| e - v).collect();
    action_box.clamp(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrController {
    pub gain: DMatrix<f64>,
    pub u_eq: Vec<f64>,
    pub action_box: ActionBox,
}

impl LqrController {
    /// Infinite-horizon discrete LQR about the upright rest state.
    pub fn cartpole(params: &CartPoleParams, q: &[f64], r: f64) -> Result<Self, NumericsError> {
        let step = |x: &[f64], u: &[f64]| {
            let s: [f64; 4] = x.try_into().expect("cartpole state");
            cartpole_step(params, &s, u[0]).to_vec()
        };
        let (a, b) = linearize(step, &[0.0; 4], &[0.0]);
        let sol = solve_dare(&a, &b, &DMatrix::from_diagonal(&DVector::from_column_slice(q)), &DMatrix::from_element(1, 1, r))?;
        Ok(Self { gain: sol.gain, u_eq: vec![0.0], action_box: ActionBox::symmetric(params.force_limit, 1) })
    }

    /// Default CartPole weights.
    pub fn cartpole_default(params: &CartPoleParams) -> Result<Self, NumericsError> {
        Self::cartpole(params, &[10.0, 10.0, 1.0, 1.0], 0.1)
    }

    pub fn act(&self, state: &[f64], target: &[f64]) -> Vec<f64> {
        lqr_nominal(&self.gain, state, target, &self.u_eq, &self.action_box)
    }
}

/// Cascaded PD position/attitude controller for the planar quadrotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorPd {
    pub params: QuadrotorParams,
    pub kp_pos: f64,
    pub kd_pos: f64,
    pub kp_att: f64,
    pub kd_att: f64,
}

impl QuadrotorPd {
    pub fn new(params: QuadrotorParams) -> Self {
        Self { params, kp_pos: 4.0, kd_pos: 3.0, kp_att: 400.0, kd_att: 40.0 }
    }

    /// `target = [x, y, ẋ, ẏ]`.
    pub fn act(&self, s: &[f64], target: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let ax = self.kp_pos * (target[0] - s[0]) + self.kd_pos * (target[2] - s[3]);
        let ay = self.kp_pos * (target[1] - s[1]) + self.kd_pos * (target[3] - s[4]);
        let vertical = (p.gravity + ay).max(0.1 * p.gravity);
        // ẍ = −T sinφ / m, so a rightward push needs a negative roll
        let phi_des = (-ax / vertical).atan().clamp(-0.5, 0.5);
        let total = p.mass * vertical / s[2].cos().max(0.5);
        let phi_acc = self.kp_att * (phi_des - s[2]) - self.kd_att * s[5];
        let diff = p.inertia * phi_acc / p.arm;
        let hi = p.max_thrust();
        vec![(0.5 * (total - diff)).clamp(0.0, hi), (0.5 * (total + diff)).clamp(0.0, hi)]
    }
}

/// Hover-point linearization, exposed for analysis.
pub fn quadrotor_linearization(params: &QuadrotorParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = params.hover_thrust();
    let step = |x: &[f64], u: &[f64]| {
        let s: [f64; 6] = x.try_into().expect("quadrotor state");
        quadrotor2d_step(params, &s, [u[0], u[1]]).to_vec()
    };
    linearize(step, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], &[h, h])
}
