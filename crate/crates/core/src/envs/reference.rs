use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvError;

const STEP_SECONDS: f64 = 0.02;

const SINE_AMPLITUDE: f64 = 0.15;
const SINE_PERIOD: f64 = 200.0;

const CIRCLE_CENTER: [f64; 2] = [0.0, 0.3];
const CIRCLE_RADIUS: f64 = 0.25;
const CIRCLE_PERIOD: f64 = 250.0;

/// Deterministic reference generators indexed by episode step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// `p_ref = 0.15·sin(2πt/200)`; yields `[p_ref, ṗ_ref]`.
    Sinusoid,
    /// Circle of radius 0.25 m about `(0, 0.3)`, period 250 steps; its lowest
    /// point lies below the quadrotor's minimum altitude. Yields
    /// `[x_ref, y_ref, ẋ_ref, ẏ_ref]`.
    Circle,
    /// Lemniscate with the same center, extent and period as the circle.
    FigureEight,
}

impl FromStr for ReferenceKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sinusoid" => Ok(Self::Sinusoid),
            "circle" => Ok(Self::Circle),
            "figure_eight" => Ok(Self::FigureEight),
            other => Err(EnvError::UnknownKind(other.to_string())),
        }
    }
}

impl ReferenceKind {
    pub fn evaluate(self, step: usize) -> Vec<f64> {
        let t = step as f64;
        match self {
            Self::Sinusoid => {
                let w = 2.0 * PI / SINE_PERIOD;
                vec![SINE_AMPLITUDE * (w * t).sin(), SINE_AMPLITUDE * w / STEP_SECONDS * (w * t).cos()]
            }
            Self::Circle => {
                let w = 2.0 * PI / CIRCLE_PERIOD;
                let rate = CIRCLE_RADIUS * w / STEP_SECONDS;
                vec![
                    CIRCLE_CENTER[0] + CIRCLE_RADIUS * (w * t).cos(),
                    CIRCLE_CENTER[1] + CIRCLE_RADIUS * (w * t).sin(),
                    -rate * (w * t).sin(),
                    rate * (w * t).cos(),
                ]
            }
            Self::FigureEight => {
                let w = 2.0 * PI / CIRCLE_PERIOD;
                let rate = CIRCLE_RADIUS * w / STEP_SECONDS;
                vec![
                    CIRCLE_CENTER[0] + CIRCLE_RADIUS * (w * t).sin(),
                    CIRCLE_CENTER[1] + CIRCLE_RADIUS * (2.0 * w * t).sin(),
                    rate * (w * t).cos(),
                    2.0 * rate * (2.0 * w * t).cos(),
                ]
            }
        }
    }
}

pub fn make_reference(kind: &str, step: usize) -> Result<Vec<f64>, EnvError> {
    Ok(kind.parse::<ReferenceKind>()?.evaluate(step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_values() {
        assert_eq!(make_reference("sinusoid", 0).unwrap()[0], 0.0);
        assert!((make_reference("sinusoid", 50).unwrap()[0] - 0.15).abs() < 1e-15);
        let t = 37usize;
        let expect = 0.15 * (2.0 * PI * t as f64 / 200.0).sin();
        assert_eq!(make_reference("sinusoid", t).unwrap()[0], expect);
    }

    #[test]
    fn rates_match_finite_differences() {
        for kind in [ReferenceKind::Sinusoid, ReferenceKind::Circle, ReferenceKind::FigureEight] {
            let n = kind.evaluate(0).len() / 2;
            for t in [3usize, 40, 111] {
                // central difference over one step, in per-second units
                let (a, b, c) = (kind.evaluate(t - 1), kind.evaluate(t + 1), kind.evaluate(t));
                for i in 0..n {
                    let fd = (b[i] - a[i]) / (2.0 * STEP_SECONDS);
                    assert!((fd - c[n + i]).abs() < 1e-2 * (1.0 + c[n + i].abs()), "{kind:?} t={t} i={i}");
                }
            }
        }
    }

    #[test]
    fn circle_dips_below_minimum_altitude() {
        let low = (0..250).map(|t| ReferenceKind::Circle.evaluate(t)[1]).fold(f64::INFINITY, f64::min);
        assert!(low < 0.1);
    }

    #[test]
    fn unknown_kind() {
        assert_eq!(make_reference("spiral", 0), Err(EnvError::UnknownKind("spiral".into())));
    }
}
