use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KoopmanError;

const KMEANS_MAX_ITERATIONS: usize = 300;
/// Number of neighbouring centers used by the bandwidth rule.
const BANDWIDTH_NEIGHBOURS: usize = 5;

/// Observable dictionary `ψ(y) = [y; φ_1(y); …; φ_M(y)]` with Gaussian RBFs
/// `φ_j(y) = exp(-‖y - c_j‖² / (2σ_j²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    state_dim: usize,
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl Dictionary {
    /// Dictionary without RBF features.
    pub fn identity(state_dim: usize) -> Self {
        Self { state_dim, centers: Vec::new(), bandwidths: Vec::new() }
    }

    pub fn new(state_dim: usize, centers: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> Result<Self, KoopmanError> {
        if centers.len() != bandwidths.len() {
            return Err(KoopmanError::Dimension(format!(
                "{} centers but {} bandwidths",
                centers.len(),
                bandwidths.len()
            )));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != state_dim) {
            return Err(KoopmanError::Dimension(format!("center of dimension {} (expected {state_dim})", c.len())));
        }
        if let Some(s) = bandwidths.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(KoopmanError::InvalidArgument(format!("bandwidth must be positive, got {s}")));
        }
        Ok(Self { state_dim, centers, bandwidths })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_features(&self) -> usize {
        self.centers.len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.state_dim + self.centers.len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Lifts a modeling state. The first `state_dim` entries are `y` itself.
    ///
    /// Panics if `y` does not have `state_dim` entries.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.lifted_dim()];
        self.lift_into(y, &mut z);
        z
    }

    pub fn lift_into(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.state_dim, "modeling state has wrong dimension");
        assert_eq!(out.len(), self.lifted_dim(), "output buffer has wrong dimension");
        out[..self.state_dim].copy_from_slice(y);
        for (j, (c, s)) in self.centers.iter().zip(&self.bandwidths).enumerate() {
            let d2 = squared_distance(y, c);
            out[self.state_dim + j] = (-d2 / (2.0 * s * s)).exp();
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Within-cluster sum of squared distances of `data` to their nearest center.
pub fn within_cluster_ss(data: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    data.iter()
        .map(|y| centers.iter().map(|c| squared_distance(y, c)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Places `m` RBF centers by k-means (k-means++ seeding, Lloyd iterations)
/// and assigns each center a bandwidth equal to the median distance to its
/// five nearest neighbouring centers.
pub fn fit_centers(data: &[Vec<f64>], m: usize, seed: u64) -> Result<Dictionary, KoopmanError> {
    let Some(first) = data.first() else {
        return Err(KoopmanError::InvalidArgument("no data for k-means".into()));
    };
    let dim = first.len();
    if data.iter().any(|y| y.len() != dim) {
        return Err(KoopmanError::Dimension("data points have inconsistent dimension".into()));
    }
    if m > data.len() {
        return Err(KoopmanError::InvalidArgument(format!("{m} centers requested from {} points", data.len())));
    }
    if m == 0 {
        return Ok(Dictionary::identity(dim));
    }
    if m > 1 && data.iter().all(|y| y == first) {
        return Err(KoopmanError::DegenerateData);
    }

    let centers = lloyd(data, kmeans_plus_plus(data, m, seed));
    let bandwidths = bandwidth_rule(data, &centers);
    Dictionary::new(dim, centers, bandwidths)
}

fn kmeans_plus_plus(data: &[Vec<f64>], m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data.iter().map(|y| squared_distance(y, &data[chosen[0]])).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // round-off can leave `target` just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).expect("positive total"))
        } else {
            // fewer distinct points than centers: reuse an unchosen index
            (0..data.len()).find(|i| !chosen.contains(i)).expect("m <= data.len()")
        };
        chosen.push(next);
        for (i, y) in data.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(y, &data[next]));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

fn nearest(y: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = squared_distance(y, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(data: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let k = centers.len();
    let dim = data[0].len();
    let mut assignment = vec![usize::MAX; data.len()];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (i, y) in data.iter().enumerate() {
            let (j, _) = nearest(y, &centers);
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (y, &j) in data.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(y) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // re-seed empty clusters at the point farthest from its center
        for j in 0..k {
            if counts[j] == 0 {
                let (far, _) = data
                    .iter()
                    .enumerate()
                    .map(|(i, y)| (i, squared_distance(y, &centers[assignment[i]])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                centers[j] = data[far].clone();
                assignment[far] = j;
            }
        }
    }
    centers
}

fn bandwidth_rule(data: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<f64> {
    let m = centers.len();
    let mut pairwise: Vec<f64> = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            pairwise.push(squared_distance(&centers[i], &centers[j]).sqrt());
        }
    }
    let mut fallback = if pairwise.is_empty() {
        let mut d: Vec<f64> = data.iter().map(|y| squared_distance(y, &centers[0]).sqrt()).collect();
        median(&mut d)
    } else {
        median(&mut pairwise.clone())
    };
    if !(fallback > 0.0) {
        fallback = 1.0;
    }
    if m <= BANDWIDTH_NEIGHBOURS {
        return vec![fallback; m];
    }
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut d: Vec<f64> = centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| squared_distance(c, o).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let s = median(&mut d[..BANDWIDTH_NEIGHBOURS]);
            if s > 0.0 {
                s
            } else {
                fallback
            }
        })
        .collect()
}
