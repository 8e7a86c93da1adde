use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected network with tanh hidden layers and a linear output.
/// Parameters live in one flat vector: per layer the weight matrix
/// (column-major, `out × in`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
}

/// Layer activations from a forward pass; `acts[0]` is the input and the
/// last entry the output. Columns are batch samples.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("nonempty cache")
    }
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let start = off;
            off += w[1] * w[0] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.num_params());
        for (_, fan_in, fan_out) in self.offsets() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out + fan_out).map(|_| rng.random_range(-bound..bound)));
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> MlpCache {
        assert_eq!(params.len(), self.num_params(), "parameter vector has wrong length");
        assert_eq!(x.nrows(), self.input_dim(), "input has wrong dimension");
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.clone());
        for (l, (off, fan_in, fan_out)) in self.offsets().enumerate() {
            let w = DMatrixView::from_slice(&params[off..off + fan_in * fan_out], fan_out, fan_in);
            let bias = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = w * &acts[l];
            for mut col in z.column_iter_mut() {
                for (v, b) in col.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if l + 1 < layers {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        MlpCache { acts }
    }

    /// Returns `(∂L/∂params, ∂L/∂input)` given `∂L/∂output`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, grad_out: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let layers = self.sizes.len() - 1;
        let mut grads = vec![0.0; self.num_params()];
        let offsets: Vec<_> = self.offsets().collect();
        let mut delta = grad_out.clone();
        for l in (0..layers).rev() {
            let (off, fan_in, fan_out) = offsets[l];
            let a_prev = &cache.acts[l];
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grads[off..off + fan_in * fan_out], fan_out, fan_in);
                gw.gemm(1.0, &delta, &a_prev.transpose(), 0.0);
            }
            for (i, row) in delta.row_iter().enumerate() {
                grads[off + fan_in * fan_out + i] = row.sum();
            }
            let w = DMatrixView::from_slice(&params[off..off + fan_in * fan_out], fan_out, fan_in);
            let mut prev = w.transpose() * &delta;
            if l > 0 {
                prev.zip_apply(a_prev, |d, a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        (grads, delta)
    }
}
