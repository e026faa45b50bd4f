//! Fully connected feedforward network with Leaky ReLU hidden layers and a
//! linear output layer, trained by exact backpropagation.
//!
//! Layer `j` computes `a_j = act(W_j a_{j-1} + b_j)` where `W_j` is
//! `sizes[j] x sizes[j-1]`. Batches are stored row-wise, one sample per row.

mod checkpoint;
mod gradcheck;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::DataPoint;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use gradcheck::{finite_difference_gradient, gradient_check, GradientCheck, KINK_MARGIN};
pub use train::{train, LearningCurves, Optimizer, TrainConfig, TrainOutcome};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_HIDDEN_LAYERS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    /// Widths from input to output, `hidden_count + 2` entries.
    pub sizes: Vec<usize>,
    pub leaky_slope: f64,
}

impl MlpArchitecture {
    pub fn new(sizes: Vec<usize>, leaky_slope: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&leaky_slope) {
            return Err(Error::Config(format!("leaky slope {leaky_slope} outside [0, 1)")));
        }
        Ok(MlpArchitecture { sizes, leaky_slope })
    }

    pub fn hidden_count(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    /// Multiplications in one forward pass: sum of `N_j * N_{j-1}`.
    pub fn multiplications(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Tapered architecture for `k` nodes: input `3k`, then pairs of equal-width
/// hidden layers starting at `30k` and shrinking by `2k` per pair, then a
/// linear output of width `k`.
///
/// With the default `hidden = 30` this gives
/// `[3k, 30k, 30k, 28k, 28k, ..., 2k, 2k, k]`. Other depths follow the same
/// rule; widths never drop below `k`.
pub fn build_architecture(k: usize, hidden: usize) -> Result<MlpArchitecture> {
    if k == 0 {
        return Err(Error::Config("node count must be positive".into()));
    }
    if hidden == 0 {
        return Err(Error::Config("at least one hidden layer is required".into()));
    }
    let mut sizes = Vec::with_capacity(hidden + 2);
    sizes.push(3 * k);
    for i in 0..hidden {
        let width = 30usize.saturating_sub(2 * (i / 2)).max(1);
        sizes.push(width * k);
    }
    sizes.push(k);
    MlpArchitecture::new(sizes, DEFAULT_LEAKY_SLOPE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    pub architecture: MlpArchitecture,
    /// `weights[j]` maps layer `j` to layer `j + 1`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Same shapes as [`MlpParameters`]; used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParameters) -> Self {
        Gradients {
            weights: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|x| x * x).sum::<f64>())
            .chain(self.biases.iter().map(|b| b.iter().map(|x| x * x).sum::<f64>()))
            .sum();
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

impl MlpParameters {
    pub fn zeros(architecture: MlpArchitecture) -> Self {
        let weights = architecture
            .sizes
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = architecture.sizes[1..].iter().map(|n| Array1::zeros(*n)).collect();
        MlpParameters {
            architecture,
            weights,
            biases,
        }
    }

    /// He initialization scaled for the leaky slope; biases start at zero.
    pub fn random<R: Rng + ?Sized>(architecture: MlpArchitecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(architecture);
        let slope = params.architecture.leaky_slope;
        for w in &mut params.weights {
            let fan_in = w.ncols() as f64;
            let std = (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            w.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        params
    }

    /// Checks shapes against the architecture and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let sizes = &self.architecture.sizes;
        if self.weights.len() != sizes.len() - 1 || self.biases.len() != sizes.len() - 1 {
            return Err(Error::Dimension("layer count does not match architecture".into()));
        }
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.dim() != (sizes[j + 1], sizes[j]) || b.len() != sizes[j + 1] {
                return Err(Error::Dimension(format!("layer {} has wrong shape", j + 1)));
            }
            if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { layer: j + 1 });
            }
        }
        Ok(())
    }

    fn check_input(&self, width: usize) -> Result<()> {
        let expected = self.architecture.input_width();
        if width != expected {
            return Err(Error::Dimension(format!("input width {width}, network expects {expected}")));
        }
        Ok(())
    }

    /// Forward pass on a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_counted(input, &mut 0)
    }

    /// Forward pass that adds the number of scalar multiplications performed
    /// in the affine maps to `counter`.
    pub fn forward_counted(&self, input: &[f64], counter: &mut usize) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let slope = self.architecture.leaky_slope;
        let last = self.weights.len() - 1;
        let mut act = input.to_vec();
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = Vec::with_capacity(w.nrows());
            for (row, bias) in w.outer_iter().zip(b) {
                let mut z = *bias;
                for (wi, ai) in row.iter().zip(&act) {
                    z += wi * ai;
                }
                *counter += row.len();
                next.push(if j == last { z } else { leaky(z, slope) });
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { layer: j + 1 });
            }
            act = next;
        }
        Ok(act)
    }

    /// Batched forward pass; `inputs` has one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let slope = self.architecture.leaky_slope;
        let last = self.weights.len() - 1;
        let mut act = inputs.to_owned();
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = act.dot(&w.t());
            z += b;
            if j != last {
                z.mapv_inplace(|x| leaky(x, slope));
            }
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { layer: j + 1 });
            }
            act = z;
        }
        Ok(act)
    }

    /// Pre-activations of every layer for a batch.
    fn pre_activations(&self, inputs: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let slope = self.architecture.leaky_slope;
        let mut out: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = if j == 0 {
                inputs.dot(&w.t())
            } else {
                out[j - 1].mapv(|x| leaky(x, slope)).dot(&w.t())
            };
            z += b;
            out.push(z);
        }
        out
    }

    /// Sum over the batch of squared output errors, and its gradient.
    fn sum_loss_gradient(&self, inputs: ArrayView2<f64>, labels: ArrayView2<f64>) -> (f64, Gradients) {
        let slope = self.architecture.leaky_slope;
        let zs = self.pre_activations(inputs);
        let output = zs.last().expect("at least one layer");
        let diff = output - &labels;
        let loss = diff.iter().map(|d| d * d).sum::<f64>();

        let layers = self.weights.len();
        let mut grads = Gradients {
            weights: Vec::with_capacity(layers),
            biases: Vec::with_capacity(layers),
        };
        let mut delta = diff * 2.0;
        for j in (0..layers).rev() {
            let prev = if j == 0 {
                inputs.to_owned()
            } else {
                zs[j - 1].mapv(|x| leaky(x, slope))
            };
            grads.weights.push(delta.t().dot(&prev));
            grads.biases.push(delta.sum_axis(Axis(0)));
            if j > 0 {
                let mut back = delta.dot(&self.weights[j]);
                back.zip_mut_with(&zs[j - 1], |d, z| {
                    if *z < 0.0 {
                        *d *= slope
                    }
                });
                delta = back;
            }
        }
        grads.weights.reverse();
        grads.biases.reverse();
        (loss, grads)
    }

    /// Mean over the batch of `||f(x) - y||^2`.
    pub fn loss(&self, batch: &[DataPoint]) -> Result<f64> {
        let (x, y) = self.batch_arrays(batch)?;
        let out = self.forward_batch(x.view())?;
        Ok((&out - &y).iter().map(|d| d * d).sum::<f64>() / batch.len() as f64)
    }

    /// Loss and its exact gradient with respect to every weight and bias.
    pub fn loss_gradient(&self, batch: &[DataPoint]) -> Result<(f64, Gradients)> {
        let (x, y) = self.batch_arrays(batch)?;
        Ok(self.mean_loss_gradient(x.view(), y.view()))
    }

    /// Gradient of the mean loss over the rows of `inputs`. Rows are split
    /// into fixed chunks whose partial sums are reduced in chunk order, so
    /// the result does not depend on the thread count.
    pub fn mean_loss_gradient(&self, inputs: ArrayView2<f64>, labels: ArrayView2<f64>) -> (f64, Gradients) {
        use rayon::prelude::*;
        const CHUNK: usize = 64;
        let rows = inputs.nrows();
        let chunks: Vec<(f64, Gradients)> = (0..rows.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let r = c * CHUNK..((c + 1) * CHUNK).min(rows);
                self.sum_loss_gradient(
                    inputs.slice(ndarray::s![r.clone(), ..]),
                    labels.slice(ndarray::s![r, ..]),
                )
            })
            .collect();
        let mut iter = chunks.into_iter();
        let (mut loss, mut grads) = iter.next().expect("nonempty batch");
        for (l, g) in iter {
            loss += l;
            grads.add_assign(&g);
        }
        let n = rows as f64;
        grads.scale(1.0 / n);
        (loss / n, grads)
    }

    pub fn batch_arrays(&self, batch: &[DataPoint]) -> Result<(Array2<f64>, Array2<f64>)> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let (nin, nout) = (self.architecture.input_width(), self.architecture.output_width());
        let mut x = Array2::zeros((batch.len(), nin));
        let mut y = Array2::zeros((batch.len(), nout));
        for (i, p) in batch.iter().enumerate() {
            if p.features.len() != nin || p.label.len() != nout {
                return Err(Error::Dimension(format!(
                    "point {i} has {} features and {} labels, network is {nin} -> {nout}",
                    p.features.len(),
                    p.label.len()
                )));
            }
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&p.features[..]));
            y.row_mut(i).assign(&ndarray::ArrayView1::from(&p.label[..]));
        }
        Ok((x, y))
    }
}
