//! Central finite-difference check of the backpropagated gradient.
//!
//! The reference loss is evaluated in double-double arithmetic with the
//! probed parameter offset carried exactly, so the difference quotient is
//! free of f64 cancellation noise at small steps.

use super::{Gradients, MlpParameters};
use crate::datagen::DataPoint;
use crate::error::Result;

/// Pre-activations closer than this to zero count as on the kink.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Batch points dropped because a hidden unit sits near the kink.
    pub skipped_points: usize,
}

/// `hi + lo` with roughly 32 significant digits.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd {
            hi: s,
            lo: (a - (s - bb)) + (b - bb),
        }
    }

    fn fast_two_sum(hi: f64, lo: f64) -> Dd {
        let s = hi + lo;
        Dd { hi: s, lo: lo - (s - hi) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Self::two_sum(self.hi, o.hi);
        let t = Self::two_sum(self.lo, o.lo);
        let v = Self::fast_two_sum(s.hi, s.lo + t.hi);
        Self::fast_two_sum(v.hi, v.lo + t.lo)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::fast_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

#[derive(Debug, Clone, Copy)]
enum Param {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

/// Batch sum of squared errors with `param` moved by `delta`.
fn reference_sum_loss(params: &MlpParameters, batch: &[DataPoint], param: Param, delta: f64) -> Dd {
    let slope = Dd::new(params.architecture.leaky_slope);
    let last = params.weights.len() - 1;
    let mut total = Dd::ZERO;
    for p in batch {
        let mut act: Vec<Dd> = p.features.iter().map(|x| Dd::new(*x)).collect();
        for (j, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let mut next = Vec::with_capacity(w.nrows());
            for r in 0..w.nrows() {
                let mut z = Dd::new(b[r]);
                if let Param::Bias { layer, row } = param {
                    if (layer, row) == (j, r) {
                        z = z.add(Dd::new(delta));
                    }
                }
                for (c, a) in act.iter().enumerate() {
                    let mut wv = Dd::new(w[[r, c]]);
                    if let Param::Weight { layer, row, col } = param {
                        if (layer, row, col) == (j, r, c) {
                            wv = wv.add(Dd::new(delta));
                        }
                    }
                    z = z.add(wv.mul(*a));
                }
                next.push(if j == last || z.hi >= 0.0 { z } else { z.mul(slope) });
            }
            act = next;
        }
        for (o, y) in act.iter().zip(&p.label) {
            let d = o.sub(Dd::new(*y));
            total = total.add(d.mul(d));
        }
    }
    total
}

fn central_difference(params: &MlpParameters, batch: &[DataPoint], param: Param, h: f64) -> f64 {
    let up = reference_sum_loss(params, batch, param, h);
    let down = reference_sum_loss(params, batch, param, -h);
    up.sub(down).to_f64() / (2.0 * h * batch.len() as f64)
}

fn hidden_min_abs_preactivation(params: &MlpParameters, input: &[f64]) -> f64 {
    let slope = params.architecture.leaky_slope;
    let hidden = params.weights.len() - 1;
    let mut act = input.to_vec();
    let mut closest = f64::INFINITY;
    for (w, b) in params.weights.iter().zip(&params.biases).take(hidden) {
        let z: Vec<f64> = w
            .outer_iter()
            .zip(b)
            .map(|(row, bias)| bias + row.iter().zip(&act).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        act = z.iter().map(|v| if *v >= 0.0 { *v } else { slope * v }).collect();
    }
    closest
}

/// Gradient of the mean batch loss by central differences with step `h` on
/// every parameter.
pub fn finite_difference_gradient(params: &MlpParameters, batch: &[DataPoint], h: f64) -> Gradients {
    let mut grads = Gradients::zeros_like(params);
    for (layer, g) in grads.weights.iter_mut().enumerate() {
        for ((row, col), x) in g.indexed_iter_mut() {
            *x = central_difference(params, batch, Param::Weight { layer, row, col }, h);
        }
    }
    for (layer, g) in grads.biases.iter_mut().enumerate() {
        for (row, x) in g.iter_mut().enumerate() {
            *x = central_difference(params, batch, Param::Bias { layer, row }, h);
        }
    }
    grads
}

/// Compares the analytic gradient against central differences. The relative
/// error of each entry is `|a - n| / max(|a|, |n|, floor)`. Batch points with
/// a hidden pre-activation within [`KINK_MARGIN`] of zero are dropped.
pub fn gradient_check(params: &MlpParameters, batch: &[DataPoint], h: f64, floor: f64) -> Result<GradientCheck> {
    let smooth: Vec<DataPoint> = batch
        .iter()
        .filter(|p| hidden_min_abs_preactivation(params, &p.features) > KINK_MARGIN)
        .cloned()
        .collect();
    let skipped_points = batch.len() - smooth.len();
    if smooth.is_empty() {
        return Ok(GradientCheck {
            max_relative_error: 0.0,
            checked: 0,
            skipped_points,
        });
    }
    let (_, analytic) = params.loss_gradient(&smooth)?;
    let numeric = finite_difference_gradient(params, &smooth, h);
    let pairs = analytic
        .weights
        .iter()
        .zip(&numeric.weights)
        .flat_map(|(a, n)| a.iter().zip(n.iter()))
        .chain(analytic.biases.iter().zip(&numeric.biases).flat_map(|(a, n)| a.iter().zip(n.iter())));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (a, n) in pairs {
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
        checked += 1;
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        checked,
        skipped_points,
    })
}
