use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, Module, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// in × out
    pub weight: Param,
    /// 1 × out
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::fan_in_uniform(d_in, d_out, d_in, rng),
            bias: Param::fan_in_uniform(1, d_out, d_in, rng),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array2<f64>) -> Self {
        assert_eq!(bias.dim(), (1, weight.ncols()));
        Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.accumulate(x, dy);
        dy.dot(&self.weight.value.t())
    }

    /// Parameter gradients only, for layers whose input is constant.
    pub fn accumulate(&mut self, x: &Array2<f64>, dy: &Array2<f64>) {
        self.weight.grad += &x.t().dot(dy);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Row-wise layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Array2::ones((1, d))),
            beta: Param::zeros(1, d),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + self.eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let LayerNormCache { xhat, inv_std } = cache;
        self.gamma.grad += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.value;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, mut out) in dx.axis_iter_mut(Axis(0)).enumerate() {
            let g = dxhat.row(r);
            let xh = xhat.row(r);
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = inv_std[r] * (gi - mean_g - xi * mean_gx));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    pub fn forward(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Gelu => x.mapv(gelu),
            Activation::Identity => x.clone(),
        }
    }

    /// `x` is the pre-activation input.
    pub fn backward(self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Gelu => {
                let mut dx = dy.clone();
                Zip::from(&mut dx).and(x).for_each(|d, &xi| *d *= gelu_grad(xi));
                dx
            }
            Activation::Identity => dy.clone(),
        }
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

/// In-place numerically stable softmax over each row.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient w.r.t. softmax inputs given probabilities and dL/dprobs.
pub fn softmax_backward_rows(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let mut out = probs * dprobs;
    for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let s = row.sum();
        let p = probs.row(r);
        Zip::from(&mut row).and(&p).for_each(|o, &pi| *o -= pi * s);
    }
    out
}

/// Inverted dropout. Returns the output and the scaled keep-mask (None when inactive).
pub fn dropout_forward<R: Rng + ?Sized>(
    x: Array2<f64>,
    p: f64,
    rng: Option<&mut R>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    match rng {
        Some(rng) if p > 0.0 => {
            let scale = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    scale
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward(dy: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}
