use ndarray::Array2;
use rand::Rng;

use crate::nn::{join, Activation, Linear, Module, Param};

/// Two-layer map from the text encoder's native space E to model space D.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalAlign {
    pub first: Linear,
    pub activation: Activation,
    pub second: Linear,
}

#[derive(Debug, Clone)]
pub struct AlignCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl ModalAlign {
    /// E → D → D with GELU in between.
    pub fn new<R: Rng + ?Sized>(native_dim: usize, d_model: usize, rng: &mut R) -> Self {
        ModalAlign {
            first: Linear::new(native_dim, d_model, rng),
            activation: Activation::Gelu,
            second: Linear::new(d_model, d_model, rng),
        }
    }

    /// Identity weights, zero bias and linear activation (requires E = D).
    pub fn identity(dim: usize) -> Self {
        ModalAlign {
            first: Linear::from_parts(Array2::eye(dim), Array2::zeros((1, dim))),
            activation: Activation::Identity,
            second: Linear::from_parts(Array2::eye(dim), Array2::zeros((1, dim))),
        }
    }

    pub fn native_dim(&self) -> usize {
        self.first.d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.second.d_out()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AlignCache) {
        let pre = self.first.forward(x);
        let hidden = self.activation.forward(&pre);
        let y = self.second.forward(&hidden);
        (
            y,
            AlignCache {
                input: x.clone(),
                pre,
                hidden,
            },
        )
    }

    /// Returns dL/d(input).
    pub fn backward(&mut self, cache: &AlignCache, dy: &Array2<f64>) -> Array2<f64> {
        let dhidden = self.second.backward(&cache.hidden, dy);
        let dpre = self.activation.backward(&cache.pre, &dhidden);
        self.first.backward(&cache.input, &dpre)
    }
}

impl Module for ModalAlign {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.first.visit(&join(prefix, "first"), f);
        self.second.visit(&join(prefix, "second"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.first.visit_mut(&join(prefix, "first"), f);
        self.second.visit_mut(&join(prefix, "second"), f);
    }
}
