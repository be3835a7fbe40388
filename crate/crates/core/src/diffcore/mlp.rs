use ndarray::Array2;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// One affine layer: `y = x · W + b` with `W: in×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Stack of affine layers with an activation between (not after) them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// Registers the parameters of an MLP with layer widths `dims`.
    ///
    /// Inner layers draw weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with
    /// zero bias. With `zero_last` the output layer starts at zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("{prefix}: an MLP needs at least two widths")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = i == dims.len() - 2;
            let w = if last && zero_last {
                Array2::zeros((fan_in, fan_out))
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound))
            };
            let weight = store.insert(format!("{prefix}.{i}.weight"), w)?;
            let bias = store.insert(format!("{prefix}.{i}.bias"), Array2::zeros((1, fan_out)))?;
            layers.push(Linear { weight, bias });
        }
        Ok(Self { layers, activation: Activation::Relu })
    }

    /// Looks up an already registered MLP by name prefix.
    pub fn bind(store: &ParamStore, prefix: &str, n_layers: usize) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| {
                Ok(Linear {
                    weight: store.id(&format!("{prefix}.{i}.weight"))?,
                    bias: store.id(&format!("{prefix}.{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activation: Activation::Relu })
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.value(self.layers[0].weight).nrows()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.value(self.layers[self.layers.len() - 1].weight).ncols()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        forward_mlp(tape, store, input, &self.layers, self.activation)
    }
}

/// Composes the affine `layers` over `input`, applying `activation` between
/// consecutive layers only.
pub fn forward_mlp(
    tape: &mut Tape,
    store: &ParamStore,
    input: Var,
    layers: &[Linear],
    activation: Activation,
) -> Result<Var> {
    let mut h = input;
    for (i, layer) in layers.iter().enumerate() {
        let (k, _) = store.value(layer.weight).dim();
        let width = tape.shape(h).1;
        if width != k {
            return Err(Error::shape(format!("mlp layer {i}"), k, width));
        }
        let w = tape.param(store, layer.weight);
        let b = tape.param(store, layer.bias);
        let lin = tape.matmul(h, w)?;
        h = tape.add_bias(lin, b)?;
        if i + 1 < layers.len() {
            h = match activation {
                Activation::Relu => tape.relu(h),
            };
        }
    }
    Ok(h)
}
