//! Conditional RealNVP flow over pose parameters.
//!
//! The generative direction maps a standard-normal latent `z` to pose
//! parameters `x = f(z; c)`. Each coupling layer keeps one half of the
//! coordinates fixed and applies `a' = a * exp(s) + t` to the other half,
//! with `(s, t)` predicted from the fixed half and the condition.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_LAYERS: usize = 8;

/// Bounded log-scale: `(2α/π)·atan(s/α)`, strictly inside `(-α, α)`.
pub fn soft_clamp(s_raw: f64, alpha: f64) -> f64 {
    2.0 * alpha / PI * (s_raw / alpha).atan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub alpha: f64,
    /// Additive (shift-only) couplings, i.e. a volume-preserving NICE flow.
    #[serde(default)]
    pub volume_preserving: bool,
}

impl FlowConfig {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self { dim, cond_dim, layers: DEFAULT_LAYERS, hidden: 128, alpha: DEFAULT_ALPHA, volume_preserving: false }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("flow dimension must be at least 2".into()));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("flow needs at least one layer and hidden unit".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("soft-clamp bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CouplingLayer {
    active: Vec<usize>,
    passive: Vec<usize>,
    /// Column permutation taking `[active | passive]` back to natural order.
    merge: Vec<usize>,
    net: Mlp,
    alpha: f64,
    volume_preserving: bool,
}

/// Recorded output of a flow pass.
pub struct FlowPass {
    pub output: Var,
    /// Clamped log-scales of every layer, each `rows × |active|`.
    pub log_scales: Vec<Var>,
}

impl CouplingLayer {
    fn partition(dim: usize, parity: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let active: Vec<usize> = (0..dim).filter(|i| i % 2 == parity).collect();
        let passive: Vec<usize> = (0..dim).filter(|i| i % 2 != parity).collect();
        let mut merge = vec![0; dim];
        for (pos, &col) in active.iter().chain(&passive).enumerate() {
            merge[col] = pos;
        }
        (active, passive, merge)
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn passive(&self) -> &[usize] {
        &self.passive
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Predicts `(log-scale, shift)` for the active half.
    fn scale_shift(&self, tape: &mut Tape, store: &ParamStore, passive: Var, cond: Var) -> Result<(Option<Var>, Var)> {
        let input = tape.concat_cols(&[passive, cond])?;
        let out = self.net.forward(tape, store, input)?;
        let n = self.active.len();
        if self.volume_preserving {
            return Ok((None, out));
        }
        let s_cols: Vec<usize> = (0..n).collect();
        let t_cols: Vec<usize> = (n..2 * n).collect();
        let s_raw = tape.gather_cols(out, &s_cols)?;
        let t = tape.gather_cols(out, &t_cols)?;
        let u = tape.scale(s_raw, 1.0 / self.alpha);
        let a = tape.atan(u);
        let s = tape.scale(a, 2.0 * self.alpha / PI);
        debug_assert!(tape.value(s).iter().all(|v| v.abs() < self.alpha));
        Ok((Some(s), t))
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, cond: Var) -> Result<(Var, Option<Var>)> {
        let a = tape.gather_cols(x, &self.active)?;
        let p = tape.gather_cols(x, &self.passive)?;
        let (s, t) = self.scale_shift(tape, store, p, cond)?;
        let scaled = match s {
            Some(s) => {
                let e = tape.exp(s);
                tape.mul(a, e)?
            }
            None => a,
        };
        let a_new = tape.add(scaled, t)?;
        let joined = tape.concat_cols(&[a_new, p])?;
        Ok((tape.gather_cols(joined, &self.merge)?, s))
    }

    fn inverse(&self, tape: &mut Tape, store: &ParamStore, y: Var, cond: Var) -> Result<(Var, Option<Var>)> {
        let a = tape.gather_cols(y, &self.active)?;
        let p = tape.gather_cols(y, &self.passive)?;
        let (s, t) = self.scale_shift(tape, store, p, cond)?;
        let shifted = tape.sub(a, t)?;
        let a_old = match s {
            Some(s) => {
                let neg = tape.scale(s, -1.0);
                let e = tape.exp(neg);
                tape.mul(shifted, e)?
            }
            None => shifted,
        };
        let joined = tape.concat_cols(&[a_old, p])?;
        Ok((tape.gather_cols(joined, &self.merge)?, s))
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
}

fn check_finite(tape: &Tape, v: Var, context: impl FnOnce() -> String) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context: context() })
    }
}

impl FlowModel {
    /// Registers a freshly initialized flow whose coupling outputs start at
    /// zero, so the initial flow is the identity map.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let (active, passive, merge) = CouplingLayer::partition(config.dim, l % 2);
                let out = if config.volume_preserving { active.len() } else { 2 * active.len() };
                let dims = [passive.len() + config.cond_dim, config.hidden, config.hidden, out];
                let net = Mlp::init(store, &format!("{prefix}.coupling{l}"), &dims, true, rng)?;
                Ok(CouplingLayer {
                    active,
                    passive,
                    merge,
                    net,
                    alpha: config.alpha,
                    volume_preserving: config.volume_preserving,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, layers })
    }

    /// Rebinds a flow to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let (active, passive, merge) = CouplingLayer::partition(config.dim, l % 2);
                let net = Mlp::bind(store, &format!("{prefix}.coupling{l}"), 3)?;
                let expect_in = passive.len() + config.cond_dim;
                if net.input_dim(store) != expect_in {
                    return Err(Error::shape(format!("flow layer {l} input"), expect_in, net.input_dim(store)));
                }
                Ok(CouplingLayer {
                    active,
                    passive,
                    merge,
                    net,
                    alpha: config.alpha,
                    volume_preserving: config.volume_preserving,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    fn check_dims(&self, tape: &Tape, x: Var, cond: Var) -> Result<()> {
        let (rows, d) = tape.shape(x);
        let (crows, dc) = tape.shape(cond);
        if d != self.config.dim {
            return Err(Error::shape("flow input dimension", self.config.dim, d));
        }
        if dc != self.config.cond_dim {
            return Err(Error::shape("flow condition dimension", self.config.cond_dim, dc));
        }
        if rows != crows {
            return Err(Error::shape("flow condition rows", rows, crows));
        }
        Ok(())
    }

    /// Generative direction `z -> x` recorded on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, z: Var, cond: Var) -> Result<FlowPass> {
        self.check_dims(tape, z, cond)?;
        let mut x = z;
        let mut log_scales = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, s) = layer.forward(tape, store, x, cond)?;
            check_finite(tape, next, || format!("flow layer {l} (forward)"))?;
            log_scales.extend(s);
            x = next;
        }
        Ok(FlowPass { output: x, log_scales })
    }

    /// Normalizing direction `x -> z` recorded on `tape`. The returned
    /// log-scales are those of the matching forward layers, so the inverse
    /// log-determinant is their negated sum.
    pub fn inverse_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var, cond: Var) -> Result<FlowPass> {
        self.check_dims(tape, x, cond)?;
        let mut z = x;
        let mut log_scales = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (prev, s) = layer.inverse(tape, store, z, cond)?;
            check_finite(tape, prev, || format!("flow layer {l} (inverse)"))?;
            log_scales.extend(s);
            z = prev;
        }
        Ok(FlowPass { output: z, log_scales })
    }

    /// Mean negative log-likelihood over the rows of `theta` as a `1×1` node.
    pub fn nll_tape(&self, tape: &mut Tape, store: &ParamStore, theta: Var, cond: Var) -> Result<Var> {
        let rows = tape.shape(theta).0;
        let pass = self.inverse_tape(tape, store, theta, cond)?;
        let sq = tape.squared_norm(pass.output);
        let mut total = tape.scale(sq, 0.5);
        for s in pass.log_scales {
            let ss = tape.sum(s);
            total = tape.add(total, ss)?;
        }
        let mean = tape.scale(total, 1.0 / rows as f64);
        Ok(tape.add_scalar(mean, 0.5 * self.config.dim as f64 * (2.0 * PI).ln()))
    }

    fn row_log_det(tape: &mut Tape, rows: usize, log_scales: &[Var]) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        for &s in log_scales {
            for (r, row) in tape.value(s).rows().into_iter().enumerate() {
                out[r] += row.sum();
            }
        }
        out
    }

    /// Batched `z -> (x, log|det ∂x/∂z|)`.
    pub fn forward(&self, store: &ParamStore, z: &Array2<f64>, cond: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let cv = tape.leaf(cond.clone());
        let pass = self.forward_tape(&mut tape, store, zv, cv)?;
        let log_det = Self::row_log_det(&mut tape, z.nrows(), &pass.log_scales);
        Ok((tape.value(pass.output).clone(), log_det))
    }

    /// Batched `x -> (z, log|det ∂z/∂x|)`.
    pub fn inverse(&self, store: &ParamStore, x: &Array2<f64>, cond: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let cv = tape.leaf(cond.clone());
        let pass = self.inverse_tape(&mut tape, store, xv, cv)?;
        let log_det = Self::row_log_det(&mut tape, x.nrows(), &pass.log_scales);
        Ok((tape.value(pass.output).clone(), log_det.into_iter().map(|v| -v).collect()))
    }

    /// Exact conditional log-density of every row of `x`.
    pub fn log_prob(&self, store: &ParamStore, x: &Array2<f64>, cond: &Array2<f64>) -> Result<Vec<f64>> {
        let (z, log_det_inv) = self.inverse(store, x, cond)?;
        let norm = 0.5 * self.config.dim as f64 * (2.0 * PI).ln();
        Ok(z.rows().into_iter().zip(log_det_inv).map(|(row, ld)| -0.5 * row.dot(&row) - norm + ld).collect())
    }

    /// Draws `n` latents from N(0, I) and pushes them through the flow.
    pub fn sample<R: Rng>(&self, store: &ParamStore, cond: &[f64], n: usize, rng: &mut R) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let z = Array2::from_shape_fn((n, self.config.dim), |_| rng.sample(StandardNormal));
        let c = broadcast_row(cond, n);
        Ok(self.forward(store, &z, &c)?.0)
    }

    /// Flow output at the all-zeros latent.
    pub fn mode(&self, store: &ParamStore, cond: &[f64]) -> Result<Vec<f64>> {
        let z = Array2::zeros((1, self.config.dim));
        let c = broadcast_row(cond, 1);
        Ok(self.forward(store, &z, &c)?.0.row(0).to_vec())
    }
}

pub(crate) fn broadcast_row(row: &[f64], n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, row.len()), |(_, j)| row[j])
}
