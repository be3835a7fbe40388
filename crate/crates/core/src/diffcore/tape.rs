//! Tape-based reverse-mode differentiation over row-batched matrices.
//!
//! Every node holds a 2-D array whose rows are independent batch items. The
//! forward pass appends nodes in creation order, so replaying the node list
//! backwards is a valid reverse topological order.

use ndarray::{Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive with a hand-written vector-Jacobian product.
///
/// Domain operations (rotation decoding, kinematics, projection, the
/// distribution losses) implement this so they can live next to the code
/// they differentiate while the tape stays agnostic of them.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Array2<f64>], output: &Array2<f64>, grad_output: &Array2<f64>) -> Vec<Array2<f64>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Atan(Var),
    Exp(Var),
    Abs(Var),
    Softplus(Var),
    Sum(Var),
    RowSum(Var),
    SquaredNorm(Var),
    GatherCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Atan(..) => "atan",
            Op::Exp(..) => "exp",
            Op::Abs(..) => "abs",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::SquaredNorm(..) => "squared_norm",
            Op::GatherCols(..) => "gather_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Custom(_, op) => op.name(),
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the backward seed with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> Array2<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[var.0]),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    /// Name of the primitive that produced `var`.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Its gradient is returned by [`Tape::backward`].
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let v = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.leaf(v)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn check_same(&self, ctx: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    /// `x · w` with `x: n×k`, `w: k×m`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.shape(x);
        let (k2, _) = self.shape(w);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} · {k}x_"), format!("{k2}x_")));
        }
        let v = self.value(x).dot(self.value(w));
        Ok(self.push(v, Op::MatMul(x, w)))
    }

    /// Adds a `1×m` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.shape(x);
        if self.shape(b) != (1, m) {
            return Err(Error::shape("add_bias", format!("(1, {m})"), format!("{:?}", self.shape(b))));
        }
        let v = self.value(x) + self.value(b);
        Ok(self.push(v, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x) * factor;
        self.push(v, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) + c;
        self.push(v, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn atan(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::atan);
        self.push(v, Op::Atan(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::abs);
        self.push(v, Op::Abs(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(softplus);
        self.push(v, Op::Softplus(x))
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x))
    }

    /// Per-row sums as an `n×1` node.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(x))
    }

    pub fn squared_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|a| a * a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SquaredNorm(x))
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_cols", format!("index < {m}"), bad));
        }
        let src = self.value(x);
        let mut v = Array2::zeros((n, idx.len()));
        for r in 0..n {
            for (j, &c) in idx.iter().enumerate() {
                v[[r, j]] = src[[r, c]];
            }
        }
        Ok(self.push(v, Op::GatherCols(x, idx.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, _) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("index < {n}"), bad));
        }
        let v = self.value(x).select(Axis(0), idx);
        Ok(self.push(v, Op::GatherRows(x, idx.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat_cols", rows, self.shape(bad).0));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Records a custom primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Array2<f64>, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Replays the tape in reverse from `output` seeded with `seed`.
    ///
    /// Parameter gradients are accumulated into `store`; the returned
    /// [`Gradients`] expose the gradient of every node, including inputs.
    /// A tape can be replayed only once.
    pub fn backward(&mut self, output: Var, seed: Array2<f64>, store: &mut ParamStore) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if seed.dim() != self.shape(output) {
            return Err(Error::shape(
                "backward seed",
                format!("{:?}", self.shape(output)),
                format!("{:?}", seed.dim()),
            ));
        }
        self.consumed = true;
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.dim()).collect();
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => *store.grad_mut(*id) += &g,
                Op::MatMul(x, w) => {
                    let gx = g.dot(&self.nodes[w.0].value.t());
                    let gw = self.nodes[x.0].value.t().dot(&g);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, &g * *f),
                Op::AddScalar(x) => acc(&mut grads, *x, g.clone()),
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&self.nodes[x.0].value).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Atan(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&self.nodes[x.0].value).for_each(|d, &a| *d /= 1.0 + a * a);
                    acc(&mut grads, *x, gx);
                }
                Op::Exp(x) => acc(&mut grads, *x, &g * &node.value),
                Op::Abs(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&self.nodes[x.0].value).for_each(|d, &a| {
                        *d *= if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&self.nodes[x.0].value).for_each(|d, &a| *d *= sigmoid(a));
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let gx = Array2::from_elem(shapes[x.0], g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::RowSum(x) => {
                    let (n, m) = shapes[x.0];
                    let mut gx = Array2::zeros((n, m));
                    for r in 0..n {
                        gx.row_mut(r).fill(g[[r, 0]]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SquaredNorm(x) => {
                    let gx = &self.nodes[x.0].value * (2.0 * g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::GatherCols(x, idx) => {
                    let mut gx = Array2::zeros(shapes[x.0]);
                    for r in 0..g.nrows() {
                        for (j, &c) in idx.iter().enumerate() {
                            gx[[r, c]] += g[[r, j]];
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows(x, idx) => {
                    let mut gx = Array2::zeros(shapes[x.0]);
                    for (j, &r) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(r);
                        dst += &g.row(j);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = shapes[p.0].1;
                        let gp = g.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        offset += w;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::Custom(inputs, op) => {
                    let in_vals: Vec<&Array2<f64>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let gs = op.backward(&in_vals, &node.value, &g);
                    debug_assert_eq!(gs.len(), inputs.len(), "{} returned wrong arity", op.name());
                    for (v, gi) in inputs.iter().zip(gs) {
                        debug_assert_eq!(gi.dim(), shapes[v.0], "{} gradient shape", op.name());
                        acc(&mut grads, *v, gi);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one() -> Array2<f64> {
        Array2::from_elem((1, 1), 1.0)
    }

    #[test]
    fn identity_gradient_is_one() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.row(&[0.3]);
        let g = tape.backward(x, one(), &mut store).unwrap();
        assert_eq!(g.get(x)[[0, 0]], 1.0);
    }

    #[test]
    fn relu_dead_unit_has_zero_gradient() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.row(&[-0.5]);
        let y = tape.relu(x);
        let g = tape.backward(y, one(), &mut store).unwrap();
        assert_eq!(g.get(x)[[0, 0]], 0.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.row(&[0.0]);
        let y = tape.relu(x);
        let g = tape.backward(y, one(), &mut store).unwrap();
        assert_eq!(g.get(x)[[0, 0]], 0.0);
    }

    #[test]
    fn second_backward_fails() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.row(&[1.0]);
        let y = tape.sum(x);
        tape.backward(y, one(), &mut store).unwrap();
        assert!(matches!(tape.backward(y, one(), &mut store), Err(Error::TapeConsumed)));
    }

    #[test]
    fn untouched_params_get_zero_gradients() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let w = store.insert("w", array![[2.0]]).unwrap();
        let _wv = tape.param(&store, w);
        let x = tape.row(&[1.0]);
        tape.backward(x, one(), &mut store).unwrap();
        assert_eq!(store.grad(w)[[0, 0]], 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.row(&[1.0, 2.0]);
        let b = tape.row(&[1.0]);
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(array![[1.0, 2.0, 3.0]]);
        let a = tape.gather_cols(x, &[2, 0, 2]).unwrap();
        let b = tape.gather_rows(x, &[0, 0]).unwrap();
        let bs = tape.sum(b);
        let c = tape.concat_cols(&[a, x]).unwrap();
        let cs = tape.sum(c);
        let total = tape.add(cs, bs).unwrap();
        let g = tape.backward(total, one(), &mut store).unwrap();
        assert_eq!(g.get(x), array![[4.0, 3.0, 5.0]]);
    }
}
