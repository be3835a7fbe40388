use ndarray::Array2;

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store.ids().map(|id| Array2::zeros(store.value(id).dim())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Decoupled weight decay followed by a bias-corrected Adam update.
/// Gradients are zeroed and the store version bumped afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, wd: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape("adam moments", store.len(), state.m.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let (w, g) = store.value_and_grad_mut(id);
        if m.dim() != w.dim() {
            return Err(Error::shape("adam moment", format!("{:?}", w.dim()), format!("{:?}", m.dim())));
        }
        ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
            *w -= lr * wd * *w;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
    store.zero_grads();
    store.bump_version();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Array2::from_elem((1, 1), w)).unwrap();
        s
    }

    fn w(s: &ParamStore) -> f64 {
        s.value(s.id("w").unwrap())[[0, 0]]
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        let id = s.id("w").unwrap();
        s.grad_mut(id)[[0, 0]] = g;
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = scalar_store(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.1, 0.0).unwrap();
        assert_eq!(w(&s), 0.7);
    }

    #[test]
    fn first_step_hand_computed() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        set_grad(&mut s, 2.0);
        let version = s.version();
        adam_step(&mut s, &mut st, 0.1, 0.0).unwrap();
        assert!((w(&s) - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((w(&s) - 0.9).abs() < 1e-8);
        assert_eq!(s.grad(s.id("w").unwrap())[[0, 0]], 0.0);
        assert_eq!(s.version(), version + 1);
    }

    #[test]
    fn decay_is_applied_before_the_update() {
        let mut s = scalar_store(2.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.1, 0.5).unwrap();
        assert!((w(&s) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut s = scalar_store(0.0);
        let mut st = AdamState::new(&s);
        for _ in 0..100 {
            let g = 2.0 * (w(&s) - 3.0);
            set_grad(&mut s, g);
            adam_step(&mut s, &mut st, 0.3, 0.0).unwrap();
        }
        assert!((w(&s) - 3.0).abs() < 1e-2, "{}", w(&s));
    }
}
