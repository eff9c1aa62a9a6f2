//! Adam optimizer over a [`ParamStore`], moments kept in store order.

use crate::nn::ParamStore;
use ndarray::ArrayD;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// First/second moment estimates plus the bias-correction step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect();
        let v = store.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect();
        AdamState { m, v, t: 0 }
    }
}

/// One Adam update. `grads[i]` pairs with the store's i-th parameter; `None`
/// stands for an all-zero gradient.
pub fn adam_step(
    params: &AdamParams,
    store: &mut ParamStore,
    state: &mut AdamState,
    grads: &[Option<ArrayD<f64>>],
) {
    assert_eq!(grads.len(), store.len(), "gradient count mismatch");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        match &grads[i] {
            Some(g) => {
                ndarray::Zip::from(&mut *m).and(g).for_each(|mv, &gv| {
                    *mv = params.beta1 * *mv + (1.0 - params.beta1) * gv;
                });
                ndarray::Zip::from(&mut *v).and(g).for_each(|vv, &gv| {
                    *vv = params.beta2 * *vv + (1.0 - params.beta2) * gv * gv;
                });
            }
            None => {
                m.mapv_inplace(|mv| params.beta1 * mv);
                v.mapv_inplace(|vv| params.beta2 * vv);
            }
        }
        let p = store.value_mut(id);
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pv, &mv, &vv| {
            let mhat = mv / bc1;
            let vhat = vv / bc2;
            *pv -= params.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_matches_closed_form_on_quadratic_bowl() {
        // f(x) = 0.5 x^2, grad = x; after one step from x0:
        // mhat = x0, vhat = x0^2, so x1 = x0 - lr * x0 / (|x0| + eps)
        let mut store = ParamStore::new();
        let id = store.add("x", ArrayD::from_elem(IxDyn(&[1]), 3.0));
        let mut state = AdamState::zeros_like(&store);
        let params = AdamParams {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
        };
        let grad = ArrayD::from_elem(IxDyn(&[1]), 3.0);
        adam_step(&params, &mut store, &mut state, &[Some(grad)]);
        let expected = 3.0 - 1e-2 * 3.0 / (3.0 + ADAM_EPS);
        let got = store.value(id)[[0]];
        assert!((got - expected).abs() < 1e-7, "got {got} expected {expected}");
    }

    #[test]
    fn second_step_matches_manual_recurrence() {
        let mut store = ParamStore::new();
        let id = store.add("x", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut state = AdamState::zeros_like(&store);
        let p = AdamParams {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
        };
        // manual reference
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = x; // bowl gradient
            m = p.beta1 * m + (1.0 - p.beta1) * g;
            v = p.beta2 * v + (1.0 - p.beta2) * g * g;
            let mhat = m / (1.0 - p.beta1.powi(t));
            let vhat = v / (1.0 - p.beta2.powi(t));
            x -= p.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        for _ in 0..2 {
            let g = ArrayD::from_elem(IxDyn(&[1]), store.value(id)[[0]]);
            adam_step(&p, &mut store, &mut state, &[Some(g)]);
        }
        assert!((store.value(id)[[0]] - x).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_bit_identical() {
        let mut store = ParamStore::new();
        let id = store.add("x", ArrayD::from_elem(IxDyn(&[3]), 0.7));
        let before: Vec<u64> = store.value(id).iter().map(|v| v.to_bits()).collect();
        let mut state = AdamState::zeros_like(&store);
        let p = AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
        };
        adam_step(&p, &mut store, &mut state, &[Some(ArrayD::zeros(IxDyn(&[3])))]);
        adam_step(&p, &mut store, &mut state, &[None]);
        let after: Vec<u64> = store.value(id).iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }
}
