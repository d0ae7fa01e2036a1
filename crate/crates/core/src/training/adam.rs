//! Adam with bias correction, applied across a parameter store.

use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

/// First and second moments per parameter, plus the shared step count.
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update on flat slices.
#[allow(clippy::too_many_arguments)]
pub fn adam_update_slice<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    hp: &AdamParams,
) {
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - hp.beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - hp.beta2.powi(t as i32));
    let lr = T::from_f64(hp.lr);
    let eps = T::from_f64(hp.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] = param[i] - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Apply one Adam step across the store. `grads` is indexed like the store;
/// `None` entries are treated as zero gradients (moments still decay).
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    hp: &AdamParams,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::shape(format!(
            "adam_step sizes disagree: store {}, grads {}, state {}",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let i = id.index();
        if let Some(g) = &grads[i] {
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} does not match parameter `{}` {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        let zero;
        let g: &Tensor<T> = match &grads[i] {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(store.get(id).shape());
                &zero
            }
        };
        adam_update_slice(
            store.get_mut(id).data_mut(),
            g.data(),
            state.m[i].data_mut(),
            state.v[i].data_mut(),
            state.t,
            hp,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.register("p", Tensor::from_vec(&[n], values).unwrap());
        s
    }

    #[test]
    fn zero_gradient_from_zero_state_changes_nothing() {
        let mut store = store_with(vec![0.3, -0.7]);
        let mut state = AdamState::new(&store);
        let grads = vec![Some(Tensor::zeros(&[2]))];
        adam_step(&mut store, &grads, &mut state, &AdamParams::default()).unwrap();
        let id = store.find("p").unwrap();
        assert_eq!(store.get(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn moments_decay_toward_zero_on_zero_gradient() {
        let mut store = store_with(vec![0.0]);
        let mut state = AdamState::new(&store);
        let hp = AdamParams::default();
        adam_step(&mut store, &[Some(Tensor::full(&[1], 1.0))], &mut state, &hp).unwrap();
        let m1 = state.m[0].data()[0];
        for _ in 0..5 {
            adam_step(&mut store, &[Some(Tensor::zeros(&[1]))], &mut state, &hp).unwrap();
        }
        assert!(state.m[0].data()[0].abs() < m1.abs());
        assert!(state.m[0].data()[0] > 0.0);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Hand evaluation at t = 1: mhat = 1, vhat = 1, so the update is
        // exactly -lr / (1 + eps).
        let hp = AdamParams::default();
        let expected = -hp.lr / (1.0 + hp.eps);
        let mut store = store_with(vec![0.0]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &[Some(Tensor::full(&[1], 1.0))], &mut state, &hp).unwrap();
        let id = store.find("p").unwrap();
        let got = store.get(id).data()[0];
        assert!((got - expected).abs() < 1e-18, "got {got}, expected {expected}");
        assert!((got - (-hp.lr)).abs() < 1e-10);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut store = store_with(vec![0.5, -0.25, 0.1]);
            let mut state = AdamState::new(&store);
            let g = Tensor::from_vec(&[3], vec![0.3, -0.9, 0.02]).unwrap();
            for _ in 0..7 {
                adam_step(&mut store, &[Some(g.clone())], &mut state, &AdamParams::default())
                    .unwrap();
            }
            let id = store.find("p").unwrap();
            store.get(id).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn matches_naive_reference_within_1e10() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 64;
        let init: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let steps: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let hp = AdamParams {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };

        // Library path.
        let mut store = store_with(init.clone());
        let mut state = AdamState::new(&store);
        for g in &steps {
            let gt = Tensor::from_vec(&[n], g.clone()).unwrap();
            adam_step(&mut store, &[Some(gt)], &mut state, &hp).unwrap();
        }
        let id = store.find("p").unwrap();
        let lib = store.get(id).data().to_vec();

        // Independent naive reference: textbook formulas, scalar loops.
        let mut p = init;
        let mut m = vec![0.0f64; n];
        let mut v = vec![0.0f64; n];
        for (step, g) in steps.iter().enumerate() {
            let t = (step + 1) as i32;
            for i in 0..n {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let mhat = m[i] / (1.0 - hp.beta1.powi(t));
                let vhat = v[i] / (1.0 - hp.beta2.powi(t));
                p[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
            }
        }
        for i in 0..n {
            assert!((lib[i] - p[i]).abs() < 1e-10, "idx {i}: {} vs {}", lib[i], p[i]);
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut store = store_with(vec![0.0, 0.0]);
        let mut state = AdamState::new(&store);
        let bad = vec![Some(Tensor::zeros(&[3]))];
        assert!(adam_step(&mut store, &bad, &mut state, &AdamParams::default()).is_err());
    }
}
