use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, stable_hash, NnError, Real, Tensor};

/// One trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }
}

/// Named parameters, iterated in sorted-name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        self.params.insert(name.to_string(), Param::new(value));
    }

    /// Kaiming-uniform weight (bound `sqrt(6 / fan_in)`) seeded from
    /// `(seed, name)`, so initialization does not depend on insertion order.
    pub fn insert_kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize, seed: u64) {
        let bound = (6.0 / fan_in as f64).sqrt();
        self.insert(name, uniform_tensor(shape, bound, mix_seed(seed, stable_hash(name.as_bytes()))));
    }

    /// Bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn insert_bias(&mut self, name: &str, len: usize, fan_in: usize, seed: u64) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(name, uniform_tensor(&[len], bound, mix_seed(seed, stable_hash(name.as_bytes()))));
    }

    pub fn value(&self, name: &str) -> &Tensor<T> {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .value
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<(), NnError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if p.grad.shape() != grad.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient for {name}: {:?} vs {:?}",
                grad.shape(),
                p.grad.shape()
            )));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in self.params.values_mut() {
            p.grad.scale(s);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameter values only, as stored in checkpoints.
    pub fn values(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }
}

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("uniform tensor shape")
}

/// Bias-corrected Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Applies one update using the gradients currently accumulated in `store`.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step = T::of(self.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        for p in store.params.values_mut() {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + one_b1 * gi;
            }
            let v = p.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + one_b2 * gi * gi;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                *w -= step * mi / ((vi * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(&[1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.value("p").data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.accumulate_grad("p", &Tensor::from_vec(&[1], vec![1.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut s);
        // m_hat = v_hat = 1 so the step is lr / (1 + eps)
        assert!((s.value("p").data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = ParamStore::<f32>::new();
            s.insert_kaiming("w", &[4, 3], 3, 11);
            let mut adam = Adam::new(0.01);
            for i in 0..10 {
                s.zero_grad();
                let g = Tensor::from_vec(&[4, 3], (0..12).map(|k| ((k * i) as f32).sin()).collect()).unwrap();
                s.accumulate_grad("w", &g).unwrap();
                adam.step(&mut s);
            }
            s.values()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::<f32>::new();
        a.insert_kaiming("x", &[3], 3, 5);
        a.insert_kaiming("y", &[3], 3, 5);
        let mut b = ParamStore::<f32>::new();
        b.insert_kaiming("y", &[3], 3, 5);
        b.insert_kaiming("x", &[3], 3, 5);
        assert_eq!(a.values(), b.values());
        assert_ne!(a.value("x"), a.value("y"));
    }
}
