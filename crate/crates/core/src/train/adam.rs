//! Adam with per-group learning rates over the parameter store.

use crate::autodiff::{ParamGroup, ParameterStore};
use crate::math::Real;

/// Standard Adam. Segments that have never received a nonzero gradient are
/// skipped; with zero first/second moments their update is exactly zero, so
/// the skip is bit-equivalent to the full update.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
    touched: Vec<bool>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParameterStore<F>, beta1: F, beta2: F, eps: F) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![F::zero(); store.len()],
            v: vec![F::zero(); store.len()],
            t: 0,
            touched: vec![false; store.segments().len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[F], &[F]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<F>, v: Vec<F>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
        // Touched flags are re-detected from nonzero moments on the next step.
        self.touched.iter_mut().for_each(|s| *s = false);
    }

    /// One update over the store's accumulated gradients.
    pub fn step(&mut self, store: &mut ParameterStore<F>, lr_for: impl Fn(ParamGroup) -> F) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let one_m_b1 = F::one() - self.beta1;
        let one_m_b2 = F::one() - self.beta2;
        if self.touched.len() != store.segments().len() {
            self.touched.resize(store.segments().len(), false);
        }
        let segments: Vec<(std::ops::Range<usize>, ParamGroup)> = store
            .segments()
            .iter()
            .map(|s| (s.range.clone(), s.group))
            .collect();
        for (si, (range, group)) in segments.into_iter().enumerate() {
            if !self.touched[si] {
                let any = store.grads()[range.clone()].iter().any(|g| *g != F::zero())
                    || self.m[range.clone()].iter().any(|m| *m != F::zero());
                if !any {
                    continue;
                }
                self.touched[si] = true;
            }
            let lr = lr_for(group);
            let grads = &store.grads()[range.clone()];
            let m = &mut self.m[range.clone()];
            let v = &mut self.v[range.clone()];
            // values borrowed afterwards to appease the borrow checker
            let mut updates: Vec<F> = Vec::with_capacity(range.len());
            for i in 0..grads.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + one_m_b1 * g;
                v[i] = self.beta2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                updates.push(lr * m_hat / (v_hat.sqrt() + self.eps));
            }
            for (val, u) in store.values_mut()[range].iter_mut().zip(updates) {
                *val = *val - u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamGroup;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_reference_on_random_gradients() {
        let mut store = ParameterStore::<f64>::new();
        store.alloc("a", 5, ParamGroup::Grid, || 0.5).unwrap();
        store.alloc("b", 3, ParamGroup::Head, || -0.25).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.99, 1e-15);
        // Brute-force reference: plain per-coordinate Adam.
        let (b1, b2, eps) = (0.9f64, 0.99f64, 1e-15f64);
        let mut theta: Vec<f64> = store.values().to_vec();
        let mut m = vec![0.0f64; 8];
        let mut v = vec![0.0f64; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for t in 1..=50i32 {
            let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.grads_mut().copy_from_slice(&g);
            adam.step(&mut store, |grp| match grp {
                ParamGroup::Grid => 1e-2,
                ParamGroup::Head => 1e-3,
            });
            store.zero_grads();
            for i in 0..8 {
                let lr = if i < 5 { 1e-2 } else { 1e-3 };
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
            for (a, b) in store.values().iter().zip(&theta) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn untouched_segments_do_not_move() {
        let mut store = ParameterStore::<f64>::new();
        store.alloc("hot", 2, ParamGroup::Head, || 1.0).unwrap();
        store.alloc("cold", 2, ParamGroup::Head, || 2.0).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.99, 1e-15);
        store.grads_mut()[0] = 0.5;
        adam.step(&mut store, |_| 1e-2);
        assert_ne!(store.values()[0], 1.0);
        assert_eq!(store.values()[2], 2.0);
        assert_eq!(store.values()[3], 2.0);
        // Once a segment has momentum it keeps moving even with zero grads,
        // exactly like the full update.
        store.zero_grads();
        let before = store.values()[0];
        adam.step(&mut store, |_| 1e-2);
        assert_ne!(store.values()[0], before);
        assert_eq!(store.values()[2], 2.0);
    }

    #[test]
    fn zero_gradient_step_is_bounded_by_lr() {
        // With beta1 = 0.9, beta2 = 0.99 the per-step magnitude is <= lr.
        let mut store = ParameterStore::<f64>::new();
        store.alloc("p", 4, ParamGroup::Head, || 0.0).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.99, 1e-15);
        let lr = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for step in 0..100 {
            let mut prev = store.values().to_vec();
            if step < 50 {
                for g in store.grads_mut() {
                    *g = rng.gen_range(-2.0..2.0);
                }
            }
            adam.step(&mut store, |_| lr);
            store.zero_grads();
            for (a, b) in store.values().iter().zip(&mut prev) {
                assert!((a - *b).abs() <= lr * 1.0000001, "step {step}: {}", (a - *b).abs());
            }
        }
    }
}
