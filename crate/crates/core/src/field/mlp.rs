//! The two fixed MLP shapes used by every pyramid level head:
//! a 64-channel density MLP with one hidden layer and a 128-channel color
//! MLP with two hidden layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{linear_forward_raw, AutodiffError, ParamGroup, ParameterStore};
use crate::field::sh::SH_DIM;
use crate::math::Real;

pub const DENSITY_HIDDEN: usize = 64;
pub const COLOR_HIDDEN: usize = 128;
/// Geometry feature vector passed from the density MLP to the color MLP.
pub const GEO_DIM: usize = 15;
/// Density MLP output: sigma pre-activation plus the geometry features.
pub const DENSITY_OUT: usize = 1 + GEO_DIM;
pub const COLOR_IN: usize = GEO_DIM + SH_DIM;

/// Store-backed affine layer with column-major weights.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w_off: usize,
    b_off: usize,
}

impl Linear {
    /// Kaiming-uniform weights scaled by fan-in; zero biases.
    pub fn alloc<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AutodiffError> {
        let bound = (6.0 / in_dim as f64).sqrt();
        let w = store.alloc(&format!("{name}.w"), in_dim * out_dim, ParamGroup::Head, || {
            F::c(rng.gen_range(-bound..bound))
        })?;
        let b = store.alloc(&format!("{name}.b"), out_dim, ParamGroup::Head, || F::zero())?;
        Ok(Self {
            in_dim,
            out_dim,
            w_off: store.segment(w).range.start,
            b_off: store.segment(b).range.start,
        })
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    #[inline(always)]
    fn w<'a, F>(&self, values: &'a [F]) -> &'a [F] {
        &values[self.w_off..self.w_off + self.in_dim * self.out_dim]
    }

    #[inline(always)]
    fn b<'a, F>(&self, values: &'a [F]) -> &'a [F] {
        &values[self.b_off..self.b_off + self.out_dim]
    }

    #[inline]
    pub fn forward<F: Real>(&self, values: &[F], x: &[F], out: &mut [F]) {
        linear_forward_raw(self.w(values), self.b(values), x, out);
    }

    /// Accumulate gradients; `d_x` may be empty to skip input cotangents.
    #[inline]
    pub fn backward<F: Real>(&self, values: &[F], x: &[F], d_out: &[F], d_x: &mut [F], gbuf: &mut [F]) {
        // Split the gradient buffer around the weight and bias ranges.
        let (dw, db) = {
            let w_range = self.w_off..self.w_off + self.in_dim * self.out_dim;
            let b_range = self.b_off..self.b_off + self.out_dim;
            debug_assert!(w_range.end <= b_range.start || b_range.end <= w_range.start);
            // Safety not needed: use split via raw indices through two passes.
            (w_range, b_range)
        };
        // Two disjoint mutable regions of gbuf: do the accumulation inline.
        let rows = d_out.len();
        {
            let dws = &mut gbuf[dw];
            for (k, xk) in x.iter().enumerate() {
                let dcol = &mut dws[k * rows..(k + 1) * rows];
                for (dwv, g) in dcol.iter_mut().zip(d_out) {
                    *dwv = g.mul_add(*xk, *dwv);
                }
            }
        }
        {
            let dbs = &mut gbuf[db];
            for (dbv, g) in dbs.iter_mut().zip(d_out) {
                *dbv = *dbv + *g;
            }
        }
        if !d_x.is_empty() {
            let w = self.w(values);
            for (k, dx) in d_x.iter_mut().enumerate() {
                *dx = *dx + crate::math::dot(&w[k * rows..(k + 1) * rows], d_out);
            }
        }
    }
}

#[inline(always)]
fn relu_slice<F: Real>(x: &mut [F]) {
    for v in x.iter_mut() {
        *v = v.max(F::zero());
    }
}

/// Density head: `enc -> 64 (relu) -> [sigma_pre, geo]`.
#[derive(Clone, Debug)]
pub struct DensityMlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl DensityMlp {
    pub fn alloc<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        in_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            l1: Linear::alloc(store, &format!("{name}.l1"), in_dim, DENSITY_HIDDEN, rng)?,
            l2: Linear::alloc(store, &format!("{name}.l2"), DENSITY_HIDDEN, DENSITY_OUT, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count()
    }

    /// `h1` receives the post-relu hidden activations, `out` the raw outputs.
    #[inline]
    pub fn forward<F: Real>(&self, values: &[F], enc: &[F], h1: &mut [F], out: &mut [F]) {
        self.l1.forward(values, enc, h1);
        relu_slice(h1);
        self.l2.forward(values, h1, out);
    }

    #[inline]
    pub fn backward<F: Real>(
        &self,
        values: &[F],
        enc: &[F],
        h1: &[F],
        d_out: &[F],
        d_enc: &mut [F],
        gbuf: &mut [F],
    ) {
        let mut d_h1 = [F::zero(); DENSITY_HIDDEN];
        self.l2.backward(values, h1, d_out, &mut d_h1, gbuf);
        for (g, h) in d_h1.iter_mut().zip(h1) {
            if *h <= F::zero() {
                *g = F::zero();
            }
        }
        self.l1.backward(values, enc, &d_h1, d_enc, gbuf);
    }
}

/// Color head: `[geo, sh] -> 128 (relu) -> 128 (relu) -> rgb_pre`.
#[derive(Clone, Debug)]
pub struct ColorMlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl ColorMlp {
    pub fn alloc<F: Real>(
        store: &mut ParameterStore<F>,
        name: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            l1: Linear::alloc(store, &format!("{name}.l1"), COLOR_IN, COLOR_HIDDEN, rng)?,
            l2: Linear::alloc(store, &format!("{name}.l2"), COLOR_HIDDEN, COLOR_HIDDEN, rng)?,
            l3: Linear::alloc(store, &format!("{name}.l3"), COLOR_HIDDEN, 3, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.l3.param_count()
    }

    #[inline]
    pub fn forward<F: Real>(
        &self,
        values: &[F],
        input: &[F],
        h1: &mut [F],
        h2: &mut [F],
        rgb_pre: &mut [F],
    ) {
        self.l1.forward(values, input, h1);
        relu_slice(h1);
        self.l2.forward(values, h1, h2);
        relu_slice(h2);
        self.l3.forward(values, h2, rgb_pre);
    }

    #[inline]
    pub fn backward<F: Real>(
        &self,
        values: &[F],
        input: &[F],
        h1: &[F],
        h2: &[F],
        d_rgb_pre: &[F],
        d_input: &mut [F],
        gbuf: &mut [F],
    ) {
        let mut d_h2 = [F::zero(); COLOR_HIDDEN];
        self.l3.backward(values, h2, d_rgb_pre, &mut d_h2, gbuf);
        for (g, h) in d_h2.iter_mut().zip(h2) {
            if *h <= F::zero() {
                *g = F::zero();
            }
        }
        let mut d_h1 = [F::zero(); COLOR_HIDDEN];
        self.l2.backward(values, h1, &d_h2, &mut d_h1, gbuf);
        for (g, h) in d_h1.iter_mut().zip(h1) {
            if *h <= F::zero() {
                *g = F::zero();
            }
        }
        self.l1.backward(values, input, &d_h1, d_input, gbuf);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, FnOp};
    use rand::SeedableRng;

    fn density_op<F: Real>(in_dim: usize) -> (FnOp<F>, Vec<F>, Vec<F>) {
        let mut store = ParameterStore::<F>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mlp = DensityMlp::alloc(&mut store, "d", in_dim, &mut rng).unwrap();
        let mlp2 = mlp.clone();
        let params = store.values().to_vec();
        let mut inputs = Vec::new();
        for i in 0..in_dim {
            inputs.push(F::c(0.3 * ((i as f64) + 1.0).sin()));
        }
        let op = FnOp {
            n_inputs: in_dim,
            n_params: store.len(),
            n_outputs: DENSITY_OUT,
            fwd: Box::new(move |inp, par, out| {
                let mut h1 = [F::zero(); DENSITY_HIDDEN];
                mlp.forward(par, inp, &mut h1, out);
            }),
            bwd: Box::new(move |inp, par, cot, d_inp, d_par| {
                let mut h1 = [F::zero(); DENSITY_HIDDEN];
                let mut out = [F::zero(); DENSITY_OUT];
                mlp2.forward(par, inp, &mut h1, &mut out);
                mlp2.backward(par, inp, &h1, cot, d_inp, d_par);
            }),
        };
        (op, inputs, params)
    }

    #[test]
    fn density_mlp_gradients_f64() {
        let (op, inputs, params) = density_op::<f64>(16);
        let err = finite_diff_check(&op, &inputs, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn density_mlp_gradients_f32() {
        let (op, inputs, params) = density_op::<f32>(16);
        let err = finite_diff_check(&op, &inputs, &params, 5e-3).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn color_mlp_gradients_f64() {
        let mut store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mlp = ColorMlp::alloc(&mut store, "c", &mut rng).unwrap();
        let mlp2 = mlp.clone();
        let params = store.values().to_vec();
        let inputs: Vec<f64> = (0..COLOR_IN).map(|i| 0.4 * ((i as f64) * 0.7).cos()).collect();
        let op = FnOp {
            n_inputs: COLOR_IN,
            n_params: store.len(),
            n_outputs: 3,
            fwd: Box::new(move |inp, par, out| {
                let mut h1 = [0.0; COLOR_HIDDEN];
                let mut h2 = [0.0; COLOR_HIDDEN];
                mlp.forward(par, inp, &mut h1, &mut h2, out);
            }),
            bwd: Box::new(move |inp, par, cot, d_inp, d_par| {
                let mut h1 = [0.0; COLOR_HIDDEN];
                let mut h2 = [0.0; COLOR_HIDDEN];
                let mut rgb = [0.0; 3];
                mlp2.forward(par, inp, &mut h1, &mut h2, &mut rgb);
                mlp2.backward(par, inp, &h1, &h2, cot, d_inp, d_par);
            }),
        };
        let err = finite_diff_check(&op, &inputs, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
