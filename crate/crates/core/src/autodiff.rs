//! Reverse-mode differentiation substrate.
//!
//! The networks in this crate are two small fixed MLP shapes, so there is no
//! tape: each op exposes a `forward` and a hand-written `backward` that
//! accumulates cotangents. [`ParameterStore`] owns every learnable scalar in
//! named segments; workers accumulate into private [`GradBuffer`]s that a
//! single coordinator reduces in a fixed order.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::math::{dot, Real};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),
    #[error("non-finite forward value during finite-difference check")]
    NonFiniteForward,
    #[error("duplicate parameter segment name: {0}")]
    DuplicateSegment(String),
}

/// Learning-rate group a parameter segment belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Feature-grid tables.
    Grid,
    /// MLP head weights and biases.
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SegmentId(pub usize);

#[derive(Clone, Debug)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
    pub group: ParamGroup,
}

/// Named contiguous blocks of scalar parameters with matching gradients.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<F> {
    values: Vec<F>,
    grads: Vec<F>,
    segments: Vec<Segment>,
    by_name: HashMap<String, SegmentId>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            segments: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Allocate a named segment, filling values from `init`.
    pub fn alloc(
        &mut self,
        name: &str,
        len: usize,
        group: ParamGroup,
        mut init: impl FnMut() -> F,
    ) -> Result<SegmentId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateSegment(name.to_string()));
        }
        let start = self.values.len();
        self.values.extend(std::iter::repeat_with(&mut init).take(len));
        self.grads.extend(std::iter::repeat(F::zero()).take(len));
        let id = SegmentId(self.segments.len());
        self.segments.push(Segment {
            name: name.to_string(),
            range: start..start + len,
            group,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn grads(&self) -> &[F] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [F] {
        &mut self.grads
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn segment_values(&self, id: SegmentId) -> &[F] {
        &self.values[self.segments[id.0].range.clone()]
    }

    pub fn segment_by_name(&self, name: &str) -> Option<SegmentId> {
        self.by_name.get(name).copied()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = F::zero());
    }

    /// Sum a worker's gradient buffer into the store's gradients.
    /// Callers reduce buffers in a fixed order to keep runs bit-stable.
    pub fn accumulate(&mut self, buf: &GradBuffer<F>) {
        assert_eq!(buf.0.len(), self.grads.len(), "grad buffer layout mismatch");
        for (g, b) in self.grads.iter_mut().zip(&buf.0) {
            *g = *g + *b;
        }
    }

    pub fn new_grad_buffer(&self) -> GradBuffer<F> {
        GradBuffer(vec![F::zero(); self.values.len()])
    }

    /// Check the structural invariants: matched lengths, unique names,
    /// disjoint segment ranges covering the store.
    pub fn validate(&self) -> bool {
        if self.values.len() != self.grads.len() {
            return false;
        }
        let mut covered = 0usize;
        for seg in &self.segments {
            if seg.range.start != covered {
                return false;
            }
            covered = seg.range.end;
        }
        covered == self.values.len() && self.by_name.len() == self.segments.len()
    }
}

/// A gradient accumulation buffer with the same layout as a store.
#[derive(Clone, Debug)]
pub struct GradBuffer<F>(Vec<F>);

impl<F: Real> GradBuffer<F> {
    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.0
    }
}

/// Column-major matrix backing the linear layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    /// data[c * rows + r] = W[r][c]
    pub data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[F]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            for (j, v) in row.iter().enumerate() {
                m.data[j * r + i] = *v;
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    #[inline(always)]
    pub fn col(&self, c: usize) -> &[F] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }
}

/// out = W·x + b over raw column-major weight storage.
#[inline]
pub fn linear_forward_raw<F: Real>(w: &[F], b: &[F], x: &[F], out: &mut [F]) {
    let rows = b.len();
    debug_assert_eq!(w.len(), rows * x.len());
    out.copy_from_slice(b);
    for (k, xk) in x.iter().enumerate() {
        let col = &w[k * rows..(k + 1) * rows];
        for (o, wv) in out.iter_mut().zip(col) {
            *o = wv.mul_add(*xk, *o);
        }
    }
}

/// Backward of the linear map. Accumulates into every gradient output.
/// `d_x` may be empty when input cotangents are not needed.
#[inline]
pub fn linear_backward_raw<F: Real>(
    w: &[F],
    x: &[F],
    d_out: &[F],
    d_x: &mut [F],
    d_w: &mut [F],
    d_b: &mut [F],
) {
    let rows = d_out.len();
    for (k, xk) in x.iter().enumerate() {
        let dcol = &mut d_w[k * rows..(k + 1) * rows];
        for (dw, g) in dcol.iter_mut().zip(d_out) {
            *dw = g.mul_add(*xk, *dw);
        }
    }
    for (db, g) in d_b.iter_mut().zip(d_out) {
        *db = *db + *g;
    }
    if !d_x.is_empty() {
        debug_assert_eq!(d_x.len(), x.len());
        for (k, dx) in d_x.iter_mut().enumerate() {
            *dx = *dx + dot(&w[k * rows..(k + 1) * rows], d_out);
        }
    }
}

/// Dense affine map `out = W·input + bias`.
pub fn linear_layer<F: Real>(
    input: &[F],
    weights: &Matrix<F>,
    bias: &[F],
) -> Result<Vec<F>, AutodiffError> {
    if weights.cols != input.len() || weights.rows != bias.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "linear_layer",
            expected: format!("weights {}x{}, bias {}", bias.len(), input.len(), bias.len()),
            got: format!(
                "weights {}x{}, bias {}, input {}",
                weights.rows,
                weights.cols,
                bias.len(),
                input.len()
            ),
        });
    }
    let mut out = vec![F::zero(); weights.rows];
    linear_forward_raw(&weights.data, bias, input, &mut out);
    Ok(out)
}

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Exp,
    /// exp with the pre-activation clamped to <= 15; the gradient is zero
    /// beyond the clamp.
    TruncatedExp,
}

pub const TRUNC_EXP_CLAMP: f64 = 15.0;

impl Activation {
    #[inline(always)]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Sigmoid => F::one() / (F::one() + (-x).exp()),
            Activation::Exp => x.exp(),
            Activation::TruncatedExp => x.min(F::c(TRUNC_EXP_CLAMP)).exp(),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline(always)]
    pub fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (F::one() - s)
            }
            Activation::Exp => x.exp(),
            Activation::TruncatedExp => {
                if x <= F::c(TRUNC_EXP_CLAMP) {
                    x.exp()
                } else {
                    F::zero()
                }
            }
        }
    }

    pub fn apply_slice<F: Real>(self, x: &[F], out: &mut [F]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.apply(*v);
        }
    }
}

/// Elementwise activation over a vector.
pub fn activation<F: Real>(kind: Activation, input: &[F]) -> Vec<F> {
    input.iter().map(|&x| kind.apply(x)).collect()
}

/// Mean over the batch of squared L2 color differences.
pub fn mse_loss<F: Real>(predicted: &[[F; 3]], target: &[[F; 3]]) -> Result<F, AutodiffError> {
    if predicted.is_empty() {
        return Err(AutodiffError::EmptyBatch("mse_loss"));
    }
    if predicted.len() != target.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "mse_loss",
            expected: format!("{} predictions", target.len()),
            got: format!("{} predictions", predicted.len()),
        });
    }
    let mut acc = F::zero();
    for (p, t) in predicted.iter().zip(target) {
        for c in 0..3 {
            let d = p[c] - t[c];
            acc = d.mul_add(d, acc);
        }
    }
    Ok(acc / F::c(predicted.len() as f64))
}

/// Per-element gradient of [`mse_loss`]: 2(pred - target)/batch_size.
#[inline(always)]
pub fn mse_loss_grad<F: Real>(pred: [F; 3], target: [F; 3], batch_size: usize) -> [F; 3] {
    let scale = F::c(2.0) / F::c(batch_size as f64);
    [
        (pred[0] - target[0]) * scale,
        (pred[1] - target[1]) * scale,
        (pred[2] - target[2]) * scale,
    ]
}

/// A differentiable operation: deterministic forward plus a backward that
/// accumulates cotangents (never overwrites).
pub trait DifferentiableOp<F: Real> {
    fn n_inputs(&self) -> usize;
    fn n_params(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn forward(&self, inputs: &[F], params: &[F], out: &mut [F]);
    fn backward(
        &self,
        inputs: &[F],
        params: &[F],
        cotangent: &[F],
        d_inputs: &mut [F],
        d_params: &mut [F],
    );
}

/// Adapter for building ops out of closures; used to wrap composite
/// pipelines (full MLPs, render passes) for gradient checking.
pub struct FnOp<F: Real> {
    pub n_inputs: usize,
    pub n_params: usize,
    pub n_outputs: usize,
    #[allow(clippy::type_complexity)]
    pub fwd: Box<dyn Fn(&[F], &[F], &mut [F]) + Sync>,
    #[allow(clippy::type_complexity)]
    pub bwd: Box<dyn Fn(&[F], &[F], &[F], &mut [F], &mut [F]) + Sync>,
}

impl<F: Real> DifferentiableOp<F> for FnOp<F> {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }
    fn forward(&self, inputs: &[F], params: &[F], out: &mut [F]) {
        (self.fwd)(inputs, params, out);
    }
    fn backward(
        &self,
        inputs: &[F],
        params: &[F],
        cotangent: &[F],
        d_inputs: &mut [F],
        d_params: &mut [F],
    ) {
        (self.bwd)(inputs, params, cotangent, d_inputs, d_params);
    }
}

/// Linear layer as a checkable op. Parameter layout: column-major weights
/// followed by the bias; inputs are the input vector.
pub struct LinearOp {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<F: Real> DifferentiableOp<F> for LinearOp {
    fn n_inputs(&self) -> usize {
        self.in_dim
    }
    fn n_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
    fn n_outputs(&self) -> usize {
        self.out_dim
    }
    fn forward(&self, inputs: &[F], params: &[F], out: &mut [F]) {
        let nw = self.in_dim * self.out_dim;
        linear_forward_raw(&params[..nw], &params[nw..], inputs, out);
    }
    fn backward(
        &self,
        inputs: &[F],
        params: &[F],
        cotangent: &[F],
        d_inputs: &mut [F],
        d_params: &mut [F],
    ) {
        let nw = self.in_dim * self.out_dim;
        let (dw, db) = d_params.split_at_mut(nw);
        linear_backward_raw(&params[..nw], inputs, cotangent, d_inputs, dw, db);
    }
}

/// Elementwise activation as a checkable op (no parameters).
pub struct ActivationOp {
    pub kind: Activation,
    pub dim: usize,
}

impl<F: Real> DifferentiableOp<F> for ActivationOp {
    fn n_inputs(&self) -> usize {
        self.dim
    }
    fn n_params(&self) -> usize {
        0
    }
    fn n_outputs(&self) -> usize {
        self.dim
    }
    fn forward(&self, inputs: &[F], _params: &[F], out: &mut [F]) {
        self.kind.apply_slice(inputs, out);
    }
    fn backward(
        &self,
        inputs: &[F],
        _params: &[F],
        cotangent: &[F],
        d_inputs: &mut [F],
        _d_params: &mut [F],
    ) {
        for i in 0..self.dim {
            d_inputs[i] = d_inputs[i] + cotangent[i] * self.kind.derivative(inputs[i]);
        }
    }
}

/// MSE against fixed targets as a checkable op; inputs are the flattened
/// predicted batch.
pub struct MseOp<F> {
    pub targets: Vec<[F; 3]>,
}

impl<F: Real> DifferentiableOp<F> for MseOp<F> {
    fn n_inputs(&self) -> usize {
        self.targets.len() * 3
    }
    fn n_params(&self) -> usize {
        0
    }
    fn n_outputs(&self) -> usize {
        1
    }
    fn forward(&self, inputs: &[F], _params: &[F], out: &mut [F]) {
        let preds: Vec<[F; 3]> = inputs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        out[0] = mse_loss(&preds, &self.targets).expect("aligned batch");
    }
    fn backward(
        &self,
        inputs: &[F],
        _params: &[F],
        cotangent: &[F],
        d_inputs: &mut [F],
        _d_params: &mut [F],
    ) {
        let b = self.targets.len();
        for (i, (chunk, t)) in inputs.chunks_exact(3).zip(&self.targets).enumerate() {
            let g = mse_loss_grad([chunk[0], chunk[1], chunk[2]], *t, b);
            for c in 0..3 {
                d_inputs[i * 3 + c] = d_inputs[i * 3 + c] + g[c] * cotangent[0];
            }
        }
    }
}

/// Compare an op's analytic gradient against central finite differences.
///
/// A fixed random cotangent contracts multi-output ops to a scalar; the
/// probe point must be away from activation kinks. Returns the maximum of
/// |analytic - fd| / max(1, |analytic|) over all input and parameter
/// coordinates.
pub fn finite_diff_check<F: Real>(
    op: &dyn DifferentiableOp<F>,
    inputs: &[F],
    params: &[F],
    step: F,
) -> Result<F, AutodiffError> {
    use rand::SeedableRng;
    assert_eq!(inputs.len(), op.n_inputs());
    assert_eq!(params.len(), op.n_params());
    let mut rng = ChaCha8Rng::from_seed(crate::math::derive_seed(0x5eed, "fd-cotangent"));
    let cotangent: Vec<F> = (0..op.n_outputs())
        .map(|_| F::c(rng.gen_range(0.25..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 }))
        .collect();

    let mut out = vec![F::zero(); op.n_outputs()];
    op.forward(inputs, params, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFiniteForward);
    }

    let mut d_inputs = vec![F::zero(); inputs.len()];
    let mut d_params = vec![F::zero(); params.len()];
    op.backward(inputs, params, &cotangent, &mut d_inputs, &mut d_params);

    let scalar = |inp: &[F], par: &[F]| -> Result<F, AutodiffError> {
        let mut o = vec![F::zero(); op.n_outputs()];
        op.forward(inp, par, &mut o);
        if o.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteForward);
        }
        Ok(o.iter().zip(&cotangent).map(|(a, b)| *a * *b).sum())
    };

    let mut max_err = F::zero();
    let mut probe = |vals: &[F], analytic: &[F], is_input: bool| -> Result<(), AutodiffError> {
        let mut v = vals.to_vec();
        for i in 0..v.len() {
            let orig = v[i];
            v[i] = orig + step;
            let hi = if is_input { scalar(&v, params)? } else { scalar(inputs, &v)? };
            v[i] = orig - step;
            let lo = if is_input { scalar(&v, params)? } else { scalar(inputs, &v)? };
            v[i] = orig;
            let fd = (hi - lo) / (F::c(2.0) * step);
            let err = (analytic[i] - fd).abs() / F::one().max(analytic[i].abs());
            max_err = max_err.max(err);
        }
        Ok(())
    };
    probe(inputs, &d_inputs, true)?;
    probe(params, &d_params, false)?;
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn linear_identity() {
        let w = Matrix::<f64>::identity(3);
        let out = linear_layer(&[1.0, 2.0, 3.0], &w, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_hand_computed() {
        // [[1,1],[0,2]]·[2,3] + [0.5,0] = [5.5, 6]
        let w = Matrix::from_rows(&[&[1.0, 1.0][..], &[0.0, 2.0][..]]);
        let out = linear_layer(&[2.0, 3.0], &w, &[0.5, 0.0]).unwrap();
        assert_eq!(out, vec![5.5, 6.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_shapes() {
        let w = Matrix::<f64>::zeros(2, 3);
        let err = linear_layer(&[1.0, 2.0], &w, &[0.0, 0.0]).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("2x3") && msg.contains("input 2"), "{msg}");
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut r = rng();
        let op = LinearOp { in_dim: 2, out_dim: 2 };
        // Weights [[1,1],[0,2]] column-major, bias [0.5, 0].
        let params: Vec<f64> = vec![1.0, 0.0, 1.0, 2.0, 0.5, 0.0];
        let inputs = vec![2.0, 3.0];
        let err = finite_diff_check(&op, &inputs, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
        // Also at random points.
        for _ in 0..10 {
            let inputs: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            let params: Vec<f64> = (0..4 * 3 + 4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let op = LinearOp { in_dim: 3, out_dim: 4 };
            let err = finite_diff_check(&op, &inputs, &params, 1e-5).unwrap();
            assert!(err < 1e-6, "relative error {err}");
        }
    }

    #[test]
    fn activations() {
        assert_eq!(activation(Activation::Relu, &[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(activation(Activation::Sigmoid, &[0.0]), vec![0.5]);
        let out = activation(Activation::TruncatedExp, &[20.0]);
        assert_eq!(out[0], 15.0f64.exp());
        // Gradient respects the clamp.
        assert_eq!(Activation::TruncatedExp.derivative(20.0f64), 0.0);
        assert_eq!(Activation::TruncatedExp.derivative(1.0f64), 1.0f64.exp());
    }

    #[test]
    fn activation_gradients_via_fd() {
        for kind in [Activation::Sigmoid, Activation::Exp, Activation::TruncatedExp] {
            let op = ActivationOp { kind, dim: 4 };
            let inputs = vec![0.3f64, -0.7, 1.1, 2.0];
            let err = finite_diff_check(&op, &inputs, &[], 1e-6).unwrap();
            assert!(err < 1e-6, "{kind:?}: {err}");
        }
        // Relu probed away from the kink.
        let op = ActivationOp { kind: Activation::Relu, dim: 3 };
        let err = finite_diff_check(&op, &[0.5f64, -0.5, 2.0], &[], 1e-6).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn mse_basics() {
        let a = vec![[1.0f64, 0.0, 0.0]];
        let b = vec![[0.0f64, 0.0, 0.0]];
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &b).unwrap(), 1.0);
        assert!(matches!(
            mse_loss::<f64>(&[], &[]),
            Err(AutodiffError::EmptyBatch(_))
        ));
    }

    #[test]
    fn mse_gradient_via_fd() {
        let mut r = rng();
        let targets: Vec<[f64; 3]> = (0..4)
            .map(|_| [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)])
            .collect();
        let inputs: Vec<f64> = (0..12).map(|_| r.gen_range(0.0..1.0)).collect();
        let op = MseOp { targets };
        let err = finite_diff_check(&op, &inputs, &[], 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn constant_op_has_zero_error() {
        let op = FnOp::<f64> {
            n_inputs: 2,
            n_params: 1,
            n_outputs: 1,
            fwd: Box::new(|_, _, out| out[0] = 3.25),
            bwd: Box::new(|_, _, _, _, _| {}),
        };
        let err = finite_diff_check(&op, &[0.4, 0.6], &[1.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn store_invariants_and_zeroing() {
        let mut store = ParameterStore::<f64>::new();
        let a = store.alloc("a", 3, ParamGroup::Head, || 1.0).unwrap();
        let b = store.alloc("b", 2, ParamGroup::Grid, || 2.0).unwrap();
        assert!(store.validate());
        assert!(store.alloc("a", 1, ParamGroup::Head, || 0.0).is_err());
        assert_eq!(store.segment_values(a), &[1.0, 1.0, 1.0]);
        assert_eq!(store.segment(b).range, 3..5);
        store.grads_mut()[0] = 5.0;
        store.zero_grads();
        assert!(store.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_accumulation_is_additive() {
        // backward twice with cotangent g == backward once with 2g
        let op = LinearOp { in_dim: 2, out_dim: 2 };
        let params: Vec<f64> = vec![0.3, -0.2, 0.8, 0.5, 0.1, -0.4];
        let inputs = vec![1.5, -0.7];
        let g = vec![0.9, -0.3];
        let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let mut di1 = vec![0.0; 2];
        let mut dp1 = vec![0.0; 6];
        op.backward(&inputs, &params, &g, &mut di1, &mut dp1);
        op.backward(&inputs, &params, &g, &mut di1, &mut dp1);
        let mut di2 = vec![0.0; 2];
        let mut dp2 = vec![0.0; 6];
        op.backward(&inputs, &params, &g2, &mut di2, &mut dp2);
        for (a, b) in di1.iter().zip(&di2) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in dp1.iter().zip(&dp2) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
