//! Layout ops bridging per-slice feature maps `[C, H, W]` and slice-group
//! blocks `[C, H, W, N]` (slice axis last, innermost).

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::error::ShapeError;

struct Concat0Back {
    a: TensorId,
    b: TensorId,
    split: usize,
}

impl BackwardOp for Concat0Back {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            for (d, s) in ga.iter_mut().zip(&g[..self.split]) {
                *d += s;
            }
        }
        if let Some(gb) = grads.slot(self.b) {
            for (d, s) in gb.iter_mut().zip(&g[self.split..]) {
                *d += s;
            }
        }
    }
}

struct StackLastBack {
    inputs: Vec<TensorId>,
}

impl BackwardOp for StackLastBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let n = self.inputs.len();
        for (k, &id) in self.inputs.iter().enumerate() {
            if let Some(gi) = grads.slot(id) {
                for (base, d) in gi.iter_mut().enumerate() {
                    *d += g[base * n + k];
                }
            }
        }
    }
}

struct SliceLastBack {
    t: TensorId,
    n: usize,
    stride: usize,
}

impl BackwardOp for SliceLastBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(gt) = grads.slot(self.t) {
            for (base, s) in g.iter().enumerate() {
                gt[base * self.stride + self.n] += s;
            }
        }
    }
}

impl Tape {
    /// Concatenates along axis 0; all trailing axes must match.
    pub fn concat0(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, ShapeError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(ShapeError(format!(
                "concat0 needs matching trailing axes, got {sa:?} and {sb:?}"
            )));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = Vec::with_capacity(self.numel(a) + self.numel(b));
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let split = self.numel(a);
        Ok(self.push_op(shape, data, &[a, b], Box::new(Concat0Back { a, b, split })))
    }

    /// Stacks equal-shaped tensors along a new trailing axis:
    /// `N x [dims..] -> [dims.., N]`. The new axis is innermost, so slice
    /// `k`'s elements land at flat offsets `base * N + k`.
    pub fn stack_last(&mut self, inputs: &[TensorId]) -> Result<TensorId, ShapeError> {
        let first = *inputs
            .first()
            .ok_or_else(|| ShapeError("stack_last needs at least one input".into()))?;
        let base_shape = self.shape(first).to_vec();
        for &id in &inputs[1..] {
            if self.shape(id) != base_shape {
                return Err(ShapeError(format!(
                    "stack_last needs equal shapes, got {:?} and {:?}",
                    base_shape,
                    self.shape(id)
                )));
            }
        }
        let n = inputs.len();
        let per = self.numel(first);
        let mut data = vec![0.0; per * n];
        for (k, &id) in inputs.iter().enumerate() {
            for (base, &v) in self.data(id).iter().enumerate() {
                data[base * n + k] = v;
            }
        }
        let mut shape = base_shape;
        shape.push(n);
        Ok(self.push_op(
            shape,
            data,
            inputs,
            Box::new(StackLastBack {
                inputs: inputs.to_vec(),
            }),
        ))
    }

    /// Extracts index `n` of the trailing axis: `[dims.., N] -> [dims..]`.
    /// Inverse of one arm of [`Tape::stack_last`].
    pub fn slice_last(&mut self, t: TensorId, n: usize) -> Result<TensorId, ShapeError> {
        let s = self.shape(t);
        if s.len() < 2 {
            return Err(ShapeError(format!(
                "slice_last needs at least two axes, got {s:?}"
            )));
        }
        let stride = *s.last().unwrap();
        if n >= stride {
            return Err(ShapeError(format!(
                "slice_last index {n} out of range for trailing axis {stride}"
            )));
        }
        let shape = s[..s.len() - 1].to_vec();
        let src = self.data(t);
        let per = src.len() / stride;
        let mut data = vec![0.0; per];
        for (base, d) in data.iter_mut().enumerate() {
            *d = src[base * stride + n];
        }
        Ok(self.push_op(
            shape,
            data,
            &[t],
            Box::new(SliceLastBack { t, n, stride }),
        ))
    }
}
