//! Pointwise arithmetic, reductions, and softmax.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::exp;

use super::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::error::ShapeError;

fn same_shape(t: &Tape, a: TensorId, b: TensorId, what: &str) -> Result<(), ShapeError> {
    if t.shape(a) != t.shape(b) {
        return Err(ShapeError(format!(
            "{what} needs matching shapes, got {:?} and {:?}",
            t.shape(a),
            t.shape(b)
        )));
    }
    Ok(())
}

struct AddBack {
    a: TensorId,
    b: TensorId,
}

impl BackwardOp for AddBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            for (d, s) in ga.iter_mut().zip(g) {
                *d += s;
            }
        }
        if let Some(gb) = grads.slot(self.b) {
            for (d, s) in gb.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}

struct SubBack {
    a: TensorId,
    b: TensorId,
}

impl BackwardOp for SubBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            for (d, s) in ga.iter_mut().zip(g) {
                *d += s;
            }
        }
        if let Some(gb) = grads.slot(self.b) {
            for (d, s) in gb.iter_mut().zip(g) {
                *d -= s;
            }
        }
    }
}

struct MulBack {
    a: TensorId,
    b: TensorId,
}

impl BackwardOp for MulBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let (da, db) = (v.data(self.a), v.data(self.b));
        if let Some(ga) = grads.slot(self.a) {
            for i in 0..g.len() {
                ga[i] += g[i] * db[i];
            }
        }
        if let Some(gb) = grads.slot(self.b) {
            for i in 0..g.len() {
                gb[i] += g[i] * da[i];
            }
        }
    }
}

struct ScaleBack {
    a: TensorId,
    c: f64,
}

impl BackwardOp for ScaleBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            for i in 0..g.len() {
                ga[i] += g[i] * self.c;
            }
        }
    }
}

struct ReluBack {
    a: TensorId,
}

impl BackwardOp for ReluBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let x = v.data(self.a);
        if let Some(ga) = grads.slot(self.a) {
            for i in 0..g.len() {
                if x[i] > 0.0 {
                    ga[i] += g[i];
                }
            }
        }
    }
}

struct SumBack {
    a: TensorId,
}

impl BackwardOp for SumBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            for d in ga.iter_mut() {
                *d += g[0];
            }
        }
    }
}

struct MeanBack {
    a: TensorId,
    n: f64,
}

impl BackwardOp for MeanBack {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(ga) = grads.slot(self.a) {
            let s = g[0] / self.n;
            for d in ga.iter_mut() {
                *d += s;
            }
        }
    }
}

struct SoftmaxBack {
    a: TensorId,
    row: usize,
}

impl BackwardOp for SoftmaxBack {
    fn backward(&self, v: &TapeView<'_>, out: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let y = v.data(out);
        if let Some(ga) = grads.slot(self.a) {
            for r in (0..g.len()).step_by(self.row) {
                let (yr, gr) = (&y[r..r + self.row], &g[r..r + self.row]);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..self.row {
                    ga[r + i] += yr[i] * (gr[i] - dot);
                }
            }
        }
    }
}

/// Numerically stable softmax over one contiguous row: shifts by the max
/// before exponentiating.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Tape {
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, ShapeError> {
        same_shape(self, a, b, "add")?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push_op(self.shape(a).to_vec(), data, &[a, b], Box::new(AddBack { a, b })))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, ShapeError> {
        same_shape(self, a, b, "sub")?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push_op(self.shape(a).to_vec(), data, &[a, b], Box::new(SubBack { a, b })))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, ShapeError> {
        same_shape(self, a, b, "mul")?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push_op(self.shape(a).to_vec(), data, &[a, b], Box::new(MulBack { a, b })))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        self.push_op(self.shape(a).to_vec(), data, &[a], Box::new(ScaleBack { a, c }))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.max(0.0)).collect();
        self.push_op(self.shape(a).to_vec(), data, &[a], Box::new(ReluBack { a }))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        self.push_op(vec![1], vec![s], &[a], Box::new(SumBack { a }))
    }

    /// Mean of all elements, as a `[1]` scalar.
    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.numel(a) as f64;
        let s: f64 = self.data(a).iter().sum::<f64>() / n;
        self.push_op(vec![1], vec![s], &[a], Box::new(MeanBack { a, n }))
    }

    /// Softmax over the trailing axis, applied independently to every row.
    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let shape = self.shape(a).to_vec();
        let row = *shape.last().expect("softmax needs at least one axis");
        let x = self.data(a);
        let mut data = vec![0.0; x.len()];
        for r in (0..x.len()).step_by(row) {
            softmax_row(&x[r..r + row], &mut data[r..r + row]);
        }
        self.push_op(shape, data, &[a], Box::new(SoftmaxBack { a, row }))
    }
}
