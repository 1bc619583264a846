//! Fully connected layer over the trailing axis.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;

use super::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::error::ShapeError;

struct LinearBack {
    x: TensorId,
    w: TensorId,
    b: Option<TensorId>,
    rows: usize,
    c_in: usize,
    c_out: usize,
}

impl BackwardOp for LinearBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let x = v.data(self.x);
        let w = v.data(self.w);
        if let Some(gx) = grads.slot(self.x) {
            for r in 0..self.rows {
                for o in 0..self.c_out {
                    let go = g[r * self.c_out + o];
                    if go == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * self.c_in..(o + 1) * self.c_in];
                    let gxr = &mut gx[r * self.c_in..(r + 1) * self.c_in];
                    for i in 0..self.c_in {
                        gxr[i] += go * wrow[i];
                    }
                }
            }
        }
        if let Some(gw) = grads.slot(self.w) {
            for r in 0..self.rows {
                let xr = &x[r * self.c_in..(r + 1) * self.c_in];
                for o in 0..self.c_out {
                    let go = g[r * self.c_out + o];
                    if go == 0.0 {
                        continue;
                    }
                    let gwrow = &mut gw[o * self.c_in..(o + 1) * self.c_in];
                    for i in 0..self.c_in {
                        gwrow[i] += go * xr[i];
                    }
                }
            }
        }
        if let Some(bid) = self.b {
            if let Some(gb) = grads.slot(bid) {
                for r in 0..self.rows {
                    for o in 0..self.c_out {
                        gb[o] += g[r * self.c_out + o];
                    }
                }
            }
        }
    }
}

struct ChannelLinearBack {
    x: TensorId,
    w: TensorId,
    b: Option<TensorId>,
    cols: usize,
    c_in: usize,
    c_out: usize,
}

impl BackwardOp for ChannelLinearBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let x = v.data(self.x);
        let w = v.data(self.w);
        let s = self.cols;
        if let Some(gx) = grads.slot(self.x) {
            for i in 0..self.c_in {
                for o in 0..self.c_out {
                    let wv = w[o * self.c_in + i];
                    if wv == 0.0 {
                        continue;
                    }
                    let grow = &g[o * s..(o + 1) * s];
                    let gxrow = &mut gx[i * s..(i + 1) * s];
                    for j in 0..s {
                        gxrow[j] += wv * grow[j];
                    }
                }
            }
        }
        if let Some(gw) = grads.slot(self.w) {
            for o in 0..self.c_out {
                let grow = &g[o * s..(o + 1) * s];
                for i in 0..self.c_in {
                    let xrow = &x[i * s..(i + 1) * s];
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += grow[j] * xrow[j];
                    }
                    gw[o * self.c_in + i] += acc;
                }
            }
        }
        if let Some(bid) = self.b {
            if let Some(gb) = grads.slot(bid) {
                for o in 0..self.c_out {
                    gb[o] += g[o * s..(o + 1) * s].iter().sum::<f64>();
                }
            }
        }
    }
}

impl Tape {
    /// `x: [.., c_in] @ w: [c_out, c_in] (+ b: [c_out]) -> [.., c_out]`.
    ///
    /// Every leading axis is treated as a batch of rows; the contraction is
    /// over the trailing axis only.
    pub fn linear(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId, ShapeError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(ShapeError(format!("linear weight must be rank 2, got {ws:?}")));
        }
        let (c_out, c_in) = (ws[0], ws[1]);
        if xs.is_empty() || *xs.last().unwrap() != c_in {
            return Err(ShapeError(format!(
                "linear input trailing axis must be {c_in}, got shape {xs:?}"
            )));
        }
        if let Some(bid) = b {
            if self.shape(bid) != [c_out] {
                return Err(ShapeError(format!(
                    "linear bias must be [{c_out}], got {:?}",
                    self.shape(bid)
                )));
            }
        }
        let rows = self.numel(x) / c_in;
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = c_out;

        let xd = self.data(x);
        let wd = self.data(w);
        let bd = b.map(|bid| self.data(bid));
        let mut data = vec![0.0; rows * c_out];
        for r in 0..rows {
            let xr = &xd[r * c_in..(r + 1) * c_in];
            let orow = &mut data[r * c_out..(r + 1) * c_out];
            for o in 0..c_out {
                let wrow = &wd[o * c_in..(o + 1) * c_in];
                let mut acc = match bd {
                    Some(bias) => bias[o],
                    None => 0.0,
                };
                for i in 0..c_in {
                    acc += xr[i] * wrow[i];
                }
                orow[o] = acc;
            }
        }

        let mut inputs = vec![x, w];
        if let Some(bid) = b {
            inputs.push(bid);
        }
        Ok(self.push_op(
            out_shape,
            data,
            &inputs,
            Box::new(LinearBack {
                x,
                w,
                b,
                rows,
                c_in,
                c_out,
            }),
        ))
    }
}

impl Tape {
    /// `x: [c_in, ..] @ w: [c_out, c_in] (+ b: [c_out]) -> [c_out, ..]`.
    ///
    /// Same contraction as [`Tape::linear`] but over the *leading* axis, so
    /// token grids `[C, H, W, N]` can be projected without transposing.
    /// Inner loops run over the contiguous trailing block.
    pub fn channel_linear(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId, ShapeError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(ShapeError(format!(
                "channel_linear weight must be rank 2, got {ws:?}"
            )));
        }
        let (c_out, c_in) = (ws[0], ws[1]);
        if xs.is_empty() || xs[0] != c_in {
            return Err(ShapeError(format!(
                "channel_linear input leading axis must be {c_in}, got shape {xs:?}"
            )));
        }
        if let Some(bid) = b {
            if self.shape(bid) != [c_out] {
                return Err(ShapeError(format!(
                    "channel_linear bias must be [{c_out}], got {:?}",
                    self.shape(bid)
                )));
            }
        }
        let cols = self.numel(x) / c_in;
        let mut out_shape = xs.to_vec();
        out_shape[0] = c_out;

        let xd = self.data(x);
        let wd = self.data(w);
        let bd = b.map(|bid| self.data(bid));
        let mut data = vec![0.0; c_out * cols];
        for o in 0..c_out {
            let orow = &mut data[o * cols..(o + 1) * cols];
            if let Some(bias) = bd {
                orow.fill(bias[o]);
            }
            for i in 0..c_in {
                let wv = wd[o * c_in + i];
                if wv == 0.0 {
                    continue;
                }
                let xrow = &xd[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    orow[j] += wv * xrow[j];
                }
            }
        }

        let mut inputs = vec![x, w];
        if let Some(bid) = b {
            inputs.push(bid);
        }
        Ok(self.push_op(
            out_shape,
            data,
            &inputs,
            Box::new(ChannelLinearBack {
                x,
                w,
                b,
                cols,
                c_in,
                c_out,
            }),
        ))
    }
}
