//! 2D convolution, max pooling, and nearest-neighbor upsampling.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::error::ShapeError;

struct Conv2dBack {
    x: TensorId,
    w: TensorId,
    b: TensorId,
    pad: usize,
    c_in: usize,
    h: usize,
    wd: usize,
    c_out: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl Conv2dBack {
    fn input_coord(&self, o: usize, k: usize) -> Option<usize> {
        // input index = output index + kernel offset - pad, if in bounds
        (o + k).checked_sub(self.pad)
    }
}

impl BackwardOp for Conv2dBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let x = v.data(self.x);
        let w = v.data(self.w);
        let (c_in, h, wd, k) = (self.c_in, self.h, self.wd, self.k);
        let (oh, ow) = (self.oh, self.ow);

        if let Some(gb) = grads.slot(self.b) {
            for co in 0..self.c_out {
                gb[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
            }
        }

        let wants_x = grads.slot(self.x).is_some();
        let wants_w = grads.slot(self.w).is_some();
        if !wants_x && !wants_w {
            return;
        }
        // Accumulate into scratch buffers first so we don't hold two slots
        // from the table at once.
        let mut gx = if wants_x { vec![0.0; x.len()] } else { Vec::new() };
        let mut gw = if wants_w { vec![0.0; w.len()] } else { Vec::new() };

        for co in 0..self.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[(co * oh + oy) * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let Some(iy) = self.input_coord(oy, ky) else { continue };
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let Some(ix) = self.input_coord(ox, kx) else { continue };
                                if ix >= wd {
                                    continue;
                                }
                                let xi = (ci * h + iy) * wd + ix;
                                let wi = ((co * c_in + ci) * k + ky) * k + kx;
                                if wants_x {
                                    gx[xi] += go * w[wi];
                                }
                                if wants_w {
                                    gw[wi] += go * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        if wants_x {
            let slot = grads.slot(self.x).expect("checked above");
            for (d, s) in slot.iter_mut().zip(&gx) {
                *d += s;
            }
        }
        if wants_w {
            let slot = grads.slot(self.w).expect("checked above");
            for (d, s) in slot.iter_mut().zip(&gw) {
                *d += s;
            }
        }
    }
}

struct MaxPool2Back {
    x: TensorId,
    /// Flat input index that won each output cell.
    argmax: Vec<u32>,
}

impl BackwardOp for MaxPool2Back {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(gx) = grads.slot(self.x) {
            for (gi, &src) in g.iter().zip(&self.argmax) {
                gx[src as usize] += gi;
            }
        }
    }
}

struct Upsample2Back {
    x: TensorId,
    h: usize,
    w: usize,
}

impl BackwardOp for Upsample2Back {
    fn backward(&self, _v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        if let Some(gx) = grads.slot(self.x) {
            let (h2, w2) = (self.h * 2, self.w * 2);
            let channels = gx.len() / (self.h * self.w);
            for c in 0..channels {
                for y in 0..h2 {
                    for x in 0..w2 {
                        gx[(c * self.h + y / 2) * self.w + x / 2] +=
                            g[(c * h2 + y) * w2 + x];
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2D cross-correlation: `x: [C_in, H, W]` with kernel
    /// `w: [C_out, C_in, k, k]`, bias `[C_out]`, zero padding `pad` on all
    /// sides. Output is `[C_out, H + 2*pad - k + 1, W + 2*pad - k + 1]`.
    /// The kernel extent must be odd.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        pad: usize,
    ) -> Result<TensorId, ShapeError> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 3 {
            return Err(ShapeError(format!("conv2d input must be [C, H, W], got {xs:?}")));
        }
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(ShapeError(format!(
                "conv2d kernel must be [C_out, C_in, k, k], got {ws:?}"
            )));
        }
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in {
            return Err(ShapeError(format!(
                "conv2d kernel expects {} input channels, input has {c_in}",
                ws[1]
            )));
        }
        if k % 2 == 0 {
            return Err(ShapeError(format!("conv2d kernel extent must be odd, got {k}")));
        }
        if self.shape(b) != [c_out] {
            return Err(ShapeError(format!(
                "conv2d bias must be [{c_out}], got {:?}",
                self.shape(b)
            )));
        }
        let span = k - 1; // receptive span beyond the anchor
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(ShapeError(format!(
                "conv2d output would be empty: input {h}x{wd}, k={k}, pad={pad}"
            )));
        }
        let (oh, ow) = (h + 2 * pad - span, wd + 2 * pad - span);

        let xd = self.data(x);
        let wdat = self.data(w);
        let bd = self.data(b);
        let mut data = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let Some(iy) = (oy + ky).checked_sub(pad) else { continue };
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let Some(ix) = (ox + kx).checked_sub(pad) else { continue };
                                if ix >= wd {
                                    continue;
                                }
                                acc += xd[(ci * h + iy) * wd + ix]
                                    * wdat[((co * c_in + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(self.push_op(
            vec![c_out, oh, ow],
            data,
            &[x, w, b],
            Box::new(Conv2dBack {
                x,
                w,
                b,
                pad,
                c_in,
                h,
                wd,
                c_out,
                k,
                oh,
                ow,
            }),
        ))
    }

    /// 2x2 max pooling with stride 2 over `x: [C, H, W]`; H and W must be
    /// even. Ties go to the first element in row-major scan order, and the
    /// gradient is routed only to that winner.
    pub fn maxpool2(&mut self, x: TensorId) -> Result<TensorId, ShapeError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(ShapeError(format!("maxpool2 input must be [C, H, W], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(ShapeError(format!(
                "maxpool2 needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.data(x);
        let mut data = vec![0.0; c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = (ch * h + 2 * oy) * w + 2 * ox;
                    let mut best = xd[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    data[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        Ok(self.push_op(
            vec![c, oh, ow],
            data,
            &[x],
            Box::new(MaxPool2Back { x, argmax }),
        ))
    }

    /// Nearest-neighbor 2x upsampling of `x: [C, H, W]` to `[C, 2H, 2W]`.
    pub fn upsample2(&mut self, x: TensorId) -> Result<TensorId, ShapeError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(ShapeError(format!("upsample2 input must be [C, H, W], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (h2, w2) = (h * 2, w * 2);
        let xd = self.data(x);
        let mut data = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for x2 in 0..w2 {
                    data[(ch * h2 + y) * w2 + x2] = xd[(ch * h + y / 2) * w + x2 / 2];
                }
            }
        }
        Ok(self.push_op(
            vec![c, h2, w2],
            data,
            &[x],
            Box::new(Upsample2Back { x, h, w }),
        ))
    }
}
