//! Layer and instance normalization with affine parameters.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::error::ShapeError;

/// Normalizes `x[group]` in place into `xhat`; returns 1/sqrt(var+eps).
/// Variance is the biased (population) estimate.
fn normalize_group(x: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / sqrt(var + eps);
    for (o, &v) in xhat.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
    inv
}

/// Gradient of a normalization group given dL/dxhat. The three-term form
/// folds the mean and variance paths into one pass.
fn group_backward(xhat: &[f64], dxhat: &[f64], inv: f64, gx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mean_d: f64 = dxhat.iter().sum::<f64>() / n;
    let mean_dx: f64 = dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum::<f64>() / n;
    for i in 0..xhat.len() {
        gx[i] += inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
}

struct LayerNormBack {
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    row: usize,
    xhat: Vec<f64>,
    inv: Vec<f64>,
}

impl BackwardOp for LayerNormBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let gamma = v.data(self.gamma);
        let rows = g.len() / self.row;
        if let Some(gg) = grads.slot(self.gamma) {
            for r in 0..rows {
                for i in 0..self.row {
                    gg[i] += g[r * self.row + i] * self.xhat[r * self.row + i];
                }
            }
        }
        if let Some(gb) = grads.slot(self.beta) {
            for r in 0..rows {
                for i in 0..self.row {
                    gb[i] += g[r * self.row + i];
                }
            }
        }
        if let Some(gx) = grads.slot(self.x) {
            let mut dxhat = vec![0.0; self.row];
            for r in 0..rows {
                let base = r * self.row;
                for i in 0..self.row {
                    dxhat[i] = g[base + i] * gamma[i];
                }
                group_backward(
                    &self.xhat[base..base + self.row],
                    &dxhat,
                    self.inv[r],
                    &mut gx[base..base + self.row],
                );
            }
        }
    }
}

struct InstanceNormBack {
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    plane: usize,
    xhat: Vec<f64>,
    inv: Vec<f64>,
}

impl BackwardOp for InstanceNormBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let gamma = v.data(self.gamma);
        let channels = g.len() / self.plane;
        if let Some(gg) = grads.slot(self.gamma) {
            for c in 0..channels {
                let base = c * self.plane;
                gg[c] += (0..self.plane)
                    .map(|i| g[base + i] * self.xhat[base + i])
                    .sum::<f64>();
            }
        }
        if let Some(gb) = grads.slot(self.beta) {
            for c in 0..channels {
                let base = c * self.plane;
                gb[c] += g[base..base + self.plane].iter().sum::<f64>();
            }
        }
        if let Some(gx) = grads.slot(self.x) {
            let mut dxhat = vec![0.0; self.plane];
            for c in 0..channels {
                let base = c * self.plane;
                for i in 0..self.plane {
                    dxhat[i] = g[base + i] * gamma[c];
                }
                group_backward(
                    &self.xhat[base..base + self.plane],
                    &dxhat,
                    self.inv[c],
                    &mut gx[base..base + self.plane],
                );
            }
        }
    }
}

struct ChannelNormBack {
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    cols: usize,
    xhat: Vec<f64>,
    inv: Vec<f64>,
}

impl BackwardOp for ChannelNormBack {
    fn backward(&self, v: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let gamma = v.data(self.gamma);
        let s = self.cols;
        let c = g.len() / s;
        if let Some(gg) = grads.slot(self.gamma) {
            for ch in 0..c {
                gg[ch] += (0..s)
                    .map(|j| g[ch * s + j] * self.xhat[ch * s + j])
                    .sum::<f64>();
            }
        }
        if let Some(gb) = grads.slot(self.beta) {
            for ch in 0..c {
                gb[ch] += g[ch * s..(ch + 1) * s].iter().sum::<f64>();
            }
        }
        if let Some(gx) = grads.slot(self.x) {
            // per-column means of dxhat and dxhat*xhat, accumulated with
            // contiguous row sweeps
            let mut mean_d = vec![0.0; s];
            let mut mean_dx = vec![0.0; s];
            for ch in 0..c {
                let base = ch * s;
                for j in 0..s {
                    let dxh = g[base + j] * gamma[ch];
                    mean_d[j] += dxh;
                    mean_dx[j] += dxh * self.xhat[base + j];
                }
            }
            let n = c as f64;
            for j in 0..s {
                mean_d[j] /= n;
                mean_dx[j] /= n;
            }
            for ch in 0..c {
                let base = ch * s;
                for j in 0..s {
                    let dxh = g[base + j] * gamma[ch];
                    gx[base + j] +=
                        self.inv[j] * (dxh - mean_d[j] - self.xhat[base + j] * mean_dx[j]);
                }
            }
        }
    }
}

impl Tape {
    /// Normalizes over the trailing axis of `x`, then scales and shifts:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per row.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, ShapeError> {
        let shape = self.shape(x).to_vec();
        let row = *shape.last().ok_or_else(|| {
            ShapeError("layer_norm input must have at least one axis".into())
        })?;
        if self.shape(gamma) != [row] || self.shape(beta) != [row] {
            return Err(ShapeError(format!(
                "layer_norm affine params must be [{row}], got gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let rows = xd.len() / row;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv = vec![0.0; rows];
        let mut data = vec![0.0; xd.len()];
        for r in 0..rows {
            let base = r * row;
            inv[r] = normalize_group(&xd[base..base + row], eps, &mut xhat[base..base + row]);
            for i in 0..row {
                data[base + i] = gd[i] * xhat[base + i] + bd[i];
            }
        }
        Ok(self.push_op(
            shape,
            data,
            &[x, gamma, beta],
            Box::new(LayerNormBack {
                x,
                gamma,
                beta,
                row,
                xhat,
                inv,
            }),
        ))
    }

    /// Normalizes each channel of `x: [C, H, W]` over its H*W plane, with
    /// per-channel scale and shift. Requires H*W >= 2 so the variance is
    /// meaningful.
    pub fn instance_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, ShapeError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(ShapeError(format!(
                "instance_norm input must be [C, H, W], got {shape:?}"
            )));
        }
        let (c, plane) = (shape[0], shape[1] * shape[2]);
        if plane < 2 {
            return Err(ShapeError(format!(
                "instance_norm needs at least 2 spatial elements per channel, got {}x{}",
                shape[1], shape[2]
            )));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(ShapeError(format!(
                "instance_norm affine params must be [{c}], got gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut xhat = vec![0.0; xd.len()];
        let mut inv = vec![0.0; c];
        let mut data = vec![0.0; xd.len()];
        for ch in 0..c {
            let base = ch * plane;
            inv[ch] = normalize_group(&xd[base..base + plane], eps, &mut xhat[base..base + plane]);
            for i in 0..plane {
                data[base + i] = gd[ch] * xhat[base + i] + bd[ch];
            }
        }
        Ok(self.push_op(
            shape,
            data,
            &[x, gamma, beta],
            Box::new(InstanceNormBack {
                x,
                gamma,
                beta,
                plane,
                xhat,
                inv,
            }),
        ))
    }
}

impl Tape {
    /// Layer norm over the *leading* (channel) axis: every column of the
    /// `[C, ..]` view is normalized independently, with per-channel affine
    /// parameters. This is the per-token normalization for grids laid out
    /// `[C, H, W, N]`.
    pub fn channel_layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, ShapeError> {
        let shape = self.shape(x).to_vec();
        let c = *shape.first().ok_or_else(|| {
            ShapeError("channel_layer_norm input must have at least one axis".into())
        })?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(ShapeError(format!(
                "channel_layer_norm affine params must be [{c}], got gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let cols = xd.len() / c;
        let mut mean = vec![0.0; cols];
        for ch in 0..c {
            for j in 0..cols {
                mean[j] += xd[ch * cols + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= c as f64;
        }
        let mut var = vec![0.0; cols];
        for ch in 0..c {
            for j in 0..cols {
                let d = xd[ch * cols + j] - mean[j];
                var[j] += d * d;
            }
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / sqrt(v / c as f64 + eps)).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut data = vec![0.0; xd.len()];
        for ch in 0..c {
            let base = ch * cols;
            for j in 0..cols {
                let h = (xd[base + j] - mean[j]) * inv[j];
                xhat[base + j] = h;
                data[base + j] = gd[ch] * h + bd[ch];
            }
        }
        Ok(self.push_op(
            shape,
            data,
            &[x, gamma, beta],
            Box::new(ChannelNormBack {
                x,
                gamma,
                beta,
                cols,
                xhat,
                inv,
            }),
        ))
    }
}
