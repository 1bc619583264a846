//! Slice-wise U-Net codec: a 2D CNN encoder/decoder pair applied to every
//! slice of a group with shared weights.
//!
//! The encoder runs B blocks of two conv3x3 -> instance norm -> ReLU pairs,
//! max-pooling between consecutive blocks (B-1 pools, so the bottleneck is
//! H / 2^(B-1) on a side). Pre-pool outputs of the first B-1 blocks are kept
//! as skips. The decoder mirrors it: upsample, concatenate the skip, two
//! conv-norm-ReLU pairs, and finally a 1x1 convolution to per-class logits
//! with no activation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, ShapeError};
use crate::params::{Binding, ParamStore};
use crate::rng;
use crate::tensor::{Tape, TensorId};
use crate::NORM_EPS;

/// Widths and depth of the convolutional stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    /// Encoder block count (B).
    pub blocks: usize,
    /// Output channels per block, length B. The last entry is the
    /// bottleneck width handed to the transformer.
    pub channels: Vec<usize>,
    /// Segmentation classes, including background.
    pub c_cls: usize,
    /// Input channels per slice.
    pub in_channels: usize,
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.blocks == 0 {
            return Err(ConfigError("codec needs at least one block".into()));
        }
        if self.channels.len() != self.blocks {
            return Err(ConfigError(format!(
                "channels list has {} entries for {} blocks",
                self.channels.len(),
                self.blocks
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(ConfigError("channel widths must be positive".into()));
        }
        if self.c_cls < 2 {
            return Err(ConfigError(format!(
                "need at least 2 classes, got {}",
                self.c_cls
            )));
        }
        if self.in_channels == 0 {
            return Err(ConfigError("input channel count must be positive".into()));
        }
        Ok(())
    }

    /// Bottleneck width C_L.
    pub fn bottleneck_channels(&self) -> usize {
        *self.channels.last().expect("validated nonempty")
    }

    /// Spatial divisor the input must satisfy: one pool between each pair
    /// of consecutive blocks.
    pub fn required_divisor(&self) -> usize {
        1 << (self.blocks - 1)
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = sqrt(6.0 / fan_in as f64);
    (0..len).map(|_| rng::uniform_sym(rng, bound)).collect()
}

fn add_conv_unit(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
) -> Result<(), ConfigError> {
    let k = 3;
    store.add(
        &format!("{prefix}.w"),
        &[c_out, c_in, k, k],
        he_uniform(rng, c_in * k * k, c_out * c_in * k * k),
    )?;
    store.add(&format!("{prefix}.b"), &[c_out], vec![0.0; c_out])?;
    store.add(&format!("{prefix}.n.g"), &[c_out], vec![1.0; c_out])?;
    store.add(&format!("{prefix}.n.b"), &[c_out], vec![0.0; c_out])
}

/// Creates encoder, decoder, and classifier-head parameters under the
/// `codec.` prefix. Convolutions start He-uniform (scaled for the ReLU that
/// follows each one); norms start at identity; biases at zero.
pub fn init_params(
    store: &mut ParamStore,
    cfg: &CodecConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), ConfigError> {
    cfg.validate()?;
    for b in 0..cfg.blocks {
        let c_in = if b == 0 {
            cfg.in_channels
        } else {
            cfg.channels[b - 1]
        };
        let c = cfg.channels[b];
        add_conv_unit(store, rng, &format!("codec.enc.b{b}.c1"), c_in, c)?;
        add_conv_unit(store, rng, &format!("codec.enc.b{b}.c2"), c, c)?;
    }
    for b in (0..cfg.blocks.saturating_sub(1)).rev() {
        let c_below = cfg.channels[b + 1];
        let c = cfg.channels[b];
        add_conv_unit(store, rng, &format!("codec.dec.b{b}.c1"), c_below + c, c)?;
        add_conv_unit(store, rng, &format!("codec.dec.b{b}.c2"), c, c)?;
    }
    let c0 = cfg.channels[0];
    store.add(
        "codec.head.w",
        &[cfg.c_cls, c0, 1, 1],
        he_uniform(rng, c0, cfg.c_cls * c0),
    )?;
    store.add("codec.head.b", &[cfg.c_cls], vec![0.0; cfg.c_cls])
}

fn conv_unit(
    tape: &mut Tape,
    x: TensorId,
    bind: &Binding<'_>,
    prefix: &str,
    pad: usize,
) -> Result<TensorId, ShapeError> {
    let w = bind.get(&format!("{prefix}.w"));
    let b = bind.get(&format!("{prefix}.b"));
    let y = tape.conv2d(x, w, b, pad)?;
    let g = bind.get(&format!("{prefix}.n.g"));
    let bb = bind.get(&format!("{prefix}.n.b"));
    let y = tape.instance_norm(y, g, bb, NORM_EPS)?;
    Ok(tape.relu(y))
}

/// Encoder outputs kept for the decoder, one list per slice, levels
/// `0 .. B-2` bottom index first.
pub struct SkipStack {
    pub per_slice: Vec<Vec<TensorId>>,
}

/// Encodes one slice `[in_channels, H, W]` down to the bottleneck
/// `[C_L, H_L, W_L]`, collecting pre-pool skips for levels 0..B-2.
pub fn encode_slice(
    tape: &mut Tape,
    x: TensorId,
    cfg: &CodecConfig,
    bind: &Binding<'_>,
) -> Result<(TensorId, Vec<TensorId>), ShapeError> {
    let shape = tape.shape(x);
    if shape.len() != 3 || shape[0] != cfg.in_channels {
        return Err(ShapeError(format!(
            "encoder expects [{}, H, W] slices, got {shape:?}",
            cfg.in_channels
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let div = cfg.required_divisor();
    if h % div != 0 || w % div != 0 {
        return Err(ShapeError(format!(
            "spatial dims {h}x{w} must be divisible by {div} for {} blocks; \
             pad to {}x{}",
            cfg.blocks,
            h.div_ceil(div) * div,
            w.div_ceil(div) * div
        )));
    }
    let mut cur = x;
    let mut skips = Vec::with_capacity(cfg.blocks - 1);
    for b in 0..cfg.blocks {
        cur = conv_unit(tape, cur, bind, &format!("codec.enc.b{b}.c1"), 1)?;
        cur = conv_unit(tape, cur, bind, &format!("codec.enc.b{b}.c2"), 1)?;
        if b + 1 < cfg.blocks {
            skips.push(cur);
            cur = tape.maxpool2(cur)?;
        }
    }
    Ok((cur, skips))
}

/// Encodes every slice of a group with shared weights and stacks the
/// bottlenecks into the feature map group `[C_L, H_L, W_L, N_A]`.
pub fn encode(
    tape: &mut Tape,
    slices: &[TensorId],
    cfg: &CodecConfig,
    bind: &Binding<'_>,
) -> Result<(TensorId, SkipStack), ShapeError> {
    if slices.is_empty() {
        return Err(ShapeError("encoder needs at least one slice".into()));
    }
    let mut bottlenecks = Vec::with_capacity(slices.len());
    let mut per_slice = Vec::with_capacity(slices.len());
    for &s in slices {
        let (z, skips) = encode_slice(tape, s, cfg, bind)?;
        bottlenecks.push(z);
        per_slice.push(skips);
    }
    let g = tape.stack_last(&bottlenecks)?;
    Ok((g, SkipStack { per_slice }))
}

/// Decodes one bottleneck `[C_L, H_L, W_L]` back to logits `[C_cls, H, W]`
/// using that slice's skips.
pub fn decode_slice(
    tape: &mut Tape,
    z: TensorId,
    skips: &[TensorId],
    cfg: &CodecConfig,
    bind: &Binding<'_>,
) -> Result<TensorId, ShapeError> {
    if skips.len() != cfg.blocks - 1 {
        return Err(ShapeError(format!(
            "decoder needs {} skip levels, got {}",
            cfg.blocks - 1,
            skips.len()
        )));
    }
    let mut cur = z;
    for b in (0..cfg.blocks - 1).rev() {
        let up = tape.upsample2(cur)?;
        let skip = skips[b];
        let up_shape = tape.shape(up).to_vec();
        let skip_shape = tape.shape(skip);
        if up_shape[1..] != skip_shape[1..] {
            return Err(ShapeError(format!(
                "skip level {b} is {skip_shape:?} but upsampled features are {up_shape:?}"
            )));
        }
        cur = tape.concat0(up, skip)?;
        cur = conv_unit(tape, cur, bind, &format!("codec.dec.b{b}.c1"), 1)?;
        cur = conv_unit(tape, cur, bind, &format!("codec.dec.b{b}.c2"), 1)?;
    }
    let w = bind.get("codec.head.w");
    let b = bind.get("codec.head.b");
    tape.conv2d(cur, w, b, 0) // 1x1: logits, no activation
}

/// Decodes a fused feature map group `[C_L, H_L, W_L, N_A]` into logits
/// `[C_cls, H, W, N_A]`, slice by slice with shared weights.
pub fn decode(
    tape: &mut Tape,
    z_group: TensorId,
    skips: &SkipStack,
    cfg: &CodecConfig,
    bind: &Binding<'_>,
) -> Result<TensorId, ShapeError> {
    let n = *tape
        .shape(z_group)
        .last()
        .ok_or_else(|| ShapeError("decoder input must be [C, H, W, N]".into()))?;
    if skips.per_slice.len() != n {
        return Err(ShapeError(format!(
            "skip stack covers {} slices but group has {n}",
            skips.per_slice.len()
        )));
    }
    let mut outs = Vec::with_capacity(n);
    for i in 0..n {
        let zi = tape.slice_last(z_group, i)?;
        let yi = decode_slice(tape, zi, &skips.per_slice[i], cfg, bind)?;
        outs.push(yi);
    }
    tape.stack_last(&outs)
}
