//! Axial fusion transformer: the bottleneck encoder that fuses a slice
//! group's feature maps.
//!
//! Each block runs two factorized attention passes back to back — first
//! across slices (inter, axial weight set), then within each slice (intra,
//! slice weight set, with fresh QKV projections taken from the inter
//! result) — followed by a pre-norm MLP. Every sub-layer is residual. A
//! learnable positional embedding is added once, before the first block.
//!
//! Token grids are `[C_L, H_L, W_L, N_A]` throughout; heads are slices of
//! the channel axis with width `C_h = C_L / A`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, CoreError, NumericError, ShapeError};
use crate::params::{Binding, ParamStore};
use crate::rng;
use crate::tensor::{Tape, TensorId};
use crate::NORM_EPS;

/// Shape and depth of the transformer stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    /// Token width (bottleneck channel count).
    pub c_l: usize,
    pub h_l: usize,
    pub w_l: usize,
    /// Slices per group.
    pub n_a: usize,
    /// Number of transformer blocks (L).
    pub blocks: usize,
    /// Attention heads (A); must divide `c_l`.
    pub heads: usize,
    /// Two head-merge projections per block (one per attention pass) when
    /// true; when false only the intra pass gets one and the inter pass
    /// merges heads by concatenation + residual alone.
    pub merge_fc_per_pass: bool,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.c_l == 0 || self.h_l == 0 || self.w_l == 0 || self.n_a == 0 {
            return Err(ConfigError("fusion extents must be positive".into()));
        }
        if self.heads == 0 || self.c_l % self.heads != 0 {
            return Err(ConfigError(format!(
                "head count {} must divide token width {}",
                self.heads, self.c_l
            )));
        }
        Ok(())
    }

    pub fn c_h(&self) -> usize {
        self.c_l / self.heads
    }

    pub fn grid_shape(&self) -> [usize; 4] {
        [self.c_l, self.h_l, self.w_l, self.n_a]
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
    (0..fan_in * fan_out)
        .map(|_| rng::uniform_sym(rng, bound))
        .collect()
}

fn add_ln(store: &mut ParamStore, prefix: &str, c: usize) -> Result<(), ConfigError> {
    store.add(&format!("{prefix}.ln.g"), &[c], vec![1.0; c])?;
    store.add(&format!("{prefix}.ln.b"), &[c], vec![0.0; c])
}

fn add_pass(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &FusionConfig,
    with_fc: bool,
) -> Result<(), ConfigError> {
    let (c_l, c_h) = (cfg.c_l, cfg.c_h());
    add_ln(store, prefix, c_l)?;
    for a in 0..cfg.heads {
        for w in ["wq", "wk", "wv"] {
            store.add(
                &format!("{prefix}.h{a}.{w}"),
                &[c_h, c_l],
                xavier(rng, c_h, c_l),
            )?;
        }
    }
    if with_fc {
        store.add(&format!("{prefix}.fc.w"), &[c_l, c_l], xavier(rng, c_l, c_l))?;
        store.add(&format!("{prefix}.fc.b"), &[c_l], vec![0.0; c_l])?;
    }
    Ok(())
}

/// Creates every transformer parameter under the `fusion.` prefix, in a
/// fixed order: positional table first, then per block the inter pass,
/// intra pass, and MLP.
pub fn init_params(
    store: &mut ParamStore,
    cfg: &FusionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), ConfigError> {
    cfg.validate()?;
    let pos_len = cfg.c_l * cfg.h_l * cfg.w_l * cfg.n_a;
    let pos: Vec<f64> = (0..pos_len).map(|_| 0.02 * rng::normal(rng)).collect();
    store.add("fusion.pos", &cfg.grid_shape(), pos)?;
    for l in 0..cfg.blocks {
        add_pass(
            store,
            rng,
            &format!("fusion.block{l}.inter"),
            cfg,
            cfg.merge_fc_per_pass,
        )?;
        add_pass(store, rng, &format!("fusion.block{l}.intra"), cfg, true)?;
        let c = cfg.c_l;
        let hidden = 4 * c;
        let mlp = format!("fusion.block{l}.mlp");
        add_ln(store, &mlp, c)?;
        store.add(&format!("{mlp}.w1"), &[hidden, c], xavier(rng, hidden, c))?;
        store.add(&format!("{mlp}.b1"), &[hidden], vec![0.0; hidden])?;
        store.add(&format!("{mlp}.w2"), &[c, hidden], xavier(rng, c, hidden))?;
        store.add(&format!("{mlp}.b2"), &[c], vec![0.0; c])?;
    }
    Ok(())
}

/// `z0 = g + e_pos`. No patchification or input projection: the encoder's
/// feature map group is used as tokens directly.
pub fn add_positional(
    tape: &mut Tape,
    g: TensorId,
    e_pos: TensorId,
) -> Result<TensorId, ShapeError> {
    tape.add(g, e_pos)
}

/// Pre-norm QKV projection for one head: `W * LayerNorm(z)` per token.
pub fn qkv_project(
    tape: &mut Tape,
    z: TensorId,
    ln_g: TensorId,
    ln_b: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
) -> Result<(TensorId, TensorId, TensorId), ShapeError> {
    let zn = tape.channel_layer_norm(z, ln_g, ln_b, NORM_EPS)?;
    let q = tape.channel_linear(zn, wq, None)?;
    let k = tape.channel_linear(zn, wk, None)?;
    let v = tape.channel_linear(zn, wv, None)?;
    Ok((q, k, v))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pass {
    Inter,
    Intra,
}

/// One residual attention sub-layer: LN -> per-head QKV -> restricted
/// attention -> head concat -> optional merge FC -> + z.
fn attention_pass(
    tape: &mut Tape,
    z: TensorId,
    cfg: &FusionConfig,
    bind: &Binding<'_>,
    prefix: &str,
    pass: Pass,
    with_fc: bool,
) -> Result<TensorId, ShapeError> {
    let ln_g = bind.get(&format!("{prefix}.ln.g"));
    let ln_b = bind.get(&format!("{prefix}.ln.b"));
    let zn = tape.channel_layer_norm(z, ln_g, ln_b, NORM_EPS)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for a in 0..cfg.heads {
        let wq = bind.get(&format!("{prefix}.h{a}.wq"));
        let wk = bind.get(&format!("{prefix}.h{a}.wk"));
        let wv = bind.get(&format!("{prefix}.h{a}.wv"));
        let q = tape.channel_linear(zn, wq, None)?;
        let k = tape.channel_linear(zn, wk, None)?;
        let v = tape.channel_linear(zn, wv, None)?;
        let u = match pass {
            Pass::Inter => tape.attention_inter(q, k, v)?,
            Pass::Intra => tape.attention_intra(q, k, v)?,
        };
        heads.push(u);
    }
    let mut cat = heads[0];
    for &u in &heads[1..] {
        cat = tape.concat0(cat, u)?;
    }
    let merged = if with_fc {
        let w = bind.get(&format!("{prefix}.fc.w"));
        let b = bind.get(&format!("{prefix}.fc.b"));
        tape.channel_linear(cat, w, Some(b))?
    } else {
        cat
    };
    tape.add(merged, z)
}

/// `z + MLP(LN(z))` applied per token over the channel axis; hidden width
/// is 4x the token width with ReLU between the two projections.
pub fn mlp_residual(
    tape: &mut Tape,
    z: TensorId,
    bind: &Binding<'_>,
    prefix: &str,
) -> Result<TensorId, ShapeError> {
    let ln_g = bind.get(&format!("{prefix}.ln.g"));
    let ln_b = bind.get(&format!("{prefix}.ln.b"));
    let zn = tape.channel_layer_norm(z, ln_g, ln_b, NORM_EPS)?;
    let h = tape.channel_linear(zn, bind.get(&format!("{prefix}.w1")), Some(bind.get(&format!("{prefix}.b1"))))?;
    let h = tape.relu(h);
    let h = tape.channel_linear(h, bind.get(&format!("{prefix}.w2")), Some(bind.get(&format!("{prefix}.b2"))))?;
    tape.add(h, z)
}

/// One full block: inter-slice pass, then intra-slice pass re-projected
/// from the inter result, then the MLP. All residual.
pub fn aft_block(
    tape: &mut Tape,
    z: TensorId,
    cfg: &FusionConfig,
    bind: &Binding<'_>,
    block: usize,
) -> Result<TensorId, ShapeError> {
    let base = format!("fusion.block{block}");
    let z = attention_pass(
        tape,
        z,
        cfg,
        bind,
        &format!("{base}.inter"),
        Pass::Inter,
        cfg.merge_fc_per_pass,
    )?;
    let z = attention_pass(tape, z, cfg, bind, &format!("{base}.intra"), Pass::Intra, true)?;
    mlp_residual(tape, z, bind, &format!("{base}.mlp"))
}

/// Positional embedding followed by all `L` blocks. Activations are
/// checked for finiteness after every block so a blow-up is reported with
/// the block that produced it.
pub fn aft_encode(
    tape: &mut Tape,
    g: TensorId,
    cfg: &FusionConfig,
    bind: &Binding<'_>,
) -> Result<TensorId, CoreError> {
    let expected: &[usize] = &cfg.grid_shape();
    if tape.shape(g) != expected {
        return Err(ShapeError(format!(
            "fusion input must be {expected:?}, got {:?}",
            tape.shape(g)
        ))
        .into());
    }
    let mut z = add_positional(tape, g, bind.get("fusion.pos"))?;
    for l in 0..cfg.blocks {
        z = aft_block(tape, z, cfg, bind, l)?;
        if tape.data(z).iter().any(|v| !v.is_finite()) {
            return Err(NumericError {
                context: format!("fusion block {l} output"),
            }
            .into());
        }
    }
    Ok(z)
}

/// Human-readable location of a token's flattened spatial position:
/// `p = W_L * h + w` (rows of the feature map laid end to end).
pub fn flat_position(w_l: usize, h: usize, w: usize) -> usize {
    w_l * h + w
}
