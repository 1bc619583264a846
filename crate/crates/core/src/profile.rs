//! Instrumented cost accounting for the two attention strategies, plus a
//! parameter/scratch profile of the whole network.
//!
//! The comparison counts come from counters embedded in the attention
//! kernels themselves — the kernels tick once per query/key dot product and
//! once per stored attention weight — and are then checked against the
//! closed forms: a full 3D pass attends every query to all `H·W·N` tokens,
//! while the factorized pair attends to `N` (inter) plus `H·W` (intra).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{ConfigError, CoreError, DataError};
use crate::model::{AxialFusionUNet, ModelConfig};
use crate::rng;
use crate::tensor::{Tape, TensorId};
use crate::{codec, fusion};

/// Measured attention cost on one grid, single head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnCostReport {
    pub h_l: usize,
    pub w_l: usize,
    pub n_a: usize,
    /// Dot products per query token.
    pub comparisons_per_query_full: u64,
    pub comparisons_per_query_factorized: u64,
    /// Attention-map entries materialized across all queries (one head).
    pub map_elements_full: u64,
    pub map_elements_factorized: u64,
    /// Per-query comparison reduction, full / factorized.
    pub reduction_ratio: f64,
}

impl AttnCostReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "attention cost on a {}x{}x{} token grid (H_L x W_L x N_A)\n",
            self.h_l, self.w_l, self.n_a
        ));
        out.push_str(&format!(
            "  comparisons per query : full {:>12}  factorized {:>12}\n",
            self.comparisons_per_query_full, self.comparisons_per_query_factorized
        ));
        out.push_str(&format!(
            "  map elements (1 head) : full {:>12}  factorized {:>12}\n",
            self.map_elements_full, self.map_elements_factorized
        ));
        out.push_str(&format!("  per-query reduction   : {:.2}x\n", self.reduction_ratio));
        out
    }
}

fn random_qkv(tape: &mut Tape, c_h: usize, dims: [usize; 4], r: &mut impl Rng) -> [TensorId; 3] {
    let shape = [c_h, dims[1], dims[2], dims[3]];
    let n: usize = shape.iter().product();
    let mut make = |tape: &mut Tape| {
        let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        tape.leaf(&shape, data)
    };
    [make(tape), make(tape), make(tape)]
}

/// Runs both attention strategies on a `(h_l, w_l, n_a)` grid and reports
/// the instrumented counts. Fails if a counter disagrees with its closed
/// form — that would mean the kernels do more (or less) work than claimed.
pub fn count_comparisons(h_l: usize, w_l: usize, n_a: usize) -> Result<AttnCostReport, CoreError> {
    if h_l == 0 || w_l == 0 || n_a == 0 {
        return Err(ConfigError(format!("grid extents must be positive, got {h_l}x{w_l}x{n_a}")).into());
    }
    let c_h = 4;
    let dims = [c_h, h_l, w_l, n_a];
    let queries = (h_l * w_l * n_a) as u64;
    let mut r = rng::stream(0x5eed, 0);

    // Factorized: one inter-slice pass plus one intra-slice pass.
    let mut tape = Tape::new();
    let [q, k, v] = random_qkv(&mut tape, c_h, dims, &mut r);
    tape.attention_inter(q, k, v)?;
    tape.attention_intra(q, k, v)?;
    let fact = tape.attn_counters;

    // Full 3D attention over the flattened token set.
    let mut tape = Tape::new();
    let [q, k, v] = random_qkv(&mut tape, c_h, dims, &mut r);
    tape.attention_full3d(q, k, v)?;
    let full = tape.attn_counters;

    let check = |what: &str, measured: u64, expected: u64| -> Result<(), CoreError> {
        if measured != expected {
            return Err(DataError(format!(
                "instrumented {what} = {measured} disagrees with closed form {expected} \
                 on grid {h_l}x{w_l}x{n_a}"
            ))
            .into());
        }
        Ok(())
    };
    let hw = (h_l * w_l) as u64;
    check("full comparisons", full.comparisons, queries * queries)?;
    check("full map elements", full.map_elements, queries * queries)?;
    check(
        "factorized comparisons",
        fact.comparisons,
        queries * (hw + n_a as u64),
    )?;
    check(
        "factorized map elements",
        fact.map_elements,
        queries * (hw + n_a as u64),
    )?;

    Ok(AttnCostReport {
        h_l,
        w_l,
        n_a,
        comparisons_per_query_full: full.comparisons / queries,
        comparisons_per_query_factorized: fact.comparisons / queries,
        map_elements_full: full.map_elements,
        map_elements_factorized: fact.map_elements,
        reduction_ratio: full.comparisons as f64 / fact.comparisons as f64,
    })
}

/// Closed-form attention-map storage for `heads` heads at a given scalar
/// width. Full materializes an `S x S` map per head (`S = H_L·W_L·N_A`);
/// the factorized pair stores one `N_A` row and one `H_L·W_L` row per query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnMemoryReport {
    pub full_bytes: u128,
    pub factorized_bytes: u128,
}

impl AttnMemoryReport {
    pub fn ratio(&self) -> f64 {
        self.full_bytes as f64 / self.factorized_bytes as f64
    }
}

pub fn attention_memory(
    h_l: usize,
    w_l: usize,
    n_a: usize,
    heads: usize,
    bytes_per_scalar: usize,
) -> Result<AttnMemoryReport, ConfigError> {
    if h_l == 0 || w_l == 0 || n_a == 0 || heads == 0 || bytes_per_scalar == 0 {
        return Err(ConfigError(format!(
            "all extents must be positive, got {h_l}x{w_l}x{n_a}, {heads} heads, {bytes_per_scalar} B"
        )));
    }
    let s = (h_l * w_l * n_a) as u128;
    let hw = (h_l * w_l) as u128;
    let a = heads as u128;
    let b = bytes_per_scalar as u128;
    Ok(AttnMemoryReport {
        full_bytes: a * s * s * b,
        factorized_bytes: a * s * (hw + n_a as u128) * b,
    })
}

/// One row of the model profile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileRow {
    pub name: String,
    pub params: usize,
    /// f64 elements materialized on the tape during one forward pass.
    pub scratch_elems: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub total_params: usize,
    pub total_scratch_elems: usize,
}

impl ProfileReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("module       params      scratch (f64)\n");
        out.push_str("----------  ----------  -------------\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10}  {:>10}  {:>13}\n",
                r.name, r.params, r.scratch_elems
            ));
        }
        out.push_str(&format!(
            "{:<10}  {:>10}  {:>13}\n",
            "total", self.total_params, self.total_scratch_elems
        ));
        out
    }
}

fn tape_elems(tape: &Tape) -> usize {
    (0..tape.node_count()).map(|i| tape.numel(crate::tensor::TensorId(i))).sum()
}

/// Builds the model and measures, per stage, its parameter count and the
/// tape elements one forward pass materializes (activations + bound
/// parameters for that stage's ops).
pub fn profile_model(config: &ModelConfig) -> Result<ProfileReport, CoreError> {
    let model = AxialFusionUNet::init(config.clone(), 0)?;
    let mut r = rng::stream(0xbeef, 0);

    let mut tape = Tape::new();
    let slices: Vec<TensorId> = (0..config.n_a)
        .map(|_| {
            let n = config.in_channels * config.input_h * config.input_w;
            let data: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            tape.leaf(&[config.in_channels, config.input_h, config.input_w], data)
        })
        .collect();
    let bind = model.params.bind(&mut tape);
    let base = tape_elems(&tape);

    let codec_cfg = config.codec_config();
    let fusion_cfg = config.fusion_config();
    let (g, skips) = codec::encode(&mut tape, &slices, &codec_cfg, &bind)?;
    let after_enc = tape_elems(&tape);
    let z = fusion::aft_encode(&mut tape, g, &fusion_cfg, &bind)?;
    let after_fusion = tape_elems(&tape);
    codec::decode(&mut tape, z, &skips, &codec_cfg, &bind)?;
    let after_dec = tape_elems(&tape);

    let p = &model.params;
    let rows = alloc::vec![
        ProfileRow {
            name: "encoder".into(),
            params: p.scalars_with_prefix("codec.enc."),
            scratch_elems: after_enc - base,
        },
        ProfileRow {
            name: "fusion".into(),
            params: p.scalars_with_prefix("fusion."),
            scratch_elems: after_fusion - after_enc,
        },
        ProfileRow {
            name: "decoder".into(),
            params: p.scalars_with_prefix("codec.dec.") + p.scalars_with_prefix("codec.head."),
            scratch_elems: after_dec - after_fusion,
        },
    ];
    let total_params = p.total_scalars();
    assert_eq!(
        rows.iter().map(|r| r.params).sum::<usize>(),
        total_params,
        "profile rows must partition the parameter store"
    );
    Ok(ProfileReport {
        total_params,
        total_scratch_elems: after_dec - base,
        rows,
    })
}
