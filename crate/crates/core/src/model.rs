//! Full model: slice-wise CNN encoder, axial fusion transformer bottleneck,
//! slice-wise CNN decoder.

use alloc::format;
use alloc::vec::Vec;

use crate::codec::{self, CodecConfig};
use crate::error::{ConfigError, CoreError, ShapeError};
use crate::fusion::{self, FusionConfig};
use crate::params::{Binding, ParamStore};
use crate::rng;
use crate::tensor::{Tape, TensorId};

/// Everything needed to construct the network. Shapes are fixed up front:
/// the positional embedding's extent depends on the input size, the group
/// size, and the pool count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Slice height and width after any resampling/padding.
    pub input_h: usize,
    pub input_w: usize,
    /// Channels per input slice (CT intensity = 1).
    pub in_channels: usize,
    /// Encoder/decoder block count (B) and per-block widths, length B.
    pub blocks: usize,
    pub channels: Vec<usize>,
    /// Segmentation classes including background.
    pub c_cls: usize,
    /// Transformer depth (L) and head count (A).
    pub fusion_blocks: usize,
    pub heads: usize,
    /// Slices per group (N_A) and sampling stride (N_f).
    pub n_a: usize,
    pub n_f: usize,
    /// See [`FusionConfig::merge_fc_per_pass`].
    pub merge_fc_per_pass: bool,
}

impl Default for ModelConfig {
    /// Desk-scale default: full depth (B=5, L=6, A=8, N_A=8) at reduced
    /// widths so it trains on a CPU.
    fn default() -> Self {
        Self {
            input_h: 64,
            input_w: 64,
            in_channels: 1,
            blocks: 5,
            channels: alloc::vec![16, 32, 64, 128, 256],
            c_cls: 2,
            fusion_blocks: 6,
            heads: 8,
            n_a: 8,
            n_f: 1,
            merge_fc_per_pass: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.codec_config().validate()?;
        let div = 1usize << (self.blocks - 1);
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return Err(ConfigError(format!(
                "input {}x{} must be divisible by {div} ({} blocks -> {} pools)",
                self.input_h,
                self.input_w,
                self.blocks,
                self.blocks - 1
            )));
        }
        if self.n_a != 1 && self.n_a % 2 != 0 {
            return Err(ConfigError(format!(
                "group size N_A must be even (or 1 for the single-slice degenerate case), got {}",
                self.n_a
            )));
        }
        if self.n_f == 0 {
            return Err(ConfigError("slice stride N_f must be at least 1".into()));
        }
        self.fusion_config().validate()?;
        Ok(())
    }

    /// Bottleneck spatial extent: B-1 pools halve each time.
    pub fn h_l(&self) -> usize {
        self.input_h >> (self.blocks - 1)
    }

    pub fn w_l(&self) -> usize {
        self.input_w >> (self.blocks - 1)
    }

    pub fn c_l(&self) -> usize {
        *self.channels.last().expect("validated nonempty")
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            blocks: self.blocks,
            channels: self.channels.clone(),
            c_cls: self.c_cls,
            in_channels: self.in_channels,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            c_l: self.c_l(),
            h_l: self.h_l(),
            w_l: self.w_l(),
            n_a: self.n_a,
            blocks: self.fusion_blocks,
            heads: self.heads,
            merge_fc_per_pass: self.merge_fc_per_pass,
        }
    }
}

/// The network: a config plus its parameter store. Forward passes are pure
/// functions of (parameters, inputs) run on a caller-provided tape.
pub struct AxialFusionUNet {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl AxialFusionUNet {
    /// Builds and initializes all parameters deterministically from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        codec::init_params(&mut params, &config.codec_config(), &mut r)?;
        fusion::init_params(&mut params, &config.fusion_config(), &mut r)?;
        Ok(Self { config, params })
    }

    /// Binds parameters onto the tape and runs the full forward pass over
    /// one slice group. `slices` must hold exactly N_A tensors of shape
    /// `[in_channels, H, W]`. Returns the logits `[C_cls, H, W, N_A]` and
    /// the binding (for reading per-parameter gradients after backward).
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape,
        slices: &[TensorId],
    ) -> Result<(TensorId, Binding<'a>), CoreError> {
        let bind = self.params.bind(tape);
        let logits = self.forward_with(tape, &bind, slices)?;
        Ok((logits, bind))
    }

    /// Forward pass against an existing binding (used by the trainer, which
    /// binds once per step).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        bind: &Binding<'_>,
        slices: &[TensorId],
    ) -> Result<TensorId, CoreError> {
        if slices.len() != self.config.n_a {
            return Err(ShapeError(format!(
                "expected {} slices per group, got {}",
                self.config.n_a,
                slices.len()
            ))
            .into());
        }
        let codec_cfg = self.config.codec_config();
        let fusion_cfg = self.config.fusion_config();
        let (g, skips) = codec::encode(tape, slices, &codec_cfg, bind)?;
        let z = fusion::aft_encode(tape, g, &fusion_cfg, bind)?;
        let logits = codec::decode(tape, z, &skips, &codec_cfg, bind)?;
        Ok(logits)
    }

    /// Total scalar parameter count.
    pub fn count_parameters(&self) -> usize {
        self.params.total_scalars()
    }
}
