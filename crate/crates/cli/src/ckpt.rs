//! Self-describing checkpoint files.
//!
//! The core trainer serializes parameters, optimizer moments, and progress
//! counters, but deliberately knows nothing about file paths or which
//! architecture produced the tensors. The CLI appends the model
//! configuration as extra `cfg.*` entries (small exact integers, so the
//! f32 storage loses nothing) and strips them again on load. `eval` and
//! `predict` can therefore rebuild the network from the checkpoint alone,
//! while `train --resume` combines the stored tensors with the exact
//! optimizer hyperparameters from the config file.

use std::path::Path;

use aft_core::format::{decode_checkpoint, encode_checkpoint, CheckpointEntry};
use aft_core::model::ModelConfig;
use aft_core::optim::TrainConfig;
use aft_core::train::Trainer;

use crate::error::{io_ctx, CliError};

const CFG_PREFIX: &str = "cfg.";

fn config_entries(m: &ModelConfig) -> Vec<CheckpointEntry> {
    let scalar = |name: &str, v: f64| CheckpointEntry::new(name, &[1], &[v]);
    let channels: Vec<f64> = m.channels.iter().map(|&c| c as f64).collect();
    vec![
        scalar("cfg.input_h", m.input_h as f64),
        scalar("cfg.input_w", m.input_w as f64),
        scalar("cfg.in_channels", m.in_channels as f64),
        scalar("cfg.blocks", m.blocks as f64),
        CheckpointEntry::new("cfg.channels", &[channels.len()], &channels),
        scalar("cfg.c_cls", m.c_cls as f64),
        scalar("cfg.fusion_blocks", m.fusion_blocks as f64),
        scalar("cfg.heads", m.heads as f64),
        scalar("cfg.n_a", m.n_a as f64),
        scalar("cfg.n_f", m.n_f as f64),
        scalar("cfg.merge_fc_per_pass", if m.merge_fc_per_pass { 1.0 } else { 0.0 }),
    ]
}

fn config_from_entries(entries: &[CheckpointEntry]) -> Result<ModelConfig, CliError> {
    let find = |name: &str| -> Result<&CheckpointEntry, CliError> {
        entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CliError::Data(format!("checkpoint is missing {name}")))
    };
    let int = |name: &str| -> Result<usize, CliError> {
        let e = find(name)?;
        Ok(e.data[0] as usize)
    };
    Ok(ModelConfig {
        input_h: int("cfg.input_h")?,
        input_w: int("cfg.input_w")?,
        in_channels: int("cfg.in_channels")?,
        blocks: int("cfg.blocks")?,
        channels: find("cfg.channels")?.data.iter().map(|&v| v as usize).collect(),
        c_cls: int("cfg.c_cls")?,
        fusion_blocks: int("cfg.fusion_blocks")?,
        heads: int("cfg.heads")?,
        n_a: int("cfg.n_a")?,
        n_f: int("cfg.n_f")?,
        merge_fc_per_pass: find("cfg.merge_fc_per_pass")?.data[0] != 0.0,
    })
}

/// Trainer state plus its architecture, as one checkpoint byte string.
pub fn to_bytes(trainer: &Trainer) -> Vec<u8> {
    let mut entries = decode_checkpoint(&trainer.checkpoint_to_bytes())
        .expect("trainer serialization is always decodable");
    entries.extend(config_entries(&trainer.cfg.model));
    encode_checkpoint(&entries)
}

pub fn save(path: &Path, trainer: &Trainer) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            io_ctx(std::fs::create_dir_all(parent), "creating directory", parent)?;
        }
    }
    io_ctx(std::fs::write(path, to_bytes(trainer)), "writing checkpoint", path)
}

/// Splits a checkpoint into the architecture it declares and the raw
/// trainer bytes (with `cfg.*` entries removed).
fn split(bytes: &[u8]) -> Result<(ModelConfig, Vec<u8>), CliError> {
    let entries = decode_checkpoint(bytes)?;
    let (cfg_entries, rest): (Vec<_>, Vec<_>) =
        entries.into_iter().partition(|e| e.name.starts_with(CFG_PREFIX));
    if cfg_entries.is_empty() {
        return Err(CliError::Data(
            "checkpoint carries no cfg.* entries; it was not written by this tool".into(),
        ));
    }
    let model = config_from_entries(&cfg_entries)?;
    Ok((model, encode_checkpoint(&rest)))
}

/// Rebuilds a trainer from checkpoint bytes alone, with default optimizer
/// hyperparameters. Enough for `eval` and `predict`, which never step the
/// optimizer.
pub fn load_for_inference(bytes: &[u8]) -> Result<Trainer, CliError> {
    let (model, trainer_bytes) = split(bytes)?;
    let cfg = TrainConfig {
        model,
        ..TrainConfig::default()
    };
    Ok(Trainer::from_checkpoint(cfg, &trainer_bytes)?)
}

/// Rebuilds a trainer using the caller's full `TrainConfig` (for exact
/// resume). The config's architecture must match the checkpoint's.
pub fn load_for_resume(bytes: &[u8], cfg: TrainConfig) -> Result<Trainer, CliError> {
    let (model, trainer_bytes) = split(bytes)?;
    if cfg.model != model {
        return Err(CliError::Usage(format!(
            "config mismatch: checkpoint was trained with {model:?}, config file says {:?}",
            cfg.model
        )));
    }
    Ok(Trainer::from_checkpoint(cfg, &trainer_bytes)?)
}

pub fn load_file(path: &Path) -> Result<Vec<u8>, CliError> {
    io_ctx(std::fs::read(path), "reading checkpoint", path)
}
