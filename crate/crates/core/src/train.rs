//! The training loop: one optimizer step per scan per epoch, seeded
//! shuffling, and checkpoint serialization.
//!
//! Determinism contract: epoch `e` draws all of its randomness (scan order,
//! augmentation, center picks) from RNG stream `STREAM_EPOCH_BASE + e` of
//! the config seed, so resuming from a checkpoint at epoch `e` replays the
//! exact trajectory of an uninterrupted run.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{ConfigError, CoreError, DataError, NumericError};
use crate::format::{decode_checkpoint, encode_checkpoint, CheckpointEntry};
use crate::loss::{combined_loss, stack_group_labels};
use crate::model::AxialFusionUNet;
use crate::optim::{adam_step, lr_at, AdamState, TrainConfig};
use crate::rng;
use crate::sampling::sample_slice_group;
use crate::synth::elastic_augment;
use crate::tensor::{Tape, TensorId};
use crate::volume::{LabelVolume, Volume};

/// Model, optimizer state, and progress counter bundled together.
pub struct Trainer {
    pub model: AxialFusionUNet,
    pub cfg: TrainConfig,
    pub opt: AdamState,
    /// Next epoch to run (also the count of completed epochs).
    pub epoch: usize,
}

/// One epoch's summary, ready for the log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

impl EpochStats {
    /// The canonical per-epoch log line.
    pub fn log_line(&self) -> String {
        format!("epoch={} lr={} loss={}", self.epoch, self.lr, self.loss)
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let model = AxialFusionUNet::init(cfg.model.clone(), cfg.seed)?;
        let opt = AdamState::new(&model.params);
        Ok(Self {
            model,
            cfg,
            opt,
            epoch: 0,
        })
    }

    /// Runs one epoch: for every scan (in a freshly shuffled order) draw one
    /// uniform center depth, build its slice group, and take one Adam step
    /// on the combined loss. Returns the mean per-scan loss.
    pub fn train_epoch(
        &mut self,
        dataset: &[(Volume, LabelVolume)],
    ) -> Result<EpochStats, CoreError> {
        if dataset.is_empty() {
            return Err(DataError("cannot train on an empty dataset".into()).into());
        }
        let lr = lr_at(self.epoch, &self.cfg)?;
        let mut r = rng::stream(
            self.cfg.seed,
            rng::STREAM_EPOCH_BASE + self.epoch as u64,
        );
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rng::shuffle(&mut r, &mut order);

        let mut total = 0.0;
        for &scan_idx in &order {
            let (scan, labels) = &dataset[scan_idx];
            let loss = if self.cfg.elastic_amplitude > 0.0 {
                let aug_seed = r.gen::<u64>();
                let (scan, labels) = elastic_augment(
                    scan,
                    labels,
                    self.cfg.elastic_amplitude,
                    self.cfg.elastic_smoothness,
                    aug_seed,
                )?;
                self.step_on_scan(&scan, &labels, &mut r, lr, scan_idx)?
            } else {
                self.step_on_scan(scan, labels, &mut r, lr, scan_idx)?
            };
            total += loss;
        }

        let stats = EpochStats {
            epoch: self.epoch,
            lr,
            loss: total / dataset.len() as f64,
        };
        self.epoch += 1;
        Ok(stats)
    }

    fn step_on_scan(
        &mut self,
        scan: &Volume,
        labels: &LabelVolume,
        r: &mut impl Rng,
        lr: f64,
        scan_idx: usize,
    ) -> Result<f64, CoreError> {
        let d = r.gen_range(0..scan.d);
        let group = sample_slice_group(
            scan,
            Some(labels),
            d,
            self.cfg.model.n_a,
            self.cfg.model.n_f,
        )?;

        let mut tape = Tape::new();
        let slices: Vec<TensorId> = group
            .slices
            .iter()
            .map(|s| tape.leaf(&[group.c, group.h, group.w], s.clone()))
            .collect();
        let bind = self.model.params.bind(&mut tape);
        let logits = self.model.forward_with(&mut tape, &bind, &slices)?;
        let flat = stack_group_labels(group.labels.as_ref().expect("sampled with labels"), group.h, group.w);
        let loss_id = combined_loss(&mut tape, logits, &flat)?;
        let loss = tape.data(loss_id)[0];
        if !loss.is_finite() {
            return Err(NumericError {
                context: format!("loss on scan {scan_idx} (center {d}, epoch {})", self.epoch),
            }
            .into());
        }
        tape.backward(loss_id)?;

        let grads: Vec<Vec<f64>> = (0..self.model.params.entries().len())
            .map(|i| {
                tape.grad(bind.id(i))
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| alloc::vec![0.0; self.model.params.entries()[i].data.len()])
            })
            .collect();
        adam_step(&mut self.model.params, &grads, &mut self.opt, lr, &self.cfg)?;
        Ok(loss)
    }

    /// Serializes parameters, optimizer moments, the step counter, and the
    /// epoch counter. Values are exact: everything is already on the f32
    /// grid (the step counter fits f32 exactly below 2^24 steps).
    pub fn checkpoint_to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        for e in self.model.params.entries() {
            entries.push(CheckpointEntry::new(&e.name, &e.shape, &e.data));
        }
        for (i, e) in self.model.params.entries().iter().enumerate() {
            entries.push(CheckpointEntry::new(
                &format!("opt.m.{}", e.name),
                &e.shape,
                &self.opt.m[i],
            ));
            entries.push(CheckpointEntry::new(
                &format!("opt.v.{}", e.name),
                &e.shape,
                &self.opt.v[i],
            ));
        }
        entries.push(CheckpointEntry::new("opt.step", &[1], &[self.opt.step as f64]));
        entries.push(CheckpointEntry::new("trainer.epoch", &[1], &[self.epoch as f64]));
        encode_checkpoint(&entries)
    }

    /// Rebuilds a trainer from a checkpoint. The config must describe the
    /// same architecture the checkpoint was written from.
    pub fn from_checkpoint(cfg: TrainConfig, bytes: &[u8]) -> Result<Self, CoreError> {
        let decoded = decode_checkpoint(bytes)?;
        let mut trainer = Self::new(cfg)?;

        let expected = 3 * trainer.model.params.entries().len() + 2;
        if decoded.len() != expected {
            return Err(ConfigError(format!(
                "checkpoint holds {} tensors but this config requires {expected}; \
                 architecture mismatch",
                decoded.len()
            ))
            .into());
        }
        let find = |name: &str| -> Result<&CheckpointEntry, ConfigError> {
            decoded
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| ConfigError(format!("checkpoint is missing tensor {name}")))
        };

        let n = trainer.model.params.entries().len();
        for i in 0..n {
            let (name, shape) = {
                let e = &trainer.model.params.entries()[i];
                (e.name.clone(), e.shape.clone())
            };
            for (prefix, target) in [("", 0usize), ("opt.m.", 1), ("opt.v.", 2)] {
                let stored = find(&format!("{prefix}{name}"))?;
                if stored.shape != shape {
                    return Err(ConfigError(format!(
                        "checkpoint tensor {prefix}{name} has shape {:?}, config requires {:?}",
                        stored.shape, shape
                    ))
                    .into());
                }
                match target {
                    0 => trainer.model.params.entries_mut()[i].data.copy_from_slice(&stored.data),
                    1 => trainer.opt.m[i].copy_from_slice(&stored.data),
                    _ => trainer.opt.v[i].copy_from_slice(&stored.data),
                }
            }
        }
        trainer.opt.step = find("opt.step")?.data[0] as u64;
        trainer.epoch = find("trainer.epoch")?.data[0] as usize;
        Ok(trainer)
    }
}
