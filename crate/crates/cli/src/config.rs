//! Run configuration: defaults, a flat `key=value` config file, and flag
//! overrides, merged in that order (flags win over the file, the file wins
//! over defaults).
//!
//! The file format is one `key=value` pair per line; `#` starts a comment;
//! blank lines are ignored. Every key names a field below — unknown keys
//! are usage errors so typos fail loudly instead of silently using a
//! default.

use std::path::{Path, PathBuf};

use aft_core::optim::TrainConfig;

use crate::error::{io_ctx, CliError};

/// Everything a command might need, merged from defaults, the config file,
/// and command-line flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Model architecture and optimization settings (see the key table in
    /// the README for the flat names).
    pub train: TrainConfig,
    /// Dataset directory (AFTV pairs plus `manifest.txt`).
    pub data_dir: PathBuf,
    /// Output directory for checkpoints, logs, and metrics.
    pub out_dir: PathBuf,
    /// Write an intermediate checkpoint every N epochs (0 = final only).
    pub checkpoint_every: usize,
    /// Synthetic dataset shape.
    pub scans: usize,
    pub dims: (usize, usize, usize),
    pub classes: usize,
    /// Parallel workers for dataset generation.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint_every: 0,
            scans: 4,
            dims: (64, 64, 32),
            classes: 3,
            workers: 1,
        }
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("{key}: expected {what}, got {value:?}")))
}

/// `HxWxD` (or `HxWxN` for attention grids) → three positive extents.
pub fn parse_dims(value: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = value.trim().split('x').collect();
    if parts.len() != 3 {
        return Err(usage(format!(
            "dims: expected HxWxD with three extents, got {value:?}"
        )));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| usage(format!("dims: extents must be positive integers, got {value:?}")))?;
    }
    Ok((out[0], out[1], out[2]))
}

impl RunConfig {
    /// Applies one `key=value` pair. Unknown keys and malformed values are
    /// usage errors naming the key and the expected form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            // model
            "input_h" => self.train.model.input_h = parse_num(key, v, "a positive integer")?,
            "input_w" => self.train.model.input_w = parse_num(key, v, "a positive integer")?,
            "in_channels" => self.train.model.in_channels = parse_num(key, v, "a positive integer")?,
            "blocks" => self.train.model.blocks = parse_num(key, v, "a positive integer")?,
            "channels" => {
                let widths: Result<Vec<usize>, CliError> = v
                    .split(',')
                    .map(|p| parse_num(key, p, "a comma-separated list of positive integers"))
                    .collect();
                self.train.model.channels = widths?;
            }
            "c_cls" => self.train.model.c_cls = parse_num(key, v, "an integer >= 2")?,
            "fusion_blocks" => self.train.model.fusion_blocks = parse_num(key, v, "a positive integer")?,
            "heads" => self.train.model.heads = parse_num(key, v, "a positive integer")?,
            "n_a" => self.train.model.n_a = parse_num(key, v, "1 or an even integer")?,
            "n_f" => self.train.model.n_f = parse_num(key, v, "a positive integer")?,
            "merge_fc_per_pass" => {
                self.train.model.merge_fc_per_pass = match v {
                    "true" => true,
                    "false" => false,
                    _ => return Err(usage(format!("{key}: expected true or false, got {v:?}"))),
                }
            }
            // optimization
            "epochs" => self.train.epochs = parse_num(key, v, "a positive integer")?,
            "phase1_epochs" => self.train.phase1_epochs = parse_num(key, v, "an integer")?,
            "lr_phase1" => self.train.lr_phase1 = parse_num(key, v, "a positive number")?,
            "lr_phase2" => self.train.lr_phase2 = parse_num(key, v, "a positive number")?,
            "beta1" => self.train.beta1 = parse_num(key, v, "a number in [0, 1)")?,
            "beta2" => self.train.beta2 = parse_num(key, v, "a number in [0, 1)")?,
            "eps" => self.train.eps = parse_num(key, v, "a positive number")?,
            "weight_decay" => self.train.weight_decay = parse_num(key, v, "a non-negative number")?,
            "seed" => self.train.seed = parse_num(key, v, "an unsigned integer")?,
            "elastic_amplitude" => {
                self.train.elastic_amplitude = parse_num(key, v, "a non-negative number")?
            }
            "elastic_smoothness" => {
                self.train.elastic_smoothness = parse_num(key, v, "a positive number")?
            }
            // paths and run shape
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v, "an integer")?,
            // synthetic data
            "scans" => self.scans = parse_num(key, v, "a positive integer")?,
            "dims" => self.dims = parse_dims(v)?,
            "classes" => self.classes = parse_num(key, v, "an integer in [2, 256]")?,
            "workers" => {
                self.workers = parse_num(key, v, "a positive integer")?;
                if self.workers == 0 {
                    return Err(usage("workers: must be at least 1".into()));
                }
            }
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses the flat config text and applies every pair in order.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "{origin} line {}: expected key=value, got {line:?}",
                    idx + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| usage(format!("{origin} line {}: {}", idx + 1, e.message())))?;
        }
        Ok(())
    }

    /// Defaults, then the optional config file, then override pairs, in
    /// that precedence order. Validates the merged result.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = io_ctx(std::fs::read_to_string(path), "reading config", path)?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// The config rendered back out in file form; writing this next to a
    /// run's outputs records exactly what was used.
    pub fn to_file_text(&self) -> String {
        let m = &self.train.model;
        let t = &self.train;
        let channels = m
            .channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "# model\n\
             input_h={}\ninput_w={}\nin_channels={}\nblocks={}\nchannels={}\n\
             c_cls={}\nfusion_blocks={}\nheads={}\nn_a={}\nn_f={}\nmerge_fc_per_pass={}\n\
             # optimization\n\
             epochs={}\nphase1_epochs={}\nlr_phase1={}\nlr_phase2={}\nbeta1={}\nbeta2={}\n\
             eps={}\nweight_decay={}\nseed={}\nelastic_amplitude={}\nelastic_smoothness={}\n\
             # paths and run shape\n\
             data_dir={}\nout_dir={}\ncheckpoint_every={}\n\
             # synthetic data\n\
             scans={}\ndims={}x{}x{}\nclasses={}\nworkers={}\n",
            m.input_h,
            m.input_w,
            m.in_channels,
            m.blocks,
            channels,
            m.c_cls,
            m.fusion_blocks,
            m.heads,
            m.n_a,
            m.n_f,
            m.merge_fc_per_pass,
            t.epochs,
            t.phase1_epochs,
            t.lr_phase1,
            t.lr_phase2,
            t.beta1,
            t.beta2,
            t.eps,
            t.weight_decay,
            t.seed,
            t.elastic_amplitude,
            t.elastic_smoothness,
            self.data_dir.display(),
            self.out_dir.display(),
            self.checkpoint_every,
            self.scans,
            self.dims.0,
            self.dims.1,
            self.dims.2,
            self.classes,
            self.workers,
        )
    }
}
