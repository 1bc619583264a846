//! The five subcommands. Each `run_*` returns a [`CliError`] whose
//! category decides the process exit code; all printing to stdout is the
//! command's contract (tables, log lines), while progress chatter goes
//! through the logger on stderr.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use log::{debug, info};

use aft_core::loss::{evaluate, predict_volume};
use aft_core::profile::{attention_memory, count_comparisons};
use aft_core::synth::synth_scan;
use aft_core::train::Trainer;

use crate::ckpt;
use crate::config::{parse_dims, RunConfig};
use crate::dataio;
use crate::error::{io_ctx, CliError};

/// Generate a synthetic CT-like dataset of paired scan/label volumes.
#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory to write the dataset into (created if missing)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Optional config file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of scans to generate
    #[arg(long, value_name = "N")]
    pub scans: Option<usize>,
    /// Scan extent as HxWxD, e.g. 64x64x32
    #[arg(long, value_name = "HxWxD")]
    pub dims: Option<String>,
    /// Class count including background (2..=256)
    #[arg(long, value_name = "K")]
    pub classes: Option<usize>,
    /// Dataset seed; scan i depends only on (seed, i)
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Worker threads for generation (output is identical for any count)
    #[arg(long, value_name = "W")]
    pub workers: Option<usize>,
    /// Extra key=value overrides, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Train on a dataset directory and write checkpoints plus a log.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file holding the model and optimization settings
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Dataset directory (overrides data_dir from the config)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory (overrides out_dir from the config)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Total epochs (overrides the config)
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Training seed (overrides the config)
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Resume from a checkpoint written by a previous run with this config
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Extra key=value overrides, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Score a checkpoint against a labeled dataset.
#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file written by `aft train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory with scans and labels
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Directory for metrics.txt (default: current directory)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Segment one volume and write the predicted labels.
#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Checkpoint file written by `aft train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Input intensity volume (AFTV)
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output label volume (AFTV)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Optional intensity window LO:HI applied before inference
    #[arg(long, value_name = "LO:HI")]
    pub window: Option<String>,
}

/// Report attention cost and memory for bottleneck token grids.
#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated token grids as HxWxN, e.g. 16x16x8,8x8x4
    #[arg(long, value_name = "LIST")]
    pub grids: String,
    /// Head count for the attention-map memory model
    #[arg(long, value_name = "A", default_value_t = 1)]
    pub heads: usize,
    /// Bytes per stored scalar in the memory model (4 = f32)
    #[arg(long, value_name = "B", default_value_t = 4)]
    pub bytes: usize,
}

fn parse_set_pairs(set: &[String]) -> Result<Vec<(String, String)>, CliError> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))
        })
        .collect()
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut overrides = parse_set_pairs(&args.set)?;
    if let Some(v) = args.scans {
        overrides.push(("scans".into(), v.to_string()));
    }
    if let Some(v) = &args.dims {
        overrides.push(("dims".into(), v.clone()));
    }
    if let Some(v) = args.classes {
        overrides.push(("classes".into(), v.to_string()));
    }
    if let Some(v) = args.seed {
        overrides.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = args.workers {
        overrides.push(("workers".into(), v.to_string()));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;

    dataio::ensure_dir(&args.out)?;
    let n = cfg.scans;
    let dims = cfg.dims;
    let classes = cfg.classes;
    let seed = cfg.train.seed;
    let workers = cfg.workers.max(1).min(n.max(1));
    info!(
        "generating {n} scans of {}x{}x{} with {classes} classes (seed {seed}, {workers} workers)",
        dims.0, dims.1, dims.2
    );

    // Scan i depends only on (seed, i), so any partition across workers
    // produces byte-identical files.
    type Rows = Vec<(usize, [dataio::ManifestEntry; 2])>;
    let out_dir = args.out.clone();
    let results: Vec<Result<Rows, CliError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let out_dir = &out_dir;
            handles.push(scope.spawn(move || {
                let mut rows: Rows = Vec::new();
                for i in (worker..n).step_by(workers) {
                    let (v, l) = synth_scan(dims, classes, seed, i as u64)?;
                    dataio::write_volume(&out_dir.join(dataio::scan_file(i)), &v)?;
                    dataio::write_labels(&out_dir.join(dataio::labels_file(i)), &l)?;
                    rows.push((i, dataio::manifest_for_scan(i, &v, &l)));
                    debug!("scan {i} written");
                }
                Ok(rows)
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("synth worker panicked"))
            .collect()
    });

    // Manifest order is by scan index regardless of which worker wrote it.
    let mut rows: Rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|(i, _)| *i);
    let entries: Vec<dataio::ManifestEntry> =
        rows.into_iter().flat_map(|(_, pair)| pair).collect();
    dataio::write_manifest(&args.out, &entries)?;
    info!("dataset written to {}", args.out.display());
    Ok(())
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut overrides = parse_set_pairs(&args.set)?;
    if let Some(v) = &args.data {
        overrides.push(("data_dir".into(), v.display().to_string()));
    }
    if let Some(v) = &args.out {
        overrides.push(("out_dir".into(), v.display().to_string()));
    }
    if let Some(v) = args.epochs {
        overrides.push(("epochs".into(), v.to_string()));
    }
    if let Some(v) = args.seed {
        overrides.push(("seed".into(), v.to_string()));
    }
    let cfg = RunConfig::load(Some(&args.config), &overrides)?;

    let dataset = dataio::load_dataset(&cfg.data_dir)?;
    info!(
        "loaded {} scans from {}",
        dataset.len(),
        cfg.data_dir.display()
    );

    let mut trainer = match &args.resume {
        Some(path) => {
            let t = ckpt::load_for_resume(&ckpt::load_file(path)?, cfg.train.clone())?;
            info!("resumed from {} at epoch {}", path.display(), t.epoch);
            t
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    info!(
        "model has {} parameters; training epochs {}..{}",
        trainer.model.count_parameters(),
        trainer.epoch,
        cfg.train.epochs
    );

    dataio::ensure_dir(&cfg.out_dir)?;
    // Record the fully merged configuration so the run is reproducible
    // from its outputs alone.
    let cfg_path = cfg.out_dir.join("run_config.txt");
    io_ctx(
        std::fs::write(&cfg_path, cfg.to_file_text()),
        "writing run config",
        &cfg_path,
    )?;
    let log_path = cfg.out_dir.join("train.log");
    let mut log_file = io_ctx(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path),
        "opening log",
        &log_path,
    )?;

    let started = Instant::now();
    while trainer.epoch < cfg.train.epochs {
        let stats = trainer.train_epoch(&dataset)?;
        let line = stats.log_line();
        println!("{line}");
        io_ctx(writeln!(log_file, "{line}"), "appending to log", &log_path)?;
        if cfg.checkpoint_every > 0 && (stats.epoch + 1) % cfg.checkpoint_every == 0 {
            let path = cfg
                .out_dir
                .join(format!("checkpoint_epoch_{:04}.aftc", stats.epoch + 1));
            ckpt::save(&path, &trainer)?;
            debug!("checkpoint written to {}", path.display());
        }
    }
    let final_path = cfg.out_dir.join("checkpoint_final.aftc");
    ckpt::save(&final_path, &trainer)?;
    info!(
        "trained to epoch {} in {:.1}s; checkpoint at {}",
        trainer.epoch,
        started.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let trainer = ckpt::load_for_inference(&ckpt::load_file(&args.checkpoint)?)?;
    let dataset = dataio::load_dataset(&args.data)?;
    info!(
        "evaluating {} scans with the checkpoint from epoch {}",
        dataset.len(),
        trainer.epoch
    );
    let report = evaluate(&trainer.model, &dataset)?;
    print!("{}", report.table());

    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    dataio::ensure_dir(&out_dir)?;
    let metrics_path = out_dir.join("metrics.txt");
    io_ctx(
        std::fs::write(&metrics_path, report.metrics()),
        "writing metrics",
        &metrics_path,
    )?;
    info!("metrics written to {}", metrics_path.display());
    Ok(())
}

pub fn run_predict(args: &PredictArgs) -> Result<(), CliError> {
    let trainer = ckpt::load_for_inference(&ckpt::load_file(&args.checkpoint)?)?;
    let scan = dataio::read_volume(&args.input)?;
    let scan = match &args.window {
        Some(spec) => {
            let (lo, hi) = spec
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| {
                    CliError::Usage(format!("--window expects LO:HI numbers, got {spec:?}"))
                })?;
            scan.normalize_window(lo, hi)?
        }
        None => scan,
    };
    info!(
        "predicting {}x{}x{} volume from {}",
        scan.h,
        scan.w,
        scan.d,
        args.input.display()
    );
    let pred = predict_volume(&trainer.model, &scan)?;
    let labels = pred.into_label_volume(scan.spacing)?;
    dataio::write_labels(&args.out, &labels)?;
    info!("labels written to {}", args.out.display());
    Ok(())
}

pub fn run_bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.grids.trim().is_empty() {
        return Err(CliError::Usage("--grids needs at least one HxWxN grid".into()));
    }
    for (i, grid) in args.grids.split(',').enumerate() {
        let (h, w, n) = parse_dims(grid)
            .map_err(|e| CliError::Usage(format!("--grids entry {}: {}", i + 1, e.message())))?;
        let cost = count_comparisons(h, w, n)?;
        print!("{}", cost.table());
        let mem = attention_memory(h, w, n, args.heads, args.bytes)?;
        println!(
            "  attention map memory  : full {:>12} B  factorized {:>12} B  ({:.2}x, {} heads, {} B/scalar)",
            mem.full_bytes,
            mem.factorized_bytes,
            mem.ratio(),
            args.heads,
            args.bytes
        );
    }
    Ok(())
}
