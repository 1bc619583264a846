//! Minimal stderr logger behind the `log` facade, controlled by the
//! `AFT_LOG` environment variable: `quiet` (nothing), `info` (the default),
//! or `debug` (everything). Error reports printed by `main` on failure do
//! not go through this logger, so `quiet` never hides a failure reason.

use log::{Level, LevelFilter, Log, Metadata, Record};

struct StderrLogger;

impl Log for StderrLogger {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record<'_>) {
        if self.enabled(record.metadata()) {
            let tag = match record.level() {
                Level::Error => "error",
                Level::Warn => "warn",
                Level::Info => "info",
                Level::Debug | Level::Trace => "debug",
            };
            eprintln!("[{tag}] {}", record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Maps an `AFT_LOG` value onto a level filter. Unknown values fall back
/// to the default rather than failing: logging verbosity should never
/// break a run.
pub fn filter_for(value: Option<&str>) -> LevelFilter {
    match value {
        Some("quiet") => LevelFilter::Off,
        Some("debug") => LevelFilter::Debug,
        Some("info") | None => LevelFilter::Info,
        Some(_) => LevelFilter::Info,
    }
}

pub fn init() {
    let value = std::env::var("AFT_LOG").ok();
    let unknown = matches!(
        value.as_deref(),
        Some(v) if !matches!(v, "quiet" | "info" | "debug")
    );
    let filter = filter_for(value.as_deref());
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(filter);
    }
    if unknown {
        log::warn!(
            "unrecognized AFT_LOG value {:?}; expected quiet|info|debug, using info",
            value.unwrap_or_default()
        );
    }
}
