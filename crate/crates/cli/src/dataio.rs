//! Dataset directory layout and AFTV file IO.
//!
//! A dataset directory holds `scan_NNN.aftv` / `labels_NNN.aftv` pairs plus
//! a `manifest.txt` listing every file with its kind and extents, one per
//! line:
//!
//! ```text
//! scan_000.aftv kind=scan dims=1x64x64x32
//! labels_000.aftv kind=labels dims=64x64x32
//! ```
//!
//! The manifest fixes the load order (so training visits scans in a
//! deterministic sequence) and lets corruption be reported against the
//! extents the directory claims to contain.

use std::path::{Path, PathBuf};

use aft_core::format::{decode_labels, decode_volume, encode_labels, encode_volume};
use aft_core::volume::{LabelVolume, Volume};

use crate::error::{io_ctx, CliError};

pub const MANIFEST: &str = "manifest.txt";

pub fn scan_file(index: usize) -> String {
    format!("scan_{index:03}.aftv")
}

pub fn labels_file(index: usize) -> String {
    format!("labels_{index:03}.aftv")
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<(), CliError> {
    io_ctx(std::fs::write(path, encode_volume(v)), "writing volume", path)
}

pub fn write_labels(path: &Path, l: &LabelVolume) -> Result<(), CliError> {
    io_ctx(std::fs::write(path, encode_labels(l)), "writing labels", path)
}

pub fn read_volume(path: &Path) -> Result<Volume, CliError> {
    let bytes = io_ctx(std::fs::read(path), "reading volume", path)?;
    decode_volume(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume, CliError> {
    let bytes = io_ctx(std::fs::read(path), "reading labels", path)?;
    decode_labels(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: Kind,
    pub dims: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Scan,
    Labels,
}

impl ManifestEntry {
    fn line(&self) -> String {
        let kind = match self.kind {
            Kind::Scan => "scan",
            Kind::Labels => "labels",
        };
        let dims = self
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        format!("{} kind={kind} dims={dims}", self.file)
    }

    fn parse(line: &str, lineno: usize) -> Result<Self, CliError> {
        let bad = |why: &str| {
            CliError::Data(format!("manifest line {lineno}: {why}: {line:?}"))
        };
        let mut parts = line.split_whitespace();
        let file = parts.next().ok_or_else(|| bad("missing file name"))?.to_string();
        let kind = match parts.next() {
            Some("kind=scan") => Kind::Scan,
            Some("kind=labels") => Kind::Labels,
            _ => return Err(bad("expected kind=scan or kind=labels")),
        };
        let dims_field = parts
            .next()
            .and_then(|p| p.strip_prefix("dims="))
            .ok_or_else(|| bad("expected dims=AxBx.."))?;
        let dims: Option<Vec<usize>> = dims_field.split('x').map(|p| p.parse().ok()).collect();
        let dims = dims.filter(|d| !d.is_empty()).ok_or_else(|| bad("bad dims"))?;
        Ok(Self { file, kind, dims })
    }
}

pub fn manifest_for_scan(index: usize, v: &Volume, l: &LabelVolume) -> [ManifestEntry; 2] {
    [
        ManifestEntry {
            file: scan_file(index),
            kind: Kind::Scan,
            dims: vec![v.c, v.h, v.w, v.d],
        },
        ManifestEntry {
            file: labels_file(index),
            kind: Kind::Labels,
            dims: vec![l.h, l.w, l.d],
        },
    ]
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<(), CliError> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.line());
        text.push('\n');
    }
    let path = dir.join(MANIFEST);
    io_ctx(std::fs::write(&path, text), "writing manifest", &path)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = dir.join(MANIFEST);
    let text = io_ctx(std::fs::read_to_string(&path), "reading manifest", &path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| ManifestEntry::parse(l.trim(), i + 1))
        .collect()
}

/// Loads every scan/labels pair named by the manifest, in manifest order,
/// checking each file's extents against what the manifest claims.
pub fn load_dataset(dir: &Path) -> Result<Vec<(Volume, LabelVolume)>, CliError> {
    let entries = read_manifest(dir)?;
    let scans: Vec<&ManifestEntry> = entries.iter().filter(|e| e.kind == Kind::Scan).collect();
    let labels: Vec<&ManifestEntry> = entries.iter().filter(|e| e.kind == Kind::Labels).collect();
    if scans.len() != labels.len() {
        return Err(CliError::Data(format!(
            "manifest in {} lists {} scans but {} label volumes",
            dir.display(),
            scans.len(),
            labels.len()
        )));
    }
    if scans.is_empty() {
        return Err(CliError::Data(format!(
            "manifest in {} lists no scans",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(scans.len());
    for (s, l) in scans.iter().zip(&labels) {
        let v = read_volume(&dir.join(&s.file))?;
        if [v.c, v.h, v.w, v.d] != s.dims[..] {
            return Err(CliError::Data(format!(
                "{}: extents {}x{}x{}x{} do not match manifest {:?}",
                s.file, v.c, v.h, v.w, v.d, s.dims
            )));
        }
        let lv = read_labels(&dir.join(&l.file))?;
        if [lv.h, lv.w, lv.d] != l.dims[..] {
            return Err(CliError::Data(format!(
                "{}: extents {}x{}x{} do not match manifest {:?}",
                l.file, lv.h, lv.w, lv.d, l.dims
            )));
        }
        if (v.h, v.w, v.d) != (lv.h, lv.w, lv.d) {
            return Err(CliError::Data(format!(
                "{} and {} disagree on extents",
                s.file, l.file
            )));
        }
        out.push((v, lv));
    }
    Ok(out)
}

/// Creates `dir` if needed and fails clearly when it exists as a file.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    io_ctx(std::fs::create_dir_all(dir), "creating directory", dir)
}

#[allow(dead_code)]
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}
