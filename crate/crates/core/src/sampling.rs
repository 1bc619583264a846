//! Extraction of axial neighbor groups from a scan.
//!
//! A group centered at depth `d` gathers `N_A` slices at strided offsets:
//! `a_n = clamp(d - N_f * (N_A/2 - n), 0, D-1)` for `n in 0..N_A`. The center
//! slice always lands at position `N_A/2`, and out-of-range neighbors repeat
//! the boundary slice instead of shrinking the group.

use alloc::format;
use alloc::vec::Vec;

use crate::error::ConfigError;
use crate::volume::{LabelVolume, Volume};

/// One training/inference sample: `N_A` axial slices around a center depth.
#[derive(Clone, Debug)]
pub struct SliceGroup {
    /// Center depth in the source scan.
    pub center: usize,
    /// Source depth of each gathered slice, length `N_A`.
    pub indices: Vec<usize>,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// Per-slice `[C, H, W]` intensity blocks, one per entry of `indices`.
    pub slices: Vec<Vec<f64>>,
    /// Per-slice `[H, W]` class maps when labels were supplied.
    pub labels: Option<Vec<Vec<u8>>>,
}

impl SliceGroup {
    /// Number of slices in the group.
    pub fn n_a(&self) -> usize {
        self.indices.len()
    }

    /// Position of the center slice within the group.
    pub fn middle(&self) -> usize {
        self.indices.len() / 2
    }
}

/// Depth indices gathered for a group centered at `d`.
pub fn group_indices(d_extent: usize, d: usize, n_a: usize, n_f: usize) -> Result<Vec<usize>, ConfigError> {
    if n_a == 0 || (n_a != 1 && n_a % 2 != 0) {
        return Err(ConfigError(format!("group size must be 1 or even, got {n_a}")));
    }
    if n_f == 0 {
        return Err(ConfigError(format!("neighbor stride must be >= 1, got {n_f}")));
    }
    if d >= d_extent {
        return Err(ConfigError(format!("center depth {d} out of range for {d_extent} slices")));
    }
    let half = (n_a / 2) as i64;
    let max = d_extent as i64 - 1;
    Ok((0..n_a as i64)
        .map(|n| (d as i64 - n_f as i64 * (half - n)).clamp(0, max) as usize)
        .collect())
}

/// Gathers slices (and labels when available) for the group centered at `d`.
pub fn sample_slice_group(
    volume: &Volume,
    labels: Option<&LabelVolume>,
    d: usize,
    n_a: usize,
    n_f: usize,
) -> Result<SliceGroup, ConfigError> {
    if let Some(l) = labels {
        if (l.h, l.w, l.d) != (volume.h, volume.w, volume.d) {
            return Err(ConfigError(format!(
                "label grid {}x{}x{} does not match scan grid {}x{}x{}",
                l.h, l.w, l.d, volume.h, volume.w, volume.d
            )));
        }
    }
    let indices = group_indices(volume.d, d, n_a, n_f)?;
    let slices = indices.iter().map(|&a| volume.slice_at(a)).collect();
    let labels = labels.map(|l| indices.iter().map(|&a| l.slice_at(a)).collect());
    Ok(SliceGroup {
        center: d,
        indices,
        c: volume.c,
        h: volume.h,
        w: volume.w,
        slices,
        labels,
    })
}

/// Iterates groups for every center depth `0..D`, in order.
pub fn iter_groups<'a>(
    volume: &'a Volume,
    labels: Option<&'a LabelVolume>,
    n_a: usize,
    n_f: usize,
) -> Result<impl Iterator<Item = SliceGroup> + 'a, ConfigError> {
    // Validate once up front so the iterator itself cannot fail.
    group_indices(volume.d, 0, n_a, n_f)?;
    if let Some(l) = labels {
        if (l.h, l.w, l.d) != (volume.h, volume.w, volume.d) {
            return Err(ConfigError(format!(
                "label grid {}x{}x{} does not match scan grid {}x{}x{}",
                l.h, l.w, l.d, volume.h, volume.w, volume.d
            )));
        }
    }
    Ok((0..volume.d).map(move |d| {
        sample_slice_group(volume, labels, d, n_a, n_f).expect("validated above")
    }))
}
