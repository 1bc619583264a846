//! 3D scan containers and physical-space resampling.
//!
//! Voxels are stored row-major in `(c, h, w, d)` index order with depth
//! innermost, matching the slice-group tensor layout used everywhere else.
//! Spacing is millimeters per voxel step as `(depth, height, width)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::DataError;

/// Intensity scan. `C` is 1 for CT but kept general.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    /// Millimeters per step along (depth, height, width).
    pub spacing: [f32; 3],
    /// Row-major `(c, h, w, d)`, depth innermost.
    pub voxels: Vec<f32>,
}

/// Per-voxel class indices on the same grid as a paired [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub spacing: [f32; 3],
    /// Row-major `(h, w, d)`, depth innermost.
    pub voxels: Vec<u8>,
}

impl Volume {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        d: usize,
        spacing: [f32; 3],
        voxels: Vec<f32>,
    ) -> Result<Self, DataError> {
        if c == 0 || h == 0 || w == 0 || d == 0 {
            return Err(DataError(format!("volume dims must be positive, got {c}x{h}x{w}x{d}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(DataError(format!("spacing must be positive, got {spacing:?}")));
        }
        if voxels.len() != c * h * w * d {
            return Err(DataError(format!(
                "voxel count {} does not match dims {c}x{h}x{w}x{d}",
                voxels.len()
            )));
        }
        Ok(Self {
            c,
            h,
            w,
            d,
            spacing,
            voxels,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize, d: usize) -> f32 {
        self.voxels[((c * self.h + h) * self.w + w) * self.d + d]
    }

    /// Extracts axial slice `d` as `[C, H, W]` data in f64, ready to become
    /// a tape leaf.
    pub fn slice_at(&self, d: usize) -> Vec<f64> {
        assert!(d < self.d, "slice index {d} out of range for depth {}", self.d);
        let mut out = Vec::with_capacity(self.c * self.h * self.w);
        for c in 0..self.c {
            for h in 0..self.h {
                for w in 0..self.w {
                    out.push(self.at(c, h, w, d) as f64);
                }
            }
        }
        out
    }

    /// Clips to `[lo, hi]` then rescales by the clipped volume's own
    /// min/max so intensities span [0, 1]. A constant volume maps to zeros.
    pub fn normalize_window(&self, lo: f32, hi: f32) -> Result<Volume, DataError> {
        if !(hi > lo) {
            return Err(DataError(format!("window must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        let clipped: Vec<f32> = self.voxels.iter().map(|v| v.clamp(lo, hi)).collect();
        let min = clipped.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = clipped.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let range = max - min;
        let voxels = if range > 0.0 {
            clipped.iter().map(|v| (v - min) / range).collect()
        } else {
            vec![0.0; clipped.len()]
        };
        Ok(Volume {
            voxels,
            ..self.clone()
        })
    }

    /// Resamples onto `target` spacing with trilinear interpolation. New
    /// extents are `round(old_extent * old_spacing / new_spacing)` per axis;
    /// identical spacing therefore reproduces the input exactly.
    pub fn resample(&self, target: [f32; 3]) -> Result<Volume, DataError> {
        let (nd, nh, nw) = new_dims(self.d, self.h, self.w, self.spacing, target)?;
        let mut voxels = Vec::with_capacity(self.c * nh * nw * nd);
        let (sd, sh, sw) = scale_factors(self.spacing, target);
        for c in 0..self.c {
            for h in 0..nh {
                let fy = h as f64 * sh;
                for w in 0..nw {
                    let fx = w as f64 * sw;
                    for d in 0..nd {
                        let fz = d as f64 * sd;
                        voxels.push(self.trilinear(c, fy, fx, fz));
                    }
                }
            }
        }
        Volume::new(self.c, nh, nw, nd, target, voxels)
    }

    /// Trilinear sample at fractional grid coordinates (y, x, z), clamped
    /// to the volume bounds.
    fn trilinear(&self, c: usize, fy: f64, fx: f64, fz: f64) -> f32 {
        let (y0, ty) = floor_frac(fy, self.h);
        let (x0, tx) = floor_frac(fx, self.w);
        let (z0, tz) = floor_frac(fz, self.d);
        let (y1, x1, z1) = (
            (y0 + 1).min(self.h - 1),
            (x0 + 1).min(self.w - 1),
            (z0 + 1).min(self.d - 1),
        );
        let mut acc = 0.0f64;
        for (y, wy) in [(y0, 1.0 - ty), (y1, ty)] {
            if wy == 0.0 {
                continue;
            }
            for (x, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                if wx == 0.0 {
                    continue;
                }
                for (z, wz) in [(z0, 1.0 - tz), (z1, tz)] {
                    if wz == 0.0 {
                        continue;
                    }
                    acc += wy * wx * wz * self.at(c, y, x, z) as f64;
                }
            }
        }
        acc as f32
    }
}

impl LabelVolume {
    pub fn new(
        h: usize,
        w: usize,
        d: usize,
        spacing: [f32; 3],
        voxels: Vec<u8>,
    ) -> Result<Self, DataError> {
        if h == 0 || w == 0 || d == 0 {
            return Err(DataError(format!("label dims must be positive, got {h}x{w}x{d}")));
        }
        if voxels.len() != h * w * d {
            return Err(DataError(format!(
                "label count {} does not match dims {h}x{w}x{d}",
                voxels.len()
            )));
        }
        Ok(Self {
            h,
            w,
            d,
            spacing,
            voxels,
        })
    }

    #[inline]
    pub fn at(&self, h: usize, w: usize, d: usize) -> u8 {
        self.voxels[(h * self.w + w) * self.d + d]
    }

    pub fn slice_at(&self, d: usize) -> Vec<u8> {
        assert!(d < self.d, "slice index {d} out of range for depth {}", self.d);
        let mut out = Vec::with_capacity(self.h * self.w);
        for h in 0..self.h {
            for w in 0..self.w {
                out.push(self.at(h, w, d));
            }
        }
        out
    }

    pub fn max_class(&self) -> u8 {
        self.voxels.iter().copied().max().unwrap_or(0)
    }

    /// Nearest-neighbor resample (class indices cannot be interpolated).
    pub fn resample(&self, target: [f32; 3]) -> Result<LabelVolume, DataError> {
        let (nd, nh, nw) = new_dims(self.d, self.h, self.w, self.spacing, target)?;
        let (sd, sh, sw) = scale_factors(self.spacing, target);
        let mut voxels = Vec::with_capacity(nh * nw * nd);
        for h in 0..nh {
            let y = nearest(h as f64 * sh, self.h);
            for w in 0..nw {
                let x = nearest(w as f64 * sw, self.w);
                for d in 0..nd {
                    let z = nearest(d as f64 * sd, self.d);
                    voxels.push(self.at(y, x, z));
                }
            }
        }
        LabelVolume::new(nh, nw, nd, target, voxels)
    }
}

/// Resamples a scan and its labels onto the same target grid.
pub fn resample_pair(
    v: &Volume,
    l: &LabelVolume,
    target: [f32; 3],
) -> Result<(Volume, LabelVolume), DataError> {
    if (v.h, v.w, v.d) != (l.h, l.w, l.d) {
        return Err(DataError(format!(
            "volume grid {}x{}x{} does not match label grid {}x{}x{}",
            v.h, v.w, v.d, l.h, l.w, l.d
        )));
    }
    Ok((v.resample(target)?, l.resample(target)?))
}

fn new_dims(
    d: usize,
    h: usize,
    w: usize,
    old: [f32; 3],
    new: [f32; 3],
) -> Result<(usize, usize, usize), DataError> {
    if new.iter().any(|&s| !(s > 0.0)) {
        return Err(DataError(format!("target spacing must be positive, got {new:?}")));
    }
    let dim = |extent: usize, o: f32, n: f32| -> usize {
        libm::round(extent as f64 * o as f64 / n as f64) as usize
    };
    let (nd, nh, nw) = (dim(d, old[0], new[0]), dim(h, old[1], new[1]), dim(w, old[2], new[2]));
    if nd == 0 || nh == 0 || nw == 0 {
        return Err(DataError(format!(
            "resampling to {new:?} mm collapses the grid to {nh}x{nw}x{nd}"
        )));
    }
    Ok((nd, nh, nw))
}

/// Output-index -> input-index scale per axis. Uses the exact dims ratio
/// implied by the spacing so that identical spacing gives scale 1.
fn scale_factors(old: [f32; 3], new: [f32; 3]) -> (f64, f64, f64) {
    (
        new[0] as f64 / old[0] as f64,
        new[1] as f64 / old[1] as f64,
        new[2] as f64 / old[2] as f64,
    )
}

fn floor_frac(f: f64, extent: usize) -> (usize, f64) {
    let clamped = f.clamp(0.0, (extent - 1) as f64);
    let base = libm::floor(clamped);
    (base as usize, clamped - base)
}

fn nearest(f: f64, extent: usize) -> usize {
    (libm::round(f) as i64).clamp(0, extent as i64 - 1) as usize
}
