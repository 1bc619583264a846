//! Deterministic synthetic scans: ellipsoid "organs" in a noisy background.
//!
//! Each scan places `n_classes - 1` non-overlapping ellipsoids with
//! class-specific intensity bands on a dim background, then adds Gaussian
//! noise and a per-slice brightness offset. Class 1 is always elongated
//! along the axial (depth) axis so that inter-slice context carries signal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;
use crate::rng;
use crate::volume::{LabelVolume, Volume};

/// Background intensity before noise.
const BACKGROUND: f64 = 0.1;
/// Gaussian noise standard deviation.
const NOISE_SIGMA: f64 = 0.03;
/// Half-width of the uniform per-slice brightness offset.
const SLICE_JITTER: f64 = 0.02;
/// Attempts to place one ellipsoid before giving up.
const MAX_PLACEMENT_RETRIES: usize = 200;
/// Smallest semi-axis, in voxels, that still yields a solid interior.
const MIN_RADIUS: f64 = 1.2;

/// Default scan spacing in mm (depth, height, width).
pub const SYNTH_SPACING: [f32; 3] = [2.5, 1.0, 1.0];

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    class: u8,
    ch: f64,
    cw: f64,
    cd: f64,
    rh: f64,
    rw: f64,
    rd: f64,
}

impl Ellipsoid {
    fn contains(&self, h: usize, w: usize, d: usize) -> bool {
        let dy = (h as f64 - self.ch) / self.rh;
        let dx = (w as f64 - self.cw) / self.rw;
        let dz = (d as f64 - self.cd) / self.rd;
        dy * dy + dx * dx + dz * dz <= 1.0
    }

    /// Integer voxel ranges covering the ellipsoid, clamped to the grid.
    fn voxel_bounds(&self, dims: (usize, usize, usize)) -> [(usize, usize); 3] {
        let clamp = |c: f64, r: f64, extent: usize| -> (usize, usize) {
            let lo = libm::floor(c - r).max(0.0) as usize;
            let hi = (libm::ceil(c + r) as usize).min(extent - 1);
            (lo, hi)
        };
        [
            clamp(self.ch, self.rh, dims.0),
            clamp(self.cw, self.rw, dims.1),
            clamp(self.cd, self.rd, dims.2),
        ]
    }
}

/// Counts the candidate's interior voxels; `None` if any of them already
/// belongs to a placed organ (organs must be voxel-disjoint).
fn try_place(
    e: &Ellipsoid,
    placed: &[Ellipsoid],
    dims: (usize, usize, usize),
) -> Option<usize> {
    let [(y0, y1), (x0, x1), (z0, z1)] = e.voxel_bounds(dims);
    let mut count = 0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            for z in z0..=z1 {
                if e.contains(y, x, z) {
                    if placed.iter().any(|p| p.contains(y, x, z)) {
                        return None;
                    }
                    count += 1;
                }
            }
        }
    }
    Some(count)
}

/// Intensity band for foreground class `k` of `n_classes`, spread evenly
/// over [0.3, 0.9] so every class separates from the 0.1 background.
fn class_intensity(k: usize, n_classes: usize) -> f64 {
    let span = (n_classes - 2).max(1) as f64;
    0.3 + 0.6 * (k - 1) as f64 / span
}

fn sample_ellipsoid(
    r: &mut ChaCha8Rng,
    class: usize,
    dims: (usize, usize, usize),
) -> Option<Ellipsoid> {
    let (h, w, d) = dims;
    let plane = h.min(w) as f64;
    // Largest semi-axis that still leaves a valid center range along depth.
    let d_fit = ((d - 1) / 2) as f64;
    let (rh, rw, rd) = if class == 1 {
        // The axially elongated organ: small in-plane, tall in depth.
        let rh = (r.gen_range(0.06..0.10) * plane).max(MIN_RADIUS);
        let rw = (r.gen_range(0.06..0.10) * plane).max(MIN_RADIUS);
        let rd = (2.0 * rh.max(rw))
            .min(0.38 * d as f64)
            .max(1.5)
            .min(d_fit);
        (rh, rw, rd)
    } else {
        let rh = (r.gen_range(0.09..0.16) * plane).max(MIN_RADIUS);
        let rw = (r.gen_range(0.09..0.16) * plane).max(MIN_RADIUS);
        let rd = (r.gen_range(0.8..1.2) * 0.5 * (rh + rw))
            .min(0.30 * d as f64)
            .max(MIN_RADIUS)
            .min(d_fit);
        (rh, rw, rd)
    };
    let center = |extent: usize, radius: f64, r: &mut ChaCha8Rng| -> Option<f64> {
        let lo = libm::ceil(radius);
        let hi = (extent - 1) as f64 - libm::ceil(radius);
        if hi < lo {
            return None;
        }
        Some(r.gen_range(lo..=hi))
    };
    Some(Ellipsoid {
        class: class as u8,
        ch: center(h, rh, r)?,
        cw: center(w, rw, r)?,
        cd: center(d, rd, r)?,
        rh,
        rw,
        rd,
    })
}

fn place_organs(
    r: &mut ChaCha8Rng,
    dims: (usize, usize, usize),
    n_classes: usize,
) -> Result<Vec<Ellipsoid>, DataError> {
    let mut placed: Vec<Ellipsoid> = Vec::new();
    for class in 1..n_classes {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_PLACEMENT_RETRIES {
                return Err(DataError(format!(
                    "failed to place organ {class} after {MAX_PLACEMENT_RETRIES} attempts \
                     (grid {}x{}x{} too small for {n_classes} classes)",
                    dims.0, dims.1, dims.2
                )));
            }
            let Some(e) = sample_ellipsoid(r, class, dims) else {
                continue;
            };
            match try_place(&e, &placed, dims) {
                Some(interior) if interior >= 4 => {
                    placed.push(e);
                    break;
                }
                _ => continue,
            }
        }
    }
    Ok(placed)
}

fn render_scan(
    r: &mut ChaCha8Rng,
    dims: (usize, usize, usize),
    n_classes: usize,
) -> Result<(Volume, LabelVolume), DataError> {
    let (h, w, d) = dims;
    let organs = place_organs(r, dims, n_classes)?;

    let mut labels = vec![0u8; h * w * d];
    let mut intensity = vec![BACKGROUND; h * w * d];
    for y in 0..h {
        for x in 0..w {
            for z in 0..d {
                let i = (y * w + x) * d + z;
                for e in &organs {
                    if e.contains(y, x, z) {
                        labels[i] = e.class;
                        intensity[i] = class_intensity(e.class as usize, n_classes);
                        break;
                    }
                }
            }
        }
    }

    let slice_offsets: Vec<f64> = (0..d).map(|_| rng::uniform_sym(r, SLICE_JITTER)).collect();
    let voxels: Vec<f32> = intensity
        .iter()
        .enumerate()
        .map(|(i, &base)| {
            let z = i % d;
            let v = base + rng::normal(r) * NOISE_SIGMA + slice_offsets[z];
            v.clamp(0.0, 1.0) as f32
        })
        .collect();

    let background = labels.iter().filter(|&&c| c == 0).count();
    if background * 2 <= labels.len() {
        return Err(DataError(format!(
            "organs cover more than half the grid ({} of {} voxels foreground)",
            labels.len() - background,
            labels.len()
        )));
    }

    let volume = Volume::new(1, h, w, d, SYNTH_SPACING, voxels)?;
    let label_volume = LabelVolume::new(h, w, d, SYNTH_SPACING, labels)?;
    Ok((volume, label_volume))
}

/// Generates scan `index` of the dataset identified by `seed`. The scan
/// depends only on `(seed, index)`, so callers may generate scans in any
/// order — or in parallel — and still assemble the exact dataset that
/// `synth_dataset` would return.
pub fn synth_scan(
    dims: (usize, usize, usize),
    n_classes: usize,
    seed: u64,
    index: u64,
) -> Result<(Volume, LabelVolume), DataError> {
    if n_classes < 2 {
        return Err(DataError(format!(
            "need at least 2 classes (background + one organ), got {n_classes}"
        )));
    }
    if n_classes > 256 {
        return Err(DataError(format!("class indices are u8, got {n_classes} classes")));
    }
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(DataError(format!(
            "scan dims must be positive, got {}x{}x{}",
            dims.0, dims.1, dims.2
        )));
    }
    let mut r = rng::stream(seed, index);
    render_scan(&mut r, dims, n_classes)
}

/// Generates `n_scans` paired (scan, labels) volumes of `dims = (H, W, D)`.
/// Scan `i` depends only on `(seed, i)`, so growing the dataset never
/// changes existing scans.
pub fn synth_dataset(
    n_scans: usize,
    dims: (usize, usize, usize),
    n_classes: usize,
    seed: u64,
) -> Result<Vec<(Volume, LabelVolume)>, DataError> {
    (0..n_scans)
        .map(|i| synth_scan(dims, n_classes, seed, i as u64))
        .collect()
}

/// Warps a scan and its labels by a per-slice smoothed 2D displacement
/// field. `amplitude` scales the field (voxels, roughly); `smoothness` is
/// the Gaussian blur sigma applied to the raw noise field. Amplitude 0
/// returns the inputs unchanged.
pub fn elastic_augment(
    v: &Volume,
    l: &LabelVolume,
    amplitude: f64,
    smoothness: f64,
    seed: u64,
) -> Result<(Volume, LabelVolume), DataError> {
    if amplitude < 0.0 {
        return Err(DataError(format!("amplitude must be >= 0, got {amplitude}")));
    }
    if (v.h, v.w, v.d) != (l.h, l.w, l.d) {
        return Err(DataError(format!(
            "volume grid {}x{}x{} does not match label grid {}x{}x{}",
            v.h, v.w, v.d, l.h, l.w, l.d
        )));
    }
    if amplitude == 0.0 {
        return Ok((v.clone(), l.clone()));
    }
    let (h, w) = (v.h, v.w);
    let mut r = rng::stream(seed, 0);
    let mut out_v = v.clone();
    let mut out_l = l.clone();
    for z in 0..v.d {
        let mut dy: Vec<f64> = (0..h * w).map(|_| rng::normal(&mut r)).collect();
        let mut dx: Vec<f64> = (0..h * w).map(|_| rng::normal(&mut r)).collect();
        gaussian_blur_2d(&mut dy, h, w, smoothness);
        gaussian_blur_2d(&mut dx, h, w, smoothness);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sy = (y as f64 + amplitude * dy[i]).clamp(0.0, (h - 1) as f64);
                let sx = (x as f64 + amplitude * dx[i]).clamp(0.0, (w - 1) as f64);
                for c in 0..v.c {
                    let val = bilinear_slice(v, c, z, sy, sx);
                    out_v.voxels[((c * h + y) * w + x) * v.d + z] = val;
                }
                let ny = libm::round(sy) as usize;
                let nx = libm::round(sx) as usize;
                out_l.voxels[(y * w + x) * l.d + z] = l.at(ny, nx, z);
            }
        }
    }
    Ok((out_v, out_l))
}

fn bilinear_slice(v: &Volume, c: usize, z: usize, fy: f64, fx: f64) -> f32 {
    let y0 = libm::floor(fy) as usize;
    let x0 = libm::floor(fx) as usize;
    let (y1, x1) = ((y0 + 1).min(v.h - 1), (x0 + 1).min(v.w - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let v00 = v.at(c, y0, x0, z) as f64;
    let v01 = v.at(c, y0, x1, z) as f64;
    let v10 = v.at(c, y1, x0, z) as f64;
    let v11 = v.at(c, y1, x1, z) as f64;
    let top = v00 * (1.0 - tx) + v01 * tx;
    let bot = v10 * (1.0 - tx) + v11 * tx;
    (top * (1.0 - ty) + bot * ty) as f32
}

/// Separable Gaussian blur with reflecting boundaries; sigma <= 0 is a no-op.
fn gaussian_blur_2d(field: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = libm::ceil(3.0 * sigma) as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for k in -radius..=radius {
        let v = libm::exp(-(k as f64 * k as f64) / (2.0 * sigma * sigma));
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let reflect = |i: i64, n: i64| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i.clamp(0, n - 1) as usize
    };
    // Horizontal pass.
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + ki as i64 - radius, w as i64);
                acc += kv * field[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + ki as i64 - radius, h as i64);
                acc += kv * tmp[sy * w + x];
            }
            field[y * w + x] = acc;
        }
    }
}
