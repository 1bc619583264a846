//! Training losses, the overlap metric, and prediction assembly.
//!
//! Logits everywhere are `[C_cls, H, W, N_A]` with the class axis leading,
//! matching the decoder output. Label maps for a group are flattened to
//! `[H, W, N_A]` with the slice axis innermost so label index `(h·W+w)·N+n`
//! lines up with logit position `(h·W+w)·N+n` inside each class plane.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, DataError, ShapeError};
use crate::model::AxialFusionUNet;
use crate::sampling::{iter_groups, SliceGroup};
use crate::tensor::{BackwardOp, Grads, Tape, TapeView, TensorId};
use crate::volume::{LabelVolume, Volume};

/// Default Dice smoothing term; keeps empty classes finite.
pub const DICE_SMOOTH: f64 = 1.0;

/// Flattens per-slice `[H, W]` label maps into the `[H, W, N_A]` layout the
/// losses expect.
pub fn stack_group_labels(per_slice: &[Vec<u8>], h: usize, w: usize) -> Vec<u8> {
    let n = per_slice.len();
    let mut out = vec![0u8; h * w * n];
    for (k, slice) in per_slice.iter().enumerate() {
        assert_eq!(slice.len(), h * w, "label slice has wrong extent");
        for (p, &v) in slice.iter().enumerate() {
            out[p * n + k] = v;
        }
    }
    out
}

/// Validates logits/labels agreement and returns (C_cls, positions).
fn check_logits_labels(
    tape: &Tape,
    logits: TensorId,
    labels: &[u8],
) -> Result<(usize, usize), CoreError> {
    let shape = tape.shape(logits);
    if shape.len() != 4 {
        return Err(ShapeError(format!("logits must be [C,H,W,N], got {shape:?}")).into());
    }
    let c = shape[0];
    let s = shape[1] * shape[2] * shape[3];
    if c < 2 {
        return Err(ShapeError(format!("need at least 2 classes, got {c}")).into());
    }
    if labels.len() != s {
        return Err(ShapeError(format!(
            "labels have {} entries but logits cover {s} positions",
            labels.len()
        ))
        .into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(DataError(format!("label {bad} out of range for {c} classes")).into());
    }
    Ok((c, s))
}

/// Per-position softmax over the leading class axis. `z` is `[C, S]` data;
/// the result has the same layout.
fn class_softmax(z: &[f64], c: usize, s: usize) -> Vec<f64> {
    let mut p = vec![0.0; c * s];
    for pos in 0..s {
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            m = m.max(z[k * s + pos]);
        }
        let mut sum = 0.0;
        for k in 0..c {
            let e = libm::exp(z[k * s + pos] - m);
            p[k * s + pos] = e;
            sum += e;
        }
        for k in 0..c {
            p[k * s + pos] /= sum;
        }
    }
    p
}

/// Pushes the per-position probability gradient `dp` back through the
/// softmax into the logit gradient slot.
fn softmax_backprop(p: &[f64], dp: &[f64], c: usize, s: usize, gz: &mut [f64]) {
    for pos in 0..s {
        let mut dot = 0.0;
        for k in 0..c {
            dot += p[k * s + pos] * dp[k * s + pos];
        }
        for k in 0..c {
            let i = k * s + pos;
            gz[i] += p[i] * (dp[i] - dot);
        }
    }
}

struct DiceLossBack {
    logits: TensorId,
    labels: Vec<u8>,
    probs: Vec<f64>,
    /// Per foreground class: the dice ratio and its denominator.
    dice: Vec<f64>,
    denom: Vec<f64>,
    c: usize,
    s: usize,
}

impl BackwardOp for DiceLossBack {
    fn backward(&self, _view: &TapeView<'_>, _out: TensorId, grad_out: &[f64], grads: &mut Grads<'_>) {
        let Some(gz) = grads.slot(self.logits) else {
            return;
        };
        let g = grad_out[0];
        let fg = (self.c - 1) as f64;
        let mut dp = vec![0.0; self.c * self.s];
        for k in 1..self.c {
            let dice_k = self.dice[k - 1];
            let denom_k = self.denom[k - 1];
            for pos in 0..self.s {
                let is_k = if self.labels[pos] as usize == k { 1.0 } else { 0.0 };
                // d(1 - mean dice)/dp = -(2g - dice)/denom / (C-1)
                dp[k * self.s + pos] = -g * (2.0 * is_k - dice_k) / (denom_k * fg);
            }
        }
        softmax_backprop(&self.probs, &dp, self.c, self.s, gz);
    }
}

/// Soft Dice loss: `1 - mean_k (2·Σ p_k g_k + smooth)/(Σ p_k + Σ g_k + smooth)`
/// over foreground classes, with `p` the per-position class softmax.
pub fn dice_loss(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[u8],
    smooth: f64,
) -> Result<TensorId, CoreError> {
    let (c, s) = check_logits_labels(tape, logits, labels)?;
    let probs = class_softmax(tape.data(logits), c, s);
    let mut dice = Vec::with_capacity(c - 1);
    let mut denom = Vec::with_capacity(c - 1);
    let mut total = 0.0;
    for k in 1..c {
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut gsum = 0.0;
        for pos in 0..s {
            let p = probs[k * s + pos];
            psum += p;
            if labels[pos] as usize == k {
                inter += p;
                gsum += 1.0;
            }
        }
        let den = psum + gsum + smooth;
        let d = (2.0 * inter + smooth) / den;
        dice.push(d);
        denom.push(den);
        total += d;
    }
    let value = 1.0 - total / (c - 1) as f64;
    Ok(tape.push_op(
        vec![1],
        vec![value],
        &[logits],
        Box::new(DiceLossBack {
            logits,
            labels: labels.to_vec(),
            probs,
            dice,
            denom,
            c,
            s,
        }),
    ))
}

struct CeLossBack {
    logits: TensorId,
    labels: Vec<u8>,
    probs: Vec<f64>,
    c: usize,
    s: usize,
}

impl BackwardOp for CeLossBack {
    fn backward(&self, _view: &TapeView<'_>, _out: TensorId, grad_out: &[f64], grads: &mut Grads<'_>) {
        let Some(gz) = grads.slot(self.logits) else {
            return;
        };
        let g = grad_out[0] / self.s as f64;
        for pos in 0..self.s {
            let truth = self.labels[pos] as usize;
            for k in 0..self.c {
                let i = k * self.s + pos;
                let onehot = if k == truth { 1.0 } else { 0.0 };
                gz[i] += g * (self.probs[i] - onehot);
            }
        }
    }
}

/// Mean cross entropy: `-log softmax(z)[truth]` averaged over positions,
/// computed via log-sum-exp.
pub fn ce_loss(tape: &mut Tape, logits: TensorId, labels: &[u8]) -> Result<TensorId, CoreError> {
    let (c, s) = check_logits_labels(tape, logits, labels)?;
    let z = tape.data(logits);
    let mut total = 0.0;
    for pos in 0..s {
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            m = m.max(z[k * s + pos]);
        }
        let mut sum = 0.0;
        for k in 0..c {
            sum += libm::exp(z[k * s + pos] - m);
        }
        let lse = m + libm::log(sum);
        total += lse - z[labels[pos] as usize * s + pos];
    }
    let value = total / s as f64;
    let probs = class_softmax(z, c, s);
    Ok(tape.push_op(
        vec![1],
        vec![value],
        &[logits],
        Box::new(CeLossBack {
            logits,
            labels: labels.to_vec(),
            probs,
            c,
            s,
        }),
    ))
}

/// The training objective: Dice + cross entropy.
pub fn combined_loss(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[u8],
) -> Result<TensorId, CoreError> {
    let d = dice_loss(tape, logits, labels, DICE_SMOOTH)?;
    let ce = ce_loss(tape, logits, labels)?;
    Ok(tape.add(d, ce)?)
}

/// Overlap coefficient `2|a ∩ b| / (|a| + |b|)` between binary masks.
/// Two empty masks score 1.0 (an absent organ correctly not predicted).
pub fn dsc(m_p: &[bool], m_g: &[bool]) -> Result<f64, ShapeError> {
    if m_p.len() != m_g.len() {
        return Err(ShapeError(format!(
            "mask sizes differ: {} vs {}",
            m_p.len(),
            m_g.len()
        )));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in m_p.iter().zip(m_g.iter()) {
        inter += (a && b) as usize;
        total += a as usize + b as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Per-group network output, detached from the tape.
#[derive(Clone, Debug)]
pub struct SegmentationGroup {
    pub center: usize,
    pub c_cls: usize,
    pub h: usize,
    pub w: usize,
    pub n_a: usize,
    /// `[C_cls, H, W, N_A]` logits.
    pub logits: Vec<f64>,
}

impl SegmentationGroup {
    /// Argmax classes of the group's middle map (`[H, W]`, row-major).
    pub fn middle_argmax(&self) -> Vec<u8> {
        let s = self.h * self.w * self.n_a;
        let mid = self.n_a / 2;
        let mut out = Vec::with_capacity(self.h * self.w);
        for p in 0..self.h * self.w {
            let pos = p * self.n_a + mid;
            let mut best = 0usize;
            let mut best_v = self.logits[pos];
            for k in 1..self.c_cls {
                let v = self.logits[k * s + pos];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            out.push(best as u8);
        }
        out
    }
}

/// Assembled 3D prediction: one class per voxel, `[H, W, D]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionVolume {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub classes: Vec<u8>,
}

impl PredictionVolume {
    #[inline]
    pub fn at(&self, h: usize, w: usize, d: usize) -> u8 {
        self.classes[(h * self.w + w) * self.d + d]
    }

    pub fn into_label_volume(self, spacing: [f32; 3]) -> Result<LabelVolume, DataError> {
        LabelVolume::new(self.h, self.w, self.d, spacing, self.classes)
    }
}

/// Concatenates the middle maps of per-center groups into a 3D prediction.
/// Group `i` must be centered at depth `i`.
pub fn assemble(groups: &[SegmentationGroup]) -> Result<PredictionVolume, DataError> {
    if groups.is_empty() {
        return Err(DataError("cannot assemble an empty group list".into()));
    }
    let (h, w) = (groups[0].h, groups[0].w);
    let d = groups.len();
    let mut classes = vec![0u8; h * w * d];
    for (z, g) in groups.iter().enumerate() {
        if g.center != z {
            return Err(DataError(format!(
                "expected group centered at depth {z}, found center {}",
                g.center
            )));
        }
        if (g.h, g.w) != (h, w) {
            return Err(DataError(format!(
                "group {z} is {}x{}, expected {h}x{w}",
                g.h, g.w
            )));
        }
        let mid = g.middle_argmax();
        for y in 0..h {
            for x in 0..w {
                classes[(y * w + x) * d + z] = mid[y * w + x];
            }
        }
    }
    Ok(PredictionVolume { h, w, d, classes })
}

/// Runs the model over one slice group and detaches the logits.
pub fn infer_group(model: &AxialFusionUNet, group: &SliceGroup) -> Result<SegmentationGroup, CoreError> {
    let mut tape = Tape::new();
    let slices: Vec<TensorId> = group
        .slices
        .iter()
        .map(|s| tape.leaf(&[group.c, group.h, group.w], s.clone()))
        .collect();
    let (logits, _) = model.forward(&mut tape, &slices)?;
    Ok(SegmentationGroup {
        center: group.center,
        c_cls: model.config.c_cls,
        h: group.h,
        w: group.w,
        n_a: group.n_a(),
        logits: tape.data(logits).to_vec(),
    })
}

/// Full-scan inference: every center depth, assembled into one prediction.
pub fn predict_volume(model: &AxialFusionUNet, scan: &Volume) -> Result<PredictionVolume, CoreError> {
    let groups = iter_groups(scan, None, model.config.n_a, model.config.n_f)?
        .map(|g| infer_group(model, &g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&groups)?)
}

/// Per-class overlap between a prediction and ground truth. Entry `k-1`
/// holds class `k`'s score; background is not scored.
pub fn score_prediction(
    pred: &PredictionVolume,
    labels: &LabelVolume,
    c_cls: usize,
) -> Result<Vec<f64>, CoreError> {
    if (pred.h, pred.w, pred.d) != (labels.h, labels.w, labels.d) {
        return Err(ShapeError(format!(
            "prediction {}x{}x{} vs labels {}x{}x{}",
            pred.h, pred.w, pred.d, labels.h, labels.w, labels.d
        ))
        .into());
    }
    let mut scores = Vec::with_capacity(c_cls - 1);
    for k in 1..c_cls {
        let mp: Vec<bool> = pred.classes.iter().map(|&c| c as usize == k).collect();
        let mg: Vec<bool> = labels.voxels.iter().map(|&c| c as usize == k).collect();
        scores.push(dsc(&mp, &mg)?);
    }
    Ok(scores)
}

/// Evaluation summary: per-foreground-class DSC (averaged over scans) and
/// their mean.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Entry `k-1` is class `k`'s DSC.
    pub per_class: Vec<f64>,
    pub mean: f64,
    pub n_scans: usize,
}

impl EvalReport {
    pub fn from_scan_scores(scores: &[Vec<f64>]) -> Result<Self, DataError> {
        if scores.is_empty() {
            return Err(DataError("cannot evaluate an empty dataset".into()));
        }
        let n_classes = scores[0].len();
        let mut per_class = vec![0.0; n_classes];
        for s in scores {
            assert_eq!(s.len(), n_classes, "ragged score rows");
            for (acc, v) in per_class.iter_mut().zip(s.iter()) {
                *acc += v;
            }
        }
        for v in &mut per_class {
            *v /= scores.len() as f64;
        }
        let mean = per_class.iter().sum::<f64>() / n_classes as f64;
        Ok(Self {
            per_class,
            mean,
            n_scans: scores.len(),
        })
    }

    /// Human-readable table: one row per foreground class plus the mean.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("class      DSC\n");
        out.push_str("-------  -----\n");
        for (i, v) in self.per_class.iter().enumerate() {
            out.push_str(&format!("organ_{:<2} {:6.2}\n", i + 1, v));
        }
        out.push_str(&format!("mean     {:6.2}\n", self.mean));
        out
    }

    /// Machine-readable key=value lines.
    pub fn metrics(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.per_class.iter().enumerate() {
            out.push_str(&format!("dsc_class_{}={v}\n", i + 1));
        }
        out.push_str(&format!("dsc_mean={}\n", self.mean));
        out.push_str(&format!("n_scans={}\n", self.n_scans));
        out
    }
}

/// Runs full inference on every scan and scores it against its labels.
pub fn evaluate(
    model: &AxialFusionUNet,
    dataset: &[(Volume, LabelVolume)],
) -> Result<EvalReport, CoreError> {
    if dataset.is_empty() {
        return Err(DataError("cannot evaluate an empty dataset".into()).into());
    }
    let mut scores = Vec::with_capacity(dataset.len());
    for (scan, labels) in dataset {
        let pred = predict_volume(model, scan)?;
        scores.push(score_prediction(&pred, labels, model.config.c_cls)?);
    }
    Ok(EvalReport::from_scan_scores(&scores)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, GradCheckParam};
    use rand::Rng;

    fn random_case(c: usize, h: usize, w: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut r = crate::rng::stream(seed, 0);
        let logits = (0..c * h * w * n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let labels = (0..h * w * n).map(|_| r.gen_range(0..c) as u8).collect();
        (logits, labels)
    }

    #[test]
    fn dice_of_saturated_prediction_vanishes() {
        let labels: Vec<u8> = vec![0, 1, 1, 0, 1, 0, 0, 1];
        // [2, 2, 2, 2] logits hugely in favor of the true class.
        let mut logits = vec![0.0; 16];
        for (pos, &l) in labels.iter().enumerate() {
            logits[l as usize * 8 + pos] = 30.0;
        }
        let mut tape = Tape::new();
        let z = tape.leaf(&[2, 2, 2, 2], logits);
        let loss = dice_loss(&mut tape, z, &labels, DICE_SMOOTH).unwrap();
        assert!(tape.data(loss)[0].abs() < 1e-6);
    }

    #[test]
    fn dice_of_uniform_prediction_is_bounded() {
        let (_, labels) = random_case(3, 4, 4, 2, 1);
        let mut tape = Tape::new();
        let z = tape.leaf(&[3, 4, 4, 2], vec![0.25; 3 * 32]);
        let loss = dice_loss(&mut tape, z, &labels, DICE_SMOOTH).unwrap();
        let v = tape.data(loss)[0];
        assert!(v > 0.0 && v < 1.0, "loss {v}");
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let (logits, labels) = random_case(2, 4, 4, 1, 2);
        let p = GradCheckParam::new("logits", &[2, 4, 4, 1], &logits);
        let err = grad_check(
            move |tape, ids| dice_loss(tape, ids[0], &labels, DICE_SMOOTH).unwrap(),
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn ce_of_uniform_logits_is_log_classes() {
        let mut tape = Tape::new();
        let z = tape.leaf(&[4, 2, 2, 1], vec![0.7; 16]);
        let loss = ce_loss(&mut tape, z, &[0, 1, 2, 3]).unwrap();
        assert!((tape.data(loss)[0] - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn ce_of_saturated_prediction_vanishes() {
        let labels = vec![1u8, 0, 1, 1];
        let mut logits = vec![0.0; 8];
        for (pos, &l) in labels.iter().enumerate() {
            logits[l as usize * 4 + pos] = 40.0;
        }
        let mut tape = Tape::new();
        let z = tape.leaf(&[2, 2, 2, 1], logits);
        let loss = ce_loss(&mut tape, z, &labels).unwrap();
        assert!(tape.data(loss)[0] < 1e-12);
    }

    #[test]
    fn ce_matches_direct_per_position_oracle() {
        let (logits, labels) = random_case(3, 3, 3, 1, 3);
        let mut tape = Tape::new();
        let z = tape.leaf(&[3, 3, 3, 1], logits.clone());
        let loss = ce_loss(&mut tape, z, &labels).unwrap();

        let s = 9;
        let mut expect = 0.0;
        for pos in 0..s {
            let zs: Vec<f64> = (0..3).map(|k| logits[k * s + pos]).collect();
            let denom: f64 = zs.iter().map(|&v| libm::exp(v)).sum();
            let p = libm::exp(zs[labels[pos] as usize]) / denom;
            expect += -libm::log(p);
        }
        expect /= s as f64;
        assert!((tape.data(loss)[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let (logits, labels) = random_case(3, 3, 2, 2, 4);
        let p = GradCheckParam::new("logits", &[3, 3, 2, 2], &logits);
        let err = grad_check(
            move |tape, ids| ce_loss(tape, ids[0], &labels).unwrap(),
            &[p],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn combined_is_exactly_the_sum() {
        let (logits, labels) = random_case(3, 4, 3, 2, 5);
        let mut tape = Tape::new();
        let z = tape.leaf(&[3, 4, 3, 2], logits);
        let d = dice_loss(&mut tape, z, &labels, DICE_SMOOTH).unwrap();
        let ce = ce_loss(&mut tape, z, &labels).unwrap();
        let both = combined_loss(&mut tape, z, &labels).unwrap();
        assert_eq!(tape.data(both)[0], tape.data(d)[0] + tape.data(ce)[0]);
        assert!(tape.data(both)[0] >= 0.0);
    }

    #[test]
    fn combined_gradient_is_the_sum_of_component_gradients() {
        let (logits, labels) = random_case(2, 3, 3, 2, 6);

        let grad_of = |kind: u8| -> Vec<f64> {
            let mut tape = Tape::new();
            let z = tape.param(&[2, 3, 3, 2], logits.clone());
            let loss = match kind {
                0 => dice_loss(&mut tape, z, &labels, DICE_SMOOTH).unwrap(),
                1 => ce_loss(&mut tape, z, &labels).unwrap(),
                _ => combined_loss(&mut tape, z, &labels).unwrap(),
            };
            tape.backward(loss).unwrap();
            tape.grad(z).unwrap().to_vec()
        };

        let (gd, gc, gb) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gb.len() {
            assert!((gb[i] - (gd[i] + gc[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn dsc_basic_cases() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
        assert_eq!(dsc(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert!(dsc(&a, &[true; 5]).is_err());
    }

    #[test]
    fn dsc_half_overlap_case() {
        // |p| = |g| = 4, overlap 2 -> 2*2/8 = 0.5.
        let p = [true, true, true, true, false, false, false, false];
        let g = [false, false, true, true, true, true, false, false];
        assert_eq!(dsc(&p, &g).unwrap(), 0.5);
    }

    #[test]
    fn dsc_is_symmetric() {
        let mut r = crate::rng::stream(7, 0);
        let a: Vec<bool> = (0..64).map(|_| r.gen::<bool>()).collect();
        let b: Vec<bool> = (0..64).map(|_| r.gen::<bool>()).collect();
        assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
    }

    fn onehot_group(center: usize, class: u8, c_cls: usize, h: usize, w: usize, n: usize) -> SegmentationGroup {
        let mut logits = vec![0.0; c_cls * h * w * n];
        let s = h * w * n;
        for pos in 0..s {
            logits[class as usize * s + pos] = 5.0;
        }
        SegmentationGroup {
            center,
            c_cls,
            h,
            w,
            n_a: n,
            logits,
        }
    }

    #[test]
    fn assemble_concatenates_middle_maps() {
        let groups: Vec<_> = (0..3).map(|d| onehot_group(d, 2, 3, 2, 2, 4)).collect();
        let pred = assemble(&groups).unwrap();
        assert_eq!((pred.h, pred.w, pred.d), (2, 2, 3));
        assert!(pred.classes.iter().all(|&c| c == 2));
    }

    #[test]
    fn assemble_matches_independent_argmax() {
        let mut r = crate::rng::stream(8, 0);
        let (c, h, w, n) = (3usize, 3usize, 4usize, 2usize);
        let groups: Vec<SegmentationGroup> = (0..5)
            .map(|d| SegmentationGroup {
                center: d,
                c_cls: c,
                h,
                w,
                n_a: n,
                logits: (0..c * h * w * n).map(|_| r.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let pred = assemble(&groups).unwrap();
        let s = h * w * n;
        let mid = n / 2;
        for (z, g) in groups.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let pos = (y * w + x) * n + mid;
                    let mut best = 0usize;
                    for k in 1..c {
                        if g.logits[k * s + pos] > g.logits[best * s + pos] {
                            best = k;
                        }
                    }
                    assert_eq!(pred.at(y, x, z), best as u8);
                }
            }
        }
    }

    #[test]
    fn assemble_rejects_missing_center() {
        let groups = vec![onehot_group(0, 1, 2, 2, 2, 2), onehot_group(2, 1, 2, 2, 2, 2)];
        assert!(assemble(&groups).is_err());
        assert!(assemble(&[]).is_err());
    }

    #[test]
    fn ground_truth_oracle_scores_one() {
        let (_, labels) = crate::synth::synth_dataset(1, (16, 16, 8), 3, 50)
            .unwrap()
            .pop()
            .unwrap();
        let pred = PredictionVolume {
            h: labels.h,
            w: labels.w,
            d: labels.d,
            classes: labels.voxels.clone(),
        };
        let scores = score_prediction(&pred, &labels, 3).unwrap();
        assert_eq!(scores, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_background_scores_zero_on_nonempty_labels() {
        let (_, labels) = crate::synth::synth_dataset(1, (16, 16, 8), 3, 51)
            .unwrap()
            .pop()
            .unwrap();
        let pred = PredictionVolume {
            h: labels.h,
            w: labels.w,
            d: labels.d,
            classes: vec![0; labels.voxels.len()],
        };
        let scores = score_prediction(&pred, &labels, 3).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn report_mean_is_arithmetic_mean() {
        let report = EvalReport::from_scan_scores(&[vec![0.8, 0.6], vec![0.9, 0.7]]).unwrap();
        assert!((report.per_class[0] - 0.85).abs() < 1e-12);
        assert!((report.per_class[1] - 0.65).abs() < 1e-12);
        assert!((report.mean - 0.75).abs() < 1e-12);
        assert_eq!(report.n_scans, 2);
        let table = report.table();
        assert!(table.contains("organ_1"));
        assert!(table.contains("0.85"));
        assert!(table.contains("mean"));
        let metrics = report.metrics();
        assert!(metrics.contains("dsc_mean=0.75"));
        assert!(metrics.contains("n_scans=2"));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(EvalReport::from_scan_scores(&[]).is_err());
    }

    #[test]
    fn label_stacking_interleaves_slices() {
        let s0 = vec![1u8, 2, 3, 4];
        let s1 = vec![5u8, 6, 7, 8];
        let flat = stack_group_labels(&[s0, s1], 2, 2);
        assert_eq!(flat, vec![1, 5, 2, 6, 3, 7, 4, 8]);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut tape = Tape::new();
        let z = tape.leaf(&[2, 2, 2, 1], vec![0.0; 8]);
        assert!(dice_loss(&mut tape, z, &[0, 1, 2, 0], DICE_SMOOTH).is_err());
        assert!(ce_loss(&mut tape, z, &[0, 3, 0, 0]).is_err());
    }
}
