//! Scaled dot-product attention over slice-group token grids, in three
//! flavors: intra-slice (keys limited to the query's own slice), inter-slice
//! (keys limited to the query's own spatial position, across slices), and
//! full 3D attention over every token, kept as a brute-force oracle.
//!
//! All three take per-head tensors laid out `[C_h, H, W, N]` — channel
//! outermost, slice axis innermost — and are written as separate loop nests
//! on purpose: the degenerate-case equivalences (intra == full at N = 1,
//! inter == full at H = W = 1) are verified between genuinely independent
//! implementations, not between two views of one kernel.
//!
//! Every kernel counts its work in an [`AttnCounters`]: one `comparisons`
//! tick per query/key dot product and one `map_elements` tick per stored
//! softmax weight. Per query that is `H*W + N` for the factorized pair of
//! passes versus `H*W*N` for the full oracle, which is the whole point of
//! the factorization.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::ShapeError;
use crate::tensor::{Grads, Tape, TapeView, TensorId};

/// Work counters accumulated by attention kernels.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AttnCounters {
    /// Query/key dot products computed (one per attended key).
    pub comparisons: u64,
    /// Attention-map entries materialized (softmax row lengths, summed).
    pub map_elements: u64,
}

impl AttnCounters {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

impl core::ops::AddAssign for AttnCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.comparisons += rhs.comparisons;
        self.map_elements += rhs.map_elements;
    }
}

fn check_qkv(t: &Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<[usize; 4], ShapeError> {
    let s = t.shape(q);
    if s.len() != 4 {
        return Err(ShapeError(format!(
            "attention tensors must be [C_h, H, W, N], got {s:?}"
        )));
    }
    if t.shape(k) != s || t.shape(v) != s {
        return Err(ShapeError(format!(
            "attention q/k/v shapes must match, got {:?} / {:?} / {:?}",
            s,
            t.shape(k),
            t.shape(v)
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Reorders `[C, S]` channel-major data into `[S, C]` token-major scratch so
/// the per-token dot products run over contiguous memory.
fn token_major(src: &[f64], ch: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for c in 0..ch {
        for j in 0..s {
            out[j * ch + c] = src[c * s + j];
        }
    }
    out
}

fn channel_major(src: &[f64], ch: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for c in 0..ch {
        for j in 0..s {
            out[c * s + j] = src[j * ch + c];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

// ---------------------------------------------------------------------------
// Intra-slice: keys are the H*W positions of the query's own slice.
// ---------------------------------------------------------------------------

/// Returns `(output channel-major, softmax maps)`. Map rows are stored in
/// `(slice n, query position p)` order, each row `H*W` long.
pub(crate) fn intra_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    n: usize,
    scale: f64,
    counters: &mut AttnCounters,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let s = hw * n;
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let mut out_t = vec![0.0; s * ch];
    let mut maps = vec![0.0; s * hw];
    let mut row = vec![0.0; hw];
    for slice in 0..n {
        for pq in 0..hw {
            let tq = pq * n + slice;
            let qvec = &qt[tq * ch..(tq + 1) * ch];
            for (pk, r) in row.iter_mut().enumerate() {
                let tk = pk * n + slice;
                *r = scale * dot(qvec, &kt[tk * ch..(tk + 1) * ch]);
            }
            counters.comparisons += hw as u64;
            softmax_in_place(&mut row);
            counters.map_elements += hw as u64;
            maps[tq * hw..(tq + 1) * hw].copy_from_slice(&row);
            let ov = &mut out_t[tq * ch..(tq + 1) * ch];
            for (pk, &a) in row.iter().enumerate() {
                let tk = pk * n + slice;
                let vvec = &vt[tk * ch..(tk + 1) * ch];
                for c in 0..ch {
                    ov[c] += a * vvec[c];
                }
            }
        }
    }
    (channel_major(&out_t, ch, s), maps)
}

fn intra_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    maps: &[f64],
    grad_out: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    n: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let s = hw * n;
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let gt = token_major(grad_out, ch, s);
    let mut gq = vec![0.0; s * ch];
    let mut gk = vec![0.0; s * ch];
    let mut gv = vec![0.0; s * ch];
    let mut da = vec![0.0; hw];
    for slice in 0..n {
        for pq in 0..hw {
            let tq = pq * n + slice;
            let grow = &gt[tq * ch..(tq + 1) * ch];
            let arow = &maps[tq * hw..(tq + 1) * hw];
            // dV and dA
            for pk in 0..hw {
                let tk = pk * n + slice;
                let vvec = &vt[tk * ch..(tk + 1) * ch];
                da[pk] = dot(grow, vvec);
                let gvv = &mut gv[tk * ch..(tk + 1) * ch];
                let a = arow[pk];
                for c in 0..ch {
                    gvv[c] += a * grow[c];
                }
            }
            // softmax jacobian: ds = a * (da - <a, da>)
            let mix = dot(arow, &da);
            let qvec = &qt[tq * ch..(tq + 1) * ch];
            let gqv_acc: &mut [f64] = &mut gq[tq * ch..(tq + 1) * ch];
            for pk in 0..hw {
                let tk = pk * n + slice;
                let ds = arow[pk] * (da[pk] - mix) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kvec = &kt[tk * ch..(tk + 1) * ch];
                let gkv = &mut gk[tk * ch..(tk + 1) * ch];
                for c in 0..ch {
                    gqv_acc[c] += ds * kvec[c];
                    gkv[c] += ds * qvec[c];
                }
            }
        }
    }
    (
        channel_major(&gq, ch, s),
        channel_major(&gk, ch, s),
        channel_major(&gv, ch, s),
    )
}

// ---------------------------------------------------------------------------
// Inter-slice: keys are the N slices at the query's own (h, w).
// ---------------------------------------------------------------------------

/// Map rows are stored in `(position p, query slice n)` order, each row `N`
/// long. Tokens sharing a position are adjacent in memory (slice axis is
/// innermost), so this pass walks contiguous runs of N tokens.
pub(crate) fn inter_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    n: usize,
    scale: f64,
    counters: &mut AttnCounters,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let s = hw * n;
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let mut out_t = vec![0.0; s * ch];
    let mut maps = vec![0.0; s * n];
    let mut row = vec![0.0; n];
    for p in 0..hw {
        let run = p * n; // first token of this position's axial run
        for nq in 0..n {
            let tq = run + nq;
            let qvec = &qt[tq * ch..(tq + 1) * ch];
            for (nk, r) in row.iter_mut().enumerate() {
                let tk = run + nk;
                *r = scale * dot(qvec, &kt[tk * ch..(tk + 1) * ch]);
            }
            counters.comparisons += n as u64;
            softmax_in_place(&mut row);
            counters.map_elements += n as u64;
            maps[tq * n..(tq + 1) * n].copy_from_slice(&row);
            let ov = &mut out_t[tq * ch..(tq + 1) * ch];
            for (nk, &a) in row.iter().enumerate() {
                let vvec = &vt[(run + nk) * ch..(run + nk + 1) * ch];
                for c in 0..ch {
                    ov[c] += a * vvec[c];
                }
            }
        }
    }
    (channel_major(&out_t, ch, s), maps)
}

fn inter_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    maps: &[f64],
    grad_out: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    n: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let s = hw * n;
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let gt = token_major(grad_out, ch, s);
    let mut gq = vec![0.0; s * ch];
    let mut gk = vec![0.0; s * ch];
    let mut gv = vec![0.0; s * ch];
    let mut da = vec![0.0; n];
    for p in 0..hw {
        let run = p * n;
        for nq in 0..n {
            let tq = run + nq;
            let grow = &gt[tq * ch..(tq + 1) * ch];
            let arow = &maps[tq * n..(tq + 1) * n];
            for nk in 0..n {
                let tk = run + nk;
                da[nk] = dot(grow, &vt[tk * ch..(tk + 1) * ch]);
                let gvv = &mut gv[tk * ch..(tk + 1) * ch];
                let a = arow[nk];
                for c in 0..ch {
                    gvv[c] += a * grow[c];
                }
            }
            let mix = dot(arow, &da);
            let qvec = &qt[tq * ch..(tq + 1) * ch];
            let gqv: &mut [f64] = &mut gq[tq * ch..(tq + 1) * ch];
            for nk in 0..n {
                let tk = run + nk;
                let ds = arow[nk] * (da[nk] - mix) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kvec = &kt[tk * ch..(tk + 1) * ch];
                let gkv = &mut gk[tk * ch..(tk + 1) * ch];
                for c in 0..ch {
                    gqv[c] += ds * kvec[c];
                    gkv[c] += ds * qvec[c];
                }
            }
        }
    }
    (
        channel_major(&gq, ch, s),
        channel_major(&gk, ch, s),
        channel_major(&gv, ch, s),
    )
}

// ---------------------------------------------------------------------------
// Full 3D oracle: every token attends to every token. Deliberately written
// as the naive quadratic double loop straight off the defining formula.
// ---------------------------------------------------------------------------

/// Map rows in token order, each row `H*W*N` long. Quadratic in the token
/// count; intended for small grids and verification only.
pub(crate) fn full_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    n: usize,
    scale: f64,
    counters: &mut AttnCounters,
) -> (Vec<f64>, Vec<f64>) {
    let s = h * w * n;
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let mut out_t = vec![0.0; s * ch];
    let mut maps = vec![0.0; s * s];
    let mut row = vec![0.0; s];
    for tq in 0..s {
        let qvec = &qt[tq * ch..(tq + 1) * ch];
        for (tk, r) in row.iter_mut().enumerate() {
            *r = scale * dot(qvec, &kt[tk * ch..(tk + 1) * ch]);
        }
        counters.comparisons += s as u64;
        softmax_in_place(&mut row);
        counters.map_elements += s as u64;
        maps[tq * s..(tq + 1) * s].copy_from_slice(&row);
        let ov = &mut out_t[tq * ch..(tq + 1) * ch];
        for (tk, &a) in row.iter().enumerate() {
            let vvec = &vt[tk * ch..(tk + 1) * ch];
            for c in 0..ch {
                ov[c] += a * vvec[c];
            }
        }
    }
    (channel_major(&out_t, ch, s), maps)
}

fn full_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    maps: &[f64],
    grad_out: &[f64],
    ch: usize,
    s: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let qt = token_major(q, ch, s);
    let kt = token_major(k, ch, s);
    let vt = token_major(v, ch, s);
    let gt = token_major(grad_out, ch, s);
    let mut gq = vec![0.0; s * ch];
    let mut gk = vec![0.0; s * ch];
    let mut gv = vec![0.0; s * ch];
    let mut da = vec![0.0; s];
    for tq in 0..s {
        let grow = &gt[tq * ch..(tq + 1) * ch];
        let arow = &maps[tq * s..(tq + 1) * s];
        for tk in 0..s {
            da[tk] = dot(grow, &vt[tk * ch..(tk + 1) * ch]);
            let gvv = &mut gv[tk * ch..(tk + 1) * ch];
            let a = arow[tk];
            for c in 0..ch {
                gvv[c] += a * grow[c];
            }
        }
        let mix = dot(arow, &da);
        let qvec = &qt[tq * ch..(tq + 1) * ch];
        let gqv: &mut [f64] = &mut gq[tq * ch..(tq + 1) * ch];
        for tk in 0..s {
            let ds = arow[tk] * (da[tk] - mix) * scale;
            if ds == 0.0 {
                continue;
            }
            let kvec = &kt[tk * ch..(tk + 1) * ch];
            let gkv = &mut gk[tk * ch..(tk + 1) * ch];
            for c in 0..ch {
                gqv[c] += ds * kvec[c];
                gkv[c] += ds * qvec[c];
            }
        }
    }
    (
        channel_major(&gq, ch, s),
        channel_major(&gk, ch, s),
        channel_major(&gv, ch, s),
    )
}

// ---------------------------------------------------------------------------
// Tape integration
// ---------------------------------------------------------------------------

enum Kind {
    Intra,
    Inter,
    Full,
}

struct AttentionBack {
    q: TensorId,
    k: TensorId,
    v: TensorId,
    kind: Kind,
    dims: [usize; 4],
    scale: f64,
    maps: Vec<f64>,
}

impl crate::tensor::BackwardOp for AttentionBack {
    fn backward(&self, view: &TapeView<'_>, _o: TensorId, g: &[f64], grads: &mut Grads<'_>) {
        let [ch, h, w, n] = self.dims;
        let (qd, kd, vd) = (view.data(self.q), view.data(self.k), view.data(self.v));
        let (gq, gk, gv) = match self.kind {
            Kind::Intra => intra_backward(qd, kd, vd, &self.maps, g, ch, h, w, n, self.scale),
            Kind::Inter => inter_backward(qd, kd, vd, &self.maps, g, ch, h, w, n, self.scale),
            Kind::Full => full_backward(qd, kd, vd, &self.maps, g, ch, h * w * n, self.scale),
        };
        if let Some(slot) = grads.slot(self.q) {
            for (d, s) in slot.iter_mut().zip(&gq) {
                *d += s;
            }
        }
        if let Some(slot) = grads.slot(self.k) {
            for (d, s) in slot.iter_mut().zip(&gk) {
                *d += s;
            }
        }
        if let Some(slot) = grads.slot(self.v) {
            for (d, s) in slot.iter_mut().zip(&gv) {
                *d += s;
            }
        }
    }
}

impl Tape {
    /// Attention restricted to the query's own slice: softmax over the
    /// `H*W` positions of feature map `n`. `q`, `k`, `v`: `[C_h, H, W, N]`;
    /// logits are scaled by `1/sqrt(C_h)`.
    pub fn attention_intra(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
    ) -> Result<TensorId, ShapeError> {
        let dims = check_qkv(self, q, k, v)?;
        let [ch, h, w, n] = dims;
        let scale = 1.0 / sqrt(ch as f64);
        let mut counters = AttnCounters::default();
        let (data, maps) = intra_forward(
            self.data(q),
            self.data(k),
            self.data(v),
            ch,
            h,
            w,
            n,
            scale,
            &mut counters,
        );
        self.attn_counters += counters;
        Ok(self.push_op(
            dims.to_vec(),
            data,
            &[q, k, v],
            Box::new(AttentionBack {
                q,
                k,
                v,
                kind: Kind::Intra,
                dims,
                scale,
                maps,
            }),
        ))
    }

    /// Attention restricted to the query's own spatial position: softmax
    /// over the `N` slices of the group at `(h, w)`.
    pub fn attention_inter(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
    ) -> Result<TensorId, ShapeError> {
        let dims = check_qkv(self, q, k, v)?;
        let [ch, h, w, n] = dims;
        let scale = 1.0 / sqrt(ch as f64);
        let mut counters = AttnCounters::default();
        let (data, maps) = inter_forward(
            self.data(q),
            self.data(k),
            self.data(v),
            ch,
            h,
            w,
            n,
            scale,
            &mut counters,
        );
        self.attn_counters += counters;
        Ok(self.push_op(
            dims.to_vec(),
            data,
            &[q, k, v],
            Box::new(AttentionBack {
                q,
                k,
                v,
                kind: Kind::Inter,
                dims,
                scale,
                maps,
            }),
        ))
    }

    /// Unfactorized 3D attention over all `H*W*N` tokens. Verification
    /// oracle: quadratic cost, small grids only.
    pub fn attention_full3d(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
    ) -> Result<TensorId, ShapeError> {
        let dims = check_qkv(self, q, k, v)?;
        let [ch, h, w, n] = dims;
        let scale = 1.0 / sqrt(ch as f64);
        let mut counters = AttnCounters::default();
        let (data, maps) = full_forward(
            self.data(q),
            self.data(k),
            self.data(v),
            ch,
            h,
            w,
            n,
            scale,
            &mut counters,
        );
        self.attn_counters += counters;
        Ok(self.push_op(
            dims.to_vec(),
            data,
            &[q, k, v],
            Box::new(AttentionBack {
                q,
                k,
                v,
                kind: Kind::Full,
                dims,
                scale,
                maps,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::gradcheck::{grad_check, GradCheckParam};
    use rand::Rng;

    fn random_qkv(seed: u64, len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut r = rng::stream(seed, 0);
        let mut gen = |_| (0..len).map(|_| r.gen_range(-1.5..1.5)).collect::<Vec<f64>>();
        (gen(0), gen(1), gen(2))
    }

    #[test]
    fn uniform_weights_when_keys_equal() {
        // all keys identical -> every softmax row is uniform -> output is
        // the mean of the attended values
        let (ch, h, w, n) = (3, 2, 2, 2);
        let s = h * w * n;
        let (q, _, v) = random_qkv(7, ch * s);
        let k = vec![0.25; ch * s];
        let mut c = AttnCounters::default();
        let (out, maps) = full_forward(&q, &k, &v, ch, h, w, n, 0.5, &mut c);
        for m in &maps {
            assert!((m - 1.0 / s as f64).abs() < 1e-12);
        }
        for ci in 0..ch {
            let mean: f64 = v[ci * s..(ci + 1) * s].iter().sum::<f64>() / s as f64;
            for j in 0..s {
                assert!((out[ci * s + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominant_key_saturates_to_its_value() {
        let (ch, h, w, n) = (2, 2, 1, 2);
        let s = h * w * n;
        let mut q = vec![0.0; ch * s];
        let mut k = vec![0.0; ch * s];
        let (_, _, v) = random_qkv(11, ch * s);
        // token 3's key aligns hugely with every query
        for c in 0..ch {
            k[c * s + 3] = 50.0;
            for j in 0..s {
                q[c * s + j] = 1.0;
            }
        }
        let mut c = AttnCounters::default();
        let (out, _) = full_forward(&q, &k, &v, ch, h, w, n, 1.0, &mut c);
        for ci in 0..ch {
            for j in 0..s {
                assert!((out[ci * s + j] - v[ci * s + 3]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn intra_equals_full_for_single_slice() {
        for seed in 0..5 {
            let (ch, h, w, n) = (4, 3, 2, 1);
            let s = h * w * n;
            let (q, k, v) = random_qkv(100 + seed, ch * s);
            let mut c1 = AttnCounters::default();
            let mut c2 = AttnCounters::default();
            let scale = 1.0 / sqrt(ch as f64);
            let (a, _) = intra_forward(&q, &k, &v, ch, h, w, n, scale, &mut c1);
            let (b, _) = full_forward(&q, &k, &v, ch, h, w, n, scale, &mut c2);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn inter_equals_full_for_single_position() {
        for seed in 0..5 {
            let (ch, h, w, n) = (4, 1, 1, 6);
            let s = h * w * n;
            let (q, k, v) = random_qkv(200 + seed, ch * s);
            let mut c1 = AttnCounters::default();
            let mut c2 = AttnCounters::default();
            let scale = 1.0 / sqrt(ch as f64);
            let (a, _) = inter_forward(&q, &k, &v, ch, h, w, n, scale, &mut c1);
            let (b, _) = full_forward(&q, &k, &v, ch, h, w, n, scale, &mut c2);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn counters_match_per_query_costs() {
        let (ch, h, w, n) = (2, 4, 4, 8);
        let s = h * w * n;
        let (q, k, v) = random_qkv(42, ch * s);
        let mut ci = AttnCounters::default();
        let mut cx = AttnCounters::default();
        let mut cf = AttnCounters::default();
        intra_forward(&q, &k, &v, ch, h, w, n, 1.0, &mut ci);
        inter_forward(&q, &k, &v, ch, h, w, n, 1.0, &mut cx);
        full_forward(&q, &k, &v, ch, h, w, n, 1.0, &mut cf);
        assert_eq!(ci.comparisons, (s * h * w) as u64);
        assert_eq!(cx.comparisons, (s * n) as u64);
        assert_eq!(cf.comparisons, (s * s) as u64);
        // factorized pair costs (H*W + N) per query vs H*W*N for full
        assert_eq!(
            (ci.comparisons + cx.comparisons) / s as u64,
            (h * w + n) as u64
        );
        assert_eq!(cf.comparisons / s as u64, (h * w * n) as u64);
    }

    #[test]
    fn weights_are_normalized() {
        let (ch, h, w, n) = (3, 3, 2, 4);
        let s = h * w * n;
        let (q, k, v) = random_qkv(9, ch * s);
        let mut c = AttnCounters::default();
        let (_, maps) = intra_forward(&q, &k, &v, ch, h, w, n, 0.7, &mut c);
        for row in maps.chunks(h * w) {
            assert!(row.iter().all(|&a| a >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let (_, maps) = inter_forward(&q, &k, &v, ch, h, w, n, 0.7, &mut c);
        for row in maps.chunks(n) {
            assert!(row.iter().all(|&a| a >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn intra_is_equivariant_to_slice_permutation() {
        // swapping two slices of q/k/v swaps the corresponding outputs
        let (ch, h, w, n) = (2, 2, 2, 3);
        let s = h * w * n;
        let (q, k, v) = random_qkv(77, ch * s);
        let perm = [2usize, 0, 1];
        let apply = |src: &[f64]| {
            let mut out = vec![0.0; src.len()];
            for c in 0..ch {
                for p in 0..h * w {
                    for (dst_n, &src_n) in perm.iter().enumerate() {
                        out[c * s + p * n + dst_n] = src[c * s + p * n + src_n];
                    }
                }
            }
            out
        };
        let mut c = AttnCounters::default();
        let scale = 1.0 / sqrt(ch as f64);
        let (base, _) = intra_forward(&q, &k, &v, ch, h, w, n, scale, &mut c);
        let (qp, kp, vp) = (apply(&q), apply(&k), apply(&v));
        let (permuted, _) = intra_forward(&qp, &kp, &vp, ch, h, w, n, scale, &mut c);
        let expect = apply(&base);
        for (x, y) in permuted.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_ops_accumulate_counters() {
        let mut t = Tape::new();
        let (ch, h, w, n) = (2, 2, 2, 2);
        let s = h * w * n;
        let (qd, kd, vd) = random_qkv(5, ch * s);
        let q = t.leaf(&[ch, h, w, n], qd);
        let k = t.leaf(&[ch, h, w, n], kd);
        let v = t.leaf(&[ch, h, w, n], vd);
        t.attention_intra(q, k, v).unwrap();
        t.attention_inter(q, k, v).unwrap();
        assert_eq!(
            t.attn_counters.comparisons,
            (s * (h * w) + s * n) as u64
        );
        t.attn_counters.reset();
        t.attention_full3d(q, k, v).unwrap();
        assert_eq!(t.attn_counters.comparisons, (s * s) as u64);
    }

    #[test]
    fn intra_grads_match_finite_differences() {
        let (ch, h, w, n) = (2, 2, 2, 2);
        let len = ch * h * w * n;
        let (qd, kd, vd) = random_qkv(31, len);
        let shape = [ch, h, w, n];
        let pq = GradCheckParam::new("q", &shape, &qd);
        let pk = GradCheckParam::new("k", &shape, &kd);
        let pv = GradCheckParam::new("v", &shape, &vd);
        let err = grad_check(
            |t, ids| {
                let o = t.attention_intra(ids[0], ids[1], ids[2]).unwrap();
                let sq = t.mul(o, o).unwrap();
                t.sum_all(sq)
            },
            &[pq, pk, pv],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn inter_grads_match_finite_differences() {
        let (ch, h, w, n) = (2, 2, 1, 4);
        let len = ch * h * w * n;
        let (qd, kd, vd) = random_qkv(32, len);
        let shape = [ch, h, w, n];
        let pq = GradCheckParam::new("q", &shape, &qd);
        let pk = GradCheckParam::new("k", &shape, &kd);
        let pv = GradCheckParam::new("v", &shape, &vd);
        let err = grad_check(
            |t, ids| {
                let o = t.attention_inter(ids[0], ids[1], ids[2]).unwrap();
                let sq = t.mul(o, o).unwrap();
                t.sum_all(sq)
            },
            &[pq, pk, pv],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn full_grads_match_finite_differences() {
        let (ch, h, w, n) = (2, 2, 2, 2);
        let len = ch * h * w * n;
        let (qd, kd, vd) = random_qkv(33, len);
        let shape = [ch, h, w, n];
        let pq = GradCheckParam::new("q", &shape, &qd);
        let pk = GradCheckParam::new("k", &shape, &kd);
        let pv = GradCheckParam::new("v", &shape, &vd);
        let err = grad_check(
            |t, ids| {
                let o = t.attention_full3d(ids[0], ids[1], ids[2]).unwrap();
                let sq = t.mul(o, o).unwrap();
                t.sum_all(sq)
            },
            &[pq, pk, pv],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }
}
