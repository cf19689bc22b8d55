//! Forward kernels shared by the tape and by tape-free inference, so both
//! paths produce bit-identical numbers for the same inputs.

use super::tensor::{gemm, Tensor};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Log-softmax of one row.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Cached activations of one GRU step over a batch of `n` rows.
#[derive(Clone, Debug)]
pub(crate) struct GruStep {
    pub h_new: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub cand: Vec<f64>,
    /// `h · U`, columns ordered (reset, update, candidate).
    pub hu: Vec<f64>,
}

/// One GRU step: `xp` is the input projection `x·W + b` (`n × 3H`), `h` the
/// previous state (`n × H`), `u` the recurrent weights (`H × 3H`).
///
/// r = σ(xp_r + hu_r), z = σ(xp_z + hu_z), c = tanh(xp_c + r ⊙ hu_c),
/// h' = (1 − z) ⊙ c + z ⊙ h. Rows whose `mask` entry is 0 keep `h` unchanged.
pub(crate) fn gru_step(xp: &[f64], h: &[f64], u: &Tensor, n: usize, mask: Option<&[f64]>) -> GruStep {
    let hid = u.shape()[0];
    let h3 = 3 * hid;
    debug_assert_eq!(xp.len(), n * h3);
    debug_assert_eq!(h.len(), n * hid);
    let mut hu = vec![0.0; n * h3];
    gemm(h, false, u.data(), false, &mut hu, n, hid, h3, false);
    let mut r = vec![0.0; n * hid];
    let mut z = vec![0.0; n * hid];
    let mut cand = vec![0.0; n * hid];
    let mut h_new = vec![0.0; n * hid];
    for i in 0..n {
        let xr = &xp[i * h3..(i + 1) * h3];
        let hr = &hu[i * h3..(i + 1) * h3];
        let m = mask.map_or(1.0, |m| m[i]);
        for j in 0..hid {
            let idx = i * hid + j;
            let rr = sigmoid(xr[j] + hr[j]);
            let zz = sigmoid(xr[hid + j] + hr[hid + j]);
            let cc = (xr[2 * hid + j] + rr * hr[2 * hid + j]).tanh();
            r[idx] = rr;
            z[idx] = zz;
            cand[idx] = cc;
            let upd = (1.0 - zz) * cc + zz * h[idx];
            h_new[idx] = if m == 1.0 {
                upd
            } else if m == 0.0 {
                h[idx]
            } else {
                m * upd + (1.0 - m) * h[idx]
            };
        }
    }
    GruStep { h_new, r, z, cand, hu }
}

/// Cached activations of additive attention over a batch of `m` queries.
#[derive(Clone, Debug)]
pub(crate) struct AttentionStep {
    pub context: Vec<f64>,
    /// `m × T` weights; zero beyond each source length.
    pub alpha: Vec<f64>,
    /// `m × T × A` values of tanh(q + k).
    pub act: Vec<f64>,
}

/// Additive attention. `keys` is time-major `[T·n_src, A]`, `values`
/// time-major `[T·n_src, D]`; query row `i` attends over source row
/// `rows[i]`, whose first `lengths[rows[i]]` positions are valid.
///
/// e_ij = v · tanh(q_i + k_j), α_i = softmax over valid j, c_i = Σ_j α_ij v_j.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    v: &[f64],
    steps: usize,
    n_src: usize,
    rows: &[usize],
    lengths: &[usize],
) -> AttentionStep {
    let m = rows.len();
    let a = v.len();
    let d = values.len() / (steps * n_src).max(1);
    let mut alpha = vec![0.0; m * steps];
    let mut act = vec![0.0; m * steps * a];
    let mut context = vec![0.0; m * d];
    let mut scores = vec![0.0; steps];
    for i in 0..m {
        let src = rows[i];
        let len = lengths[src];
        let qi = &q[i * a..(i + 1) * a];
        for j in 0..len {
            let kj = &keys[(j * n_src + src) * a..(j * n_src + src + 1) * a];
            let out = &mut act[(i * steps + j) * a..(i * steps + j + 1) * a];
            let mut e = 0.0;
            for t in 0..a {
                let x = (qi[t] + kj[t]).tanh();
                out[t] = x;
                e += v[t] * x;
            }
            scores[j] = e;
        }
        let al = &mut alpha[i * steps..i * steps + len];
        softmax_into(&scores[..len], al);
        let ci = &mut context[i * d..(i + 1) * d];
        for (j, &w) in al.iter().enumerate() {
            let vj = &values[(j * n_src + src) * d..(j * n_src + src + 1) * d];
            for (c, &x) in ci.iter_mut().zip(vj) {
                *c += w * x;
            }
        }
    }
    AttentionStep { context, alpha, act }
}
