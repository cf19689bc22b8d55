//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order; `backward` walks it once in reverse.

use super::kernels::{self, AttentionStep, GruStep};
use super::tensor::{gemm, matmul, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Sum(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    Gru {
        xp: Var,
        h: Var,
        u: Var,
        mask: Option<Vec<f64>>,
        cache: GruStep,
    },
    Attention {
        q: Var,
        keys: Var,
        values: Var,
        v: Var,
        steps: usize,
        n_src: usize,
        rows: Vec<usize>,
        lengths: Vec<usize>,
        cache: AttentionStep,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Computation tape over a borrowed parameter list.
pub struct Tape<'p> {
    params: &'p [Tensor],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    /// Leaf for parameter `i`; repeated calls return the same node.
    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.param_vars[i] {
            return v;
        }
        let v = self.push(Op::Param(i), Tensor::zeros(&[0]));
        self.param_vars[i] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    /// Adds a bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        let c = av.cols();
        assert_eq!(bv.len(), c, "add_bias: bias width differs");
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.push(Op::AddBias(a, bias), out)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.len(), bv.len(), "elementwise op on different sizes");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same length")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect()).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, kernels::sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// Elementwise product with a constant, e.g. an inverted-dropout mask.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), c.len(), "mul_const: sizes differ");
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same length");
        self.push(Op::MulConst(a, c), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let t = self.value(table);
        let e = t.cols();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in &ids {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), e, out);
        self.push(Op::Gather(table, ids), out)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row counts differ");
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(pv.row(r));
            }
            off += w;
        }
        self.push(Op::ConcatCols(parts), Tensor::matrix(rows, total, out))
    }

    pub fn stack_rows(&mut self, parts: Vec<Var>) -> Var {
        let c = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in &parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), c, "stack_rows: widths differ");
            out.extend_from_slice(pv.data());
        }
        let rows = out.len() / c.max(1);
        self.push(Op::StackRows(parts), Tensor::matrix(rows, c, out))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let out = Tensor::matrix(count, c, av.data()[start * c..(start + count) * c].to_vec());
        self.push(Op::SliceRows(a, start), out)
    }

    /// GRU step; see [`kernels::gru_step`]. `mask` (one entry per row) freezes padded rows.
    pub fn gru(&mut self, xp: Var, h: Var, u: Var, mask: Option<Vec<f64>>) -> Var {
        let n = self.value(h).rows();
        let cache = kernels::gru_step(
            self.value(xp).data(),
            self.value(h).data(),
            self.value(u),
            n,
            mask.as_deref(),
        );
        let hid = self.value(h).cols();
        let out = Tensor::matrix(n, hid, cache.h_new.clone());
        self.push(Op::Gru { xp, h, u, mask, cache }, out)
    }

    /// Additive attention; see [`kernels::attention`].
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        keys: Var,
        values: Var,
        v: Var,
        steps: usize,
        n_src: usize,
        rows: Vec<usize>,
        lengths: Vec<usize>,
    ) -> Var {
        let cache = kernels::attention(
            self.value(q).data(),
            self.value(keys).data(),
            self.value(values).data(),
            self.value(v).data(),
            steps,
            n_src,
            &rows,
            &lengths,
        );
        let d = self.value(values).cols();
        let out = Tensor::matrix(rows.len(), d, cache.context.clone());
        self.push(
            Op::Attention {
                q,
                keys,
                values,
                v,
                steps,
                n_src,
                rows,
                lengths,
                cache,
            },
            out,
        )
    }

    /// Σ_r weights[r] · (−log softmax(logits[r])[targets[r]]), a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let lv = self.value(logits);
        let c = lv.cols();
        assert_eq!(lv.rows(), targets.len(), "cross_entropy: one target per row");
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        let mut logp = vec![0.0; c];
        for (r, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = lv.row(r);
            kernels::log_softmax_into(row, &mut logp);
            loss -= w * logp[t];
            for (p, &lp) in probs[r * c..(r + 1) * c].iter_mut().zip(&logp) {
                *p = lp.exp();
            }
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            },
            Tensor::scalar(loss),
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter
    /// (zeros for parameters the loss does not touch).
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.param_vars[i]
                    .and_then(|v| grads[v.0].take())
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                gemm(gd, false, bv.data(), true, buf(grads, a, av).data_mut(), m, n, k, true);
                gemm(av.data(), true, gd, false, buf(grads, b, bv).data_mut(), k, m, n, true);
            }
            &Op::AddBias(a, bias) => {
                acc(buf(grads, a, self.value(a)), gd, 1.0);
                let bv = self.value(bias);
                let c = bv.len();
                let gb = buf(grads, bias, bv).data_mut();
                for row in gd.chunks(c) {
                    for (x, y) in gb.iter_mut().zip(row) {
                        *x += y;
                    }
                }
            }
            &Op::Add(a, b) => {
                acc(buf(grads, a, self.value(a)), gd, 1.0);
                acc(buf(grads, b, self.value(b)), gd, 1.0);
            }
            &Op::Sub(a, b) => {
                acc(buf(grads, a, self.value(a)), gd, 1.0);
                acc(buf(grads, b, self.value(b)), gd, -1.0);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                zip_acc(buf(grads, a, av), gd, bv.data());
                zip_acc(buf(grads, b, bv), gd, av.data());
            }
            &Op::Tanh(a) => {
                let y = self.nodes[idx].value.data();
                let ga = buf(grads, a, self.value(a)).data_mut();
                for i in 0..ga.len() {
                    ga[i] += gd[i] * (1.0 - y[i] * y[i]);
                }
            }
            &Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                let ga = buf(grads, a, self.value(a)).data_mut();
                for i in 0..ga.len() {
                    ga[i] += gd[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::MulConst(a, c) => zip_acc(buf(grads, *a, self.value(*a)), gd, c.data()),
            &Op::Scale(a, s) => acc(buf(grads, a, self.value(a)), gd, s),
            &Op::Sum(a) => {
                let ga = buf(grads, a, self.value(a)).data_mut();
                for x in ga.iter_mut() {
                    *x += gd[0];
                }
            }
            Op::Gather(table, ids) => {
                let tv = self.value(*table);
                let e = tv.cols();
                let gt = buf(grads, *table, tv).data_mut();
                for (r, &i) in ids.iter().enumerate() {
                    for (x, y) in gt[i * e..(i + 1) * e].iter_mut().zip(&gd[r * e..(r + 1) * e]) {
                        *x += y;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let gp = buf(grads, p, pv).data_mut();
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += gd[r * total + off + c];
                        }
                    }
                    off += w;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    acc(buf(grads, p, pv), &gd[off..off + len], 1.0);
                    off += len;
                }
            }
            &Op::SliceRows(a, start) => {
                let av = self.value(a);
                let c = av.cols();
                let ga = buf(grads, a, av).data_mut();
                for (x, y) in ga[start * c..start * c + gd.len()].iter_mut().zip(gd) {
                    *x += y;
                }
            }
            Op::Gru { xp, h, u, mask, cache } => self.backprop_gru(*xp, *h, *u, mask.as_deref(), cache, gd, grads),
            Op::Attention {
                q,
                keys,
                values,
                v,
                steps,
                n_src,
                rows,
                lengths,
                cache,
            } => self.backprop_attention(
                [*q, *keys, *values, *v],
                *steps,
                *n_src,
                rows,
                lengths,
                cache,
                gd,
                grads,
            ),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let gl = buf(grads, *logits, lv).data_mut();
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let s = gd[0] * w;
                    let row = &mut gl[r * c..(r + 1) * c];
                    for (x, p) in row.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                        *x += s * p;
                    }
                    row[t] -= s;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_gru(
        &self,
        xp: Var,
        h: Var,
        u: Var,
        mask: Option<&[f64]>,
        c: &GruStep,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let hv = self.value(h);
        let uv = self.value(u);
        let n = hv.rows();
        let hid = hv.cols();
        let h3 = 3 * hid;
        let hd = hv.data();
        // gradient w.r.t. the pre-activations, laid out like hu: (r, z, cand)
        let mut dpre = vec![0.0; n * h3];
        let mut dh = vec![0.0; n * hid];
        let mut dxp = vec![0.0; n * h3];
        for i in 0..n {
            let m = mask.map_or(1.0, |m| m[i]);
            for j in 0..hid {
                let idx = i * hid + j;
                let g_upd = m * gd[idx];
                dh[idx] += (1.0 - m) * gd[idx];
                let (r, z, cc) = (c.r[idx], c.z[idx], c.cand[idx]);
                let hu_c = c.hu[i * h3 + 2 * hid + j];
                let dc = g_upd * (1.0 - z);
                let dz = g_upd * (hd[idx] - cc);
                dh[idx] += g_upd * z;
                let da_c = dc * (1.0 - cc * cc);
                let dr = da_c * hu_c;
                let da_r = dr * r * (1.0 - r);
                let da_z = dz * z * (1.0 - z);
                let base = i * h3;
                dxp[base + j] = da_r;
                dxp[base + hid + j] = da_z;
                dxp[base + 2 * hid + j] = da_c;
                dpre[base + j] = da_r;
                dpre[base + hid + j] = da_z;
                dpre[base + 2 * hid + j] = da_c * r;
            }
        }
        // dh += dpre · Uᵀ ; dU += hᵀ · dpre
        gemm(&dpre, false, uv.data(), true, &mut dh, n, h3, hid, true);
        gemm(hd, true, &dpre, false, buf(grads, u, uv).data_mut(), hid, n, h3, true);
        acc(buf(grads, h, hv), &dh, 1.0);
        acc(buf(grads, xp, self.value(xp)), &dxp, 1.0);
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        [q, keys, values, v]: [Var; 4],
        steps: usize,
        n_src: usize,
        rows: &[usize],
        lengths: &[usize],
        c: &AttentionStep,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let vv = self.value(v).data().to_vec();
        let a = vv.len();
        let valv = self.value(values);
        let d = valv.cols();
        let vals = valv.data();
        let mut dq = vec![0.0; rows.len() * a];
        let mut dkeys = vec![0.0; self.value(keys).len()];
        let mut dvalues = vec![0.0; vals.len()];
        let mut dv = vec![0.0; a];
        let mut dalpha = vec![0.0; steps];
        for (i, &src) in rows.iter().enumerate() {
            let len = lengths[src];
            let gc = &gd[i * d..(i + 1) * d];
            let al = &c.alpha[i * steps..i * steps + len];
            let mut dot = 0.0;
            for j in 0..len {
                let r = j * n_src + src;
                let vj = &vals[r * d..(r + 1) * d];
                let mut s = 0.0;
                for k in 0..d {
                    s += gc[k] * vj[k];
                    dvalues[r * d + k] += al[j] * gc[k];
                }
                dalpha[j] = s;
                dot += al[j] * s;
            }
            for j in 0..len {
                let de = al[j] * (dalpha[j] - dot);
                let r = j * n_src + src;
                let act = &c.act[(i * steps + j) * a..(i * steps + j + 1) * a];
                for t in 0..a {
                    dv[t] += de * act[t];
                    let dpre = de * vv[t] * (1.0 - act[t] * act[t]);
                    dq[i * a + t] += dpre;
                    dkeys[r * a + t] += dpre;
                }
            }
        }
        acc(buf(grads, q, self.value(q)), &dq, 1.0);
        acc(buf(grads, keys, self.value(keys)), &dkeys, 1.0);
        acc(buf(grads, values, valv), &dvalues, 1.0);
        acc(buf(grads, v, self.value(v)), &dv, 1.0);
    }
}

fn buf<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn acc(dst: &mut Tensor, src: &[f64], s: f64) {
    for (x, y) in dst.data_mut().iter_mut().zip(src) {
        *x += s * y;
    }
}

fn zip_acc(dst: &mut Tensor, g: &[f64], other: &[f64]) {
    for ((x, a), b) in dst.data_mut().iter_mut().zip(g).zip(other) {
        *x += a * b;
    }
}
