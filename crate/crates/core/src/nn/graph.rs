//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every parameter that
//! took part. Parameters are read in place from the borrowed store.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, softmax_in_place, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub const NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

struct LstmCache {
    /// Per step: gate activations i, f, g, o concatenated (4h).
    gates: Tensor,
    cells: Tensor,
    tanh_cells: Tensor,
}

struct NormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm(Var, Var, Var, NormCache),
    BatchNorm(Var, Var, Var, NormCache, Tensor, Tensor),
    Gather(Var, Vec<u32>),
    Attention {
        qkv: Var,
        heads: usize,
        seq: usize,
        probs: Vec<Tensor>,
        masks: Option<Vec<Tensor>>,
    },
    NormEval(Var, Var, Var, NormCache),
    Lstm(Var, Var, usize, LstmCache),
    Rows(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    MaxRows(Var, Vec<usize>),
    MeanRows(Var, usize),
    Unfold(Var, usize, usize),
    CrossEntropy(Var, Vec<(usize, usize)>, Vec<Vec<f64>>),
    Mean(Vec<Var>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(x.rows(), y.cols());
        gemm(1.0, x, false, y, false, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(x.rows(), y.rows());
        gemm(1.0, x, false, y, true, 0.0, &mut out);
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), r.cols());
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), mask.shape());
        let data = x
            .data()
            .iter()
            .zip(mask.data())
            .map(|(p, q)| p * q)
            .collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Per-row normalization with learned gain and bias (`1 × c` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + NORM_EPS).sqrt();
            rstd.push(s);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        self.push(out, Op::LayerNorm(x, gain, bias, NormCache { xhat, rstd }))
    }

    /// Batch normalization over rows using the batch's own statistics.
    pub fn batch_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut mean = Tensor::zeros(1, cols);
        let mut var = Tensor::zeros(1, cols);
        for r in 0..rows {
            for (m, v) in mean.data_mut().iter_mut().zip(xv.row(r)) {
                *m += v / rows as f64;
            }
        }
        for r in 0..rows {
            for ((s, v), m) in var.data_mut().iter_mut().zip(xv.row(r)).zip(mean.data()) {
                *s += (v - m) * (v - m) / rows as f64;
            }
        }
        let rstd: Vec<f64> = var
            .data()
            .iter()
            .map(|v| 1.0 / (v + NORM_EPS).sqrt())
            .collect();
        let mut xhat = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                xhat.set(r, c, (xv.get(r, c) - mean.data()[c]) * rstd[c]);
            }
        }
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        self.push(
            out,
            Op::BatchNorm(x, gain, bias, NormCache { xhat, rstd }, mean, var),
        )
    }

    /// Batch mean and (biased) variance recorded by a batch-norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&Tensor, &Tensor)> {
        match &self.nodes[v.0].op {
            Op::BatchNorm(_, _, _, _, mean, var) => Some((mean, var)),
            _ => None,
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(out, Op::Gather(table, ids.to_vec()))
    }

    /// Multi-head scaled dot-product attention over a fused `T × 3d`
    /// query/key/value projection.
    pub fn attention(&mut self, qkv: Var, heads: usize, causal: bool) -> Var {
        let seq = self.value(qkv).rows();
        self.attention_with_dropout(qkv, heads, causal, seq, None)
    }

    /// Attention over stacked sequences of `seq` rows each, with optional
    /// dropout masks (already scaled by the keep probability) on the
    /// attention weights, indexed by `block * heads + head`.
    pub fn attention_with_dropout(
        &mut self,
        qkv: Var,
        heads: usize,
        causal: bool,
        seq: usize,
        masks: Option<Vec<Tensor>>,
    ) -> Var {
        let x = self.value(qkv);
        let rows = x.rows();
        assert!(seq > 0 && rows.is_multiple_of(seq), "rows must be a multiple of seq");
        let d = x.cols() / 3;
        assert_eq!(d * 3, x.cols());
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(rows, d);
        let mut probs = Vec::with_capacity(rows / seq * heads);
        for b in 0..rows / seq {
            let r0 = b * seq;
            for h in 0..heads {
                let q = block_cols(x, r0, seq, h * dh, dh);
                let k = block_cols(x, r0, seq, d + h * dh, dh);
                let v = block_cols(x, r0, seq, 2 * d + h * dh, dh);
                let mut s = Tensor::zeros(seq, seq);
                gemm(scale, &q, false, &k, true, 0.0, &mut s);
                for i in 0..seq {
                    let row = s.row_mut(i);
                    if causal {
                        for x in &mut row[i + 1..] {
                            *x = f64::NEG_INFINITY;
                        }
                    }
                    softmax_in_place(row);
                }
                let mut o = Tensor::zeros(seq, dh);
                match &masks {
                    Some(m) => {
                        let dropped = zip_map(&s, &m[b * heads + h], |p, k| p * k);
                        gemm(1.0, &dropped, false, &v, false, 0.0, &mut o);
                    }
                    None => gemm(1.0, &s, false, &v, false, 0.0, &mut o),
                }
                put_block_cols(&mut out, &o, r0, h * dh);
                probs.push(s);
            }
        }
        self.push(
            out,
            Op::Attention {
                qkv,
                heads,
                seq,
                probs,
                masks,
            },
        )
    }

    /// Normalization with fixed column statistics (batch norm at inference).
    pub fn norm_eval(&mut self, x: Var, mean: &Tensor, var: &Tensor, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let rstd: Vec<f64> = var
            .data()
            .iter()
            .map(|v| 1.0 / (v + NORM_EPS).sqrt())
            .collect();
        let mut xhat = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                xhat.set(r, c, (xv.get(r, c) - mean.data()[c]) * rstd[c]);
            }
        }
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        self.push(out, Op::NormEval(x, gain, bias, NormCache { xhat, rstd }))
    }

    /// Attention probabilities recorded by an attention node, one `T × T` per head.
    pub fn attention_probs(&self, v: Var) -> Option<&[Tensor]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// LSTM recurrence from zero state. `gx` holds the input projections
    /// (`T × 4h`, gate order i, f, g, o); `w_hh` is `h × 4h`.
    pub fn lstm(&mut self, gx: Var, w_hh: Var) -> Var {
        let seq = self.value(gx).rows();
        self.lstm_blocks(gx, w_hh, seq)
    }

    /// Independent LSTM recurrences over stacked sequences of `seq` rows.
    pub fn lstm_blocks(&mut self, gx: Var, w_hh: Var, seq: usize) -> Var {
        let (gxv, w) = (self.value(gx), self.value(w_hh));
        let rows = gxv.rows();
        let h = w.rows();
        assert_eq!(w.cols(), 4 * h);
        assert_eq!(gxv.cols(), 4 * h);
        assert!(seq > 0 && rows % seq == 0, "rows must be a multiple of seq");
        let nb = rows / seq;
        let mut out = Tensor::zeros(rows, h);
        let mut gates = Tensor::zeros(rows, 4 * h);
        let mut cells = Tensor::zeros(rows, h);
        let mut tanh_cells = Tensor::zeros(rows, h);
        let mut prev_h = Tensor::zeros(nb, h);
        let mut z = Tensor::zeros(nb, 4 * h);
        for t in 0..seq {
            for b in 0..nb {
                z.row_mut(b).copy_from_slice(gxv.row(b * seq + t));
            }
            if t > 0 {
                gemm(1.0, &prev_h, false, w, false, 1.0, &mut z);
            }
            for b in 0..nb {
                let r = b * seq + t;
                let zr = z.row(b);
                let g_row = gates.row_mut(r);
                for j in 0..h {
                    g_row[j] = sigmoid(zr[j]);
                    g_row[h + j] = sigmoid(zr[h + j]);
                    g_row[2 * h + j] = zr[2 * h + j].tanh();
                    g_row[3 * h + j] = sigmoid(zr[3 * h + j]);
                }
                for j in 0..h {
                    let c_prev = if t > 0 { cells.get(r - 1, j) } else { 0.0 };
                    let g_row = gates.row(r);
                    let c = g_row[h + j] * c_prev + g_row[j] * g_row[2 * h + j];
                    let tc = c.tanh();
                    cells.set(r, j, c);
                    tanh_cells.set(r, j, tc);
                    out.set(r, j, g_row[3 * h + j] * tc);
                }
                prev_h.row_mut(b).copy_from_slice(out.row(r));
            }
        }
        self.push(
            out,
            Op::Lstm(
                gx,
                w_hh,
                seq,
                LstmCache {
                    gates,
                    cells,
                    tanh_cells,
                },
            ),
        )
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::Rows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows);
            put_cols(&mut out, v, off);
            off += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols);
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::StackRows(parts.to_vec()),
        )
    }

    /// Column-wise maximum over rows (`1 × c`); ties go to the earliest row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let seq = self.value(a).rows();
        self.max_blocks(a, seq)
    }

    /// Column-wise maximum within each block of `seq` rows (`B × c`).
    pub fn max_blocks(&mut self, a: Var, seq: usize) -> Var {
        let x = self.value(a);
        assert!(
            seq > 0 && x.rows().is_multiple_of(seq),
            "rows must be a multiple of seq"
        );
        let nb = x.rows() / seq;
        let mut out = Tensor::zeros(nb, x.cols());
        let mut arg = vec![0usize; nb * x.cols()];
        for b in 0..nb {
            let r0 = b * seq;
            out.row_mut(b).copy_from_slice(x.row(r0));
            for r in r0..r0 + seq {
                for (c, &v) in x.row(r).iter().enumerate() {
                    if r == r0 {
                        arg[b * x.cols() + c] = r;
                    } else if v > out.get(b, c) {
                        out.set(b, c, v);
                        arg[b * x.cols() + c] = r;
                    }
                }
            }
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    /// Column-wise mean over rows (`1 × c`).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let seq = self.value(a).rows();
        self.mean_blocks(a, seq)
    }

    /// Column-wise mean within each block of `seq` rows (`B × c`).
    pub fn mean_blocks(&mut self, a: Var, seq: usize) -> Var {
        let x = self.value(a);
        assert!(
            seq > 0 && x.rows().is_multiple_of(seq),
            "rows must be a multiple of seq"
        );
        let nb = x.rows() / seq;
        let mut out = Tensor::zeros(nb, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.row_mut(r / seq).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale(1.0 / seq as f64);
        self.push(out, Op::MeanRows(a, seq))
    }

    /// Sliding windows of `k` consecutive rows flattened into one row each:
    /// `T × d` becomes `(T - k + 1) × (k·d)`.
    pub fn unfold(&mut self, a: Var, k: usize) -> Var {
        let seq = self.value(a).rows();
        self.unfold_blocks(a, k, seq)
    }

    /// [`Graph::unfold`] applied to each block of `seq` rows; windows never
    /// straddle two blocks.
    pub fn unfold_blocks(&mut self, a: Var, k: usize, seq: usize) -> Var {
        let x = self.value(a);
        assert!(seq >= k, "unfold needs at least {k} rows");
        assert!(x.rows().is_multiple_of(seq), "rows must be a multiple of seq");
        let nb = x.rows() / seq;
        let n = seq - k + 1;
        let d = x.cols();
        let mut out = Tensor::zeros(nb * n, k * d);
        for b in 0..nb {
            for t in 0..n {
                let src = (b * seq + t) * d;
                out.row_mut(b * n + t)
                    .copy_from_slice(&x.data()[src..src + k * d]);
            }
        }
        self.push(out, Op::Unfold(a, k, seq))
    }

    /// Mean softmax cross-entropy over `(row, class)` targets, as a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        assert!(!targets.is_empty(), "cross-entropy needs targets");
        let x = self.value(logits);
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for &(r, c) in targets {
            let mut p = x.row(r).to_vec();
            softmax_in_place(&mut p);
            let max = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.row(r).iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - x.get(r, c);
            probs.push(p);
        }
        let out = Tensor::full(1, 1, total / targets.len() as f64);
        self.push(out, Op::CrossEntropy(logits, targets.to_vec(), probs))
    }

    /// Mean of `1 × 1` nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|&p| self.value(p).get(0, 0)).sum();
        let out = Tensor::full(1, 1, total / parts.len() as f64);
        self.push(out, Op::Mean(parts.to_vec()))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(1, 1, 1.0));
        let mut out = Grads::new(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = || node.value.as_ref().unwrap();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc_slot(&mut grads, *a, av.rows(), av.cols());
                    gemm(1.0, &g, false, bv, true, 1.0, ga);
                    let gb = acc_slot(&mut grads, *b, bv.rows(), bv.cols());
                    gemm(1.0, av, true, &g, false, 1.0, gb);
                }
                Op::MatMulBT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc_slot(&mut grads, *a, av.rows(), av.cols());
                    gemm(1.0, &g, false, bv, false, 1.0, ga);
                    let gb = acc_slot(&mut grads, *b, bv.rows(), bv.cols());
                    gemm(1.0, &g, true, av, false, 1.0, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut grads, *a, &g);
                    let gr = acc_slot(&mut grads, *r, 1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, bv, |gv, x| gv * x);
                    let db = zip_map(&g, av, |gv, x| gv * x);
                    acc(&mut grads, *a, &da);
                    acc(&mut grads, *b, &db);
                }
                Op::MulConst(a, mask) => acc(&mut grads, *a, &zip_map(&g, mask, |gv, m| gv * m)),
                Op::Scale(a, k) => acc(&mut grads, *a, &g.map(|v| v * k)),
                Op::Relu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, &d);
                }
                Op::Gelu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        gv * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
                    });
                    acc(&mut grads, *a, &d);
                }
                Op::Tanh(a) => acc(
                    &mut grads,
                    *a,
                    &zip_map(&g, y(), |gv, t| gv * (1.0 - t * t)),
                ),
                Op::Sigmoid(a) => acc(
                    &mut grads,
                    *a,
                    &zip_map(&g, y(), |gv, s| gv * s * (1.0 - s)),
                ),
                Op::LayerNorm(x, gain, bias, cache) => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let (gr, xh) = (g.row(r), cache.xhat.row(r));
                        for c in 0..cols {
                            dgain.data_mut()[c] += gr[c] * xh[c];
                            dbias.data_mut()[c] += gr[c];
                            dxhat[c] = gr[c] * gv.data()[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = cache.rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                    acc(&mut grads, *x, &dx);
                    acc(&mut grads, *gain, &dgain);
                    acc(&mut grads, *bias, &dbias);
                }
                Op::BatchNorm(x, gain, bias, cache, _, _) => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    for c in 0..cols {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for r in 0..rows {
                            let gr = g.get(r, c);
                            let xh = cache.xhat.get(r, c);
                            dgain.data_mut()[c] += gr * xh;
                            dbias.data_mut()[c] += gr;
                            let dxh = gr * gv.data()[c];
                            m1 += dxh;
                            m2 += dxh * xh;
                        }
                        m1 /= rows as f64;
                        m2 /= rows as f64;
                        for r in 0..rows {
                            let xh = cache.xhat.get(r, c);
                            let dxh = g.get(r, c) * gv.data()[c];
                            dx.set(r, c, cache.rstd[c] * (dxh - m1 - xh * m2));
                        }
                    }
                    acc(&mut grads, *x, &dx);
                    acc(&mut grads, *gain, &dgain);
                    acc(&mut grads, *bias, &dbias);
                }
                Op::Gather(table, ids) => {
                    let tv = self.value(*table);
                    let gt = acc_slot(&mut grads, *table, tv.rows(), tv.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::NormEval(x, gain, bias, cache) => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gr = g.get(r, c);
                            dgain.data_mut()[c] += gr * cache.xhat.get(r, c);
                            dbias.data_mut()[c] += gr;
                            dx.set(r, c, gr * gv.data()[c] * cache.rstd[c]);
                        }
                    }
                    acc(&mut grads, *x, &dx);
                    acc(&mut grads, *gain, &dgain);
                    acc(&mut grads, *bias, &dbias);
                }
                Op::Attention {
                    qkv,
                    heads,
                    seq,
                    probs,
                    masks,
                } => {
                    let x = self.value(*qkv);
                    let (rows, seq) = (x.rows(), *seq);
                    let d = x.cols() / 3;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dx = Tensor::zeros(rows, 3 * d);
                    for b in 0..rows / seq {
                        let r0 = b * seq;
                        for h in 0..*heads {
                            let q = block_cols(x, r0, seq, h * dh, dh);
                            let k = block_cols(x, r0, seq, d + h * dh, dh);
                            let v = block_cols(x, r0, seq, 2 * d + h * dh, dh);
                            let p = &probs[b * heads + h];
                            let go = block_cols(&g, r0, seq, h * dh, dh);
                            let mut dp = Tensor::zeros(seq, seq);
                            gemm(1.0, &go, false, &v, true, 0.0, &mut dp);
                            let mut dv = Tensor::zeros(seq, dh);
                            match masks {
                                Some(m) => {
                                    let mask = &m[b * heads + h];
                                    let dropped = zip_map(p, mask, |a, k| a * k);
                                    gemm(1.0, &dropped, true, &go, false, 0.0, &mut dv);
                                    dp = zip_map(&dp, mask, |a, k| a * k);
                                }
                                None => gemm(1.0, p, true, &go, false, 0.0, &mut dv),
                            }
                            let mut ds = Tensor::zeros(seq, seq);
                            for i in 0..seq {
                                let (pr, dpr) = (p.row(i), dp.row(i));
                                let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                                for (o, (a, b)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dpr))
                                {
                                    *o = a * (b - dot);
                                }
                            }
                            let mut dq = Tensor::zeros(seq, dh);
                            gemm(scale, &ds, false, &k, false, 0.0, &mut dq);
                            let mut dk = Tensor::zeros(seq, dh);
                            gemm(scale, &ds, true, &q, false, 0.0, &mut dk);
                            put_block_cols(&mut dx, &dq, r0, h * dh);
                            put_block_cols(&mut dx, &dk, r0, d + h * dh);
                            put_block_cols(&mut dx, &dv, r0, 2 * d + h * dh);
                        }
                    }
                    acc(&mut grads, *qkv, &dx);
                }
                Op::Lstm(gx, w_hh, seq, cache) => {
                    let w = self.value(*w_hh);
                    let hout = y();
                    let (rows, h) = hout.shape();
                    let seq = *seq;
                    let nb = rows / seq;
                    let mut dz_all = Tensor::zeros(rows, 4 * h);
                    let mut dh_next = Tensor::zeros(nb, h);
                    let mut dc_next = Tensor::zeros(nb, h);
                    let mut dz = Tensor::zeros(nb, 4 * h);
                    for t in (0..seq).rev() {
                        for b in 0..nb {
                            let r = b * seq + t;
                            let gates = cache.gates.row(r);
                            let dzr = dz.row_mut(b);
                            for j in 0..h {
                                let (i, f, gg, o) =
                                    (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                                let tc = cache.tanh_cells.get(r, j);
                                let c_prev = if t > 0 {
                                    cache.cells.get(r - 1, j)
                                } else {
                                    0.0
                                };
                                let dhj = g.get(r, j) + dh_next.get(b, j);
                                let dc = dhj * o * (1.0 - tc * tc) + dc_next.get(b, j);
                                dzr[j] = dc * gg * i * (1.0 - i);
                                dzr[h + j] = dc * c_prev * f * (1.0 - f);
                                dzr[2 * h + j] = dc * i * (1.0 - gg * gg);
                                dzr[3 * h + j] = dhj * tc * o * (1.0 - o);
                                dc_next.set(b, j, dc * f);
                            }
                            dz_all.row_mut(r).copy_from_slice(dz.row(b));
                        }
                        gemm(1.0, &dz, false, w, true, 0.0, &mut dh_next);
                    }
                    if seq > 1 {
                        let gw = acc_slot(&mut grads, *w_hh, w.rows(), w.cols());
                        for b in 0..nb {
                            let prev = hout.slice_rows(b * seq, seq - 1);
                            let dz_tail = dz_all.slice_rows(b * seq + 1, seq - 1);
                            gemm(1.0, &prev, true, &dz_tail, false, 1.0, gw);
                        }
                    }
                    acc(&mut grads, *gx, &dz_all);
                }
                Op::Rows(a, start) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av.rows(), av.cols());
                    let c = g.cols();
                    for (o, v) in ga.data_mut()[start * c..(start + g.rows()) * c]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *o += v;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(&mut grads, p, &cols_of(&g, off, w));
                        off += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        acc(&mut grads, p, &g.slice_rows(off, r));
                        off += r;
                    }
                }
                Op::MaxRows(a, arg) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let ga = acc_slot(&mut grads, *a, av.rows(), cols);
                    for (i, &r) in arg.iter().enumerate() {
                        let (b, c) = (i / cols, i % cols);
                        let cur = ga.get(r, c);
                        ga.set(r, c, cur + g.get(b, c));
                    }
                }
                Op::MeanRows(a, seq) => {
                    let av = self.value(*a);
                    let n = *seq as f64;
                    let ga = acc_slot(&mut grads, *a, av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(r / seq)) {
                            *o += v / n;
                        }
                    }
                }
                Op::Unfold(a, k, seq) => {
                    let av = self.value(*a);
                    let d = av.cols();
                    let n = seq - k + 1;
                    let ga = acc_slot(&mut grads, *a, av.rows(), d);
                    for row in 0..g.rows() {
                        let (b, t) = (row / n, row % n);
                        let src = (b * seq + t) * d;
                        for (o, v) in ga.data_mut()[src..src + k * d].iter_mut().zip(g.row(row)) {
                            *o += v;
                        }
                    }
                }
                Op::CrossEntropy(logits, targets, probs) => {
                    let lv = self.value(*logits);
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let gl = acc_slot(&mut grads, *logits, lv.rows(), lv.cols());
                    for (&(r, c), p) in targets.iter().zip(probs) {
                        let row = gl.row_mut(r);
                        for (o, pv) in row.iter_mut().zip(p) {
                            *o += scale * pv;
                        }
                        row[c] -= scale;
                    }
                }
                Op::Mean(parts) => {
                    let share = Tensor::full(1, 1, g.get(0, 0) / parts.len() as f64);
                    for &p in parts {
                        acc(&mut grads, p, &share);
                    }
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine_cols(xhat: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let mut out = xhat.clone();
    for r in 0..out.rows() {
        for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(gain.data()).zip(bias.data()) {
            *o = *o * gv + bv;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn block_cols(x: &Tensor, r0: usize, n: usize, start: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(n, width);
    for r in 0..n {
        out.row_mut(r)
            .copy_from_slice(&x.row(r0 + r)[start..start + width]);
    }
    out
}

fn put_block_cols(dst: &mut Tensor, src: &Tensor, r0: usize, start: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r0 + r)[start..start + src.cols()].copy_from_slice(src.row(r));
    }
}

fn cols_of(x: &Tensor, start: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), width);
    for r in 0..x.rows() {
        out.row_mut(r)
            .copy_from_slice(&x.row(r)[start..start + width]);
    }
    out
}

fn put_cols(dst: &mut Tensor, src: &Tensor, start: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[start..start + src.cols()].copy_from_slice(src.row(r));
    }
}

fn acc_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}
