//! Reverse-mode tape over whole-batch matrices, specialized to the
//! operations the codec tree needs.

use std::collections::BTreeMap;

use super::code::{NetId, NeuralCode, VAR_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{Mat, Tape};
use crate::polar::{bipolar_plotkin_features, KernelMatrix};

pub(crate) type ValId = usize;

/// Reference to a block of columns starting at `.1` inside value `.0`.
pub(crate) type BlockRef = (ValId, usize);

/// Parameter gradients keyed by network.
pub type CodeGrads = BTreeMap<NetId, Vec<f64>>;

enum Op {
    Leaf,
    Dense {
        net: NetId,
        input: ValId,
        tape: Option<Tape>,
    },
    /// `out[r * s + i][c] = parts[c].value[r][parts[c].offset + i]`
    Gather {
        parts: Vec<BlockRef>,
        s: usize,
    },
    /// `out[r][j * s + i] = in[r * s + i][j]`
    Scatter {
        input: ValId,
        s: usize,
    },
    /// Horizontal concatenation of `(value, column, width)` slices.
    Concat {
        parts: Vec<(ValId, usize, usize)>,
    },
    Plotkin {
        input: ValId,
    },
    Add(ValId, ValId),
    ZeroCol {
        input: ValId,
        col: usize,
    },
    /// `y = a x + b`
    Affine {
        input: ValId,
        a: f64,
    },
    /// `tanh(x / 2)`: expected bipolar value given an LLR.
    SoftBit {
        input: ValId,
    },
    /// `+1` where `x >= 0`, else `-1`; no gradient.
    HardBit,
    Ste {
        input: ValId,
    },
    BatchNorm {
        input: ValId,
        std: f64,
    },
    RowNorm {
        input: ValId,
        norms: Vec<f64>,
    },
    Channel {
        input: ValId,
        gain: Option<Mat>,
    },
}

pub(crate) struct Graph<'a> {
    code: &'a NeuralCode,
    train_encoder: bool,
    train_decoder: bool,
    vals: Vec<Mat>,
    ops: Vec<Op>,
    needs: Vec<bool>,
    kernels: BTreeMap<usize, KernelMatrix>,
    audit: Option<Vec<(NetId, usize)>>,
}

impl<'a> Graph<'a> {
    pub fn new(code: &'a NeuralCode, train_encoder: bool, train_decoder: bool) -> Self {
        Self {
            code,
            train_encoder,
            train_decoder,
            vals: Vec::new(),
            ops: Vec::new(),
            needs: Vec::new(),
            kernels: BTreeMap::new(),
            audit: None,
        }
    }

    pub fn enable_audit(&mut self) {
        self.audit = Some(Vec::new());
    }

    pub fn take_audit(&mut self) -> Vec<(NetId, usize)> {
        self.audit.take().unwrap_or_default()
    }

    pub fn code(&self) -> &'a NeuralCode {
        self.code
    }

    pub fn value(&self, id: ValId) -> &Mat {
        &self.vals[id]
    }

    pub fn take_value(&mut self, id: ValId) -> Mat {
        std::mem::replace(&mut self.vals[id], Mat::zeros(0, 0))
    }

    fn push(&mut self, op: Op, val: Mat, needs: bool) -> ValId {
        self.ops.push(op);
        self.vals.push(val);
        self.needs.push(needs);
        self.vals.len() - 1
    }

    fn trainable(&self, net: NetId) -> bool {
        if net.is_encoder() {
            self.train_encoder
        } else {
            self.train_decoder
        }
    }

    pub fn leaf(&mut self, m: Mat) -> ValId {
        self.push(Op::Leaf, m, false)
    }

    pub fn dense(&mut self, net: NetId, input: ValId) -> Result<ValId> {
        let dn = self
            .code
            .net(net)
            .ok_or_else(|| Error::Config(format!("network {net:?} missing")))?;
        if let Some(a) = &mut self.audit {
            a.push((net, self.vals[input].cols()));
        }
        let needs = self.trainable(net) || self.needs[input];
        let (out, tape) = if needs {
            let (o, t) = dn.forward_taped(&self.vals[input])?;
            (o, Some(t))
        } else {
            (dn.forward(&self.vals[input])?, None)
        };
        Ok(self.push(Op::Dense { net, input, tape }, out, needs))
    }

    pub fn gather(&mut self, parts: Vec<BlockRef>, s: usize) -> ValId {
        let rows = self.vals[parts[0].0].rows();
        let p = parts.len();
        let mut out = vec![0.0; rows * s * p];
        for (c, &(v, off)) in parts.iter().enumerate() {
            let src = &self.vals[v];
            debug_assert_eq!(src.rows(), rows);
            for r in 0..rows {
                let row = &src.row(r)[off..off + s];
                for (i, &x) in row.iter().enumerate() {
                    out[(r * s + i) * p + c] = x;
                }
            }
        }
        let needs = parts.iter().any(|&(v, _)| self.needs[v]);
        let m = Mat::from_vec(rows * s, p, out).expect("shape");
        self.push(Op::Gather { parts, s }, m, needs)
    }

    pub fn scatter(&mut self, input: ValId, s: usize) -> ValId {
        let src = &self.vals[input];
        let (rs, w) = (src.rows(), src.cols());
        let rows = rs / s;
        let mut out = vec![0.0; rows * w * s];
        for r in 0..rows {
            for i in 0..s {
                for (j, &x) in src.row(r * s + i).iter().enumerate() {
                    out[r * w * s + j * s + i] = x;
                }
            }
        }
        let needs = self.needs[input];
        let m = Mat::from_vec(rows, w * s, out).expect("shape");
        self.push(Op::Scatter { input, s }, m, needs)
    }

    pub fn concat(&mut self, parts: Vec<(ValId, usize, usize)>) -> ValId {
        let rows = self.vals[parts[0].0].rows();
        let width: usize = parts.iter().map(|p| p.2).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &(v, c, w) in &parts {
                out.extend_from_slice(&self.vals[v].row(r)[c..c + w]);
            }
        }
        let needs = parts.iter().any(|&(v, _, _)| self.needs[v]);
        let m = Mat::from_vec(rows, width, out).expect("shape");
        self.push(Op::Concat { parts }, m, needs)
    }

    fn kernel(&mut self, ell: usize) -> Result<&KernelMatrix> {
        if let std::collections::btree_map::Entry::Vacant(e) = self.kernels.entry(ell) {
            e.insert(crate::polar::kernel_matrix(ell)?);
        }
        Ok(&self.kernels[&ell])
    }

    pub fn plotkin(&mut self, input: ValId) -> Result<ValId> {
        let ell = self.vals[input].cols();
        let g = self.kernel(ell)?.clone();
        let src = &self.vals[input];
        let mut out = Vec::with_capacity(src.data().len());
        for r in 0..src.rows() {
            out.extend(bipolar_plotkin_features(src.row(r), &g));
        }
        let m = Mat::from_vec(src.rows(), ell, out).expect("shape");
        let needs = self.needs[input];
        Ok(self.push(Op::Plotkin { input }, m, needs))
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> ValId {
        let mut m = self.vals[a].clone();
        m.add_assign(&self.vals[b]);
        let needs = self.needs[a] || self.needs[b];
        self.push(Op::Add(a, b), m, needs)
    }

    pub fn zero_col(&mut self, input: ValId, col: usize) -> ValId {
        let mut m = self.vals[input].clone();
        for r in 0..m.rows() {
            m.set(r, col, 0.0);
        }
        let needs = self.needs[input];
        self.push(Op::ZeroCol { input, col }, m, needs)
    }

    pub fn affine(&mut self, input: ValId, a: f64, b: f64) -> ValId {
        let m = self.vals[input].map(|x| a * x + b);
        let needs = self.needs[input];
        self.push(Op::Affine { input, a }, m, needs)
    }

    pub fn soft_bit(&mut self, input: ValId) -> ValId {
        let m = self.vals[input].map(|x| (0.5 * x).tanh());
        let needs = self.needs[input];
        self.push(Op::SoftBit { input }, m, needs)
    }

    pub fn hard_bit(&mut self, input: ValId) -> ValId {
        let m = self.vals[input].map(|x| if x >= 0.0 { 1.0 } else { -1.0 });
        self.push(Op::HardBit, m, false)
    }

    pub fn ste(&mut self, input: ValId) -> ValId {
        let m = crate::nn::ste_sign(&self.vals[input]);
        let needs = self.needs[input];
        self.push(Op::Ste { input }, m, needs)
    }

    /// Normalizes with the scalar mean and variance of the whole batch.
    /// Returns the value and the `(mean, var)` used.
    pub fn batch_norm(&mut self, input: ValId) -> Result<(ValId, (f64, f64))> {
        let x = &self.vals[input];
        let len = x.data().len() as f64;
        let mean = x.data().iter().sum::<f64>() / len;
        let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
        if !(var >= VAR_FLOOR) {
            return Err(Error::Numeric(format!(
                "batch variance {var:e} below floor {VAR_FLOOR:e}"
            )));
        }
        let std = var.sqrt();
        let m = x.map(|v| (v - mean) / std);
        let needs = self.needs[input];
        Ok((self.push(Op::BatchNorm { input, std }, m, needs), (mean, var)))
    }

    /// Scales every row to squared norm equal to its width.
    pub fn row_norm(&mut self, input: ValId) -> Result<ValId> {
        let x = &self.vals[input];
        let n = x.cols() as f64;
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm * norm >= VAR_FLOOR) {
                return Err(Error::Numeric("zero-energy codeword cannot be normalized".into()));
            }
            let c = n.sqrt() / norm;
            out.row_mut(r).iter_mut().for_each(|v| *v *= c);
            norms.push(norm);
        }
        let needs = self.needs[input];
        Ok(self.push(Op::RowNorm { input, norms }, out, needs))
    }

    pub fn channel(&mut self, input: ValId, gain: Option<Mat>, noise: &Mat) -> ValId {
        let mut m = self.vals[input].clone();
        if let Some(h) = &gain {
            for (v, g) in m.data_mut().iter_mut().zip(h.data()) {
                *v *= g;
            }
        }
        m.add_assign(noise);
        let needs = self.needs[input];
        self.push(Op::Channel { input, gain }, m, needs)
    }

    /// Propagates `grad` (the gradient of the loss with respect to value
    /// `out`) to every trainable network.
    pub fn backward(mut self, out: ValId, grad: Mat) -> Result<CodeGrads> {
        let mut grads: Vec<Option<Mat>> = (0..self.vals.len()).map(|_| None).collect();
        grads[out] = Some(grad);
        let mut result = CodeGrads::new();
        let ops = std::mem::take(&mut self.ops);
        for (id, op) in ops.into_iter().enumerate().rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.needs[id] {
                continue;
            }
            match op {
                Op::Leaf | Op::HardBit => {}
                Op::Dense { net, input, tape } => {
                    let dn = self.code.net(net).expect("net present at build time");
                    let tape = tape.expect("taped when gradients are needed");
                    let want_input = self.needs[input];
                    let gi = if self.trainable(net) {
                        let buf = result.entry(net).or_insert_with(|| vec![0.0; dn.params().len()]);
                        dn.backward_into(tape, &g, Some(buf), want_input)?
                    } else {
                        dn.backward_into(tape, &g, None, want_input)?
                    };
                    if let Some(gi) = gi {
                        accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&gi));
                    }
                }
                Op::Gather { parts, s } => {
                    let p = parts.len();
                    for (c, &(v, off)) in parts.iter().enumerate() {
                        if !self.needs[v] {
                            continue;
                        }
                        accumulate(&mut grads, &self.vals, v, |acc| {
                            for r in 0..acc.rows() {
                                let row = &mut acc.row_mut(r)[off..off + s];
                                for (i, a) in row.iter_mut().enumerate() {
                                    *a += g.data()[(r * s + i) * p + c];
                                }
                            }
                        });
                    }
                }
                Op::Scatter { input, s } => {
                    accumulate(&mut grads, &self.vals, input, |acc| {
                        let w = acc.cols();
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            for i in 0..s {
                                for (j, a) in acc.row_mut(r * s + i).iter_mut().enumerate() {
                                    *a += gr[j * s + i];
                                }
                            }
                            debug_assert_eq!(gr.len(), w * s);
                        }
                    });
                }
                Op::Concat { parts } => {
                    let mut col = 0;
                    for &(v, c, w) in &parts {
                        if self.needs[v] {
                            accumulate(&mut grads, &self.vals, v, |acc| {
                                for r in 0..g.rows() {
                                    let src = &g.row(r)[col..col + w];
                                    for (a, x) in acc.row_mut(r)[c..c + w].iter_mut().zip(src) {
                                        *a += x;
                                    }
                                }
                            });
                        }
                        col += w;
                    }
                }
                Op::Plotkin { input } => {
                    let x = &self.vals[input];
                    let ell = x.cols();
                    let kern = &self.kernels[&ell];
                    let mut gi = Mat::zeros(x.rows(), ell);
                    for r in 0..x.rows() {
                        let t = x.row(r);
                        let gr = g.row(r);
                        let out = gi.row_mut(r);
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj == 0.0 {
                                continue;
                            }
                            let sup = kern.column_support(j);
                            for &i in sup {
                                let prod: f64 = sup.iter().filter(|&&q| q != i).map(|&q| t[q]).product();
                                out[i] += gj * prod;
                            }
                        }
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&gi));
                }
                Op::Add(a, b) => {
                    if self.needs[a] {
                        accumulate(&mut grads, &self.vals, a, |acc| acc.add_assign(&g));
                    }
                    if self.needs[b] {
                        accumulate(&mut grads, &self.vals, b, |acc| acc.add_assign(&g));
                    }
                }
                Op::ZeroCol { input, col } => {
                    let mut g = g;
                    for r in 0..g.rows() {
                        g.set(r, col, 0.0);
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&g));
                }
                Op::Affine { input, a } => {
                    let g = g.map(|v| a * v);
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&g));
                }
                Op::SoftBit { input } => {
                    let y = &self.vals[id];
                    let mut g = g;
                    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                        *gv *= 0.5 * (1.0 - yv * yv);
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&g));
                }
                Op::Ste { input } => {
                    let g = crate::nn::ste_sign_backward(&self.vals[input], &g);
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&g));
                }
                Op::BatchNorm { input, std } => {
                    let y = &self.vals[id];
                    let len = y.data().len() as f64;
                    let mg = g.data().iter().sum::<f64>() / len;
                    let mgy = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>() / len;
                    let mut gi = g;
                    for (gv, &yv) in gi.data_mut().iter_mut().zip(y.data()) {
                        *gv = (*gv - mg - yv * mgy) / std;
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&gi));
                }
                Op::RowNorm { input, norms } => {
                    let y = &self.vals[id];
                    let n = y.cols() as f64;
                    let mut gi = g;
                    for (r, &norm) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let dot: f64 = gi.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        let c = n.sqrt() / norm;
                        for (gv, &yv) in gi.row_mut(r).iter_mut().zip(yr) {
                            *gv = c * (*gv - yv * dot / n);
                        }
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&gi));
                }
                Op::Channel { input, gain } => {
                    let mut g = g;
                    if let Some(h) = &gain {
                        for (gv, hv) in g.data_mut().iter_mut().zip(h.data()) {
                            *gv *= hv;
                        }
                    }
                    accumulate(&mut grads, &self.vals, input, |acc| acc.add_assign(&g));
                }
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<Mat>], vals: &[Mat], id: ValId, f: impl FnOnce(&mut Mat)) {
    let acc = grads[id].get_or_insert_with(|| Mat::zeros(vals[id].rows(), vals[id].cols()));
    f(acc);
}
