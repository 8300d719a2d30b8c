//! Graph builders for the neural Plotkin tree and its decoders.

use super::code::{NetId, NormMode};
use super::graph::{BlockRef, Graph, ValId};
use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::polar::{CodeLayout, NodeSpec};

/// Feedback passed from decoded children to later sub-decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// `tanh(LLR / 2)`, differentiable.
    #[default]
    Soft,
    /// `+1 / -1` decisions.
    Hard,
}

/// Bipolar source vectors: information positions carry `1 - 2u` in order,
/// frozen positions `+1`.
pub fn embed_batch(layout: &CodeLayout, u: &Bits) -> Result<Mat> {
    if u.cols() != layout.k() {
        return Err(Error::Input(format!(
            "message length {} does not match k = {}",
            u.cols(),
            layout.k()
        )));
    }
    let n = layout.n();
    let mut m = Mat::filled(u.rows(), n, 1.0);
    for r in 0..u.rows() {
        let row = m.row_mut(r);
        for (&pos, &b) in layout.info_set().iter().zip(u.row(r)) {
            row[pos] = 1.0 - 2.0 * b as f64;
        }
    }
    Ok(m)
}

pub fn embed_message(layout: &CodeLayout, u: &[u8]) -> Result<Vec<f64>> {
    let b = Bits::from_vec(1, u.len(), u.to_vec())?;
    Ok(embed_batch(layout, &b)?.into_vec())
}

impl Graph<'_> {
    /// One kernel application: coordinatewise `g(t) + plotkin(t)` over the
    /// child blocks, written back as a `[rows x ell * s]` block.
    fn encode_node(&mut self, node: &NodeSpec, children: Vec<BlockRef>) -> Result<ValId> {
        let s = node.child_len;
        let x = self.gather(children, s);
        let mut h = self.dense(NetId::Encoder(node.id), x)?;
        if self.code().architecture().pass_through_last {
            h = self.zero_col(h, node.ell - 1);
        }
        let p = self.plotkin(x)?;
        let o = self.add(h, p);
        Ok(self.scatter(o, s))
    }

    /// Encodes the subtree rooted at `node` whose source block starts at
    /// column `input.1` of `input.0`.
    pub(crate) fn encode_subtree(&mut self, node: &NodeSpec, input: BlockRef) -> Result<ValId> {
        let layout = self.code().layout();
        let s = node.child_len;
        let children: Vec<BlockRef> = if node.is_leaf() {
            (0..node.ell).map(|j| (input.0, input.1 + j)).collect()
        } else {
            let mut c = Vec::with_capacity(node.ell);
            for j in 0..node.ell {
                let child = *layout.child(node, j);
                c.push((self.encode_subtree(&child, (input.0, input.1 + j * s))?, 0));
            }
            c
        };
        self.encode_node(node, children)
    }

    /// Full encoder followed by power normalization.
    /// Returns the codeword value and batch statistics when batch mode ran.
    pub(crate) fn encode(&mut self, u: &Bits, mode: NormMode, binarize: bool) -> Result<(ValId, Option<(f64, f64)>)> {
        let code = self.code();
        let src = embed_batch(code.layout(), u)?;
        let src = self.leaf(src);
        let root = *code.layout().root();
        let raw = self.encode_subtree(&root, (src, 0))?;
        let (x, stats) = match mode {
            NormMode::Batch => {
                let (v, st) = self.batch_norm(raw)?;
                (v, Some(st))
            }
            NormMode::Running => {
                let sd = code.norm.var.sqrt();
                (self.affine(raw, 1.0 / sd, -code.norm.mean / sd), None)
            }
            NormMode::PerCodeword => {
                if binarize {
                    (raw, None)
                } else {
                    (self.row_norm(raw)?, None)
                }
            }
        };
        if binarize {
            Ok((self.ste(x), stats))
        } else {
            Ok((x, stats))
        }
    }

    fn feedback(&mut self, llr: ValId, fb: Feedback) -> ValId {
        match fb {
            Feedback::Soft => self.soft_bit(llr),
            Feedback::Hard => self.hard_bit(llr),
        }
    }

    /// Re-encoded block of a child with no information positions.
    fn frozen_block(&mut self, child_len: usize, child: Option<&NodeSpec>, rows: usize) -> Result<BlockRef> {
        let ones = self.leaf(Mat::filled(rows, child_len, 1.0));
        match child {
            None => Ok((ones, 0)),
            Some(c) => Ok((self.encode_subtree(c, (ones, 0))?, 0)),
        }
    }

    /// Sequential decoding of `node` given its incoming block `lam`.
    /// Leaf LLRs are pushed into `llrs` as `(position, value, column)`.
    /// Returns the node's re-encoded block, or `None` at the root.
    fn decode_node(
        &mut self,
        node: &NodeSpec,
        lam: BlockRef,
        fb: Feedback,
        parallel: bool,
        llrs: &mut Vec<(usize, ValId, usize)>,
    ) -> Result<Option<ValId>> {
        let code = self.code();
        let layout = code.layout();
        let s = node.child_len;
        let rows = self.value(lam.0).rows();
        let is_root = node.id == layout.root().id;
        let mut feedback: Vec<BlockRef> = Vec::with_capacity(node.ell);

        if parallel && node.is_leaf() {
            let x = self.gather((0..node.ell).map(|j| (lam.0, lam.1 + j)).collect(), 1);
            let out = self.dense(NetId::Parallel(node.id), x)?;
            let bits = self.feedback(out, fb);
            for j in 0..node.ell {
                let pos = node.start + j;
                if layout.is_frozen(pos) {
                    feedback.push(self.frozen_block(1, None, rows)?);
                } else {
                    llrs.push((pos, out, j));
                    feedback.push((bits, j));
                }
            }
        } else {
            for j in 0..node.ell {
                let child = (!node.is_leaf()).then(|| *layout.child(node, j));
                if !layout.child_has_info(node, j) {
                    feedback.push(self.frozen_block(s, child.as_ref(), rows)?);
                    continue;
                }
                let mut parts: Vec<BlockRef> = (0..node.ell).map(|c| (lam.0, lam.1 + c * s)).collect();
                parts.extend_from_slice(&feedback);
                let x = self.gather(parts, s);
                let l = self.dense(NetId::Decoder { node: node.id, slot: j }, x)?;
                let l = self.scatter(l, s);
                match child {
                    None => {
                        llrs.push((node.start + j, l, 0));
                        let b = self.feedback(l, fb);
                        feedback.push((b, 0));
                    }
                    Some(c) => {
                        let r = self
                            .decode_node(&c, (l, 0), fb, parallel, llrs)?
                            .expect("non-root child returns its block");
                        feedback.push((r, 0));
                    }
                }
            }
        }
        if is_root {
            Ok(None)
        } else {
            Ok(Some(self.encode_node(node, feedback)?))
        }
    }

    /// Decodes `y` (value id) into information-bit logits `[rows x k]`,
    /// logit = `log P(1) / P(0)`.
    pub(crate) fn decode(&mut self, y: ValId, fb: Feedback, parallel: bool) -> Result<ValId> {
        let code = self.code();
        if parallel && !code.has_parallel() {
            return Err(Error::Config("code has no one-shot leaf decoders".into()));
        }
        if !self.value(y).is_finite() {
            return Err(Error::Numeric("non-finite channel output".into()));
        }
        if self.value(y).cols() != code.n() {
            return Err(Error::Input(format!(
                "received width {} does not match n = {}",
                self.value(y).cols(),
                code.n()
            )));
        }
        let root = *code.layout().root();
        let mut llrs = Vec::with_capacity(code.k());
        self.decode_node(&root, (y, 0), fb, parallel, &mut llrs)?;
        llrs.sort_by_key(|e| e.0);
        let cat = self.concat(llrs.iter().map(|&(_, v, c)| (v, c, 1)).collect());
        Ok(self.affine(cat, -1.0, 0.0))
    }
}
