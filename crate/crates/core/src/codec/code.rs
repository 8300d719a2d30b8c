use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::polar::CodeLayout;
use crate::rng::{stream_rng, streams};

/// Network sizes for every kernel on the tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Number of linear layers per kernel network.
    pub depth: usize,
    pub parallel_hidden: usize,
    /// Allocate one-shot leaf decoders.
    pub parallel_leaves: bool,
    /// Make the last kernel output a pure pass-through of the last input.
    pub pass_through_last: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            enc_hidden: 64,
            dec_hidden: 128,
            depth: 3,
            parallel_hidden: 64,
            parallel_leaves: false,
            pass_through_last: false,
        }
    }
}

impl Architecture {
    fn widths(&self, fan_in: usize, hidden: usize, fan_out: usize) -> Result<Vec<usize>> {
        if self.depth == 0 || hidden == 0 {
            return Err(Error::Config("network depth and hidden width must be positive".into()));
        }
        let mut w = vec![fan_in];
        w.extend(std::iter::repeat_n(hidden, self.depth - 1));
        w.push(fan_out);
        Ok(w)
    }

    pub fn encoder_widths(&self, ell: usize) -> Result<Vec<usize>> {
        self.widths(ell, self.enc_hidden, ell)
    }

    /// Sub-decoder `slot` reads the `ell` kernel inputs plus `slot`
    /// feedback values and emits one value.
    pub fn decoder_widths(&self, ell: usize, slot: usize) -> Result<Vec<usize>> {
        self.widths(ell + slot, self.dec_hidden, 1)
    }

    pub fn parallel_widths(&self, ell: usize) -> Result<Vec<usize>> {
        self.widths(ell, self.parallel_hidden, ell)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetId {
    Encoder(usize),
    Decoder { node: usize, slot: usize },
    Parallel(usize),
}

impl NetId {
    pub fn is_encoder(&self) -> bool {
        matches!(self, NetId::Encoder(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Statistics of the current batch (training only).
    Batch,
    /// Exponential moving averages gathered during training.
    Running,
    /// Each codeword scaled to `||x||^2 = n`.
    PerCodeword,
}

/// Scalar power-normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNormStats {
    pub mean: f64,
    pub var: f64,
    pub momentum: f64,
    pub mode: NormMode,
}

pub(crate) const VAR_FLOOR: f64 = 1e-12;

impl Default for PowerNormStats {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            momentum: 0.99,
            mode: NormMode::Running,
        }
    }
}

impl PowerNormStats {
    pub fn per_codeword() -> Self {
        Self {
            mode: NormMode::PerCodeword,
            ..Self::default()
        }
    }

    /// Normalization applied by a forward pass.
    pub fn effective_mode(&self, training: bool) -> NormMode {
        match self.mode {
            NormMode::PerCodeword => NormMode::PerCodeword,
            NormMode::Batch | NormMode::Running if training => NormMode::Batch,
            _ => NormMode::Running,
        }
    }

    /// EMA update with a batch's `(mean, var)`.
    pub fn update(&mut self, batch: (f64, f64)) {
        let m = self.momentum;
        self.mean = m * self.mean + (1.0 - m) * batch.0;
        self.var = m * self.var + (1.0 - m) * batch.1;
    }
}

/// A trainable DeepPolar codec: one encoder network per tree node, one
/// sub-decoder per non-frozen child slot, optional one-shot leaf decoders,
/// and power-normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralCode {
    pub(crate) layout: CodeLayout,
    pub(crate) arch: Architecture,
    pub(crate) encoders: Vec<DenseNet>,
    pub(crate) decoders: Vec<Vec<Option<DenseNet>>>,
    pub(crate) parallel: Option<Vec<Option<DenseNet>>>,
    pub norm: PowerNormStats,
    /// Codewords pass through the sign (after binarized fine-tuning).
    pub binary: bool,
    pub(crate) seed: u64,
}

impl NeuralCode {
    /// Randomly initialized code. Every network draws from its own stream
    /// so that adding a slot does not perturb the others.
    pub fn new(layout: CodeLayout, arch: Architecture, seed: u64) -> Result<Self> {
        let init = |id: NetId, widths: &[usize]| -> Result<DenseNet> {
            let idx = match id {
                NetId::Encoder(node) => node as u64,
                NetId::Decoder { node, slot } => (1 << 20) + ((node as u64) << 8) + slot as u64,
                NetId::Parallel(node) => (2 << 20) + node as u64,
            };
            DenseNet::init(widths, &mut stream_rng(seed, streams::INIT, idx))
        };
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for node in layout.nodes() {
            encoders.push(init(NetId::Encoder(node.id), &arch.encoder_widths(node.ell)?)?);
            let mut slots = Vec::with_capacity(node.ell);
            for j in 0..node.ell {
                slots.push(if layout.child_has_info(node, j) {
                    let id = NetId::Decoder { node: node.id, slot: j };
                    Some(init(id, &arch.decoder_widths(node.ell, j)?)?)
                } else {
                    None
                });
            }
            decoders.push(slots);
        }
        let parallel = if arch.parallel_leaves {
            let mut p = Vec::new();
            for node in layout.nodes() {
                p.push(
                    if node.is_leaf() && layout.info_count(node.start..node.start + node.len()) > 0 {
                        Some(init(NetId::Parallel(node.id), &arch.parallel_widths(node.ell)?)?)
                    } else {
                        None
                    },
                );
            }
            Some(p)
        } else {
            None
        };
        Ok(Self {
            layout,
            arch,
            encoders,
            decoders,
            parallel,
            norm: PowerNormStats::default(),
            binary: false,
            seed,
        })
    }

    /// Sets every encoder network to zero, leaving only the Plotkin skip
    /// path: the encoder then reproduces the classical polar code.
    pub fn zero_encoders(&mut self) {
        for e in &mut self.encoders {
            e.params_mut().fill(0.0);
        }
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn has_parallel(&self) -> bool {
        self.parallel.is_some()
    }

    pub fn net(&self, id: NetId) -> Option<&DenseNet> {
        match id {
            NetId::Encoder(node) => self.encoders.get(node),
            NetId::Decoder { node, slot } => self.decoders.get(node)?.get(slot)?.as_ref(),
            NetId::Parallel(node) => self.parallel.as_ref()?.get(node)?.as_ref(),
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> Option<&mut DenseNet> {
        match id {
            NetId::Encoder(node) => self.encoders.get_mut(node),
            NetId::Decoder { node, slot } => self.decoders.get_mut(node)?.get_mut(slot)?.as_mut(),
            NetId::Parallel(node) => self.parallel.as_mut()?.get_mut(node)?.as_mut(),
        }
    }

    /// Replaces a network; the replacement must have the same widths.
    pub fn set_net(&mut self, id: NetId, net: DenseNet) -> Result<()> {
        let slot = self
            .net_mut(id)
            .ok_or_else(|| Error::Config(format!("no network {id:?}")))?;
        if slot.widths() != net.widths() {
            return Err(Error::Config(format!(
                "network {id:?} has widths {:?}, replacement has {:?}",
                slot.widths(),
                net.widths()
            )));
        }
        *slot = net;
        Ok(())
    }

    pub fn encoder_ids(&self) -> Vec<NetId> {
        (0..self.encoders.len()).map(NetId::Encoder).collect()
    }

    /// Sub-decoder and one-shot leaf decoder ids.
    pub fn decoder_ids(&self) -> Vec<NetId> {
        let mut ids = Vec::new();
        for (node, slots) in self.decoders.iter().enumerate() {
            for (slot, net) in slots.iter().enumerate() {
                if net.is_some() {
                    ids.push(NetId::Decoder { node, slot });
                }
            }
        }
        if let Some(p) = &self.parallel {
            ids.extend(
                p.iter()
                    .enumerate()
                    .filter(|(_, n)| n.is_some())
                    .map(|(i, _)| NetId::Parallel(i)),
            );
        }
        ids
    }

    pub fn all_ids(&self) -> Vec<NetId> {
        let mut ids = self.encoder_ids();
        ids.extend(self.decoder_ids());
        ids
    }

    pub fn param_count(&self, ids: &[NetId]) -> usize {
        ids.iter()
            .filter_map(|&id| self.net(id))
            .map(|n| n.params().len())
            .sum()
    }

    #[cfg(test)]
    fn node(&self, id: usize) -> &crate::polar::NodeSpec {
        &self.layout.nodes()[id]
    }

    /// Checks that every network matches the tree.
    pub fn validate(&self) -> Result<()> {
        let layout = &self.layout;
        if self.encoders.len() != layout.nodes().len() || self.decoders.len() != layout.nodes().len() {
            return Err(Error::Config("network count does not match the tree".into()));
        }
        for node in layout.nodes() {
            let enc = &self.encoders[node.id];
            if enc.widths() != self.arch.encoder_widths(node.ell)? {
                return Err(Error::Config(format!("encoder {} has wrong widths", node.id)));
            }
            let slots = &self.decoders[node.id];
            if slots.len() != node.ell {
                return Err(Error::Config(format!(
                    "node {} has {} decoder slots",
                    node.id,
                    slots.len()
                )));
            }
            for (j, slot) in slots.iter().enumerate() {
                match (slot, layout.child_has_info(node, j)) {
                    (Some(net), true) => {
                        if net.widths() != self.arch.decoder_widths(node.ell, j)? {
                            return Err(Error::Config(format!(
                                "sub-decoder ({}, {j}) has wrong widths",
                                node.id
                            )));
                        }
                    }
                    (None, false) => {}
                    (Some(_), false) => {
                        return Err(Error::Config(format!(
                            "sub-decoder ({}, {j}) present for a frozen child",
                            node.id
                        )))
                    }
                    (None, true) => return Err(Error::Config(format!("sub-decoder ({}, {j}) missing", node.id))),
                }
            }
        }
        if let Some(par) = &self.parallel {
            if par.len() != layout.nodes().len() {
                return Err(Error::Config("parallel decoder count does not match the tree".into()));
            }
            for node in layout.nodes() {
                let needed = node.is_leaf() && layout.info_count(node.start..node.start + node.len()) > 0;
                match (&par[node.id], needed) {
                    (Some(net), true) if net.widths() == self.arch.parallel_widths(node.ell)? => {}
                    (None, false) => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "parallel decoder for node {} does not match the tree",
                            node.id
                        )))
                    }
                }
            }
        }
        if !(self.norm.var > 0.0) || !self.norm.mean.is_finite() {
            return Err(Error::Numeric("normalization statistics invalid".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::construct_reliability;

    fn layout_16_8() -> CodeLayout {
        let o = construct_reliability(16, 4, 0.5).unwrap();
        CodeLayout::from_order(16, 8, 4, &o).unwrap()
    }

    #[test]
    fn slot_allocation_follows_information_set() {
        let code = NeuralCode::new(layout_16_8(), Architecture::default(), 1).unwrap();
        code.validate().unwrap();
        // leaf 0 fully frozen, leaf 1 has only position 7
        assert!(code.decoders[0].iter().all(Option::is_none));
        let leaf1: Vec<bool> = code.decoders[1].iter().map(Option::is_some).collect();
        assert_eq!(leaf1, vec![false, false, false, true]);
        let root: Vec<bool> = code.decoders[4].iter().map(Option::is_some).collect();
        assert_eq!(root, vec![false, true, true, true]);
        // 1 + 3 + 4 leaf slots and 3 root slots
        assert_eq!(code.decoder_ids().len(), 11);
        for id in code.decoder_ids() {
            if let NetId::Decoder { node, slot } = id {
                let net = code.net(id).unwrap();
                assert_eq!(net.fan_in(), code.node(node).ell + slot);
                assert_eq!(net.fan_out(), 1);
            }
        }
    }

    #[test]
    fn encoder_widths_and_depth() {
        let code = NeuralCode::new(layout_16_8(), Architecture::default(), 1).unwrap();
        assert_eq!(code.net(NetId::Encoder(4)).unwrap().widths(), &[4, 64, 64, 4]);
        let net = code.net(NetId::Decoder { node: 4, slot: 3 }).unwrap();
        assert_eq!(net.widths(), &[7, 128, 128, 1]);
    }

    #[test]
    fn construction_is_seeded() {
        let a = NeuralCode::new(layout_16_8(), Architecture::default(), 5).unwrap();
        let b = NeuralCode::new(layout_16_8(), Architecture::default(), 5).unwrap();
        let c = NeuralCode::new(layout_16_8(), Architecture::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn set_net_checks_shape() {
        let mut code = NeuralCode::new(layout_16_8(), Architecture::default(), 1).unwrap();
        let wrong = DenseNet::zeros(&[4, 8, 4]).unwrap();
        assert!(code.set_net(NetId::Encoder(0), wrong).is_err());
        assert!(code
            .set_net(NetId::Decoder { node: 0, slot: 0 }, DenseNet::zeros(&[4, 1]).unwrap())
            .is_err());
    }

    #[test]
    fn norm_mode_resolution() {
        let s = PowerNormStats::default();
        assert_eq!(s.effective_mode(true), NormMode::Batch);
        assert_eq!(s.effective_mode(false), NormMode::Running);
        let p = PowerNormStats::per_codeword();
        assert_eq!(p.effective_mode(true), NormMode::PerCodeword);
        let b = PowerNormStats {
            mode: NormMode::Batch,
            ..s
        };
        assert_eq!(b.effective_mode(false), NormMode::Running);
    }
}
