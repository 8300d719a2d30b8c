//! Two-stage kernel curriculum: single-kernel codes trained at increasing
//! rates, then transplanted into the nodes of a larger tree.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_alternating, LossTrace, TrainPlan};
use crate::codec::{write_atomic, Architecture, Checkpoint, NetId, NeuralCode};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::polar::CodeLayout;
use crate::rng::{mix_seed, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumPlan {
    /// Epochs spent on each single-kernel code `(ell, j)`.
    pub stage1_epochs: usize,
    /// Hyperparameters for stage 1; its `epochs` field is ignored.
    pub stage1: TrainPlan,
    pub stage2: TrainPlan,
}

impl Default for CurriculumPlan {
    fn default() -> Self {
        Self {
            stage1_epochs: 20,
            stage1: TrainPlan::desk(),
            stage2: TrainPlan::desk(),
        }
    }
}

/// A trained single-kernel code with `j` information positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedKernel {
    pub j: usize,
    pub checkpoint: Checkpoint,
}

/// Pretrained kernels for one kernel size, keyed by `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelStore {
    pub ell: usize,
    pub kernels: Vec<PretrainedKernel>,
}

impl KernelStore {
    pub fn get(&self, j: usize) -> Option<&PretrainedKernel> {
        self.kernels.iter().find(|k| k.j == j)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.kernels.iter().map(|k| k.j).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("kernel store: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Non-frozen input count of every node: information bits for a leaf,
/// children holding information otherwise.
pub fn node_counts(layout: &CodeLayout) -> Vec<usize> {
    layout
        .nodes()
        .iter()
        .map(|node| {
            if node.is_leaf() {
                layout.info_count(node.start..node.start + node.len())
            } else {
                (0..node.ell).filter(|&j| layout.child_has_info(node, j)).count()
            }
        })
        .collect()
}

/// Builds the stage-1 code `(ell, j)`. With `prev` (the `(ell, j-1)` code)
/// the encoder, the normalization statistics and the shared sub-decoders
/// are carried over; the newly unfrozen slot starts fresh.
pub fn stage1_code(
    ell: usize,
    j: usize,
    arch: &Architecture,
    seed: u64,
    prev: Option<&NeuralCode>,
) -> Result<NeuralCode> {
    if j == 0 || j > ell {
        return Err(Error::Config(format!("stage-1 rate {j} outside 1..={ell}")));
    }
    let layout = CodeLayout::polar(ell, j, ell)?;
    let mut code = NeuralCode::new(layout, arch.clone(), mix_seed(seed, streams::CURRICULUM, j as u64))?;
    if let Some(prev) = prev {
        if prev.n() != ell || prev.k() + 1 != j {
            return Err(Error::Config(format!(
                "cannot carry ({}, {}) over to ({ell}, {j})",
                prev.n(),
                prev.k()
            )));
        }
        code.set_net(
            NetId::Encoder(0),
            prev.net(NetId::Encoder(0)).expect("root encoder").clone(),
        )?;
        for id in prev.decoder_ids() {
            code.set_net(id, prev.net(id).expect("listed").clone())?;
        }
        code.norm = prev.norm.clone();
    }
    Ok(code)
}

/// Trains the single-kernel codes `(ell, ell, j)` for `j = 1..=ell` in
/// order, carrying networks from each rate to the next.
pub fn curriculum_stage1(
    ell: usize,
    arch: &Architecture,
    plan: &CurriculumPlan,
    trace: &mut LossTrace,
) -> Result<KernelStore> {
    if plan.stage1_epochs == 0 {
        return Err(Error::Config("stage1_epochs must be positive".into()));
    }
    let mut kernels = Vec::with_capacity(ell);
    let mut prev: Option<NeuralCode> = None;
    for j in 1..=ell {
        let mut code = stage1_code(ell, j, arch, plan.stage1.seed, prev.as_ref())?;
        let p = TrainPlan {
            epochs: plan.stage1_epochs,
            seed: mix_seed(plan.stage1.seed, streams::CURRICULUM, j as u64),
            ..plan.stage1.clone()
        };
        train_alternating(&mut code, &p, trace)?;
        log::info!(
            "stage 1 ({ell}, {j}): decoder loss {:.4}",
            trace.tail_mean(super::Phase::Decoder, 50).unwrap_or(f64::NAN)
        );
        kernels.push(PretrainedKernel {
            j,
            checkpoint: Checkpoint::from_code(&code),
        });
        prev = Some(code);
    }
    Ok(KernelStore { ell, kernels })
}

/// Where one node's networks came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitRecord {
    pub node: usize,
    pub level: usize,
    pub count: usize,
    /// Pretrained rate `j` copied into this node, if any.
    pub source: Option<usize>,
    /// `(pretrained slot, target slot)` pairs for the sub-decoders.
    pub decoder_slots: Vec<(usize, usize)>,
}

/// Copies a sub-decoder into a slot whose input carries a different number
/// of feedback blocks. Shared leading input columns are copied, extra
/// columns get zero weights and dropped columns are discarded.
fn adapt_decoder(src: &DenseNet, target: &DenseNet) -> Result<DenseNet> {
    if src.widths()[1..] != target.widths()[1..] {
        return Err(Error::Config(format!(
            "pretrained sub-decoder widths {:?} do not fit {:?}",
            src.widths(),
            target.widths()
        )));
    }
    if src.widths() == target.widths() {
        return Ok(src.clone());
    }
    let mut out = target.clone();
    let (si, ti, fo) = (src.widths()[0], target.widths()[0], target.widths()[1]);
    for l in 0..out.num_layers() {
        let (sw, sb) = src.layer(l);
        let (tw, tb) = out.layer_mut(l);
        tb.copy_from_slice(sb);
        if l > 0 {
            tw.copy_from_slice(sw);
            continue;
        }
        for o in 0..fo {
            for i in 0..ti {
                tw[o * ti + i] = if i < si { sw[o * si + i] } else { 0.0 };
            }
        }
    }
    Ok(out)
}

/// Initializes `code` from a kernel store. Each node with `i > 0`
/// non-frozen inputs takes the encoder and sub-decoders of the pretrained
/// `(ell, i)` kernel; the `j`-th pretrained information slot maps to the
/// `j`-th information slot of the node. Nodes with `i = 0` and kernels of
/// a different size keep their fresh initialization.
pub fn curriculum_stage2_init(code: &mut NeuralCode, store: &KernelStore) -> Result<Vec<InitRecord>> {
    let layout = code.layout().clone();
    if layout.ell() != store.ell {
        return Err(Error::Config(format!(
            "store holds {}-kernels, code uses {}",
            store.ell,
            layout.ell()
        )));
    }
    let counts = node_counts(&layout);
    let mut cache: BTreeMap<usize, NeuralCode> = BTreeMap::new();
    let mut audit = Vec::new();
    for node in layout.nodes() {
        let count = counts[node.id];
        let mut rec = InitRecord {
            node: node.id,
            level: node.level,
            count,
            source: None,
            decoder_slots: Vec::new(),
        };
        if count == 0 || node.ell != store.ell {
            audit.push(rec);
            continue;
        }
        if let Entry::Vacant(e) = cache.entry(count) {
            let k = store
                .get(count)
                .ok_or_else(|| Error::Config(format!("kernel store has no entry for ({}, {count})", store.ell)))?;
            let pre = k.checkpoint.to_code()?;
            if pre.architecture() != code.architecture() {
                return Err(Error::Config(format!(
                    "pretrained ({}, {count}) kernel uses a different architecture",
                    store.ell
                )));
            }
            e.insert(pre);
        }
        let pre = &cache[&count];
        code.set_net(
            NetId::Encoder(node.id),
            pre.net(NetId::Encoder(0)).expect("root").clone(),
        )?;
        let pre_root = pre.layout().root();
        let src_slots = (0..pre_root.ell).filter(|&j| pre.layout().child_has_info(pre_root, j));
        let dst_slots = (0..node.ell).filter(|&j| layout.child_has_info(node, j));
        for (s, t) in src_slots.zip(dst_slots) {
            let src = pre.net(NetId::Decoder { node: 0, slot: s }).expect("info slot");
            let tid = NetId::Decoder { node: node.id, slot: t };
            let net = adapt_decoder(src, code.net(tid).expect("info slot"))?;
            code.set_net(tid, net)?;
            rec.decoder_slots.push((s, t));
        }
        rec.source = Some(count);
        audit.push(rec);
    }
    Ok(audit)
}
