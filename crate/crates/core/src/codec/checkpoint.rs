//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! load followed by a save reproduces the file byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::code::{Architecture, NetId, NeuralCode, PowerNormStats};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};
use crate::polar::CodeLayout;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutRecord {
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    pub frozen: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    /// `fan_out` rows of `fan_in` weights.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    /// `encoder`, `decoder` or `parallel`.
    pub role: String,
    pub node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layout: LayoutRecord,
    pub architecture: Architecture,
    pub norm: PowerNormStats,
    #[serde(default)]
    pub binary: bool,
    pub seed: u64,
    /// Configuration of the run that produced the checkpoint, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub networks: Vec<NetRecord>,
}

fn net_record(id: NetId, net: &DenseNet) -> NetRecord {
    let (role, node, slot) = match id {
        NetId::Encoder(n) => ("encoder", n, None),
        NetId::Decoder { node, slot } => ("decoder", node, Some(slot)),
        NetId::Parallel(n) => ("parallel", n, None),
    };
    let layers = (0..net.num_layers())
        .map(|l| {
            let (w, b) = net.layer(l);
            let fan_in = net.widths()[l];
            LayerRecord {
                weight: w.chunks(fan_in).map(<[f64]>::to_vec).collect(),
                bias: b.to_vec(),
            }
        })
        .collect();
    NetRecord {
        role: role.into(),
        node,
        slot,
        widths: net.widths().to_vec(),
        hidden: net.hidden_activation(),
        output: net.output_activation(),
        layers,
    }
}

impl NetRecord {
    fn id(&self) -> Result<NetId> {
        match (self.role.as_str(), self.slot) {
            ("encoder", None) => Ok(NetId::Encoder(self.node)),
            ("decoder", Some(slot)) => Ok(NetId::Decoder { node: self.node, slot }),
            ("parallel", None) => Ok(NetId::Parallel(self.node)),
            _ => Err(Error::Config(format!(
                "unknown network role {:?} (slot {:?})",
                self.role, self.slot
            ))),
        }
    }

    fn to_net(&self) -> Result<DenseNet> {
        if self.layers.len() + 1 != self.widths.len() {
            return Err(Error::Config(format!(
                "network {} {} has {} layers for widths {:?}",
                self.role,
                self.node,
                self.layers.len(),
                self.widths
            )));
        }
        let mut params = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            if layer.weight.len() != fo || layer.weight.iter().any(|r| r.len() != fi) || layer.bias.len() != fo {
                return Err(Error::Config(format!(
                    "layer {l} of network {} {} does not match widths {:?}",
                    self.role, self.node, self.widths
                )));
            }
            for row in &layer.weight {
                params.extend_from_slice(row);
            }
            params.extend_from_slice(&layer.bias);
        }
        DenseNet::from_parts(self.widths.clone(), self.hidden, self.output, params)
    }
}

impl Checkpoint {
    pub fn from_code(code: &NeuralCode) -> Self {
        let layout = code.layout();
        Self {
            format_version: FORMAT_VERSION,
            layout: LayoutRecord {
                n: layout.n(),
                k: layout.k(),
                ell: layout.ell(),
                frozen: layout.frozen_set(),
            },
            architecture: code.architecture().clone(),
            norm: code.norm.clone(),
            binary: code.binary,
            seed: code.seed(),
            config: None,
            networks: code
                .all_ids()
                .into_iter()
                .map(|id| net_record(id, code.net(id).expect("listed id")))
                .collect(),
        }
    }

    /// Rebuilds and validates the code.
    pub fn to_code(&self) -> Result<NeuralCode> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let l = &self.layout;
        let mut frozen = vec![false; l.n];
        for &f in &l.frozen {
            if f >= l.n || frozen[f] {
                return Err(Error::Config(format!("invalid frozen index {f}")));
            }
            frozen[f] = true;
        }
        let info: Vec<usize> = (0..l.n).filter(|&i| !frozen[i]).collect();
        if info.len() != l.k {
            return Err(Error::Config(format!(
                "frozen set leaves {} information positions, k = {}",
                info.len(),
                l.k
            )));
        }
        let layout = CodeLayout::new(l.n, l.ell, &info).map_err(|e| Error::Config(e.to_string()))?;
        let mut code = NeuralCode::new(layout, self.architecture.clone(), self.seed)?;
        let expected = code.all_ids();
        if expected.len() != self.networks.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} networks, tree needs {}",
                self.networks.len(),
                expected.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rec in &self.networks {
            let id = rec.id()?;
            if !seen.insert(id) {
                return Err(Error::Config(format!("duplicate network {id:?}")));
            }
            code.set_net(id, rec.to_net()?)?;
        }
        code.norm = self.norm.clone();
        code.binary = self.binary;
        code.validate()?;
        Ok(code)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Config("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Version {
                found: version.min(u64::from(u32::MAX)) as u32,
                supported: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("checkpoint schema: {e}")))
    }
}

fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    let (line, column) = (e.line(), e.column());
    let offset = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    Error::Parse {
        line,
        column,
        offset: offset.min(text.len()),
        msg: e.to_string(),
    }
}

/// Writes the checkpoint through a temporary file and a rename, so readers
/// never observe a partial file.
pub fn save_checkpoint(code: &NeuralCode, path: &Path) -> Result<()> {
    Checkpoint::from_code(code).save(path)
}

impl Checkpoint {
    /// Atomic write, see [`save_checkpoint`].
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json())
    }
}

/// Writes `text` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint; when `expected` is given its layout must match.
pub fn load_checkpoint(path: &Path, expected: Option<&CodeLayout>) -> Result<NeuralCode> {
    let text = fs::read_to_string(path)?;
    let code = Checkpoint::from_json(&text)?.to_code()?;
    if let Some(l) = expected {
        if code.layout() != l {
            return Err(Error::Config(format!(
                "checkpoint layout (n={}, k={}, ell={}) does not match requested (n={}, k={}, ell={})",
                code.n(),
                code.k(),
                code.layout().ell(),
                l.n(),
                l.k(),
                l.ell()
            )));
        }
    }
    Ok(code)
}
