use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OrderSource {
    Bhattacharyya { design_erasure: f64 },
    File,
}

/// Bit-channel indices sorted from least to most reliable.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityOrder {
    order: Vec<usize>,
    source: OrderSource,
}

/// Erasure probability used when no design point is given.
pub const DEFAULT_DESIGN_ERASURE: f64 = 0.5;

/// Bhattacharyya parameters of the `n` synthetic channels of an erasure
/// channel with erasure probability `z0`, natural index order.
pub fn bhattacharyya(n: usize, z0: f64) -> Vec<f64> {
    let mut z = vec![z0];
    while z.len() < n {
        z = z.iter().flat_map(|&v| [2.0 * v - v * v, v * v]).collect();
    }
    z
}

/// Orders the channels of a length-`n` code by descending Bhattacharyya
/// parameter. Any power-of-two kernel yields the same code as the 2x2
/// kernel in natural order, so `ell` only needs to be a power of two.
pub fn construct_reliability(n: usize, ell: usize, design_erasure: f64) -> Result<ReliabilityOrder> {
    if !(design_erasure > 0.0 && design_erasure < 1.0) {
        return Err(Error::Input(format!(
            "design erasure probability {design_erasure} outside (0, 1)"
        )));
    }
    if ell < 2 || !ell.is_power_of_two() {
        return Err(Error::Unsupported(format!("kernel size {ell}")));
    }
    if n < 1 || !n.is_power_of_two() {
        return Err(Error::Unsupported(format!("block length {n} is not a power of two")));
    }
    let z = bhattacharyya(n, design_erasure);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: on ties the lower index counts as less reliable
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    Ok(ReliabilityOrder {
        order,
        source: OrderSource::Bhattacharyya { design_erasure },
    })
}

impl ReliabilityOrder {
    pub fn from_permutation(order: Vec<usize>, source: OrderSource) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::Input(format!("order is not a permutation of 0..{n}")));
            }
            seen[i] = true;
        }
        Ok(Self { order, source })
    }

    /// Parses one index per line (least reliable first). A longer universal
    /// sequence is filtered to the indices below `n`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut order = Vec::new();
        let mut offset = 0;
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let idx: usize = trimmed.parse().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    column: 1,
                    offset,
                    msg: format!("invalid index {trimmed:?}: {e}"),
                })?;
                if idx < n {
                    order.push(idx);
                }
            }
            offset += line.len() + 1;
        }
        if order.len() != n {
            return Err(Error::Input(format!(
                "sequence yields {} indices below {n}, expected {n}",
                order.len()
            )));
        }
        Self::from_permutation(order, OrderSource::File)
    }

    pub fn from_file(path: &Path, n: usize) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, n)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn source(&self) -> &OrderSource {
        &self.source
    }

    /// Sorted frozen set for message length `k`.
    pub fn frozen_set(&self, k: usize) -> Vec<usize> {
        let mut f = self.order[..self.order.len().saturating_sub(k)].to_vec();
        f.sort_unstable();
        f
    }

    /// Sorted information set for message length `k`.
    pub fn info_set(&self, k: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut i = self.order[n.saturating_sub(k)..].to_vec();
        i.sort_unstable();
        i
    }
}
