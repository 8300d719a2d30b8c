use super::kernel::kernel_matrix;
use super::layout::CodeLayout;
use crate::error::{Error, Result};

/// Places `u` on the information positions; frozen positions carry 0.
pub fn embed_bits(layout: &CodeLayout, u: &[u8]) -> Result<Vec<u8>> {
    if u.len() != layout.k() {
        return Err(Error::Input(format!(
            "message has {} bits, code expects {}",
            u.len(),
            layout.k()
        )));
    }
    let mut m = vec![0u8; layout.n()];
    for (&pos, &b) in layout.info_set().iter().zip(u) {
        if b > 1 {
            return Err(Error::Input(format!("non-binary message symbol {b}")));
        }
        m[pos] = b;
    }
    Ok(m)
}

/// Applies the kernels level by level, coordinatewise, in place.
pub fn plotkin_transform(layout: &CodeLayout, m: &mut [u8]) {
    let mut t = Vec::new();
    for level in 1..=layout.depth() {
        let nodes = layout.level_nodes(level);
        let kernel = kernel_matrix(nodes[0].ell).expect("layout kernels are powers of two");
        for node in nodes {
            for i in 0..node.child_len {
                t.clear();
                t.extend((0..node.ell).map(|j| m[node.start + j * node.child_len + i]));
                for (j, o) in kernel.apply_bits(&t).into_iter().enumerate() {
                    m[node.start + j * node.child_len + i] = o;
                }
            }
        }
    }
}

/// Classical polar encoding `x = m G_n` (natural order).
pub fn polar_encode(layout: &CodeLayout, u: &[u8]) -> Result<Vec<u8>> {
    let mut m = embed_bits(layout, u)?;
    plotkin_transform(layout, &mut m);
    Ok(m)
}
