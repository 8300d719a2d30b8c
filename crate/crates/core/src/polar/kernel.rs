use crate::error::{Error, Result};

/// Binary `ell x ell` kernel, the `s`-fold Kronecker power of `[[1,0],[1,1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMatrix {
    ell: usize,
    bits: Vec<u8>,
    supports: Vec<Vec<usize>>,
}

pub fn kernel_matrix(ell: usize) -> Result<KernelMatrix> {
    if ell < 2 || !ell.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "kernel size {ell} is not a power of two >= 2"
        )));
    }
    let mut bits = vec![1u8];
    let mut size = 1;
    while size < ell {
        let next = size * 2;
        let mut out = vec![0u8; next * next];
        // [[A, 0], [A, A]]
        for i in 0..size {
            for j in 0..size {
                let a = bits[i * size + j];
                out[i * next + j] = a;
                out[(i + size) * next + j] = a;
                out[(i + size) * next + j + size] = a;
            }
        }
        bits = out;
        size = next;
    }
    let supports = (0..ell)
        .map(|j| (0..ell).filter(|&i| bits[i * ell + j] == 1).collect())
        .collect();
    Ok(KernelMatrix { ell, bits, supports })
}

impl KernelMatrix {
    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.ell + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.ell..(i + 1) * self.ell]
    }

    /// Rows `i` with `G[i][j] = 1`.
    pub fn column_support(&self, j: usize) -> &[usize] {
        &self.supports[j]
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    /// Row vector times matrix over GF(2): `x_j = XOR_{i : G[i][j] = 1} t_i`.
    pub fn apply_bits(&self, t: &[u8]) -> Vec<u8> {
        (0..self.ell)
            .map(|j| self.supports[j].iter().fold(0, |acc, &i| acc ^ t[i]))
            .collect()
    }

    /// Lower triangular with unit diagonal implies invertible over GF(2).
    pub fn is_unit_lower_triangular(&self) -> bool {
        (0..self.ell).all(|i| self.get(i, i) == 1 && (i + 1..self.ell).all(|j| self.get(i, j) == 0))
    }
}

/// XOR realized as a product on bipolar (or real) values:
/// `out_j = prod_{i : G[i][j] = 1} t_i`.
pub fn bipolar_plotkin_features(t: &[f64], g: &KernelMatrix) -> Vec<f64> {
    (0..g.ell())
        .map(|j| g.column_support(j).iter().map(|&i| t[i]).product())
        .collect()
}
