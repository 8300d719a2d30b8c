use rand::Rng;

use crate::error::{Error, Result};

/// Row-major matrix of bits, one message (or decision vector) per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bits {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Bits {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "bit data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|&b| b > 1) {
            return Err(Error::Input("non-binary value in bit matrix".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged bit rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Uniform messages from the boolean hypercube.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        let mut word = 0u64;
        for i in 0..rows * cols {
            if i % 64 == 0 {
                word = rng.random();
            }
            data.push((word >> (i % 64)) as u8 & 1);
        }
        Self { rows, cols, data }
    }

    /// All `2^cols` messages, lexicographic with column 0 most significant.
    pub fn enumerate(cols: usize) -> Self {
        let rows = 1usize << cols;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend((0..cols).map(|c| ((r >> (cols - 1 - c)) & 1) as u8));
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u8] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    /// Copy of rows `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }
}
