use crate::error::{Error, Result};

/// Side length of the 2×2-average-pooled co-occurrence matrix.
pub const COOCCURRENCE_POOLED: usize = 128;

/// Counts of adjacent byte pairs and their pooled summary.
#[derive(Clone, Debug, PartialEq)]
pub struct CoMatrix {
    counts: Vec<u32>,
    pooled: Vec<f64>,
}

impl CoMatrix {
    /// Number of positions `k` with `block[k] == i` and `block[k + 1] == j`.
    pub fn count(&self, i: u8, j: u8) -> u32 {
        self.counts[(i as usize) << 8 | j as usize]
    }

    /// Row-major 256×256 counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Mean of the 2×2 cell block `(2i..2i+2, 2j..2j+2)`.
    pub fn pooled(&self, i: usize, j: usize) -> f64 {
        self.pooled[i * COOCCURRENCE_POOLED + j]
    }

    /// Row-major 128×128 pooled values.
    pub fn pooled_values(&self) -> &[f64] {
        &self.pooled
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Bigram matrix of a block of at least two bytes.
pub fn cooccurrence(block: &[u8]) -> Result<CoMatrix> {
    if block.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "co-occurrence needs at least two bytes, got {}",
            block.len()
        )));
    }
    let mut counts = vec![0u32; 256 * 256];
    for pair in block.windows(2) {
        counts[(pair[0] as usize) << 8 | pair[1] as usize] += 1;
    }
    let side = COOCCURRENCE_POOLED;
    let mut pooled = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let at = |r: usize, c: usize| counts[r << 8 | c] as f64;
            let (r, c) = (2 * i, 2 * j);
            pooled[i * side + j] = (at(r, c) + at(r, c + 1) + at(r + 1, c) + at(r + 1, c + 1)) / 4.0;
        }
    }
    Ok(CoMatrix { counts, pooled })
}
