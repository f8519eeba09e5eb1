//! Full-size embedding table with per-row prefix masks.
//!
//! Row `n` keeps its first `d_n` coordinates; the rest read as zero. Masking
//! is logical: stored values stay intact so another action can be applied
//! later. Only [`MaskedEmbeddingTable::export_sparse`] materializes sparsity.
//!
//! # `BETS` file layout (little-endian)
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `BETS` |
//! | 4 | 4 | version, `u32` = 1 |
//! | 8 | 4 | `num_rows`, `u32` |
//! | 12 | 4 | `d_max`, `u32` |
//! | 16 | 8 | reserved, `u64` = 0 |
//! | 24 | 4·num_rows | row sizes, `u32` |
//! | … | 4·Σd_n | retained values row-major, `f32` |

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{BetError, Result};
use crate::seed::rng_from;

pub const BETS_MAGIC: &[u8; 4] = b"BETS";
pub const BETS_VERSION: u32 = 1;
pub const BETS_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEmbeddingTable {
    values: Vec<f64>,
    row_sizes: Vec<u32>,
    d_max: usize,
    masked: bool,
}

impl MaskedEmbeddingTable {
    /// Uniform `[-init_scale, init_scale]` initialization with full rows.
    pub fn init(num_rows: usize, d_max: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if d_max == 0 || d_max > u32::MAX as usize {
            return Err(BetError::InvalidArgument(format!("d_max must be >= 1, got {d_max}")));
        }
        if !(init_scale.is_finite() && init_scale >= 0.0) {
            return Err(BetError::InvalidArgument(format!(
                "init_scale must be finite and >= 0, got {init_scale}"
            )));
        }
        let mut rng = rng_from(seed);
        let values = (0..num_rows * d_max)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * init_scale)
            .collect();
        Ok(Self {
            values,
            row_sizes: vec![d_max as u32; num_rows],
            d_max,
            masked: false,
        })
    }

    /// Wraps explicit values (row-major, `num_rows × d_max`) with full rows.
    pub fn from_values(values: Vec<f64>, d_max: usize) -> Result<Self> {
        if d_max == 0 || !values.len().is_multiple_of(d_max) {
            return Err(BetError::InvalidArgument(format!(
                "{} values do not form rows of width {d_max}",
                values.len()
            )));
        }
        let num_rows = values.len() / d_max;
        Ok(Self {
            values,
            row_sizes: vec![d_max as u32; num_rows],
            d_max,
            masked: false,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.row_sizes.len()
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn row_sizes(&self) -> &[u32] {
        &self.row_sizes
    }

    pub fn row_size(&self, n: usize) -> usize {
        self.row_sizes[n] as usize
    }

    /// Whether an action (or an imported mask) has been applied.
    pub fn is_masked(&self) -> bool {
        self.masked
    }

    /// Raw stored values, including masked-out coordinates.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces the row sizes. Stored values are untouched.
    pub fn apply_sizes(&mut self, sizes: &[u32]) -> Result<()> {
        if sizes.len() != self.num_rows() {
            return Err(BetError::InvalidArgument(format!(
                "action covers {} rows, table has {}",
                sizes.len(),
                self.num_rows()
            )));
        }
        if let Some((row, &size)) = sizes
            .iter()
            .enumerate()
            .find(|(_, &s)| s == 0 || s as usize > self.d_max)
        {
            return Err(BetError::SizeOutOfRange {
                row,
                size,
                d_max: self.d_max as u32,
            });
        }
        self.row_sizes.copy_from_slice(sizes);
        self.masked = true;
        Ok(())
    }

    pub fn apply_action(&mut self, action: &crate::sampler::SizeAction) -> Result<()> {
        self.apply_sizes(action.sizes())
    }

    /// The retained prefix of row `n`.
    pub fn active_row(&self, n: usize) -> &[f64] {
        let start = n * self.d_max;
        &self.values[start..start + self.row_sizes[n] as usize]
    }

    /// Masked lookup: a `d_max` vector whose entries past `d_n` are zero.
    pub fn lookup(&self, n: usize) -> Result<Vec<f64>> {
        if n >= self.num_rows() {
            return Err(BetError::OutOfBounds {
                index: n,
                len: self.num_rows(),
            });
        }
        let mut out = vec![0.0; self.d_max];
        let active = self.active_row(n);
        out[..active.len()].copy_from_slice(active);
        Ok(out)
    }

    /// `E ⊙ M` as a dense row-major matrix.
    pub fn masked_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for n in 0..self.num_rows() {
            let active = self.active_row(n);
            out[n * self.d_max..n * self.d_max + active.len()].copy_from_slice(active);
        }
        out
    }

    /// `‖M‖₁,₁`, the number of retained parameters.
    pub fn retained_params(&self) -> u64 {
        self.row_sizes.iter().map(|&s| s as u64).sum()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.retained_params() as f64 / (self.num_rows() * self.d_max) as f64
    }

    /// Serializes the masked table. Fails unless a mask has been applied.
    pub fn to_sparse_bytes(&self) -> Result<Vec<u8>> {
        if !self.masked {
            return Err(BetError::InvalidArgument(
                "export requires an applied action".to_owned(),
            ));
        }
        let rows = u32::try_from(self.num_rows())
            .map_err(|_| BetError::Format("too many rows for BETS".to_owned()))?;
        let retained = self.retained_params() as usize;
        let mut buf = Vec::with_capacity(BETS_HEADER_LEN + 4 * self.num_rows() + 4 * retained);
        buf.extend_from_slice(BETS_MAGIC);
        buf.extend_from_slice(&BETS_VERSION.to_le_bytes());
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&(self.d_max as u32).to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        for &s in &self.row_sizes {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for n in 0..self.num_rows() {
            for &x in self.active_row(n) {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(buf)
    }

    /// Parses a `BETS` buffer. Masked-out coordinates come back as zero and
    /// retained values are the stored `f32`s widened to `f64`.
    pub fn from_sparse_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < BETS_HEADER_LEN {
            return Err(BetError::Format(format!(
                "truncated header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != BETS_MAGIC {
            return Err(BetError::Format("bad magic, expected BETS".to_owned()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != BETS_VERSION {
            return Err(BetError::Format(format!("unsupported version {version}")));
        }
        let num_rows = u32_at(8) as usize;
        let d_max = u32_at(12) as usize;
        let reserved = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if reserved != 0 {
            return Err(BetError::Format(format!("reserved field is {reserved}, expected 0")));
        }
        if d_max == 0 {
            return Err(BetError::Format("d_max is 0".to_owned()));
        }
        let sizes_end = BETS_HEADER_LEN + 4 * num_rows;
        if bytes.len() < sizes_end {
            return Err(BetError::Format("truncated row sizes".to_owned()));
        }
        let row_sizes: Vec<u32> = (0..num_rows).map(|n| u32_at(BETS_HEADER_LEN + 4 * n)).collect();
        if let Some((row, &size)) = row_sizes
            .iter()
            .enumerate()
            .find(|(_, &s)| s == 0 || s as usize > d_max)
        {
            return Err(BetError::SizeOutOfRange {
                row,
                size,
                d_max: d_max as u32,
            });
        }
        let retained: usize = row_sizes.iter().map(|&s| s as usize).sum();
        let expected = sizes_end + 4 * retained;
        if bytes.len() != expected {
            return Err(BetError::Format(format!(
                "payload is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut values = vec![0.0; num_rows * d_max];
        let mut off = sizes_end;
        for (n, &s) in row_sizes.iter().enumerate() {
            for slot in &mut values[n * d_max..n * d_max + s as usize] {
                *slot = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
                off += 4;
            }
        }
        Ok(Self {
            values,
            row_sizes,
            d_max,
            masked: true,
        })
    }

    pub fn export_sparse(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_sparse_bytes()?)?;
        Ok(())
    }

    pub fn import_sparse(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_sparse_bytes(&fs::read(path)?)
    }
}

/// Expected size in bytes of a `BETS` file.
pub fn bets_file_len(num_rows: usize, retained: u64) -> u64 {
    BETS_HEADER_LEN as u64 + 4 * num_rows as u64 + 4 * retained
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_scale_gives_zero_table() {
        let t = MaskedEmbeddingTable::init(5, 4, 0.0, 1).unwrap();
        assert!(t.values().iter().all(|&x| x == 0.0));
        assert!(t.row_sizes().iter().all(|&s| s == 4));
    }

    #[test]
    fn init_is_deterministic() {
        let a = MaskedEmbeddingTable::init(10, 8, 0.1, 42).unwrap();
        let b = MaskedEmbeddingTable::init(10, 8, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert!(MaskedEmbeddingTable::init(1, 0, 0.1, 0).is_err());
    }

    #[test]
    fn init_mean_is_centred() {
        let scale = 0.5;
        let t = MaskedEmbeddingTable::init(1000, 1000, scale, 9).unwrap();
        let n = t.values().len() as f64;
        let mean = t.values().iter().sum::<f64>() / n;
        // Uniform(-s, s) has variance s²/3.
        let sigma = (scale * scale / 3.0 / n).sqrt();
        assert!(mean.abs() < 5.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    #[test]
    fn prefix_mask_shapes() {
        let mut t = MaskedEmbeddingTable::from_values(vec![1.0; 5], 5).unwrap();
        t.apply_sizes(&[3]).unwrap();
        assert_eq!(t.lookup(0).unwrap(), vec![1.0, 1.0, 1.0, 0.0, 0.0]);

        let mut t = MaskedEmbeddingTable::from_values(vec![2.0, 4.0, 6.0], 3).unwrap();
        assert_eq!(t.lookup(0).unwrap(), vec![2.0, 4.0, 6.0]);
        t.apply_sizes(&[2]).unwrap();
        assert_eq!(t.lookup(0).unwrap(), vec![2.0, 4.0, 0.0]);
        t.apply_sizes(&[1]).unwrap();
        assert_eq!(t.lookup(0).unwrap().iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(t.lookup(1).is_err());
    }

    #[test]
    fn out_of_range_sizes_name_the_row() {
        let mut t = MaskedEmbeddingTable::init(3, 4, 0.1, 0).unwrap();
        match t.apply_sizes(&[1, 0, 2]) {
            Err(BetError::SizeOutOfRange { row: 1, size: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            t.apply_sizes(&[1, 2, 5]),
            Err(BetError::SizeOutOfRange { row: 2, .. })
        ));
        assert!(t.apply_sizes(&[1, 2]).is_err());
    }

    #[test]
    fn export_requires_mask() {
        let t = MaskedEmbeddingTable::init(3, 4, 0.1, 0).unwrap();
        assert!(t.to_sparse_bytes().is_err());
    }

    #[test]
    fn minimal_rows_store_one_value_each() {
        let mut t = MaskedEmbeddingTable::init(7, 16, 0.1, 3).unwrap();
        t.apply_sizes(&[1; 7]).unwrap();
        let bytes = t.to_sparse_bytes().unwrap();
        assert_eq!(bytes.len(), BETS_HEADER_LEN + 4 * 7 + 4 * 7);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut t = MaskedEmbeddingTable::init(3, 4, 0.1, 0).unwrap();
        t.apply_sizes(&[1, 2, 3]).unwrap();
        let good = t.to_sparse_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(MaskedEmbeddingTable::from_sparse_bytes(&bad), Err(BetError::Format(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(MaskedEmbeddingTable::from_sparse_bytes(&bad), Err(BetError::Format(_))));

        assert!(matches!(
            MaskedEmbeddingTable::from_sparse_bytes(&good[..good.len() - 1]),
            Err(BetError::Format(_))
        ));
        assert!(MaskedEmbeddingTable::from_sparse_bytes(&good[..10]).is_err());
    }

    fn table_and_sizes() -> impl Strategy<Value = (MaskedEmbeddingTable, Vec<u32>)> {
        (1usize..20, 1usize..12, any::<u64>()).prop_flat_map(|(rows, d_max, seed)| {
            let table = MaskedEmbeddingTable::init(rows, d_max, 1.0, seed).unwrap();
            (Just(table), prop::collection::vec(1..=d_max as u32, rows))
        })
    }

    proptest! {
        #[test]
        fn nonzero_count_equals_retained((mut t, sizes) in table_and_sizes()) {
            // Stored values are nonzero with probability one.
            prop_assume!(t.values().iter().all(|&x| x != 0.0));
            t.apply_sizes(&sizes).unwrap();
            let nonzero: usize = (0..t.num_rows())
                .map(|n| t.lookup(n).unwrap().iter().filter(|&&x| x != 0.0).count())
                .sum();
            prop_assert_eq!(nonzero as u64, t.retained_params());
            prop_assert_eq!(t.retained_params(), sizes.iter().map(|&s| s as u64).sum::<u64>());
        }

        #[test]
        fn masking_is_idempotent((mut t, sizes) in table_and_sizes()) {
            t.apply_sizes(&sizes).unwrap();
            let once = t.masked_dense();
            t.apply_sizes(&sizes).unwrap();
            prop_assert_eq!(once, t.masked_dense());
        }

        #[test]
        fn sparse_round_trip_is_byte_identical((mut t, sizes) in table_and_sizes()) {
            t.apply_sizes(&sizes).unwrap();
            let bytes = t.to_sparse_bytes().unwrap();
            prop_assert_eq!(bytes.len() as u64, bets_file_len(t.num_rows(), t.retained_params()));
            let back = MaskedEmbeddingTable::from_sparse_bytes(&bytes).unwrap();
            prop_assert_eq!(back.row_sizes(), t.row_sizes());
            for n in 0..t.num_rows() {
                for (a, b) in back.active_row(n).iter().zip(t.active_row(n)) {
                    prop_assert_eq!(a.to_bits(), (*b as f32 as f64).to_bits());
                }
            }
            prop_assert_eq!(back.to_sparse_bytes().unwrap(), bytes);
        }
    }
}
