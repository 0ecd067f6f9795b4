//! Description-length estimate of BF16 weights from the pooled entropies of
//! their sign, exponent and mantissa fields.

use serde::{Deserialize, Serialize};

use crate::bundle::{Dtype, ModelBundle};
use crate::error::{Error, Result};

/// Fixed codebook overhead (3.5 KiB of Huffman tables), in bits.
pub const CODEBOOK_OVERHEAD_BITS: f64 = 28_672.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bf16Histograms {
    pub sign_counts: [u64; 2],
    pub exponent_counts: Vec<u64>,
    pub mantissa_counts: Vec<u64>,
    pub total: u64,
}

impl Default for Bf16Histograms {
    fn default() -> Self {
        Bf16Histograms {
            sign_counts: [0; 2],
            exponent_counts: vec![0; 256],
            mantissa_counts: vec![0; 128],
            total: 0,
        }
    }
}

impl Bf16Histograms {
    pub fn add(&mut self, words: &[u16]) {
        for &w in words {
            self.sign_counts[(w >> 15) as usize] += 1;
            self.exponent_counts[((w >> 7) & 0xFF) as usize] += 1;
            self.mantissa_counts[(w & 0x7F) as usize] += 1;
        }
        self.total += words.len() as u64;
    }

    pub fn merge(&mut self, other: &Bf16Histograms) {
        for (a, b) in self.sign_counts.iter_mut().zip(&other.sign_counts) {
            *a += b;
        }
        for (a, b) in self.exponent_counts.iter_mut().zip(&other.exponent_counts) {
            *a += b;
        }
        for (a, b) in self.mantissa_counts.iter_mut().zip(&other.mantissa_counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

pub fn bf16_decompose_histograms(raw_bits: &[u16]) -> Result<Bf16Histograms> {
    if raw_bits.is_empty() {
        return Err(Error::InvalidInput("no BF16 words".into()));
    }
    let mut h = Bf16Histograms::default();
    h.add(raw_bits);
    Ok(h)
}

/// Shannon entropy in bits of the distribution given by `counts`.
pub fn shannon_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("entropy of an empty histogram".into()));
    }
    let t = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        // p·log₂(1/p) rather than −p·log₂p, so a single bin gives +0.
        .map(|&c| c as f64 / t * (t / c as f64).log2())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlEstimate {
    pub l_bits: f64,
    pub bits_per_param: f64,
    pub bits_per_param_no_overhead: f64,
    pub l0_bits: f64,
    pub h_sign: f64,
    pub h_exp: f64,
    pub h_mant: f64,
    pub params: u64,
    /// f32 matrices left out of the estimate.
    pub skipped_f32: Vec<String>,
}

pub fn mdl_from_histograms(h: &Bf16Histograms) -> Result<MdlEstimate> {
    let h_sign = shannon_entropy(&h.sign_counts)?;
    let h_exp = shannon_entropy(&h.exponent_counts)?;
    let h_mant = shannon_entropy(&h.mantissa_counts)?;
    let n = h.total as f64;
    let per = h_sign + h_exp + h_mant;
    let l_bits = n * per + CODEBOOK_OVERHEAD_BITS;
    Ok(MdlEstimate {
        l_bits,
        bits_per_param: l_bits / n,
        bits_per_param_no_overhead: per,
        l0_bits: CODEBOOK_OVERHEAD_BITS,
        h_sign,
        h_exp,
        h_mant,
        params: h.total,
        skipped_f32: Vec::new(),
    })
}

/// Pooled MDL estimate over every BF16 matrix in the bundle.
pub fn mdl_bits(bundle: &ModelBundle) -> Result<MdlEstimate> {
    let mut hist = Bf16Histograms::default();
    let mut skipped = Vec::new();
    for m in &bundle.matrices {
        match (&m.raw_bits, m.dtype) {
            (Some(bits), Dtype::Bf16) => hist.add(bits),
            _ => skipped.push(m.name.clone()),
        }
    }
    if hist.total == 0 {
        return Err(Error::InvalidInput("bundle has no BF16 payloads".into()));
    }
    let mut est = mdl_from_histograms(&hist)?;
    est.skipped_f32 = skipped;
    Ok(est)
}
