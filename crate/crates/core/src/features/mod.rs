//! Hand-crafted block descriptors: fourteen global statistics and the byte
//! co-occurrence (bigram) matrix.

mod cooccur;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cooccur::{cooccurrence, CoMatrix, COOCCURRENCE_POOLED};

pub const FEATURE_COUNT: usize = 14;

/// General-purpose compressor behind the Kolmogorov-complexity proxy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compressor {
    /// zlib-wrapped DEFLATE at the default level.
    #[default]
    Deflate,
    /// bzip2 (Burrows-Wheeler) at the best level.
    Bwt,
}

impl FromStr for Compressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deflate" | "gzip" | "zlib" => Ok(Compressor::Deflate),
            "bwt" | "bzip2" => Ok(Compressor::Bwt),
            other => Err(Error::InvalidInput(format!("unknown compressor `{other}`"))),
        }
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compressor::Deflate => "deflate",
            Compressor::Bwt => "bwt",
        })
    }
}

/// The global statistics of one block, in CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kolmogorov_proxy: f64,
    pub arithmetic_mean: f64,
    pub geometric_mean: f64,
    pub harmonic_mean: f64,
    pub std_dev: f64,
    pub mean_abs_dev: f64,
    /// Mean fraction of set bits per byte, in `[0, 1]`.
    pub hamming_weight: f64,
    /// Excess (Fisher) kurtosis from population moments.
    pub kurtosis: f64,
    pub skewness: f64,
    pub longest_streak: f64,
    pub low_ascii_freq: f64,
    pub med_ascii_freq: f64,
    pub high_ascii_freq: f64,
    /// Bits per byte, in `[0, 8]`.
    pub shannon_entropy: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; FEATURE_COUNT] = [
        "kolmogorov_proxy",
        "arithmetic_mean",
        "geometric_mean",
        "harmonic_mean",
        "std_dev",
        "mean_abs_dev",
        "hamming_weight",
        "kurtosis",
        "skewness",
        "longest_streak",
        "low_ascii_freq",
        "med_ascii_freq",
        "high_ascii_freq",
        "shannon_entropy",
    ];

    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.kolmogorov_proxy,
            self.arithmetic_mean,
            self.geometric_mean,
            self.harmonic_mean,
            self.std_dev,
            self.mean_abs_dev,
            self.hamming_weight,
            self.kurtosis,
            self.skewness,
            self.longest_streak,
            self.low_ascii_freq,
            self.med_ascii_freq,
            self.high_ascii_freq,
            self.shannon_entropy,
        ]
    }

    /// Features rescaled to roughly unit range for use as network input:
    /// byte-valued statistics divided by 255, the streak by the block length,
    /// entropy by 8, and the higher moments log-compressed.
    pub fn scaled(&self, block_len: usize) -> [f64; FEATURE_COUNT] {
        let squash = |v: f64| v.signum() * v.abs().ln_1p();
        [
            self.kolmogorov_proxy,
            self.arithmetic_mean / 255.0,
            self.geometric_mean / 255.0,
            self.harmonic_mean / 255.0,
            self.std_dev / 255.0,
            self.mean_abs_dev / 255.0,
            self.hamming_weight,
            squash(self.kurtosis),
            squash(self.skewness),
            self.longest_streak / block_len.max(1) as f64,
            self.low_ascii_freq,
            self.med_ascii_freq,
            self.high_ascii_freq,
            self.shannon_entropy / 8.0,
        ]
    }
}

/// Byte-value histogram; every global statistic except the streak and the
/// compression proxy is a function of it.
#[derive(Clone, Debug)]
pub struct Histogram {
    counts: [u64; 256],
    total: u64,
}

impl Histogram {
    pub fn of(block: &[u8]) -> Self {
        let mut counts = [0u64; 256];
        for &b in block {
            counts[b as usize] += 1;
        }
        Histogram {
            counts,
            total: block.len() as u64,
        }
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    fn occupied(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(v, &c)| (v as f64, c as f64))
    }

    fn n(&self) -> f64 {
        self.total as f64
    }

    pub fn mean(&self) -> f64 {
        self.occupied().map(|(v, c)| v * c).sum::<f64>() / self.n()
    }

    /// Zero when any byte is zero.
    pub fn geometric_mean(&self) -> f64 {
        if self.counts[0] > 0 {
            return 0.0;
        }
        (self.occupied().map(|(v, c)| c * v.ln()).sum::<f64>() / self.n()).exp()
    }

    /// Zero when any byte is zero.
    pub fn harmonic_mean(&self) -> f64 {
        if self.counts[0] > 0 {
            return 0.0;
        }
        self.n() / self.occupied().map(|(v, c)| c / v).sum::<f64>()
    }

    /// Population central moment of order `k`.
    fn central_moment(&self, mean: f64, k: i32) -> f64 {
        self.occupied().map(|(v, c)| c * (v - mean).powi(k)).sum::<f64>() / self.n()
    }

    pub fn std_dev(&self) -> f64 {
        self.central_moment(self.mean(), 2).sqrt()
    }

    pub fn mean_abs_dev(&self) -> f64 {
        let mean = self.mean();
        self.occupied().map(|(v, c)| c * (v - mean).abs()).sum::<f64>() / self.n()
    }

    pub fn skewness(&self) -> f64 {
        let mean = self.mean();
        let m2 = self.central_moment(mean, 2);
        if m2 == 0.0 {
            return 0.0;
        }
        self.central_moment(mean, 3) / m2.powf(1.5)
    }

    /// Excess kurtosis; zero for constant blocks.
    pub fn kurtosis(&self) -> f64 {
        let mean = self.mean();
        let m2 = self.central_moment(mean, 2);
        if m2 == 0.0 {
            return 0.0;
        }
        self.central_moment(mean, 4) / (m2 * m2) - 3.0
    }

    pub fn hamming_weight(&self) -> f64 {
        let bits: u64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(v, &c)| c * (v as u8).count_ones() as u64)
            .sum();
        bits as f64 / (8.0 * self.n())
    }

    fn range_freq(&self, lo: usize, hi: usize) -> f64 {
        self.counts[lo..=hi].iter().sum::<u64>() as f64 / self.n()
    }

    /// Share of bytes in `0x00..=0x1F`.
    pub fn low_ascii_freq(&self) -> f64 {
        self.range_freq(0x00, 0x1F)
    }

    /// Share of bytes in `0x20..=0x7F`.
    pub fn med_ascii_freq(&self) -> f64 {
        self.range_freq(0x20, 0x7F)
    }

    /// Share of bytes in `0x80..=0xFF`.
    pub fn high_ascii_freq(&self) -> f64 {
        self.range_freq(0x80, 0xFF)
    }

    pub fn entropy(&self) -> f64 {
        let n = self.n();
        self.occupied()
            .map(|(_, c)| {
                let p = c / n;
                p * (1.0 / p).log2()
            })
            .sum()
    }
}

fn require_nonempty(block: &[u8]) -> Result<()> {
    if block.is_empty() {
        Err(Error::InvalidInput("empty block".into()))
    } else {
        Ok(())
    }
}

/// All fourteen global statistics, with the proxy computed by DEFLATE.
pub fn global_features(block: &[u8]) -> Result<FeatureVector> {
    global_features_with(block, Compressor::Deflate)
}

pub fn global_features_with(block: &[u8], compressor: Compressor) -> Result<FeatureVector> {
    require_nonempty(block)?;
    let h = Histogram::of(block);
    let mean = h.mean();
    let m2 = h.central_moment(mean, 2);
    let (skewness, kurtosis) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (
            h.central_moment(mean, 3) / m2.powf(1.5),
            h.central_moment(mean, 4) / (m2 * m2) - 3.0,
        )
    };
    Ok(FeatureVector {
        kolmogorov_proxy: kolmogorov_proxy(block, compressor),
        arithmetic_mean: mean,
        geometric_mean: h.geometric_mean(),
        harmonic_mean: h.harmonic_mean(),
        std_dev: m2.sqrt(),
        mean_abs_dev: h.mean_abs_dev(),
        hamming_weight: h.hamming_weight(),
        kurtosis,
        skewness,
        longest_streak: longest_streak(block) as f64,
        low_ascii_freq: h.low_ascii_freq(),
        med_ascii_freq: h.med_ascii_freq(),
        high_ascii_freq: h.high_ascii_freq(),
        shannon_entropy: h.entropy(),
    })
}

/// Entropy of the empirical byte distribution in bits per byte; 0 for an
/// empty block.
pub fn shannon_entropy(block: &[u8]) -> f64 {
    if block.is_empty() {
        return 0.0;
    }
    Histogram::of(block).entropy()
}

/// Longest run of one repeated byte; 0 for an empty block.
pub fn longest_streak(block: &[u8]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev = None;
    for &b in block {
        if Some(b) == prev {
            run += 1;
        } else {
            run = 1;
            prev = Some(b);
        }
        best = best.max(run);
    }
    best
}

/// Compressed length of `block`.
pub fn compressed_len(block: &[u8], compressor: Compressor) -> usize {
    match compressor {
        Compressor::Deflate => {
            let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(block).expect("writing to a Vec cannot fail");
            enc.finish().expect("writing to a Vec cannot fail").len()
        }
        Compressor::Bwt => {
            let mut out = Vec::new();
            bzip2::read::BzEncoder::new(block, bzip2::Compression::best())
                .read_to_end(&mut out)
                .expect("in-memory compression cannot fail");
            out.len()
        }
    }
}

/// `1 - compressed/original`, clamped to `[-1, 1]`. Near 1 for highly
/// redundant blocks, at or below 0 for incompressible ones.
pub fn kolmogorov_proxy(block: &[u8], compressor: Compressor) -> f64 {
    if block.is_empty() {
        return 0.0;
    }
    let ratio = compressed_len(block, compressor) as f64 / block.len() as f64;
    (1.0 - ratio).clamp(-1.0, 1.0)
}

/// Writes a feature table: `index,label,` then the fourteen feature columns.
pub fn write_feature_csv<W: Write>(
    mut out: W,
    rows: impl IntoIterator<Item = (usize, String, FeatureVector)>,
) -> Result<()> {
    writeln!(out, "index,label,{}", FeatureVector::NAMES.join(","))?;
    for (index, label, fv) in rows {
        write!(out, "{index},{label}")?;
        for v in fv.to_array() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
