use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split, Block, Dataset};
use crate::error::{Error, Result};

/// Generators for the synthetic stand-in corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SynthKind {
    /// One byte value repeated; entropy 0.
    Constant,
    /// Independent uniform bytes; entropy close to 8.
    UniformRandom,
    /// Printable words separated by spaces and occasional newlines.
    AsciiText,
    /// Little-endian integer ramps with small steps: structured, low entropy.
    DeltaStructured,
    /// A slice of a DEFLATE stream of generated text.
    CompressedLike,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Constant,
        SynthKind::UniformRandom,
        SynthKind::AsciiText,
        SynthKind::DeltaStructured,
        SynthKind::CompressedLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Constant => "constant",
            SynthKind::UniformRandom => "uniform_random",
            SynthKind::AsciiText => "ascii_text",
            SynthKind::DeltaStructured => "delta_structured",
            SynthKind::CompressedLike => "compressed_like",
        }
    }

    pub fn generate<R: Rng + ?Sized>(self, block_size: usize, rng: &mut R) -> Vec<u8> {
        match self {
            SynthKind::Constant => vec![rng.gen(); block_size],
            SynthKind::UniformRandom => {
                let mut b = vec![0u8; block_size];
                rng.fill(b.as_mut_slice());
                b
            }
            SynthKind::AsciiText => text(block_size, rng),
            SynthKind::DeltaStructured => ramp(block_size, rng),
            SynthKind::CompressedLike => compressed(block_size, rng),
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown generator `{s}`")))
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const WORD_CHARS: &[u8] = b"etaoinshrdlcumwfgypbvkjxqzETAOINSHRDLCUMWFGYPBVKJXQZ0123456789";
const PUNCT: &[u8] = b".,;:!?'\"()-";

fn text<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 16);
    let mut line = 0;
    while out.len() < len {
        let word = rng.gen_range(1..=9);
        for _ in 0..word {
            // Skewed toward the front of the alphabet, like natural text.
            let i = rng
                .gen_range(0..WORD_CHARS.len())
                .min(rng.gen_range(0..WORD_CHARS.len()));
            out.push(WORD_CHARS[i]);
        }
        line += word + 1;
        if rng.gen_bool(0.08) {
            out.push(PUNCT[rng.gen_range(0..PUNCT.len())]);
        }
        if line > 72 {
            out.push(b'\n');
            line = 0;
        } else {
            out.push(b' ');
        }
    }
    out.truncate(len);
    out
}

fn ramp<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<u8> {
    let width = [1usize, 2, 4][rng.gen_range(0..3)];
    let step: u64 = rng.gen_range(1..=3);
    let mut value: u64 = rng.gen_range(0..1 << 12);
    // Narrow records advance only every few positions to stay low-entropy.
    let hold = if width == 1 { rng.gen_range(4..=16) } else { 1 };
    let mut out = Vec::with_capacity(len + width);
    let mut held = 0;
    while out.len() < len {
        out.extend_from_slice(&value.to_le_bytes()[..width]);
        held += 1;
        if held == hold {
            value = value.wrapping_add(step);
            held = 0;
        }
    }
    out.truncate(len);
    out
}

fn compressed<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<u8> {
    // Skip the stream header so blocks resemble the interior of a file.
    let skip = 16;
    let mut plain = len * 4;
    loop {
        let source = text(plain, rng);
        let mut enc = flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&source).expect("writing to a Vec cannot fail");
        let packed = enc.finish().expect("writing to a Vec cannot fail");
        if packed.len() >= skip + len {
            return packed[skip..skip + len].to_vec();
        }
        plain *= 2;
    }
}

/// Generates blocks for each `(kind, count)` entry; the entry's position is
/// the label.
pub fn synth_blocks(spec: &[(SynthKind, usize)], block_size: usize, seed: u64) -> Result<Vec<Block>> {
    if block_size == 0 {
        return Err(Error::InvalidInput("block size must be positive".into()));
    }
    let mut blocks = Vec::new();
    for (label, &(kind, count)) in spec.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label as u64);
        for _ in 0..count {
            blocks.push(Block {
                bytes: kind.generate(block_size, &mut rng),
                label,
            });
        }
    }
    Ok(blocks)
}

/// A split synthetic dataset; class names are the generator names.
pub fn synth_corpus(spec: &[(SynthKind, usize)], block_size: usize, seed: u64) -> Result<Dataset> {
    let blocks = synth_blocks(spec, block_size, seed)?;
    let names = spec.iter().map(|(k, _)| k.name().to_string()).collect();
    split(blocks, names, seed)
}
