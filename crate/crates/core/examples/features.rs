//! Global statistics and pooled co-occurrence for a few synthetic blocks, or
//! for the first block of a file given on the command line.
//!
//! cargo run --release --example features -- [file]

use fragnet::corpus::{synth_blocks, SynthKind};
use fragnet::features::{cooccurrence, global_features_with, Compressor, FeatureVector};

fn main() -> anyhow::Result<()> {
    let blocks: Vec<(String, Vec<u8>)> = match std::env::args().nth(1) {
        Some(path) => {
            let data = std::fs::read(&path)?;
            anyhow::ensure!(data.len() >= 512, "{path} is shorter than one 512-byte block");
            vec![(path, data[..512].to_vec())]
        }
        None => {
            let kinds = [
                SynthKind::Constant,
                SynthKind::UniformRandom,
                SynthKind::AsciiText,
                SynthKind::DeltaStructured,
                SynthKind::CompressedLike,
            ];
            let spec: Vec<_> = kinds.iter().map(|&k| (k, 1)).collect();
            synth_blocks(&spec, 512, 1)?
                .into_iter()
                .zip(kinds)
                .map(|(b, k)| (format!("{k:?}"), b.bytes))
                .collect()
        }
    };

    for (name, block) in &blocks {
        println!("{name}");
        let deflate = global_features_with(block, Compressor::Deflate)?;
        let bwt = global_features_with(block, Compressor::Bwt)?;
        for ((field, a), b) in FeatureVector::NAMES.iter().zip(deflate.to_array()).zip(bwt.to_array()) {
            if *field == "kolmogorov_proxy" {
                println!("  {field:<18} {a:>10.4}  (bwt {b:.4})");
            } else {
                println!("  {field:<18} {a:>10.4}");
            }
        }
        let co = cooccurrence(block)?;
        let busiest = co
            .pooled_values()
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, v)| (i / 128, i % 128, *v))
            .unwrap();
        println!(
            "  co-occurrence: {} pairs, densest pooled cell ({}, {}) = {:.4}",
            co.total(),
            busiest.0,
            busiest.1,
            busiest.2
        );
    }
    Ok(())
}
