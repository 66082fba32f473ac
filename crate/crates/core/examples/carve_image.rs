//! Trains a small classifier on synthetic data, assembles a disk image from
//! fresh blocks of known type and carves it block by block.

use fragnet::cli::carve;
use fragnet::corpus::{synth_blocks, synth_corpus, SynthKind};
use fragnet::net::{train, ModelSpec, SavedModel, TrainConfig};

const KINDS: [SynthKind; 4] = [
    SynthKind::Constant,
    SynthKind::UniformRandom,
    SynthKind::AsciiText,
    SynthKind::DeltaStructured,
];

fn main() -> anyhow::Result<()> {
    let spec: Vec<_> = KINDS.iter().map(|&k| (k, 1500)).collect();
    let data = synth_corpus(&spec, 512, 5)?;
    let arch = ModelSpec::from_notation("E (8) - C1D (16, 3) - MP (4) - AP - F (16) - F (4)", 512)?;
    let cfg = TrainConfig {
        max_epochs: 6,
        learning_rate: 5e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&arch, &data, &cfg)?;
    println!("trained to validation accuracy {:.4}", out.best_val_accuracy);
    let saved = SavedModel {
        model: out.model,
        class_names: data.class_names.clone(),
        seed: 5,
    };

    // Interleave 25 unseen blocks of each kind, seeded apart from training.
    let fresh: Vec<_> = KINDS.iter().map(|&k| (k, 25)).collect();
    let mut blocks = synth_blocks(&fresh, 512, 99)?;
    blocks.sort_by_key(|b| b.bytes[0]);
    let image: Vec<u8> = blocks.iter().flat_map(|b| b.bytes.iter().copied()).collect();

    let report = carve(&image, &saved, 1)?;
    let correct = report
        .records
        .iter()
        .zip(&blocks)
        .filter(|(r, b)| r.class == b.label)
        .count();
    println!(
        "{} blocks, {} correct, {:.3} ms per block ({:.2} min/GiB)",
        report.records.len(),
        correct,
        report.ms_per_block,
        report.min_per_gib
    );
    for (name, n) in report.class_names.iter().zip(&report.histogram) {
        println!("  {name:<16} {n}");
    }
    Ok(())
}
