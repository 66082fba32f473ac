//! Trains the binary JPEG-vs-other architecture, resized to four classes, on
//! a synthetic corpus and reports per-epoch metrics and hold-out accuracy.
//!
//! cargo run --release --example synth_train -- [blocks_per_class] [seed]

use std::time::Instant;

use anyhow::Context;
use fragnet::corpus::{synth_corpus, Split, SynthKind};
use fragnet::net::{evaluate, train, tuned, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let kinds = [
        SynthKind::Constant,
        SynthKind::UniformRandom,
        SynthKind::AsciiText,
        SynthKind::DeltaStructured,
    ];
    let spec: Vec<_> = kinds.iter().map(|&k| (k, per_class)).collect();
    let data = synth_corpus(&spec, 512, seed)?;
    let arch = tuned(5, 512)
        .context("no tuned 512-byte model for scenario 5")?
        .spec()?
        .with_classes(kinds.len())?;
    println!("{arch}  ({} parameters)", arch.param_count()?);

    let started = Instant::now();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let out = train(&arch, &data, &cfg)?;
    for r in &out.history {
        println!(
            "epoch {:2}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    }
    let test = evaluate(&out.model, &data.blocks_in(Split::Test))?;
    println!(
        "best epoch {}  hold-out accuracy {:.4}  ({:.1} s)",
        out.best_epoch,
        test.accuracy,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
