//! Labeled blocks: sampling from files, scenario class mappings, stratified
//! splits, synthetic corpora and the pre-blocked archive format.

mod archive;
mod synth;
mod taxonomy;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use archive::{
    ingest_dir, load_dataset, read_archive, read_class_names, write_archive, Archive, LoadOptions, ARCHIVE_MAGIC,
};
pub use synth::{synth_blocks, synth_corpus, SynthKind};
pub use taxonomy::{apply_scenario, FileType, Group, Scenario, Taxonomy, BASE_TYPES, TAXONOMY_TABLE};

/// Fewest blocks a class needs to appear in every split.
pub const MIN_CLASS_BLOCKS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub bytes: Vec<u8>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Blocks of one size with class labels and a train/val/test assignment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub block_size: usize,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub blocks: Vec<Block>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn blocks_in(&self, split: Split) -> Vec<&Block> {
        self.blocks
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(b, _)| b)
            .collect()
    }

    /// Blocks per class within one split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for b in self.blocks_in(split) {
            counts[b.label] += 1;
        }
        counts
    }
}

/// Draws `count` block-aligned blocks from `file`: without replacement when
/// the file holds at least `count` aligned blocks, with replacement
/// otherwise.
pub fn sample_blocks(file: &[u8], block_size: usize, count: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    if block_size == 0 {
        return Err(Error::InvalidInput("block size must be positive".into()));
    }
    let aligned = file.len() / block_size;
    if aligned == 0 {
        return Err(Error::InvalidInput(format!(
            "file of {} bytes is shorter than one {block_size}-byte block",
            file.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if count <= aligned {
        rand::seq::index::sample(&mut rng, aligned, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..aligned)).collect()
    };
    Ok(picks
        .into_iter()
        .map(|i| file[i * block_size..(i + 1) * block_size].to_vec())
        .collect())
}

/// Stratified 80/10/10 assignment. Within each class the blocks are
/// shuffled, then `round(n/10)` go to validation, as many to test, and the
/// rest to training.
pub fn split(blocks: Vec<Block>, class_names: Vec<String>, seed: u64) -> Result<Dataset> {
    let Some(first) = blocks.first() else {
        return Err(Error::InvalidInput("cannot split an empty block list".into()));
    };
    let block_size = first.bytes.len();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, b) in blocks.iter().enumerate() {
        if b.bytes.len() != block_size {
            return Err(Error::BlockLength {
                index: i,
                len: b.bytes.len(),
                expected: block_size,
            });
        }
        if b.label >= class_names.len() {
            return Err(Error::LabelOutOfRange {
                label: b.label,
                classes: class_names.len(),
            });
        }
        by_class.entry(b.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; blocks.len()];
    for (label, mut members) in by_class {
        let n = members.len();
        if n < MIN_CLASS_BLOCKS {
            return Err(Error::InvalidInput(format!(
                "class {label} ({}) has {n} blocks; at least {MIN_CLASS_BLOCKS} are needed to stratify",
                class_names[label]
            )));
        }
        members.shuffle(&mut rng);
        let tenth = (n as f64 / 10.0).round() as usize;
        for &i in &members[..tenth] {
            splits[i] = Split::Val;
        }
        for &i in &members[tenth..2 * tenth] {
            splits[i] = Split::Test;
        }
    }
    Ok(Dataset {
        block_size,
        seed,
        class_names,
        blocks,
        splits,
    })
}
