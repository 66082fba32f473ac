use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use super::{sample_blocks, split, Block, Dataset, Scenario, Taxonomy};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &str = "fragnet-blocks v1";

/// Contents of a pre-blocked archive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Archive {
    pub block_size: usize,
    pub blocks: Vec<Block>,
    /// Present when a `<archive>.classes` file accompanies the archive; the
    /// labels are then class indices rather than base file-type labels.
    pub class_names: Option<Vec<String>>,
}

fn classes_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".classes");
    PathBuf::from(name)
}

/// Writes `fragnet-blocks v1 <block_size> <n>\n`, the concatenated blocks,
/// then one little-endian `u16` label per block. With `class_names`, also
/// writes the `.classes` file, one name per line.
pub fn write_archive(path: &Path, block_size: usize, blocks: &[Block], class_names: Option<&[String]>) -> Result<()> {
    let mut out = Vec::with_capacity(blocks.len() * (block_size + 2) + 64);
    writeln!(out, "{ARCHIVE_MAGIC} {block_size} {}", blocks.len())?;
    for (index, b) in blocks.iter().enumerate() {
        if b.bytes.len() != block_size {
            return Err(Error::BlockLength {
                index,
                len: b.bytes.len(),
                expected: block_size,
            });
        }
        out.extend_from_slice(&b.bytes);
    }
    for b in blocks {
        let label = u16::try_from(b.label)
            .map_err(|_| Error::InvalidInput(format!("label {} does not fit in 16 bits", b.label)))?;
        out.extend_from_slice(&label.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))?;
    if let Some(names) = class_names {
        let sidecar = classes_path(path);
        let mut text = names.join("\n");
        text.push('\n');
        fs::write(&sidecar, text).map_err(|e| Error::file(&sidecar, e))?;
    }
    Ok(())
}

pub fn read_class_names(path: &Path) -> Result<Option<Vec<String>>> {
    let sidecar = classes_path(path);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::file(&sidecar, e))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let data = fs::read(path).map_err(|e| Error::file(path, e))?;
    let bad = |reason: String| Error::format("block archive", reason);
    let newline = data
        .iter()
        .take(128)
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&data[..newline]).map_err(|_| bad("header is not text".into()))?;
    let rest = header
        .strip_prefix(ARCHIVE_MAGIC)
        .ok_or_else(|| bad(format!("header `{header}` lacks `{ARCHIVE_MAGIC}`")))?;
    let nums: Vec<usize> = rest
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad number `{t}` in header"))))
        .collect::<Result<_>>()?;
    let [block_size, n] = nums[..] else {
        return Err(bad("header needs a block size and a block count".into()));
    };
    if block_size == 0 {
        return Err(bad("block size is zero".into()));
    }
    let body = &data[newline + 1..];
    let expected = n
        .checked_mul(block_size + 2)
        .ok_or_else(|| bad("block count overflows".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "{n} blocks of {block_size} bytes need {expected} bytes after the header, found {}",
            body.len()
        )));
    }
    let (raw, labels) = body.split_at(n * block_size);
    let blocks = raw
        .chunks_exact(block_size)
        .zip(labels.chunks_exact(2))
        .map(|(b, l)| Block {
            bytes: b.to_vec(),
            label: u16::from_le_bytes([l[0], l[1]]) as usize,
        })
        .collect();
    Ok(Archive {
        block_size,
        blocks,
        class_names: read_class_names(path)?,
    })
}

/// Samples `per_file` blocks from every file under `dir` whose extension is
/// in the taxonomy, labeling them with base file-type labels. Files are
/// visited in path order and each draws from its own seeded stream.
pub fn ingest_dir(dir: &Path, block_size: usize, per_file: usize, seed: u64) -> Result<Vec<Block>> {
    let tax = Taxonomy::builtin();
    let mut blocks = Vec::new();
    let mut file_id = 0u64;
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::file(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let Some(ty) = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .and_then(|e| tax.by_extension(e))
        else {
            continue;
        };
        let bytes = fs::read(entry.path()).map_err(|e| Error::file(entry.path(), e))?;
        file_id += 1;
        if bytes.len() < block_size {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(file_id);
        let file_seed = rand::Rng::gen::<u64>(&mut rng);
        for b in sample_blocks(&bytes, block_size, per_file, file_seed)? {
            blocks.push(Block {
                bytes: b,
                label: ty.label,
            });
        }
    }
    Ok(blocks)
}

/// Where a dataset comes from and how to read it.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub scenario: Scenario,
    pub seed: u64,
    /// Block size for directory ingestion; archives carry their own.
    pub block_size: usize,
    pub blocks_per_file: usize,
}

/// Reads an archive or a directory of files and splits it.
///
/// Archives with a `.classes` file are taken as already labeled by class.
/// Otherwise labels are base file types and are mapped through the
/// scenario, dropping excluded types.
pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let (blocks, names) = if path.is_dir() {
        (
            ingest_dir(path, opts.block_size, opts.blocks_per_file, opts.seed)?,
            None,
        )
    } else {
        let a = read_archive(path)?;
        (a.blocks, a.class_names)
    };
    if blocks.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no blocks", path.display())));
    }
    match names {
        Some(names) => split(blocks, names, opts.seed),
        None => {
            let mapped = blocks
                .into_iter()
                .filter_map(|b| opts.scenario.map(b.label).map(|label| Block { bytes: b.bytes, label }))
                .collect();
            split(mapped, opts.scenario.class_names(), opts.seed)
        }
    }
}
