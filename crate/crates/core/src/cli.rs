//! The `fragnet` command line: dataset synthesis, training, architecture
//! search, carving, evaluation and feature extraction.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;

use crate::corpus::{load_dataset, synth_blocks, write_archive, Dataset, LoadOptions, Scenario, Split, SynthKind};
use crate::error::{Error, Result};
use crate::features::{
    compressed_len, cooccurrence, global_features_with, longest_streak, write_feature_csv, Compressor, FeatureVector,
    Histogram,
};
use crate::net::{
    build_model, evaluate, train, tuned, write_history_csv, HyperParams, ModelSpec, SavedModel, TrainConfig, EVAL_BATCH,
};
use crate::tpe::{run_search, write_ei_trace, write_search_log, SearchSpace, TpeState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MODEL_FILE: &str = "model.fnm";

#[derive(Debug, Parser)]
#[command(
    name = "fragnet",
    version,
    about = "File-type identification of fixed-size byte blocks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled block archive.
    Synth(SynthArgs),
    /// Train a classifier and write the model and per-epoch history.
    Train(TrainArgs),
    /// Search the architecture grid, then retrain the best configuration.
    Search(SearchArgs),
    /// Classify every aligned block of a disk image.
    Carve(CarveArgs),
    /// Score a model on the hold-out split.
    Eval(EvalArgs),
    /// Dump the global statistical features and their extraction cost.
    Features(FeaturesArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// 512 or 4096; defaults to the dataset's or model's own block size.
    #[arg(long, value_parser = parse_block_size)]
    pub block_size: Option<usize>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub scenario: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// `key = value` file supplying any flag; the command line wins.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Pre-blocked archive or a directory of typed files.
    #[arg(long)]
    pub data: PathBuf,
    /// Blocks sampled per file when reading a directory.
    #[arg(long, default_value_t = 100)]
    pub blocks_per_file: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Comma-separated generators, one class each.
    #[arg(long, default_value = "constant,uniform_random,ascii_text,delta_structured")]
    pub kinds: String,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long, default_value = "synth.blocks")]
    pub name: String,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            learning_rate: self.learning_rate,
            early_stop_patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Layer notation such as `E (32) - C1D (64, 11) - MP (4) - AP - D (0.1) - F (64) - F (4)`;
    /// defaults to the tuned model for the scenario and block size.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 225)]
    pub budget: usize,
    #[arg(long, default_value_t = 20)]
    pub startup: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.4)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct CarveArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Ground truth, one class name or index per block, for a confusion heat map.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub data: DataArgs,
    /// `deflate` or `bwt`.
    #[arg(long, default_value = "deflate")]
    pub compressor: Compressor,
}

fn parse_block_size(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ (512 | 4096)) => Ok(n),
        _ => Err(format!("block size must be 512 or 4096, got `{s}`")),
    }
}

/// Per-class prediction counts; rows are truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![0; k * k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.n_classes();
        for label in [truth, predicted] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes() + predicted]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        let k = self.n_classes();
        self.counts[truth * k..(truth + 1) * k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.n_classes()).map(|i| self.count(i, i)).sum();
        trace as f64 / total as f64
    }

    /// Recall of each class, `None` for classes absent from the truth.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.n_classes())
            .map(|i| {
                let n = self.row_total(i);
                (n > 0).then(|| self.count(i, i) as f64 / n as f64)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "truth,{}", self.class_names.join(","))?;
        for (i, name) in self.class_names.iter().enumerate() {
            let row: Vec<String> = (0..self.n_classes()).map(|j| self.count(i, j).to_string()).collect();
            writeln!(out, "{name},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary portable pixmap; each cell is shaded by its share of the truth
    /// row, darker for larger shares.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        let k = self.n_classes();
        let cell = (600 / k.max(1)).clamp(1, 32);
        let side = k * cell;
        write!(out, "P6\n{side} {side}\n255\n")?;
        let mut row_px = Vec::with_capacity(side * 3);
        for i in 0..k {
            let total = self.row_total(i).max(1) as f64;
            row_px.clear();
            for j in 0..k {
                let shade = (255.0 * (1.0 - self.count(i, j) as f64 / total)).round() as u8;
                for _ in 0..cell {
                    row_px.extend_from_slice(&[shade, shade, shade]);
                }
            }
            for _ in 0..cell {
                out.write_all(&row_px)?;
            }
        }
        Ok(())
    }
}

/// Classification of one aligned block of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct CarveRecord {
    pub offset: u64,
    pub class: usize,
    pub probability: f64,
}

#[derive(Clone, Debug)]
pub struct CarveReport {
    pub block_size: usize,
    pub class_names: Vec<String>,
    pub records: Vec<CarveRecord>,
    /// Blocks per predicted class.
    pub histogram: Vec<usize>,
    /// Bytes after the last whole block, which are not classified.
    pub skipped_tail: usize,
    pub ms_per_block: f64,
    pub min_per_gib: f64,
}

/// Minutes to classify 2^30 bytes at `ms_per_block`.
pub fn min_per_gib(ms_per_block: f64, block_size: usize) -> f64 {
    ms_per_block * ((1u64 << 30) as f64 / block_size as f64) / 60_000.0
}

/// Classifies every aligned block of `image` on a pool of `threads`
/// workers. Records come back in offset order.
pub fn carve(image: &[u8], saved: &SavedModel, threads: usize) -> Result<CarveReport> {
    let model = &saved.model;
    let block_size = model.spec().block_size;
    if image.len() < block_size {
        return Err(Error::InvalidInput(format!(
            "image of {} bytes is smaller than one {block_size}-byte block",
            image.len()
        )));
    }
    let whole = image.len() / block_size * block_size;
    let blocks: Vec<&[u8]> = image[..whole].chunks_exact(block_size).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let chunks: Vec<Vec<(usize, f64)>> = pool.install(|| {
        blocks
            .par_chunks(EVAL_BATCH)
            .map(|chunk| model.predict(chunk))
            .collect::<Result<_>>()
    })?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut histogram = vec![0; model.spec().n_classes];
    let records: Vec<CarveRecord> = chunks
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (class, probability))| {
            histogram[class] += 1;
            CarveRecord {
                offset: (i * block_size) as u64,
                class,
                probability,
            }
        })
        .collect();
    let ms_per_block = elapsed_ms / records.len() as f64;
    Ok(CarveReport {
        block_size,
        class_names: saved.class_names.clone(),
        histogram,
        skipped_tail: image.len() - whole,
        ms_per_block,
        min_per_gib: min_per_gib(ms_per_block, block_size),
        records,
    })
}

/// Parses, runs and maps the outcome to an exit code. Messages go to
/// stdout and errors to stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
        Err(ParseFailure::Other(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub enum ParseFailure {
    Clap(clap::Error),
    Other(Error),
}

/// Parses the command line after splicing in the `--config` file, whose
/// entries go before the user's flags so that explicit flags take
/// precedence.
pub fn parse(args: Vec<OsString>) -> std::result::Result<Cli, ParseFailure> {
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let args = splice_config(&cmd, args).map_err(ParseFailure::Other)?;
    let matches = cmd.try_get_matches_from(args).map_err(ParseFailure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)
}

fn splice_config(cmd: &clap::Command, mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let text: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in text.iter().enumerate() {
        if a == "--config" {
            path = text.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let (Some(path), Some(sub_name)) = (path, text.get(1)) else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(sub_name) else {
        return Ok(args);
    };
    let body = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (n, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("{path}:{}: expected key = value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Usage(format!("{path}:{}: unknown option `{key}`", n + 1)))?;
        if key == "config" {
            return Err(Error::Usage(format!("{path}: config files cannot nest")));
        }
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else if matches!(value, "true" | "1" | "yes") {
            injected.push(format!("--{key}").into());
        }
    }
    args.splice(2..2, injected);
    Ok(args)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Search(a) => cmd_search(&a),
        Command::Carve(a) => cmd_carve(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Features(a) => cmd_features(&a),
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::file(path, e))?,
    ))
}

fn read_dataset(shared: &Shared, data: &DataArgs) -> Result<Dataset> {
    let scenario = Scenario::from_id(shared.scenario)?;
    let d = load_dataset(
        &data.data,
        &LoadOptions {
            scenario,
            seed: shared.seed,
            block_size: shared.block_size.unwrap_or(512),
            blocks_per_file: data.blocks_per_file,
        },
    )?;
    if let Some(bs) = shared.block_size {
        if bs != d.block_size {
            return Err(Error::InvalidInput(format!(
                "{} holds {}-byte blocks, not {bs}",
                data.data.display(),
                d.block_size
            )));
        }
    }
    Ok(d)
}

fn default_architecture(scenario: u8, data: &Dataset) -> Result<ModelSpec> {
    let m = tuned(scenario, data.block_size).ok_or_else(|| {
        Error::InvalidInput(format!(
            "no tuned architecture for {}-byte blocks; pass --arch",
            data.block_size
        ))
    })?;
    m.spec()?.with_classes(data.n_classes())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let kinds: Vec<SynthKind> = a
        .kinds
        .split(',')
        .map(|k| k.trim().parse())
        .collect::<Result<_>>()
        .map_err(|e| Error::Usage(e.to_string()))?;
    if kinds.len() < 2 {
        return Err(Error::Usage("need at least two generators".into()));
    }
    let block_size = a.shared.block_size.unwrap_or(512);
    let spec: Vec<_> = kinds.iter().map(|&k| (k, a.per_class)).collect();
    let blocks = synth_blocks(&spec, block_size, a.shared.seed)?;
    let names: Vec<String> = kinds.iter().map(|k| k.name().to_string()).collect();
    create_out_dir(&a.shared.out)?;
    let path = a.shared.out.join(&a.name);
    write_archive(&path, block_size, &blocks, Some(&names))?;
    println!(
        "wrote {} blocks of {block_size} bytes to {}",
        blocks.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = read_dataset(&a.shared, &a.data)?;
    let spec = match &a.arch {
        Some(text) => ModelSpec::from_notation(text, data.block_size)?.with_classes(data.n_classes())?,
        None => default_architecture(a.shared.scenario, &data)?,
    };
    let cfg = a.training.config(a.shared.seed);
    println!(
        "training {spec} ({} parameters) on {} blocks",
        spec.param_count()?,
        data.len()
    );
    let out = train(&spec, &data, &cfg)?;
    create_out_dir(&a.shared.out)?;
    let history = a.shared.out.join("history.csv");
    write_history_csv(create_file(&history)?, &out.history)?;
    let saved = SavedModel {
        model: out.model,
        class_names: data.class_names.clone(),
        seed: a.shared.seed,
    };
    saved.save(&a.shared.out.join(MODEL_FILE))?;
    for r in &out.history {
        println!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    }
    let test = evaluate(&saved.model, &data.blocks_in(Split::Test))?;
    println!(
        "best epoch {} (val acc {:.4}); hold-out accuracy {:.4}",
        out.best_epoch, out.best_val_accuracy, test.accuracy
    );
    Ok(())
}

pub fn cmd_search(a: &SearchArgs) -> Result<()> {
    if a.budget < a.startup {
        return Err(Error::Usage(format!(
            "budget {} is smaller than the {} warm-up trials",
            a.budget, a.startup
        )));
    }
    let data = read_dataset(&a.shared, &a.data)?;
    let space = SearchSpace::architecture();
    let state = TpeState {
        n_startup: a.startup,
        n_total: a.budget,
        gamma: a.gamma,
        ..TpeState::new(space.clone(), a.shared.seed)
    };
    let trial_cfg = TrainConfig {
        data_fraction_train: a.train_fraction,
        data_fraction_val: a.val_fraction,
        ..a.training.config(a.shared.seed)
    };
    trial_cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let objective = |config: &[usize]| -> Result<f64> {
        let hp = to_hyper_params(config)?;
        let spec = build_model(&hp, data.block_size, data.n_classes())?;
        Ok(train(&spec, &data, &trial_cfg)?.best_val_accuracy)
    };
    let result = run_search(state, objective)?;
    create_out_dir(&a.shared.out)?;
    write_search_log(
        create_file(&a.shared.out.join("search_log.csv"))?,
        &space,
        &result.history,
    )?;
    write_ei_trace(create_file(&a.shared.out.join("ei_trace.csv"))?, &result.ei_trace)?;

    let hp = to_hyper_params(&result.best.config)?;
    let spec = build_model(&hp, data.block_size, data.n_classes())?;
    println!(
        "best trial {} scored {:.4}: {spec}; retraining on all data",
        result.best.index,
        result.best.effective_score()
    );
    let out = train(&spec, &data, &a.training.config(a.shared.seed))?;
    write_history_csv(create_file(&a.shared.out.join("history.csv"))?, &out.history)?;
    let saved = SavedModel {
        model: out.model,
        class_names: data.class_names.clone(),
        seed: a.shared.seed,
    };
    saved.save(&a.shared.out.join(MODEL_FILE))?;
    let test = evaluate(&saved.model, &data.blocks_in(Split::Test))?;
    println!("hold-out accuracy {:.4}", test.accuracy);
    Ok(())
}

fn to_hyper_params(config: &[usize]) -> Result<HyperParams> {
    let values: [usize; 6] = config
        .try_into()
        .map_err(|_| Error::InvalidInput(format!("expected 6 hyper-parameters, got {}", config.len())))?;
    Ok(HyperParams::from_values(values))
}

/// Reads ground truth for carving: one class name or index per line.
fn read_truth(path: &Path, class_names: &[String]) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            class_names
                .iter()
                .position(|n| n == l)
                .or_else(|| l.parse().ok().filter(|&i: &usize| i < class_names.len()))
                .ok_or_else(|| Error::format("truth file", format!("unknown class `{l}`")))
        })
        .collect()
}

pub fn cmd_carve(a: &CarveArgs) -> Result<()> {
    let saved = SavedModel::load(&a.model)?;
    let block_size = saved.model.spec().block_size;
    if let Some(bs) = a.shared.block_size {
        if bs != block_size {
            return Err(Error::InvalidInput(format!(
                "model reads {block_size}-byte blocks, not {bs}"
            )));
        }
    }
    let image = fs::read(&a.image).map_err(|e| Error::file(&a.image, e))?;
    let report = carve(&image, &saved, a.shared.threads as usize)?;
    if report.skipped_tail > 0 {
        eprintln!(
            "warning: ignoring trailing partial block of {} bytes",
            report.skipped_tail
        );
    }
    create_out_dir(&a.shared.out)?;
    let mut out = create_file(&a.shared.out.join("carve.csv"))?;
    writeln!(out, "offset,class,probability")?;
    for r in &report.records {
        writeln!(out, "{},{},{}", r.offset, report.class_names[r.class], r.probability)?;
    }
    out.flush()?;
    let mut hist = create_file(&a.shared.out.join("histogram.csv"))?;
    writeln!(hist, "class,blocks")?;
    for (name, n) in report.class_names.iter().zip(&report.histogram) {
        writeln!(hist, "{name},{n}")?;
        println!("{name:>20} {n}");
    }
    hist.flush()?;
    println!(
        "{} blocks; {:.4} ms/block, {:.3} min/GiB",
        report.records.len(),
        report.ms_per_block,
        report.min_per_gib
    );
    if let Some(path) = &a.truth {
        let truth = read_truth(path, &report.class_names)?;
        if truth.len() != report.records.len() {
            return Err(Error::InvalidInput(format!(
                "{} truth labels for {} blocks",
                truth.len(),
                report.records.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(report.class_names.clone());
        for (&t, r) in truth.iter().zip(&report.records) {
            cm.record(t, r.class)?;
        }
        cm.write_csv(create_file(&a.shared.out.join("confusion.csv"))?)?;
        cm.write_ppm(create_file(&a.shared.out.join("confusion.ppm"))?)?;
        println!("accuracy against truth {:.4}", cm.accuracy());
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let saved = SavedModel::load(&a.model)?;
    let data = read_dataset(&a.shared, &a.data)?;
    let model = &saved.model;
    if model.spec().n_classes != data.n_classes() {
        return Err(Error::InvalidInput(format!(
            "model predicts {} classes, dataset has {}",
            model.spec().n_classes,
            data.n_classes()
        )));
    }
    let test = data.blocks_in(Split::Test);
    let eval = evaluate(model, &test)?;
    let mut cm = ConfusionMatrix::new(data.class_names.clone());
    for (b, &(pred, _)) in test.iter().zip(&eval.predictions) {
        cm.record(b.label, pred)?;
    }
    create_out_dir(&a.shared.out)?;
    cm.write_csv(create_file(&a.shared.out.join("confusion.csv"))?)?;
    cm.write_ppm(create_file(&a.shared.out.join("confusion.ppm"))?)?;
    println!("accuracy {:.4} on {} hold-out blocks", cm.accuracy(), cm.total());
    for (name, acc) in cm.class_names.iter().zip(cm.per_class_accuracy()) {
        match acc {
            Some(acc) => println!("{name:>20} {acc:.4}"),
            None => println!("{name:>20} -"),
        }
    }
    let jpeg = cm
        .class_names
        .iter()
        .position(|n| n.eq_ignore_ascii_case("jpeg") || n.eq_ignore_ascii_case("jpg"));
    if let Some(acc) = jpeg.and_then(|j| cm.per_class_accuracy()[j]) {
        println!("JPEG accuracy {acc:.4}");
    }
    Ok(())
}

/// Mean milliseconds per block of `f` over `blocks`.
fn time_per_block(blocks: &[&[u8]], mut f: impl FnMut(&[u8]) -> f64) -> f64 {
    let started = Instant::now();
    let mut sink = 0.0;
    for b in blocks {
        sink += f(b);
    }
    std::hint::black_box(sink);
    started.elapsed().as_secs_f64() * 1e3 / blocks.len().max(1) as f64
}

/// Mean extraction cost of each global feature and of the co-occurrence
/// matrix, in ms/block, in CSV column order followed by `bigram`.
pub fn feature_timings(blocks: &[&[u8]], compressor: Compressor) -> Vec<(&'static str, f64)> {
    type Stat = fn(&Histogram) -> f64;
    let hist_stats: [(&str, Stat); 11] = [
        ("arithmetic_mean", Histogram::mean),
        ("geometric_mean", Histogram::geometric_mean),
        ("harmonic_mean", Histogram::harmonic_mean),
        ("std_dev", Histogram::std_dev),
        ("mean_abs_dev", Histogram::mean_abs_dev),
        ("hamming_weight", Histogram::hamming_weight),
        ("kurtosis", Histogram::kurtosis),
        ("skewness", Histogram::skewness),
        ("low_ascii_freq", Histogram::low_ascii_freq),
        ("med_ascii_freq", Histogram::med_ascii_freq),
        ("high_ascii_freq", Histogram::high_ascii_freq),
    ];
    let mut out = Vec::new();
    for name in FeatureVector::NAMES {
        let ms = match name {
            "kolmogorov_proxy" => time_per_block(blocks, |b| compressed_len(b, compressor) as f64),
            "longest_streak" => time_per_block(blocks, |b| longest_streak(b) as f64),
            "shannon_entropy" => time_per_block(blocks, |b| Histogram::of(b).entropy()),
            _ => {
                let stat = hist_stats
                    .iter()
                    .find(|(n, _)| *n == name)
                    .expect("every histogram feature has a timer")
                    .1;
                time_per_block(blocks, |b| stat(&Histogram::of(b)))
            }
        };
        out.push((name, ms));
    }
    out.push((
        "bigram",
        time_per_block(blocks, |b| cooccurrence(b).map_or(0.0, |m| m.pooled(0, 0))),
    ));
    out
}

pub fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    let data = read_dataset(&a.shared, &a.data)?;
    create_out_dir(&a.shared.out)?;
    let rows = data
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok((
                i,
                data.class_names[b.label].clone(),
                global_features_with(&b.bytes, a.compressor)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    write_feature_csv(create_file(&a.shared.out.join("features.csv"))?, rows)?;
    let blocks: Vec<&[u8]> = data.blocks.iter().map(|b| b.bytes.as_slice()).collect();
    let mut timing = create_file(&a.shared.out.join("feature_timing.csv"))?;
    writeln!(timing, "feature,ms_per_block")?;
    let mut total = 0.0;
    for (name, ms) in feature_timings(&blocks, a.compressor) {
        writeln!(timing, "{name},{ms}")?;
        println!("{name:>18} {ms:.5} ms/block");
        if name != "bigram" {
            total += ms;
        }
    }
    timing.flush()?;
    println!("{:>18} {total:.5} ms/block for the global features", "total");
    Ok(())
}
