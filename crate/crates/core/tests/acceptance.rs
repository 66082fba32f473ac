//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.
//!
//! Criterion 8 needs a labeled block archive of real files; point
//! `FRAGNET_FFT75` at one (4096-byte blocks, base labels) to enable it.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use common::{
    brute_force_features, brute_force_pooled, checked_error, close, gradient_error, project, random_tensor,
    varied_block,
};
use fragnet::corpus::{load_dataset, synth_corpus, LoadOptions, Scenario, Split, SynthKind, Taxonomy};
use fragnet::features::{cooccurrence, global_features, FEATURE_COUNT};
use fragnet::net::{build_nn_co, evaluate, train, tuned, LayerSpec, Model, ModelSpec, TrainConfig};
use fragnet::tensor::{Graph, Precision, Var};
use fragnet::tpe::{run_search, Phase, SearchSpace, TpeState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Skip(String),
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "parameter counts of the tuned architectures",
            budget: Duration::from_secs(1),
            run: parameter_counts,
        },
        Criterion {
            id: 2,
            name: "gradients agree with central differences",
            budget: Duration::from_secs(60),
            run: gradients,
        },
        Criterion {
            id: 3,
            name: "features match brute-force oracles",
            budget: Duration::from_secs(60),
            run: feature_oracles,
        },
        Criterion {
            id: 4,
            name: "search finds the indicator optimum",
            budget: Duration::from_secs(60),
            run: tpe_convergence,
        },
        Criterion {
            id: 5,
            name: "desk-scale training on synthetic blocks",
            budget: Duration::from_secs(600),
            run: synthetic_training,
        },
        Criterion {
            id: 6,
            name: "scenario class compositions",
            budget: Duration::from_secs(1),
            run: scenario_mapping,
        },
        Criterion {
            id: 7,
            name: "train and search outputs are reproducible",
            budget: Duration::from_secs(300),
            run: cli_determinism,
        },
        Criterion {
            id: 8,
            name: "JPEG vs other on a real corpus",
            budget: Duration::from_secs(24 * 3600),
            run: real_corpus,
        },
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    // Keep panic messages out of the report; they are captured below.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        if let Some(f) = &filter {
            if !c.name.contains(f.as_str()) && f != &c.id.to_string() {
                continue;
            }
        }
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run));
        let took = started.elapsed();
        let (status, detail) = match result {
            Ok(Ok(Outcome::Pass(d))) if took <= c.budget => ("PASS", d),
            Ok(Ok(Outcome::Pass(d))) => ("FAIL", format!("{d}; over the {:?} budget", c.budget)),
            Ok(Ok(Outcome::Skip(d))) => ("SKIP", d),
            Ok(Err(e)) => ("FAIL", format!("{e:#}")),
            Err(p) => (
                "FAIL",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} criterion {} [{:.1}s] {}: {detail}",
            c.id,
            took.as_secs_f64(),
            c.name
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// Closed-form count from the layer list: embedding 256·d, convolution
/// f·(w·c + 1), dense u·(n + 1).
fn closed_form_count(spec: &ModelSpec) -> usize {
    let mut channels = match spec.input {
        fragnet::net::InputKind::Cooccurrence => 1,
        fragnet::net::InputKind::GlobalFeatures => FEATURE_COUNT,
        fragnet::net::InputKind::Bytes => 0,
    };
    let mut flat = 0;
    let mut side = 128usize;
    let mut total = 0;
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Embedding { dim } => {
                total += 256 * dim;
                channels = dim;
            }
            LayerSpec::Conv1d { filters, width, .. } => {
                total += filters * (width * channels + 1);
                channels = filters;
            }
            LayerSpec::Conv2d { filters, kernel } => {
                total += filters * (kernel * kernel * channels + 1);
                channels = filters;
                side -= kernel - 1;
                flat = side * side * channels;
            }
            LayerSpec::Dense { units } => {
                let inputs = if flat > 0 { flat } else { channels };
                total += units * (inputs + 1);
                channels = units;
                flat = 0;
            }
            _ => {}
        }
    }
    total
}

fn parameter_counts() -> Result<Outcome> {
    let table: [(u8, usize, &str, usize); 12] = [
        (1, 512, "E (64) - C1D (128, 27) - MP (4) - AP - D (0.1) - F (256) - F (75)", 289_995),
        (2, 512, "E (48) - C1D (128, 11) - MP (4) - C1D (128, 11) - MP (4) - AP - D (0.1) - F (64) - F (11)", 269_323),
        (3, 512, "E (64) - C1D (128, 27) - MP (2) - C1D (128, 27) - MP (2) - AP - D (0.1) - F (64) - F (25)", 690_073),
        (4, 512, "E (48) - C1D (128, 19) - MP (4) - C1D (128, 19) - MP (4) - AP - D (0.1) - F (256) - F (5)", 474_885),
        (5, 512, "E (64) - C1D (128, 35) - MP (8) - AP - D (0.1) - F (256) - F (2)", 336_770),
        (6, 512, "E (32) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - AP - D (0.1) - F (64) - F (2)", 242_114),
        (1, 4096, "E (32) - C1D (128, 19) - MP (4) - C1D (128, 19) - MP (4) - AP - D (0.1) - F (256) - F (75)", 449_867),
        (2, 4096, "E (32) - C1D (128, 27) - MP (8) - C1D (128, 27) - MP (8) - AP - D (0.1) - F (256) - F (11)", 597_259),
        (
            3,
            4096,
            "E (32) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - AP - D (0.1) - F (256) - F (25)",
            453_529,
        ),
        (4, 4096, "E (64) - C1D (128, 27) - MP (6) - C1D (128, 27) - MP (6) - AP - D (0.1) - F (32) - F (5)", 684_485),
        (
            5,
            4096,
            "E (48) - C1D (32, 35) - MP (6) - C1D (32, 35) - MP (6) - C1D (32, 35) - MP (6) - AP - D (0.1) - F (16) - F (2)",
            138_386,
        ),
        (6, 4096, "E (16) - C1D (128, 35) - MP (8) - C1D (128, 35) - MP (8) - AP - D (0.1) - F (128) - F (2)", 666_242),
    ];
    for (scenario, bs, notation, want) in table {
        let spec = ModelSpec::from_notation(notation, bs)?;
        let got = spec.param_count()?;
        ensure!(got == want, "#{scenario}/{bs}: built {got}, table says {want}");
        ensure!(
            closed_form_count(&spec) == want,
            "#{scenario}/{bs}: closed form disagrees"
        );
        let shipped = tuned(scenario, bs).context("missing shipped model")?.spec()?;
        ensure!(shipped == spec, "#{scenario}/{bs}: shipped spec differs from the table");
        let model = Model::<f32>::init(&spec, 0)?;
        ensure!(model.params().iter().map(|p| p.len()).sum::<usize>() == want);
    }
    let co = build_nn_co(75)?;
    ensure!(co.param_count()? == 44_304_571, "NN-CO has {}", co.param_count()?);
    ensure!(closed_form_count(&co) == 44_304_571);
    Ok(Outcome::Pass("12 models and NN-CO match exactly".into()))
}

type Tape<'a> = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a>;

fn gradients() -> Result<Outcome> {
    let tol = Precision::Verification.gradient_tolerance();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[2, 12, 3], 1.0);
        let k = random_tensor(&mut rng, &[4, 3, 3], 0.5);
        let b = random_tensor(&mut rng, &[4], 0.5);
        let w = random_tensor(&mut rng, &[3, 4], 0.5);
        let wb = random_tensor(&mut rng, &[3], 0.5);
        let k2 = random_tensor(&mut rng, &[2, 2, 2, 4], 0.5);
        let b2 = random_tensor(&mut rng, &[2], 0.5);
        let table = random_tensor(&mut rng, &[256, 3], 0.5);
        // Full-range bytes: repeated windows would tie inside max-pooling,
        // where the function has no derivative.
        let idx: Vec<u8> = (0..24).map(|_| rng.gen()).collect();
        let labels = [rng.gen_range(0..3), rng.gen_range(0..3)];
        let mask_seed: u64 = rng.gen();
        let idx = &idx;
        // Parameters: x, k, b, w, wb, k2, b2, table.
        let tapes: Vec<Tape> = vec![
            // Embedding, convolution, LeakyReLU, pooling, dropout, dense, loss.
            Box::new(move |g, p| {
                let e = g.embedding(p[7], idx, &[2, 12]).unwrap();
                let c = g.conv1d(e, p[1], p[2], 1).unwrap();
                let a = g.leaky_relu(c, 0.3).unwrap();
                let m = g.max_pool1d(a, 2).unwrap();
                let v = g.global_avg_pool(m).unwrap();
                let d = g.dropout(v, 0.3, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap();
                let o = g.dense(d, p[3], p[4]).unwrap();
                g.softmax_cross_entropy(o, &labels).unwrap().0
            }),
            Box::new(move |g, p| {
                let y = g.embed_conv1d(p[7], p[1], p[2], idx, &[2, 12], 2).unwrap();
                project(g, y, seed)
            }),
            Box::new(move |g, p| {
                let y = g.conv1d(p[0], p[1], p[2], 2).unwrap();
                project(g, y, seed)
            }),
            Box::new(move |g, p| {
                let c = g.conv1d(p[0], p[1], p[2], 1).unwrap();
                let c = g.reshape(c, &[2, 5, 2, 4]).unwrap();
                let y = g.conv2d(c, p[5], p[6]).unwrap();
                project(g, y, seed)
            }),
        ];
        let params = vec![x, k, b, w, wb, k2, b2, table];
        for tape in &tapes {
            worst = worst.max(gradient_error(&params, &**tape, None, tol));
            checks += 1;
        }
    }

    let spec = tuned(5, 512).context("shipped model")?.spec()?;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let data: Vec<Vec<u8>> = (0..3).map(|_| (0..512).map(|_| rng.gen()).collect()).collect();
        let blocks: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
        let labels = [0, 1, 0];
        let model = Model::<f64>::init(&spec, seed)?;
        let fresh = || ChaCha8Rng::seed_from_u64(seed);
        let (_, _, grads) = model.loss_and_grads(&blocks, &labels, true, &mut fresh())?;
        let mut work = model.clone();
        for (t, p) in model.params().iter().enumerate() {
            let mut pick = ChaCha8Rng::seed_from_u64(seed * 31 + t as u64);
            for _ in 0..3 {
                let i = pick.gen_range(0..p.len());
                let orig = p.values()[i];
                let e = checked_error(grads[t][i], orig, tol, |v| {
                    work.params_mut()[t].values_mut()[i] = v;
                    work.loss(&blocks, &labels, true, &mut fresh()).unwrap()
                });
                work.params_mut()[t].values_mut()[i] = orig;
                worst = worst.max(e);
            }
        }
        checks += 1;
    }
    ensure!(worst < tol, "max relative error {worst:e} >= {tol:e}");
    Ok(Outcome::Pass(format!(
        "{checks} checks over 10 seeds, max relative error {worst:.2e} < {tol:e}"
    )))
}

fn feature_oracles() -> Result<Outcome> {
    let mut compared = 0usize;
    for (size, seed) in [(512usize, 101u64), (4096, 202)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in 0..1000 {
            let block = varied_block(&mut rng, size);
            let got = global_features(&block)?.to_array();
            let want = brute_force_features(&block);
            for k in 0..FEATURE_COUNT {
                ensure!(
                    close(got[k], want[k], 1e-9),
                    "block {n}/{size} feature {k}: {} vs {}",
                    got[k],
                    want[k]
                );
            }
            let pooled = cooccurrence(&block)?;
            let oracle = brute_force_pooled(&block);
            for (i, (&a, &b)) in pooled.pooled_values().iter().zip(&oracle).enumerate() {
                ensure!(close(a, b, 1e-9), "block {n}/{size} pooled cell {i}: {a} vs {b}");
            }
            compared += 1;
        }
    }
    Ok(Outcome::Pass(format!(
        "{compared} blocks, 14 features and 16384 pooled cells each, 1e-9 relative"
    )))
}

fn tpe_convergence() -> Result<Outcome> {
    let space = SearchSpace::architecture();
    let d = space
        .dims()
        .iter()
        .position(|x| x.name == "conv_width")
        .context("dimension")?;
    let target = 35;
    let uniform = 1.0 / space.dims()[d].candidates.len() as f64;
    let (mut found, mut min_share) = (0, f64::MAX);
    for seed in 0..50 {
        let result = run_search(
            TpeState::new(space.clone(), seed),
            |c| Ok((c[d] == target) as u8 as f64),
        )?;
        found += (result.best.score == Some(1.0) && result.history.len() <= 225) as usize;
        let post: Vec<_> = result.history.iter().filter(|t| t.phase == Phase::Tpe).collect();
        let share = post.iter().filter(|t| t.config[d] == target).count() as f64 / post.len() as f64;
        min_share = min_share.min(share);
    }
    let rate = found as f64 / 50.0;
    ensure!(rate >= 0.99, "optimum found in {found}/50 runs");
    ensure!(
        min_share > 2.0 * uniform,
        "post-warm-up share {min_share:.3} <= {:.3}",
        2.0 * uniform
    );
    Ok(Outcome::Pass(format!(
        "found in {found}/50 runs; lowest post-warm-up share {min_share:.3} > {:.3}",
        2.0 * uniform
    )))
}

fn synthetic_training() -> Result<Outcome> {
    let kinds = [
        (SynthKind::Constant, 4000),
        (SynthKind::UniformRandom, 4000),
        (SynthKind::AsciiText, 4000),
        (SynthKind::DeltaStructured, 4000),
    ];
    let data = synth_corpus(&kinds, 512, 7)?;
    let spec = tuned(5, 512).context("shipped model")?.spec()?.with_classes(4)?;
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train(&spec, &data, &cfg)?;
    let acc = evaluate(&a.model, &data.blocks_in(Split::Test))?.accuracy;
    ensure!(a.history.len() <= 10, "{} epochs", a.history.len());
    ensure!(acc >= 0.95, "hold-out accuracy {acc:.4} < 0.95");
    // Same seed, same run.
    let b = train(&spec, &data, &cfg)?;
    ensure!(a.history == b.history, "histories differ between identical runs");
    ensure!(
        a.model.params() == b.model.params(),
        "parameters differ between identical runs"
    );
    Ok(Outcome::Pass(format!(
        "hold-out accuracy {acc:.4} after {} epochs; rerun identical",
        a.history.len()
    )))
}

fn scenario_mapping() -> Result<Outcome> {
    let tax = Taxonomy::builtin();
    ensure!(tax.len() == 75);
    // Types per class, in class order.
    let composition = |s: Scenario| -> Vec<usize> {
        let mut counts = vec![0; s.n_classes()];
        for l in 0..75 {
            if let Some(c) = s.map(l) {
                counts[c] += 1;
            }
        }
        counts
    };
    let mut expected: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    expected.insert(1, vec![1; 75]);
    expected.insert(2, vec![6, 11, 3, 7, 13, 4, 7, 4, 9, 7, 4]);
    let mut photographic = vec![1; 24];
    photographic.push(51);
    expected.insert(3, photographic);
    expected.insert(4, vec![1, 11, 7, 5, 51]);
    expected.insert(5, vec![1, 74]);
    expected.insert(6, vec![1, 16]);
    let class_counts = [75, 11, 25, 5, 2, 2];
    for s in Scenario::ALL {
        let want = &expected[&s.id()];
        let got = composition(s);
        ensure!(
            s.n_classes() == class_counts[s.id() as usize - 1],
            "scenario {} class count",
            s.id()
        );
        ensure!(&got == want, "scenario {}: {got:?} != {want:?}", s.id());
    }
    let included = composition(Scenario::JpegVsCamera).iter().sum::<usize>();
    ensure!(included == 17, "scenario 6 keeps {included} types");
    for t in tax.types() {
        let photographic = matches!(
            t.group,
            fragnet::corpus::Group::Raw | fragnet::corpus::Group::Video | fragnet::corpus::Group::Bitmap
        );
        if !photographic {
            ensure!(
                Scenario::JpegVsCamera.map(t.label).is_none(),
                "{} is not excluded",
                t.name
            );
        }
    }
    Ok(Outcome::Pass(
        "75/11/25/5/2/2 with the expected compositions; scenario 6 keeps 17 types".into(),
    ))
}

fn fragnet_cli(dir: &Path, args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_fragnet"))
        .current_dir(dir)
        .args(args)
        .output()?;
    if !out.status.success() {
        bail!("{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

/// File contents with the named trailing column removed from every row.
fn without_column(path: &Path, column: &str) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let header: Vec<&str> = text.lines().next().context("empty csv")?.split(',').collect();
    let drop = header.iter().position(|h| *h == column);
    Ok(text
        .lines()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            match drop {
                Some(i) => cols
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| *c)
                    .collect::<Vec<_>>()
                    .join(","),
                None => l.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn cli_determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    fragnet_cli(d, &["synth", "--block-size", "512", "--per-class", "30", "--seed", "1"])?;
    let runs: Vec<PathBuf> = (0..2).map(|i| d.join(format!("run{i}"))).collect();
    for run in &runs {
        let out = run.to_str().context("path")?;
        fragnet_cli(
            d,
            &[
                "train",
                "--data",
                "synth.blocks",
                "--scenario",
                "5",
                "--epochs",
                "2",
                "--batch-size",
                "32",
                "--seed",
                "4",
                "--out",
                &format!("{out}/train"),
            ],
        )?;
        fragnet_cli(
            d,
            &[
                "search",
                "--data",
                "synth.blocks",
                "--budget",
                "5",
                "--startup",
                "3",
                "--epochs",
                "2",
                "--seed",
                "4",
                "--out",
                &format!("{out}/search"),
            ],
        )?;
    }
    let files = [
        ("train/history.csv", None),
        ("train/model.fnm", None),
        ("search/search_log.csv", Some("wall_seconds")),
        ("search/ei_trace.csv", None),
        ("search/history.csv", None),
    ];
    for (file, timing) in files {
        let (a, b) = (runs[0].join(file), runs[1].join(file));
        let same = match timing {
            Some(col) => without_column(&a, col)? == without_column(&b, col)?,
            None => std::fs::read(&a)? == std::fs::read(&b)?,
        };
        ensure!(same, "{file} differs between identical runs");
    }
    Ok(Outcome::Pass(
        "history, model, search log and ratio trace byte-identical".into(),
    ))
}

fn real_corpus() -> Result<Outcome> {
    let Some(path) = std::env::var_os("FRAGNET_FFT75") else {
        return Ok(Outcome::Skip("FRAGNET_FFT75 is not set".into()));
    };
    let opts = LoadOptions {
        scenario: Scenario::JpegVsOther,
        seed: 0,
        block_size: 4096,
        blocks_per_file: 100,
    };
    let data = load_dataset(Path::new(&path), &opts)?;
    ensure!(data.block_size == 4096, "corpus has {}-byte blocks", data.block_size);
    let counts = data.class_counts(Split::Train);
    let spec = tuned(5, 4096).context("shipped model")?.spec()?;
    let out = train(&spec, &data, &TrainConfig::default())?;
    let acc = evaluate(&out.model, &data.blocks_in(Split::Test))?.accuracy;
    ensure!(acc >= 0.95, "hold-out accuracy {acc:.4} < 0.95");
    Ok(Outcome::Pass(format!(
        "hold-out accuracy {acc:.4}; training blocks per class {counts:?}"
    )))
}
