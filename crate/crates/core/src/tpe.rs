//! Tree-structured Parzen Estimator over a discrete grid.
//!
//! Each dimension gets two smoothed categorical densities, one from the
//! best-scoring trials and one from the rest; the next configuration takes,
//! per dimension, the candidate maximizing their ratio.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::HyperParams;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub candidates: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("search space needs a dimension".into()));
        }
        for d in &dims {
            if d.candidates.is_empty() {
                return Err(Error::InvalidInput(format!("dimension {} has no candidates", d.name)));
            }
            for (i, c) in d.candidates.iter().enumerate() {
                if d.candidates[..i].contains(c) {
                    return Err(Error::InvalidInput(format!(
                        "dimension {} repeats candidate {c}",
                        d.name
                    )));
                }
            }
        }
        Ok(SearchSpace { dims })
    }

    /// The six architecture hyper-parameters in [`HyperParams::NAMES`] order.
    pub fn architecture() -> Self {
        let dims = HyperParams::NAMES
            .iter()
            .zip(HyperParams::candidates())
            .map(|(name, c)| Dimension {
                name: name.to_string(),
                candidates: c.to_vec(),
            })
            .collect();
        SearchSpace::new(dims).expect("candidate sets are valid")
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn contains(&self, config: &[usize]) -> bool {
        config.len() == self.dims.len() && config.iter().zip(&self.dims).all(|(v, d)| d.candidates.contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Uniformly drawn warm-up trial.
    Random,
    /// Proposed by density-ratio maximization.
    Tpe,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Random => "random",
            Phase::Tpe => "tpe",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    /// One candidate value per dimension.
    pub config: Vec<usize>,
    /// Validation score, or `None` when evaluation failed.
    pub score: Option<f64>,
    pub phase: Phase,
    pub wall_seconds: f64,
}

impl Trial {
    /// Score used for ranking; failures count as 0.
    pub fn effective_score(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct TpeState {
    pub space: SearchSpace,
    pub history: Vec<Trial>,
    pub n_startup: usize,
    pub n_total: usize,
    pub gamma: f64,
    pub prior_weight: f64,
    pub seed: u64,
}

impl TpeState {
    /// Defaults: 20 warm-up trials out of 225, median split, unit prior.
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        TpeState {
            space,
            history: Vec::new(),
            n_startup: 20,
            n_total: 225,
            gamma: 0.5,
            prior_weight: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_startup > self.n_total {
            return Err(Error::Usage(format!(
                "budget of {} trials is smaller than the {} warm-up trials",
                self.n_total, self.n_startup
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidInput(format!("quantile {} outside (0, 1)", self.gamma)));
        }
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::InvalidInput("prior weight must be positive".into()));
        }
        Ok(())
    }
}

/// Smoothed categorical density `(count(c) + w) / (N + w·K)` of `observed`
/// over `candidates`.
pub fn densities(observed: &[usize], candidates: &[usize], prior_weight: f64) -> Vec<f64> {
    let denom = observed.len() as f64 + prior_weight * candidates.len() as f64;
    candidates
        .iter()
        .map(|c| (observed.iter().filter(|&&o| o == *c).count() as f64 + prior_weight) / denom)
        .collect()
}

/// Splits into the `ceil(gamma·N)` best trials and the rest. Failures score
/// 0; equal scores rank by lower trial index.
pub fn split_by_quantile(history: &[Trial], gamma: f64) -> (Vec<&Trial>, Vec<&Trial>) {
    let mut ranked: Vec<&Trial> = history.iter().collect();
    ranked.sort_by(|a, b| {
        b.effective_score()
            .total_cmp(&a.effective_score())
            .then(a.index.cmp(&b.index))
    });
    // The small slack keeps products such as 0.1 * 30 from rounding up.
    let n_top = ((gamma * history.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let rest = ranked.split_off(n_top.min(ranked.len()));
    (ranked, rest)
}

/// `p1(c) / p2(c)` for every candidate of dimension `dim`.
pub fn expected_improvement(top: &[&Trial], rest: &[&Trial], dim: &Dimension, d: usize, prior_weight: f64) -> Vec<f64> {
    let good: Vec<usize> = top.iter().map(|t| t.config[d]).collect();
    let bad: Vec<usize> = rest.iter().map(|t| t.config[d]).collect();
    let p1 = densities(&good, &dim.candidates, prior_weight);
    let p2 = densities(&bad, &dim.candidates, prior_weight);
    p1.iter().zip(&p2).map(|(a, b)| a / b).collect()
}

/// A proposed configuration with the per-dimension ratios behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Suggestion {
    pub config: Vec<usize>,
    pub phase: Phase,
    /// Per dimension, the ratio for every candidate; empty during warm-up.
    pub ei: Vec<Vec<f64>>,
}

/// Value of dimension `d` at warm-up trial `t`. Candidates are dealt in
/// rounds, each a fresh seeded shuffle, so every trial is uniform on its own
/// and every value shows up once per round. A value missing from the warm-up
/// could never win the ratio afterwards.
fn warm_up_value(seed: u64, d: usize, t: usize, candidates: &[usize]) -> usize {
    let k = candidates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(d as u64);
    let mut order: Vec<usize> = (0..k).collect();
    for _ in 0..=t / k {
        order.shuffle(&mut rng);
    }
    candidates[order[t % k]]
}

/// Next configuration to evaluate. Warm-up trials come from seeded shuffled
/// rounds per dimension; afterwards each dimension takes the first
/// candidate with the largest `p1/p2`.
pub fn suggest(state: &TpeState) -> Result<Suggestion> {
    state.validate()?;
    let t = state.history.len();
    if t >= state.n_total {
        return Err(Error::BudgetExhausted(state.n_total));
    }
    if t < state.n_startup || t == 0 {
        let config = state
            .space
            .dims()
            .iter()
            .enumerate()
            .map(|(d, dim)| warm_up_value(state.seed, d, t, &dim.candidates))
            .collect();
        return Ok(Suggestion {
            config,
            phase: Phase::Random,
            ei: Vec::new(),
        });
    }
    let (top, rest) = split_by_quantile(&state.history, state.gamma);
    let mut config = Vec::with_capacity(state.space.dims().len());
    let mut ei = Vec::with_capacity(state.space.dims().len());
    for (d, dim) in state.space.dims().iter().enumerate() {
        let ratios = expected_improvement(&top, &rest, dim, d, state.prior_weight);
        let mut best = 0;
        for (i, &r) in ratios.iter().enumerate() {
            if r > ratios[best] {
                best = i;
            }
        }
        config.push(dim.candidates[best]);
        ei.push(ratios);
    }
    Ok(Suggestion {
        config,
        phase: Phase::Tpe,
        ei,
    })
}

/// One ratio value of the trace behind a proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct EiRecord {
    pub trial_index: usize,
    pub dimension: String,
    pub candidate: usize,
    pub ei: f64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: Trial,
    pub history: Vec<Trial>,
    pub ei_trace: Vec<EiRecord>,
}

/// Runs trials until the budget is spent. Objective errors are recorded as
/// failed trials and the search continues.
pub fn run_search<F>(mut state: TpeState, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    state.validate()?;
    let mut ei_trace = Vec::new();
    while state.history.len() < state.n_total {
        let index = state.history.len();
        let s = suggest(&state)?;
        for (dim, ratios) in state.space.dims().iter().zip(&s.ei) {
            for (&candidate, &ei) in dim.candidates.iter().zip(ratios) {
                ei_trace.push(EiRecord {
                    trial_index: index,
                    dimension: dim.name.clone(),
                    candidate,
                    ei,
                });
            }
        }
        let started = Instant::now();
        let score = objective(&s.config).ok();
        state.history.push(Trial {
            index,
            config: s.config,
            score,
            phase: s.phase,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    let best = state
        .history
        .iter()
        .fold(None::<&Trial>, |best, t| match best {
            Some(b) if b.effective_score() >= t.effective_score() => Some(b),
            _ => Some(t),
        })
        .cloned()
        .ok_or_else(|| Error::InvalidInput("search budget is zero".into()))?;
    Ok(SearchResult {
        best,
        history: state.history,
        ei_trace,
    })
}

/// `trial_index,phase,<dimension names>,score,status,wall_seconds`.
pub fn write_search_log<W: Write>(mut out: W, space: &SearchSpace, trials: &[Trial]) -> Result<()> {
    let names: Vec<&str> = space.dims().iter().map(|d| d.name.as_str()).collect();
    writeln!(out, "trial_index,phase,{},score,status,wall_seconds", names.join(","))?;
    for t in trials {
        let values: Vec<String> = t.config.iter().map(usize::to_string).collect();
        let status = if t.score.is_some() { "ok" } else { "failed" };
        writeln!(
            out,
            "{},{},{},{},{status},{:.6}",
            t.index,
            t.phase.as_str(),
            values.join(","),
            t.effective_score(),
            t.wall_seconds
        )?;
    }
    Ok(())
}

/// `trial_index,dimension,candidate,ei`.
pub fn write_ei_trace<W: Write>(mut out: W, trace: &[EiRecord]) -> Result<()> {
    writeln!(out, "trial_index,dimension,candidate,ei")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.trial_index, r.dimension, r.candidate, r.ei)?;
    }
    Ok(())
}
