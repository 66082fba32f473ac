//! Runs the architecture search against a cheap synthetic objective that
//! rewards wide kernels and a mid-sized embedding, so the whole 225-trial
//! budget finishes instantly.

use fragnet::tpe::{run_search, Phase, SearchSpace, TpeState};

fn main() -> anyhow::Result<()> {
    let space = SearchSpace::architecture();
    let names: Vec<&str> = space.dims().iter().map(|d| d.name.as_str()).collect();
    let at = |n: &str| names.iter().position(|&x| x == n).unwrap();
    let (width, emb) = (at("conv_width"), at("embedding_dim"));

    let objective = |c: &[usize]| {
        let w = c[width] as f64 / 35.0;
        let e = 1.0 - (c[emb] as f64 - 32.0).abs() / 64.0;
        Ok(0.5 * w + 0.5 * e)
    };
    let result = run_search(TpeState::new(space.clone(), 42), objective)?;

    let best = &result.best;
    println!("best score {:.4} at trial {}", best.score.unwrap_or(0.0), best.index);
    for (n, v) in names.iter().zip(&best.config) {
        println!("  {n:<14} {v}");
    }

    // How often the guided phase picked each kernel width.
    let post: Vec<_> = result.history.iter().filter(|t| t.phase == Phase::Tpe).collect();
    for &c in &space.dims()[width].candidates {
        let n = post.iter().filter(|t| t.config[width] == c).count();
        println!("conv_width {c:>2}: {n:>3} of {}", post.len());
    }
    Ok(())
}
