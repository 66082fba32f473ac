//! Prints every tuned architecture with its parameter count, plus the two
//! feature baselines.

use fragnet::corpus::Scenario;
use fragnet::net::{build_nn_co, build_nn_gf, tuned};

fn main() -> anyhow::Result<()> {
    for bs in [512, 4096] {
        for s in Scenario::ALL {
            let Some(m) = tuned(s.id(), bs) else { continue };
            let spec = m.spec()?;
            println!("{bs:>5} #{} {:>9}  {spec}", s.id(), spec.param_count()?);
        }
    }
    println!("NN-GF  {:>9}", build_nn_gf(75)?.param_count()?);
    println!("NN-CO  {:>9}", build_nn_co(75)?.param_count()?);
    Ok(())
}
