//! Compares reverse-mode gradients of a small byte classifier against
//! central differences, in double precision.

use fragnet::net::{Model, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let spec = ModelSpec::from_notation("E (4) - C1D (6, 5) - MP (2) - C1D (6, 3) - AP - F (8) - F (3)", 64)?;
    let model = Model::<f64>::init(&spec, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<Vec<u8>> = (0..4).map(|_| (0..64).map(|_| rng.gen()).collect()).collect();
    let blocks: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
    let labels = [0, 1, 2, 1];

    let (loss, _, grads) = model.loss_and_grads(&blocks, &labels, false, &mut rng)?;
    println!("loss {loss:.6}");

    let h = 1e-6;
    let mut work = model.clone();
    for (t, p) in model.params().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in (0..p.len()).step_by(p.len() / 8 + 1) {
            let x = p.values()[i];
            work.params_mut()[t].values_mut()[i] = x + h;
            let up = work.loss(&blocks, &labels, false, &mut rng)?;
            work.params_mut()[t].values_mut()[i] = x - h;
            let down = work.loss(&blocks, &labels, false, &mut rng)?;
            work.params_mut()[t].values_mut()[i] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("tensor {t:>2} {:?}: max relative error {worst:.2e}", p.shape());
    }
    Ok(())
}
