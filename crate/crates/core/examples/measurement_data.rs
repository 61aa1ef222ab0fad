// Building a sample from the two usual data layouts: repeated noisy
// measurements of the same predictor, and a separate validation sample in
// which the true predictor is observed.

use deconvband::samples::{RepeatedMeasurements, Sample};
use deconvband::simulate::laplace_draw;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> deconvband::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 400;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v.sin() + 0.3 * rng.random::<f64>()).collect();

    // Two replicates with independent Laplace errors.
    let w1: Vec<f64> = x.iter().map(|v| v + laplace_draw(&mut rng, 0.5)).collect();
    let w2: Vec<f64> = x.iter().map(|v| v + laplace_draw(&mut rng, 0.5)).collect();
    let repeated = Sample::from_repeated(RepeatedMeasurements {
        y: y.clone(),
        w1: w1.clone(),
        w2,
    })?;
    println!(
        "repeated: n = {}, m = {}, sd(W) = {:.3}, sd(eta) = {:.3}",
        repeated.n(),
        repeated.m(),
        repeated.w_sd(),
        sd(repeated.eta())
    );

    // A validation study of 150 units where X is measured exactly.
    let x_val: Vec<f64> = (0..150).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w_val: Vec<f64> = x_val.iter().map(|v| v + laplace_draw(&mut rng, 0.5)).collect();
    let validation = Sample::from_validation(y, w1, &x_val, &w_val)?;
    println!(
        "validation: n = {}, m = {}, mean(eta) = {:.4}",
        validation.n(),
        validation.m(),
        validation.eta().iter().sum::<f64>() / validation.m() as f64
    );
    let centred = validation.center_eta();
    println!("after centring: shift = {:.4}", centred.eta_shift());
    Ok(())
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
