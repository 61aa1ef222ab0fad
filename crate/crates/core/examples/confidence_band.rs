// Uniform confidence bands from repeated measurements at a data-driven
// bandwidth.

use deconvband::band::{confidence_band, BandConfig};
use deconvband::bandwidth::{select_bandwidth, BandwidthConfig};
use deconvband::estimate::linspace;
use deconvband::simulate::{DgpSpec, GFunction, Model};

pub fn run_example() -> deconvband::Result<()> {
    let spec = DgpSpec::new(Model::Model2, GFunction::Quadratic, 2.0, 500, 5)?;
    let s = spec.generate();
    let x = linspace(-2.0, 2.0, 41);
    let (h, _) = select_bandwidth(&s, &BandwidthConfig::new(x.clone()))?;
    let cfg = BandConfig {
        reps: 500,
        seed: 99,
        ..BandConfig::default()
    };
    let band = confidence_band(&s, &cfg, h, &x)?;

    println!("h = {h:.4}, critical values {:?}", band.quantiles);
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "x", "lower95", "g", "upper95", "x^2");
    for i in (0..band.x.len()).step_by(5) {
        println!(
            "{:>6.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            band.x[i],
            band.lower[2][i],
            band.g[i],
            band.upper[2][i],
            band.x[i] * band.x[i]
        );
    }
    let truth: Vec<f64> = x.iter().map(|v| v * v).collect();
    for (l, level) in band.levels.iter().enumerate() {
        println!("{level:.2} band covers x^2: {}", band.covers(l, &truth));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
