// Joint band for the conditional distribution function `P(Y <= y | X = x)`.

use deconvband::band::{cdf_band, sample_table, BandConfig};
use deconvband::estimate::linspace;
use deconvband::simulate::{DgpSpec, GFunction, Model};

pub fn run_example() -> deconvband::Result<()> {
    let s = DgpSpec::new(Model::Model1, GFunction::Linear, 2.0, 500, 23)?.generate();
    let cfg = BandConfig {
        reps: 300,
        ..BandConfig::default()
    };
    let tbl = sample_table(&s, &cfg, 0.6)?;
    let x = linspace(-1.0, 1.0, 5);
    let y = linspace(-2.0, 2.0, 5);
    let band = cdf_band(&s, &tbl, &x, &y, &cfg.levels, cfg.reps, cfg.seed)?;

    println!("joint critical values {:?}", band.quantiles);
    for (iy, yv) in y.iter().enumerate() {
        let row: Vec<String> = (0..x.len())
            .map(|ix| {
                let k = band.index(iy, ix);
                format!("{:.2} [{:.2}, {:.2}]", band.g[k], band.lower[2][k], band.upper[2][k])
            })
            .collect();
        println!("y = {yv:+.1}: {}", row.join("  "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
