// Deconvolution estimates of the predictor density and the regression
// function on a grid, for simulated errors-in-variables data.

use deconvband::band::{sample_table, BandConfig};
use deconvband::estimate::{estimate_on_grid, linspace, zero_sum_check, ZeroSumReport};
use deconvband::simulate::{DgpSpec, GFunction, Model};

pub fn run_example() -> deconvband::Result<()> {
    let spec = DgpSpec::new(Model::Model1, GFunction::Sine, 2.0, 500, 3)?;
    let s = spec.generate();
    let tbl = sample_table(&s, &BandConfig::default(), 0.5)?;
    let grid = estimate_on_grid(&s, &tbl, &linspace(-2.0, 2.0, 9))?;

    println!("{:>6} {:>9} {:>9} {:>9}", "x", "f_X", "g", "sin(x)");
    for i in 0..grid.len() {
        println!(
            "{:>6.2} {:>9.4} {:>9.4} {:>9.4}",
            grid.x[i],
            grid.fx[i],
            grid.g[i],
            grid.x[i].sin()
        );
    }
    let check = zero_sum_check(&s, &grid, &tbl);
    println!(
        "zero-sum residual {:.2e} (tolerance {:.2e}), clamped points {}",
        check.max_residual,
        ZeroSumReport::tolerance(&s),
        grid.diagnostics.clamped_points
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
