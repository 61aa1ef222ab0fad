// Monte Carlo coverage of the bands for one simulated design.
//
// `cargo run --release --example coverage_cell -- 500 model2 quadratic 4`
// runs a full desk-scale cell; the defaults are small enough to finish in
// seconds.

use deconvband::band::BandConfig;
use deconvband::simulate::{coverage_experiment, CoverageConfig, DgpSpec, GFunction, Model};

pub fn run(mc_reps: usize, model: Model, g: GFunction, sigma_x: f64, n: usize) -> deconvband::Result<()> {
    let spec = DgpSpec::new(model, g, sigma_x, n, 0)?;
    let mut cfg = CoverageConfig::new(mc_reps, 2024);
    cfg.band = BandConfig {
        reps: 500,
        ..BandConfig::default()
    };
    let report = coverage_experiment(&spec, &cfg)?;
    for (level, cov) in report.levels.iter().zip(&report.coverage) {
        println!("nominal {level:.3}  simulated {cov:.3}");
    }
    println!(
        "{} replications, {} failed, mean h {:.4}, {:.1}s",
        report.reps, report.failures, report.mean_h, report.runtime_secs
    );
    Ok(())
}

pub fn run_example() -> deconvband::Result<()> {
    run(50, Model::Model1, GFunction::Linear, 2.0, 200)
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        return run_example();
    }
    let reps = args[0].parse().expect("replications");
    let model = args.get(1).map_or(Ok(Model::Model1), |a| a.parse())?;
    let g = args.get(2).map_or(Ok(GFunction::Linear), |a| a.parse())?;
    let sigma_x = args.get(3).map_or(2.0, |a| a.parse().expect("sigma_x"));
    let n = args.get(4).map_or(500, |a| a.parse().expect("n"));
    run(reps, model, g, sigma_x, n)
}
