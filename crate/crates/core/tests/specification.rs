use deconvband::band::{confidence_band, spec_test, BandConfig};
use deconvband::bandwidth::{pilot_eiv_polyfit, select_bandwidth, BandwidthConfig};
use deconvband::estimate::linspace;
use deconvband::rng::derive_seed;
use deconvband::simulate::{DgpSpec, GFunction, Model};

fn rejects(seed: u64, g: GFunction) -> bool {
    let s = DgpSpec::new(Model::Model1, g, 2.0, 300, derive_seed(77, 1, seed))
        .unwrap()
        .generate();
    let x = linspace(-2.0, 2.0, 41);
    let (h, _) = select_bandwidth(&s, &BandwidthConfig::new(x.clone())).unwrap();
    let cfg = BandConfig {
        levels: vec![0.95],
        reps: 200,
        seed: derive_seed(77, 2, seed),
        ..BandConfig::default()
    };
    let band = confidence_band(&s, &cfg, h, &x).unwrap();
    let fit = pilot_eiv_polyfit(&s, 1).unwrap();
    let g_theta: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
    spec_test(&band, &g_theta, 0).unwrap().reject
}

#[test]
fn linear_truth_is_accepted_at_about_the_nominal_rate() {
    let seeds = 100;
    let rejected = (0..seeds).filter(|&i| rejects(i, GFunction::Linear)).count();
    let accept = 1.0 - rejected as f64 / seeds as f64;
    // Binomial sd at 100 seeds is about 0.022; the slack covers finite-sample undercoverage.
    assert!((accept - 0.95).abs() <= 0.08, "acceptance rate {accept}");
}

#[test]
fn cubic_truth_is_rejected() {
    let rejected = (0..20).filter(|&i| rejects(i, GFunction::Cubic)).count();
    assert!(rejected >= 15, "{rejected} of 20 rejected");
}
