// The undersmoothing bandwidth selector and its trace.

use deconvband::bandwidth::{select_bandwidth, BandwidthConfig};
use deconvband::estimate::linspace;
use deconvband::simulate::{DgpSpec, GFunction, Model};

pub fn run_example() -> deconvband::Result<()> {
    let spec = DgpSpec::new(Model::Model1, GFunction::Linear, 2.0, 500, 11)?;
    let s = spec.generate();
    let cfg = BandwidthConfig::new(linspace(-2.0, 2.0, 101));
    let (h, trace) = select_bandwidth(&s, &cfg)?;

    println!("pilot coefficients {:?}", trace.pilot.coef);
    println!("c_n = {:.4}", trace.cn);
    println!("{:>3} {:>8} {:>12} {:>12}", "j", "h", "sup A^2", "sup s^2/n");
    for (j, h) in trace.candidates.iter().enumerate() {
        let mark = if j == trace.chosen_index { "*" } else { "" };
        println!(
            "{:>3} {:>8.4} {:>12.4e} {:>12.4e} {mark}",
            j + 1,
            h,
            trace.sup_a2[j],
            trace.sup_s2_over_n[j]
        );
    }
    println!("selected h = {h:.4} (rule satisfied: {})", trace.crossed);
    Ok(())
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
