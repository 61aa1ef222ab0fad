// The deconvolution kernel for the flat-top kernel under Laplace errors,
// with the error CF known and estimated from an error sample.

use deconvband::charfn::{flat_top_cf, ErrorCf, KernelSpec};
use deconvband::deconv::{build_table, Truncation, DEFAULT_QUAD_NODES};
use deconvband::simulate::laplace_draw;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> deconvband::Result<()> {
    let kernel = KernelSpec::default();
    println!("phi_K(0.5) = {:.6}", flat_top_cf(&kernel, 0.5));

    let h = 0.4;
    let scale = 0.5f64.sqrt();
    let known = build_table(&ErrorCf::Laplace { scale }, &kernel, h, DEFAULT_QUAD_NODES, Truncation::Auto)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eta: Vec<f64> = (0..500).map(|_| laplace_draw(&mut rng, scale)).collect();
    let estimated = build_table(&ErrorCf::Empirical(eta), &kernel, h, DEFAULT_QUAD_NODES, Truncation::Auto)?;

    println!("{:>6} {:>12} {:>12}", "u", "known", "estimated");
    for u in [0.0, 0.5, 1.0, 2.0, 4.0] {
        println!("{u:>6.1} {:>12.6} {:>12.6}", known.kernel_at(u), estimated.kernel_at(u));
    }
    println!(
        "int K^2 / h: frequency {:.8}, space {:.8}",
        known.kernel_l2_frequency(),
        known.kernel_l2_space(400.0, 0.5)
    );
    println!(
        "estimated CF: floor {:?}, {} nodes lifted",
        estimated.floor(),
        estimated.truncated_nodes()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> deconvband::Result<()> {
    run_example()
}
