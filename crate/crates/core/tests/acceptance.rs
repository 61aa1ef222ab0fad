// Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
// exits non-zero if any failed. Pass criterion numbers as arguments to run a
// subset: `cargo test --release --test acceptance -- 4 5`.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use deconvband::band::{multiplier_quantile, BandConfig};
use deconvband::bandwidth::{monotonize, pilot_eiv_polyfit};
use deconvband::charfn::{ErrorCf, KernelSpec};
use deconvband::deconv::{build_table, kernel_sums, DeconvTable, Truncation, DEFAULT_QUAD_NODES};
use deconvband::estimate::{estimate_on_grid, linspace};
use deconvband::rng::stream_rng;
use deconvband::samples::Sample;
use deconvband::simulate::{coverage_experiment, CoverageConfig, DgpSpec, GFunction, Model};
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `max |a - b| / max |b|`.
fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

fn laplace_cf() -> ErrorCf {
    ErrorCf::Laplace {
        scale: 2f64.powf(-0.5),
    }
}

fn pair_cf() -> ErrorCf {
    ErrorCf::AveragedPair { component_scale: 0.5 }
}

fn table(cf: &ErrorCf, h: f64, nodes: usize) -> DeconvTable {
    build_table(cf, &KernelSpec::default(), h, nodes, Truncation::Auto).unwrap()
}

fn design(model: Model, g: GFunction, sigma: f64, n: usize, seed: u64) -> Sample {
    DgpSpec::new(model, g, sigma, n, seed).unwrap().generate()
}

fn coverage() -> Outcome {
    let cells = [
        (Model::Model1, GFunction::Linear, 2.0, vec![(0, 0.792), (1, 0.879), (2, 0.912)]),
        (Model::Model2, GFunction::Quadratic, 4.0, vec![(2, 0.939)]),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (model, g, sigma, targets) in cells {
        let spec = DgpSpec::new(model, g, sigma, 500, 0).unwrap();
        let mut cfg = CoverageConfig::new(500, 2024);
        cfg.band = BandConfig {
            reps: 500,
            ..BandConfig::default()
        };
        let report = coverage_experiment(&spec, &cfg).map_err(|e| e.to_string())?;
        for (level, paper) in targets {
            let got = report.coverage[level];
            let pass = (got - paper).abs() <= 0.06;
            ok &= pass;
            lines.push(format!(
                "{model} {} {:.2}: {got:.3} vs {paper:.3}",
                report.g, report.levels[level]
            ));
        }
        ok &= report.failures * 50 < report.reps + report.failures;
    }
    ensure(ok, lines.join("; "))
}

/// `(1/pi) int_0^1 cos(tu) phi_K(t) dt` by composite Simpson.
struct KernelOracle {
    t: Vec<f64>,
    wphi: Vec<f64>,
}

impl KernelOracle {
    fn new(panels: usize) -> Self {
        let (b, c) = (1.0, 0.05);
        let phi = |t: f64| {
            if t <= c {
                1.0
            } else if t >= 1.0 {
                0.0
            } else {
                (-b * (-b / ((t - c) * (t - c))).exp() / ((t - 1.0) * (t - 1.0))).exp()
            }
        };
        let dt = 1.0 / panels as f64;
        let t: Vec<f64> = (0..=panels).map(|i| i as f64 * dt).collect();
        let wphi = t
            .iter()
            .enumerate()
            .map(|(i, &ti)| {
                let w = if i == 0 || i == panels {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * dt / 3.0 / PI * phi(ti)
            })
            .collect();
        Self { t, wphi }
    }

    fn eval(&self, u: f64) -> f64 {
        self.t.iter().zip(&self.wphi).map(|(t, w)| w * (t * u).cos()).sum()
    }
}

fn error_free_reduction() -> Outcome {
    let mut rng = stream_rng(11, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let w: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
    let y: Vec<f64> = w.iter().map(|x| (2.0 * x).sin() + 0.3 * normal.sample(&mut rng)).collect();
    let s = Sample::new(y.clone(), w.clone(), vec![0.0; 200]).unwrap();
    let oracle = KernelOracle::new(20_000);
    let mut worst = (0.0f64, 0.0f64);
    for h in [0.3, 0.6] {
        let x = linspace(-1.5, 1.5, 31);
        let e = estimate_on_grid(&s, &table(&ErrorCf::ConstantOne, h, DEFAULT_QUAD_NODES), &x)
            .map_err(|e| e.to_string())?;
        let mut kde = Vec::new();
        let mut nw = Vec::new();
        for &xi in &x {
            let k: Vec<f64> = w.iter().map(|wj| oracle.eval((xi - wj) / h)).collect();
            let sk: f64 = k.iter().sum();
            kde.push(sk / (200.0 * h));
            nw.push(k.iter().zip(&y).map(|(k, y)| k * y).sum::<f64>() / sk);
        }
        let keep: Vec<usize> = (0..x.len()).filter(|&i| !e.clamped[i]).collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        worst.0 = worst.0.max(rel_dev(&e.fx, &kde));
        worst.1 = worst.1.max(rel_dev(&pick(&e.g), &pick(&nw)));
    }
    ensure(
        worst.0 < 1e-8 && worst.1 < 1e-8,
        format!("density {:.1e}, regression {:.1e}", worst.0, worst.1),
    )
}

fn zero_sum() -> Outcome {
    let fixtures = [
        (design(Model::Model1, GFunction::Linear, 2.0, 500, 1), 2.0),
        (design(Model::Model2, GFunction::Quadratic, 4.0, 500, 2), 4.0),
        (design(Model::Model1, GFunction::Sine, 4.0, 200, 3), 4.0),
    ];
    let mut worst = 0.0f64;
    for (s, sigma) in &fixtures {
        let cf = ErrorCf::Empirical(s.eta().to_vec());
        for h in [0.3, 0.7] {
            let tbl = table(&cf, h, DEFAULT_QUAD_NODES);
            let x = linspace(-sigma, *sigma, 41);
            let e = estimate_on_grid(s, &tbl, &x).map_err(|e| e.to_string())?;
            let ymax = s.y().iter().fold(0.0f64, |m, y| m.max(y.abs()));
            let tol = 1e-8 * (1.0 + ymax) * s.n() as f64;
            for (i, &xi) in x.iter().enumerate() {
                if e.clamped[i] {
                    continue;
                }
                let r: f64 = s
                    .w()
                    .iter()
                    .zip(s.y())
                    .map(|(w, y)| (y - e.g[i]) * tbl.kernel_at((xi - w) / h))
                    .sum();
                worst = worst.max(r.abs() / tol);
            }
        }
    }
    ensure(worst < 1.0, format!("largest residual is {worst:.1e} of the tolerance"))
}

fn frequency_space() -> Outcome {
    let mut worst = 0.0f64;
    for (cf, model) in [(laplace_cf(), Model::Model1), (pair_cf(), Model::Model2)] {
        let s = design(model, GFunction::Cubic, 2.0, 50, 5);
        let x = linspace(-2.0, 2.0, 21);
        for h in [0.4, 1.0] {
            let tbl = table(&cf, h, DEFAULT_QUAD_NODES);
            let sums = kernel_sums(&s, &tbl, &x);
            let mut d0 = Vec::new();
            let mut d1 = Vec::new();
            for &xi in &x {
                let k: Vec<f64> = s.w().iter().map(|w| tbl.kernel_at((xi - w) / h)).collect();
                d0.push(k.iter().sum::<f64>() / 50.0);
                d1.push(k.iter().zip(s.y()).map(|(k, y)| k * y).sum::<f64>() / 50.0);
            }
            worst = worst.max(rel_dev(&sums.s0, &d0)).max(rel_dev(&sums.s1, &d1));
        }
    }
    ensure(worst < 1e-8, format!("max relative deviation {worst:.1e}"))
}

fn quadrature() -> Outcome {
    let fine = 2 * DEFAULT_QUAD_NODES - 1;
    let s = design(Model::Model1, GFunction::Linear, 2.0, 500, 7);
    let emp = ErrorCf::Empirical(s.eta().to_vec());
    let u = linspace(-5.0, 5.0, 201);
    let mut kernel_dev = 0.0f64;
    for (cf, h) in [(laplace_cf(), 0.3), (laplace_cf(), 1.0), (pair_cf(), 0.5), (emp.clone(), 0.45)] {
        let a = table(&cf, h, DEFAULT_QUAD_NODES);
        let b = table(&cf, h, fine);
        let ka: Vec<f64> = u.iter().map(|&v| a.kernel_at(v)).collect();
        let kb: Vec<f64> = u.iter().map(|&v| b.kernel_at(v)).collect();
        kernel_dev = kernel_dev.max(rel_dev(&ka, &kb));
    }
    let x = linspace(-2.0, 2.0, 101);
    let mut est_dev = 0.0f64;
    for h in [0.3, 0.6] {
        let a = estimate_on_grid(&s, &table(&emp, h, DEFAULT_QUAD_NODES), &x).map_err(|e| e.to_string())?;
        let b = estimate_on_grid(&s, &table(&emp, h, fine), &x).map_err(|e| e.to_string())?;
        for (va, vb) in [(&a.fx, &b.fx), (&a.mu, &b.mu), (&a.g, &b.g), (&a.s, &b.s)] {
            est_dev = est_dev.max(rel_dev(va, vb));
        }
    }
    ensure(
        kernel_dev < 1e-8 && est_dev < 1e-8,
        format!("kernel {kernel_dev:.1e}, estimates {est_dev:.1e}"),
    )
}

fn plancherel() -> Outcome {
    let s = design(Model::Model1, GFunction::Linear, 2.0, 500, 7);
    let emp = ErrorCf::Empirical(s.eta().to_vec());
    let mut worst = 0.0f64;
    for (cf, h) in [(laplace_cf(), 0.3), (laplace_cf(), 1.0), (pair_cf(), 0.5), (emp, 0.45)] {
        let t = table(&cf, h, DEFAULT_QUAD_NODES);
        let freq = t.kernel_l2_frequency();
        let space = t.kernel_l2_space(400.0, 0.5);
        worst = worst.max((freq - space).abs() / freq.abs());
    }
    ensure(worst < 1e-6, format!("max relative gap {worst:.1e}"))
}

fn singleton_bootstrap() -> Outcome {
    let s = design(Model::Model1, GFunction::Linear, 2.0, 500, 9);
    let h = 0.4;
    let tbl = table(&ErrorCf::Empirical(s.eta().to_vec()), h, DEFAULT_QUAD_NODES);
    let e = estimate_on_grid(&s, &tbl, &[0.3]).map_err(|e| e.to_string())?;
    let coef: Vec<f64> = s
        .w()
        .iter()
        .zip(s.y())
        .map(|(w, y)| (y - e.g[0]) * tbl.kernel_at((0.3 - w) / h))
        .collect();
    let rms = (coef.iter().map(|c| c * c).sum::<f64>() / s.n() as f64).sqrt();
    let q = multiplier_quantile(&s, &e, &[0.95], 20_000, 31).map_err(|e| e.to_string())?;
    let c = q.values[0];
    ensure(
        (c - 1.960).abs() <= 0.05 && (rms - e.s[0]).abs() < 1e-8 * rms,
        format!("c(0.95) = {c:.4}"),
    )
}

fn monotone_traces() -> Outcome {
    let (a, _) = monotonize(&[3.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let (_, s) = monotonize(&[0.0, 0.0, 0.0], &[-1.0, -3.0, -2.0]).map_err(|e| e.to_string())?;
    ensure(
        a == [3.0, 3.0, 3.0] && s == [-1.0, -3.0, -3.0],
        format!("{a:?}, {s:?}"),
    )
}

/// Least squares by modified Gram-Schmidt on the Vandermonde matrix.
fn ols(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let d = degree + 1;
    let mut q: Vec<Vec<f64>> = (0..d).map(|p| x.iter().map(|v| v.powi(p as i32)).collect()).collect();
    let mut r = vec![vec![0.0; d]; d];
    for i in 0..d {
        for k in 0..i {
            let dot: f64 = q[k].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            r[k][i] = dot;
            let qk = q[k].clone();
            q[i].iter_mut().zip(&qk).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        r[i][i] = norm;
        q[i].iter_mut().for_each(|v| *v /= norm);
    }
    let qty: Vec<f64> = q.iter().map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut c = vec![0.0; d];
    for i in (0..d).rev() {
        let tail: f64 = (i + 1..d).map(|k| r[i][k] * c[k]).sum();
        c[i] = (qty[i] - tail) / r[i][i];
    }
    c
}

fn pilot_regression() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut rng = stream_rng(13, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let w: Vec<f64> = (0..300).map(|_| 1.5 * normal.sample(&mut rng)).collect();
    let y: Vec<f64> = w.iter().map(|v| 0.2 + v - 0.4 * v * v + normal.sample(&mut rng)).collect();
    let s = Sample::new(y.clone(), w.clone(), vec![0.0; 100]).unwrap();
    let mut ols_dev = 0.0f64;
    for degree in 1..=3 {
        let fit = pilot_eiv_polyfit(&s, degree).map_err(|e| e.to_string())?;
        for (a, b) in fit.coef.iter().zip(ols(&w, &y, degree)) {
            ols_dev = ols_dev.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    ok &= ols_dev <= 1e-10;
    notes.push(format!("OLS {ols_dev:.1e}"));

    let w = [-1.5, -0.2, 0.4, 1.1, 2.0];
    let y = [-0.8, 0.3, 0.2, 1.4, 1.9];
    let eta = [0.3, -0.1, -0.4, 0.2];
    let fit = pilot_eiv_polyfit(&Sample::new(y.to_vec(), w.to_vec(), eta.to_vec()).unwrap(), 1)
        .map_err(|e| e.to_string())?;
    let m1 = w.iter().sum::<f64>() / 5.0;
    let m2 = w.iter().map(|v| v * v).sum::<f64>() / 5.0 - eta.iter().map(|e| e * e).sum::<f64>() / 4.0;
    let my = y.iter().sum::<f64>() / 5.0;
    let mwy = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / 5.0;
    // [1 m1; m1 m2] (g0, g1)' = (my, mwy)'
    let det = m2 - m1 * m1;
    let g = [(m2 * my - m1 * mwy) / det, (mwy - m1 * my) / det];
    let sys_dev = (fit.coef[0] - g[0]).abs().max((fit.coef[1] - g[1]).abs());
    ok &= sys_dev < 1e-12;
    notes.push(format!("2x2 {sys_dev:.1e}"));

    let s = design(Model::Model1, GFunction::Linear, 2.0, 100_000, 17);
    let naive = ols(s.w(), s.y(), 1)[1];
    let corrected = pilot_eiv_polyfit(&s, 1).map_err(|e| e.to_string())?.coef[1];
    let (bc, bn) = ((corrected - 1.0).abs(), (naive - 1.0).abs());
    ok &= bc * 5.0 < bn;
    notes.push(format!("slope bias {bc:.4} vs naive {bn:.4}"));
    ensure(ok, notes.join(", "))
}

fn write_fixture(dir: &Path) {
    let s = design(Model::Model1, GFunction::Linear, 2.0, 200, 42);
    let mut data = String::from("y,w\n");
    for (y, w) in s.y().iter().zip(s.w()) {
        data.push_str(&format!("{y:e},{w:e}\n"));
    }
    fs::write(dir.join("data.csv"), data).unwrap();
    let mut eta = String::from("eta\n");
    for e in s.eta() {
        eta.push_str(&format!("{e:e}\n"));
    }
    fs::write(dir.join("eta.csv"), eta).unwrap();
}

/// Runs a command writing to `out` and returns the bytes of `out` and its
/// JSON sidecar (if any) plus stdout.
fn run_cli(args: &[String], out: &Path, threads: Option<&str>, env: Option<&str>) -> Result<Vec<u8>, String> {
    let _ = fs::remove_file(out);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deconvband"));
    cmd.env_remove("DECONVBAND_THREADS").args(args).arg("--out").arg(out);
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    if let Some(t) = env {
        cmd.env("DECONVBAND_THREADS", t);
    }
    let res = cmd.output().map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&res.stderr)));
    }
    let mut bytes = res.stdout;
    bytes.extend(fs::read(out).map_err(|e| e.to_string())?);
    let sidecar = out.with_extension("json");
    if sidecar != out {
        if let Ok(b) = fs::read(&sidecar) {
            bytes.extend(b);
        }
    }
    Ok(bytes)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_fixture(dir.path());
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let data = [
        "--input".to_string(), p("data.csv"), "--eta".into(), p("eta.csv"), "--interval".into(), "-1.5".into(),
        "1.5".into(), "--grid-points".into(), "21".into(), "--quad-nodes".into(), "513".into(),
    ];
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd.to_string()];
        v.extend(data.iter().cloned());
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let commands = [
        ("band", with("band", &["--reps", "200", "--seed", "5"]), "band.csv"),
        ("bandwidth", with("bandwidth", &[]), "trace.json"),
        ("spectest", with("spectest", &["--reps", "200", "--seed", "6"]), "spec.csv"),
        ("cdfband", with("cdfband", &["--reps", "100", "--bandwidth", "0.8", "--seed", "7"]), "cdf.csv"),
        (
            "simulate",
            [
                "simulate", "--model", "model2", "--g", "quadratic", "--n", "100", "--sigma-x", "2", "--mc-reps",
                "50", "--reps", "100", "--grid-points", "21", "--quad-nodes", "257", "--seed", "3",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            "sim.csv",
        ),
    ];
    let mut checked = Vec::new();
    for (name, args, out) in commands {
        let out = dir.path().join(out);
        let base = run_cli(&args, &out, None, None)?;
        let runs = [
            run_cli(&args, &out, None, None)?,
            run_cli(&args, &out, Some("1"), None)?,
            run_cli(&args, &out, Some("3"), None)?,
            run_cli(&args, &out, None, Some("2"))?,
        ];
        if runs.iter().any(|r| *r != base) {
            return Err(format!("{name} output differs between runs"));
        }
        checked.push(name);
    }
    Ok(format!("{} byte-identical across runs and thread counts", checked.join(", ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("coverage reproduction", coverage),
        ("error-free reduction", error_free_reduction),
        ("zero-sum identity", zero_sum),
        ("frequency/space equivalence", frequency_space),
        ("quadrature convergence", quadrature),
        ("Plancherel consistency", plancherel),
        ("singleton-interval bootstrap", singleton_bootstrap),
        ("monotonization traces", monotone_traces),
        ("pilot EIV regression", pilot_regression),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
