//! Uniform confidence bands.
//!
//! The critical value is the conditional `(1 - tau)`-quantile of
//!
//! ```text
//! sup_x | (1 / (s(x) sqrt(n))) sum_j xi_j (Y_j - g(x)) K((x - W_j)/h) |
//! ```
//!
//! over Gaussian multipliers `xi_j`, and the band is
//! `g(x) +/- s(x) c / (f_X(x) sqrt(n) h)`.
//!
//! Replication `r` draws its multipliers from stream `r` of the seed, and
//! per-replication suprema are collected by index, so quantiles do not
//! depend on the number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::{ErrorCf, KernelSpec};
use crate::deconv::{build_table, DeconvTable, Truncation, DEFAULT_QUAD_NODES};
use crate::error::{Error, Result};
use crate::estimate::{estimate_on_grid, EstimateDiagnostics, EstimateGrid};
use crate::rng::stream_rng;
use crate::samples::Sample;

/// Coverage levels `1 - tau`.
pub const DEFAULT_LEVELS: [f64; 3] = [0.80, 0.90, 0.95];
pub const DEFAULT_BAND_REPS: usize = 1000;
pub const MIN_BAND_REPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub quad_nodes: usize,
    pub truncation: Truncation,
    /// Drop clamped-density points from the supremum.
    pub exclude_clamped: bool,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            reps: DEFAULT_BAND_REPS,
            seed: 0,
            kernel: KernelSpec::default(),
            quad_nodes: DEFAULT_QUAD_NODES,
            truncation: Truncation::Auto,
            exclude_clamped: false,
        }
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("no confidence levels given".into()));
    }
    match levels.iter().find(|l| !(**l >= 0.0 && **l < 1.0)) {
        Some(l) => Err(Error::InvalidInput(format!(
            "confidence levels must lie in [0, 1), got {l}"
        ))),
        None => Ok(()),
    }
}

/// Order-statistic quantiles of the bootstrap suprema: level `p` maps to the
/// `ceil(p * reps)`-th smallest value; level 0 maps to 0.
fn sup_quantiles(mut sups: Vec<f64>, levels: &[f64]) -> Vec<f64> {
    sups.sort_by(f64::total_cmp);
    let reps = sups.len();
    levels
        .iter()
        .map(|&p| {
            // Guard against p * reps landing a hair above an integer.
            let rank = (p * reps as f64 - 1e-9).ceil().max(0.0) as usize;
            if rank == 0 {
                0.0
            } else {
                sups[rank.min(reps) - 1]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Grid points entering the supremum.
    pub sup_points: usize,
}

fn multipliers(seed: u64, rep: usize, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, rep as u64);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Multiplier-bootstrap critical values for the estimate on `grid`.
pub fn multiplier_quantile(
    s: &Sample,
    grid: &EstimateGrid,
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Quantiles> {
    multiplier_quantile_with(s, grid, levels, reps, seed, false)
}

pub fn multiplier_quantile_with(
    s: &Sample,
    grid: &EstimateGrid,
    levels: &[f64],
    reps: usize,
    seed: u64,
    exclude_clamped: bool,
) -> Result<Quantiles> {
    check_levels(levels)?;
    if reps < MIN_BAND_REPS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_BAND_REPS} bootstrap replications, got {reps}"
        )));
    }
    let kernel = grid
        .kernel_matrix()
        .ok_or_else(|| Error::InvalidInput("estimate grid carries no kernel matrix".into()))?;
    if kernel.cols() != s.n() || kernel.rows() != grid.len() {
        return Err(Error::InputShape("estimate grid does not match the sample".into()));
    }
    let root_n = (s.n() as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .filter(|&i| grid.s[i] > 0.0 && !(exclude_clamped && grid.clamped[i]))
        .map(|i| {
            let scale = 1.0 / (grid.s[i] * root_n);
            kernel
                .row(i)
                .iter()
                .zip(s.y())
                .map(|(k, y)| (y - grid.g[i]) * k * scale)
                .collect()
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::DegenerateVariance(
            "band standard deviation is zero at every grid point".into(),
        ));
    }
    let sups: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let xi = multipliers(seed, r, s.n());
            rows.iter()
                .map(|row| row.iter().zip(&xi).map(|(c, x)| c * x).sum::<f64>().abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(Quantiles {
        levels: levels.to_vec(),
        values: sup_quantiles(sups, levels),
        reps,
        seed,
        sup_points: rows.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandDiagnostics {
    #[serde(flatten)]
    pub estimate: EstimateDiagnostics,
    pub sup_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub fx: Vec<f64>,
    pub s: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    /// One envelope per level.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub clamped: Vec<bool>,
    pub h: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub diagnostics: BandDiagnostics,
}

impl BandResult {
    pub fn half_width(&self, level: usize, i: usize) -> f64 {
        0.5 * (self.upper[level][i] - self.lower[level][i])
    }

    /// Whether `values` lies inside the band at every grid point.
    pub fn covers(&self, level: usize, values: &[f64]) -> bool {
        values
            .iter()
            .enumerate()
            .all(|(i, v)| self.lower[level][i] <= *v && *v <= self.upper[level][i])
    }
}

pub fn assemble_band(grid: &EstimateGrid, q: &Quantiles) -> BandResult {
    let scale = (grid.n as f64).sqrt() * grid.h;
    let unit: Vec<f64> = (0..grid.len())
        .map(|i| grid.s[i] / (grid.fx_used(i) * scale))
        .collect();
    let mut lower = Vec::with_capacity(q.values.len());
    let mut upper = Vec::with_capacity(q.values.len());
    for &c in &q.values {
        lower.push(grid.g.iter().zip(&unit).map(|(g, u)| g - u * c).collect());
        upper.push(grid.g.iter().zip(&unit).map(|(g, u)| g + u * c).collect());
    }
    BandResult {
        x: grid.x.clone(),
        g: grid.g.clone(),
        fx: grid.fx.clone(),
        s: grid.s.clone(),
        levels: q.levels.clone(),
        quantiles: q.values.clone(),
        lower,
        upper,
        clamped: grid.clamped.clone(),
        h: grid.h,
        n: grid.n,
        reps: q.reps,
        seed: q.seed,
        diagnostics: BandDiagnostics {
            estimate: grid.diagnostics.clone(),
            sup_points: q.sup_points,
        },
    }
}

/// Deconvolution table for a sample's empirical error CF.
pub fn sample_table(s: &Sample, cfg: &BandConfig, h: f64) -> Result<DeconvTable> {
    build_table(
        &ErrorCf::Empirical(s.eta().to_vec()),
        &cfg.kernel,
        h,
        cfg.quad_nodes,
        cfg.truncation,
    )
}

/// Full pipeline at a fixed bandwidth: table, estimate, bootstrap, band.
pub fn confidence_band(s: &Sample, cfg: &BandConfig, h: f64, x_grid: &[f64]) -> Result<BandResult> {
    let tbl = sample_table(s, cfg, h)?;
    let grid = estimate_on_grid(s, &tbl, x_grid)?;
    let q = multiplier_quantile_with(s, &grid, &cfg.levels, cfg.reps, cfg.seed, cfg.exclude_clamped)?;
    Ok(assemble_band(&grid, &q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecTestResult {
    pub reject: bool,
    pub level: f64,
    /// Grid points where the parametric fit leaves the band.
    pub violations: Vec<f64>,
}

/// Reject the parametric specification when its fitted curve leaves the
/// band anywhere on the grid. Validity presumes the parametric fit converges
/// faster than the band shrinks; that is not checked here.
pub fn spec_test(band: &BandResult, g_theta_hat: &[f64], level_index: usize) -> Result<SpecTestResult> {
    if g_theta_hat.len() != band.x.len() {
        return Err(Error::InputShape(format!(
            "parametric fit has {} values for a {}-point band",
            g_theta_hat.len(),
            band.x.len()
        )));
    }
    if level_index >= band.levels.len() {
        return Err(Error::InvalidInput(format!(
            "level index {level_index} out of range for {} levels",
            band.levels.len()
        )));
    }
    let (lo, hi) = (&band.lower[level_index], &band.upper[level_index]);
    let violations: Vec<f64> = (0..band.x.len())
        .filter(|&i| !(lo[i] <= g_theta_hat[i] && g_theta_hat[i] <= hi[i]))
        .map(|i| band.x[i])
        .collect();
    Ok(SpecTestResult {
        reject: !violations.is_empty(),
        level: band.levels[level_index],
        violations,
    })
}

/// Band for the conditional distribution function `P(Y <= y | X = x)` on a
/// `y`-by-`x` grid. Matrices are row-major with one row per `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfBandResult {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub clamped: Vec<bool>,
    pub h: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub sup_points: usize,
}

impl CdfBandResult {
    pub fn index(&self, iy: usize, ix: usize) -> usize {
        iy * self.x.len() + ix
    }
}

pub fn cdf_band(
    s: &Sample,
    tbl: &DeconvTable,
    x_grid: &[f64],
    y_grid: &[f64],
    levels: &[f64],
    reps: usize,
    seed: u64,
) -> Result<CdfBandResult> {
    check_levels(levels)?;
    if reps < MIN_BAND_REPS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_BAND_REPS} bootstrap replications, got {reps}"
        )));
    }
    if y_grid.is_empty() || y_grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("y grid must be non-empty and finite".into()));
    }
    if y_grid.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::InvalidInput("y grid must be sorted".into()));
    }
    let base = estimate_on_grid(s, tbl, x_grid)?;
    let kernel = base.kernel_matrix().expect("estimate carries its kernel matrix");
    let n = s.n();
    let nf = n as f64;
    let (ny, nx) = (y_grid.len(), x_grid.len());

    // Observations sorted by response; indicator 1(Y_j <= y) selects a prefix.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.y()[a].total_cmp(&s.y()[b]));
    let sorted_y: Vec<f64> = order.iter().map(|&j| s.y()[j]).collect();
    let counts: Vec<usize> = y_grid
        .iter()
        .map(|&y| sorted_y.partition_point(|&v| v <= y))
        .collect();

    let mut g = vec![0.0; ny * nx];
    let mut sd = vec![0.0; ny * nx];
    for ix in 0..nx {
        let row = kernel.row(ix);
        let mut p1 = vec![0.0; n + 1];
        let mut p2 = vec![0.0; n + 1];
        for (c, &j) in order.iter().enumerate() {
            p1[c + 1] = p1[c] + row[j];
            p2[c + 1] = p2[c] + row[j] * row[j];
        }
        let fx = base.fx_used(ix);
        for (iy, &c) in counts.iter().enumerate() {
            let gi = p1[c] / (nf * base.h * fx);
            let var = ((1.0 - gi).powi(2) * p2[c] + gi * gi * (p2[n] - p2[c])) / nf;
            g[iy * nx + ix] = gi;
            sd[iy * nx + ix] = var.max(0.0).sqrt();
        }
    }

    let usable: Vec<(usize, usize)> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (iy, ix)))
        .filter(|&(iy, ix)| sd[iy * nx + ix] > 0.0)
        .collect();
    if usable.is_empty() {
        return Err(Error::DegenerateVariance(
            "conditional-CDF band standard deviation is zero everywhere".into(),
        ));
    }
    let root_n = nf.sqrt();
    let sups: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let xi = multipliers(seed, r, n);
            let mut best = 0.0f64;
            let mut prefix = vec![0.0; n + 1];
            for ix in 0..nx {
                let row = kernel.row(ix);
                for (c, &j) in order.iter().enumerate() {
                    prefix[c + 1] = prefix[c] + xi[j] * row[j];
                }
                let total = prefix[n];
                for (iy, &c) in counts.iter().enumerate() {
                    let k = iy * nx + ix;
                    if sd[k] > 0.0 {
                        let z = (prefix[c] - g[k] * total) / (sd[k] * root_n);
                        best = best.max(z.abs());
                    }
                }
            }
            best
        })
        .collect();
    let quantiles = sup_quantiles(sups, levels);

    let mut lower = Vec::with_capacity(levels.len());
    let mut upper = Vec::with_capacity(levels.len());
    for &c in &quantiles {
        let mut lo = vec![0.0; ny * nx];
        let mut hi = vec![0.0; ny * nx];
        for iy in 0..ny {
            for ix in 0..nx {
                let k = iy * nx + ix;
                let hw = sd[k] * c / (base.fx_used(ix) * root_n * base.h);
                lo[k] = g[k] - hw;
                hi[k] = g[k] + hw;
            }
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(CdfBandResult {
        y: y_grid.to_vec(),
        x: x_grid.to_vec(),
        g,
        s: sd,
        levels: levels.to_vec(),
        quantiles,
        lower,
        upper,
        clamped: base.clamped.clone(),
        h: base.h,
        n,
        reps,
        seed,
        sup_points: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::linspace;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, Normal};

    fn sample(n: usize, seed: u64) -> Sample {
        let mut rng = stream_rng(seed, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let w = x.iter().map(|v| v + 0.3 * normal.sample(&mut rng)).collect();
        let y = x.iter().map(|v| v.sin() + 0.5 * normal.sample(&mut rng)).collect();
        let eta = (0..n).map(|_| 0.3 * normal.sample(&mut rng)).collect();
        Sample::new(y, w, eta).unwrap()
    }

    fn cfg(reps: usize) -> BandConfig {
        BandConfig {
            reps,
            seed: 11,
            quad_nodes: 513,
            ..BandConfig::default()
        }
    }

    #[test]
    fn quantile_order_statistics() {
        let sups: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let q = sup_quantiles(sups, &[0.0, 0.8, 0.9, 0.95, 0.999]);
        assert_eq!(q, vec![0.0, 80.0, 90.0, 95.0, 100.0]);
        let q = sup_quantiles((1..=500).map(|i| i as f64).collect(), &[0.95]);
        assert_eq!(q, vec![475.0]);
    }

    #[test]
    fn band_shape() {
        let s = sample(150, 1);
        let band = confidence_band(&s, &cfg(200), 0.6, &linspace(-1.0, 1.0, 21)).unwrap();
        assert!(band.quantiles.windows(2).all(|p| p[0] <= p[1]));
        for l in 0..band.levels.len() {
            for i in 0..band.x.len() {
                assert!(band.lower[l][i] <= band.g[i] && band.g[i] <= band.upper[l][i]);
                let mid = 0.5 * (band.lower[l][i] + band.upper[l][i]);
                assert!((mid - band.g[i]).abs() <= 1e-12 * (1.0 + band.g[i].abs()));
                if l > 0 {
                    assert!(band.lower[l][i] <= band.lower[l - 1][i]);
                    assert!(band.upper[l][i] >= band.upper[l - 1][i]);
                }
            }
        }
    }

    #[test]
    fn half_width_is_linear_in_critical_value() {
        let s = sample(100, 2);
        let tbl = sample_table(&s, &cfg(100), 0.7).unwrap();
        let grid = estimate_on_grid(&s, &tbl, &linspace(-1.0, 1.0, 11)).unwrap();
        let q = |c: f64| Quantiles {
            levels: vec![0.9],
            values: vec![c],
            reps: 100,
            seed: 0,
            sup_points: 11,
        };
        let zero = assemble_band(&grid, &q(0.0));
        assert_eq!(zero.lower[0], grid.g);
        assert_eq!(zero.upper[0], grid.g);
        let one = assemble_band(&grid, &q(1.5));
        let two = assemble_band(&grid, &q(3.0));
        for i in 0..grid.len() {
            let (a, b) = (one.half_width(0, i), two.half_width(0, i));
            assert!((b - 2.0 * a).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn reproducible_with_seed() {
        let s = sample(80, 3);
        let a = confidence_band(&s, &cfg(150), 0.7, &linspace(-1.0, 1.0, 9)).unwrap();
        let b = confidence_band(&s, &cfg(150), 0.7, &linspace(-1.0, 1.0, 9)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(150);
        other.seed = 12;
        let c = confidence_band(&s, &other, 0.7, &linspace(-1.0, 1.0, 9)).unwrap();
        assert_ne!(a.quantiles, c.quantiles);
    }

    #[test]
    fn rejects_bad_bootstrap_settings() {
        let s = sample(60, 4);
        let x = linspace(-1.0, 1.0, 5);
        assert!(confidence_band(&s, &cfg(50), 0.7, &x).is_err());
        let mut bad = cfg(200);
        bad.levels = vec![0.9, 1.0];
        assert!(confidence_band(&s, &bad, 0.7, &x).is_err());
    }

    #[test]
    fn constant_response_is_degenerate() {
        let s = sample(60, 5).with_response(vec![2.0; 60]).unwrap();
        let err = confidence_band(&s, &cfg(200), 0.7, &linspace(-1.0, 1.0, 5)).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariance(_)));
    }

    #[test]
    fn specification_test() {
        let s = sample(120, 6);
        let band = confidence_band(&s, &cfg(200), 0.6, &linspace(-1.0, 1.0, 11)).unwrap();
        let center = spec_test(&band, &band.g, 2).unwrap();
        assert!(!center.reject && center.violations.is_empty());
        let mut off = band.g.clone();
        off[4] = band.upper[2][4] + 1.0;
        let res = spec_test(&band, &off, 2).unwrap();
        assert!(res.reject);
        assert_eq!(res.violations, vec![band.x[4]]);
        assert!(matches!(spec_test(&band, &off[..5], 2), Err(Error::InputShape(_))));
        assert!(spec_test(&band, &off, 7).is_err());
    }

    #[test]
    fn cdf_band_plateaus_and_superset_sup() {
        let s = sample(150, 7);
        let c = cfg(200);
        let tbl = sample_table(&s, &c, 0.6).unwrap();
        let x = linspace(-1.0, 1.0, 11);
        let ymin = s.y().iter().cloned().fold(f64::INFINITY, f64::min);
        let ymax = s.y().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y = vec![ymin - 1.0, -0.2, 0.0, 0.4, ymax + 1.0];
        let res = cdf_band(&s, &tbl, &x, &y, &c.levels, c.reps, c.seed).unwrap();
        for ix in 0..x.len() {
            if !res.clamped[ix] {
                assert_eq!(res.g[res.index(0, ix)], 0.0);
                assert!((res.g[res.index(4, ix)] - 1.0).abs() < 1e-9);
            }
        }
        // Matches the scalar band with indicator responses at a fixed y.
        for (iy, &yv) in y.iter().enumerate().take(4).skip(1) {
            let ind: Vec<f64> = s.y().iter().map(|&v| if v <= yv { 1.0 } else { 0.0 }).collect();
            let si = s.with_response(ind).unwrap();
            let grid = estimate_on_grid(&si, &tbl, &x).unwrap();
            for ix in 0..x.len() {
                let k = res.index(iy, ix);
                assert!((res.g[k] - grid.g[ix]).abs() < 1e-9);
                assert!((res.s[k] - grid.s[ix]).abs() < 1e-9);
            }
            let q = multiplier_quantile(&si, &grid, &c.levels, c.reps, c.seed).unwrap();
            for (a, b) in res.quantiles.iter().zip(&q.values) {
                assert!(*a >= *b - 1e-9);
            }
        }
        assert!(cdf_band(&s, &tbl, &x, &[1.0, 0.0], &c.levels, c.reps, c.seed).is_err());
        assert!(cdf_band(&s, &tbl, &x, &[f64::NAN], &c.levels, c.reps, c.seed).is_err());
    }
}
