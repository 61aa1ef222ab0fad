//! Point estimators on an evaluation grid: the deconvolution density
//! estimate of the latent predictor, the regression numerator, their ratio,
//! and the band standard deviation.

use serde::{Deserialize, Serialize};

use crate::deconv::{kernel_sums, DeconvTable, KernelMatrix};
use crate::error::{Error, Result};
use crate::samples::Sample;

/// Density estimates below this fraction of the grid maximum are clamped.
pub const DENSITY_CLAMP_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub truncated_nodes: usize,
    pub clamped_points: usize,
    /// Grid points outside the range of the observed `W`.
    pub outside_hull: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateGrid {
    pub x: Vec<f64>,
    /// Deconvolution density estimate of `X`.
    pub fx: Vec<f64>,
    pub mu: Vec<f64>,
    pub g: Vec<f64>,
    /// Band standard deviation, `sqrt((1/n) sum_j (Y_j - g)^2 K_j^2)`.
    pub s: Vec<f64>,
    pub h: f64,
    pub n: usize,
    pub clamped: Vec<bool>,
    pub fx_floor: f64,
    pub diagnostics: EstimateDiagnostics,
    #[serde(skip)]
    kernel: Option<KernelMatrix>,
}

impl EstimateGrid {
    /// Density used in ratios: the estimate, or the floor where clamped.
    pub fn fx_used(&self, g: usize) -> f64 {
        if self.clamped[g] {
            self.fx_floor
        } else {
            self.fx[g]
        }
    }

    /// `K((x_g - W_j)/h)` for every grid point and observation.
    pub fn kernel_matrix(&self) -> Option<&KernelMatrix> {
        self.kernel.as_ref()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn estimate_on_grid(s: &Sample, tbl: &DeconvTable, x_grid: &[f64]) -> Result<EstimateGrid> {
    if x_grid.is_empty() {
        return Err(Error::InvalidInput("evaluation grid is empty".into()));
    }
    if let Some(bad) = x_grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("evaluation grid contains {bad}")));
    }
    let h = tbl.h();
    // The discretized kernel is periodic in u; keep every pairwise distance
    // inside half a period so distant points do not alias onto the data.
    let (lo, hi) = s.w_range();
    let reach = x_grid
        .iter()
        .map(|x| (x - lo).abs().max((x - hi).abs()))
        .fold(0.0, f64::max);
    let half_period = 0.5 * std::f64::consts::PI * h * (tbl.n_nodes() - 1) as f64;
    if reach >= half_period {
        return Err(Error::Domain(format!(
            "grid reaches {reach:.4e} from the data but the quadrature resolves only {half_period:.4e} \
             at h = {h}; use more quadrature nodes"
        )));
    }
    let sums = kernel_sums(s, tbl, x_grid);
    let fx: Vec<f64> = sums.s0.iter().map(|v| v / h).collect();
    let mu: Vec<f64> = sums.s1.iter().map(|v| v / h).collect();

    let fx_max = fx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Anything below this is quadrature round-off, not density.
    let numerical_zero = 1e-12 * tbl.kernel_at(0.0).abs() / h;
    if !(fx_max > numerical_zero) {
        return Err(Error::EstimationFailure(format!(
            "density estimate is non-positive on the whole grid (h = {h}); \
             check the interval against the data or the bandwidth"
        )));
    }
    let fx_floor = DENSITY_CLAMP_FRACTION * fx_max;
    let clamped: Vec<bool> = fx.iter().map(|&f| f < fx_floor).collect();
    let g: Vec<f64> = fx
        .iter()
        .zip(&mu)
        .zip(&clamped)
        .map(|((&f, &m), &c)| if c { m / fx_floor } else { m / f })
        .collect();

    let kernel = sums.into_matrix();
    let n = s.n() as f64;
    let sd: Vec<f64> = (0..x_grid.len())
        .map(|i| {
            let var: f64 = kernel
                .row(i)
                .iter()
                .zip(s.y())
                .map(|(k, y)| ((y - g[i]) * k).powi(2))
                .sum::<f64>()
                / n;
            var.sqrt()
        })
        .collect();

    let diagnostics = EstimateDiagnostics {
        truncated_nodes: tbl.truncated_nodes(),
        clamped_points: clamped.iter().filter(|c| **c).count(),
        outside_hull: x_grid.iter().filter(|&&x| x < lo || x > hi).count(),
    };
    Ok(EstimateGrid {
        x: x_grid.to_vec(),
        fx,
        mu,
        g,
        s: sd,
        h,
        n: s.n(),
        clamped,
        fx_floor,
        diagnostics,
        kernel: Some(kernel),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroSumReport {
    /// `max_x |sum_j (Y_j - g(x)) K((x - W_j)/h)|` over unclamped points.
    pub max_residual: f64,
    pub excluded: usize,
}

impl ZeroSumReport {
    /// Tolerance `1e-8 (1 + max|Y|) n`.
    pub fn tolerance(s: &Sample) -> f64 {
        let ymax = s.y().iter().fold(0.0f64, |a, y| a.max(y.abs()));
        1e-8 * (1.0 + ymax) * s.n() as f64
    }
}

/// Residual of the identity `sum_j (Y_j - g(x)) K((x - W_j)/h) = 0`.
pub fn zero_sum_check(s: &Sample, grid: &EstimateGrid, tbl: &DeconvTable) -> ZeroSumReport {
    let owned;
    let kernel = match grid.kernel_matrix() {
        Some(k) => k,
        None => {
            owned = KernelMatrix::compute(s, tbl, &grid.x);
            &owned
        }
    };
    let mut max_residual = 0.0f64;
    let mut excluded = 0;
    for i in 0..grid.len() {
        if grid.clamped[i] {
            excluded += 1;
            continue;
        }
        let r: f64 = kernel
            .row(i)
            .iter()
            .zip(s.y())
            .map(|(k, y)| (y - grid.g[i]) * k)
            .sum();
        max_residual = max_residual.max(r.abs());
    }
    ZeroSumReport {
        max_residual,
        excluded,
    }
}

/// `n` equispaced points on `[lo, hi]`; a single point is `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
                .collect()
        }
    }
}
