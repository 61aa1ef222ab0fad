//! Plug-in deconvolution kernel and its sums, evaluated by trapezoidal
//! Fourier inversion on `[-1, 1]`, the support of the flat-top transform.
//!
//! With `r(t) = phi_K(t) / phi_eps(t / h)`,
//!
//! ```text
//! K(u)  = (1/2pi) int e^{-itu} r(t) dt
//! S0(x) = (1/n) sum_j K((x - W_j)/h) = (1/2pi) int e^{-itx/h} r(t) psi_1(t) dt
//! S1(x) = (1/n) sum_j Y_j K((x - W_j)/h) = (1/2pi) int e^{-itx/h} r(t) psi_y(t) dt
//! ```
//!
//! where `psi_a(t) = (1/n) sum_j a_j e^{itW_j/h}`. Only the non-negative half
//! of the frequency lattice is stored; every integrand is Hermitian.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::charfn::{flat_top_cf, lift_to_floor, ErrorCf, FrequencyGrid, KernelSpec};
use crate::error::{Error, Result};
use crate::fourier::{cosine_series, cosine_series_many, phasor_sums};
use crate::samples::Sample;

pub const DEFAULT_QUAD_NODES: usize = 2049;
pub const MIN_QUAD_NODES: usize = 64;

/// Guard applied to the error CF before dividing by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// `m^{-1/2}` for empirical CFs, nothing for closed-form ones.
    #[default]
    Auto,
    Floor(f64),
    Off,
}

impl Truncation {
    fn floor_for(&self, cf: &ErrorCf) -> Option<f64> {
        match *self {
            Truncation::Auto => cf.draws().map(|m| (m as f64).powf(-0.5)),
            Truncation::Floor(f) => Some(f),
            Truncation::Off => None,
        }
    }
}

/// Quadrature nodes on `[0, 1]` and the kernel ratio at each node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeconvTable {
    h: f64,
    kernel: KernelSpec,
    grid: FrequencyGrid,
    ratio: Vec<Complex64>,
    n_nodes: usize,
    truncated: usize,
    floor: Option<f64>,
    /// `w_k r_k / 2pi`, doubled for `k > 0`.
    coef: Vec<Complex64>,
}

/// Build the ratio table for bandwidth `h` with an `n_nodes`-point
/// trapezoidal rule on `[-1, 1]` (`n_nodes` odd).
pub fn build_table(
    cf: &ErrorCf,
    kernel: &KernelSpec,
    h: f64,
    n_nodes: usize,
    truncation: Truncation,
) -> Result<DeconvTable> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
    }
    if n_nodes < MIN_QUAD_NODES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_QUAD_NODES} quadrature nodes, got {n_nodes}"
        )));
    }
    let grid = FrequencyGrid::symmetric_trapezoid(1.0, n_nodes)?;
    let step = grid.lattice_step().expect("trapezoid grid is a lattice");
    let floor = truncation.floor_for(cf);
    if let Some(f) = floor {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::InvalidInput(format!("truncation floor must be positive, got {f}")));
        }
    }
    let eps = match cf {
        ErrorCf::Empirical(eta) if eta.is_empty() => {
            return Err(Error::InvalidInput("empirical CF needs at least one draw".into()))
        }
        _ => cf.lattice_values(step / h, grid.len()),
    };

    let mut truncated = 0;
    let mut ratio = Vec::with_capacity(grid.len());
    for (&t, &phi) in grid.nodes().iter().zip(&eps) {
        let k = flat_top_cf(kernel, t);
        if k == 0.0 {
            ratio.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let denom = match floor.and_then(|f| lift_to_floor(phi, f)) {
            Some(lifted) => {
                truncated += 1;
                lifted
            }
            None => phi,
        };
        let r = k / denom;
        if !(r.re.is_finite() && r.im.is_finite()) {
            return Err(Error::Numeric(format!(
                "kernel ratio is not finite at t = {t} (h = {h}); error CF vanishes"
            )));
        }
        ratio.push(r);
    }

    let coef = ratio
        .iter()
        .zip(grid.weights())
        .enumerate()
        .map(|(k, (r, w))| {
            let f = if k == 0 { 1.0 } else { 2.0 };
            r * (f * w / (2.0 * PI))
        })
        .collect();

    Ok(DeconvTable {
        h,
        kernel: *kernel,
        grid,
        ratio,
        n_nodes,
        truncated,
        floor,
        coef,
    })
}

impl DeconvTable {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// `phi_K(t_k) / phi_eps(t_k / h)` on the non-negative nodes.
    pub fn ratio(&self) -> &[Complex64] {
        &self.ratio
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Nodes inside the kernel support where the error CF was lifted to the floor.
    pub fn truncated_nodes(&self) -> usize {
        self.truncated
    }

    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    fn step(&self) -> f64 {
        self.grid.nodes()[1]
    }

    /// Deconvolution kernel `K(u)`.
    pub fn kernel_at(&self, u: f64) -> f64 {
        cosine_series(&self.coef, self.step(), u)
    }

    /// `(1/h) int K(u)^2 du` computed in frequency space,
    /// `(1/(2 pi h)) int |r(t)|^2 dt`.
    pub fn kernel_l2_frequency(&self) -> f64 {
        let sq: Vec<Complex64> = self
            .ratio
            .iter()
            .map(|r| Complex64::new(r.norm_sqr(), 0.0))
            .collect();
        self.grid.integrate_hermitian(&sq) / (2.0 * PI * self.h)
    }

    /// `(1/h) int K(u)^2 du` by trapezoidal quadrature over `[-u_max, u_max]`.
    pub fn kernel_l2_space(&self, u_max: f64, du: f64) -> f64 {
        let steps = (u_max / du).ceil() as usize;
        let du = u_max / steps as f64;
        let total: f64 = (0..=2 * steps)
            .into_par_iter()
            .map(|i| {
                let u = -u_max + i as f64 * du;
                let k = self.kernel_at(u);
                let w = if i == 0 || i == 2 * steps { 0.5 } else { 1.0 };
                w * k * k
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total * du / self.h
    }

    /// Coefficients `d_s` on the lattice `s * step`, `s = 0..=2M`, such that
    /// `K(u)^2 = sum_s Re(e^{-i s step u} d_s)` exactly for the discretized
    /// kernel. Computed as the autoconvolution of the full coefficient vector.
    pub(crate) fn squared_kernel_coef(&self) -> Vec<Complex64> {
        let half = self.ratio.len() - 1;
        let weights = self.grid.weights();
        let full_len = 2 * half + 1;
        let fft_len = (2 * full_len - 1).next_power_of_two();
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
        for k in 0..=half {
            let c = self.ratio[k] * (weights[k] / (2.0 * PI));
            buf[half + k] = c;
            buf[half - k] = c.conj();
        }
        let mut planner = FftPlanner::<f64>::new();
        planner.plan_fft_forward(fft_len).process(&mut buf);
        for v in &mut buf {
            *v = *v * *v;
        }
        planner.plan_fft_inverse(fft_len).process(&mut buf);
        let scale = 1.0 / fft_len as f64;
        // Linear convolution index i corresponds to s = i - 2M.
        (0..=2 * half)
            .map(|s| {
                let d = buf[2 * half + s] * scale;
                if s == 0 {
                    Complex64::new(d.re, 0.0)
                } else {
                    2.0 * d
                }
            })
            .collect()
    }
}

/// `psi_y(t) = (1/n) sum_j Y_j e^{itW_j/h}` and `psi_1(t) = (1/n) sum_j e^{itW_j/h}`
/// on the table's non-negative nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedEcf {
    pub grid: FrequencyGrid,
    pub psi_y: Vec<Complex64>,
    pub psi_1: Vec<Complex64>,
}

pub fn weighted_ecf(s: &Sample, tbl: &DeconvTable) -> WeightedEcf {
    let n = s.n() as f64;
    let wy: Vec<f64> = s.y().iter().map(|y| y / n).collect();
    let w1 = vec![1.0 / n; s.n()];
    let mut out = phasor_sums(s.w(), &[&wy, &w1], tbl.step() / tbl.h, tbl.grid.len());
    let mut psi_1 = out.pop().expect("two weight vectors");
    let psi_y = out.pop().expect("two weight vectors");
    psi_1[0] = Complex64::new(1.0, 0.0);
    WeightedEcf {
        grid: tbl.grid.clone(),
        psi_y,
        psi_1,
    }
}

/// Per-observation kernel values `K((x_g - W_j)/h)`, one row per grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn compute(s: &Sample, tbl: &DeconvTable, x_grid: &[f64]) -> Self {
        let n = s.n();
        let mut values = vec![0.0; x_grid.len() * n];
        if n > 0 {
            values
                .par_chunks_mut(n)
                .zip(x_grid.par_iter())
                .for_each(|(row, &x)| {
                    let us: Vec<f64> = s.w().iter().map(|w| (x - w) / tbl.h).collect();
                    row.copy_from_slice(&cosine_series_many(&tbl.coef, tbl.step(), &us));
                });
        }
        Self {
            rows: x_grid.len(),
            cols: n,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.cols..(g + 1) * self.cols]
    }

    pub fn get(&self, g: usize, j: usize) -> f64 {
        self.values[g * self.cols + j]
    }
}

/// Kernel sums on an evaluation grid. `s0` and `s1` come from the frequency
/// domain; the per-observation matrix is built on first request.
#[derive(Debug)]
pub struct KernelSums<'a> {
    sample: &'a Sample,
    table: &'a DeconvTable,
    pub x: Vec<f64>,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    matrix: OnceLock<KernelMatrix>,
}

impl<'a> KernelSums<'a> {
    pub fn kernel_matrix(&self) -> &KernelMatrix {
        self.matrix
            .get_or_init(|| KernelMatrix::compute(self.sample, self.table, &self.x))
    }

    /// Take the matrix out, computing it if needed.
    pub fn into_matrix(self) -> KernelMatrix {
        self.kernel_matrix();
        self.matrix.into_inner().expect("initialized above")
    }
}

pub fn kernel_sums<'a>(s: &'a Sample, tbl: &'a DeconvTable, x_grid: &[f64]) -> KernelSums<'a> {
    let ecf = weighted_ecf(s, tbl);
    let c0: Vec<Complex64> = tbl.coef.iter().zip(&ecf.psi_1).map(|(c, p)| c * p).collect();
    let c1: Vec<Complex64> = tbl.coef.iter().zip(&ecf.psi_y).map(|(c, p)| c * p).collect();
    let step = tbl.step();
    let us: Vec<f64> = x_grid.iter().map(|x| x / tbl.h).collect();
    let s0 = series_par(&c0, step, &us);
    let s1 = series_par(&c1, step, &us);
    KernelSums {
        sample: s,
        table: tbl,
        x: x_grid.to_vec(),
        s0,
        s1,
        matrix: OnceLock::new(),
    }
}

/// `T_p(x) = (1/n) sum_j Y_j^p K((x - W_j)/h)^2` for `p = 0, 1, 2`, in the
/// frequency domain via the autoconvolved kernel spectrum.
pub fn squared_kernel_sums(s: &Sample, tbl: &DeconvTable, x_grid: &[f64]) -> [Vec<f64>; 3] {
    let d = tbl.squared_kernel_coef();
    let n = s.n() as f64;
    let w0 = vec![1.0 / n; s.n()];
    let w1: Vec<f64> = s.y().iter().map(|y| y / n).collect();
    let w2: Vec<f64> = s.y().iter().map(|y| y * y / n).collect();
    let step = tbl.step();
    let psi = phasor_sums(s.w(), &[&w0, &w1, &w2], step / tbl.h, d.len());
    let coefs: Vec<Vec<Complex64>> = psi
        .iter()
        .map(|p| d.iter().zip(p).map(|(a, b)| a * b).collect())
        .collect();
    let us: Vec<f64> = x_grid.iter().map(|x| x / tbl.h).collect();
    [
        series_par(&coefs[0], step, &us),
        series_par(&coefs[1], step, &us),
        series_par(&coefs[2], step, &us),
    ]
}

fn series_par(coef: &[Complex64], step: f64, us: &[f64]) -> Vec<f64> {
    us.par_chunks(32)
        .flat_map_iter(|c| cosine_series_many(coef, step, c))
        .collect()
}
