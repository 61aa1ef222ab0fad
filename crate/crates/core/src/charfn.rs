//! Characteristic functions: the empirical CF of the error draws, closed-form
//! CFs of the simulation error laws, and the flat-top kernel transform.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier;

/// Quadrature nodes in frequency space.
///
/// Even grids store only the non-negative half `0 = t_0 < t_1 < ...`; the
/// weights are the per-node weights of the full symmetric rule, so a
/// Hermitian integrand integrates as `w_0 g(0) + 2 sum_{k>0} w_k Re g(t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    even: bool,
}

impl FrequencyGrid {
    /// Composite trapezoidal rule with `n_nodes` points on
    /// `[-half_width, half_width]`, stored as its non-negative half.
    pub fn symmetric_trapezoid(half_width: f64, n_nodes: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if n_nodes < 3 || n_nodes.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "symmetric trapezoid grid needs an odd node count >= 3, got {n_nodes}"
            )));
        }
        let half = (n_nodes - 1) / 2;
        let step = half_width / half as f64;
        let nodes = (0..=half).map(|k| k as f64 * step).collect();
        let mut weights = vec![step; half + 1];
        weights[half] = 0.5 * step;
        Ok(Self {
            nodes,
            weights,
            even: true,
        })
    }

    /// Arbitrary grid. Even grids must start at 0 with non-negative nodes;
    /// other grids must be symmetric about 0.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, even: bool) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InputShape(format!(
                "grid has {} nodes and {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.windows(2).any(|p| !(p[0] < p[1])) || nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("grid nodes must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput("grid weights must be positive".into()));
        }
        if even {
            if nodes[0] != 0.0 {
                return Err(Error::InvalidInput("even grid must start at t = 0".into()));
            }
        } else {
            let n = nodes.len();
            if (0..n).any(|i| nodes[i] != -nodes[n - 1 - i]) {
                return Err(Error::InvalidInput("grid must be symmetric about 0".into()));
            }
        }
        Ok(Self {
            nodes,
            weights,
            even,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_even(&self) -> bool {
        self.even
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes of the full symmetric rule.
    pub fn full_len(&self) -> usize {
        if self.even {
            2 * self.nodes.len() - 1
        } else {
            self.nodes.len()
        }
    }

    /// Lattice step when the grid is an even equispaced half-grid.
    pub fn lattice_step(&self) -> Option<f64> {
        if !self.even || self.nodes.len() < 2 {
            return None;
        }
        let step = self.nodes[1];
        let equispaced = self
            .nodes
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - k as f64 * step).abs() <= 1e-12 * (1.0 + t.abs()));
        equispaced.then_some(step)
    }

    /// Full symmetric nodes and weights.
    pub fn full(&self) -> (Vec<f64>, Vec<f64>) {
        if !self.even {
            return (self.nodes.clone(), self.weights.clone());
        }
        let mut nodes: Vec<f64> = self.nodes[1..].iter().rev().map(|t| -t).collect();
        let mut weights: Vec<f64> = self.weights[1..].iter().rev().copied().collect();
        nodes.extend_from_slice(&self.nodes);
        weights.extend_from_slice(&self.weights);
        (nodes, weights)
    }

    /// Integral of a Hermitian integrand given on the stored nodes. For
    /// non-even grids the real part of the plain weighted sum is returned.
    pub fn integrate_hermitian(&self, values: &[Complex64]) -> f64 {
        let plain: f64 = self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v.re)
            .sum();
        if self.even {
            2.0 * plain - self.weights[0] * values[0].re
        } else {
            plain
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfKind {
    Empirical,
    AnalyticLaplace,
    AnalyticProduct,
    ConstantOne,
}

/// Values of a characteristic function on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharFnTable {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
    pub kind: CfKind,
}

impl CharFnTable {
    /// Values on the full symmetric grid, reconstructing negative
    /// frequencies by conjugation for even grids.
    pub fn full_values(&self) -> Vec<Complex64> {
        if !self.grid.is_even() {
            return self.values.clone();
        }
        let mut out: Vec<Complex64> = self.values[1..].iter().rev().map(|v| v.conj()).collect();
        out.extend_from_slice(&self.values);
        out
    }
}

/// Flat-top kernel parameters: `phi_K = 1` on `|t| <= c`, 0 beyond `|t| >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    b: f64,
    c: f64,
}

impl KernelSpec {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidInput(format!("kernel b must be positive, got {b}")));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidInput(format!("kernel c must lie in (0, 1), got {c}")));
        }
        Ok(Self { b, c })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { b: 1.0, c: 0.05 }
    }
}

/// Fourier transform of the flat-top kernel.
pub fn flat_top_cf(spec: &KernelSpec, t: f64) -> f64 {
    let a = t.abs();
    let (b, c) = (spec.b, spec.c);
    if a <= c {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        let inner = (-b / (a - c).powi(2)).exp();
        (-b * inner / (a - 1.0).powi(2)).exp()
    }
}

/// Error-distribution characteristic function that can be evaluated at any
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorCf {
    /// Empirical CF of the given draws.
    Empirical(Vec<f64>),
    /// Laplace(0, scale): `1 / (1 + scale^2 t^2)`.
    Laplace { scale: f64 },
    /// Half-sum of two independent Laplace(0, component_scale) errors:
    /// `(1 + component_scale^2 t^2 / 4)^-2`.
    AveragedPair { component_scale: f64 },
    /// No measurement error.
    ConstantOne,
}

impl ErrorCf {
    pub fn kind(&self) -> CfKind {
        match self {
            ErrorCf::Empirical(_) => CfKind::Empirical,
            ErrorCf::Laplace { .. } => CfKind::AnalyticLaplace,
            ErrorCf::AveragedPair { .. } => CfKind::AnalyticProduct,
            ErrorCf::ConstantOne => CfKind::ConstantOne,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ErrorCf::Empirical(eta) if eta.is_empty() => {
                Err(Error::InvalidInput("empirical CF needs at least one draw".into()))
            }
            ErrorCf::Laplace { scale: s } | ErrorCf::AveragedPair { component_scale: s }
                if !(s.is_finite() && *s > 0.0) =>
            {
                Err(Error::InvalidInput(format!("CF scale must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        match self {
            ErrorCf::Empirical(eta) => {
                let m = eta.len() as f64;
                let (re, im) = eta.iter().fold((0.0, 0.0), |(re, im), e| {
                    let (s, c) = (t * e).sin_cos();
                    (re + c, im + s)
                });
                Complex64::new(re / m, im / m)
            }
            ErrorCf::Laplace { scale } => Complex64::new(1.0 / (1.0 + (scale * t).powi(2)), 0.0),
            ErrorCf::AveragedPair { component_scale } => {
                let base = 1.0 / (1.0 + (component_scale * t).powi(2) / 4.0);
                Complex64::new(base * base, 0.0)
            }
            ErrorCf::ConstantOne => Complex64::new(1.0, 0.0),
        }
    }

    /// Values at `k * step` for `k = 0..count`.
    pub(crate) fn lattice_values(&self, step: f64, count: usize) -> Vec<Complex64> {
        match self {
            ErrorCf::Empirical(eta) => {
                let inv = vec![1.0 / eta.len() as f64; eta.len()];
                let mut v = fourier::phasor_sums(eta, &[&inv], step, count)
                    .pop()
                    .expect("one weight vector");
                v[0] = Complex64::new(1.0, 0.0);
                v
            }
            _ => (0..count).map(|k| self.eval(k as f64 * step)).collect(),
        }
    }

    /// Tabulate on a grid.
    pub fn table(&self, grid: &FrequencyGrid) -> Result<CharFnTable> {
        self.validate()?;
        let values = match grid.lattice_step() {
            Some(step) => self.lattice_values(step, grid.len()),
            None => grid.nodes().iter().map(|&t| self.eval(t)).collect(),
        };
        Ok(CharFnTable {
            grid: grid.clone(),
            values,
            kind: self.kind(),
        })
    }

    /// Number of draws behind an empirical CF.
    pub fn draws(&self) -> Option<usize> {
        match self {
            ErrorCf::Empirical(eta) => Some(eta.len()),
            _ => None,
        }
    }
}

/// `(1/m) sum_i exp(i t eta_i)` on `grid`.
pub fn empirical_cf(eta: &[f64], grid: &FrequencyGrid) -> Result<CharFnTable> {
    ErrorCf::Empirical(eta.to_vec()).table(grid)
}

pub fn laplace_cf(scale: f64, grid: &FrequencyGrid) -> Result<CharFnTable> {
    ErrorCf::Laplace { scale }.table(grid)
}

pub fn averaged_pair_cf(component_scale: f64, grid: &FrequencyGrid) -> Result<CharFnTable> {
    ErrorCf::AveragedPair { component_scale }.table(grid)
}

/// Lift every value with modulus below `floor` to modulus `floor`, keeping
/// its phase (zeros become `floor + 0i`). Returns the table and the number of
/// modified nodes.
pub fn truncate_cf(mut cf: CharFnTable, floor: f64) -> (CharFnTable, usize) {
    let mut modified = 0;
    for v in &mut cf.values {
        if let Some(lifted) = lift_to_floor(*v, floor) {
            *v = lifted;
            modified += 1;
        }
    }
    (cf, modified)
}

pub(crate) fn lift_to_floor(v: Complex64, floor: f64) -> Option<Complex64> {
    let r = v.norm();
    if r >= floor {
        None
    } else if r == 0.0 {
        Some(Complex64::new(floor, 0.0))
    } else {
        Some(v * (floor / r))
    }
}
