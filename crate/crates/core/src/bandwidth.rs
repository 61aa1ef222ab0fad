//! Undersmoothing bandwidth selector.
//!
//! For each candidate `h_j` the selector evaluates the uniform squared bias
//! proxy `sup |A(x;h)|^2` and the uniform variance proxy `sup s^2(x;h)/n`,
//! both centred at an errors-in-variables polynomial pilot `g~`. It then
//! picks the smallest `j >= 2` whose (monotonized) increments satisfy
//! `c_n dA_j >= -dS_j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::{ErrorCf, KernelSpec};
use crate::deconv::{build_table, kernel_sums, squared_kernel_sums, DeconvTable, Truncation, DEFAULT_QUAD_NODES};
use crate::error::{Error, Result};
use crate::samples::Sample;

pub const DEFAULT_CN_EXPONENT: f64 = 0.3;
pub const DEFAULT_PILOT_DEGREE: usize = 3;
pub const DEFAULT_CANDIDATES: usize = 20;

/// Candidate bandwidths `h_1 < ... < h_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateGrid {
    /// `count` geometric steps on `[lo * sd(W) * (n/100)^{-1/2}, hi * sd(W)]`.
    Geometric { count: usize, lo: f64, hi: f64 },
    Explicit(Vec<f64>),
}

impl Default for CandidateGrid {
    fn default() -> Self {
        CandidateGrid::Geometric {
            count: DEFAULT_CANDIDATES,
            lo: 0.2,
            hi: 1.5,
        }
    }
}

impl CandidateGrid {
    pub fn resolve(&self, s: &Sample) -> Result<Vec<f64>> {
        let grid = match self {
            CandidateGrid::Explicit(h) => h.clone(),
            &CandidateGrid::Geometric { count, lo, hi } => {
                let sd = s.w_sd();
                let a = lo * sd * (s.n() as f64 / 100.0).powf(-0.5);
                let b = hi * sd;
                if count < 2 || !(a > 0.0) || !(b > a) {
                    return Err(Error::InvalidInput(format!(
                        "cannot build a geometric bandwidth grid on [{a}, {b}] with {count} points"
                    )));
                }
                let ratio = (b / a).ln() / (count - 1) as f64;
                (0..count).map(|j| a * (ratio * j as f64).exp()).collect()
            }
        };
        if grid.len() < 2 {
            return Err(Error::InvalidInput("need at least two candidate bandwidths".into()));
        }
        if grid.iter().any(|h| !(h.is_finite() && *h > 0.0)) || grid.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidInput(
                "candidate bandwidths must be positive and strictly increasing".into(),
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthConfig {
    pub candidates: CandidateGrid,
    /// `c_n = (n / 100)^cn_exponent`.
    pub cn_exponent: f64,
    pub pilot_degree: usize,
    pub x_grid: Vec<f64>,
    pub kernel: KernelSpec,
    pub quad_nodes: usize,
    pub truncation: Truncation,
}

impl BandwidthConfig {
    pub fn new(x_grid: Vec<f64>) -> Self {
        Self {
            candidates: CandidateGrid::default(),
            cn_exponent: DEFAULT_CN_EXPONENT,
            pilot_degree: DEFAULT_PILOT_DEGREE,
            x_grid,
            kernel: KernelSpec::default(),
            quad_nodes: DEFAULT_QUAD_NODES,
            truncation: Truncation::Auto,
        }
    }

    pub fn cn(&self, n: usize) -> f64 {
        (n as f64 / 100.0).powf(self.cn_exponent)
    }
}

/// Polynomial regression of `Y` on the latent `X`, fitted from
/// measurement-error-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotFit {
    /// `g~(x) = sum_p coef[p] x^p`.
    pub coef: Vec<f64>,
    /// Corrected `E[X^k]`, `k = 0..=2d`.
    pub moments_x: Vec<f64>,
    /// `E[eps^r]` from the centred `eta`, `r = 0..=2d`.
    pub moments_eps: Vec<f64>,
    /// Corrected `E[Y X^k]`, `k = 0..=d`.
    pub moments_yx: Vec<f64>,
}

impl PilotFit {
    pub fn degree(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

fn binomial(k: usize, q: usize) -> f64 {
    (0..q).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

/// Undo the convolution with the error moments:
/// `E[Z X^k] = E[Z W^k] - sum_{q<k} C(k,q) E[Z X^q] E[eps^{k-q}]`.
fn deconvolve_moments(raw: &[f64], eps: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(raw.len());
    for k in 0..raw.len() {
        let correction: f64 = (0..k).map(|q| binomial(k, q) * out[q] * eps[k - q]).sum();
        out.push(raw[k] - correction);
    }
    out
}

/// Gaussian elimination with partial pivoting; `None` when a pivot vanishes
/// relative to the matrix scale.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let d = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..d {
            let f = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn pilot_eiv_polyfit(s: &Sample, degree: usize) -> Result<PilotFit> {
    if degree < 1 {
        return Err(Error::InvalidInput("pilot degree must be at least 1".into()));
    }
    let top = 2 * degree;
    let n = s.n() as f64;
    let eta_mean = s.eta().iter().sum::<f64>() / s.m() as f64;
    let mut moments_eps = vec![0.0; top + 1];
    for e in s.eta() {
        let c = e - eta_mean;
        let mut p = 1.0;
        for m in moments_eps.iter_mut() {
            *m += p;
            p *= c;
        }
    }
    moments_eps.iter_mut().for_each(|v| *v /= s.m() as f64);

    let mut raw_w = vec![0.0; top + 1];
    let mut raw_yw = vec![0.0; degree + 1];
    for (&w, &y) in s.w().iter().zip(s.y()) {
        let mut p = 1.0;
        for k in 0..=top {
            raw_w[k] += p;
            if k <= degree {
                raw_yw[k] += y * p;
            }
            p *= w;
        }
    }
    raw_w.iter_mut().for_each(|v| *v /= n);
    raw_yw.iter_mut().for_each(|v| *v /= n);

    let moments_x = deconvolve_moments(&raw_w, &moments_eps);
    let moments_yx = deconvolve_moments(&raw_yw, &moments_eps);
    let matrix: Vec<Vec<f64>> = (0..=degree)
        .map(|p| (0..=degree).map(|q| moments_x[p + q]).collect())
        .collect();
    let coef = solve(matrix, moments_yx.clone()).ok_or_else(|| {
        Error::PilotFailure(format!("corrected moment matrix of degree {degree} is singular"))
    })?;
    Ok(PilotFit {
        coef,
        moments_x,
        moments_eps,
        moments_yx,
    })
}

/// Uniform bias and variance proxies at one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    /// `sup_x A(x;h)^2`.
    pub sup_a2: f64,
    /// `sup_x s^2(x;h) / n`.
    pub sup_s2_over_n: f64,
}

/// `A(x;h) = (1/n) sum (Y - g~(x)) K_j` and
/// `s^2(x;h) = (1/n) sum (Y - g~(x))^2 K_j^2 - A^2`, reduced to sup norms.
pub fn selector_criteria(s: &Sample, fit: &PilotFit, tbl: &DeconvTable, x_grid: &[f64]) -> Criteria {
    let sums = kernel_sums(s, tbl, x_grid);
    let [t0, t1, t2] = squared_kernel_sums(s, tbl, x_grid);
    let n = s.n() as f64;
    let mut sup_a2 = 0.0f64;
    let mut sup_s2 = 0.0f64;
    for (i, &x) in x_grid.iter().enumerate() {
        let gt = fit.eval(x);
        let a = sums.s1[i] - gt * sums.s0[i];
        let second = t2[i] - 2.0 * gt * t1[i] + gt * gt * t0[i];
        sup_a2 = sup_a2.max(a * a);
        sup_s2 = sup_s2.max(second - a * a);
    }
    Criteria {
        sup_a2,
        sup_s2_over_n: sup_s2 / n,
    }
}

/// Forward pass making `delta_a` non-decreasing and `delta_s` non-increasing.
pub fn monotonize(delta_a: &[f64], delta_s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if delta_a.len() != delta_s.len() || delta_a.is_empty() {
        return Err(Error::InputShape(format!(
            "increment sequences have lengths {} and {}",
            delta_a.len(),
            delta_s.len()
        )));
    }
    let mut a = delta_a.to_vec();
    let mut s = delta_s.to_vec();
    for j in 1..a.len() {
        if a[j - 1] > a[j] {
            a[j] = a[j - 1];
        }
        if s[j - 1] < s[j] {
            s[j] = s[j - 1];
        }
    }
    Ok((a, s))
}

/// Position in the increment sequences of the first `k` with
/// `cn * delta_a[k] >= -delta_s[k]`.
pub fn first_crossing(delta_a: &[f64], delta_s: &[f64], cn: f64) -> Option<usize> {
    delta_a
        .iter()
        .zip(delta_s)
        .position(|(a, s)| cn * a >= -s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub candidates: Vec<f64>,
    pub sup_a2: Vec<f64>,
    pub sup_s2_over_n: Vec<f64>,
    /// Increments for `j = 2..=J`; entry `k` compares candidates `k + 1` and `k`.
    pub delta_a: Vec<f64>,
    pub delta_s2: Vec<f64>,
    pub delta_a_monotone: Vec<f64>,
    pub delta_s2_monotone: Vec<f64>,
    pub cn: f64,
    /// Zero-based index of the chosen candidate.
    pub chosen_index: usize,
    pub h: f64,
    /// False when no candidate satisfied the rule and the largest was returned.
    pub crossed: bool,
    pub pilot: PilotFit,
    pub warnings: Vec<String>,
}

fn criteria_at(s: &Sample, fit: &PilotFit, cfg: &BandwidthConfig, h: f64) -> Result<Criteria> {
    let tbl = build_table(
        &ErrorCf::Empirical(s.eta().to_vec()),
        &cfg.kernel,
        h,
        cfg.quad_nodes,
        cfg.truncation,
    )?;
    Ok(selector_criteria(s, fit, &tbl, &cfg.x_grid))
}

pub fn select_bandwidth(s: &Sample, cfg: &BandwidthConfig) -> Result<(f64, SelectionTrace)> {
    if !(cfg.cn_exponent > 0.0 && cfg.cn_exponent.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "c_n exponent must be positive, got {}",
            cfg.cn_exponent
        )));
    }
    if cfg.x_grid.is_empty() || cfg.x_grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("selector grid must be non-empty and finite".into()));
    }
    let mut warnings = Vec::new();
    let candidates = cfg.candidates.resolve(s)?;

    let mut degree = cfg.pilot_degree.max(1);
    let pilot = loop {
        match pilot_eiv_polyfit(s, degree) {
            Ok(fit) => break fit,
            Err(Error::PilotFailure(msg)) if degree > 1 => {
                warnings.push(format!("{msg}; retrying with degree {}", degree - 1));
                degree -= 1;
            }
            Err(e) => return Err(e),
        }
    };

    let raw: Vec<Result<Criteria>> = candidates
        .par_iter()
        .map(|&h| criteria_at(s, &pilot, cfg, h))
        .collect();
    let mut kept = Vec::with_capacity(candidates.len());
    for (&h, r) in candidates.iter().zip(raw) {
        match r {
            Ok(c) if c.sup_a2.is_finite() && c.sup_s2_over_n.is_finite() => kept.push((h, c)),
            Ok(_) => warnings.push(format!("non-finite criteria at h = {h}; candidate dropped")),
            Err(e) => warnings.push(format!("candidate h = {h} dropped: {e}")),
        }
    }
    if kept.len() < 2 {
        return Err(Error::Selection(
            "fewer than two candidate bandwidths produced finite criteria".into(),
        ));
    }
    let hs: Vec<f64> = kept.iter().map(|k| k.0).collect();
    let sup_a2: Vec<f64> = kept.iter().map(|k| k.1.sup_a2).collect();
    let sup_s2: Vec<f64> = kept.iter().map(|k| k.1.sup_s2_over_n).collect();
    let delta_a: Vec<f64> = sup_a2.windows(2).map(|p| p[1] - p[0]).collect();
    let delta_s2: Vec<f64> = sup_s2.windows(2).map(|p| p[1] - p[0]).collect();
    let (mono_a, mono_s) = monotonize(&delta_a, &delta_s2)?;
    let cn = cfg.cn(s.n());
    let (chosen_index, crossed) = match first_crossing(&mono_a, &mono_s, cn) {
        Some(k) => (k + 1, true),
        None => {
            warnings.push("no candidate satisfied the selection rule; using the largest".into());
            (hs.len() - 1, false)
        }
    };
    let h = hs[chosen_index];
    Ok((
        h,
        SelectionTrace {
            candidates: hs,
            sup_a2,
            sup_s2_over_n: sup_s2,
            delta_a,
            delta_s2,
            delta_a_monotone: mono_a,
            delta_s2_monotone: mono_s,
            cn,
            chosen_index,
            h,
            crossed,
            pilot,
            warnings,
        },
    ))
}
