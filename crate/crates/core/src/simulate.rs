//! Simulation designs and the Monte Carlo coverage experiment.
//!
//! Model 1 observes `W = X + eps` with an independent error sample `eta`,
//! both Laplace with scale `2^{-1/2}`. Model 2 observes two replicates
//! `W1, W2` with Laplace(`1/2`) errors and is reduced by the half-sum /
//! half-difference transform. In both, `X ~ N(0, sigma_x^2)` and
//! `Y = g(X) + U` with `U ~ N(0, 1)`.

use std::fmt;
use std::time::Instant;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{confidence_band, BandConfig};
use crate::bandwidth::{select_bandwidth, BandwidthConfig};
use crate::error::{Error, Result};
use crate::estimate::linspace;
use crate::rng::{derive_seed, stream_rng};
use crate::samples::{RepeatedMeasurements, Sample};

pub const DEFAULT_MC_REPS: usize = 500;
pub const MIN_MC_REPS: usize = 50;
pub const DEFAULT_GRID_POINTS: usize = 101;

const TAG_DATA: u64 = 1;
const TAG_BOOTSTRAP: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Model1,
    Model2,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Model1 => "model1",
            Model::Model2 => "model2",
        })
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model1" | "1" => Ok(Model::Model1),
            "model2" | "2" => Ok(Model::Model2),
            _ => Err(Error::Usage(format!("unknown model `{s}` (expected model1 or model2)"))),
        }
    }
}

/// Regression function of the design.
#[derive(Clone)]
pub enum GFunction {
    Linear,
    Quadratic,
    Cubic,
    Sine,
    Cosine,
    Custom { name: String, f: fn(f64) -> f64 },
}

impl GFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GFunction::Linear => x,
            GFunction::Quadratic => x * x,
            GFunction::Cubic => x * x * x,
            GFunction::Sine => x.sin(),
            GFunction::Cosine => x.cos(),
            GFunction::Custom { f, .. } => f(x),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            GFunction::Linear => "linear",
            GFunction::Quadratic => "quadratic",
            GFunction::Cubic => "cubic",
            GFunction::Sine => "sine",
            GFunction::Cosine => "cosine",
            GFunction::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for GFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "x" => Ok(GFunction::Linear),
            "quadratic" | "x2" => Ok(GFunction::Quadratic),
            "cubic" | "x3" => Ok(GFunction::Cubic),
            "sine" | "sin" => Ok(GFunction::Sine),
            "cosine" | "cos" => Ok(GFunction::Cosine),
            _ => Err(Error::Usage(format!(
                "unknown regression function `{s}` (expected linear, quadratic, cubic, sine or cosine)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub model: Model,
    pub g: GFunction,
    pub sigma_x: f64,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(model: Model, g: GFunction, sigma_x: f64, n: usize, seed: u64) -> Result<Self> {
        if n < 10 {
            return Err(Error::InvalidInput(format!("sample size must be at least 10, got {n}")));
        }
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_x must be positive, got {sigma_x}")));
        }
        Ok(Self {
            model,
            g,
            sigma_x,
            n,
            seed,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// The interval `[-sigma_x, sigma_x]` on which coverage is assessed.
    pub fn interval(&self) -> (f64, f64) {
        (-self.sigma_x, self.sigma_x)
    }

    pub fn generate(&self) -> Sample {
        match self.model {
            Model::Model1 => gen_model1(self),
            Model::Model2 => gen_model2(self),
        }
    }
}

/// Laplace(0, b) by inversion of the distribution function.
pub fn laplace_draw(rng: &mut impl Rng, b: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

// Each latent component comes from its own stream so that adding a component
// to one model never shifts the draws of another.
fn normals(seed: u64, stream: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn laplaces(seed: u64, stream: u64, n: usize, b: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| laplace_draw(&mut rng, b)).collect()
}

fn responses(spec: &DgpSpec, x: &[f64]) -> Vec<f64> {
    let u = normals(spec.seed, 1, spec.n, 1.0);
    x.iter().zip(u).map(|(x, u)| spec.g.eval(*x) + u).collect()
}

pub fn gen_model1(spec: &DgpSpec) -> Sample {
    let b = 0.5f64.sqrt();
    let x = normals(spec.seed, 0, spec.n, spec.sigma_x);
    let y = responses(spec, &x);
    let eps = laplaces(spec.seed, 2, spec.n, b);
    let eta = laplaces(spec.seed, 3, spec.n, b);
    let w = x.iter().zip(eps).map(|(x, e)| x + e).collect();
    Sample::new(y, w, eta).expect("generated sample is well formed")
}

pub fn gen_model2(spec: &DgpSpec) -> Sample {
    let x = normals(spec.seed, 0, spec.n, spec.sigma_x);
    let y = responses(spec, &x);
    let e1 = laplaces(spec.seed, 2, spec.n, 0.5);
    let e2 = laplaces(spec.seed, 3, spec.n, 0.5);
    let w1 = x.iter().zip(e1).map(|(x, e)| x + e).collect();
    let w2 = x.iter().zip(e2).map(|(x, e)| x + e).collect();
    Sample::from_repeated(RepeatedMeasurements { y, w1, w2 }).expect("generated sample is well formed")
}

#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub band: BandConfig,
    /// Selector settings; the evaluation grid is replaced by the design interval.
    pub bandwidth: BandwidthConfig,
    pub mc_reps: usize,
    pub master_seed: u64,
    pub grid_points: usize,
}

impl CoverageConfig {
    pub fn new(mc_reps: usize, master_seed: u64) -> Self {
        Self {
            band: BandConfig::default(),
            bandwidth: BandwidthConfig::new(Vec::new()),
            mc_reps,
            master_seed,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub h: f64,
    /// One flag per level: the truth lies inside the band on the whole grid.
    pub covered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub model: Model,
    pub g: String,
    pub n: usize,
    pub sigma_x: f64,
    pub cn_exponent: f64,
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    /// Replications that produced a band.
    pub reps: usize,
    pub failures: usize,
    pub mean_h: f64,
    /// `None` for failed replications.
    pub outcomes: Vec<Option<RepOutcome>>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub model: Model,
    pub g: String,
    pub n: usize,
    pub sigma_x: f64,
    pub cn_exponent: f64,
    pub level: f64,
    pub coverage: f64,
    pub reps: usize,
}

impl CoverageReport {
    pub fn rows(&self) -> Vec<CoverageRow> {
        self.levels
            .iter()
            .zip(&self.coverage)
            .map(|(&level, &coverage)| CoverageRow {
                model: self.model,
                g: self.g.clone(),
                n: self.n,
                sigma_x: self.sigma_x,
                cn_exponent: self.cn_exponent,
                level,
                coverage,
                reps: self.reps,
            })
            .collect()
    }

    /// Binomial standard error of the coverage estimate at `level`.
    pub fn standard_error(&self, level: usize) -> f64 {
        let p = self.coverage[level];
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }
}

/// One replication: data, selected bandwidth, band, coverage flags.
pub fn coverage_rep(spec: &DgpSpec, cfg: &CoverageConfig, rep: usize) -> Result<RepOutcome> {
    let data = spec.with_seed(derive_seed(cfg.master_seed, TAG_DATA, rep as u64));
    let s = data.generate();
    let (lo, hi) = spec.interval();
    let x = linspace(lo, hi, cfg.grid_points);
    let bw = BandwidthConfig {
        x_grid: x.clone(),
        ..cfg.bandwidth.clone()
    };
    let (h, _) = select_bandwidth(&s, &bw)?;
    let band_cfg = BandConfig {
        seed: derive_seed(cfg.master_seed, TAG_BOOTSTRAP, rep as u64),
        ..cfg.band.clone()
    };
    let band = confidence_band(&s, &band_cfg, h, &x)?;
    let truth: Vec<f64> = x.iter().map(|&v| spec.g.eval(v)).collect();
    Ok(RepOutcome {
        h,
        covered: (0..band.levels.len()).map(|l| band.covers(l, &truth)).collect(),
    })
}

pub fn coverage_experiment(spec: &DgpSpec, cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.mc_reps < MIN_MC_REPS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_MC_REPS} Monte Carlo replications, got {}",
            cfg.mc_reps
        )));
    }
    if cfg.grid_points < 1 {
        return Err(Error::InvalidInput("grid must have at least one point".into()));
    }
    let start = Instant::now();
    let results: Vec<Result<RepOutcome>> = (0..cfg.mc_reps)
        .into_par_iter()
        .map(|r| coverage_rep(spec, cfg, r))
        .collect();

    let mut warnings = Vec::new();
    let mut failures = 0;
    let mut outcomes = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(Some(o)),
            Err(e) => {
                failures += 1;
                warnings.push(format!("replication {r} failed: {e}"));
                outcomes.push(None);
            }
        }
    }
    if failures * 50 >= cfg.mc_reps {
        return Err(Error::Experiment(format!(
            "{failures} of {} replications failed (limit is under 2%)",
            cfg.mc_reps
        )));
    }
    let done: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let reps = done.len();
    let levels = cfg.band.levels.clone();
    let coverage = (0..levels.len())
        .map(|l| done.iter().filter(|o| o.covered[l]).count() as f64 / reps as f64)
        .collect();
    let mean_h = done.iter().map(|o| o.h).sum::<f64>() / reps as f64;
    Ok(CoverageReport {
        model: spec.model,
        g: spec.g.name().to_string(),
        n: spec.n,
        sigma_x: spec.sigma_x,
        cn_exponent: cfg.bandwidth.cn_exponent,
        levels,
        coverage,
        reps,
        failures,
        mean_h,
        outcomes,
        warnings,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
