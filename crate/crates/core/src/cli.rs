//! Command-line front end.
//!
//! Subcommands: `band`, `bandwidth`, `simulate`, `spectest`, `cdfband`.
//! Settings come from flags, optionally layered over a JSON file given with
//! `--config` whose keys are the flag names in snake case. Flags win.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::band::{
    cdf_band, confidence_band, sample_table, spec_test, BandConfig, BandResult, CdfBandResult, DEFAULT_BAND_REPS,
    DEFAULT_LEVELS,
};
use crate::bandwidth::{
    pilot_eiv_polyfit, select_bandwidth, BandwidthConfig, CandidateGrid, SelectionTrace, DEFAULT_CN_EXPONENT,
    DEFAULT_PILOT_DEGREE,
};
use crate::charfn::KernelSpec;
use crate::deconv::{Truncation, DEFAULT_QUAD_NODES};
use crate::error::{Error, Result};
use crate::estimate::linspace;
use crate::samples::{RepeatedMeasurements, Sample};
use crate::simulate::{
    coverage_experiment, CoverageConfig, CoverageReport, DgpSpec, GFunction, Model, DEFAULT_GRID_POINTS,
    DEFAULT_MC_REPS,
};

pub const THREADS_ENV: &str = "DECONVBAND_THREADS";
pub const DEFAULT_Y_POINTS: usize = 25;

#[derive(Debug, Parser)]
#[command(name = "deconvband", version, about = "Deconvolution regression with uniform confidence bands")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate g on an interval and write its uniform confidence bands.
    Band(Settings),
    /// Run the undersmoothing bandwidth selector.
    Bandwidth(Settings),
    /// Monte Carlo coverage of the bands over simulated designs.
    Simulate(Settings),
    /// Test a polynomial specification of g against the band.
    Spectest(Settings),
    /// Bands for the conditional distribution function of Y given X.
    Cdfband(Settings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Primary data file (CSV with a header row).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Measurement-error file: an `eta` column, or validation columns `x` and `w`.
    #[arg(long)]
    pub eta: Option<PathBuf>,
    /// Column of the first repeated measurement in the input file.
    #[arg(long)]
    pub w1: Option<String>,
    /// Column of the second repeated measurement in the input file.
    #[arg(long)]
    pub w2: Option<String>,
    #[arg(long)]
    pub y_col: Option<String>,
    #[arg(long)]
    pub w_col: Option<String>,
    /// Column of the error file holding measurement-error draws.
    #[arg(long)]
    pub eta_col: Option<String>,
    /// Evaluation interval; defaults to the 10% and 90% sample quantiles of W.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub interval: Option<Vec<f64>>,
    /// Coverage levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Bootstrap replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Monte Carlo replications per simulated cell.
    #[arg(long)]
    pub mc_reps: Option<usize>,
    /// `auto` or a positive bandwidth.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Explicit candidate bandwidths for the selector, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<f64>>,
    /// Exponent of `c_n = (n/100)^e`; a list sweeps cells in `simulate`.
    #[arg(long, value_delimiter = ',')]
    pub cn_exponent: Option<Vec<f64>>,
    #[arg(long)]
    pub pilot_degree: Option<usize>,
    /// Degree of the polynomial specification tested by `spectest`.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Coverage level used by `spectest`.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub kernel_b: Option<f64>,
    #[arg(long)]
    pub kernel_c: Option<f64>,
    #[arg(long)]
    pub quad_nodes: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Number of response levels for `cdfband`.
    #[arg(long)]
    pub y_points: Option<usize>,
    /// Explicit response levels for `cdfband`, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y_grid: Option<Vec<f64>>,
    /// Designs for `simulate`: model1, model2.
    #[arg(long, value_delimiter = ',')]
    pub model: Option<Vec<String>>,
    /// Regression functions for `simulate`: linear, quadratic, cubic, sine, cosine.
    #[arg(long, value_delimiter = ',')]
    pub g: Option<Vec<String>>,
    /// Sample sizes for `simulate`.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Standard deviations of X for `simulate`.
    #[arg(long, value_delimiter = ',')]
    pub sigma_x: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to DECONVBAND_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// JSON file with default settings.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

macro_rules! fill_from {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl Settings {
    /// Layer the flags over the `--config` file, if any.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file: Settings = serde_json::from_reader(File::open(&path)?)
            .map_err(|e| Error::Usage(format!("config file {}: {e}", path.display())))?;
        fill_from!(self, file;
            input, eta, w1, w2, y_col, w_col, eta_col, interval, levels, reps, mc_reps,
            bandwidth, candidates, cn_exponent, pilot_degree, degree, level, kernel_b, kernel_c,
            quad_nodes, grid_points, y_points, y_grid, model, g, n, sigma_x, seed, threads, out, format,
        );
        Ok(self)
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn levels(&self) -> Result<Vec<f64>> {
        let levels = self.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
        if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Usage("levels must lie strictly between 0 and 1".into()));
        }
        Ok(levels)
    }

    fn kernel(&self) -> Result<KernelSpec> {
        let d = KernelSpec::default();
        KernelSpec::new(self.kernel_b.unwrap_or(d.b()), self.kernel_c.unwrap_or(d.c()))
    }

    fn single_cn_exponent(&self) -> Result<f64> {
        match self.cn_exponent.as_deref() {
            None => Ok(DEFAULT_CN_EXPONENT),
            Some([e]) => Ok(*e),
            Some(_) => Err(Error::Usage("expected a single --cn-exponent".into())),
        }
    }

    fn band_config(&self) -> Result<BandConfig> {
        let reps = self.reps.unwrap_or(DEFAULT_BAND_REPS);
        if reps < 100 {
            return Err(Error::Usage(format!("--reps must be at least 100, got {reps}")));
        }
        Ok(BandConfig {
            levels: self.levels()?,
            reps,
            seed: self.seed(),
            kernel: self.kernel()?,
            quad_nodes: self.quad_nodes.unwrap_or(DEFAULT_QUAD_NODES),
            truncation: Truncation::Auto,
            exclude_clamped: false,
        })
    }

    fn bandwidth_config(&self, x_grid: Vec<f64>) -> Result<BandwidthConfig> {
        let mut cfg = BandwidthConfig::new(x_grid);
        if let Some(c) = &self.candidates {
            cfg.candidates = CandidateGrid::Explicit(c.clone());
        }
        cfg.cn_exponent = self.single_cn_exponent()?;
        cfg.pilot_degree = self.pilot_degree.unwrap_or(DEFAULT_PILOT_DEGREE);
        cfg.kernel = self.kernel()?;
        cfg.quad_nodes = self.quad_nodes.unwrap_or(DEFAULT_QUAD_NODES);
        Ok(cfg)
    }

    fn grid_points(&self) -> Result<usize> {
        match self.grid_points.unwrap_or(DEFAULT_GRID_POINTS) {
            0 => Err(Error::Usage("--grid-points must be positive".into())),
            g => Ok(g),
        }
    }

    fn threads(&self) -> Result<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
            Err(_) => Ok(None),
        }
    }
}

/// Sample read from files, with the number of rows dropped for missing or
/// non-finite values.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub sample: Sample,
    pub dropped_rows: usize,
    pub dropped_eta_rows: usize,
}

fn parse_field(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read named numeric columns; rows with a missing or non-finite value in any
/// of them are dropped and counted.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let idx = names
        .iter()
        .map(|name| {
            headers.iter().position(|h| h.trim() == *name).ok_or_else(|| {
                Error::Data(format!("column `{name}` not found in {}", path.display()))
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let row: Option<Vec<f64>> = idx.iter().map(|&i| record.get(i).and_then(parse_field)).collect();
        match row {
            Some(values) => cols.iter_mut().zip(values).for_each(|(c, v)| c.push(v)),
            None => dropped += 1,
        }
    }
    Ok((cols, dropped))
}

fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

pub fn load_sample(cfg: &Settings) -> Result<LoadedSample> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| Error::Usage("--input is required".into()))?;
    let y_col = cfg.y_col.as_deref().unwrap_or("y");
    match (&cfg.w1, &cfg.w2, &cfg.eta) {
        (Some(a), Some(b), _) => {
            let (mut cols, dropped) = read_columns(input, &[y_col, a, b])?;
            let w2 = cols.pop().unwrap_or_default();
            let w1 = cols.pop().unwrap_or_default();
            let y = cols.pop().unwrap_or_default();
            let sample = Sample::from_repeated(RepeatedMeasurements { y, w1, w2 }).map_err(as_data)?;
            Ok(LoadedSample {
                sample,
                dropped_rows: dropped,
                dropped_eta_rows: 0,
            })
        }
        (Some(_), None, _) | (None, Some(_), _) => Err(Error::Usage("--w1 and --w2 must be given together".into())),
        (None, None, Some(eta_path)) => {
            let w_col = cfg.w_col.as_deref().unwrap_or("w");
            let (mut cols, dropped) = read_columns(input, &[y_col, w_col])?;
            let w = cols.pop().unwrap_or_default();
            let y = cols.pop().unwrap_or_default();
            let headers = csv_headers(eta_path)?;
            let has = |name: &str| headers.iter().any(|h| h == name);
            let (sample, dropped_eta) = match cfg.eta_col.as_deref() {
                Some(col) => {
                    let (mut e, d) = read_columns(eta_path, &[col])?;
                    (Sample::new(y, w, e.pop().unwrap_or_default()), d)
                }
                None if has("eta") => {
                    let (mut e, d) = read_columns(eta_path, &["eta"])?;
                    (Sample::new(y, w, e.pop().unwrap_or_default()), d)
                }
                None if has("x") && has("w") => {
                    let (v, d) = read_columns(eta_path, &["x", "w"])?;
                    (Sample::from_validation(y, w, &v[0], &v[1]), d)
                }
                None => {
                    return Err(Error::Data(format!(
                        "{} has neither an `eta` column nor validation columns `x` and `w`",
                        eta_path.display()
                    )))
                }
            };
            Ok(LoadedSample {
                sample: sample.map_err(as_data)?,
                dropped_rows: dropped,
                dropped_eta_rows: dropped_eta,
            })
        }
        (None, None, None) => Err(Error::Usage(
            "no measurement-error source: give --eta FILE or --w1 COL --w2 COL".into(),
        )),
    }
}

fn as_data(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) | Error::InputShape(m) => Error::Data(m),
        other => other,
    }
}

/// Linear-interpolation sample quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn interval(cfg: &Settings, s: &Sample) -> Result<(f64, f64)> {
    match cfg.interval.as_deref() {
        Some(&[lo, hi]) if lo < hi && lo.is_finite() && hi.is_finite() => Ok((lo, hi)),
        Some(_) => Err(Error::Usage("--interval needs LO < HI".into())),
        None => Ok((quantile(s.w(), 0.1), quantile(s.w(), 0.9))),
    }
}

enum BandwidthChoice {
    Auto,
    Fixed(f64),
}

fn bandwidth_choice(cfg: &Settings) -> Result<BandwidthChoice> {
    match cfg.bandwidth.as_deref() {
        None | Some("auto") => Ok(BandwidthChoice::Auto),
        Some(v) => match v.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthChoice::Fixed(h)),
            _ => Err(Error::Usage(format!("--bandwidth must be `auto` or a positive number, got `{v}`"))),
        },
    }
}

fn choose_bandwidth(cfg: &Settings, s: &Sample, x: &[f64]) -> Result<(f64, Option<SelectionTrace>)> {
    match bandwidth_choice(cfg)? {
        BandwidthChoice::Fixed(h) => Ok((h, None)),
        BandwidthChoice::Auto => {
            let (h, trace) = select_bandwidth(s, &cfg.bandwidth_config(x.to_vec())?)?;
            for w in &trace.warnings {
                eprintln!("warning: {w}");
            }
            Ok((h, Some(trace)))
        }
    }
}

/// Column suffix for a level: 0.8 -> "80", 0.975 -> "97.5".
pub fn level_label(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{}", (pct * 1e6).round() / 1e6)
    }
}

/// Fixed 17-significant-digit rendering; parses back to the same value.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        let mut name = out.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    } else {
        out.with_extension("json")
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub h: f64,
    pub bandwidth: String,
    pub taus: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    pub m: usize,
    pub dropped_rows: usize,
    pub dropped_eta_rows: usize,
    pub clamped_x: Vec<f64>,
    pub diagnostics: crate::band::BandDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selection: Option<SelectionTrace>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub band: Option<BandResult>,
}

pub fn write_band_csv<W: Write>(w: W, band: &BandResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["x", "ghat", "fxhat", "shat"].iter().map(|s| s.to_string()).collect();
    for &l in &band.levels {
        let lab = level_label(l);
        header.push(format!("lower{lab}"));
        header.push(format!("upper{lab}"));
    }
    wr.write_record(&header)?;
    for i in 0..band.x.len() {
        let mut row = vec![fmt_num(band.x[i]), fmt_num(band.g[i]), fmt_num(band.fx[i]), fmt_num(band.s[i])];
        for l in 0..band.levels.len() {
            row.push(fmt_num(band.lower[l][i]));
            row.push(fmt_num(band.upper[l][i]));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Columns of a band CSV written by [`write_band_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub labels: Vec<String>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub fx: Vec<f64>,
    pub s: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

pub fn read_band_csv(path: &Path) -> Result<BandTable> {
    let headers = csv_headers(path)?;
    let labels: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("lower").map(str::to_string))
        .collect();
    let mut names = vec!["x".to_string(), "ghat".into(), "fxhat".into(), "shat".into()];
    for l in &labels {
        names.push(format!("lower{l}"));
        names.push(format!("upper{l}"));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let (mut cols, dropped) = read_columns(path, &refs)?;
    if dropped > 0 {
        return Err(Error::Data(format!("{dropped} malformed rows in {}", path.display())));
    }
    let rest = cols.split_off(4);
    let (lower, upper) = rest.chunks(2).map(|p| (p[0].clone(), p[1].clone())).unzip();
    let mut it = cols.into_iter();
    Ok(BandTable {
        labels,
        x: it.next().unwrap_or_default(),
        g: it.next().unwrap_or_default(),
        fx: it.next().unwrap_or_default(),
        s: it.next().unwrap_or_default(),
        lower,
        upper,
    })
}

fn report_dropped(loaded: &LoadedSample) {
    if loaded.dropped_rows > 0 {
        eprintln!("warning: dropped {} input rows with missing or non-finite values", loaded.dropped_rows);
    }
    if loaded.dropped_eta_rows > 0 {
        eprintln!(
            "warning: dropped {} measurement-error rows with missing or non-finite values",
            loaded.dropped_eta_rows
        );
    }
}

pub fn cmd_band(cfg: &Settings) -> Result<()> {
    let loaded = load_sample(cfg)?;
    report_dropped(&loaded);
    let s = &loaded.sample;
    let band_cfg = cfg.band_config()?;
    let (lo, hi) = interval(cfg, s)?;
    let x = linspace(lo, hi, cfg.grid_points()?);
    let (h, selection) = choose_bandwidth(cfg, s, &x)?;
    let band = confidence_band(s, &band_cfg, h, &x)?;
    let mut report = BandReport {
        h,
        bandwidth: if selection.is_some() { "auto" } else { "fixed" }.into(),
        taus: band.levels.iter().map(|l| 1.0 - l).collect(),
        levels: band.levels.clone(),
        quantiles: band.quantiles.clone(),
        seed: band.seed,
        reps: band.reps,
        n: s.n(),
        m: s.m(),
        dropped_rows: loaded.dropped_rows,
        dropped_eta_rows: loaded.dropped_eta_rows,
        clamped_x: band.x.iter().zip(&band.clamped).filter(|p| *p.1).map(|p| *p.0).collect(),
        diagnostics: band.diagnostics.clone(),
        selection,
        band: None,
    };
    match cfg.format() {
        Format::Json => {
            report.band = Some(band);
            write_json(cfg.out.as_deref(), &report)
        }
        Format::Csv => {
            let mut w = open_out(cfg.out.as_deref())?;
            write_band_csv(&mut w, &band)?;
            w.flush()?;
            if let Some(out) = &cfg.out {
                write_json(Some(&sidecar_path(out)), &report)?;
            }
            Ok(())
        }
    }
}

pub fn cmd_bandwidth(cfg: &Settings) -> Result<()> {
    let loaded = load_sample(cfg)?;
    report_dropped(&loaded);
    let s = &loaded.sample;
    let (lo, hi) = interval(cfg, s)?;
    let x = linspace(lo, hi, cfg.grid_points()?);
    let (h, trace) = select_bandwidth(s, &cfg.bandwidth_config(x)?)?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", fmt_num(h));
    if let Some(out) = &cfg.out {
        write_json(Some(out), &trace)?;
    }
    Ok(())
}

fn simulate_cells(cfg: &Settings) -> Result<Vec<(DgpSpec, f64)>> {
    let missing = |what: &str| Error::Usage(format!("simulate needs at least one --{what}"));
    let models: Vec<Model> = match &cfg.model {
        Some(v) if !v.is_empty() => v.iter().map(|m| m.parse()).collect::<Result<_>>()?,
        _ => return Err(missing("model")),
    };
    let gs: Vec<GFunction> = match &cfg.g {
        Some(v) if !v.is_empty() => v.iter().map(|m| m.parse()).collect::<Result<_>>()?,
        _ => return Err(missing("g")),
    };
    if cfg.n.as_ref().is_none_or(Vec::is_empty) {
        return Err(missing("n"));
    }
    if cfg.sigma_x.as_ref().is_none_or(Vec::is_empty) {
        return Err(missing("sigma-x"));
    }
    let exps = cfg.cn_exponent.clone().unwrap_or_else(|| vec![DEFAULT_CN_EXPONENT]);
    if exps.is_empty() {
        return Err(missing("cn-exponent"));
    }
    let mut cells = Vec::new();
    for &model in &models {
        for g in &gs {
            for &n in cfg.n.as_deref().unwrap_or_default() {
                for &sx in cfg.sigma_x.as_deref().unwrap_or_default() {
                    for &e in &exps {
                        let spec = DgpSpec::new(model, g.clone(), sx, n, 0).map_err(|e| Error::Usage(e.to_string()))?;
                        cells.push((spec, e));
                    }
                }
            }
        }
    }
    Ok(cells)
}

pub fn write_coverage_csv<W: Write>(w: W, reports: &[CoverageReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["model", "g", "n", "sigma_x", "cn_exponent", "level", "coverage", "reps"])?;
    for r in reports {
        for row in r.rows() {
            wr.write_record([
                row.model.to_string(),
                row.g,
                row.n.to_string(),
                fmt_num(row.sigma_x),
                fmt_num(row.cn_exponent),
                fmt_num(row.level),
                fmt_num(row.coverage),
                row.reps.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn cmd_simulate(cfg: &Settings) -> Result<()> {
    let cells = simulate_cells(cfg)?;
    let band = cfg.band_config()?;
    let mut reports = Vec::with_capacity(cells.len());
    for (spec, exponent) in cells {
        let mut cc = CoverageConfig::new(cfg.mc_reps.unwrap_or(DEFAULT_MC_REPS), cfg.seed());
        cc.band = band.clone();
        let mut bw = cfg.bandwidth_config(Vec::new())?;
        bw.cn_exponent = exponent;
        cc.bandwidth = bw;
        cc.grid_points = cfg.grid_points()?;
        let report = coverage_experiment(&spec, &cc)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "{} {} n={} sigma_x={} cn_exponent={}: {:.1}s",
            report.model,
            report.g,
            report.n,
            report.sigma_x,
            report.cn_exponent,
            report.runtime_secs
        );
        reports.push(report);
    }
    match cfg.format() {
        Format::Json => write_json(cfg.out.as_deref(), &reports),
        Format::Csv => {
            let mut w = open_out(cfg.out.as_deref())?;
            write_coverage_csv(&mut w, &reports)?;
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecTestReport {
    pub reject: bool,
    pub level: f64,
    pub tau: f64,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub h: f64,
    pub violations: Vec<f64>,
    pub x: Vec<f64>,
    pub g_theta: Vec<f64>,
    pub ghat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn cmd_spectest(cfg: &Settings) -> Result<()> {
    let loaded = load_sample(cfg)?;
    report_dropped(&loaded);
    let s = &loaded.sample;
    let level = cfg.level.unwrap_or(0.95);
    let band_cfg = BandConfig {
        levels: vec![level],
        ..cfg.band_config()?
    };
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage("--level must lie strictly between 0 and 1".into()));
    }
    let (lo, hi) = interval(cfg, s)?;
    let x = linspace(lo, hi, cfg.grid_points()?);
    let (h, _) = choose_bandwidth(cfg, s, &x)?;
    let band = confidence_band(s, &band_cfg, h, &x)?;
    let degree = cfg.degree.unwrap_or(1);
    let fit = pilot_eiv_polyfit(s, degree)?;
    let g_theta: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
    let res = spec_test(&band, &g_theta, 0)?;
    println!("{}", if res.reject { "reject" } else { "accept" });
    let report = SpecTestReport {
        reject: res.reject,
        level,
        tau: 1.0 - level,
        degree,
        coefficients: fit.coef.clone(),
        h,
        violations: res.violations,
        x: band.x.clone(),
        g_theta,
        ghat: band.g.clone(),
        lower: band.lower[0].clone(),
        upper: band.upper[0].clone(),
    };
    match cfg.format() {
        Format::Json => match &cfg.out {
            Some(out) => write_json(Some(out), &report),
            None => Ok(()),
        },
        Format::Csv => {
            let Some(out) = &cfg.out else { return Ok(()) };
            let mut wr = csv::Writer::from_writer(io::BufWriter::new(File::create(out)?));
            wr.write_record(["x", "ghat", "gtheta", "lower", "upper", "inside"])?;
            for i in 0..report.x.len() {
                let inside = report.lower[i] <= report.g_theta[i] && report.g_theta[i] <= report.upper[i];
                wr.write_record([
                    fmt_num(report.x[i]),
                    fmt_num(report.ghat[i]),
                    fmt_num(report.g_theta[i]),
                    fmt_num(report.lower[i]),
                    fmt_num(report.upper[i]),
                    u8::from(inside).to_string(),
                ])?;
            }
            wr.flush()?;
            write_json(Some(&sidecar_path(out)), &report)
        }
    }
}

fn y_grid(cfg: &Settings, s: &Sample) -> Result<Vec<f64>> {
    match &cfg.y_grid {
        Some(v) => {
            if v.is_empty() || v.iter().any(|y| !y.is_finite()) || v.windows(2).any(|p| p[0] > p[1]) {
                return Err(Error::Usage("--y-grid must be finite and sorted".into()));
            }
            Ok(v.clone())
        }
        None => {
            let k = cfg.y_points.unwrap_or(DEFAULT_Y_POINTS);
            if k == 0 {
                return Err(Error::Usage("--y-points must be positive".into()));
            }
            Ok(linspace(quantile(s.y(), 0.05), quantile(s.y(), 0.95), k))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfBandReport {
    pub h: f64,
    pub taus: Vec<f64>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    pub dropped_rows: usize,
    pub sup_points: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub band: Option<CdfBandResult>,
}

pub fn write_cdf_csv<W: Write>(w: W, band: &CdfBandResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["y".into(), "x".into(), "ghat".into()];
    for &l in &band.levels {
        let lab = level_label(l);
        header.push(format!("lower{lab}"));
        header.push(format!("upper{lab}"));
    }
    wr.write_record(&header)?;
    for (iy, &y) in band.y.iter().enumerate() {
        for (ix, &x) in band.x.iter().enumerate() {
            let k = band.index(iy, ix);
            let mut row = vec![fmt_num(y), fmt_num(x), fmt_num(band.g[k])];
            for l in 0..band.levels.len() {
                row.push(fmt_num(band.lower[l][k]));
                row.push(fmt_num(band.upper[l][k]));
            }
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn cmd_cdfband(cfg: &Settings) -> Result<()> {
    let loaded = load_sample(cfg)?;
    report_dropped(&loaded);
    let s = &loaded.sample;
    let band_cfg = cfg.band_config()?;
    let (lo, hi) = interval(cfg, s)?;
    let x = linspace(lo, hi, cfg.grid_points()?);
    let ys = y_grid(cfg, s)?;
    let (h, _) = choose_bandwidth(cfg, s, &x)?;
    let tbl = sample_table(s, &band_cfg, h)?;
    let band = cdf_band(s, &tbl, &x, &ys, &band_cfg.levels, band_cfg.reps, band_cfg.seed)?;
    let mut report = CdfBandReport {
        h,
        taus: band.levels.iter().map(|l| 1.0 - l).collect(),
        levels: band.levels.clone(),
        quantiles: band.quantiles.clone(),
        seed: band.seed,
        reps: band.reps,
        n: s.n(),
        dropped_rows: loaded.dropped_rows,
        sup_points: band.sup_points,
        band: None,
    };
    match cfg.format() {
        Format::Json => {
            report.band = Some(band);
            write_json(cfg.out.as_deref(), &report)
        }
        Format::Csv => {
            let mut w = open_out(cfg.out.as_deref())?;
            write_cdf_csv(&mut w, &band)?;
            w.flush()?;
            if let Some(out) = &cfg.out {
                write_json(Some(&sidecar_path(out)), &report)?;
            }
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (settings, f): (Settings, fn(&Settings) -> Result<()>) = match cli.command {
        Command::Band(s) => (s, cmd_band),
        Command::Bandwidth(s) => (s, cmd_bandwidth),
        Command::Simulate(s) => (s, cmd_simulate),
        Command::Spectest(s) => (s, cmd_spectest),
        Command::Cdfband(s) => (s, cmd_cdfband),
    };
    let settings = settings.resolve()?;
    match settings.threads()? {
        Some(0) => Err(Error::Usage("thread count must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))?
            .install(|| f(&settings)),
        None => f(&settings),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
