//! End-to-end runs: configuration, the solve-and-diagnose pipeline, sweeps
//! and the on-disk layout of a run directory.
//!
//! A run directory holds
//! `config.toml`, `manifest.json`, `flow.csv`, `boundary.csv`, `eulerian.csv`,
//! `series.csv`, `certificates.csv`, `rates.json` and `snapshots/`. Every float
//! is written with 17 significant digits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{self, BoundaryHistory, EulerianSeries, Extension, ValueField};
use crate::metrics::{self, Abscissa, Pushforward, RateReport};
use crate::profile::Profile;
use crate::rescale::{self, RescaledState, SeriesRow};
use crate::solver::{self, FlowField, SolveReport, SolverConfig, SpaceTimeGrid};
use crate::target::{CompatibilityReport, TerminalDensity};

/// Exterior nodes per side in snapshots and rescaled states.
pub const EXTERIOR_PAD: usize = 8;
/// Number of snapshot intervals written to `snapshots/`.
pub const SNAPSHOT_INTERVALS: usize = 8;
/// Times of the pairwise `d_1` table of eps sweeps.
pub const CAUCHY_TIMES: [f64; 3] = [0.05, 0.1, 0.5];
/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "DIRAC_MFP_THREADS";

pub const MASS_TOL: f64 = 1e-6;
pub const RESIDUAL_TOL: f64 = 5e-3;
pub const RECIPROCAL_VARIATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    PowerBump,
    SelfSimilar,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Support of a power bump.
    pub a: f64,
    pub b: f64,
    /// CSV file for `kind = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec { kind: TargetKind::PowerBump, a: -1.0, b: 1.0, path: None }
    }
}

/// Fit window in `t`; unset ends fall back to `[10 eps, T / 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitWindow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub theta: f64,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub nt: usize,
    pub ny: usize,
    pub output: PathBuf,
    /// Fail the run when any check or rate law fails.
    pub strict: bool,
    pub seed: u64,
    pub target: TargetSpec,
    pub solver: SolverConfig,
    pub fit: FitWindow,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            theta: 1.0,
            eps: 1e-3,
            t_final: 1.0,
            nt: 128,
            ny: 128,
            output: PathBuf::from("run"),
            strict: false,
            seed: 0,
            target: TargetSpec::default(),
            solver: SolverConfig::default(),
            fit: FitWindow::default(),
        }
    }
}

fn positive(key: &'static str, v: f64) -> std::result::Result<(), (&'static str, String)> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err((key, format!("must be positive and finite, got {v}")))
    }
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|k| k + 1)
}

impl RunConfig {
    /// Parses and validates a TOML config. Errors carry the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string().trim_end().to_string()))?;
        cfg.check().map_err(|(key, msg)| {
            let leaf = key.rsplit('.').next().unwrap_or(key);
            match key_line(text, leaf) {
                Some(n) => Error::Format(format!("line {n}: {key} {msg}")),
                None => Error::Format(format!("{key} {msg}")),
            }
        })?;
        Ok(cfg)
    }

    /// Reads a config file; a relative target path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (cfg.target.path.as_mut(), path.parent()) {
            if p.is_relative() && !dir.as_os_str().is_empty() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, msg)| invalid(format!("{key} {msg}")))
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        positive("theta", self.theta)?;
        positive("eps", self.eps)?;
        positive("T", self.t_final)?;
        for (key, n) in [("nt", self.nt), ("ny", self.ny)] {
            if n < 16 {
                return Err((key, format!("must be at least 16, got {n}")));
            }
        }
        match self.target.kind {
            TargetKind::PowerBump => {
                if !(self.target.a < self.target.b) || !self.target.a.is_finite() || !self.target.b.is_finite() {
                    return Err(("target.b", format!("must exceed target.a, got [{}, {}]", self.target.a, self.target.b)));
                }
            }
            TargetKind::File => {
                if self.target.path.is_none() {
                    return Err(("target.kind", "\"file\" requires target.path".into()));
                }
            }
            TargetKind::SelfSimilar => {}
        }
        let (lo, hi) = self.window();
        if let Some(v) = self.fit.t_min {
            positive("fit.t_min", v)?;
        }
        if let Some(v) = self.fit.t_max {
            positive("fit.t_max", v)?;
            if v > self.t_final {
                return Err(("fit.t_max", format!("must not exceed T = {}, got {v}", self.t_final)));
            }
        }
        if !(lo < hi) {
            return Err(("fit.t_max", format!("fit window [{lo}, {hi}] is empty")));
        }
        self.solver.validate().map_err(|e| ("solver", e.to_string()))
    }

    /// Fit window in `t`.
    pub fn window(&self) -> (f64, f64) {
        let (lo, hi) = metrics::default_window(self.eps, self.t_final);
        (self.fit.t_min.unwrap_or(lo), self.fit.t_max.unwrap_or(hi))
    }

    pub fn build_target(&self, p: &Profile) -> Result<TerminalDensity> {
        match self.target.kind {
            TargetKind::PowerBump => TerminalDensity::power_bump(self.target.a, self.target.b, self.theta),
            TargetKind::SelfSimilar => TerminalDensity::self_similar(p, self.t_final, self.eps),
            TargetKind::File => {
                let path = self.target.path.as_ref().ok_or_else(|| invalid("target.path is required"))?;
                TerminalDensity::load_csv(path, self.theta)
            }
        }
    }
}

/// Worker count from `DIRAC_MFP_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// One scalar pass/fail check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, pass: value <= bound }
    }
}

/// Everything a run produces, kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub profile: Profile,
    pub target: TerminalDensity,
    pub flow: FlowField,
    pub solve: SolveReport,
    pub value: ValueField,
    pub boundary: BoundaryHistory,
    pub extension: Extension,
    pub eulerian: EulerianSeries,
    pub states: Vec<RescaledState>,
    pub series: Vec<SeriesRow>,
    pub rates: RateReport,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Pass condition of `--strict`: every check and every fitted law.
    pub fn strict_pass(&self) -> bool {
        self.checks_pass() && self.rates.all_pass()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, x| if x.is_nan() || a.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

/// Solves the configured problem and evaluates every diagnostic.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let p = Profile::new(cfg.theta)?;
    let target = cfg.build_target(&p)?;
    let grid = SpaceTimeGrid::new(&p, cfg.eps, cfg.t_final, cfg.nt, cfg.ny)?;
    let mut scfg = cfg.solver.clone();
    scfg.strict_target |= cfg.strict;
    let (flow, solve) = solver::solve(&p, &target, &grid, &scfg)?;
    let value = fields::value_on_support(&flow, &p, &target)?;
    let boundary = fields::free_boundaries(&flow);
    let extension = fields::extend_value(&flow, &boundary, &value)?;
    let eulerian = fields::eulerian_series(&flow, &p, &value)?;
    let states = rescale::rescale_flow(&flow, &p, &value, &extension, EXTERIOR_PAD)?;
    let series = rescale::series(&states, &p);
    let window = cfg.window();
    let rates = metrics::rate_report(&eulerian, &series, &p, window);
    let checks = run_checks(&flow, &p, &target, &value, &boundary, &extension, &series, window);
    Ok(RunOutput {
        config: cfg.clone(),
        profile: p,
        target,
        flow,
        solve,
        value,
        boundary,
        extension,
        eulerian,
        states,
        series,
        rates,
        checks,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_checks(
    flow: &FlowField,
    p: &Profile,
    target: &TerminalDensity,
    value: &ValueField,
    boundary: &BoundaryHistory,
    ext: &Extension,
    series: &[SeriesRow],
    window: (f64, f64),
) -> Vec<Check> {
    let nt = flow.nt();
    let mass = sup(fields::slice_masses(flow, p).into_iter().map(|m| m - 1.0));
    let weak = sup(fields::weak_continuity_residual(flow, &fields::default_test_functions(flow)));
    let hj_in = sup(fields::hj_residual_interior(flow, p, value).into_iter().flatten());
    let hj_out = sup(fields::hj_residual_exterior(flow, ext, EXTERIOR_PAD));
    let ddl = boundary.ddgl[1..nt].iter().copied().fold(f64::INFINITY, f64::min);
    let ddr = boundary.ddgr[1..nt].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (window.0.ln(), window.1.ln());
    let recip: Vec<f64> =
        series.iter().filter(|r| r.tau >= lo && r.tau <= hi).map(|r| r.recip_integral).collect();
    let rmax = recip.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rmin = recip.iter().copied().fold(f64::INFINITY, f64::min);
    let variation = if recip.is_empty() || !(rmin > 0.0) { f64::NAN } else { rmax / rmin };
    let compat = target.report();
    vec![
        Check::below("mass_error", mass, MASS_TOL),
        Check::below("weak_residual", weak, RESIDUAL_TOL),
        Check::below("hj_interior", hj_in, RESIDUAL_TOL),
        Check::below("hj_exterior", hj_out, RESIDUAL_TOL),
        Check { name: "left_boundary_convex".into(), value: ddl, bound: 0.0, pass: ddl > 0.0 },
        Check { name: "right_boundary_concave".into(), value: ddr, bound: 0.0, pass: ddr < 0.0 },
        Check::below("reciprocal_variation", variation, RECIPROCAL_VARIATION),
        Check {
            name: "target_compatible".into(),
            value: compat.c_upper / compat.c_lower,
            bound: compat.ratio_bound,
            pass: compat.pass,
        },
    ]
}

/// `d_1` between the densities of two runs at time `t`, through the quantile
/// functions of the pushforwards.
pub fn d1_between(a: &RunOutput, b: &RunOutput, t: f64) -> Result<f64> {
    let ra = fields::row_at_time(&a.flow, t)?;
    let rb = fields::row_at_time(&b.flow, t)?;
    let qa = Pushforward { profile: &a.profile, labels: &a.flow.grid.labels, map: &ra };
    let qb = Pushforward { profile: &b.profile, labels: &b.flow.grid.labels, map: &rb };
    metrics::wasserstein(&qa, &qb, 1)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_rows<I: IntoIterator<Item = Vec<f64>>>(path: &Path, header: &str, rows: I) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        let line: Vec<String> = r.into_iter().map(fmt).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    solver: &'a SolveReport,
    checks: &'a [Check],
    checks_pass: bool,
    rates_pass: bool,
    compatibility: &'a CompatibilityReport,
    alpha: f64,
    kappa: f64,
    fit_window: (f64, f64),
    files: Vec<String>,
}

/// Time nodes written to `snapshots/`.
pub fn snapshot_indices(nt: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..=SNAPSHOT_INTERVALS).map(|k| k * nt / SNAPSHOT_INTERVALS).collect();
    idx.dedup();
    idx
}

/// Writes the run directory; returns the files written, relative to `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir.join("snapshots"))?;
    let f = &out.flow;
    let g = &f.grid;
    let mut files = Vec::new();

    fs::write(dir.join("config.toml"), out.config.to_toml()?)?;
    files.push("config.toml".to_string());

    let y = g.y();
    write_rows(
        &dir.join("flow.csv"),
        "i,j,t,y,gamma",
        (0..=f.nt()).flat_map(|i| (0..y.len()).map(move |j| (i, j))).map(|(i, j)| {
            vec![i as f64, j as f64, g.t[i], y[j], f.at(i, j)]
        }),
    )?;
    files.push("flow.csv".into());

    let b = &out.boundary;
    write_rows(
        &dir.join("boundary.csv"),
        "t,gamma_l,gamma_r,dgl,dgr,ddgl,ddgr,velocity_envelope,acceleration_envelope",
        (0..b.t.len()).map(|i| {
            vec![
                b.t[i],
                b.gamma_l[i],
                b.gamma_r[i],
                b.dgl[i],
                b.dgr[i],
                b.ddgl[i],
                b.ddgr[i],
                b.velocity_envelope[i],
                b.acceleration_envelope[i],
            ]
        }),
    )?;
    files.push("boundary.csv".into());

    let e = &out.eulerian;
    write_rows(
        &dir.join("eulerian.csv"),
        "t,support_radius,m_max,m_pow,osc_u,ux_max,d1_dirac",
        (0..e.t.len()).map(|i| vec![e.t[i], e.support_radius[i], e.m_max[i], e.m_pow[i], e.osc_u[i], e.ux_max[i], e.d1_dirac[i]]),
    )?;
    files.push("eulerian.csv".into());

    write_rows(&dir.join("series.csv"), SERIES_HEADER, out.series.iter().map(series_values))?;
    files.push("series.csv".into());

    write_rows(
        &dir.join("certificates.csv"),
        "tau,osc_v,pairing,interval,support",
        out.states.iter().map(|s| {
            let c = rescale::certificates(s, &out.profile);
            vec![s.tau, c.osc_v, c.pairing, c.interval, c.support]
        }),
    )?;
    files.push("certificates.csv".into());

    for i in snapshot_indices(f.nt()) {
        let s = fields::snapshot(f, &out.value, &out.extension, i, EXTERIOR_PAD)?;
        let name = format!("snapshots/t_{i:05}.csv");
        write_rows(
            &dir.join(&name),
            "t,x,m,u,u_x,support",
            (0..s.x.len()).map(|k| vec![s.t, s.x[k], s.m[k], s.u[k], s.u_x[k], if s.support.contains(&k) { 1.0 } else { 0.0 }]),
        )?;
        files.push(name);
    }

    write_json(&dir.join("rates.json"), &out.rates)?;
    files.push("rates.json".into());

    files.push("manifest.json".into());
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &out.config,
        solver: &out.solve,
        checks: &out.checks,
        checks_pass: out.checks_pass(),
        rates_pass: out.rates.all_pass(),
        compatibility: out.target.report(),
        alpha: out.profile.alpha,
        kappa: out.profile.kappa,
        fit_window: out.config.window(),
        files: files.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(files)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub const SERIES_HEADER: &str =
    "tau,H,dH_fd,dH_identity,d1,d2,mu_max,osc_w,supp_left,supp_right,recip_integral,duality_pairing";

fn series_values(r: &SeriesRow) -> Vec<f64> {
    vec![
        r.tau,
        r.h,
        r.dh_fd,
        r.dh_identity,
        r.d1,
        r.d2,
        r.mu_max,
        r.osc_w,
        r.supp_left,
        r.supp_right,
        r.recip_integral,
        r.duality_pairing,
    ]
}

/// Numeric CSV with a header row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing run artifact {}", path.display()),
            )));
        }
        let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), k + 2)))?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing run artifact {}", p.display()),
        )))
    }
}

/// Configuration echoed into a run directory.
pub fn read_config(dir: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(require(dir, "config.toml")?)?;
    RunConfig::from_toml(&text)
}

pub fn read_eulerian(dir: &Path) -> Result<EulerianSeries> {
    let t = Table::read(&dir.join("eulerian.csv"))?;
    Ok(EulerianSeries {
        t: t.column("t")?,
        support_radius: t.column("support_radius")?,
        m_max: t.column("m_max")?,
        m_pow: t.column("m_pow")?,
        osc_u: t.column("osc_u")?,
        ux_max: t.column("ux_max")?,
        d1_dirac: t.column("d1_dirac")?,
    })
}

pub fn read_series(dir: &Path) -> Result<Vec<SeriesRow>> {
    let t = Table::read(&dir.join("series.csv"))?;
    let expected: Vec<&str> = SERIES_HEADER.split(',').collect();
    if t.header != expected {
        return Err(Error::Format(format!("series.csv header must be {SERIES_HEADER}")));
    }
    Ok(t.rows
        .iter()
        .map(|r| SeriesRow {
            tau: r[0],
            h: r[1],
            dh_fd: r[2],
            dh_identity: r[3],
            d1: r[4],
            d2: r[5],
            mu_max: r[6],
            osc_w: r[7],
            supp_left: r[8],
            supp_right: r[9],
            recip_integral: r[10],
            duality_pairing: r[11],
        })
        .collect())
}

/// Refits the rate laws of a stored run, optionally on another window, and
/// rewrites `rates.json`.
pub fn refit_rates(dir: &Path, window: Option<(f64, f64)>) -> Result<RateReport> {
    let cfg = read_config(dir)?;
    let p = Profile::new(cfg.theta)?;
    let e = read_eulerian(dir)?;
    let s = read_series(dir)?;
    let w = window.unwrap_or_else(|| cfg.window());
    if !(w.0 > 0.0 && w.0 < w.1) {
        return Err(invalid(format!("fit window [{}, {}] is empty", w.0, w.1)));
    }
    let report = metrics::rate_report(&e, &s, &p, w);
    write_json(&dir.join("rates.json"), &report)?;
    Ok(report)
}

/// Writes plot-ready long-format tables to `dir/plots`; returns their paths.
pub fn export_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = read_config(dir)?;
    let p = Profile::new(cfg.theta)?;
    let series = read_series(dir)?;
    let eul = read_eulerian(dir)?;
    let bnd = Table::read(&require(dir, "boundary.csv")?)?;
    let snap_dir = require(dir, "snapshots")?;
    let mut snaps: Vec<PathBuf> = fs::read_dir(&snap_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    snaps.sort();
    if snaps.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no snapshots in {}", snap_dir.display()),
        )));
    }
    let out = dir.join("plots");
    fs::create_dir_all(&out)?;
    let (tmin, tmax) = cfg.window();
    let (lo, hi) = (tmin.ln(), tmax.ln());
    let a = p.alpha;
    let mut written = Vec::new();

    let mut overlay = Vec::new();
    for path in &snaps {
        let s = Table::read(path)?;
        let (t, x, m) = (s.column("t")?, s.column("x")?, s.column("m")?);
        for k in 0..x.len() {
            if t[k] > 0.0 {
                let sc = t[k].powf(a);
                let eta = x[k] / sc;
                overlay.push(vec![t[k].ln(), t[k], eta, sc * m[k], p.phi(eta)]);
            }
        }
    }
    let path = out.join("mu_overlay.csv");
    write_rows(&path, "tau,t,eta,mu,phi", overlay)?;
    written.push(path);

    let hpts: Vec<(f64, f64)> = series.iter().map(|r| (r.tau, r.h.abs())).collect();
    let hfit = metrics::fit_rate(&hpts, (lo, hi), Abscissa::Linear).ok();
    let path = out.join("lyapunov.csv");
    write_rows(
        &path,
        "tau,H,dH_fd,dH_identity,envelope",
        series.iter().map(|r| {
            let env = hfit.as_ref().map_or(f64::NAN, |f| (f.log_prefactor + f.exponent * r.tau).exp());
            vec![r.tau, r.h, r.dh_fd, r.dh_identity, env]
        }),
    )?;
    written.push(path);

    let spts: Vec<(f64, f64)> = eul.t.iter().copied().zip(eul.support_radius.iter().copied()).collect();
    let sfit = metrics::fit_rate(&spts, (tmin, tmax), Abscissa::Log).ok();
    let path = out.join("support_loglog.csv");
    write_rows(
        &path,
        "log_t,log_radius,log_fit",
        spts.iter().filter(|(t, r)| *t > 0.0 && *r > 0.0).map(|&(t, r)| {
            let fit = sfit.as_ref().map_or(f64::NAN, |f| f.log_prefactor + f.exponent * t.ln());
            vec![t.ln(), r.ln(), fit]
        }),
    )?;
    written.push(path);

    let (t, gl, gr, dl, dr) =
        (bnd.column("t")?, bnd.column("gamma_l")?, bnd.column("gamma_r")?, bnd.column("dgl")?, bnd.column("dgr")?);
    let nt = t.len() - 1;
    let mut fan = Vec::new();
    for (side, g) in [(0.0, &gl), (1.0, &gr)] {
        for k in 0..t.len() {
            fan.push(vec![side, 0.0, f64::NAN, t[k], g[k]]);
        }
    }
    for (n, i) in snapshot_indices(nt).into_iter().enumerate() {
        for (side, g, d) in [(0.0, &gl, &dl), (1.0, &gr, &dr)] {
            for k in 0..t.len() {
                fan.push(vec![side, 1.0 + n as f64, t[i], t[k], g[i] + d[i] * (t[k] - t[i])]);
            }
        }
    }
    let path = out.join("boundary_fan.csv");
    write_rows(&path, "side,line,t_anchor,t,x", fan)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Eps,
    Theta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Eps => "eps",
            SweepAxis::Theta => "theta",
        }
    }
}

#[derive(Debug)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: PathBuf,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CauchyRow {
    pub t: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub d1: f64,
}

#[derive(Debug)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Pairwise `d_1` of consecutive eps values; empty for theta sweeps.
    pub cauchy: Vec<CauchyRow>,
}

const SUMMARY_LAWS: [&str; 8] =
    ["support_radius", "m_max", "m_pow", "osc_u", "ux_max", "lyapunov", "d2_profile", "duality_pairing"];

/// Independent runs over `values`, each written to `root/<axis>_<k>`. Failed
/// runs are recorded and the sweep continues. Writes `summary.csv` and, for
/// eps sweeps, `cauchy.csv`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], root: &Path, cauchy_times: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    fs::create_dir_all(root)?;
    let entries: Vec<SweepEntry> = values
        .par_iter()
        .enumerate()
        .map(|(k, &value)| {
            let dir = root.join(format!("{}_{k:02}", axis.name()));
            let mut cfg = base.clone();
            match axis {
                SweepAxis::Eps => cfg.eps = value,
                SweepAxis::Theta => cfg.theta = value,
            }
            cfg.output = dir.clone();
            let outcome = execute(&cfg).and_then(|o| write_run(&o, &dir).map(|_| o)).map_err(|e| e.to_string());
            SweepEntry { value, dir, outcome }
        })
        .collect();

    let mut cauchy = Vec::new();
    if axis == SweepAxis::Eps {
        for &t in cauchy_times {
            for w in entries.windows(2) {
                let d1 = match (&w[0].outcome, &w[1].outcome) {
                    (Ok(a), Ok(b)) => d1_between(a, b, t).unwrap_or(f64::NAN),
                    _ => f64::NAN,
                };
                cauchy.push(CauchyRow { t, eps_a: w[0].value, eps_b: w[1].value, d1 });
            }
        }
        write_rows(&root.join("cauchy.csv"), "t,eps_a,eps_b,d1", cauchy.iter().map(|c| vec![c.t, c.eps_a, c.eps_b, c.d1]))?;
    }

    let mut w = csv::Writer::from_path(root.join("summary.csv")).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec![axis.name().to_string(), "status".into(), "iterations".into(), "scaled_residual".into()];
    header.extend(SUMMARY_LAWS.iter().map(|s| s.to_string()));
    header.extend(["checks_pass".to_string(), "rates_pass".to_string()]);
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for e in &entries {
        let mut rec = vec![fmt(e.value)];
        match &e.outcome {
            Ok(o) => {
                rec.push("ok".into());
                rec.push(o.solve.iterations.to_string());
                rec.push(fmt(o.solve.scaled_residual));
                for name in SUMMARY_LAWS {
                    rec.push(o.rates.law(name).and_then(|l| l.fitted_exponent).map(fmt).unwrap_or_default());
                }
                rec.push(o.checks_pass().to_string());
                rec.push(o.rates.all_pass().to_string());
            }
            Err(msg) => {
                rec.push(format!("failed: {msg}"));
                rec.extend(std::iter::repeat(String::new()).take(2 + SUMMARY_LAWS.len() + 2));
            }
        }
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(SweepResult { entries, cauchy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
        assert_eq!((c.theta, c.eps, c.t_final, c.nt, c.ny), (1.0, 1e-3, 1.0, 128, 128));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = RunConfig::from_toml("theta = 1.0\neps = \"small\"\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = RunConfig::from_toml("theta = 1.0\n\nnt = 8\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("nt"), "{e}");
        let e = RunConfig::from_toml("[target]\nkind = \"power_bump\"\na = 1.0\nb = 0.5\n").unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
        let e = RunConfig::from_toml("thetaa = 1.0\n").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn file_target_needs_path() {
        assert!(RunConfig::from_toml("[target]\nkind = \"file\"\n").is_err());
        let c = RunConfig::from_toml("[target]\nkind = \"file\"\npath = \"m.csv\"\n").unwrap();
        assert_eq!(c.target.path.as_deref(), Some(Path::new("m.csv")));
    }

    #[test]
    fn window_defaults_and_overrides() {
        let mut c = RunConfig::default();
        assert_eq!(c.window(), (1e-2, 0.25));
        c.fit.t_min = Some(1e-3);
        assert_eq!(c.window(), (1e-3, 0.25));
        c.fit.t_max = Some(2.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshot_indices_cover_ends() {
        assert_eq!(snapshot_indices(16), vec![0, 2, 4, 6, 8, 10, 12, 14, 16]);
        assert_eq!(*snapshot_indices(129).last().unwrap(), 129);
    }
}
