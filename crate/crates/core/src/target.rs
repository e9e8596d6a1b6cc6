//! Terminal densities: construction, CSV ingestion, quantiles and the
//! compatibility check `m_T ~ dist(x, {a, b})^(1/theta)`.

use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::numerics::interp::{lagrange4, Pchip};
use crate::numerics::quad;
use crate::profile::Profile;

pub const DEFAULT_NODES: usize = 2048;
pub const DEFAULT_RATIO_BOUND: f64 = 1e3;

/// Empirical constants of the compatibility condition.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CompatibilityReport {
    pub c_lower: f64,
    pub c_upper: f64,
    pub ratio_bound: f64,
    pub pass: bool,
    pub reason: Option<String>,
}

/// Terminal density on `[a, b]`.
///
/// The density is stored through samples of `m^theta` and reconstructed
/// pointwise as `max(P, 0)^(1/theta)` with `P` the local cubic interpolant of
/// those samples. Densities whose `theta`-th power is a quadratic (the power
/// bump and the self-similar profile) are reproduced exactly.
#[derive(Debug, Clone)]
pub struct TerminalDensity {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub mass: f64,
    x: Vec<f64>,
    pw: Vec<f64>,
    cdf: Vec<f64>,
    inverse: Pchip,
    edge_positive: bool,
    report: CompatibilityReport,
}

fn uniform_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n + 2).map(|k| a + (b - a) * k as f64 / (n + 1) as f64).collect();
    x[0] = a;
    x[n + 1] = b;
    x
}

impl TerminalDensity {
    /// Builds from samples of `m^theta` at nodes `x` (endpoints included),
    /// normalizing to unit mass.
    fn from_power_samples(x: Vec<f64>, mut pw: Vec<f64>, theta: f64, edge_positive: bool) -> Result<Self> {
        let n = x.len();
        let (a, b) = (x[0], x[n - 1]);
        if pw[1..n - 1].iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidTarget("density vanishes inside its support".into()));
        }
        let raw = Self::cell_masses(&x, &pw, theta);
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidTarget(format!("density has mass {total}")));
        }
        let scale = total.powf(-theta);
        for v in pw.iter_mut() {
            *v *= scale;
        }
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        cdf.push(0.0);
        for c in &raw {
            acc += c / total;
            cdf.push(acc);
        }
        let mass = acc;
        for v in cdf.iter_mut() {
            *v /= mass;
        }
        cdf[n - 1] = 1.0;
        for k in 1..n {
            if !(cdf[k] > cdf[k - 1]) {
                return Err(Error::InvalidTarget("cumulative mass is not strictly increasing".into()));
            }
        }
        let inverse = Pchip::new(cdf.clone(), x.clone());
        let mut m = TerminalDensity {
            a,
            b,
            theta,
            mass: 1.0,
            x,
            pw,
            cdf,
            inverse,
            edge_positive,
            report: CompatibilityReport {
                c_lower: 0.0,
                c_upper: 0.0,
                ratio_bound: DEFAULT_RATIO_BOUND,
                pass: false,
                reason: None,
            },
        };
        m.mass = Self::cell_masses(&m.x, &m.pw, theta).iter().sum();
        m.report = m.validate_compatibility(DEFAULT_RATIO_BOUND);
        Ok(m)
    }

    fn cell_masses(x: &[f64], pw: &[f64], theta: f64) -> Vec<f64> {
        let inv = 1.0 / theta;
        x.windows(2)
            .map(|w| quad::integrate(|s| lagrange4(x, pw, s).max(0.0).powf(inv), w[0], w[1]))
            .collect()
    }

    /// Samples an arbitrary nonnegative density `f` at `nodes` interior points.
    pub fn from_fn<F: Fn(f64) -> f64>(a: f64, b: f64, theta: f64, nodes: usize, f: F) -> Result<Self> {
        check_interval(a, b, theta)?;
        let x = uniform_nodes(a, b, nodes);
        let pw: Vec<f64> = x.iter().map(|&s| f(s).max(0.0).powf(theta)).collect();
        let edge = f(a) > 0.0 || f(b) > 0.0;
        Self::from_power_samples(x, pw, theta, edge)
    }

    /// `Z^(-1) ((x - a)(b - x))^(1/theta)`.
    pub fn power_bump(a: f64, b: f64, theta: f64) -> Result<Self> {
        Self::power_bump_with_nodes(a, b, theta, DEFAULT_NODES)
    }

    pub fn power_bump_with_nodes(a: f64, b: f64, theta: f64, nodes: usize) -> Result<Self> {
        check_interval(a, b, theta)?;
        let x = uniform_nodes(a, b, nodes);
        let pw = x.iter().map(|&s| ((s - a) * (b - s)).max(0.0)).collect();
        Self::from_power_samples(x, pw, theta, false)
    }

    /// `(T + eps)^(-alpha) phi((T + eps)^(-alpha) x)`.
    pub fn self_similar(p: &Profile, t_final: f64, eps: f64) -> Result<Self> {
        Self::self_similar_with_nodes(p, t_final, eps, DEFAULT_NODES)
    }

    pub fn self_similar_with_nodes(p: &Profile, t_final: f64, eps: f64, nodes: usize) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(invalid(format!("terminal time must be positive, got {t_final}")));
        }
        if !(eps >= 0.0) {
            return Err(invalid(format!("eps must be nonnegative, got {eps}")));
        }
        let s = (t_final + eps).powf(p.alpha);
        let half = p.r_alpha * s;
        let x = uniform_nodes(-half, half, nodes);
        // m^theta = s^(-theta) c (R^2 - (x/s)^2)
        let k = p.coef() * s.powf(-p.theta) / (s * s);
        let pw = x.iter().map(|&v| (k * (half - v) * (half + v)).max(0.0)).collect();
        Self::from_power_samples(x, pw, p.theta, false)
    }

    /// Builds from tabulated `(x, density)` pairs; endpoints are the first and
    /// last abscissae.
    pub fn from_samples(x: Vec<f64>, density: Vec<f64>, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(invalid(format!("theta must be positive, got {theta}")));
        }
        if x.len() != density.len() {
            return Err(Error::Format("column lengths differ".into()));
        }
        if x.len() < 8 {
            return Err(Error::Format(format!("need at least 8 rows, got {}", x.len())));
        }
        if x.iter().chain(&density).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite entry".into()));
        }
        if let Some(k) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Format(format!("x is not strictly increasing at row {}", k + 2)));
        }
        if let Some(k) = density.iter().position(|&v| v < 0.0) {
            return Err(Error::Format(format!("negative density at row {}", k + 1)));
        }
        let edge = density[0] > 0.0 || density[density.len() - 1] > 0.0;
        let pw = density.iter().map(|&v| v.powf(theta)).collect();
        Self::from_power_samples(x, pw, theta, edge)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P, theta: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 {
            return Err(Error::Format(format!("expected 2 columns, found {}", headers.len())));
        }
        let mut x = Vec::new();
        let mut d = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("line {}: unparsable field {}", i + 2, k + 1)))
            };
            x.push(parse(0)?);
            d.push(parse(1)?);
        }
        Self::from_samples(x, d, theta)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        w.write_record(["x", "density"]).map_err(csv_err)?;
        for (k, &x) in self.x.iter().enumerate() {
            let m = self.sample(k);
            w.write_record([format!("{x:.16e}"), format!("{m:.16e}")]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn sample(&self, k: usize) -> f64 {
        self.pw[k].max(0.0).powf(1.0 / self.theta)
    }

    /// Node abscissae, endpoints included.
    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    /// Density at the nodes, endpoints included.
    pub fn samples(&self) -> Vec<f64> {
        (0..self.x.len()).map(|k| self.sample(k)).collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        lagrange4(&self.x, &self.pw, x).max(0.0).powf(1.0 / self.theta)
    }

    fn cell_of(&self, x: f64) -> usize {
        self.x.partition_point(|&v| v <= x).clamp(1, self.x.len() - 1) - 1
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return 1.0;
        }
        let k = self.cell_of(x);
        (self.cdf[k] + quad::integrate(|s| self.density(s), self.x[k], x)).min(1.0)
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid(format!("quantile level {q} outside [0, 1]")));
        }
        if q == 0.0 {
            return Ok(self.a);
        }
        if q == 1.0 {
            return Ok(self.b);
        }
        let k = self.cdf.partition_point(|&c| c <= q).clamp(1, self.cdf.len() - 1) - 1;
        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        let base = self.cdf[k];
        let mut x = self.inverse.eval(q).clamp(lo, hi);
        let tol = 1e-15 * (self.b - self.a);
        for _ in 0..100 {
            let f = base + quad::integrate(|s| self.density(s), self.x[k], x) - q;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.density(x);
            let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    pub fn report(&self) -> &CompatibilityReport {
        &self.report
    }

    /// Sup and inf of `m / dist^(1/theta)` over interior samples.
    pub fn validate_compatibility(&self, ratio_bound: f64) -> CompatibilityReport {
        let inv = 1.0 / self.theta;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k in 1..self.x.len() - 1 {
            let d = (self.x[k] - self.a).min(self.b - self.x[k]);
            let r = self.sample(k) / d.powf(inv);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let mut reason = None;
        if self.edge_positive {
            hi = f64::INFINITY;
            reason = Some("density is positive at a support endpoint".to_string());
        } else if !(lo > 0.0) {
            reason = Some("lower constant is zero".to_string());
        } else if hi / lo > ratio_bound {
            reason = Some(format!("ratio {:.3e} exceeds bound {ratio_bound:.3e}", hi / lo));
        }
        CompatibilityReport { c_lower: lo, c_upper: hi, ratio_bound, pass: reason.is_none(), reason }
    }
}

fn check_interval(a: f64, b: f64, theta: f64) -> Result<()> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(invalid(format!("support [{a}, {b}] is empty or unbounded")));
    }
    if !(theta > 0.0) {
        return Err(invalid(format!("theta must be positive, got {theta}")));
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
