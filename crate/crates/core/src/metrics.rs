//! Wasserstein distances in 1D through quantile functions, and least-squares
//! exponent fits for the scaling laws.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fields::{d1_to_dirac, EulerianSeries};
use crate::numerics::quad;
use crate::profile::{LabelGrid, Profile};
use crate::rescale::SeriesRow;
use crate::target::TerminalDensity;

/// A probability measure on the line seen through its quantile function.
pub trait QuantileFunction {
    /// `Q(q)` for `q` in `(0, 1)`.
    fn quantile(&self, q: f64) -> f64;

    /// Total mass; the distances require 1.
    fn mass(&self) -> f64 {
        1.0
    }

    /// Levels where `Q` may lose smoothness; used as quadrature panel edges.
    fn knots(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
}

/// Piecewise-linear quantile function through `(q_k, x_k)`, i.e. a measure
/// with uniform density between consecutive `x_k`.
#[derive(Debug, Clone)]
pub struct QuantileTable {
    q: Vec<f64>,
    x: Vec<f64>,
}

impl QuantileTable {
    /// `q` must start at 0 and increase; `x` must be nondecreasing. The last
    /// level is the total mass.
    pub fn new(q: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if q.len() < 2 || q.len() != x.len() {
            return Err(invalid("quantile table needs at least two matching rows"));
        }
        if q[0] != 0.0 || q.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("quantile levels must start at 0 and increase"));
        }
        if x.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(invalid("quantile values must be nondecreasing"));
        }
        Ok(QuantileTable { q, x })
    }

    /// Table of a target density at `n + 1` equally spaced levels.
    pub fn from_density(m: &TerminalDensity, n: usize) -> Result<Self> {
        let q: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let x = q.iter().map(|&l| m.quantile(l)).collect::<Result<Vec<_>>>()?;
        QuantileTable::new(q, x)
    }
}

impl QuantileFunction for QuantileTable {
    fn quantile(&self, q: f64) -> f64 {
        let n = self.q.len();
        let k = self.q.partition_point(|&v| v <= q).clamp(1, n - 1) - 1;
        let r = (q - self.q[k]) / (self.q[k + 1] - self.q[k]);
        self.x[k] + r * (self.x[k + 1] - self.x[k])
    }

    fn mass(&self) -> f64 {
        self.q[self.q.len() - 1]
    }

    fn knots(&self) -> Vec<f64> {
        self.q.clone()
    }
}

/// Pushforward of `phi` by the piecewise-linear map with values `map` at the
/// label nodes.
#[derive(Debug, Clone, Copy)]
pub struct Pushforward<'a> {
    pub profile: &'a Profile,
    pub labels: &'a LabelGrid,
    pub map: &'a [f64],
}

impl QuantileFunction for Pushforward<'_> {
    fn quantile(&self, q: f64) -> f64 {
        let y = self.profile.quantile(q).unwrap_or(if q < 0.5 { -self.profile.r_alpha } else { self.profile.r_alpha });
        let yn = &self.labels.y;
        let n = yn.len();
        let k = yn.partition_point(|&v| v <= y).clamp(1, n - 1) - 1;
        let r = (y - yn[k]) / (yn[k + 1] - yn[k]);
        self.map[k] + r * (self.map[k + 1] - self.map[k])
    }

    fn knots(&self) -> Vec<f64> {
        let n = self.labels.y.len();
        let mut k: Vec<f64> = self.labels.y.iter().map(|&y| self.profile.cdf(y)).collect();
        k[0] = 0.0;
        k[n - 1] = 1.0;
        k
    }
}

impl QuantileFunction for TerminalDensity {
    fn quantile(&self, q: f64) -> f64 {
        TerminalDensity::quantile(self, q).unwrap_or(f64::NAN)
    }

    fn knots(&self) -> Vec<f64> {
        self.nodes().iter().map(|&x| self.cdf(x)).collect()
    }
}

fn check_order(order: u32) -> Result<()> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(invalid(format!("Wasserstein order must be 1 or 2, got {order}")))
    }
}

/// `d_p(u, v) = (int_0^1 |Q_u - Q_v|^p dq)^(1/p)`, integrated on the union of
/// the knot sets of both quantile functions.
pub fn wasserstein(u: &dyn QuantileFunction, v: &dyn QuantileFunction, order: u32) -> Result<f64> {
    check_order(order)?;
    for (name, m) in [("first", u.mass()), ("second", v.mass())] {
        if (m - 1.0).abs() > 1e-6 {
            return Err(Error::Unnormalized(format!("{name} measure has mass {m}")));
        }
    }
    let mut edges: Vec<f64> = u.knots().into_iter().chain(v.knots()).filter(|q| (0.0..=1.0).contains(q)).collect();
    edges.push(0.0);
    edges.push(1.0);
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    let p = order as i32;
    let total = quad::integrate_panels(|q| (u.quantile(q) - v.quantile(q)).abs().powi(p), &edges);
    Ok(total.max(0.0).powf(1.0 / order as f64))
}

/// `d_p` between the pushforwards of `phi` by two piecewise-linear maps on the
/// same labels, `(int |g - h|^p phi dy)^(1/p)`.
pub fn wasserstein_lagrangian(p: &Profile, labels: &LabelGrid, g: &[f64], h: &[f64], order: u32) -> Result<f64> {
    check_order(order)?;
    if g.len() != labels.y.len() || h.len() != labels.y.len() {
        return Err(invalid("maps must be sampled on the label nodes"));
    }
    let d: Vec<f64> = g.iter().zip(h).map(|(a, b)| a - b).collect();
    Ok(if order == 1 { d1_to_dirac(&d, labels, p) } else { labels.mass_inner(&d, &d).max(0.0).sqrt() })
}

/// Abscissa used by a fit: power laws in `t` regress on `ln t`, exponential
/// laws in `tau` regress on `tau` itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abscissa {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub log_prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Ordinary least squares of `ln value` on the abscissa over the points with
/// abscissa in `window` (inclusive).
pub fn fit_rate(points: &[(f64, f64)], window: (f64, f64), abscissa: Abscissa) -> Result<RateFit> {
    let sel: Vec<(f64, f64)> = points.iter().copied().filter(|(x, _)| *x >= window.0 && *x <= window.1).collect();
    if sel.len() < 4 {
        return Err(invalid(format!("fit window [{:e}, {:e}] holds {} points, need 4", window.0, window.1, sel.len())));
    }
    let mut xs = Vec::with_capacity(sel.len());
    let mut ys = Vec::with_capacity(sel.len());
    for (x, v) in sel {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(format!("nonpositive value {v:e} at abscissa {x:e}")));
        }
        let xv = match abscissa {
            Abscissa::Log if x > 0.0 => x.ln(),
            Abscissa::Log => return Err(invalid(format!("log abscissa needs positive values, got {x:e}"))),
            Abscissa::Linear => x,
        };
        xs.push(xv);
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit { exponent: slope, log_prefactor: my - slope * mx, r_squared: r2, window, n_points: xs.len() })
}

/// One line of the rate report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawReport {
    pub law: String,
    pub theoretical_exponent: f64,
    pub fitted_exponent: Option<f64>,
    pub r2: Option<f64>,
    pub window: (f64, f64),
    /// `None` when the law is skipped.
    pub pass: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub theta: f64,
    pub kappa: f64,
    pub critical: bool,
    pub tolerance: f64,
    pub laws: Vec<LawReport>,
}

impl RateReport {
    /// True when every law that was fitted passed.
    pub fn all_pass(&self) -> bool {
        self.laws.iter().all(|l| l.pass != Some(false))
    }

    pub fn law(&self, name: &str) -> Option<&LawReport> {
        self.laws.iter().find(|l| l.law == name)
    }
}

/// Relative tolerance applied to every law.
pub const RATE_TOLERANCE: f64 = 0.1;

/// Default fit window `[10 eps, T / 4]` in `t`.
pub fn default_window(eps: f64, t_final: f64) -> (f64, f64) {
    (10.0 * eps, 0.25 * t_final)
}

fn law(name: &str, theory: f64, points: &[(f64, f64)], window: (f64, f64), abscissa: Abscissa) -> LawReport {
    match fit_rate(points, window, abscissa) {
        Ok(fit) => LawReport {
            law: name.into(),
            theoretical_exponent: theory,
            fitted_exponent: Some(fit.exponent),
            r2: Some(fit.r_squared),
            window,
            pass: Some((fit.exponent - theory).abs() <= RATE_TOLERANCE * theory.abs()),
            note: None,
        },
        Err(e) => LawReport {
            law: name.into(),
            theoretical_exponent: theory,
            fitted_exponent: None,
            r2: None,
            window,
            pass: Some(false),
            note: Some(e.to_string()),
        },
    }
}

fn skipped(name: &str, theory: f64, window: (f64, f64), why: &str) -> LawReport {
    LawReport {
        law: name.into(),
        theoretical_exponent: theory,
        fitted_exponent: None,
        r2: None,
        window,
        pass: None,
        note: Some(why.into()),
    }
}

/// Fits every scaling law on `window` (in `t`; the rescaled laws use
/// `[ln t_min, ln t_max]` in `tau`).
pub fn rate_report(e: &EulerianSeries, rescaled: &[SeriesRow], p: &Profile, window: (f64, f64)) -> RateReport {
    let a = p.alpha;
    let th = p.theta;
    let k = p.kappa;
    let pts = |v: &[f64]| e.t.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let mut laws = vec![
        law("support_radius", a, &pts(&e.support_radius), window, Abscissa::Log),
        law("m_max", -a, &pts(&e.m_max), window, Abscissa::Log),
        law("m_pow", -a * th, &pts(&e.m_pow), window, Abscissa::Log),
    ];
    if p.is_critical() {
        laws.push(skipped("osc_u", 0.0, window, "critical: logarithmic oscillation bound, no power fit"));
    } else {
        laws.push(law("osc_u", 2.0 * a - 1.0, &pts(&e.osc_u), window, Abscissa::Log));
    }
    laws.push(law("ux_max", a - 1.0, &pts(&e.ux_max), window, Abscissa::Log));
    let tw = (window.0.ln(), window.1.ln());
    let tau_pts = |f: &dyn Fn(&SeriesRow) -> f64| rescaled.iter().map(|r| (r.tau, f(r))).collect::<Vec<_>>();
    if p.is_critical() {
        for (name, theory) in [("lyapunov", 0.0), ("d2_profile", 0.0), ("duality_pairing", 0.0)] {
            laws.push(skipped(name, theory, tw, "critical: kappa = 0, no exponential fit"));
        }
    } else if k > 0.0 {
        laws.push(law("lyapunov", 2.0 * k, &tau_pts(&|r| r.h), tw, Abscissa::Linear));
        laws.push(law("d2_profile", k, &tau_pts(&|r| r.d2), tw, Abscissa::Linear));
        laws.push(law("duality_pairing", 2.0 * k, &tau_pts(&|r| r.duality_pairing.abs()), tw, Abscissa::Linear));
    } else {
        for (name, theory) in [("lyapunov", 2.0 * k), ("d2_profile", k), ("duality_pairing", 2.0 * k)] {
            laws.push(skipped(name, theory, tw, "subcritical: rate stated for theta > 2 only"));
        }
    }
    RateReport { theta: th, kappa: k, critical: p.is_critical(), tolerance: RATE_TOLERANCE, laws }
}
