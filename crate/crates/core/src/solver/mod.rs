//! Lagrangian elliptic problem for the regularized flow `gamma(t, y)`.
//!
//! The flow starts at `eps^alpha y`, ends at the quantile map of the terminal
//! density and minimizes the discrete transport energy in between. Its
//! Euler-Lagrange equation is
//! `gamma_tt + theta phi^theta gamma_yy / gamma_y^(2+theta) = (phi^theta)_y / gamma_y^(theta+1)`.

pub mod energy;
pub mod linalg;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::stencil;
use crate::profile::{LabelGrid, Profile};
use crate::target::TerminalDensity;
use energy::TimeWeights;

/// Tensor grid in `(t, y)` with `t + eps` geometric and `y` uniform on `[-R, R]`.
#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub eps: f64,
    pub t_final: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Time nodes, `t[0] = 0`, `t[nt] = t_final`.
    pub t: Vec<f64>,
    /// `ln(t + eps)`, uniformly spaced.
    pub s: Vec<f64>,
    pub ds: f64,
    pub labels: Arc<LabelGrid>,
}

impl SpaceTimeGrid {
    pub fn new(p: &Profile, eps: f64, t_final: f64, nt: usize, ny: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(invalid(format!("eps must be positive, got {eps}")));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(invalid(format!("terminal time must be positive, got {t_final}")));
        }
        if nt < 2 || ny < 2 {
            return Err(invalid(format!("grid too small: nt={nt}, ny={ny}")));
        }
        let s0 = eps.ln();
        let s1 = (t_final + eps).ln();
        let ds = (s1 - s0) / nt as f64;
        let s: Vec<f64> = (0..=nt).map(|i| s0 + i as f64 * ds).collect();
        let mut t: Vec<f64> = s.iter().map(|v| v.exp() - eps).collect();
        t[0] = 0.0;
        t[nt] = t_final;
        let labels = Arc::new(LabelGrid::new(p, ny)?);
        Ok(SpaceTimeGrid { eps, t_final, theta: p.theta, alpha: p.alpha, t, s, ds, labels })
    }

    pub fn nt(&self) -> usize {
        self.t.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.labels.ny()
    }

    pub fn y(&self) -> &[f64] {
        &self.labels.y
    }

    /// Characteristic length `(t_i + eps)^alpha` of slice `i`.
    pub fn scale(&self, i: usize) -> f64 {
        (self.t[i] + self.eps).powf(self.alpha)
    }

    fn check_profile(&self, p: &Profile) -> Result<()> {
        if (p.theta - self.theta).abs() > 1e-14 * p.theta {
            return Err(invalid(format!("grid built for theta={}, profile has {}", self.theta, p.theta)));
        }
        Ok(())
    }
}

/// Discrete flow on a [`SpaceTimeGrid`], row-major in time.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub grid: SpaceTimeGrid,
    pub gamma: Vec<f64>,
}

impl FlowField {
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: SpaceTimeGrid, f: F) -> Self {
        let mut gamma = Vec::with_capacity((grid.nt() + 1) * (grid.ny() + 1));
        for &t in &grid.t {
            for &y in grid.y() {
                gamma.push(f(t, y));
            }
        }
        FlowField { grid, gamma }
    }

    /// The exact regularized self-similar flow `(t + eps)^alpha y`.
    pub fn self_similar(grid: SpaceTimeGrid) -> Self {
        let (eps, a) = (grid.eps, grid.alpha);
        Self::from_fn(grid, |t, y| (t + eps).powf(a) * y)
    }

    pub fn nt(&self) -> usize {
        self.grid.nt()
    }

    pub fn ny(&self) -> usize {
        self.grid.ny()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.ny() + 1;
        &self.gamma[i * m..(i + 1) * m]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * (self.ny() + 1) + j]
    }

    /// Boundary history `gamma(., y_j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..=self.nt()).map(|i| self.at(i, j)).collect()
    }

    /// Smallest forward-difference slope `gamma_y` over the whole field.
    pub fn min_slope(&self) -> f64 {
        let h = self.grid.labels.h;
        (0..=self.nt())
            .flat_map(|i| self.row(i).windows(2).map(move |w| (w[1] - w[0]) / h).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolver {
    #[default]
    BandedDirect,
    ConjugateGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_max_iter: usize,
    pub residual_tol: f64,
    pub gamma_y_floor: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub linear_solver: LinearSolver,
    /// Reject terminal densities that fail the compatibility check.
    pub strict_target: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_max_iter: 200,
            residual_tol: 1e-10,
            gamma_y_floor: 1e-8,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            linear_solver: LinearSolver::BandedDirect,
            strict_target: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.newton_max_iter == 0 {
            return Err(invalid("newton_max_iter must be positive"));
        }
        for (name, v) in [
            ("residual_tol", self.residual_tol),
            ("gamma_y_floor", self.gamma_y_floor),
            ("armijo_shrink", self.armijo_shrink),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.armijo_c > 0.0 && self.armijo_c <= 0.5) {
            return Err(invalid(format!("armijo_c must lie in (0, 0.5], got {}", self.armijo_c)));
        }
        if self.armijo_shrink >= 1.0 {
            return Err(invalid(format!("armijo_shrink must be below 1, got {}", self.armijo_shrink)));
        }
        Ok(())
    }
}

/// Convergence record of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub scaled_residual: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// Energy after each accepted step, starting with the initial guess.
    pub energies: Vec<f64>,
    pub backtracks: usize,
    pub linear_iterations: usize,
}

/// `quantile(m_T, Phi(y_j))` at every label node, endpoints exact.
pub fn terminal_row(p: &Profile, m: &TerminalDensity, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    grid.check_profile(p)?;
    let ny = grid.ny();
    let mut row = Vec::with_capacity(ny + 1);
    for (j, &y) in grid.y().iter().enumerate() {
        let v = if j == 0 {
            m.a
        } else if j == ny {
            m.b
        } else {
            m.quantile(p.cdf(y))?
        };
        row.push(v);
    }
    Ok(row)
}

/// Discrete transport energy of a field.
pub fn energy(f: &FlowField, p: &Profile) -> Result<f64> {
    energy_with_floor(f, p, SolverConfig::default().gamma_y_floor)
}

pub fn energy_with_floor(f: &FlowField, p: &Profile, floor: f64) -> Result<f64> {
    f.grid.check_profile(p)?;
    let w = TimeWeights::new(&f.grid);
    energy::total_energy(&f.grid, &w, &f.gamma, floor)
}

/// Strong finite-difference residual of the flow equation at rows `1..nt`,
/// all label nodes. At `y = +-R` the equation reduces to the free-boundary ODE
/// `gamma_tt = (phi^theta)_y / gamma_y^(theta+1)`.
pub fn residual(f: &FlowField, p: &Profile) -> Result<Vec<Vec<f64>>> {
    f.grid.check_profile(p)?;
    let g = &f.grid;
    let ny = g.ny();
    let h = g.labels.h;
    let th = p.theta;
    let mut out = Vec::with_capacity(g.nt() - 1);
    for i in 1..g.nt() {
        let w = stencil::second(g.t[i] - g.t[i - 1], g.t[i + 1] - g.t[i]);
        let (prev, cur, next) = (f.row(i - 1), f.row(i), f.row(i + 1));
        let mut r = Vec::with_capacity(ny + 1);
        for j in 0..=ny {
            let gtt = w[0] * prev[j] + w[1] * cur[j] + w[2] * next[j];
            let gy = if j == 0 {
                (-3.0 * cur[0] + 4.0 * cur[1] - cur[2]) / (2.0 * h)
            } else if j == ny {
                (3.0 * cur[ny] - 4.0 * cur[ny - 1] + cur[ny - 2]) / (2.0 * h)
            } else {
                (cur[j + 1] - cur[j - 1]) / (2.0 * h)
            };
            if !(gy > 0.0) {
                return Err(Error::DegenerateState(format!("nonpositive slope at ({i}, {j})")));
            }
            let y = g.y()[j];
            let dphi = -2.0 * p.coef() * y;
            let mut v = gtt - dphi / gy.powf(th + 1.0);
            if j > 0 && j < ny {
                let gyy = (cur[j + 1] - 2.0 * cur[j] + cur[j - 1]) / (h * h);
                v += th * p.phi_theta(y) * gyy / gy.powf(th + 2.0);
            }
            r.push(v);
        }
        out.push(r);
    }
    Ok(out)
}

/// Blend of the initial and terminal rows along `(t + eps)^alpha`.
pub fn initial_guess(grid: &SpaceTimeGrid, terminal: &[f64]) -> FlowField {
    let (eps, a) = (grid.eps, grid.alpha);
    let e0 = eps.powf(a);
    let denom = (grid.t_final + eps).powf(a) - e0;
    let y = grid.y().to_vec();
    let t = grid.t.clone();
    let m = y.len();
    let mut gamma = Vec::with_capacity(t.len() * m);
    for (i, &ti) in t.iter().enumerate() {
        let lam = if i + 1 == t.len() { 1.0 } else { ((ti + eps).powf(a) - e0) / denom };
        for j in 0..m {
            let start = e0 * y[j];
            gamma.push(if i + 1 == t.len() { terminal[j] } else { start + lam * (terminal[j] - start) });
        }
    }
    FlowField { grid: grid.clone(), gamma }
}

/// Damped Newton minimization of the discrete energy.
pub fn solve(
    p: &Profile,
    m: &TerminalDensity,
    grid: &SpaceTimeGrid,
    cfg: &SolverConfig,
) -> Result<(FlowField, SolveReport)> {
    cfg.validate()?;
    grid.check_profile(p)?;
    if cfg.strict_target && !m.report().pass {
        return Err(Error::InvalidTarget(format!(
            "terminal density fails the compatibility check: {}",
            m.report().reason.clone().unwrap_or_default()
        )));
    }
    let term = terminal_row(p, m, grid)?;
    let h = grid.labels.h;
    if term.windows(2).any(|w| !((w[1] - w[0]) / h >= cfg.gamma_y_floor)) {
        return Err(Error::InvalidTarget("terminal quantile map is not strictly increasing".into()));
    }
    let mut flow = initial_guess(grid, &term);
    let w = TimeWeights::new(grid);
    let nt = grid.nt();
    let mcols = grid.ny() + 1;
    let floor = cfg.gamma_y_floor;
    let scales: Vec<f64> = (1..nt).map(|i| grid.scale(i)).collect();

    let mut e = energy::total_energy(grid, &w, &flow.gamma, floor)?;
    let mut report = SolveReport {
        iterations: 0,
        scaled_residual: f64::INFINITY,
        energy_initial: e,
        energy_final: e,
        energies: vec![e],
        backtracks: 0,
        linear_iterations: 0,
    };
    if nt < 2 {
        return Ok((flow, report));
    }
    for it in 0..=cfg.newton_max_iter {
        let g = energy::gradient(grid, &w, &flow.gamma);
        let hess = energy::hessian(grid, &w, &flow.gamma);
        let diag = hess.diagonal();
        let measure = g
            .iter()
            .zip(&diag)
            .enumerate()
            .map(|(k, (gk, dk))| gk.abs() / dk / scales[k / mcols])
            .fold(0.0, f64::max);
        report.scaled_residual = measure;
        report.iterations = it;
        if measure <= cfg.residual_tol {
            report.energy_final = e;
            return Ok((flow, report));
        }
        if it == cfg.newton_max_iter {
            break;
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = match cfg.linear_solver {
            LinearSolver::BandedDirect => hess.to_band().cholesky()?.solve(&rhs),
            LinearSolver::ConjugateGradient => {
                let (x, its) = linalg::pcg(&hess, &rhs, 1e-12, 20 * rhs.len())?;
                report.linear_iterations += its;
                x
            }
        };
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let negligible = slope.abs() <= 1e-13 * e.abs().max(1e-300);
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let mut trial = flow.gamma.clone();
            for (k, s) in step.iter().enumerate() {
                trial[mcols + k] += lam * s;
            }
            match energy::total_energy(grid, &w, &trial, floor) {
                Ok(et) if negligible || et <= e + cfg.armijo_c * lam * slope => {
                    flow.gamma = trial;
                    e = et;
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::DegenerateState(_)) => {
                    lam *= cfg.armijo_shrink;
                    report.backtracks += 1;
                }
                Err(other) => return Err(other),
            }
        }
        if !accepted {
            return Err(Error::DegenerateState(format!(
                "line search failed at Newton iteration {it} (scaled residual {measure:e})"
            )));
        }
        report.energies.push(e);
    }
    Err(Error::NewtonDivergence(format!(
        "no convergence in {} iterations (scaled residual {:e})",
        cfg.newton_max_iter, report.scaled_residual
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_geometric_and_symmetric() {
        let p = Profile::new(1.0).unwrap();
        let g = SpaceTimeGrid::new(&p, 1e-3, 1.0, 32, 17).unwrap();
        assert_eq!(g.t[0], 0.0);
        assert_eq!(g.t[32], 1.0);
        let r0 = (g.t[1] + g.eps) / (g.t[0] + g.eps);
        for i in 0..32 {
            let r = (g.t[i + 1] + g.eps) / (g.t[i] + g.eps);
            assert!((r - r0).abs() < 1e-12);
            assert!(g.t[i + 1] > g.t[i]);
        }
        for j in 0..=17 {
            assert_eq!(g.y()[j], -g.y()[17 - j]);
        }
        assert!(SpaceTimeGrid::new(&p, 0.0, 1.0, 8, 8).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { armijo_c: 0.7, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { gamma_y_floor: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn terminal_row_of_self_similar_target() {
        let p = Profile::new(1.0).unwrap();
        let g = SpaceTimeGrid::new(&p, 1e-3, 1.0, 8, 32).unwrap();
        let m = TerminalDensity::self_similar(&p, 1.0, 1e-3).unwrap();
        let row = terminal_row(&p, &m, &g).unwrap();
        let s = (1.0 + 1e-3f64).powf(p.alpha);
        for (j, &y) in g.y().iter().enumerate() {
            assert!((row[j] - s * y).abs() < 1e-8);
        }
        assert_eq!(row[0], m.a);
        assert_eq!(row[32], m.b);
        assert!(row.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn energy_of_self_similar_field() {
        let p = Profile::new(1.0).unwrap();
        let eps = 1e-2;
        let g = SpaceTimeGrid::new(&p, eps, 1.0, 400, 16).unwrap();
        let f = FlowField::self_similar(g);
        let e = energy(&f, &p).unwrap();
        let a = p.alpha;
        let th = p.theta;
        let exact = crate::numerics::quad::integrate(
            |t| {
                let l = t + eps;
                0.5 * a * a * l.powf(2.0 * a - 2.0) * p.second_moment()
                    + l.powf(-a * th) * p.moment_pow() / (th + 1.0)
            },
            0.0,
            1.0,
        );
        assert!((e - exact).abs() < 1e-4 * exact, "e={e} exact={exact}");
    }

    #[test]
    fn energy_of_frozen_map_is_linear_in_time() {
        let p = Profile::new(2.0).unwrap();
        let val = |t_final: f64| {
            let g = SpaceTimeGrid::new(&p, 1e-2, t_final, 100, 16).unwrap();
            energy(&FlowField::from_fn(g, |_, y| 0.7 * y), &p).unwrap()
        };
        let (e1, e2) = (val(1.0), val(2.0));
        let expected = 0.7f64.powf(-2.0) * p.moment_pow() / 3.0;
        // only the time quadrature of dt = exp(s) ds is inexact
        assert!((e1 - expected).abs() < 5e-4 * expected, "{e1} {expected}");
        assert!((e2 - 2.0 * expected).abs() < 5e-4 * expected);
    }

    #[test]
    fn residual_vanishes_to_second_order_on_exact_field() {
        let p = Profile::new(1.0).unwrap();
        let sup = |n: usize| {
            let g = SpaceTimeGrid::new(&p, 1e-2, 1.0, n, n).unwrap();
            let f = FlowField::self_similar(g);
            residual(&f, &p).unwrap().iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()))
        };
        let (r1, r2) = (sup(32), sup(64));
        assert!(r2 < r1 / 3.0, "r1={r1} r2={r2}");
    }

    #[test]
    fn free_boundary_forcing_sign() {
        let p = Profile::new(1.0).unwrap();
        let y = p.r_alpha;
        assert!(p.phi_theta_dy(y * (1.0 - 1e-12)) < 0.0);
    }

    #[test]
    fn solve_recovers_self_similar_flow() {
        let p = Profile::new(1.0).unwrap();
        let eps = 1e-3;
        let g = SpaceTimeGrid::new(&p, eps, 1.0, 24, 16).unwrap();
        let m = TerminalDensity::self_similar(&p, 1.0, eps).unwrap();
        let (f, rep) = solve(&p, &m, &g, &SolverConfig::default()).unwrap();
        assert!(rep.energy_final <= rep.energy_initial);
        let mut err: f64 = 0.0;
        for i in 0..=g.nt() {
            for j in 0..=g.ny() {
                err = err.max((f.at(i, j) - g.scale(i) * g.y()[j]).abs());
            }
        }
        assert!(err < 2e-3, "err={err}");
        assert!(f.min_slope() > 0.0);
    }

    #[test]
    fn cg_and_direct_agree() {
        let p = Profile::new(2.0).unwrap();
        let g = SpaceTimeGrid::new(&p, 1e-2, 1.0, 12, 12).unwrap();
        let m = TerminalDensity::power_bump(-1.0, 1.0, 2.0).unwrap();
        let (a, _) = solve(&p, &m, &g, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig { linear_solver: LinearSolver::ConjugateGradient, ..Default::default() };
        let (b, rep) = solve(&p, &m, &g, &cfg).unwrap();
        assert!(rep.linear_iterations > 0);
        for (u, v) in a.gamma.iter().zip(&b.gamma) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let p = Profile::new(1.0).unwrap();
        let g = SpaceTimeGrid::new(&p, 1e-3, 1.0, 12, 12).unwrap();
        let m = TerminalDensity::power_bump(-2.0, 3.0, 1.0).unwrap();
        let cfg = SolverConfig { newton_max_iter: 1, ..Default::default() };
        assert!(matches!(solve(&p, &m, &g, &cfg), Err(Error::NewtonDivergence(_))));
    }
}
