//! Continuous rescaling `t = e^tau`, `x = t^alpha eta`:
//! `mu = t^alpha m`, `v = t^(1 - 2 alpha) u`, `w = v + alpha eta^2 / 2`,
//! `gamma_hat = t^(-alpha) gamma`.
//!
//! Integrals against `mu` are evaluated in Lagrangian form against `phi dy`
//! with the exact P1 weights of the label grid. `w_eta` comes from the chain
//! rule `w_eta = t^(1 - alpha) u_x + alpha eta`, with `u_x = -gamma_t` on the
//! support and the characteristic extension outside.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::fields::{d1_to_dirac, image_cell_mass, snapshot, EulerianSnapshot, Extension, ValueField};
use crate::numerics::stencil;
use crate::profile::{LabelGrid, Profile};
use crate::solver::FlowField;

/// One rescaled time slice. `eta`, `mu`, `w` and `w_eta` live on the snapshot
/// nodes (support plus exterior padding); `gamma_hat` on the label nodes.
#[derive(Debug, Clone)]
pub struct RescaledState {
    pub tau: f64,
    pub t: f64,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    pub w_eta: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    /// Index range of the support nodes inside `eta`.
    pub support: Range<usize>,
    labels: Arc<LabelGrid>,
}

impl RescaledState {
    pub fn labels(&self) -> &LabelGrid {
        &self.labels
    }

    /// `w_eta` at the label images.
    pub fn w_eta_support(&self) -> &[f64] {
        &self.w_eta[self.support.clone()]
    }

    fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.labels.h;
        self.gamma_hat.windows(2).map(move |g| (g[1] - g[0]) / h)
    }

    /// `int mu deta` from `eta_0` up to each label image, integrating the
    /// pushforward density cell by cell in `eta`.
    pub fn cumulative_mass(&self, p: &Profile) -> Vec<f64> {
        let y = &self.labels.y;
        let n = y.len();
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..n - 1 {
            acc += image_cell_mass(p, y[k], y[k + 1], self.gamma_hat[k], self.gamma_hat[k + 1], k == 0, k + 2 == n);
            out.push(acc);
        }
        out
    }

    /// `v = w - alpha eta^2 / 2`.
    pub fn v(&self, p: &Profile) -> Vec<f64> {
        self.w.iter().zip(&self.eta).map(|(w, e)| w - 0.5 * p.alpha * e * e).collect()
    }
}

fn build(
    t: f64,
    x: &[f64],
    m: &[f64],
    u: &[f64],
    u_x: &[f64],
    support: Range<usize>,
    labels: Arc<LabelGrid>,
    p: &Profile,
) -> Result<RescaledState> {
    if !(t > 0.0) {
        return Err(invalid(format!("rescaling needs t > 0, got {t:e}")));
    }
    if support.len() != labels.y.len() {
        return Err(invalid("snapshot support does not match the label grid"));
    }
    let a = p.alpha;
    let ta = t.powf(a);
    let eta: Vec<f64> = x.iter().map(|x| x / ta).collect();
    if eta.windows(2).any(|e| !(e[1] > e[0])) {
        return Err(Error::DegenerateState(format!("snapshot nodes are not increasing at t = {t:e}")));
    }
    let mu = m.iter().map(|m| ta * m).collect();
    let tv = t.powf(1.0 - 2.0 * a);
    let w: Vec<f64> = u.iter().zip(&eta).map(|(u, e)| tv * u + 0.5 * a * e * e).collect();
    let tx = t.powf(1.0 - a);
    let w_eta = u_x.iter().zip(&eta).map(|(ux, e)| tx * ux + a * e).collect();
    let gamma_hat = eta[support.clone()].to_vec();
    Ok(RescaledState { tau: t.ln(), t, eta, mu, w, w_eta, gamma_hat, support, labels })
}

/// Rescales one Eulerian snapshot; the label grid is rebuilt from the number
/// of support nodes.
pub fn rescale_snapshot(s: &EulerianSnapshot, p: &Profile) -> Result<RescaledState> {
    let ny = s.support.len().checked_sub(1).ok_or_else(|| invalid("empty support"))?;
    let labels = Arc::new(LabelGrid::new(p, ny)?);
    build(s.t, &s.x, &s.m, &s.u, &s.u_x, s.support.clone(), labels, p)
}

/// Rescaled states at every time node with `t > 0`, sharing the label grid of
/// the flow.
pub fn rescale_flow(f: &FlowField, p: &Profile, v: &ValueField, ext: &Extension, pad: usize) -> Result<Vec<RescaledState>> {
    (1..=f.nt())
        .map(|i| {
            let s = snapshot(f, v, ext, i, pad)?;
            build(s.t, &s.x, &s.m, &s.u, &s.u_x, s.support.clone(), f.grid.labels.clone(), p)
        })
        .collect()
}

/// `int mu |w_eta|^2 deta` in Lagrangian form.
pub fn kinetic(state: &RescaledState) -> f64 {
    let we = state.w_eta_support();
    state.labels.mass_inner(we, we)
}

/// Lyapunov functional
/// `int [mu w_eta^2 / 2 - mu^(theta+1) / (theta+1) - c eta^2 mu] - theta / (theta+1) int phi^(theta+1) + c R^2`
/// with `c = alpha (1 - alpha) / 2`; vanishes at `mu = phi`, `w_eta = 0`.
pub fn lyapunov(state: &RescaledState, p: &Profile) -> f64 {
    let lab = &state.labels;
    let th = p.theta;
    let c = 0.5 * p.alpha * (1.0 - p.alpha);
    let pow: f64 = state.slopes().zip(&lab.pot).map(|(s, w)| w * s.powf(-th)).sum::<f64>() / (th + 1.0);
    let second = lab.mass_inner(&state.gamma_hat, &state.gamma_hat);
    0.5 * kinetic(state) - pow - c * second - th / (th + 1.0) * p.moment_pow() + c * p.r_alpha * p.r_alpha
}

/// Right-hand side of the derivative identity, `-(2 alpha - 1) int mu |w_eta|^2`.
pub fn lyapunov_rate(state: &RescaledState, p: &Profile) -> f64 {
    -(2.0 * p.alpha - 1.0) * kinetic(state)
}

/// `d_2(mu, phi) = (int |gamma_hat - y|^2 phi dy)^(1/2)`; `gamma_hat` is the
/// monotone map pushing `phi` to `mu`.
pub fn d2_to_profile(state: &RescaledState) -> f64 {
    let d: Vec<f64> = state.gamma_hat.iter().zip(&state.labels.y).map(|(g, y)| g - y).collect();
    state.labels.mass_inner(&d, &d).max(0.0).sqrt()
}

/// `d_1(mu, phi) = int |gamma_hat - y| phi dy`.
pub fn d1_to_profile(state: &RescaledState, p: &Profile) -> f64 {
    let d: Vec<f64> = state.gamma_hat.iter().zip(&state.labels.y).map(|(g, y)| g - y).collect();
    d1_to_dirac(&d, &state.labels, p)
}

/// `int mu^(1 - theta) deta = int gamma_hat_y^theta phi^(1 - theta) dy`.
pub fn reciprocal_integral(state: &RescaledState, p: &Profile) -> f64 {
    state.slopes().zip(&state.labels.recip).map(|(s, r)| r * s.powf(p.theta)).sum()
}

/// `int w (mu - phi) deta`. The `mu` part is Lagrangian; the `phi` part uses
/// the piecewise-linear interpolant of `w` on the snapshot nodes, extended
/// linearly past the outermost nodes.
pub fn duality_pairing(state: &RescaledState, p: &Profile) -> f64 {
    let ws = &state.w[state.support.clone()];
    let against_mu: f64 = ws.iter().zip(&state.labels.lumped).map(|(w, l)| w * l).sum();
    let r = p.r_alpha;
    let eta = &state.eta;
    let n = eta.len();
    let w = &state.w;
    let lin = |k: usize, e: f64| w[k] + (w[k + 1] - w[k]) * (e - eta[k]) / (eta[k + 1] - eta[k]);
    let mut against_phi = 0.0;
    // Cells, plus the two unbounded end pieces when the nodes do not cover
    // [-R, R].
    let mut pieces: Vec<(f64, f64, usize)> = Vec::with_capacity(n + 1);
    pieces.push((f64::NEG_INFINITY, eta[0], 0));
    for k in 0..n - 1 {
        pieces.push((eta[k], eta[k + 1], k));
    }
    pieces.push((eta[n - 1], f64::INFINITY, n - 2));
    for (lo, hi, k) in pieces {
        let (a, b) = (lo.max(-r), hi.min(r));
        if b > a {
            against_phi += p.integrate_weighted(1.0, a, b, |e| lin(k, e));
        }
    }
    against_mu - against_phi
}

/// Quantities for the uniqueness-class hypotheses, normalized so that each
/// stays bounded as `t -> 0` when the hypothesis holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificates {
    /// `osc v` over `|eta| <= R_alpha`.
    pub osc_v: f64,
    /// `int w (mu - phi) / e^(2 kappa tau)`.
    pub pairing: f64,
    /// `int mu^(1 - theta) deta`.
    pub interval: f64,
    /// `|eta_left| + |eta_right|`.
    pub support: f64,
}

pub fn certificates(state: &RescaledState, p: &Profile) -> Certificates {
    let v = state.v(p);
    let (lo, hi) = state
        .eta
        .iter()
        .zip(&v)
        .filter(|(e, _)| e.abs() <= p.r_alpha)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, &x)| (a.min(x), b.max(x)));
    let g = &state.gamma_hat;
    Certificates {
        osc_v: if hi >= lo { hi - lo } else { 0.0 },
        pairing: duality_pairing(state, p) * (-2.0 * p.kappa * state.tau).exp(),
        interval: reciprocal_integral(state, p),
        support: g[0].abs() + g[g.len() - 1].abs(),
    }
}

/// One row of the rescaled time series.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SeriesRow {
    pub tau: f64,
    pub h: f64,
    pub dh_fd: f64,
    pub dh_identity: f64,
    pub d1: f64,
    pub d2: f64,
    pub mu_max: f64,
    pub osc_w: f64,
    pub supp_left: f64,
    pub supp_right: f64,
    pub recip_integral: f64,
    pub duality_pairing: f64,
}

/// Series over the given states (increasing `tau`); `dh_fd` differentiates
/// `H` with three-point stencils on the `tau` nodes.
pub fn series(states: &[RescaledState], p: &Profile) -> Vec<SeriesRow> {
    let tau: Vec<f64> = states.iter().map(|s| s.tau).collect();
    let h: Vec<f64> = states.iter().map(|s| lyapunov(s, p)).collect();
    let dh = if states.len() >= 3 { stencil::derivative(&tau, &h) } else { vec![f64::NAN; states.len()] };
    states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ws = &s.w[s.support.clone()];
            let (lo, hi) = ws.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            SeriesRow {
                tau: s.tau,
                h: h[i],
                dh_fd: dh[i],
                dh_identity: lyapunov_rate(s, p),
                d1: d1_to_profile(s, p),
                d2: d2_to_profile(s),
                mu_max: s.mu.iter().copied().fold(0.0, f64::max),
                osc_w: hi - lo,
                supp_left: s.gamma_hat[0],
                supp_right: s.gamma_hat[s.gamma_hat.len() - 1],
                recip_integral: reciprocal_integral(s, p),
                duality_pairing: duality_pairing(s, p),
            }
        })
        .collect()
}

/// Residual of
/// `alpha (alpha - 1) g + (2 alpha - 1) g_tau + g_tautau + theta phi^theta g_yy / g_y^(2+theta) - (phi^theta)_y / g_y^(theta+1)`
/// for `g = gamma_hat` at time nodes `2..nt` and interior labels. Time
/// derivatives are taken in the uniform variable `s = ln(t + eps)` and
/// converted with `ds/dtau = t / (t + eps)`.
pub fn hat_gamma_residual(f: &FlowField, p: &Profile) -> Result<Vec<Vec<f64>>> {
    let g = &f.grid;
    let (nt, ny) = (f.nt(), f.ny());
    if nt < 4 {
        return Err(invalid("need at least four time intervals"));
    }
    let a = p.alpha;
    let th = p.theta;
    let h = g.labels.h;
    let y = g.y();
    let hat = |i: usize, j: usize| g.t[i].powf(-a) * f.at(i, j);
    let mut out = Vec::with_capacity(nt - 2);
    for i in 2..nt {
        let r = g.t[i] / (g.t[i] + g.eps);
        let mut row = Vec::with_capacity(ny - 1);
        for j in 1..ny {
            let (gm, g0, gp) = (hat(i - 1, j), hat(i, j), hat(i + 1, j));
            let gs = (gp - gm) / (2.0 * g.ds);
            let gss = (gp - 2.0 * g0 + gm) / (g.ds * g.ds);
            let g_tau = r * gs;
            let g_tautau = r * r * gss + r * (1.0 - r) * gs;
            let (yl, yc, yr) = (hat(i, j - 1), g0, hat(i, j + 1));
            let gy = (yr - yl) / (2.0 * h);
            let gyy = (yr - 2.0 * yc + yl) / (h * h);
            let pt = p.phi_theta(y[j]);
            row.push(
                a * (a - 1.0) * g0 + (2.0 * a - 1.0) * g_tau + g_tautau + th * pt * gyy / gy.powf(2.0 + th)
                    - p.phi_theta_dy(y[j]) / gy.powf(th + 1.0),
            );
        }
        out.push(row);
    }
    Ok(out)
}

/// Residual of `alpha (alpha - 1) / 2 (xi^2)_y - (phi^theta / xi_y^theta)_y`
/// at interior nodes. The flux is evaluated at cell midpoints with the cell
/// slope of `xi`.
pub fn stationary_residual(y: &[f64], xi: &[f64], p: &Profile) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 3 || xi.len() != n {
        return Err(invalid("need matching samples with at least three nodes"));
    }
    if y.windows(2).any(|w| !(w[1] > w[0])) || xi.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("stationary residual needs increasing samples"));
    }
    let a = p.alpha;
    let sq: Vec<f64> = xi.iter().map(|x| x * x).collect();
    let dsq = stencil::derivative(y, &sq);
    let flux: Vec<f64> = (0..n - 1)
        .map(|k| {
            let s = (xi[k + 1] - xi[k]) / (y[k + 1] - y[k]);
            p.phi_theta(0.5 * (y[k] + y[k + 1])) / s.powf(p.theta)
        })
        .collect();
    Ok((1..n - 1)
        .map(|j| {
            let width = 0.5 * (y[j + 1] - y[j - 1]);
            0.5 * a * (a - 1.0) * dsq[j] - (flux[j] - flux[j - 1]) / width
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{extend_value, free_boundaries, value_on_support};
    use crate::solver::{solve, SolverConfig, SpaceTimeGrid};
    use crate::target::TerminalDensity;

    fn exact_state(theta: f64, eps: f64, n: usize, i: usize) -> (Profile, FlowField, RescaledState) {
        let p = Profile::new(theta).unwrap();
        let g = SpaceTimeGrid::new(&p, eps, 1.0, n, n).unwrap();
        let f = FlowField::self_similar(g);
        let t = f.grid.t[i];
        let (x, m) = crate::fields::density(&f, i).unwrap();
        let u = vec![0.0; x.len()];
        let st = build(t, &x, &m, &u, &u, 0..x.len(), f.grid.labels.clone(), &p).unwrap();
        (p, f, st)
    }

    #[test]
    fn rescaled_exact_density_is_dilated_profile() {
        let (p, f, st) = exact_state(1.0, 1e-2, 64, 40);
        let lam = (1.0 + f.grid.eps / st.t).powf(-p.alpha);
        for (e, mu) in st.eta.iter().zip(&st.mu) {
            let want = lam * p.phi(lam * e);
            assert!((mu - want).abs() < 1e-9, "{mu} {want}");
        }
    }

    #[test]
    fn pushforward_and_mass() {
        for theta in [1.0, 3.0] {
            let (p, _, st) = exact_state(theta, 1e-2, 48, 30);
            let cm = st.cumulative_mass(&p);
            assert!((cm[cm.len() - 1] - 1.0).abs() < 1e-6);
            for (j, y) in st.labels().y.iter().enumerate() {
                assert!((cm[j] - p.cdf(*y)).abs() < 1e-6, "j={j}");
            }
        }
    }

    #[test]
    fn fixed_point_has_zero_lyapunov_and_distances() {
        for theta in [1.0, 2.0, 3.0, 5.0] {
            let p = Profile::new(theta).unwrap();
            let labels = Arc::new(LabelGrid::new(&p, 64).unwrap());
            let y = labels.y.clone();
            let m: Vec<f64> = y.iter().map(|y| p.phi(*y)).collect();
            let u: Vec<f64> = y.iter().map(|y| -0.5 * p.alpha * y * y).collect();
            let ux: Vec<f64> = y.iter().map(|y| -p.alpha * y).collect();
            let st = build(1.0, &y, &m, &u, &ux, 0..y.len(), labels, &p).unwrap();
            assert!(lyapunov(&st, &p).abs() < 1e-12, "theta={theta} H={}", lyapunov(&st, &p));
            assert!(kinetic(&st) < 1e-24);
            assert_eq!(d2_to_profile(&st), 0.0);
            assert!(duality_pairing(&st, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn d2_of_dilation() {
        let p = Profile::new(1.5).unwrap();
        let labels = Arc::new(LabelGrid::new(&p, 40).unwrap());
        let y = labels.y.clone();
        let x: Vec<f64> = y.iter().map(|y| 1.1 * y).collect();
        let z = vec![0.0; y.len()];
        let st = build(1.0, &x, &z, &z, &z, 0..y.len(), labels, &p).unwrap();
        let want = (0.01 * p.second_moment()).sqrt();
        assert!((d2_to_profile(&st) - want).abs() < 1e-12);
        assert!((d1_to_profile(&st, &p) - 0.1 * st.labels().lumped.iter().zip(&y).map(|(l, y)| l * y.abs()).sum::<f64>()).abs() < 1e-3);
    }

    #[test]
    fn hat_gamma_identity_map_is_steady() {
        for theta in [1.0, 3.0] {
            let p = Profile::new(theta).unwrap();
            let g = SpaceTimeGrid::new(&p, 1e-3, 1.0, 32, 32).unwrap();
            let f = FlowField::from_fn(g, |t, y| t.powf(p.alpha) * y);
            for row in hat_gamma_residual(&f, &p).unwrap() {
                for r in row {
                    assert!(r.abs() < 1e-12, "{r}");
                }
            }
        }
    }

    #[test]
    fn hat_gamma_residual_second_order_on_shifted_field() {
        let p = Profile::new(1.0).unwrap();
        // gamma_hat = (1 + eps / t)^alpha y is singular as t -> 0, so the
        // comparison is made where t >= 10 eps
        let sup = |n: usize| {
            let g = SpaceTimeGrid::new(&p, 1e-2, 1.0, n, n).unwrap();
            let f = FlowField::self_similar(g);
            let res = hat_gamma_residual(&f, &p).unwrap();
            let t = &f.grid.t;
            res.iter()
                .enumerate()
                .filter(|(k, _)| t[k + 2] >= 0.1)
                .flat_map(|(_, r)| r.iter())
                .fold(0.0f64, |a, b| a.max(b.abs()))
        };
        let (a, b) = (sup(32), sup(64));
        assert!(a / b > 3.5, "{a} {b}");
    }

    #[test]
    fn stationary_residual_selects_identity() {
        let p = Profile::new(3.0).unwrap();
        let y: Vec<f64> = (0..=40).map(|k| -p.r_alpha + 2.0 * p.r_alpha * k as f64 / 40.0).collect();
        let r = stationary_residual(&y, &y, &p).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let scaled: Vec<f64> = y.iter().map(|v| 1.2f64.sqrt() * v).collect();
        let r = stationary_residual(&y, &scaled, &p).unwrap();
        assert!(r.iter().fold(0.0f64, |a, b| a.max(b.abs())) > 1e-2);
        let mut bad = y.clone();
        bad.swap(3, 4);
        assert!(stationary_residual(&y, &bad, &p).is_err());
    }

    #[test]
    fn nonpositive_time_is_rejected() {
        let p = Profile::new(1.0).unwrap();
        let labels = Arc::new(LabelGrid::new(&p, 8).unwrap());
        let y = labels.y.clone();
        let z = vec![0.0; y.len()];
        assert!(matches!(build(0.0, &y, &z, &z, &z, 0..y.len(), labels, &p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn lyapunov_identity_on_solved_run() {
        for theta in [1.0] {
            let p = Profile::new(theta).unwrap();
            let g = SpaceTimeGrid::new(&p, 1e-3, 1.0, 128, 32).unwrap();
            let m = TerminalDensity::power_bump(-1.0, 1.0, theta).unwrap();
            let (f, _) = solve(&p, &m, &g, &SolverConfig::default()).unwrap();
            let v = value_on_support(&f, &p, &m).unwrap();
            let ext = extend_value(&f, &free_boundaries(&f), &v).unwrap();
            let states = rescale_flow(&f, &p, &v, &ext, 8).unwrap();
            let rows = series(&states, &p);
            let mut good = 0;
            let mut total = 0;
            for r in &rows[1..rows.len() - 1] {
                let t = r.tau.exp();
                if t < 10.0 * g.eps || t > 0.25 {
                    continue;
                }
                total += 1;
                let rel = (r.dh_fd - r.dh_identity).abs() / r.dh_identity.abs();
                if rel < 0.05 {
                    good += 1;
                }
            }
            assert!(good * 10 >= total * 9, "theta={theta} {good}/{total}");
        }
    }
}
