//! Eulerian reconstruction from a solved flow: density, velocity, value
//! function, free boundaries, and the extension of the value function outside
//! the support by characteristics.

use crate::error::{Error, Result};
use crate::numerics::{interp, quad, stencil};
use crate::profile::Profile;
use crate::solver::FlowField;
use crate::target::TerminalDensity;

/// Eulerian fields at one time node. Support nodes are the Lagrangian images
/// `gamma(t, y_j)`; exterior nodes pad a uniform grid on both sides.
#[derive(Debug, Clone)]
pub struct EulerianSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub u_x: Vec<f64>,
    pub gamma_l: f64,
    pub gamma_r: f64,
    /// Index range of the support nodes inside `x`.
    pub support: std::ops::Range<usize>,
}

/// `gamma_t` at every node, three-point stencils in time.
pub fn time_derivative(f: &FlowField) -> Vec<f64> {
    let (nt, m) = (f.nt(), f.ny() + 1);
    let t = &f.grid.t;
    let mut out = vec![0.0; f.gamma.len()];
    for j in 0..m {
        let col = f.column(j);
        let d = stencil::derivative(t, &col);
        for i in 0..=nt {
            out[i * m + j] = d[i];
        }
    }
    out
}

/// Centered slope `gamma_y` of slice `i` (one-sided at the endpoints).
fn label_slope(f: &FlowField, i: usize) -> Vec<f64> {
    let y = f.grid.y();
    stencil::derivative(y, f.row(i))
}

/// `(x_j, m_j)` with `m = phi / gamma_y` on the image of the label nodes.
pub fn density(f: &FlowField, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let gy = label_slope(f, i);
    let ny = f.ny();
    let phi = &f.grid.labels.phi;
    let mut m = Vec::with_capacity(ny + 1);
    for j in 0..=ny {
        if !(gy[j] > 0.0) {
            return Err(Error::DegenerateState(format!("nonpositive slope at ({i}, {j})")));
        }
        m.push(if j == 0 || j == ny { 0.0 } else { phi[j] / gy[j] });
    }
    Ok((f.row(i).to_vec(), m))
}

/// `u_x(t_i, gamma(t_i, y_j)) = -gamma_t(t_i, y_j)`.
pub fn velocity(f: &FlowField, i: usize) -> Vec<f64> {
    let t = &f.grid.t;
    let nt = f.nt();
    let (i0, k) = if i == 0 {
        (0, 0)
    } else if i == nt {
        (nt - 2, 2)
    } else {
        (i - 1, 1)
    };
    let (h0, h1) = (t[i0 + 1] - t[i0], t[i0 + 2] - t[i0 + 1]);
    let w = match k {
        0 => stencil::first_left(h0, h1),
        1 => stencil::first_central(h0, h1),
        _ => stencil::first_right(h0, h1),
    };
    (0..=f.ny())
        .map(|j| -(w[0] * f.at(i0, j) + w[1] * f.at(i0 + 1, j) + w[2] * f.at(i0 + 2, j)))
        .collect()
}

/// Flow map at an arbitrary time, by four-point Lagrange interpolation in
/// `s = ln(t + eps)` along each label.
pub fn row_at_time(f: &FlowField, t: f64) -> Result<Vec<f64>> {
    let g = &f.grid;
    if !(t >= 0.0 && t <= g.t_final) {
        return Err(Error::InvalidParameter(format!("time {t:e} outside [0, {:e}]", g.t_final)));
    }
    let s = (t + g.eps).ln();
    Ok((0..=f.ny()).map(|j| interp::lagrange4(&g.s, &f.column(j), s)).collect())
}

/// Value function along labels, `ubar(t, y) = u(t, gamma(t, y))`.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub ny: usize,
    pub ubar: Vec<f64>,
}

impl ValueField {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.ubar[i * (self.ny + 1)..(i + 1) * (self.ny + 1)]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.ubar[i * (self.ny + 1) + j]
    }
}

/// Integrates `ubar_t = -(m^theta + gamma_t^2 / 2)` backward from the terminal
/// slice, where `u(T)` is recovered from `u_x = -gamma_t` and normalized by
/// `int u(T) m_T = 0`.
pub fn value_on_support(f: &FlowField, p: &Profile, _m: &TerminalDensity) -> Result<ValueField> {
    let (nt, ny) = (f.nt(), f.ny());
    let m = ny + 1;
    let g = &f.grid;
    let gt = time_derivative(f);
    let mut ubar = vec![0.0; (nt + 1) * m];
    let xt = f.row(nt);
    let ux: Vec<f64> = (0..m).map(|j| -gt[nt * m + j]).collect();
    let mut u_t = vec![0.0; m];
    for j in 1..m {
        u_t[j] = u_t[j - 1] + 0.5 * (ux[j - 1] + ux[j]) * (xt[j] - xt[j - 1]);
    }
    let mean: f64 = u_t.iter().zip(&g.labels.lumped).map(|(u, w)| u * w).sum::<f64>()
        / g.labels.lumped.iter().sum::<f64>();
    for j in 0..m {
        ubar[nt * m + j] = u_t[j] - mean;
    }
    // Running cost m^theta + gamma_t^2 / 2 at every node.
    let mut cost = vec![0.0; (nt + 1) * m];
    for i in 0..=nt {
        let gy = label_slope(f, i);
        for j in 0..m {
            if !(gy[j] > 0.0) {
                return Err(Error::DegenerateState(format!("nonpositive slope at ({i}, {j})")));
            }
            let y = g.y()[j];
            let mth = p.phi_theta(y) / gy[j].powf(p.theta);
            cost[i * m + j] = mth + 0.5 * gt[i * m + j].powi(2);
        }
    }
    // Trapezoid in s = ln(t + eps), where dt = (t + eps) ds.
    for i in (0..nt).rev() {
        let (a, b) = (g.t[i] + g.eps, g.t[i + 1] + g.eps);
        for j in 0..m {
            let inc = 0.5 * g.ds * (a * cost[i * m + j] + b * cost[(i + 1) * m + j]);
            ubar[i * m + j] = ubar[(i + 1) * m + j] + inc;
        }
    }
    Ok(ValueField { ny, ubar })
}

/// `int u(T) m_T` in Lagrangian form.
pub fn terminal_pairing(f: &FlowField, v: &ValueField) -> f64 {
    v.row(f.nt()).iter().zip(&f.grid.labels.lumped).map(|(u, w)| u * w).sum()
}

/// Free-boundary histories and their time derivatives.
#[derive(Debug, Clone)]
pub struct BoundaryHistory {
    pub t: Vec<f64>,
    pub gamma_l: Vec<f64>,
    pub gamma_r: Vec<f64>,
    pub dgl: Vec<f64>,
    pub dgr: Vec<f64>,
    pub ddgl: Vec<f64>,
    pub ddgr: Vec<f64>,
    /// `max(|dgl|, |dgr|) (t + eps)^(1 - alpha)`.
    pub velocity_envelope: Vec<f64>,
    /// `max(|ddgl|, |ddgr|) (t + eps)^(2 - alpha)`.
    pub acceleration_envelope: Vec<f64>,
}

pub fn free_boundaries(f: &FlowField) -> BoundaryHistory {
    let t = f.grid.t.clone();
    let (eps, a) = (f.grid.eps, f.grid.alpha);
    let gamma_l = f.column(0);
    let gamma_r = f.column(f.ny());
    let dgl = stencil::derivative(&t, &gamma_l);
    let dgr = stencil::derivative(&t, &gamma_r);
    let ddgl = stencil::second_derivative(&t, &gamma_l);
    let ddgr = stencil::second_derivative(&t, &gamma_r);
    let velocity_envelope = (0..t.len())
        .map(|i| dgl[i].abs().max(dgr[i].abs()) * (t[i] + eps).powf(1.0 - a))
        .collect();
    let acceleration_envelope = (0..t.len())
        .map(|i| ddgl[i].abs().max(ddgr[i].abs()) * (t[i] + eps).powf(2.0 - a))
        .collect();
    BoundaryHistory { t, gamma_l, gamma_r, dgl, dgr, ddgl, ddgr, velocity_envelope, acceleration_envelope }
}

/// Which characteristic construction applies on one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtensionCase {
    /// The boundary speed changes sign at `t_star`: four regions, constant
    /// value below the turning point.
    Turning { t_star: f64 },
    /// The boundary moves outward throughout: tangent at `T` bounds the fan.
    Outward,
    /// The boundary moves inward throughout: tangent at `0` bounds the fan.
    Inward,
}

/// Left-side construction in the frame where the boundary is convex.
///
/// The boundary speed `q` is interpolated linearly between nodes, the boundary
/// position `G` is its exact antiderivative anchored at `T`, and the boundary
/// value `U` solves `U' = -q^2 / 2` exactly, anchored at the terminal value.
/// With these choices the extension solves `-u_t + u_x^2 / 2 = 0` exactly.
#[derive(Debug, Clone)]
struct Side {
    t: Vec<f64>,
    q: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    case: ExtensionCase,
}

impl Side {
    fn new(t: &[f64], q: Vec<f64>, g_terminal: f64, u_terminal: f64) -> Result<Self> {
        let n = t.len();
        if let Some(i) = q.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::CrossingCharacteristics(format!(
                "free boundary is not convex near t = {:.6e}",
                t[i]
            )));
        }
        let mut g = vec![0.0; n];
        let mut u = vec![0.0; n];
        g[n - 1] = g_terminal;
        u[n - 1] = u_terminal;
        for i in (0..n - 1).rev() {
            let dt = t[i + 1] - t[i];
            g[i] = g[i + 1] - 0.5 * dt * (q[i] + q[i + 1]);
            u[i] = u[i + 1] + dt * (q[i] * q[i] + q[i] * q[i + 1] + q[i + 1] * q[i + 1]) / 6.0;
        }
        let case = if q[n - 1] <= 0.0 {
            ExtensionCase::Outward
        } else if q[0] >= 0.0 {
            ExtensionCase::Inward
        } else {
            let k = q.partition_point(|&v| v < 0.0) - 1;
            let t_star = t[k] - q[k] * (t[k + 1] - t[k]) / (q[k + 1] - q[k]);
            ExtensionCase::Turning { t_star }
        };
        Ok(Side { t: t.to_vec(), q, g, u, case })
    }

    fn cell(&self, s: f64) -> usize {
        self.t.partition_point(|&v| v <= s).clamp(1, self.t.len() - 1) - 1
    }

    fn speed(&self, s: f64) -> f64 {
        let k = self.cell(s);
        let r = (s - self.t[k]) / (self.t[k + 1] - self.t[k]);
        self.q[k] + r * (self.q[k + 1] - self.q[k])
    }

    fn position(&self, s: f64) -> f64 {
        let k = self.cell(s);
        let dt = self.t[k + 1] - self.t[k];
        let d = s - self.t[k];
        self.g[k] + d * self.q[k] + 0.5 * d * d * (self.q[k + 1] - self.q[k]) / dt
    }

    fn value(&self, s: f64) -> f64 {
        // U(s) = U_{k+1} + int_s^{t_{k+1}} q^2 / 2 with q linear on the cell.
        let k = self.cell(s);
        let qs = self.speed(s);
        let q1 = self.q[k + 1];
        let d = self.t[k + 1] - s;
        self.u[k + 1] + d * (qs * qs + qs * q1 + q1 * q1) / 6.0
    }

    /// Tangent line of the boundary at `t1`, evaluated at time `s`.
    fn tangent(&self, t1: f64, s: f64) -> f64 {
        self.position(t1) + (s - t1) * self.speed(t1)
    }

    /// `t1` between `lo` and `hi` with `tangent(t1, s) = x`, by bisection.
    fn foot(&self, s: f64, x: f64, lo: f64, hi: f64) -> f64 {
        let f_lo = self.tangent(lo, s) - x;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = self.tangent(mid, s) - x;
            if (fm > 0.0) == (f_lo > 0.0) {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    fn along(&self, t1: f64, s: f64) -> (f64, f64) {
        let q = self.speed(t1);
        (self.value(t1) + 0.5 * q * q * (t1 - s), -q)
    }

    /// `(u, u_x)` at `(s, x)` with `x` left of the boundary.
    fn eval(&self, s: f64, x: f64) -> (f64, f64) {
        let t_end = *self.t.last().unwrap();
        if x >= self.position(s) {
            return (self.value(s), -self.speed(s));
        }
        match self.case {
            ExtensionCase::Turning { t_star } => {
                if x <= self.position(t_star) {
                    (self.value(t_star), 0.0)
                } else if s <= t_star {
                    self.along(self.foot(s, x, s, t_star), s)
                } else {
                    self.along(self.foot(s, x, t_star, s), s)
                }
            }
            ExtensionCase::Outward => {
                let edge = self.tangent(t_end, s);
                if x >= edge {
                    self.along(self.foot(s, x, s, t_end), s)
                } else {
                    let (ue, _) = self.along(t_end, s);
                    let q = self.speed(t_end);
                    ((edge - x) * q + ue, -q)
                }
            }
            ExtensionCase::Inward => {
                let t0 = self.t[0];
                let edge = self.tangent(t0, s);
                if x >= edge {
                    self.along(self.foot(s, x, t0, s), s)
                } else {
                    let (ue, _) = self.along(t0, s);
                    let q = self.speed(t0);
                    ((edge - x) * q + ue, -q)
                }
            }
        }
    }
}

/// Value function outside the support, built from the free-boundary histories.
#[derive(Debug, Clone)]
pub struct Extension {
    left: Side,
    right: Side,
}

impl Extension {
    pub fn left_case(&self) -> ExtensionCase {
        self.left.case
    }

    pub fn right_case(&self) -> ExtensionCase {
        self.right.case
    }

    /// Boundary position used by the construction (left, right).
    pub fn boundary(&self, t: f64) -> (f64, f64) {
        (self.left.position(t), -self.right.position(t))
    }

    /// `(u, u_x)` at `(t, x)`; inside the support this returns the boundary
    /// value of the nearer side and is not meaningful.
    pub fn eval(&self, t: f64, x: f64) -> (f64, f64) {
        let (l, r) = self.boundary(t);
        if x <= l {
            self.left.eval(t, x)
        } else if x >= r {
            let (u, ux) = self.right.eval(t, -x);
            (u, -ux)
        } else if x - l < r - x {
            self.left.eval(t, l)
        } else {
            let (u, ux) = self.right.eval(t, -r);
            (u, -ux)
        }
    }

    /// Largest gap between the construction's boundary value and the
    /// Lagrangian value at the free boundary.
    pub fn boundary_mismatch(&self, v: &ValueField) -> f64 {
        let ny = v.ny;
        (0..self.left.t.len())
            .map(|i| (self.left.u[i] - v.at(i, 0)).abs().max((self.right.u[i] - v.at(i, ny)).abs()))
            .fold(0.0, f64::max)
    }
}

/// Characteristic extension of `u` outside the support.
pub fn extend_value(f: &FlowField, boundary: &BoundaryHistory, v: &ValueField) -> Result<Extension> {
    let nt = f.nt();
    let left = Side::new(&boundary.t, boundary.dgl.clone(), boundary.gamma_l[nt], v.at(nt, 0))?;
    let right = Side::new(
        &boundary.t,
        boundary.dgr.iter().map(|q| -q).collect(),
        -boundary.gamma_r[nt],
        v.at(nt, v.ny),
    )?;
    Ok(Extension { left, right })
}

/// Full snapshot at time node `i` with `pad` exterior nodes per side spanning
/// half the support width.
pub fn snapshot(f: &FlowField, v: &ValueField, ext: &Extension, i: usize, pad: usize) -> Result<EulerianSnapshot> {
    let (xs, ms) = density(f, i)?;
    let ux = velocity(f, i);
    let t = f.grid.t[i];
    let (gl, gr) = (xs[0], xs[xs.len() - 1]);
    let width = 0.5 * (gr - gl);
    let mut x = Vec::new();
    let mut m = Vec::new();
    let mut u = Vec::new();
    let mut uxs = Vec::new();
    for k in (1..=pad).rev() {
        let xv = gl - width * k as f64 / pad as f64;
        let (a, b) = ext.eval(t, xv);
        x.push(xv);
        m.push(0.0);
        u.push(a);
        uxs.push(b);
    }
    let start = x.len();
    for j in 0..xs.len() {
        x.push(xs[j]);
        m.push(ms[j]);
        u.push(v.at(i, j));
        uxs.push(ux[j]);
    }
    let end = x.len();
    for k in 1..=pad {
        let xv = gr + width * k as f64 / pad as f64;
        let (a, b) = ext.eval(t, xv);
        x.push(xv);
        m.push(0.0);
        u.push(a);
        uxs.push(b);
    }
    Ok(EulerianSnapshot { t, x, m, u, u_x: uxs, gamma_l: gl, gamma_r: gr, support: start..end })
}

/// Mass of the pushforward of `phi` restricted to the label cell `[ya, yb]`
/// under the linear map onto `[xa, xb]`, integrated in `x`. `at_left` and
/// `at_right` mark cells touching the edges of the profile support, where
/// `phi` is evaluated from the endpoint distance.
pub(crate) fn image_cell_mass(p: &Profile, ya: f64, yb: f64, xa: f64, xb: f64, at_left: bool, at_right: bool) -> f64 {
    let s = (xb - xa) / (yb - ya);
    quad::integrate_dist(
        |_, dl, dr| {
            let (ly, ry) = (dl / s, dr / s);
            let phi = if at_left && ly <= ry {
                (p.coef() * ly * (2.0 * p.r_alpha - ly)).powf(1.0 / p.theta)
            } else if at_right && ry < ly {
                (p.coef() * ry * (2.0 * p.r_alpha - ry)).powf(1.0 / p.theta)
            } else {
                p.phi(if ly <= ry { ya + ly } else { yb - ry })
            };
            phi / s
        },
        xa,
        xb,
    )
}

/// Mass of the reconstructed density at every slice, integrated in `x` over
/// the image cells with `m = phi(y(x)) / gamma_y` on each cell.
pub fn slice_masses(f: &FlowField, p: &Profile) -> Vec<f64> {
    let y = f.grid.y();
    let n = y.len();
    (0..=f.nt())
        .map(|i| {
            let row = f.row(i);
            (0..n - 1)
                .map(|k| image_cell_mass(p, y[k], y[k + 1], row[k], row[k + 1], k == 0, k + 2 == n))
                .sum()
        })
        .collect()
}

/// Residual of `-u_t + u_x^2 / 2 - m^theta` at interior support nodes, with
/// `u_x = ubar_y / gamma_y` and `u_t = ubar_t - gamma_t u_x`. Each entry is
/// scaled by `(t + eps)^(2 - 2 alpha)`, the natural size of the terms.
pub fn hj_residual_interior(f: &FlowField, p: &Profile, v: &ValueField) -> Vec<Vec<f64>> {
    let (nt, ny) = (f.nt(), f.ny());
    let g = &f.grid;
    let y = g.y();
    let gt = time_derivative(f);
    let m = ny + 1;
    let mut out = Vec::new();
    for i in 1..nt {
        let w = stencil::first_central(g.t[i] - g.t[i - 1], g.t[i + 1] - g.t[i]);
        let scale = (g.t[i] + g.eps).powf(2.0 - 2.0 * p.alpha);
        let gy = label_slope(f, i);
        let uy = stencil::derivative(y, v.row(i));
        let mut row = Vec::with_capacity(ny.saturating_sub(1));
        for j in 1..ny {
            let ubar_t = w[0] * v.at(i - 1, j) + w[1] * v.at(i, j) + w[2] * v.at(i + 1, j);
            let ux = uy[j] / gy[j];
            let ut = ubar_t - gt[i * m + j] * ux;
            let mth = p.phi_theta(y[j]) / gy[j].powf(p.theta);
            row.push(scale * (-ut + 0.5 * ux * ux - mth));
        }
        out.push(row);
    }
    out
}

/// Exterior HJ residual `-u_t + u_x^2 / 2` of the extension by central
/// differences at `pad` points per side and interior time nodes, scaled by
/// `(t + eps)^(2 - 2 alpha)`.
pub fn hj_residual_exterior(f: &FlowField, ext: &Extension, pad: usize) -> Vec<f64> {
    let g = &f.grid;
    let mut out = Vec::new();
    for i in 1..g.nt() {
        let t = g.t[i];
        let (l, r) = ext.boundary(t);
        let width = 0.5 * (r - l);
        let dt = 1e-6 * (t + g.eps).min(g.t[i + 1] - t);
        let dx = 1e-6 * width;
        let scale = (t + g.eps).powf(2.0 - 2.0 * g.alpha);
        for k in 1..=pad {
            for x in [l - width * k as f64 / pad as f64, r + width * k as f64 / pad as f64] {
                let ut = (ext.eval(t + dt, x).0 - ext.eval(t - dt, x).0) / (2.0 * dt);
                let ux = (ext.eval(t, x + dx).0 - ext.eval(t, x - dx).0) / (2.0 * dx);
                out.push(scale * (-ut + 0.5 * ux * ux));
            }
        }
    }
    out
}

fn bump(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - z * z).powi(4)
    }
}

fn bump_dz(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        -8.0 * z * (1.0 - z * z).powi(3)
    }
}

/// Smooth compactly supported test function `b((t - tc)/tw) b((x - xc)/xw)`.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub tc: f64,
    pub tw: f64,
    pub xc: f64,
    pub xw: f64,
}

impl TestFunction {
    fn dt(&self, t: f64, x: f64) -> f64 {
        bump_dz((t - self.tc) / self.tw) / self.tw * bump((x - self.xc) / self.xw)
    }

    fn dx(&self, t: f64, x: f64) -> f64 {
        bump((t - self.tc) / self.tw) * bump_dz((x - self.xc) / self.xw) / self.xw
    }
}

/// Twenty test functions: four time windows inside `[0.05 T, 0.9 T]` times
/// five spatial centers across the terminal support.
pub fn default_test_functions(f: &FlowField) -> Vec<TestFunction> {
    let t_final = f.grid.t_final;
    let (a, b) = (f.at(f.nt(), 0), f.at(f.nt(), f.ny()));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let windows = [(0.05, 0.3), (0.15, 0.5), (0.3, 0.7), (0.5, 0.9)];
    let mut out = Vec::new();
    for (lo, hi) in windows {
        for k in 0..5 {
            let xc = mid + half * (-0.8 + 0.4 * k as f64);
            out.push(TestFunction {
                tc: 0.5 * (lo + hi) * t_final,
                tw: 0.5 * (hi - lo) * t_final,
                xc,
                xw: 0.6 * half,
            });
        }
    }
    out
}

/// Weak continuity residual `int int phi(y) [psi_t + gamma_t psi_x](t, gamma) dy dt`
/// for each test function; it vanishes for a flow transporting `phi`.
pub fn weak_continuity_residual(f: &FlowField, tests: &[TestFunction]) -> Vec<f64> {
    let g = &f.grid;
    let gt = time_derivative(f);
    let (nt, m) = (f.nt(), f.ny() + 1);
    let w = &g.labels.lumped;
    tests
        .iter()
        .map(|psi| {
            let inner = |i: usize| -> f64 {
                (0..m)
                    .map(|j| {
                        let x = f.at(i, j);
                        w[j] * (psi.dt(g.t[i], x) + gt[i * m + j] * psi.dx(g.t[i], x))
                    })
                    .sum()
            };
            let vals: Vec<f64> = (0..=nt).map(inner).collect();
            (0..nt).map(|i| 0.5 * (vals[i] + vals[i + 1]) * (g.t[i + 1] - g.t[i])).sum()
        })
        .collect()
}

/// Per-slice scalar quantities used by the rate fits.
#[derive(Debug, Clone, Default)]
pub struct EulerianSeries {
    pub t: Vec<f64>,
    pub support_radius: Vec<f64>,
    pub m_max: Vec<f64>,
    /// `int m^(theta+1) dx`.
    pub m_pow: Vec<f64>,
    pub osc_u: Vec<f64>,
    pub ux_max: Vec<f64>,
    /// `d_1(m(t), delta_0) = int |x| m dx`.
    pub d1_dirac: Vec<f64>,
}

pub fn eulerian_series(f: &FlowField, p: &Profile, v: &ValueField) -> Result<EulerianSeries> {
    let g = &f.grid;
    let lab = &g.labels;
    let mut s = EulerianSeries::default();
    for i in 0..=f.nt() {
        let row = f.row(i);
        let (_, m) = density(f, i)?;
        let ux = velocity(f, i);
        s.t.push(g.t[i]);
        s.support_radius.push(row[0].abs().max(row[row.len() - 1].abs()));
        s.m_max.push(m.iter().copied().fold(0.0, f64::max));
        let pw: f64 = (0..row.len() - 1)
            .map(|k| lab.pot[k] * ((row[k + 1] - row[k]) / lab.h).powf(-p.theta))
            .sum();
        s.m_pow.push(pw);
        let ur = v.row(i);
        let (lo, hi) = ur.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
        s.osc_u.push(hi - lo);
        s.ux_max.push(ux.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        s.d1_dirac.push(d1_to_dirac(row, lab, p));
    }
    Ok(s)
}

/// `int |g(y)| phi dy` with `g` piecewise linear on the label cells.
pub(crate) fn d1_to_dirac(row: &[f64], lab: &crate::profile::LabelGrid, p: &Profile) -> f64 {
    // Where g keeps its sign |g| is linear and the P1 weights are exact;
    // cells where it changes sign are split at the zero.
    let y = &lab.y;
    let mut total = 0.0;
    for k in 0..row.len() - 1 {
        let (a, b) = (row[k], row[k + 1]);
        let (w0, w1) = (lab.hat_left[k], lab.hat_right[k]);
        if a >= 0.0 && b >= 0.0 {
            total += a * w0 + b * w1;
        } else if a <= 0.0 && b <= 0.0 {
            total -= a * w0 + b * w1;
        } else {
            let (ya, yb) = (y[k], y[k + 1]);
            let yc = ya + (yb - ya) * a / (a - b);
            let g = |s: f64| (a + (b - a) * (s - ya) / (yb - ya)).abs();
            total += p.integrate_weighted(1.0, ya, yc, g) + p.integrate_weighted(1.0, yc, yb, g);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, SolverConfig, SpaceTimeGrid};

    fn exact(theta: f64, eps: f64, n: usize) -> (Profile, FlowField) {
        let p = Profile::new(theta).unwrap();
        let g = SpaceTimeGrid::new(&p, eps, 1.0, n, n).unwrap();
        (p, FlowField::self_similar(g))
    }

    #[test]
    fn density_of_exact_field() {
        let (p, f) = exact(1.0, 1e-2, 64);
        for i in [0, 10, 40, 64] {
            let (x, m) = density(&f, i).unwrap();
            let l = f.grid.t[i] + f.grid.eps;
            for j in 0..x.len() {
                let want = p.self_similar_density(l, x[j]).unwrap();
                assert!((m[j] - want).abs() < 1e-12 * (1.0 + want), "i={i} j={j}");
            }
        }
    }

    #[test]
    fn velocity_of_exact_field() {
        let (p, f) = exact(1.0, 1e-2, 128);
        for i in [1, 30, 64, 127] {
            let ux = velocity(&f, i);
            let l = f.grid.t[i] + f.grid.eps;
            for j in 0..=f.ny() {
                let x = f.at(i, j);
                let want = -p.alpha * x / l;
                assert!((ux[j] - want).abs() < 2e-3 * l.powf(p.alpha - 1.0), "i={i} j={j}");
            }
            assert!(ux[f.ny() / 2].abs() < 1e-12);
        }
    }

    #[test]
    fn value_of_exact_field_matches_oracle() {
        let (p, f) = exact(1.0, 1e-3, 128);
        let m = TerminalDensity::self_similar(&p, 1.0, 1e-3).unwrap();
        let v = value_on_support(&f, &p, &m).unwrap();
        assert!(terminal_pairing(&f, &v).abs() < 1e-10);
        let c = p.value_constant().unwrap();
        let e = 1e-3;
        let nt = f.nt();
        let j0 = f.ny() / 2;
        for i in [0, 20, 64, 100] {
            let got = v.at(i, j0) - v.at(nt, j0);
            let want = -c * ((f.grid.t[i] + e).powf(2.0 * p.alpha - 1.0) - (1.0 + e).powf(2.0 * p.alpha - 1.0));
            assert!((got - want).abs() < 1e-3, "i={i} got={got} want={want}");
        }
    }

    #[test]
    fn boundaries_of_exact_field() {
        let (p, f) = exact(1.0, 1e-2, 64);
        let b = free_boundaries(&f);
        for i in 1..64 {
            let l = f.grid.t[i] + f.grid.eps;
            assert!((b.gamma_r[i] - p.r_alpha * l.powf(p.alpha)).abs() < 1e-12);
            assert!(b.ddgr[i] < 0.0 && b.ddgl[i] > 0.0);
        }
    }

    #[test]
    fn masses_are_one() {
        let (p, f) = exact(3.0, 1e-3, 32);
        for m in slice_masses(&f, &p) {
            assert!((m - 1.0).abs() < 1e-10, "{m}");
        }
    }

    #[test]
    fn extension_solves_exterior_hj_and_is_continuous() {
        for (a, b) in [(-1.0, 1.0), (-3.0, -2.0), (0.2, 0.6)] {
            let p = Profile::new(1.0).unwrap();
            let g = SpaceTimeGrid::new(&p, 1e-2, 1.0, 48, 32).unwrap();
            let m = TerminalDensity::power_bump(a, b, 1.0).unwrap();
            let (f, _) = solve(&p, &m, &g, &SolverConfig::default()).unwrap();
            let v = value_on_support(&f, &p, &m).unwrap();
            let bh = free_boundaries(&f);
            let ext = extend_value(&f, &bh, &v).unwrap();
            let r = hj_residual_exterior(&f, &ext, 8);
            let sup = r.iter().fold(0.0f64, |x, y| x.max(y.abs()));
            assert!(sup < 1e-5, "[{a},{b}] sup={sup}");
            // boundary values of the two constructions drift apart at second order
            let bm = ext.boundary_mismatch(&v);
            let g2 = SpaceTimeGrid::new(&p, 1e-2, 1.0, 96, 32).unwrap();
            let g4 = SpaceTimeGrid::new(&p, 1e-2, 1.0, 192, 32).unwrap();
            let drift = |g: &SpaceTimeGrid| {
                let (f, _) = solve(&p, &m, g, &SolverConfig::default()).unwrap();
                let v = value_on_support(&f, &p, &m).unwrap();
                extend_value(&f, &free_boundaries(&f), &v).unwrap().boundary_mismatch(&v)
            };
            let (bm2, bm4) = (drift(&g2), drift(&g4));
            assert!(bm < 2.5e-2 && bm2 / bm4 > 3.0, "[{a},{b}] mismatch {bm} {bm2} {bm4}");
            // C^1 matching across the boundary; the foot point moves like the
            // square root of the distance, so probe very close
            let t = f.grid.t[20];
            let (l, _) = ext.boundary(t);
            let (u_in, ux_in) = ext.eval(t, l);
            let (u_out, ux_out) = ext.eval(t, l - 1e-10 * (1.0 + l.abs()));
            assert!((u_in - u_out).abs() < 1e-5 && (ux_in - ux_out).abs() < 1e-3);
        }
    }

    #[test]
    fn extension_cases() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let s = Side::new(&t, t.iter().map(|v| v - 0.5).collect(), 0.0, 0.0).unwrap();
        assert!(matches!(s.case, ExtensionCase::Turning { t_star } if (t_star - 0.5).abs() < 1e-12));
        // below the turning point the value is exactly constant
        let low = s.position(0.5) - 1.0;
        assert_eq!(s.eval(0.1, low).0, s.eval(0.9, low - 3.0).0);
        let s = Side::new(&t, t.iter().map(|v| v - 2.0).collect(), 0.0, 0.0).unwrap();
        assert_eq!(s.case, ExtensionCase::Outward);
        let s = Side::new(&t, t.iter().map(|v| v + 1.0).collect(), 0.0, 0.0).unwrap();
        assert_eq!(s.case, ExtensionCase::Inward);
        let bad = Side::new(&t, t.iter().map(|v| -v).collect(), 0.0, 0.0);
        assert!(matches!(bad, Err(Error::CrossingCharacteristics(_))));
    }

    #[test]
    fn weak_residual_small_on_exact_field() {
        let (_, f) = exact(1.0, 1e-3, 128);
        let tests = default_test_functions(&f);
        assert_eq!(tests.len(), 20);
        for r in weak_continuity_residual(&f, &tests) {
            assert!(r.abs() < 1e-3, "{r}");
        }
    }
}
