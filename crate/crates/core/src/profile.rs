//! The self-similar profile `phi` and the exact self-similar solution family.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::numerics::quad;

const CDF_PANELS: usize = 256;

/// Self-similar profile for congestion exponent `theta`.
///
/// `phi(y)^theta = c (R^2 - y^2)_+` with `c = alpha (1 - alpha) / 2`, and `R`
/// fixed by unit mass.
#[derive(Debug, Clone)]
pub struct Profile {
    pub theta: f64,
    pub alpha: f64,
    pub r_alpha: f64,
    pub kappa: f64,
    coef: f64,
    /// Left-half CDF at panel edges `-R + k R / CDF_PANELS`, `k = 0..=CDF_PANELS`.
    cdf_edges: Arc<Vec<f64>>,
    moment_pow: f64,
    moment_sq: f64,
}

/// Radius from the Beta-integral closed form.
fn radius_closed_form(theta: f64, coef: f64) -> f64 {
    let inv = 1.0 / theta;
    let beta = PI.sqrt() * (ln_gamma(inv + 1.0) - ln_gamma(inv + 1.5)).exp();
    // R^(1 + 2/theta) c^(1/theta) B = 1
    (-(inv * coef.ln() + beta.ln()) / (1.0 + 2.0 * inv)).exp()
}

fn profile_mass(theta: f64, coef: f64, r: f64) -> f64 {
    let inv = 1.0 / theta;
    // Integrate over [-R, 0] using the exact distance from -R.
    let half = quad::integrate_dist(|_, dl, _| (coef * dl * (2.0 * r - dl)).powf(inv), -r, 0.0);
    2.0 * half
}

fn radius_by_bisection(theta: f64, coef: f64) -> f64 {
    let mut lo = 1e-3;
    let mut hi = 1.0;
    while profile_mass(theta, coef, hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile_mass(theta, coef, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl Profile {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(invalid(format!("theta must be positive and finite, got {theta}")));
        }
        let alpha = 2.0 / (2.0 + theta);
        let coef = 0.5 * alpha * (1.0 - alpha);
        let r_alpha = radius_closed_form(theta, coef);
        let r_check = radius_by_bisection(theta, coef);
        if (r_alpha - r_check).abs() > 1e-10 * r_alpha.max(1.0) {
            return Err(Error::Internal(format!(
                "support radius mismatch: closed form {r_alpha}, quadrature {r_check}"
            )));
        }
        let mut p = Profile {
            theta,
            alpha,
            r_alpha,
            kappa: 1.0 - 2.0 * alpha,
            coef,
            cdf_edges: Arc::new(Vec::new()),
            moment_pow: 0.0,
            moment_sq: 0.0,
        };
        let h = r_alpha / CDF_PANELS as f64;
        let mut edges = Vec::with_capacity(CDF_PANELS + 1);
        let mut acc = 0.0;
        edges.push(0.0);
        for k in 0..CDF_PANELS {
            let a = -r_alpha + k as f64 * h;
            let b = if k + 1 == CDF_PANELS { 0.0 } else { a + h };
            acc += p.integrate_phi_pow(1.0, a, b);
            edges.push(acc);
        }
        p.cdf_edges = Arc::new(edges);
        p.moment_pow = 2.0 * p.integrate_phi_pow(theta + 1.0, -r_alpha, 0.0);
        p.moment_sq = 2.0 * quad::integrate_dist(
            |y, dl, _| y * y * p.phi_pow_from_left(dl, 1.0),
            -r_alpha,
            0.0,
        );
        Ok(p)
    }

    /// Coefficient `c = alpha (1 - alpha) / 2` of `phi^theta`.
    pub fn coef(&self) -> f64 {
        self.coef
    }

    /// `phi^theta(y)` from its polynomial form.
    pub fn phi_theta(&self, y: f64) -> f64 {
        let r = self.r_alpha;
        let ay = y.abs();
        if ay >= r {
            return 0.0;
        }
        self.coef * (r - ay) * (r + ay)
    }

    /// `(phi^theta)_y = -alpha (1 - alpha) y` on the support.
    pub fn phi_theta_dy(&self, y: f64) -> f64 {
        if y.abs() >= self.r_alpha {
            0.0
        } else {
            -2.0 * self.coef * y
        }
    }

    pub fn phi(&self, y: f64) -> f64 {
        let v = self.phi_theta(y);
        if v <= 0.0 {
            0.0
        } else {
            v.powf(1.0 / self.theta)
        }
    }

    /// `phi^p` at the point at distance `d` inside the left end of the support.
    fn phi_pow_from_left(&self, d: f64, p: f64) -> f64 {
        let d = d.min(2.0 * self.r_alpha);
        let v = self.coef * d * (2.0 * self.r_alpha - d);
        if v <= 0.0 {
            0.0
        } else {
            v.powf(p / self.theta)
        }
    }

    /// `phi^theta` at the point with distance `dl` from `a` and `dr` from `b`,
    /// choosing the representation that keeps relative accuracy at the
    /// nearer support endpoint.
    fn phi_theta_local(&self, x: f64, dl: f64, dr: f64, a: f64, b: f64) -> f64 {
        let r = self.r_alpha;
        if a == -r && dl <= dr {
            return self.coef * dl * (2.0 * r - dl);
        }
        if b == r && dr < dl {
            return self.coef * dr * (2.0 * r - dr);
        }
        self.phi_theta(x)
    }

    /// `int_a^b phi^p dy` for `[a, b]` inside the support.
    pub fn integrate_phi_pow(&self, p: f64, a: f64, b: f64) -> f64 {
        let e = p / self.theta;
        quad::integrate_dist(
            |x, dl, dr| {
                let v = self.phi_theta_local(x, dl, dr, a, b);
                if v <= 0.0 {
                    0.0
                } else {
                    v.powf(e)
                }
            },
            a,
            b,
        )
    }

    /// `int_a^b g(y) phi^p(y) dy` for `[a, b]` inside the support.
    pub fn integrate_weighted<G: FnMut(f64) -> f64>(&self, p: f64, a: f64, b: f64, mut g: G) -> f64 {
        let e = p / self.theta;
        quad::integrate_dist(
            |x, dl, dr| {
                let v = self.phi_theta_local(x, dl, dr, a, b);
                if v <= 0.0 {
                    0.0
                } else {
                    g(x) * v.powf(e)
                }
            },
            a,
            b,
        )
    }

    /// `int phi^(theta+1)` over the support.
    pub fn moment_pow(&self) -> f64 {
        self.moment_pow
    }

    /// `int y^2 phi` over the support.
    pub fn second_moment(&self) -> f64 {
        self.moment_sq
    }

    /// `int_a^x phi` inside cdf panel `k`; panels away from the edge are
    /// analytic and take the fixed Gauss rule.
    fn panel_integral(&self, k: usize, a: f64, x: f64) -> f64 {
        if k >= 2 {
            quad::gauss_legendre(|y| self.phi(y), a, x)
        } else {
            self.integrate_phi_pow(1.0, a, x)
        }
    }

    fn cdf_left(&self, r: f64) -> f64 {
        let rr = self.r_alpha;
        let h = rr / CDF_PANELS as f64;
        let k = (((r + rr) / h).floor() as usize).min(CDF_PANELS - 1);
        let a = -rr + k as f64 * h;
        self.cdf_edges[k] + self.panel_integral(k, a, r)
    }

    /// `Phi(r) = int_{-R}^r phi`.
    pub fn cdf(&self, r: f64) -> f64 {
        let rr = self.r_alpha;
        if r <= -rr {
            0.0
        } else if r >= rr {
            1.0
        } else if r > 0.0 {
            1.0 - self.cdf_left(-r)
        } else {
            self.cdf_left(r)
        }
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid(format!("quantile level {q} outside [0, 1]")));
        }
        let rr = self.r_alpha;
        if q == 0.0 {
            return Ok(-rr);
        }
        if q == 1.0 {
            return Ok(rr);
        }
        if q == 0.5 {
            return Ok(0.0);
        }
        if q > 0.5 {
            return Ok(-self.quantile_left(1.0 - q));
        }
        Ok(self.quantile_left(q))
    }

    fn quantile_left(&self, q: f64) -> f64 {
        let rr = self.r_alpha;
        let h = rr / CDF_PANELS as f64;
        let k = self.cdf_edges.partition_point(|&c| c <= q).clamp(1, CDF_PANELS) - 1;
        let mut lo = -rr + k as f64 * h;
        let mut hi = if k + 1 == CDF_PANELS { 0.0 } else { lo + h };
        let base = self.cdf_edges[k];
        let target = q - base;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.panel_integral(k, -rr + k as f64 * h, x) - target;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.phi(x);
            let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * rr || hi - lo <= 1e-15 * rr {
                return next;
            }
            x = next;
        }
        x
    }

    /// `t^(-alpha) phi(t^(-alpha) x)`.
    pub fn self_similar_density(&self, t: f64, x: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid(format!("time must be positive, got {t}")));
        }
        let s = t.powf(-self.alpha);
        Ok(s * self.phi(s * x))
    }

    /// Constant `C` in the self-similar value `-alpha x^2 / (2t) - C t^(2 alpha - 1)`.
    pub fn value_constant(&self) -> Result<f64> {
        if self.is_critical() {
            return Err(Error::UnsupportedParameter(
                "theta = 2: the self-similar value carries a logarithmic term".into(),
            ));
        }
        let a = self.alpha;
        Ok(a * (1.0 - a) * self.r_alpha.powi(2) / (2.0 * (2.0 * a - 1.0)))
    }

    pub fn self_similar_value(&self, t: f64, x: f64) -> Result<f64> {
        let c = self.value_constant()?;
        if !(t > 0.0) {
            return Err(invalid(format!("time must be positive, got {t}")));
        }
        let a = self.alpha;
        Ok(-a * x * x / (2.0 * t) - c * t.powf(2.0 * a - 1.0))
    }

    /// Self-similar value at `theta = 2`: `-x^2 / (4t) - c R^2 ln t`.
    pub fn self_similar_value_log(&self, t: f64, x: f64) -> Result<f64> {
        if !self.is_critical() {
            return Err(Error::UnsupportedParameter(
                "logarithmic value function applies only at theta = 2".into(),
            ));
        }
        if !(t > 0.0) {
            return Err(invalid(format!("time must be positive, got {t}")));
        }
        Ok(-x * x / (4.0 * t) - self.coef * self.r_alpha.powi(2) * t.ln())
    }

    /// Exact regularized flow `(t + eps)^alpha y`.
    pub fn self_similar_flow(&self, t: f64, eps: f64, y: f64) -> f64 {
        (t + eps).powf(self.alpha) * y
    }

    /// `theta = 2`, where `kappa = 0`.
    pub fn is_critical(&self) -> bool {
        self.kappa.abs() < 1e-14
    }
}

/// Profile-weighted integrals over the cells of a uniform label grid on
/// `[-R, R]`. These are the exact coefficients of the P1 discretization.
#[derive(Debug, Clone)]
pub struct LabelGrid {
    pub y: Vec<f64>,
    pub h: f64,
    /// `phi(y_j)`.
    pub phi: Vec<f64>,
    /// Consistent mass matrix `int phi hat_j hat_k`: diagonal.
    pub mass_diag: Vec<f64>,
    /// Consistent mass matrix: entry `(k, k+1)`.
    pub mass_off: Vec<f64>,
    /// `int_cell phi^(theta+1)`.
    pub pot: Vec<f64>,
    /// `int_cell phi^(1-theta)`.
    pub recip: Vec<f64>,
    /// `int phi hat_j`.
    pub lumped: Vec<f64>,
    /// `int_cell phi`.
    pub cell_mass: Vec<f64>,
    /// `int_cell phi (1 - xi)` and `int_cell phi xi`, `xi` the local coordinate.
    pub hat_left: Vec<f64>,
    pub hat_right: Vec<f64>,
}

impl LabelGrid {
    pub fn new(p: &Profile, ny: usize) -> Result<Self> {
        if ny < 2 {
            return Err(invalid("label grid needs at least two cells"));
        }
        let r = p.r_alpha;
        let h = 2.0 * r / ny as f64;
        let mut y: Vec<f64> = (0..=ny).map(|j| -r + j as f64 * h).collect();
        y[ny] = r;
        for j in 0..=ny / 2 {
            let v = 0.5 * (y[ny - j] - y[j]);
            y[j] = -v;
            y[ny - j] = v;
        }
        if ny % 2 == 0 {
            y[ny / 2] = 0.0;
        }
        let mut m00 = vec![0.0; ny];
        let mut m01 = vec![0.0; ny];
        let mut m11 = vec![0.0; ny];
        let mut pot = vec![0.0; ny];
        let mut recip = vec![0.0; ny];
        let mut cell_mass = vec![0.0; ny];
        // Left half plus the middle cell; the rest is mirrored.
        for k in 0..ny.div_ceil(2) {
            let (a, b) = (y[k], y[k + 1]);
            let len = b - a;
            m00[k] = p.integrate_weighted(1.0, a, b, |x| ((b - x) / len).powi(2));
            m01[k] = p.integrate_weighted(1.0, a, b, |x| (x - a) * (b - x) / (len * len));
            m11[k] = p.integrate_weighted(1.0, a, b, |x| ((x - a) / len).powi(2));
            pot[k] = p.integrate_phi_pow(p.theta + 1.0, a, b);
            recip[k] = p.integrate_phi_pow(1.0 - p.theta, a, b);
            cell_mass[k] = p.integrate_phi_pow(1.0, a, b);
            let m = ny - 1 - k;
            if m != k {
                m00[m] = m11[k];
                m11[m] = m00[k];
                m01[m] = m01[k];
                pot[m] = pot[k];
                recip[m] = recip[k];
                cell_mass[m] = cell_mass[k];
            }
        }
        let mut mass_diag = vec![0.0; ny + 1];
        let mut lumped = vec![0.0; ny + 1];
        for k in 0..ny {
            mass_diag[k] += m00[k];
            mass_diag[k + 1] += m11[k];
            lumped[k] += m00[k] + m01[k];
            lumped[k + 1] += m11[k] + m01[k];
        }
        let phi = y.iter().map(|&v| p.phi(v)).collect();
        let hat_left = (0..ny).map(|k| m00[k] + m01[k]).collect();
        let hat_right = (0..ny).map(|k| m11[k] + m01[k]).collect();
        Ok(LabelGrid { y, h, phi, mass_diag, mass_off: m01, pot, recip, lumped, cell_mass, hat_left, hat_right })
    }

    pub fn ny(&self) -> usize {
        self.y.len() - 1
    }

    /// `x^T M z` with the consistent mass matrix.
    pub fn mass_inner(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..x.len() {
            s += self.mass_diag[j] * x[j] * z[j];
        }
        for k in 0..self.mass_off.len() {
            s += self.mass_off[k] * (x[k] * z[k + 1] + x[k + 1] * z[k]);
        }
        s
    }

    /// `M x` into `out`, added with factor `scale`.
    pub fn mass_apply_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] += scale * self.mass_diag[j] * x[j];
        }
        for k in 0..self.mass_off.len() {
            out[k] += scale * self.mass_off[k] * x[k + 1];
            out[k + 1] += scale * self.mass_off[k] * x[k];
        }
    }
}
