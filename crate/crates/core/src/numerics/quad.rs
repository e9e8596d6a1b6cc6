//! Double-exponential (tanh-sinh) quadrature.
//!
//! The integrands in this crate are powers of the profile, which carry
//! algebraic endpoint singularities of the form `d^(1/theta)` or
//! `d^((1-theta)/theta)`. Tanh-sinh converges exponentially for those, so a
//! single fixed rule is used everywhere instead of an adaptive scheme.

use std::sync::OnceLock;

/// Abscissae are stored as the distance from the nearest endpoint, expressed as
/// a fraction of the interval length, so that points close to a singular
/// endpoint keep full relative precision.
struct Rule {
    center_weight: f64,
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

const STEP: f64 = 1.0 / 32.0;

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut k = 1usize;
        loop {
            let t = k as f64 * STEP;
            let u = half_pi * t.sinh();
            let cosh_u = u.cosh();
            let w = STEP * half_pi * t.cosh() / (cosh_u * cosh_u);
            // (1 - tanh u) / 2 without cancellation.
            let offset = 1.0 / ((2.0 * u).exp() + 1.0);
            if !(w > 1e-300) || !(offset > 0.0) || offset < 1e-300 {
                break;
            }
            offsets.push(offset);
            weights.push(w);
            k += 1;
        }
        Rule { center_weight: STEP * half_pi, offsets, weights }
    })
}

/// Integrate `f` over `[a, b]`. The integrand is never evaluated at the endpoints.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    integrate_dist(|x, _, _| f(x), a, b)
}

/// Like [`integrate`], but `f(x, x - a, b - x)` also receives the distances to
/// both endpoints, computed without cancellation near the nearer one.
pub fn integrate_dist<F: FnMut(f64, f64, f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let r = rule();
    let len = b - a;
    let half = 0.5 * len;
    let mut sum = r.center_weight * f(a + half, half, half);
    for (&off, &w) in r.offsets.iter().zip(&r.weights) {
        let d = len * off;
        let far = len - d;
        let left = f(a + d, d, far);
        let right = f(b - d, far, d);
        sum += w * (left + right);
    }
    sum * half
}

/// Integrate over consecutive panels `edges[k]..edges[k+1]` and sum.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, edges: &[f64]) -> f64 {
    edges.windows(2).map(|w| integrate(&mut f, w[0], w[1])).sum()
}

/// Fixed Gauss-Legendre rule on `[a, b]` for smooth integrands.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    // 8-point nodes and weights on [-1, 1].
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in X.iter().zip(W.iter()) {
        s += w * (f(c - h * x) + f(c + h * x));
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0);
        assert!((v - 8.0).abs() < 1e-14, "{v}");
        let g = gauss_legendre(|x| x.powi(7) - x.powi(3), -1.0, 2.0);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (16.0 - 1.0) / 4.0;
        assert!((g - exact).abs() < 1e-12);
    }

    #[test]
    fn endpoint_singularities() {
        // int_0^1 x^(-2/3) dx = 3
        let v = integrate(|x| x.powf(-2.0 / 3.0), 0.0, 1.0);
        assert!((v - 3.0).abs() < 1e-12, "{v}");
        // int_{-1}^{1} sqrt(1-x^2) = pi/2
        let v = integrate(|x| (1.0 - x * x).max(0.0).sqrt(), -1.0, 1.0);
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-14, "{v}");
    }

    #[test]
    fn distances_resolve_tiny_offsets() {
        // int_1^2 (2-x)^(-1/2) = 2, evaluated through the exact right distance.
        let v = integrate_dist(|_, _, dr| dr.powf(-0.5), 1.0, 2.0);
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn reversed_interval_changes_sign() {
        let f = |x: f64| x.exp();
        let a = integrate(f, 0.0, 1.0);
        let b = integrate(f, 1.0, 0.0);
        assert!((a + b).abs() < 1e-14);
    }
}
