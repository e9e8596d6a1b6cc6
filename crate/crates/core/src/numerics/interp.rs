//! Interpolants: monotone piecewise-cubic Hermite (Fritsch-Carlson) and local
//! four-point Lagrange.

/// Shape-preserving cubic Hermite interpolant through monotone data.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing with at least two nodes.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Self { x, y, d };
        }
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] <= 0.0 {
                d[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Self { x, y, d }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    /// Index of the interval containing `t`, clamped to the table.
    pub fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        let k = self.x.partition_point(|&v| v <= t);
        k.clamp(1, n - 1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= 0.0 {
        0.0
    } else if del0 * del1 <= 0.0 && d.abs() > (3.0 * del0).abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Four-point Lagrange interpolation on the cell of a sorted node table that
/// contains `t`, using the nearest four nodes.
pub fn lagrange4(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    debug_assert!(n >= 4);
    let k = x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
    let start = k.saturating_sub(1).min(n - 4);
    let xs = &x[start..start + 4];
    let ys = &y[start..start + 4];
    let mut acc = 0.0;
    for i in 0..4 {
        let mut l = 1.0;
        for j in 0..4 {
            if i != j {
                l *= (t - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += l * ys[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pchip_interpolates_and_stays_monotone() {
        let x: Vec<f64> = (0..20).map(|k| (k as f64 / 19.0).powi(2)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        let p = Pchip::new(x.clone(), y.clone());
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-14);
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let v = p.eval(k as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lagrange_reproduces_cubics() {
        let x: Vec<f64> = vec![0.0, 0.3, 0.5, 1.1, 1.2, 2.0];
        let f = |t: f64| t * t * t - 2.0 * t + 0.5;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        for t in [0.01, 0.4, 0.77, 1.15, 1.9] {
            assert!((lagrange4(&x, &y, t) - f(t)).abs() < 1e-12);
        }
    }
}
