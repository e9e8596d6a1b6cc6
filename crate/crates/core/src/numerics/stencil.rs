//! Three-point finite-difference stencils on nonuniform grids.

/// Weights `(w0, w1, w2)` for the first derivative at the middle node.
pub fn first_central(h0: f64, h1: f64) -> [f64; 3] {
    [
        -h1 / (h0 * (h0 + h1)),
        (h1 - h0) / (h0 * h1),
        h0 / (h1 * (h0 + h1)),
    ]
}

/// First derivative at the left node of a three-point cluster (second order).
pub fn first_left(h0: f64, h1: f64) -> [f64; 3] {
    [
        -(2.0 * h0 + h1) / (h0 * (h0 + h1)),
        (h0 + h1) / (h0 * h1),
        -h0 / (h1 * (h0 + h1)),
    ]
}

/// First derivative at the right node of a three-point cluster (second order).
pub fn first_right(h0: f64, h1: f64) -> [f64; 3] {
    [
        h1 / (h0 * (h0 + h1)),
        -(h0 + h1) / (h0 * h1),
        (2.0 * h1 + h0) / (h1 * (h0 + h1)),
    ]
}

/// Second derivative weights for a three-point cluster.
pub fn second(h0: f64, h1: f64) -> [f64; 3] {
    [
        2.0 / (h0 * (h0 + h1)),
        -2.0 / (h0 * h1),
        2.0 / (h1 * (h0 + h1)),
    ]
}

fn apply(w: [f64; 3], f: &[f64], k: usize) -> f64 {
    w[0] * f[k] + w[1] * f[k + 1] + w[2] * f[k + 2]
}

/// First derivative of samples `f` on nodes `x`, one-sided at the ends.
pub fn derivative(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && f.len() == n);
    let mut out = vec![0.0; n];
    out[0] = apply(first_left(x[1] - x[0], x[2] - x[1]), f, 0);
    for k in 1..n - 1 {
        out[k] = apply(first_central(x[k] - x[k - 1], x[k + 1] - x[k]), f, k - 1);
    }
    out[n - 1] = apply(first_right(x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]), f, n - 3);
    out
}

/// Second derivative; the end values reuse the adjacent three-point cluster.
pub fn second_derivative(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && f.len() == n);
    let mut out = vec![0.0; n];
    for k in 1..n - 1 {
        out[k] = apply(second(x[k] - x[k - 1], x[k + 1] - x[k]), f, k - 1);
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}
