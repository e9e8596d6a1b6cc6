//! Discrete Lagrangian transport energy
//! `int int [ phi gamma_t^2 / 2 + phi^(theta+1) gamma_y^(-theta) / (theta+1) ] dy dt`.
//!
//! Labels use P1 elements with exact `phi`-weighted cell integrals. Time is
//! discretized in `s = ln(t + eps)`, which the geometric grid makes uniform:
//! the kinetic term is midpoint in `s`, the potential term trapezoidal in `s`.
//! The two errors largely cancel on self-similar flows.

use rayon::prelude::*;

use super::linalg::{BlockHessian, Tridiag};
use super::SpaceTimeGrid;
use crate::error::{Error, Result};

/// Time weights of the discrete energy.
#[derive(Debug, Clone)]
pub(crate) struct TimeWeights {
    /// Kinetic coefficient `exp(-s_{i+1/2}) / ds` for `i = 0..nt`.
    pub kin: Vec<f64>,
    /// Potential weight `ds exp(s_i)`, halved at the end rows.
    pub pot: Vec<f64>,
}

impl TimeWeights {
    pub fn new(g: &SpaceTimeGrid) -> Self {
        let nt = g.nt();
        let ds = g.ds;
        let kin = (0..nt).map(|i| (-0.5 * (g.s[i] + g.s[i + 1])).exp() / ds).collect();
        let pot = (0..=nt)
            .map(|i| {
                let w = ds * g.s[i].exp();
                if i == 0 || i == nt {
                    0.5 * w
                } else {
                    w
                }
            })
            .collect();
        TimeWeights { kin, pot }
    }
}

fn slopes(row: &[f64], h: f64, floor: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(row.len() - 1);
    for k in 0..row.len() - 1 {
        let s = (row[k + 1] - row[k]) / h;
        if !(s >= floor) {
            return Err(Error::DegenerateState(format!("slope {s:e} below floor {floor:e} in cell {k}")));
        }
        out.push(s);
    }
    Ok(out)
}

/// Potential `sum_k W_k s_k^(-theta) / (theta + 1)` of one time slice.
pub(crate) fn row_potential(g: &SpaceTimeGrid, row: &[f64], floor: f64) -> Result<f64> {
    let th = g.theta;
    let s = slopes(row, g.labels.h, floor)?;
    Ok(s.iter().zip(&g.labels.pot).map(|(sk, w)| w * sk.powf(-th)).sum::<f64>() / (th + 1.0))
}

pub(crate) fn total_energy(g: &SpaceTimeGrid, w: &TimeWeights, gamma: &[f64], floor: f64) -> Result<f64> {
    let m = g.ny() + 1;
    let nt = g.nt();
    let pots: Vec<Result<f64>> =
        (0..=nt).into_par_iter().map(|i| row_potential(g, &gamma[i * m..(i + 1) * m], floor)).collect();
    let kins: Vec<f64> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..m).map(|j| gamma[(i + 1) * m + j] - gamma[i * m + j]).collect();
            0.5 * w.kin[i] * g.labels.mass_inner(&d, &d)
        })
        .collect();
    let mut e = 0.0;
    for (i, p) in pots.into_iter().enumerate() {
        e += w.pot[i] * p?;
    }
    for k in kins {
        e += k;
    }
    Ok(e)
}

/// Gradient of the potential of one slice.
fn row_potential_grad(g: &SpaceTimeGrid, row: &[f64], out: &mut [f64]) {
    let th = g.theta;
    let h = g.labels.h;
    let c = -th / ((th + 1.0) * h);
    for k in 0..row.len() - 1 {
        let s = (row[k + 1] - row[k]) / h;
        let d = c * g.labels.pot[k] * s.powf(-th - 1.0);
        // dV/dgamma_k gets -d, dV/dgamma_{k+1} gets +d
        out[k] -= d;
        out[k + 1] += d;
    }
}

/// Energy gradient with respect to the interior rows `1..nt`, slab ordered.
pub(crate) fn gradient(g: &SpaceTimeGrid, w: &TimeWeights, gamma: &[f64]) -> Vec<f64> {
    let m = g.ny() + 1;
    let nt = g.nt();
    let rows: Vec<Vec<f64>> = (1..nt)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; m];
            let prev = &gamma[(i - 1) * m..i * m];
            let cur = &gamma[i * m..(i + 1) * m];
            let next = &gamma[(i + 1) * m..(i + 2) * m];
            let back: Vec<f64> = (0..m).map(|j| cur[j] - prev[j]).collect();
            let fwd: Vec<f64> = (0..m).map(|j| next[j] - cur[j]).collect();
            g.labels.mass_apply_add(&back, w.kin[i - 1], &mut out);
            g.labels.mass_apply_add(&fwd, -w.kin[i], &mut out);
            let mut pg = vec![0.0; m];
            row_potential_grad(g, cur, &mut pg);
            for j in 0..m {
                out[j] += w.pot[i] * pg[j];
            }
            out
        })
        .collect();
    rows.concat()
}

/// Hessian of the energy restricted to the interior rows.
pub(crate) fn hessian(g: &SpaceTimeGrid, w: &TimeWeights, gamma: &[f64]) -> BlockHessian {
    let m = g.ny() + 1;
    let nt = g.nt();
    let th = g.theta;
    let h = g.labels.h;
    let mass = Tridiag { diag: g.labels.mass_diag.clone(), off: g.labels.mass_off.clone() };
    let blocks: Vec<Tridiag> = (1..nt)
        .into_par_iter()
        .map(|i| {
            let cur = &gamma[i * m..(i + 1) * m];
            let a = w.kin[i - 1] + w.kin[i];
            let mut b = Tridiag::zeros(m);
            for j in 0..m {
                b.diag[j] = a * mass.diag[j];
            }
            for k in 0..m - 1 {
                b.off[k] = a * mass.off[k];
                let s = (cur[k + 1] - cur[k]) / h;
                let e = w.pot[i] * th * g.labels.pot[k] * s.powf(-th - 2.0) / (h * h);
                b.diag[k] += e;
                b.diag[k + 1] += e;
                b.off[k] -= e;
            }
            b
        })
        .collect();
    let coupling = (1..nt - 1).map(|i| w.kin[i]).collect();
    BlockHessian { m, blocks, coupling, mass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Profile;

    fn setup(theta: f64) -> (SpaceTimeGrid, Vec<f64>) {
        let p = Profile::new(theta).unwrap();
        let g = SpaceTimeGrid::new(&p, 1e-2, 1.0, 6, 8).unwrap();
        let m = g.ny() + 1;
        let mut gamma = vec![0.0; (g.nt() + 1) * m];
        for i in 0..=g.nt() {
            for j in 0..m {
                let y = g.labels.y[j];
                gamma[i * m + j] = (g.t[i] + g.eps).powf(0.6) * (y + 0.05 * y.powi(3)) + 0.01 * i as f64;
            }
        }
        (g, gamma)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (g, gamma) = setup(1.7);
        let w = TimeWeights::new(&g);
        let grad = gradient(&g, &w, &gamma);
        let m = g.ny() + 1;
        for (p, &gp) in grad.iter().enumerate() {
            let idx = m + p;
            let step = 1e-6;
            let mut a = gamma.clone();
            a[idx] += step;
            let mut b = gamma.clone();
            b[idx] -= step;
            let fd = (total_energy(&g, &w, &a, 0.0).unwrap() - total_energy(&g, &w, &b, 0.0).unwrap()) / (2.0 * step);
            assert!((fd - gp).abs() < 1e-6 * (1.0 + gp.abs()), "p={p} fd={fd} g={gp}");
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let (g, gamma) = setup(3.0);
        let w = TimeWeights::new(&g);
        let hess = hessian(&g, &w, &gamma);
        let m = g.ny() + 1;
        let n = hess.dim();
        let dir: Vec<f64> = (0..n).map(|k| ((k * 7 % 11) as f64 - 5.0) * 1e-3).collect();
        let mut hv = vec![0.0; n];
        hess.apply(&dir, &mut hv);
        let step = 1e-5;
        let shifted = |sgn: f64| {
            let mut a = gamma.clone();
            for k in 0..n {
                a[m + k] += sgn * step * dir[k];
            }
            gradient(&g, &w, &a)
        };
        let gp = shifted(1.0);
        let gm = shifted(-1.0);
        for k in 0..n {
            let fd = (gp[k] - gm[k]) / (2.0 * step);
            assert!((fd - hv[k]).abs() < 1e-6 * (1.0 + hv[k].abs()), "k={k}");
        }
    }

    #[test]
    fn slope_floor_is_enforced() {
        let (g, mut gamma) = setup(1.0);
        let m = g.ny() + 1;
        gamma[2 * m + 3] = gamma[2 * m + 4];
        let w = TimeWeights::new(&g);
        assert!(matches!(total_energy(&g, &w, &gamma, 1e-8), Err(Error::DegenerateState(_))));
    }
}
