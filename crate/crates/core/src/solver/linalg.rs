//! Linear algebra for the Newton system.
//!
//! The Hessian of the discrete energy is block tridiagonal in time with
//! tridiagonal blocks in the label direction. Off-diagonal blocks are scalar
//! multiples of the (tridiagonal) mass matrix.

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, Default)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag { diag: vec![0.0; n], off: vec![0.0; n.saturating_sub(1)] }
    }

    pub fn apply_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.diag.len();
        for j in 0..n {
            out[j] += scale * self.diag[j] * x[j];
        }
        for k in 0..n - 1 {
            out[k] += scale * self.off[k] * x[k + 1];
            out[k + 1] += scale * self.off[k] * x[k];
        }
    }
}

/// Symmetric block-tridiagonal matrix with `rows` diagonal blocks of size `m`;
/// the coupling between block `r` and `r + 1` is `-coupling[r] * mass`.
#[derive(Debug, Clone)]
pub struct BlockHessian {
    pub m: usize,
    pub blocks: Vec<Tridiag>,
    pub coupling: Vec<f64>,
    pub mass: Tridiag,
}

impl BlockHessian {
    pub fn dim(&self) -> usize {
        self.m * self.blocks.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.diag.iter().copied()).collect()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, b) in self.blocks.iter().enumerate() {
            let xs = &x[r * m..(r + 1) * m];
            b.apply_add(xs, 1.0, &mut out[r * m..(r + 1) * m]);
        }
        for r in 0..self.coupling.len() {
            let c = self.coupling[r];
            let (lo, hi) = out.split_at_mut((r + 1) * m);
            self.mass.apply_add(&x[(r + 1) * m..(r + 2) * m], -c, &mut lo[r * m..]);
            self.mass.apply_add(&x[r * m..(r + 1) * m], -c, &mut hi[..m]);
        }
    }

    /// Lower band storage with bandwidth `m + 1`.
    pub fn to_band(&self) -> BandMatrix {
        let m = self.m;
        let n = self.dim();
        let kd = m + 1;
        let mut band = BandMatrix::zeros(n, kd);
        for (r, b) in self.blocks.iter().enumerate() {
            let base = r * m;
            for j in 0..m {
                band.set(base + j, base + j, b.diag[j]);
            }
            for k in 0..m - 1 {
                band.set(base + k + 1, base + k, b.off[k]);
            }
        }
        for (r, &c) in self.coupling.iter().enumerate() {
            let (up, low) = (r * m, (r + 1) * m);
            for j in 0..m {
                band.set(low + j, up + j, -c * self.mass.diag[j]);
            }
            for k in 0..m - 1 {
                band.set(low + k + 1, up + k, -c * self.mass.off[k]);
                band.set(low + k, up + k + 1, -c * self.mass.off[k]);
            }
        }
        band
    }
}

/// Symmetric band matrix, lower triangle: `data[i * (kd + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kd: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kd: usize) -> Self {
        BandMatrix { n, kd, data: vec![0.0; n * (kd + 1)] }
    }

    /// Sets `A[i][j]` for `j <= i <= j + kd`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.kd);
        self.data[i * (self.kd + 1) + (i - j)] = v;
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.kd + 1) + (i - j)]
    }

    /// In-place Cholesky factorization `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(kd);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(kd));
                let mut s = self.at(i, j);
                for k in k0..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::DegenerateState(format!(
                            "Newton matrix is not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        Ok(BandCholesky { band: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    band: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let BandMatrix { n, kd, ref data } = self.band;
        let w = kd + 1;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(kd)..i {
                s -= data[i * w + (i - k)] * x[k];
            }
            x[i] = s / data[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + kd + 1).min(n) {
                s -= data[k * w + (k - i)] * x[k];
            }
            x[i] = s / data[i * w];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients; returns the iterate and the
/// number of iterations.
pub fn pcg(h: &BlockHessian, rhs: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let dinv: Vec<f64> = h.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let r0 = norm(rhs);
    if r0 == 0.0 {
        return Ok((x, 0));
    }
    for it in 1..=max_iter {
        h.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::DegenerateState("conjugate gradient lost positivity".into()));
        }
        let step = rz / pap;
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        if norm(&r) <= rel_tol * r0 {
            return Ok((x, it));
        }
        for k in 0..n {
            z[k] = r[k] * dinv[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NewtonDivergence(format!("conjugate gradient did not reach {rel_tol:e} in {max_iter} iterations")))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(m: usize, rows: usize) -> BlockHessian {
        let mut mass = Tridiag::zeros(m);
        for j in 0..m {
            mass.diag[j] = 0.5 + 0.1 * j as f64;
        }
        for k in 0..m - 1 {
            mass.off[k] = 0.1;
        }
        let blocks = (0..rows)
            .map(|r| {
                let mut b = Tridiag::zeros(m);
                for j in 0..m {
                    b.diag[j] = 4.0 + r as f64 + j as f64 * 0.3;
                }
                for k in 0..m - 1 {
                    b.off[k] = -0.7;
                }
                b
            })
            .collect();
        BlockHessian { m, blocks, coupling: (0..rows - 1).map(|r| 1.0 + 0.2 * r as f64).collect(), mass }
    }

    #[test]
    fn band_cholesky_matches_operator() {
        let h = sample(5, 4);
        let n = h.dim();
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        h.apply(&x, &mut b);
        let sol = h.to_band().cholesky().unwrap().solve(&b);
        for (u, v) in sol.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_agrees_with_direct() {
        let h = sample(7, 6);
        let n = h.dim();
        let b: Vec<f64> = (0..n).map(|k| 1.0 + (k % 3) as f64).collect();
        let direct = h.to_band().cholesky().unwrap().solve(&b);
        let (cg, _) = pcg(&h, &b, 1e-13, 500).unwrap();
        for (u, v) in cg.iter().zip(&direct) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut band = BandMatrix::zeros(2, 1);
        band.set(0, 0, 1.0);
        band.set(1, 0, 2.0);
        band.set(1, 1, 1.0);
        assert!(band.cholesky().is_err());
    }
}
