//! Banded LU factorization with partial pivoting (LAPACK `gbtrf`/`gbtrs`
//! layout), plus a bordered variant for the augmented Lyapunov-Schmidt solves.

use crate::error::{Error, Result};

/// Band matrix with `kl` subdiagonals and `ku` superdiagonals. Storage keeps
/// `kl` extra superdiagonal rows for pivoting fill-in, as in LAPACK.
#[derive(Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    /// Row-major `(2*kl + ku + 1) x n`; entry `(i, j)` lives at row
    /// `kl + ku + i - j`, column `j`.
    ab: Vec<f64>,
    rows: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let rows = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ab: vec![0.0; rows * n],
            rows,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let r = self.kl + self.ku + i - j;
        r * self.n + j
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && i + self.ku + self.kl >= j, "outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.ab[self.idx(i, j)]
    }

    /// Entry access with zero outside the band (diagnostics).
    pub fn get_checked(&self, i: usize, j: usize) -> f64 {
        if j + self.kl >= i && i + self.ku + self.kl >= j {
            self.ab[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// In-place LU with partial pivoting. Returns the pivot vector.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku_eff = self.kl + self.ku; // fill-in widens the upper band
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            // pivot search in column j, rows j..=j+kl
            let imax = (j + kl).min(n - 1);
            let mut piv = j;
            let mut pmax = self.get(j, j).abs();
            for i in (j + 1)..=imax {
                let v = self.get(i, j).abs();
                if v > pmax {
                    pmax = v;
                    piv = i;
                }
            }
            if pmax == 0.0 {
                return Err(Error::Numerical(format!(
                    "banded LU: zero pivot at column {j}"
                )));
            }
            ipiv[j] = piv;
            if piv != j {
                // swap rows j and piv within the band
                let jmax = (j + ku_eff).min(n - 1);
                for col in j..=jmax {
                    let a = self.idx(j, col);
                    let b = self.idx(piv, col);
                    self.ab.swap(a, b);
                }
            }
            let diag = self.get(j, j);
            for i in (j + 1)..=imax {
                let m = self.get(i, j) / diag;
                let k = self.idx(i, j);
                self.ab[k] = m;
                if m != 0.0 {
                    let jmax = (j + ku_eff).min(n - 1);
                    for col in (j + 1)..=jmax {
                        let sub = m * self.get(j, col);
                        let k = self.idx(i, col);
                        self.ab[k] -= sub;
                    }
                }
            }
        }
        let _ = self.rows;
        Ok(BandLu { mat: self, ipiv })
    }
}

pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.mat.n;
        let kl = self.mat.kl;
        let ku_eff = self.mat.kl + self.mat.ku;
        let mut x = rhs.to_vec();
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let imax = (j + kl).min(n - 1);
            for i in (j + 1)..=imax {
                x[i] -= self.mat.get(i, j) * x[j];
            }
        }
        for j in (0..n).rev() {
            let jmax = (j + ku_eff).min(n - 1);
            let mut acc = x[j];
            for col in (j + 1)..=jmax {
                acc -= self.mat.get(j, col) * x[col];
            }
            x[j] = acc / self.mat.get(j, j);
        }
        x
    }
}

/// Solve the bordered system
/// ```text
///   [ A  b ] [u]   [f]
///   [ cᵀ 0 ] [s] = [g]
/// ```
/// with banded `A`, by two banded solves (block elimination through `A`).
pub fn solve_bordered(
    a: BandMatrix,
    b: &[f64],
    c_row: &[f64],
    f: &[f64],
    g: f64,
) -> Result<(Vec<f64>, f64)> {
    let lu = a.factor()?;
    let x1 = lu.solve(f);
    let x2 = lu.solve(b);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let denom = dot(c_row, &x2);
    if denom.abs() < 1e-300 {
        return Err(Error::Numerical("bordered solve: singular border".into()));
    }
    let s = (dot(c_row, &x1) - g) / denom;
    let u: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - s * b).collect();
    Ok((u, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn banded_lu_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let (kl, ku) = (3, 2);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                let v = if i == j { v + 4.0 } else { v };
                band.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = band.factor().unwrap().solve(&rhs);
        let xd = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&rhs))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn bordered_solve_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let (kl, ku) = (2, 2);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                let v = if i == j { v + 3.0 } else { v };
                band.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = 0.37;
        for i in 0..n {
            dense[(i, n)] = b[i];
            dense[(n, i)] = c[i];
        }
        let mut rhs = f.clone();
        rhs.push(g);
        let xd = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&rhs))
            .unwrap();
        let (u, s) = solve_bordered(band, &b, &c, &f, g).unwrap();
        for i in 0..n {
            assert!((u[i] - xd[i]).abs() < 1e-9);
        }
        assert!((s - xd[n]).abs() < 1e-9);
    }
}
