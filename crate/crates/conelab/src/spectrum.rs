//! Spectral layer: Laplace eigenvalues on the product link, indicial roots,
//! and the homogeneous Jacobi fields on `C` and `C x R` they generate.
//!
//! For the Simons cone the lowest modes give the degree list {1, 0, -2}: the
//! rotations, the translations, and the radial field `r^{-2}`, with the
//! special degree-one combination `phi = y^3 r^{-2} - y` on the cylinder.

use crate::error::{Error, Result};
use crate::params::ConeParams;
use serde::Serialize;

/// One eigenvalue of `-L_Sigma = -(Delta + |A|^2)` on the product link, with
/// all `(k, l)` mode labels sharing it.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEntry {
    /// representative mode label (spherical harmonic degrees on the factors)
    pub mode: (u32, u32),
    /// all labels sharing the eigenvalue
    pub modes: Vec<(u32, u32)>,
    /// Laplace eigenvalue on the product link with the minimal radii
    pub laplace_eig: f64,
    /// eigenvalue of `-L_Sigma`
    pub lambda: f64,
    /// the `O(p+1) x O(q+1)`-invariant sector is exactly `k = l = 0`
    pub invariant_sector: bool,
}

/// First `count` eigenvalues of `-L` on the link, sorted ascending.
pub fn link_eigenvalues(params: ConeParams, count: usize) -> Result<Vec<SpectrumEntry>> {
    if count < 1 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    // radii squared are the exact rationals p/(p+q), q/(p+q)
    let n = (params.p + params.q) as f64;
    let a2 = params.p as f64 / n;
    let b2 = params.q as f64 / n;
    let shape = params.link_shape_norm_sq();
    let mut entries: Vec<(f64, (u32, u32))> = Vec::new();
    let kmax = (4.0 * (count as f64).sqrt() + 12.0) as u32;
    for k in 0..=kmax {
        for l in 0..=kmax {
            let eig = k as f64 * (k as f64 + params.p as f64 - 1.0) / a2
                + l as f64 * (l as f64 + params.q as f64 - 1.0) / b2;
            entries.push((eig, (k, l)));
        }
    }
    entries.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    let mut out: Vec<SpectrumEntry> = Vec::new();
    for (eig, mode) in entries {
        if let Some(last) = out.last_mut() {
            if (last.laplace_eig - eig).abs() < 1e-9 {
                last.modes.push(mode);
                continue;
            }
        }
        if out.len() == count {
            break;
        }
        out.push(SpectrumEntry {
            mode,
            modes: vec![mode],
            laplace_eig: eig,
            lambda: eig - shape,
            invariant_sector: mode == (0, 0),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IndicialRoot {
    pub lambda: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

/// Indicial roots `mu^2 + (cone_dim - 2) mu - lambda = 0` of the cone Jacobi
/// operator at link eigenvalue `lambda`.
pub fn indicial_roots(lambda: f64, params: ConeParams) -> Result<IndicialRoot> {
    let shift = (params.cone_dim as f64 - 2.0) / 2.0;
    let disc = shift * shift + lambda;
    if disc < 0.0 {
        return Err(Error::InvalidInput(format!(
            "below indicial threshold: lambda = {lambda}"
        )));
    }
    Ok(IndicialRoot {
        lambda,
        mu_plus: -shift + disc.sqrt(),
        mu_minus: -shift - disc.sqrt(),
    })
}

/// Exact integer indicial roots when the discriminant is a perfect square:
/// solves `mu^2 + (cone_dim - 2) mu - lambda = 0` over the integers.
pub fn indicial_roots_exact(lambda: i64, params: ConeParams) -> Option<(i64, i64)> {
    let c = params.cone_dim as i64 - 2; // 5 for the Simons cone
    let disc = c * c + 4 * lambda;
    if disc < 0 {
        return None;
    }
    let s = (disc as f64).sqrt().round() as i64;
    if s * s != disc {
        return None;
    }
    if (s - c) % 2 != 0 {
        return None;
    }
    Some(((-c + s) / 2, (-c - s) / 2))
}

/// Roots of a monic integer quadratic `a^2 + p1 a + p0`, exact.
pub fn integer_quadratic_roots(p1: i64, p0: i64) -> Option<(i64, i64)> {
    let disc = p1 * p1 - 4 * p0;
    if disc < 0 {
        return None;
    }
    let s = (disc as f64).sqrt().round() as i64;
    if s * s != disc {
        return None;
    }
    Some(((-p1 + s) / 2, (-p1 - s) / 2))
}

/// One homogeneous Jacobi field on `C x R`:
/// `u = phi_j(w) * sum_k a_k r^{mu + 2k} y^{l_k}` with `mu + 2k + l_k = degree`.
#[derive(Debug, Clone, Serialize)]
pub struct JacobiMode {
    pub degree: f64,
    pub mu: f64,
    pub angular: (u32, u32),
    pub lambda: f64,
    /// `(k, l, coefficient)` triples, seeded with `a_0 = 1`
    pub terms: Vec<(u32, u32, f64)>,
}

impl JacobiMode {
    /// Radial-axial part `G(r, y) = sum a_k r^{mu + 2k} y^{l}` of the mode.
    pub fn radial_part(&self, r: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(k, l, c)| c * r.powf(self.mu + 2.0 * k as f64) * y.powi(l as i32))
            .sum()
    }
}

/// All homogeneous Jacobi fields on `C x R` with degree `<= max_degree` whose
/// angular mode keeps `r^{2.1} u` locally bounded (the `mu_+ >= -2` branches).
pub fn enumerate_homogeneous_jacobi(params: ConeParams, max_degree: f64) -> Result<Vec<JacobiMode>> {
    if max_degree > 2.0 {
        return Err(Error::InvalidInput("max_degree capped at 2".into()));
    }
    let spectrum = link_eigenvalues(params, 40)?;
    let mut out = Vec::new();
    for entry in &spectrum {
        let roots = indicial_roots(entry.lambda, params)?;
        let mu = roots.mu_plus;
        if mu < -2.05 {
            continue;
        }
        if mu > max_degree + 1e-12 {
            continue;
        }
        // degrees mu + 2k + l <= max_degree
        let span = max_degree - mu;
        let steps = span.floor() as i64;
        for d_off in 0..=steps {
            let degree = mu + d_off as f64;
            for mode in build_mode(params, entry, mu, degree) {
                out.push(mode);
            }
        }
    }
    out.sort_by(|a, b| a.degree.partial_cmp(&b.degree).unwrap());
    Ok(out)
}

/// Jacobi mode of given degree over one angular eigenvalue, by the coefficient
/// recursion `a_k = -a_{k-1} l_{k-1} (l_{k-1} - 1) / (2k (2 mu + 2k + cone_dim - 2))`.
fn build_mode(
    params: ConeParams,
    entry: &SpectrumEntry,
    mu: f64,
    degree: f64,
) -> Option<JacobiMode> {
    let l0 = degree - mu;
    if l0 < -1e-12 || (l0 - l0.round()).abs() > 1e-9 {
        return None;
    }
    let l0 = l0.round() as i64;
    let cdim = params.cone_dim as f64;
    let mut terms = Vec::new();
    let mut a = 1.0;
    let mut k: i64 = 0;
    let mut l = l0;
    loop {
        terms.push((k as u32, l as u32, a));
        let numer = (l * (l - 1)) as f64;
        if numer == 0.0 || l < 2 {
            break;
        }
        let k1 = k + 1;
        let denom = 2.0 * k1 as f64 * (2.0 * mu + 2.0 * k1 as f64 + cdim - 2.0);
        if denom.abs() < 1e-12 {
            return None;
        }
        a = -a * numer / denom;
        k = k1;
        l -= 2;
    }
    Some(JacobiMode {
        degree,
        mu,
        angular: entry.mode,
        lambda: entry.lambda,
        terms,
    })
}

/// A field with analytically supplied derivatives on the invariant sector of
/// `C x R`, as a function of `(r, y)`.
pub struct RadialField<'a> {
    pub f: &'a dyn Fn(f64, f64) -> f64,
    pub f_r: &'a dyn Fn(f64, f64) -> f64,
    pub f_rr: &'a dyn Fn(f64, f64) -> f64,
    pub f_yy: &'a dyn Fn(f64, f64) -> f64,
}

/// `L_{C x R} u = u_rr + (cone_dim - 1)/r u_r + u_yy + |A|^2/r^2 u` on the
/// invariant sector, by exact calculus.
pub fn cylinder_jacobi_apply(params: ConeParams, field: &RadialField, r: f64, y: f64) -> f64 {
    let c = params.cone_dim as f64 - 1.0;
    let a2 = params.link_shape_norm_sq();
    (field.f_rr)(r, y) + c / r * (field.f_r)(r, y) + (field.f_yy)(r, y)
        + a2 / (r * r) * (field.f)(r, y)
}

/// Residual report of `phi = y^3 r^{-2} - y` under `L_{C x R}`.
pub fn verify_phi_jacobi(params: ConeParams, rs: &[f64], ys: &[f64]) -> Result<f64> {
    if rs.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidInput("grid must avoid r = 0".into()));
    }
    let phi = RadialField {
        f: &|r, y| y.powi(3) / (r * r) - y,
        f_r: &|r, y| -2.0 * y.powi(3) / r.powi(3),
        f_rr: &|r, y| 6.0 * y.powi(3) / r.powi(4),
        f_yy: &|r, y| 6.0 * y / (r * r),
    };
    let mut worst: f64 = 0.0;
    for &r in rs {
        for &y in ys {
            let res = cylinder_jacobi_apply(params, &phi, r, y);
            worst = worst.max(res.abs() * r.powi(3));
        }
    }
    Ok(worst)
}

/// Least-squares split of a degree-one field on an annulus of `C x R` into a
/// rotation part `A z . nu(z)` and a multiple of `phi`.
#[derive(Debug, Clone)]
pub struct DegreeOneDecomposition {
    /// 9 x 9 antisymmetric matrix (row-major)
    pub skew: [[f64; 9]; 9],
    pub lambda_phi: f64,
    /// L2 norm of the orthogonal residual over the sample quadrature
    pub residual: f64,
}

/// Simons-cone points on the annulus `1/2 <= rho <= 1` of `C x R` with equal
/// quadrature weights, from a seeded low-discrepancy-ish sampler.
pub fn annulus_samples(params: ConeParams, n: usize, seed: u64) -> Vec<[f64; 9]> {
    use rand::{Rng, SeedableRng};
    assert!(params.p == 3 && params.q == 3, "sampler is for the Simons cone");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // cone measure: dV ~ r^6 dr dsigma dy on the 8-dim cylinder; sample
        // (r, y) in the half-disc rho in (1/2, 1) with density r^6
        let r = rng.gen_range(0.0f64..1.0);
        let y = rng.gen_range(-1.0f64..1.0);
        let rho = (r * r + y * y).sqrt();
        if !(0.5..=1.0).contains(&rho) {
            continue;
        }
        if rng.gen_range(0.0..1.0) > r.powi(6) {
            continue;
        }
        let sphere = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 4] {
            // Box-Muller gaussians, normalized
            let mut v = [0.0; 4];
            for k in 0..2 {
                let u1: f64 = rng.gen_range(1e-12f64..1.0);
                let u2: f64 = rng.gen_range(0.0f64..std::f64::consts::TAU);
                let m = (-2.0 * u1.ln()).sqrt();
                v[2 * k] = m * u2.cos();
                v[2 * k + 1] = m * u2.sin();
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in v.iter_mut() {
                *x /= norm;
            }
            v
        };
        let w1 = sphere(&mut rng);
        let w2 = sphere(&mut rng);
        let s = r / 2.0f64.sqrt();
        out.push([
            s * w1[0], s * w1[1], s * w1[2], s * w1[3],
            s * w2[0], s * w2[1], s * w2[2], s * w2[3],
            y,
        ]);
    }
    out
}

/// Unit normal of `C x R` at a point (Simons cone): `(x', -x'')/r`.
pub fn cylinder_normal(z: &[f64; 9]) -> [f64; 9] {
    let r = (z[..8].iter().map(|x| x * x).sum::<f64>()).sqrt();
    let mut n = [0.0; 9];
    for i in 0..4 {
        n[i] = z[i] / r;
        n[4 + i] = -z[4 + i] / r;
    }
    n
}

/// Rotation Jacobi field `A z . nu(z)` for the elementary rotation `e_i ^ e_j`.
pub fn rotation_field(i: usize, j: usize, z: &[f64; 9]) -> f64 {
    let n = cylinder_normal(z);
    // (E_ij z) . n with E_ij z = e_i z_j - e_j z_i
    z[j] * n[i] - z[i] * n[j]
}

pub fn phi_field(z: &[f64; 9]) -> f64 {
    let r2 = z[..8].iter().map(|x| x * x).sum::<f64>();
    let y = z[8];
    y * y * y / r2 - y
}

pub fn decompose_degree_one(
    samples: &[[f64; 9]],
    values: &[f64],
) -> Result<DegreeOneDecomposition> {
    if samples.len() != values.len() || samples.len() < 2000 {
        return Err(Error::InvalidInput(
            "need >= 2000 samples to resolve the angular modes".into(),
        ));
    }
    // basis: elementary rotations modulo the O(4) x O(4) stabilizer (the
    // block-diagonal rotations have A z . nu = 0) plus phi
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(25);
    let mut labels = Vec::new();
    for i in 0..9 {
        for j in (i + 1)..9 {
            let same_block = (i < 4 && j < 4) || ((4..8).contains(&i) && (4..8).contains(&j));
            if same_block {
                continue;
            }
            cols.push(samples.iter().map(|z| rotation_field(i, j, z)).collect());
            labels.push((i, j));
        }
    }
    cols.push(samples.iter().map(phi_field).collect());
    let (coef, resid, cond) = crate::numerics::lstsq(&cols, values);
    if cond > 1e12 {
        return Err(Error::Numerical(format!(
            "rank-deficient sample set: cond = {cond:.2e}"
        )));
    }
    let mut skew = [[0.0; 9]; 9];
    for (&(i, j), &c) in labels.iter().zip(&coef) {
        skew[i][j] = c;
        skew[j][i] = -c;
    }
    Ok(DegreeOneDecomposition {
        skew,
        lambda_phi: *coef.last().unwrap(),
        residual: resid,
    })
}
