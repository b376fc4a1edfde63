//! Two-parameter profile patches `(a, b) -> (u, v, y)` generating equivariant
//! hypersurfaces of `R^{p+q+3}`-type spaces (`p = q = 0` degenerates to a
//! plain surface in `R^3`).
//!
//! The generated hypersurface point is `(u w1, v w2, y)` with `w1 in S^p`,
//! `w2 in S^q`; its unit normal corresponds to the orbit-space unit normal of
//! the patch, and graphs along the hypersurface normal reduce to graphs along
//! the patch normal.

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm};
use crate::numerics::fd_weights;

pub struct MeridianPatch {
    pub avec: Vec<f64>,
    pub bvec: Vec<f64>,
    /// positions, row-major `na x nb`
    pub pos: Vec<[f64; 3]>,
    pub p: u32,
    pub q: u32,
    /// +1 for the normal `P_a x P_b / |..|`, -1 for its negative
    pub normal_sign: f64,
    wa: Vec<Vec<Vec<f64>>>,
    wb: Vec<Vec<Vec<f64>>>,
    alo: Vec<usize>,
    blo: Vec<usize>,
}

impl MeridianPatch {
    pub fn new(
        avec: Vec<f64>,
        bvec: Vec<f64>,
        pos: Vec<[f64; 3]>,
        p: u32,
        q: u32,
        normal_sign: f64,
    ) -> Result<Self> {
        let (na, nb) = (avec.len(), bvec.len());
        if pos.len() != na * nb || na < 5 || nb < 5 {
            return Err(Error::InvalidInput("meridian patch needs a 5x5 grid".into()));
        }
        let (wa, alo) = axis_weights(&avec);
        let (wb, blo) = axis_weights(&bvec);
        Ok(MeridianPatch {
            avec,
            bvec,
            pos,
            p,
            q,
            normal_sign,
            wa,
            wb,
            alo,
            blo,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 3] {
        self.pos[i * self.bvec.len() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: [f64; 3]) {
        let nb = self.bvec.len();
        self.pos[i * nb + j] = v;
    }

    pub fn na(&self) -> usize {
        self.avec.len()
    }

    pub fn nb(&self) -> usize {
        self.bvec.len()
    }

    /// First fundamental quantities and unit normal at `(i, j)`.
    pub fn frame(&self, i: usize, j: usize) -> Frame {
        let mut pa = [0.0; 3];
        let mut pb = [0.0; 3];
        let mut paa = [0.0; 3];
        let mut pbb = [0.0; 3];
        let mut pab = [0.0; 3];
        let wa = &self.wa[i];
        let wb = &self.wb[j];
        let (alo, blo) = (self.alo[i], self.blo[j]);
        for (ka, wa1) in wa[1].iter().enumerate() {
            let row = alo + ka;
            for (kb, wb1) in wb[1].iter().enumerate() {
                let col = blo + kb;
                let p = self.at(row, col);
                let w = wa1 * wb1;
                for c in 0..3 {
                    pab[c] += w * p[c];
                }
            }
        }
        for (ka, (&wa1, &wa2)) in wa[1].iter().zip(&wa[2]).enumerate() {
            let p = self.at(alo + ka, j);
            for c in 0..3 {
                pa[c] += wa1 * p[c];
                paa[c] += wa2 * p[c];
            }
        }
        for (kb, (&wb1, &wb2)) in wb[1].iter().zip(&wb[2]).enumerate() {
            let p = self.at(i, blo + kb);
            for c in 0..3 {
                pb[c] += wb1 * p[c];
                pbb[c] += wb2 * p[c];
            }
        }
        let nr = cross(pa, pb);
        let len = norm(nr);
        let s = self.normal_sign / len;
        Frame {
            pa,
            pb,
            paa,
            pbb,
            pab,
            normal: [nr[0] * s, nr[1] * s, nr[2] * s],
        }
    }

    /// Scalar mean curvature `<H, n>` of the generated hypersurface at an
    /// interior grid point.
    pub fn mean_curvature(&self, i: usize, j: usize) -> Result<f64> {
        if i == 0 || j == 0 || i + 1 == self.na() || j + 1 == self.nb() {
            return Err(Error::BoundaryIndex(i * self.nb() + j));
        }
        let pos = self.at(i, j);
        if (self.p > 0 && pos[0] <= 0.0) || (self.q > 0 && pos[1] <= 0.0) {
            return Err(Error::Numerical(format!(
                "orbit degenerate at patch node ({i},{j}): u = {:.3e}, v = {:.3e}",
                pos[0], pos[1]
            )));
        }
        let f = self.frame(i, j);
        let e = dot(f.pa, f.pa);
        let ff = dot(f.pa, f.pb);
        let g = dot(f.pb, f.pb);
        let l = dot(f.paa, f.normal);
        let m = dot(f.pab, f.normal);
        let n2 = dot(f.pbb, f.normal);
        let det = e * g - ff * ff;
        if det <= 0.0 {
            return Err(Error::Numerical(format!("degenerate metric at ({i},{j})")));
        }
        let trace = (g * l - 2.0 * ff * m + e * n2) / det;
        let mut mc = trace;
        if self.p > 0 {
            mc -= self.p as f64 * f.normal[0] / pos[0];
        }
        if self.q > 0 {
            mc -= self.q as f64 * f.normal[1] / pos[1];
        }
        Ok(mc)
    }

    /// Area element of the generated hypersurface per unit `da db`
    /// (including the orbit volume factor `c(p,q) u^p v^q`).
    pub fn area_element(&self, i: usize, j: usize, orbit_constant: f64) -> f64 {
        let f = self.frame(i, j);
        let e = dot(f.pa, f.pa);
        let ff = dot(f.pa, f.pb);
        let g = dot(f.pb, f.pb);
        let p = self.at(i, j);
        let w = p[0].powi(self.p as i32) * p[1].powi(self.q as i32);
        orbit_constant * w * (e * g - ff * ff).max(0.0).sqrt()
    }

    /// Patch displaced by `offsets` along the unit normal field.
    pub fn graph(&self, offsets: &[f64]) -> Result<MeridianPatch> {
        if offsets.len() != self.pos.len() {
            return Err(Error::InvalidInput("graph offsets size mismatch".into()));
        }
        let mut pos = self.pos.clone();
        let nb = self.nb();
        for i in 0..self.na() {
            for j in 0..nb {
                let f = self.frame(i, j);
                let t = offsets[i * nb + j];
                let p = &mut pos[i * nb + j];
                for c in 0..3 {
                    p[c] += t * f.normal[c];
                }
            }
        }
        MeridianPatch::new(
            self.avec.clone(),
            self.bvec.clone(),
            pos,
            self.p,
            self.q,
            self.normal_sign,
        )
    }

    /// Apply the linearized mean curvature operator (Jacobi operator of the
    /// generated hypersurface) to a field on the grid, by central differencing
    /// of the graph map. Entries on the boundary ring are zero.
    pub fn jacobi_apply(&self, field: &[f64], eta_scale: f64) -> Result<Vec<f64>> {
        let vmax = field.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let eta_scale = if vmax > 0.0 {
            eta_scale.min(3e-5 / vmax).max(1e-9 / vmax)
        } else {
            eta_scale
        };
        let plus = self.graph(&field.iter().map(|f| f * eta_scale).collect::<Vec<_>>())?;
        let minus = self.graph(&field.iter().map(|f| -f * eta_scale).collect::<Vec<_>>())?;
        let nb = self.nb();
        let mut out = vec![0.0; field.len()];
        for i in 1..self.na() - 1 {
            for j in 1..nb - 1 {
                let a = plus.mean_curvature(i, j)?;
                let b = minus.mean_curvature(i, j)?;
                out[i * nb + j] = (a - b) / (2.0 * eta_scale);
            }
        }
        Ok(out)
    }
}

pub struct Frame {
    pub pa: [f64; 3],
    pub pb: [f64; 3],
    pub paa: [f64; 3],
    pub pbb: [f64; 3],
    pub pab: [f64; 3],
    pub normal: [f64; 3],
}

/// Per-node derivative weights along one axis: 5-point interior stencils,
/// narrowing to 3 points near the ends.
fn axis_weights(xs: &[f64]) -> (Vec<Vec<Vec<f64>>>, Vec<usize>) {
    let n = xs.len();
    let mut all = Vec::with_capacity(n);
    let mut los = Vec::with_capacity(n);
    for i in 0..n {
        let rad = if i >= 2 && i + 2 < n { 2 } else { 1 };
        let lo = i.saturating_sub(rad).min(n - (2 * rad + 1));
        let sten = &xs[lo..lo + 2 * rad + 1];
        all.push(fd_weights(sten, xs[i], 2));
        los.push(lo);
    }
    (all, los)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linspace;

    fn sphere_patch(radius: f64, n: usize) -> MeridianPatch {
        // plain S^2 in R^3 (p = q = 0), outward normal
        let thetas = linspace(0.4, 2.0, n);
        let phis = linspace(0.3, 2.2, n);
        let mut pos = Vec::new();
        for &t in &thetas {
            for &p in &phis {
                pos.push([
                    radius * t.sin() * p.cos(),
                    radius * t.sin() * p.sin(),
                    radius * t.cos(),
                ]);
            }
        }
        MeridianPatch::new(thetas, phis, pos, 0, 0, 1.0).unwrap()
    }

    #[test]
    fn plain_sphere_mean_curvature() {
        let patch = sphere_patch(2.0, 41);
        // normal sign: P_theta x P_phi points outward for this parametrization
        let m = patch.mean_curvature(20, 20).unwrap();
        assert!((m.abs() - 1.0).abs() < 1e-5, "sphere trace {m}");
        // <H, n> with outward n is negative
        let f = patch.frame(20, 20);
        let outward = dot(f.normal, patch.at(20, 20)) > 0.0;
        assert_eq!(m < 0.0, outward);
    }

    fn cylinder_patch(nt: usize, nr: usize, t_half: f64) -> MeridianPatch {
        // V_0 = C x R as a patch (sigma, rho): rho * (cos/sqrt2, cos/sqrt2, sin)
        let params = crate::params::ConeParams::new(3, 3).unwrap();
        let sig = linspace(-t_half, t_half, nt);
        let rho = crate::numerics::logspace(0.5, 2.0, nr);
        let mut pos = Vec::new();
        let inv = 1.0 / 2.0f64.sqrt();
        for &t in &sig {
            for &r in &rho {
                pos.push([r * t.cos() * inv, r * t.cos() * inv, r * t.sin()]);
            }
        }
        MeridianPatch::new(sig, rho, pos, params.p, params.q, 1.0).unwrap()
    }

    #[test]
    fn cylinder_over_cone_is_minimal() {
        let patch = cylinder_patch(81, 41, 1.0);
        for i in (2..79).step_by(7) {
            for j in (2..39).step_by(5) {
                assert!(
                    patch.mean_curvature(i, j).unwrap().abs() < 1e-5,
                    "cone not minimal at ({i},{j}): {}",
                    patch.mean_curvature(i, j).unwrap()
                );
            }
        }
    }

    #[test]
    fn seven_sphere_as_patch() {
        // profile: (u,v) quarter circle x trivial y; generates S^7 x R... use
        // the sphere radius R in the (u,v) plane, independent of b = y.
        let params = crate::params::ConeParams::new(3, 3).unwrap();
        let phis = linspace(0.4, 1.1, 31);
        let ys = linspace(-0.5, 0.5, 31);
        let radius = 1.7;
        let mut pos = Vec::new();
        for &ph in &phis {
            for &y in &ys {
                pos.push([radius * ph.cos(), radius * ph.sin(), y]);
            }
        }
        let patch = MeridianPatch::new(phis, ys, pos, params.p, params.q, 1.0).unwrap();
        let m = patch.mean_curvature(15, 15).unwrap();
        // S^7 x R in R^9: |H| = 7/R
        assert!((m.abs() - 7.0 / radius).abs() < 1e-7, "m = {m}");
    }

    #[test]
    fn jacobi_of_axis_distance_field_vanishes_on_cylinder() {
        // L_{C x R}(r^{-2}) = 0 for r the distance from the singular ray;
        // the discrete residual is pure truncation and drops at 4th order.
        let mut centers = Vec::new();
        for &(nt, nr) in &[(81usize, 41usize), (161, 81)] {
            let patch = cylinder_patch(nt, nr, 0.9);
            let (na, nb) = (patch.na(), patch.nb());
            let mut field = vec![0.0; na * nb];
            for i in 0..na {
                for j in 0..nb {
                    let p = patch.at(i, j);
                    field[i * nb + j] = 1.0 / (p[0] * p[0] + p[1] * p[1]);
                }
            }
            let l = patch.jacobi_apply(&field, 1e-7).unwrap();
            for i in (6..na - 6).step_by(9) {
                for j in (6..nb - 6).step_by(6) {
                    assert!(
                        l[i * nb + j].abs() < 2e-2,
                        "L r^-2 = {} at ({i},{j})",
                        l[i * nb + j]
                    );
                }
            }
            centers.push(l[(na / 2) * nb + nb / 2].abs());
        }
        assert!(
            centers[1] < centers[0] / 8.0,
            "residual not dropping at high order: {centers:?}"
        );
    }
}

