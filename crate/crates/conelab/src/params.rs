//! Cone parameters for the equivariant reduction over `S^p x S^q` links.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of the minimal cone `C(S^p x S^q)` and its cylinder `C x R`.
///
/// Every computation in the crate is parametrized by one of these. The growth
/// rate `mu` of the radial Jacobi field and the foliation exponent
/// `w = 1 - mu` are derived from the link spectrum, not hard-coded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub p: u32,
    pub q: u32,
    /// `p + q + 2`: dimension of the ambient space of the cylinder `C x R`.
    pub ambient_dim: u32,
    /// `p + q + 1`: dimension of the cone `C`.
    pub cone_dim: u32,
    /// Radii `(sqrt(p/(p+q)), sqrt(q/(p+q)))` of the two sphere factors of the
    /// minimal link.
    pub link_radii: (f64, f64),
    /// Larger indicial root attached to the lowest link eigenvalue; the
    /// Hardt-Simon smoothing is asymptotically a graph of `r^mu` over `C`.
    pub mu: f64,
    /// Foliation exponent `w = 1 - mu` (`lambda^{1/w} H` sweeps a foliation).
    pub w_exponent: f64,
}

impl ConeParams {
    pub fn new(p: u32, q: u32) -> Result<Self> {
        if p < 2 || q < 2 {
            return Err(Error::InvalidInput(format!(
                "sphere dimensions must be >= 2, got ({p},{q})"
            )));
        }
        let n = (p + q) as f64;
        let link_radii = ((p as f64 / n).sqrt(), (q as f64 / n).sqrt());
        let cone_dim = p + q + 1;
        let shift = (cone_dim as f64 - 2.0) / 2.0;
        // lowest eigenvalue of -L on the link is -|A|^2
        let lambda0 = -Self::second_fundamental_norm_sq(p, q, link_radii);
        let disc = shift * shift + lambda0;
        if disc < 0.0 {
            return Err(Error::InvalidInput(format!(
                "cone C(S^{p} x S^{q}) has complex indicial roots"
            )));
        }
        let mu = -shift + disc.sqrt();
        Ok(ConeParams {
            p,
            q,
            ambient_dim: p + q + 2,
            cone_dim,
            link_radii,
            mu,
            w_exponent: 1.0 - mu,
        })
    }

    /// `|A|^2` of the minimal link `S^p(a) x S^q(b)` inside the unit sphere,
    /// from the principal curvatures `-b/a` (p times) and `a/b` (q times) of
    /// the Clifford-type embedding.
    fn second_fundamental_norm_sq(p: u32, q: u32, (a, b): (f64, f64)) -> f64 {
        p as f64 * (b / a).powi(2) + q as f64 * (a / b).powi(2)
    }

    /// `|A|^2` of this cone's link.
    pub fn link_shape_norm_sq(&self) -> f64 {
        Self::second_fundamental_norm_sq(self.p, self.q, self.link_radii)
    }

    /// Volume of the link `S^p(a) x S^q(b)` (the constant `c_5`).
    pub fn link_volume(&self) -> f64 {
        let (a, b) = self.link_radii;
        unit_sphere_volume(self.p) * a.powi(self.p as i32)
            * unit_sphere_volume(self.q)
            * b.powi(self.q as i32)
    }

    /// Product of unit sphere volumes, the weight constant in
    /// `Area = c(p,q) * int u^p v^q ds`.
    pub fn orbit_volume_constant(&self) -> f64 {
        unit_sphere_volume(self.p) * unit_sphere_volume(self.q)
    }

    pub fn is_symmetric(&self) -> bool {
        self.p == self.q
    }
}

/// Volume of the unit n-sphere `S^n`.
pub fn unit_sphere_volume(n: u32) -> f64 {
    let n = n as f64;
    let half = (n + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / crate::numerics::ln_gamma(half).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn simons_cone_parameters() {
        let p = ConeParams::new(3, 3).unwrap();
        assert_eq!(p.ambient_dim, 8);
        assert_eq!(p.cone_dim, 7);
        assert!((p.mu + 2.0).abs() < 1e-14);
        assert!((p.w_exponent - 3.0).abs() < 1e-14);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((p.link_radii.0 - inv_sqrt2).abs() < 1e-15);
        assert!((p.link_radii.1 - inv_sqrt2).abs() < 1e-15);
        assert!((p.link_shape_norm_sq() - 6.0).abs() < 1e-13);
        // mu lies in ((3-n)/2, 0) with n the ambient dimension
        assert!(p.mu > (3.0 - p.ambient_dim as f64) / 2.0 && p.mu < 0.0);
    }

    #[test]
    fn s2s4_cone_has_same_mu() {
        let p = ConeParams::new(2, 4).unwrap();
        assert!((p.link_shape_norm_sq() - 6.0).abs() < 1e-13);
        assert!((p.mu + 2.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_volumes() {
        assert!((unit_sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((unit_sphere_volume(2) - 4.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn link_volume_is_product_of_sphere_volumes() {
        // (2 pi^2 2^{-3/2})^2 = pi^4 / 2 for the Simons cone
        let p = ConeParams::new(3, 3).unwrap();
        assert!((p.link_volume() - PI.powi(4) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_low_dimensions() {
        assert!(ConeParams::new(1, 5).is_err());
    }
}
