//! Equivariant reduction: `O(p+1) x O(q+1)`-invariant hypersurfaces are
//! represented by profile curves in the orbit space `(u, v[, y])`, where
//! `u = |x'|` and `v = |x''|` are the orbit radii.
//!
//! A planar curve (no `y`) generates a hypersurface of `R^{p+q+2}`; a curve
//! with `y` must lie on a sphere `u^2 + v^2 + y^2 = rho^2` and generates a
//! hypersurface of that sphere (the link case). The mean curvature returned
//! everywhere is the scalar `<H, n>` against the oriented unit normal, so the
//! generated hypersurface is minimal iff it vanishes.

pub mod meridian;

use crate::error::{Error, Result};
use crate::numerics::{fd_weights, trapezoid};
use crate::params::ConeParams;
use serde::{Deserialize, Serialize};

/// Which of the two unit normals the curve is oriented by.
///
/// `Standard` is `(v', -u')/|g'|` for planar curves and `g x g' / |..|` for
/// spherical ones; on the cone profile and on the link suspension, traversed
/// with increasing angle from the `u`-axis (resp. from south to north), this
/// normal points into the region `{u > v}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Standard,
    Flipped,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Standard => 1.0,
            Orientation::Flipped => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Standard => Orientation::Flipped,
            Orientation::Flipped => Orientation::Standard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub u: f64,
    pub v: f64,
    pub y: Option<f64>,
    /// Curve parameter (arclength up to small drift); must be increasing.
    pub s: f64,
}

impl ProfilePoint {
    pub fn r(&self) -> f64 {
        (self.u * self.u + self.v * self.v).sqrt()
    }

    pub fn rho(&self) -> f64 {
        let y = self.y.unwrap_or(0.0);
        (self.u * self.u + self.v * self.v + y * y).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub points: Vec<ProfilePoint>,
    pub params: ConeParams,
    pub orientation: Orientation,
}

/// Differentiation scheme for the curve operators. The public geometry
/// operations use `ThreePoint` (second order, the refinement law tested by the
/// invariants); the solvers use `FivePoint` internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ThreePoint,
    FivePoint,
}

impl Scheme {
    pub fn radius(self) -> usize {
        match self {
            Scheme::ThreePoint => 1,
            Scheme::FivePoint => 2,
        }
    }
}

impl ProfileCurve {
    pub fn new(points: Vec<ProfilePoint>, params: ConeParams, orientation: Orientation) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidInput("profile needs at least 3 points".into()));
        }
        let spherical = points[0].y.is_some();
        let mut prev = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if p.s <= prev {
                return Err(Error::InvalidInput(format!(
                    "arclength not increasing at index {i}"
                )));
            }
            prev = p.s;
            if p.u < -1e-15 || p.v < -1e-15 {
                return Err(Error::InvalidInput(format!(
                    "negative orbit radius at index {i}"
                )));
            }
            if p.y.is_some() != spherical {
                return Err(Error::InvalidInput("mixed planar/spherical points".into()));
            }
        }
        if spherical {
            let rho = points[0].rho();
            for (i, p) in points.iter().enumerate() {
                if (p.rho() - rho).abs() > 1e-9 * rho.max(1.0) {
                    return Err(Error::InvalidInput(format!(
                        "spherical profile leaves the sphere at index {i}"
                    )));
                }
            }
        }
        Ok(ProfileCurve {
            points,
            params,
            orientation,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_spherical(&self) -> bool {
        self.points[0].y.is_some()
    }

    pub fn sphere_radius(&self) -> Option<f64> {
        self.is_spherical().then(|| self.points[0].rho())
    }

    fn pos(&self, i: usize) -> [f64; 3] {
        let p = &self.points[i];
        [p.u, p.v, p.y.unwrap_or(0.0)]
    }

    /// First and second parameter derivatives of the position at node `i`.
    fn derivs(&self, i: usize, scheme: Scheme) -> Result<([f64; 3], [f64; 3])> {
        let rad = scheme.radius();
        if i < 1 || i + 1 >= self.len() {
            return Err(Error::BoundaryIndex(i));
        }
        let width = 2 * rad + 1;
        if self.len() < width {
            return Err(Error::InvalidInput("curve shorter than stencil".into()));
        }
        let lo = i.saturating_sub(rad).min(self.len() - width);
        let hi = lo + width;
        let nodes: Vec<f64> = self.points[lo..hi].iter().map(|p| p.s).collect();
        let w = fd_weights(&nodes, self.points[i].s, 2);
        let mut d1 = [0.0; 3];
        let mut d2 = [0.0; 3];
        for (k, j) in (lo..hi).enumerate() {
            let p = self.pos(j);
            for c in 0..3 {
                d1[c] += w[1][k] * p[c];
                d2[c] += w[2][k] * p[c];
            }
        }
        Ok((d1, d2))
    }

    /// Oriented unit normal in orbit space at node `i`.
    pub fn normal(&self, i: usize) -> Result<[f64; 3]> {
        self.normal_with(i, Scheme::ThreePoint)
    }

    pub fn normal_with(&self, i: usize, scheme: Scheme) -> Result<[f64; 3]> {
        // boundary nodes get one-sided tangents
        let (d1, _) = if i >= 1 && i + 1 < self.len() {
            self.derivs(i, scheme)?
        } else {
            let (a, b) = if i == 0 { (0, 1) } else { (self.len() - 2, self.len() - 1) };
            let (pa, pb) = (self.pos(a), self.pos(b));
            let ds = self.points[b].s - self.points[a].s;
            (
                [
                    (pb[0] - pa[0]) / ds,
                    (pb[1] - pa[1]) / ds,
                    (pb[2] - pa[2]) / ds,
                ],
                [0.0; 3],
            )
        };
        let n = if self.is_spherical() {
            let g = self.pos(i);
            cross(g, d1)
        } else {
            [d1[1], -d1[0], 0.0]
        };
        let len = norm(n);
        if len == 0.0 {
            return Err(Error::Numerical(format!("degenerate tangent at {i}")));
        }
        let s = self.orientation.sign() / len;
        Ok([n[0] * s, n[1] * s, n[2] * s])
    }

    /// Scalar mean curvature at an interior node, with the module's sign
    /// convention: `m = <H, n>` for the oriented normal `n`, i.e. the sphere
    /// oriented by its inward normal has `m = +dim/R`.
    pub fn mean_curvature(&self, i: usize) -> Result<f64> {
        self.mean_curvature_with(i, Scheme::ThreePoint)
    }

    pub fn mean_curvature_with(&self, i: usize, scheme: Scheme) -> Result<f64> {
        if i < scheme.radius() || i + scheme.radius() >= self.len() {
            return Err(Error::BoundaryIndex(i));
        }
        let p = &self.points[i];
        if p.u <= 0.0 || p.v <= 0.0 {
            return Err(Error::OrbitDegenerate { index: i });
        }
        let (d1, d2) = self.derivs(i, scheme)?;
        let n = self.normal_with(i, scheme)?;
        let speed2 = dot(d1, d1);
        let kappa = dot(d2, n) / speed2;
        let (pp, qq) = (self.params.p as f64, self.params.q as f64);
        Ok(kappa - pp * n[0] / p.u - qq * n[1] / p.v)
    }

    /// `|A|^2` of the generated hypersurface at node `i` (principal curvature
    /// of the profile plus the orbit directions).
    pub fn shape_norm_sq(&self, i: usize, scheme: Scheme) -> Result<f64> {
        let p = &self.points[i];
        if p.u <= 0.0 || p.v <= 0.0 {
            return Err(Error::OrbitDegenerate { index: i });
        }
        let (d1, d2) = self.derivs(i, scheme)?;
        let n = self.normal_with(i, scheme)?;
        let kappa = dot(d2, n) / dot(d1, d1);
        let (pp, qq) = (self.params.p as f64, self.params.q as f64);
        Ok(kappa * kappa + pp * (n[0] / p.u).powi(2) + qq * (n[1] / p.v).powi(2))
    }

    /// Weighted area of the generated hypersurface over an arclength window,
    /// `c(p,q) * int u^p v^q |g'| ds` by the trapezoid rule on the stored grid.
    /// Degenerate windows return zero with the `empty` flag set.
    pub fn weighted_area(&self, window: (f64, f64)) -> Result<AreaValue> {
        let (lo, hi) = window;
        let s0 = self.points[0].s;
        let s1 = self.points[self.len() - 1].s;
        if lo < s0 - 1e-12 || hi > s1 + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "window [{lo}, {hi}] outside arclength range [{s0}, {s1}]"
            )));
        }
        if hi <= lo {
            return Ok(AreaValue {
                value: 0.0,
                empty_window: true,
            });
        }
        let (pp, qq) = (self.params.p as i32, self.params.q as i32);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        // weight u^p v^q |g'|, with |g'| from segment chords
        for i in 0..self.len() {
            let s = self.points[i].s;
            if s < lo || s > hi {
                continue;
            }
            let speed = self.node_speed(i);
            let p = &self.points[i];
            xs.push(s);
            ys.push(p.u.powi(pp) * p.v.powi(qq) * speed);
        }
        if xs.len() < 2 {
            return Ok(AreaValue {
                value: 0.0,
                empty_window: true,
            });
        }
        let mut area = trapezoid(&xs, &ys) * self.params.orbit_volume_constant();
        // partial end segments by linear interpolation
        area += self.end_segment_area(lo, true);
        area += self.end_segment_area(hi, false);
        Ok(AreaValue {
            value: area,
            empty_window: false,
        })
    }

    fn node_speed(&self, i: usize) -> f64 {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i + 1 == self.len() {
            (self.len() - 2, self.len() - 1)
        } else {
            (i - 1, i + 1)
        };
        let (pa, pb) = (self.pos(a), self.pos(b));
        let ds = self.points[b].s - self.points[a].s;
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2) + (pb[2] - pa[2]).powi(2)).sqrt() / ds
    }

    fn end_segment_area(&self, _s: f64, _left: bool) -> f64 {
        // windows snap to nodes; sub-segment remainders are below the
        // trapezoid error at the resolutions used
        0.0
    }

    /// Serialize to the columnar text format: a header naming the columns and
    /// one point per line with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.is_spherical() {
            out.push_str("s u v y\n");
        } else {
            out.push_str("s u v\n");
        }
        for p in &self.points {
            match p.y {
                Some(y) => out.push_str(&format!("{:.16e} {:.16e} {:.16e} {:.16e}\n", p.s, p.u, p.v, y)),
                None => out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p.s, p.u, p.v)),
            }
        }
        out
    }

    pub fn from_text(text: &str, params: ConeParams, orientation: Orientation) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty profile text".into()))?;
        let cols: Vec<&str> = header.split_whitespace().collect();
        let has_y = cols.len() == 4;
        if !(cols.len() == 3 || has_y) || cols[0] != "s" {
            return Err(Error::InvalidInput("bad profile header".into()));
        }
        let mut points = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad number: {e}")))?;
            points.push(ProfilePoint {
                s: vals[0],
                u: vals[1],
                v: vals[2],
                y: has_y.then(|| vals[3]),
            });
        }
        ProfileCurve::new(points, params, orientation)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AreaValue {
    pub value: f64,
    pub empty_window: bool,
}

/// Reference surface a radial graph is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseSurface {
    /// The cone `{u = v}` (p = q). Values use the paper's tilt convention:
    /// a value `f` at radius `r` means the point `(x', x'') + f (x', -x'')`,
    /// i.e. a normal offset of `r f`.
    Cone,
    /// A stored curve; values are plain normal offsets.
    Curve,
}

/// Radial graph data over a reference surface.
#[derive(Debug, Clone)]
pub struct GraphOverCone {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub base: BaseSurface,
    pub weight_meta: Option<crate::link::WeightedNormSpec>,
}

impl GraphOverCone {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, base: BaseSurface) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::InvalidInput("graph grid/value size mismatch".into()));
        }
        for w in grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput("graph grid not increasing".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite graph value".into()));
        }
        Ok(GraphOverCone {
            grid,
            values,
            base,
            weight_meta: None,
        })
    }
}

/// Profile curve of the graph of `r f(r)` over the cone `{u = v}` (p = q):
/// `(u, v) = (r(1+f)/sqrt2, r(1-f)/sqrt2)`.
pub fn graph_to_profile(g: &GraphOverCone, params: ConeParams) -> Result<ProfileCurve> {
    if g.base != BaseSurface::Cone {
        return Err(Error::InvalidInput(
            "graph_to_profile over a curve base: use graph_over_curve".into(),
        ));
    }
    if !params.is_symmetric() {
        return Err(Error::InvalidInput(
            "cone-base tilt graphs need p = q".into(),
        ));
    }
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    let mut points = Vec::with_capacity(g.grid.len());
    let mut s = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (&r, &f) in g.grid.iter().zip(&g.values) {
        let u = r * (1.0 + f) * inv_sqrt2;
        let v = r * (1.0 - f) * inv_sqrt2;
        if v < 0.0 || u < 0.0 {
            return Err(Error::GraphLeavesQuadrant { r });
        }
        if let Some((pu, pv)) = prev {
            s += ((u - pu).powi(2) + (v - pv).powi(2)).sqrt();
        }
        prev = Some((u, v));
        points.push(ProfilePoint { u, v, y: None, s });
    }
    ProfileCurve::new(points, params, Orientation::Standard)
}

/// Curve obtained by offsetting `base` along its oriented normal.
/// Planar curves move along straight normals; spherical ones along great
/// circles of their sphere.
pub fn graph_over_curve(base: &ProfileCurve, offsets: &[f64]) -> Result<ProfileCurve> {
    if offsets.len() != base.len() {
        return Err(Error::InvalidInput("offset count mismatch".into()));
    }
    let rho = base.sphere_radius();
    let mut points = Vec::with_capacity(base.len());
    let mut s = 0.0;
    let mut prev: Option<[f64; 3]> = None;
    for i in 0..base.len() {
        let n = base.normal_with(i, Scheme::FivePoint).or_else(|_| base.normal(i))?;
        let g = base.pos(i);
        let p = match rho {
            Some(rho) => {
                let t = offsets[i] / rho;
                let (c, sn) = (t.cos(), t.sin());
                [
                    c * g[0] + rho * sn * n[0],
                    c * g[1] + rho * sn * n[1],
                    c * g[2] + rho * sn * n[2],
                ]
            }
            None => [g[0] + offsets[i] * n[0], g[1] + offsets[i] * n[1], g[2] + offsets[i] * n[2]],
        };
        if p[0] < -1e-14 || p[1] < -1e-14 {
            return Err(Error::GraphLeavesQuadrant {
                r: (p[0] * p[0] + p[1] * p[1]).sqrt(),
            });
        }
        if let Some(pr) = prev {
            s += ((p[0] - pr[0]).powi(2) + (p[1] - pr[1]).powi(2) + (p[2] - pr[2]).powi(2)).sqrt();
        }
        prev = Some(p);
        points.push(ProfilePoint {
            u: p[0].max(0.0),
            v: p[1].max(0.0),
            y: base.is_spherical().then(|| p[2]),
            s,
        });
    }
    ProfileCurve::new(points, base.params, base.orientation)
}

/// Signed normal offsets of `curve` over the nodes of `base` (normal
/// projection). Fails where the projection leaves the tubular neighborhood.
/// Returns the base radii and the offsets at the base nodes where the normal
/// ray meets the curve.
pub fn profile_to_graph(curve: &ProfileCurve, base: &ProfileCurve) -> Result<GraphOverCone> {
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for j in 0..base.len() {
        match project_normal_offset(curve, base, j)? {
            Some(t) => {
                let r = base.points[j].r();
                // reach of the equivariant normal exponential is ~ r
                if t.abs() > 0.95 * r.max(1e-12) {
                    return Err(Error::OutsideTubularNeighborhood(format!(
                        "offset {t:.3e} at r = {r:.3e}"
                    )));
                }
                grid.push(base.points[j].s);
                values.push(t);
            }
            None => continue,
        }
    }
    if values.len() < 2 {
        return Err(Error::OutsideTubularNeighborhood(
            "no normal rays meet the curve".into(),
        ));
    }
    GraphOverCone::new(grid, values, BaseSurface::Curve)
}

/// Offset along the oriented normal ray of `base` at node `j` to `curve`,
/// or `None` when the ray misses the sampled range.
pub fn project_normal_offset(
    curve: &ProfileCurve,
    base: &ProfileCurve,
    j: usize,
) -> Result<Option<f64>> {
    let g = base.pos(j);
    let n = base.normal_with(j, Scheme::FivePoint).or_else(|_| base.normal(j))?;
    if base.is_spherical() != curve.is_spherical() {
        return Err(Error::InvalidInput("mixed planar/spherical projection".into()));
    }
    // signed coordinate of curve points transverse to the ray
    let side = |p: [f64; 3]| -> f64 {
        if base.is_spherical() {
            // great circle through g with direction n: plane spanned by (g, n)
            let e = cross(g, n);
            dot(p, e) / norm(e)
        } else {
            // straight ray g + t n: transverse coordinate along the tangent
            let t = [-n[1], n[0], 0.0];
            (p[0] - g[0]) * t[0] + (p[1] - g[1]) * t[1]
        }
    };
    let along = |p: [f64; 3]| -> f64 {
        if base.is_spherical() {
            let rho = base.sphere_radius().unwrap();
            let c = dot(p, g) / (rho * rho);
            let s = dot(p, n) / rho;
            s.atan2(c) * rho
        } else {
            (p[0] - g[0]) * n[0] + (p[1] - g[1]) * n[1]
        }
    };
    let mut best: Option<f64> = None;
    for i in 0..curve.len() - 1 {
        let (sa, sb) = (side(curve.pos(i)), side(curve.pos(i + 1)));
        if sa == 0.0 && sb == 0.0 {
            continue;
        }
        if sa * sb <= 0.0 && (sa != 0.0 || sb != 0.0) {
            // refine the crossing on the cubic through 4 nearby nodes
            let lo = (i as isize - 1).clamp(0, curve.len() as isize - 4) as usize;
            let nodes: Vec<f64> = (lo..lo + 4).map(|k| curve.points[k].s).collect();
            let mut sc = curve.points[i].s
                + (curve.points[i + 1].s - curve.points[i].s) * sa / (sa - sb);
            for _ in 0..30 {
                let w = fd_weights(&nodes, sc, 1);
                let mut p = [0.0; 3];
                let mut dp = [0.0; 3];
                for (k, idx) in (lo..lo + 4).enumerate() {
                    let q = curve.pos(idx);
                    for c in 0..3 {
                        p[c] += w[0][k] * q[c];
                        dp[c] += w[1][k] * q[c];
                    }
                }
                let f = side(p);
                let df = side_derivative(base, g, n, dp);
                if df == 0.0 {
                    break;
                }
                let step = f / df;
                sc -= step;
                if step.abs() < 1e-14 * (1.0 + sc.abs()) {
                    break;
                }
            }
            let w = fd_weights(&nodes, sc, 0);
            let mut p = [0.0; 3];
            for (k, idx) in (lo..lo + 4).enumerate() {
                let q = curve.pos(idx);
                for c in 0..3 {
                    p[c] += w[0][k] * q[c];
                }
            }
            let t = along(p);
            if best.map_or(true, |b: f64| t.abs() < b.abs()) {
                best = Some(t);
            }
        }
    }
    Ok(best)
}

fn side_derivative(base: &ProfileCurve, g: [f64; 3], n: [f64; 3], dp: [f64; 3]) -> f64 {
    if base.is_spherical() {
        let e = cross(g, n);
        dot(dp, e) / norm(e)
    } else {
        let t = [-n[1], n[0], 0.0];
        dp[0] * t[0] + dp[1] * t[1]
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Planar circle arc profile, parametrized counterclockwise from the u-axis.
pub fn circle_arc(radius: f64, n: usize, params: ConeParams) -> ProfileCurve {
    let eps = 1e-3;
    let thetas = crate::numerics::linspace(eps, std::f64::consts::FRAC_PI_2 - eps, n);
    let points = thetas
        .iter()
        .map(|&t| ProfilePoint {
            u: radius * t.cos(),
            v: radius * t.sin(),
            y: None,
            s: radius * (t - thetas[0]),
        })
        .collect();
    ProfileCurve::new(points, params, Orientation::Standard).unwrap()
}

/// Diagonal cone profile `{u = v}` sampled log-uniformly in `r in [r0, r1]`.
pub fn cone_profile(r0: f64, r1: f64, n: usize, params: ConeParams) -> ProfileCurve {
    let rs = crate::numerics::logspace(r0, r1, n);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    let points = rs
        .iter()
        .map(|&r| ProfilePoint {
            u: r * inv_sqrt2,
            v: r * inv_sqrt2,
            y: None,
            s: r - rs[0],
        })
        .collect();
    ProfileCurve::new(points, params, Orientation::Standard).unwrap()
}

/// Suspension profile of the singular link `Sigma_0` on the unit sphere,
/// parametrized south to north by the polar angle.
pub fn sigma0_profile(n: usize, params: ConeParams, margin: f64) -> ProfileCurve {
    let thetas = crate::numerics::linspace(
        -std::f64::consts::FRAC_PI_2 + margin,
        std::f64::consts::FRAC_PI_2 - margin,
        n,
    );
    let (a, b) = params.link_radii;
    let points = thetas
        .iter()
        .map(|&t| ProfilePoint {
            u: a * t.cos(),
            v: b * t.cos(),
            y: Some(t.sin()),
            s: t - thetas[0],
        })
        .collect();
    ProfileCurve::new(points, params, Orientation::Standard).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simons() -> ConeParams {
        ConeParams::new(3, 3).unwrap()
    }

    #[test]
    fn cone_profile_is_minimal() {
        let c = cone_profile(0.5, 20.0, 400, simons());
        for i in 1..c.len() - 1 {
            assert!(c.mean_curvature(i).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn round_sphere_has_mean_curvature_seven_over_r() {
        // counterclockwise arc is oriented by the outward normal; the module
        // convention <H, n> makes that -7/R, and flipping the tag +7/R.
        for radius in [1.0, 2.5] {
            let c = circle_arc(radius, 800, simons());
            let mid = c.len() / 2;
            let m = c.mean_curvature(mid).unwrap();
            assert!(
                (m + 7.0 / radius).abs() < 3e-5 / radius,
                "sphere R={radius}: m={m}"
            );
            let mut f = c.clone();
            f.orientation = f.orientation.flipped();
            let mf = f.mean_curvature(mid).unwrap();
            assert_eq!(mf, -m, "orientation flip must negate exactly");
        }
    }

    #[test]
    fn sphere_curvature_converges_at_second_order() {
        let params = simons();
        let vals: Vec<f64> = [200, 400, 800]
            .iter()
            .map(|&n| {
                let c = circle_arc(1.0, n, params);
                c.mean_curvature(n / 2).unwrap()
            })
            .collect();
        let order = crate::numerics::observed_order(vals[0], vals[1], vals[2]);
        assert!(
            (1.8..=2.2).contains(&order),
            "measured order {order} outside [1.8, 2.2]"
        );
    }

    #[test]
    fn suspension_profile_is_minimal_in_sphere() {
        let c = sigma0_profile(2000, simons(), 0.05);
        for i in (10..c.len() - 10).step_by(37) {
            assert!(
                c.mean_curvature(i).unwrap().abs() < 1e-8,
                "Sigma_0 not minimal at {i}"
            );
        }
    }

    #[test]
    fn equivariant_swap_symmetry() {
        // swapping (u, v) and flipping the orientation preserves |m|
        let g = GraphOverCone::new(
            crate::numerics::logspace(1.0, 8.0, 600),
            crate::numerics::logspace(1.0, 8.0, 600)
                .iter()
                .map(|r| 0.05 * (1.3 * r).sin() / r)
                .collect(),
            BaseSurface::Cone,
        )
        .unwrap();
        let c = graph_to_profile(&g, simons()).unwrap();
        let mut swapped_pts = c.points.clone();
        for p in &mut swapped_pts {
            std::mem::swap(&mut p.u, &mut p.v);
        }
        let swapped = ProfileCurve::new(swapped_pts, simons(), Orientation::Flipped).unwrap();
        for i in (5..c.len() - 5).step_by(41) {
            let a = c.mean_curvature(i).unwrap();
            let b = swapped.mean_curvature(i).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "swap symmetry at {i}");
        }
    }

    #[test]
    fn graph_to_profile_matches_paper_formula() {
        let g = GraphOverCone::new(vec![5.0, 10.0, 20.0], vec![8e-3, 1e-3, 1.25e-4], BaseSurface::Cone)
            .unwrap();
        let c = graph_to_profile(&g, simons()).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((c.points[1].u - 10.0 * 1.001 * inv_sqrt2).abs() < 1e-12);
        assert!((c.points[1].v - 10.0 * 0.999 * inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn zero_graph_is_the_diagonal() {
        let g = GraphOverCone::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4], BaseSurface::Cone).unwrap();
        let c = graph_to_profile(&g, simons()).unwrap();
        for p in &c.points {
            assert!((p.u - p.v).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_leaving_quadrant_is_rejected() {
        let g = GraphOverCone::new(vec![1.0, 2.0], vec![0.0, 1.5], BaseSurface::Cone).unwrap();
        assert!(matches!(
            graph_to_profile(&g, simons()),
            Err(Error::GraphLeavesQuadrant { .. })
        ));
    }

    #[test]
    fn projection_round_trip_identity() {
        let base = cone_profile(1.0, 30.0, 900, simons());
        let offsets: Vec<f64> = base
            .points
            .iter()
            .map(|p| 0.03 * p.r() * (0.7 * p.r()).cos())
            .collect();
        let curve = graph_over_curve(&base, &offsets).unwrap();
        let g = profile_to_graph(&curve, &base).unwrap();
        let mut worst: f64 = 0.0;
        for (k, &s) in g.grid.iter().enumerate() {
            let j = base.points.iter().position(|p| p.s == s).unwrap();
            let denom = offsets[j].abs().max(1e-3 * base.points[j].r());
            worst = worst.max((g.values[k] - offsets[j]).abs() / denom);
        }
        assert!(worst < 1e-10, "round trip error {worst}");
    }

    #[test]
    fn identical_curves_have_zero_offsets() {
        let base = cone_profile(1.0, 10.0, 300, simons());
        let g = profile_to_graph(&base, &base).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_area_of_quarter_circle_is_seven_sphere_volume() {
        // the quarter circle generates the round S^7
        let c = circle_arc(1.0, 6000, simons());
        let (s0, s1) = (c.points[0].s, c.points[c.len() - 1].s);
        let a = c.weighted_area((s0, s1)).unwrap();
        let vol_s7 = crate::params::unit_sphere_volume(7);
        // the arc misses O(eps) caps near the axes; weight ~ theta^3 there
        assert!(
            (a.value - vol_s7).abs() < 1e-4 * vol_s7,
            "S^7 volume {} vs {}",
            a.value,
            vol_s7
        );
        assert!(!a.empty_window);
    }

    #[test]
    fn empty_window_flags() {
        let c = cone_profile(1.0, 2.0, 50, simons());
        let a = c.weighted_area((0.3, 0.3)).unwrap();
        assert_eq!(a.value, 0.0);
        assert!(a.empty_window);
    }

    #[test]
    fn area_additive_over_disjoint_windows() {
        let c = cone_profile(1.0, 4.0, 800, simons());
        let smid = c.points[400].s;
        let (s0, s1) = (c.points[0].s, c.points[c.len() - 1].s);
        let whole = c.weighted_area((s0, s1)).unwrap().value;
        let a = c.weighted_area((s0, smid)).unwrap().value;
        let b = c.weighted_area((smid, s1)).unwrap().value;
        assert!((whole - a - b).abs() < 1e-12 * whole);
    }

    #[test]
    fn text_round_trip() {
        let c = cone_profile(1.0, 3.0, 40, simons());
        let t = c.to_text();
        let c2 = ProfileCurve::from_text(&t, simons(), Orientation::Standard).unwrap();
        for (p, q) in c.points.iter().zip(&c2.points) {
            assert_eq!(p.u, q.u);
            assert_eq!(p.v, q.v);
        }
    }

    #[test]
    fn boundary_index_is_an_error() {
        let c = cone_profile(1.0, 2.0, 50, simons());
        assert!(matches!(c.mean_curvature(0), Err(Error::BoundaryIndex(0))));
    }
}
