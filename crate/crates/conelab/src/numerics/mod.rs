//! Shared numerical kernels: finite-difference weights on arbitrary stencils,
//! quadrature, cutoff functions, special functions and small fitting helpers.

pub mod banded;

use nalgebra::{DMatrix, DVector};

/// Finite-difference weights on an arbitrary 1-d stencil (Fornberg's algorithm).
///
/// Returns `w[d][j]`, the weight of `nodes[j]` in the approximation of the
/// `d`-th derivative at `x0`, for every `d <= max_order`.
pub fn fd_weights(nodes: &[f64], x0: f64, max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    assert!(n > max_order, "stencil too short for requested derivative");
    let m = max_order;
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Trapezoid rule on a non-uniform grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

/// Fourth-order composite quadrature on a non-uniform grid: each interval is
/// integrated from the cubic through the four nearest nodes.
pub fn integrate_cubic(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    if n < 4 {
        return trapezoid(xs, ys);
    }
    let mut acc = 0.0;
    for i in 1..n {
        let lo = (i as isize - 2).clamp(0, n as isize - 4) as usize;
        let sten = &xs[lo..lo + 4];
        let vals = &ys[lo..lo + 4];
        // integral of the Lagrange cubic over [x_{i-1}, x_i]
        for (j, &v) in vals.iter().enumerate() {
            acc += v * lagrange_integral(sten, j, xs[i - 1], xs[i]);
        }
    }
    acc
}

/// Integral of the `j`-th Lagrange basis polynomial on `nodes` over `[a, b]`.
fn lagrange_integral(nodes: &[f64], j: usize, a: f64, b: f64) -> f64 {
    // 4-point Gauss-Legendre is exact for the cubic basis polynomial.
    const GL_X: [f64; 4] = [
        -0.861136311594052575,
        -0.339981043584856265,
        0.339981043584856265,
        0.861136311594052575,
    ];
    const GL_W: [f64; 4] = [
        0.347854845137453857,
        0.652145154862546143,
        0.652145154862546143,
        0.347854845137453857,
    ];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (&x, &w) in GL_X.iter().zip(GL_W.iter()) {
        let t = mid + half * x;
        let mut l = 1.0;
        for (k, &nk) in nodes.iter().enumerate() {
            if k != j {
                l *= (t - nk) / (nodes[j] - nk);
            }
        }
        acc += w * l;
    }
    acc * half
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Newton from the Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quintic smoothstep cutoff: `chi(s) = 1` for `s <= 1`, `0` for `s >= 2`,
/// with two continuous derivatives at the junctions.
pub fn chi(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

pub fn chi_d1(s: f64) -> f64 {
    if !(1.0..2.0).contains(&s) {
        0.0
    } else {
        let t = s - 1.0;
        -(30.0 * t * t - 60.0 * t * t * t + 30.0 * t * t * t * t)
    }
}

pub fn chi_d2(s: f64) -> f64 {
    if !(1.0..2.0).contains(&s) {
        0.0
    } else {
        let t = s - 1.0;
        -(60.0 * t - 180.0 * t * t + 120.0 * t * t * t)
    }
}

/// ln Gamma via the Lanczos approximation (g = 7, 9 terms), ~1e-13 relative.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `int_{-pi/2}^{pi/2} cos^a sin^b` for real `a > -1` and even integer `b >= 0`
/// (zero for odd `b`), via the Beta function.
pub fn cos_sin_moment(a: f64, b: u32) -> f64 {
    if b % 2 == 1 {
        return 0.0;
    }
    let p = (a + 1.0) / 2.0;
    let q = (b as f64 + 1.0) / 2.0;
    (ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)).exp()
}

/// Least squares fit of `ys` against the given basis columns. Returns the
/// coefficients, the rms residual and the condition number of the design.
pub fn lstsq(columns: &[Vec<f64>], ys: &[f64]) -> (Vec<f64>, f64, f64) {
    let m = ys.len();
    let n = columns.len();
    let mut a = DMatrix::zeros(m, n);
    for (j, col) in columns.iter().enumerate() {
        assert_eq!(col.len(), m);
        for i in 0..m {
            a[(i, j)] = col[i];
        }
    }
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let sol = svd.solve(&b, smax * 1e-13).expect("svd solve");
    let resid = (&a * &sol - &b).norm() / (m as f64).sqrt();
    (sol.iter().copied().collect(), resid, cond)
}

/// Slope and intercept of the least-squares line through `(xs, ys)`, with the
/// standard error of the slope.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let dof = (xs.len().max(3) - 2) as f64;
    let se = (ss_res / dof / sxx).sqrt();
    (slope, intercept, se)
}

/// Observed convergence order from values at resolutions h, h/2, h/4.
pub fn observed_order(f_h: f64, f_h2: f64, f_h4: f64) -> f64 {
    ((f_h - f_h2).abs() / (f_h2 - f_h4).abs()).log2()
}

/// Log-spaced grid of `n` points between `a` and `b` (inclusive).
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Uniform grid of `n` points between `a` and `b` (inclusive).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_reproduce_uniform_stencils() {
        let w = fd_weights(&[-1.0, 0.0, 1.0], 0.0, 2);
        assert!((w[1][0] + 0.5).abs() < 1e-14);
        assert!((w[1][2] - 0.5).abs() < 1e-14);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn fd_weights_differentiate_polynomials_on_irregular_grids() {
        let nodes = [0.0, 0.13, 0.4, 0.55, 1.1];
        let w = fd_weights(&nodes, 0.4, 2);
        let f = |x: f64| 1.5 + 2.0 * x - 0.7 * x * x + 0.3 * x * x * x;
        let d1: f64 = nodes.iter().zip(&w[1]).map(|(&x, &c)| c * f(x)).sum();
        let d2: f64 = nodes.iter().zip(&w[2]).map(|(&x, &c)| c * f(x)).sum();
        assert!((d1 - (2.0 - 1.4 * 0.4 + 0.9 * 0.16)).abs() < 1e-11);
        assert!((d2 - (-1.4 + 1.8 * 0.4)).abs() < 1e-10);
    }

    #[test]
    fn cubic_quadrature_beats_trapezoid() {
        let xs = logspace(0.1, 2.0, 200);
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() / x).collect();
        let exact = 1.5054685156944178; // Si(2) - Si(0.1)
        assert!((integrate_cubic(&xs, &ys) - exact).abs() < 3e-9);
        assert!((trapezoid(&xs, &ys) - exact).abs() > 1e-7);
    }

    #[test]
    fn gauss_legendre_integrates_high_degree() {
        let (xs, ws) = gauss_legendre(24);
        let v: f64 = xs
            .iter()
            .zip(&ws)
            .map(|(&x, &w)| w * (2.0 * x).cos())
            .sum();
        assert!((v - (2.0f64).sin()).abs() < 1e-13);
    }

    #[test]
    fn chi_is_c2_with_unit_drop() {
        assert_eq!(chi(0.5), 1.0);
        assert_eq!(chi(2.5), 0.0);
        assert!(chi_d1(1.0 + 1e-9).abs() < 1e-6);
        assert!(chi_d1(2.0 - 1e-9).abs() < 1e-6);
        // integral of chi' over (1,2) is -1
        let xs = linspace(1.0, 2.0, 2001);
        let ys: Vec<f64> = xs.iter().map(|&s| chi_d1(s)).collect();
        assert!((integrate_cubic(&xs, &ys) + 1.0).abs() < 1e-10);
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(7.0) - (720.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cos_sin_moments_match_direct_quadrature() {
        let (xs, ws) = gauss_legendre(200);
        for &(a, b) in &[(6.0, 0u32), (2.3, 2u32), (0.0, 4u32), (6.0, 6u32)] {
            let half = std::f64::consts::FRAC_PI_2;
            let num: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| {
                    let t = half * x;
                    w * half * t.cos().powf(a) * t.sin().powi(b as i32)
                })
                .sum();
            assert!(
                (num - cos_sin_moment(a, b)).abs() < 1e-10,
                "moment a={a} b={b}"
            );
        }
    }

    #[test]
    fn lstsq_recovers_coefficients() {
        let xs = linspace(0.0, 1.0, 40);
        let c0: Vec<f64> = xs.iter().map(|_| 1.0).collect();
        let c1: Vec<f64> = xs.clone();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let (c, r, _) = lstsq(&[c0, c1], &ys);
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12);
        assert!(r < 1e-12);
    }
}
