//! Exact solution of the conjugate equation `∂ₓ²w + ∂_y(k(x,w)∂_y w) = 0`,
//! `k(x,z) = 2m(x²+z²)^{2m−1}`, defined implicitly by
//!
//! ```text
//! F(x,y,z) = z (x² + z²)^{m−1/2} + y = 0.
//! ```
//!
//! The solution is Hölder with exponent `1/(2m)` on the line `x = 0` and
//! not smoother, which is what makes it a useful reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::StructuredGrid;

/// Parameters of the implicit sharpness solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessExample {
    pub m: u32,
    /// Relative residual target `|F| ≤ newton_tol·|y|` of the root finder.
    pub newton_tol: f64,
    pub max_iters: usize,
}

impl SharpnessExample {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 {
            return param("sharpness example needs m >= 1");
        }
        Ok(Self {
            m,
            newton_tol: 1e-14,
            max_iters: 100,
        })
    }

    /// Exponent `1/(4m−2)` by which the super subordination condition fails.
    pub fn sharp_exponent(&self) -> f64 {
        1.0 / (4.0 * self.m as f64 - 2.0)
    }

    /// Hölder exponent `1/(2m)` of `w(0,·)`.
    pub fn holder_exponent(&self) -> f64 {
        1.0 / (2.0 * self.m as f64)
    }

    /// `F(x,y,z)`.
    pub fn implicit(&self, x: f64, y: f64, z: f64) -> f64 {
        z * (x * x + z * z).powf(self.m as f64 - 0.5) + y
    }

    /// `k(x,z) = 2m(x²+z²)^{2m−1}`.
    pub fn weight(&self, x: f64, z: f64) -> f64 {
        let m = self.m as i32;
        2.0 * m as f64 * (x * x + z * z).powi(2 * m - 1)
    }

    /// `F_z = (x²+z²)^{m−3/2}(x²+2mz²)`; zero only at `x = z = 0`.
    fn f_z(&self, x: f64, z: f64) -> f64 {
        let g = x * x + z * z;
        if g == 0.0 {
            return 0.0;
        }
        let m = self.m as f64;
        g.powf(m - 1.5) * (x * x + 2.0 * m * z * z)
    }
}

/// Solves `s (a² + s²)^{m−1/2} = b` for `s ≥ 0`, given `a, b ≥ 0`.
fn folded_root(ex: &SharpnessExample, a: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Ok(0.0);
    }
    let m = ex.m as f64;
    let a2 = a * a;
    let g = |s: f64| s * (a2 + s * s).powf(m - 0.5) - b;
    let dg = |s: f64| {
        let q = a2 + s * s;
        q.powf(m - 1.5) * (a2 + 2.0 * m * s * s)
    };

    // Both starting values bound the root from above: g(s) ≥ s^{2m} and
    // g(s) ≥ s·a^{2m−1}.
    let mut hi = b.powf(1.0 / (2.0 * m));
    if a > 0.0 {
        hi = hi.min(b / a.powf(2.0 * m - 1.0));
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let mut s = hi;
    for _ in 0..ex.max_iters {
        let r = g(s);
        if r.abs() <= ex.newton_tol * b {
            return Ok(s);
        }
        if r > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(s);
        }
        let d = dg(s);
        let newton = if d > 0.0 { s - r / d } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == s {
            return Ok(s);
        }
        s = next;
    }
    if g(s).abs() <= 1e3 * ex.newton_tol * b {
        return Ok(s);
    }
    Err(Error::RootNonConvergence {
        iters: ex.max_iters,
        lo,
        hi,
    })
}

/// The root `z = w(x,y)` of `F(x,y,z) = 0`.
///
/// Computed on `(|x|, |y|)` with the sign restored afterwards, so
/// `w(−x,y) = w(x,y)` and `w(x,−y) = −w(x,y)` hold exactly.
pub fn sharpness_w(ex: &SharpnessExample, x: f64, y: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite()) {
        return param(format!("sharpness_w: non-finite input ({x}, {y})"));
    }
    let s = folded_root(ex, x.abs(), y.abs())?;
    Ok(if y > 0.0 { -s } else { s })
}

/// Analytic gradient `(w_x, w_y)` from implicit differentiation.
pub fn sharpness_grad_w(ex: &SharpnessExample, x: f64, y: f64) -> Result<(f64, f64)> {
    let w = sharpness_w(ex, x, y)?;
    grad_at(ex, x, y, w)
}

fn grad_at(ex: &SharpnessExample, x: f64, y: f64, w: f64) -> Result<(f64, f64)> {
    let fz = ex.f_z(x, w);
    if fz == 0.0 {
        return Err(Error::Singular {
            x,
            y,
            what: "F_z vanishes at the origin",
        });
    }
    let m = ex.m as f64;
    let g = x * x + w * w;
    let fx = (2.0 * m - 1.0) * x * w * g.powf(m - 1.5);
    Ok((-fx / fz, -1.0 / fz))
}

/// Conjugate function `f(x,y) = x(x² + w²)^{m−1/2}`.
pub fn sharpness_conjugate_f(ex: &SharpnessExample, x: f64, y: f64) -> Result<f64> {
    let w = sharpness_w(ex, x, y)?;
    Ok(conjugate_at(ex, x, w))
}

fn conjugate_at(ex: &SharpnessExample, x: f64, w: f64) -> f64 {
    x * (x * x + w * w).powf(ex.m as f64 - 0.5)
}

/// Closed-form gradient `(f_x, f_y)` of the conjugate function.
pub fn sharpness_grad_f(ex: &SharpnessExample, x: f64, y: f64) -> Result<(f64, f64)> {
    let w = sharpness_w(ex, x, y)?;
    let (wx, wy) = grad_at(ex, x, y, w)?;
    let m = ex.m as f64;
    let g = x * x + w * w;
    let inner = x * (m - 0.5) * g.powf(m - 1.5);
    let fx = g.powf(m - 0.5) + inner * (2.0 * x + 2.0 * w * wx);
    let fy = inner * 2.0 * w * wy;
    Ok((fx, fy))
}

/// Pointwise residuals of the Cauchy–Riemann type system
/// `f_x = −2m(x²+w²)^{2m−1} w_y`, `f_y = w_x`, from analytic gradients.
pub fn analytic_cr_residual(ex: &SharpnessExample, x: f64, y: f64) -> Result<(f64, f64)> {
    let w = sharpness_w(ex, x, y)?;
    let (wx, wy) = grad_at(ex, x, y, w)?;
    let (fx, fy) = sharpness_grad_f(ex, x, y)?;
    Ok((fx + ex.weight(x, w) * wy, fy - wx))
}

/// Summary of the oracle checks on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Max-norm of the finite-difference CR residuals outside the excluded disc.
    pub cr_residual_max: f64,
    /// Trapezoidal `∫(w_x² + k w_y²)` over the grid box.
    pub energy: f64,
    /// `3m²|Ω|`.
    pub energy_bound: f64,
    /// Least-squares slope of `log|w(0,y)|` against `log|y|`.
    pub holder_slope: f64,
    /// `1/(2m)`.
    pub holder_target: f64,
}

/// `y = 2^{−k}` for `k = kmin..=kmax`.
pub fn dyadic_samples(kmin: i32, kmax: i32) -> Vec<f64> {
    (kmin..=kmax).map(|k| 2f64.powi(-k)).collect()
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fitted Hölder exponent of `y ↦ |w(0,y)|` over the given samples; the
/// smallest and largest sample are dropped before fitting.
pub fn holder_fit(ex: &SharpnessExample, ys: &[f64]) -> Result<f64> {
    let mut ys: Vec<f64> = ys.iter().map(|y| y.abs()).collect();
    if ys.iter().any(|&y| y == 0.0 || !y.is_finite()) {
        return param("Hölder samples must be finite and nonzero");
    }
    ys.sort_by(f64::total_cmp);
    if ys.len() < 4 {
        return param("Hölder fit needs at least 4 samples");
    }
    let kept = &ys[1..ys.len() - 1];
    let mut lx = Vec::with_capacity(kept.len());
    let mut ly = Vec::with_capacity(kept.len());
    for &y in kept {
        lx.push(y.ln());
        ly.push(sharpness_w(ex, 0.0, y)?.abs().ln());
    }
    Ok(ols_slope(&lx, &ly))
}

/// Derivative along `axis` at every node: centered in the interior,
/// one-sided second order on the boundary.
pub(crate) fn grid_derivative(grid: &StructuredGrid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.counts()[axis];
    let stride = grid.strides()[axis];
    let h = grid.spacing()[axis];
    (0..grid.len())
        .map(|p| {
            let i = grid.multi_index(p)[axis];
            if i == 0 {
                (-3.0 * u[p] + 4.0 * u[p + stride] - u[p + 2 * stride]) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * u[p] - 4.0 * u[p - stride] + u[p - 2 * stride]) / (2.0 * h)
            } else {
                (u[p + stride] - u[p - stride]) / (2.0 * h)
            }
        })
        .collect()
}

/// Finite-difference CR residual, energy integral and Hölder fit.
pub fn oracle_diagnostics(
    ex: &SharpnessExample,
    grid: &StructuredGrid,
    exclusion_radius: f64,
    holder_samples: &[f64],
) -> Result<DiagnosticsReport> {
    if grid.dim() != 2 {
        return param(format!("oracle diagnostics need a 2D grid, got {}D", grid.dim()));
    }
    if !(exclusion_radius > 0.0) {
        return param("exclusion radius must be positive");
    }
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|p| grid.coords(p)).collect();
    let wf: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|c| {
            let w = sharpness_w(ex, c[0], c[1])?;
            Ok((w, conjugate_at(ex, c[0], w)))
        })
        .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = wf.iter().map(|p| p.0).collect();
    let f: Vec<f64> = wf.iter().map(|p| p.1).collect();

    let wx = grid_derivative(grid, &w, 0);
    let wy = grid_derivative(grid, &w, 1);
    let fx = grid_derivative(grid, &f, 0);
    let fy = grid_derivative(grid, &f, 1);
    let mut cr_max = 0.0f64;
    for (p, c) in nodes.iter().enumerate() {
        if c[0].hypot(c[1]) < exclusion_radius {
            continue;
        }
        let r1 = fx[p] + ex.weight(c[0], w[p]) * wy[p];
        let r2 = fy[p] - wx[p];
        cr_max = cr_max.max(r1.abs()).max(r2.abs());
    }

    let density: Vec<f64> = nodes
        .par_iter()
        .zip(&w)
        .map(|(c, &wv)| match grad_at(ex, c[0], c[1], wv) {
            Ok((gx, gy)) => gx * gx + ex.weight(c[0], wv) * gy * gy,
            Err(_) => 0.0,
        })
        .collect();
    let energy = trapezoid(grid, &density);
    let m = ex.m as f64;

    Ok(DiagnosticsReport {
        cr_residual_max: cr_max,
        energy,
        energy_bound: 3.0 * m * m * grid.volume(),
        holder_slope: holder_fit(ex, holder_samples)?,
        holder_target: ex.holder_exponent(),
    })
}

/// Tensor-product trapezoidal rule over the grid box.
pub fn trapezoid(grid: &StructuredGrid, values: &[f64]) -> f64 {
    let cell: f64 = grid.spacing().iter().product();
    (0..grid.len())
        .map(|p| {
            let weight: f64 = grid
                .multi_index(p)
                .iter()
                .zip(grid.counts())
                .map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
                .product();
            weight * values[p]
        })
        .sum::<f64>()
        * cell
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(m: u32) -> SharpnessExample {
        SharpnessExample::new(m).unwrap()
    }

    /// Plain bisection on `F(x,y,·)` over a wide bracket.
    fn bisect(ex: &SharpnessExample, x: f64, y: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ex.implicit(x, y, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn root_at_zero_data() {
        for m in 1..=4 {
            for x in [-1.0, 0.0, 0.3] {
                assert_eq!(sharpness_w(&ex(m), x, 0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn magnitude_on_axis() {
        let w = sharpness_w(&ex(1), 0.0, 0.25).unwrap();
        assert!((w + 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_bisection() {
        let e = ex(2);
        let w = sharpness_w(&e, 0.3, 0.7).unwrap();
        assert!((w - bisect(&e, 0.3, 0.7)).abs() < 1e-12);
        assert!(e.implicit(0.3, 0.7, w).abs() < 1e-14);
    }

    #[test]
    fn gradient_on_zero_line() {
        let (wx, wy) = sharpness_grad_w(&ex(1), 0.4, 0.0).unwrap();
        assert_eq!(wx, 0.0);
        assert!((wy + 2.5).abs() < 1e-13);
        assert!(matches!(
            sharpness_grad_w(&ex(1), 0.0, 0.0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn gradient_matches_differences() {
        let e = ex(2);
        let (x, y, h) = (0.3, 0.5, 1e-5);
        let (wx, wy) = sharpness_grad_w(&e, x, y).unwrap();
        let w = |a, b| sharpness_w(&e, a, b).unwrap();
        let dx = (w(x + h, y) - w(x - h, y)) / (2.0 * h);
        let dy = (w(x, y + h) - w(x, y - h)) / (2.0 * h);
        assert!((wx - dx).abs() < 1e-7);
        assert!((wy - dy).abs() < 1e-7);
    }

    #[test]
    fn conjugate_values() {
        assert!((sharpness_conjugate_f(&ex(1), 0.5, 0.0).unwrap() - 0.25).abs() < 1e-15);
        for m in 1..=3 {
            assert_eq!(sharpness_conjugate_f(&ex(m), 0.0, 0.7).unwrap(), 0.0);
        }
        let e = ex(2);
        let (x, y) = (0.3, 0.7);
        let w = sharpness_w(&e, x, y).unwrap();
        let f = sharpness_conjugate_f(&e, x, y).unwrap();
        assert!((f - (-x * y / w)).abs() <= 1e-10 * f.abs());
    }

    #[test]
    fn conjugate_gradient_matches_differences() {
        let e = ex(3);
        let (x, y, h) = (-0.4, 0.2, 1e-5);
        let (fx, fy) = sharpness_grad_f(&e, x, y).unwrap();
        let f = |a, b| sharpness_conjugate_f(&e, a, b).unwrap();
        assert!((fx - (f(x + h, y) - f(x - h, y)) / (2.0 * h)).abs() < 1e-7);
        assert!((fy - (f(x, y + h) - f(x, y - h)) / (2.0 * h)).abs() < 1e-7);
    }

    #[test]
    fn extreme_ratios_converge() {
        for m in 1..=3 {
            let e = ex(m);
            for (x, y) in [(1.0, 1e-12), (1e-9, 1.0), (5.0, 1e-300), (1e-3, 1e-30)] {
                let w = sharpness_w(&e, x, y).unwrap();
                assert!(e.implicit(x, y, w).abs() <= 1e-12 * (1.0 + y));
            }
        }
    }

    #[test]
    fn trapezoid_integrates_bilinear_exactly() {
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 9).unwrap();
        let v = g.sample(|c| 1.0 + c[0] + 2.0 * c[0] * c[1]);
        assert!((trapezoid(&g, &v) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn holder_slope_is_exact_law() {
        for m in 1..=3 {
            let e = ex(m);
            let s = holder_fit(&e, &dyadic_samples(4, 20)).unwrap();
            assert!((s - e.holder_exponent()).abs() < 1e-10);
        }
    }
}
