//! Boundary barriers.
//!
//! A modulus of continuity is first replaced by a concave, strictly
//! increasing majorant. From such a profile `ω` and a boundary convexity
//! constant `κ₀` the barrier
//!
//! ```text
//! h(y) = λ·[ −2ψ(√(ρ yₙ)) + m₁ y_ℓ²/2 + 1/ln yₙ ],   ψ = √ω,   ρ = (κ₀^{−1/2} + 1)²
//! ```
//!
//! is built in coordinates `y = Θ(x − x₀)` where `yₙ` is the inward normal
//! distance and the domain is locally `{κ₀|y′|² ≤ yₙ}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coefficients::CoefficientField;
use crate::error::{param, Error, Result};
use crate::grid::{BoundaryData, StructuredGrid};
use crate::principles::{PrincipleName, PrincipleReport};
use crate::solver::DiscreteSolution;

/// A concave nondecreasing profile on `[0, r_max]` with derivatives.
pub trait ConcaveProfile: Send + Sync + std::fmt::Debug {
    fn value(&self, r: f64) -> f64;
    fn d1(&self, r: f64) -> f64;
    fn d2(&self, r: f64) -> f64;
    fn r_max(&self) -> f64;

    /// Radii below this are refused by the barrier evaluators.
    fn min_radius(&self) -> f64 {
        1e-8 * self.r_max()
    }
}

/// `ω(r) = c·r^p` with `0 < p ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coeff: f64,
    pub exponent: f64,
    pub r_max: f64,
}

impl PowerLaw {
    pub fn new(coeff: f64, exponent: f64, r_max: f64) -> Result<Self> {
        if !(coeff > 0.0 && exponent > 0.0 && exponent <= 1.0 && r_max > 0.0) {
            return param(format!(
                "power-law profile needs c > 0, 0 < p <= 1, r_max > 0 (got {coeff}, {exponent}, {r_max})"
            ));
        }
        Ok(Self {
            coeff,
            exponent,
            r_max,
        })
    }
}

impl ConcaveProfile for PowerLaw {
    fn value(&self, r: f64) -> f64 {
        self.coeff * r.powf(self.exponent)
    }

    fn d1(&self, r: f64) -> f64 {
        self.coeff * self.exponent * r.powf(self.exponent - 1.0)
    }

    fn d2(&self, r: f64) -> f64 {
        self.coeff * self.exponent * (self.exponent - 1.0) * r.powf(self.exponent - 2.0)
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }
}

/// Samples `(r, ω(r))` on `[0, r̄]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulus {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl Modulus {
    /// Radii must start at 0 and increase strictly.
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::Data(
                "modulus needs equally many radii and values, at least one".into(),
            ));
        }
        if radii[0] != 0.0 {
            return Err(Error::Data(format!("first modulus radius must be 0, got {}", radii[0])));
        }
        if let Some(i) = radii.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "modulus radii must increase strictly (index {})",
                i + 1
            )));
        }
        if radii.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Data("modulus samples must be finite".into()));
        }
        Ok(Self { radii, values })
    }

    /// Modulus of continuity of the boundary data at `x0`:
    /// `ω(r) = max{|φ(x) − φ(x₀)| : x boundary node, |x − x₀| ≤ r}`.
    pub fn of_boundary_data(grid: &StructuredGrid, phi: &BoundaryData, x0: &[f64]) -> Result<Self> {
        if x0.len() != grid.dim() {
            return param("boundary point dimension mismatch");
        }
        let phi0 = boundary_value_at(grid, phi, x0)?;
        let mut pairs: Vec<(f64, f64)> = grid
            .boundary_nodes()
            .into_iter()
            .map(|p| {
                let r = dist(&grid.coords(p), x0);
                (r, (phi.values()[p] - phi0).abs())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut radii = vec![0.0];
        let mut values = vec![0.0];
        for (r, v) in pairs {
            let running = values.last().copied().unwrap_or(0.0f64).max(v);
            if r <= *radii.last().unwrap() + 1e-14 {
                *values.last_mut().unwrap() = running;
            } else {
                radii.push(r);
                values.push(running);
            }
        }
        if radii.len() == 1 {
            radii.push(grid.diameter());
            values.push(values[0]);
        }
        Self::new(radii, values)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    /// True when `ω(0) = 0` and `ω` is nondecreasing.
    pub fn is_modulus(&self) -> bool {
        self.values[0] == 0.0 && self.values.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn value(&self, r: f64) -> f64 {
        interp(&self.radii, &self.values, r)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn boundary_value_at(grid: &StructuredGrid, phi: &BoundaryData, x0: &[f64]) -> Result<f64> {
    let tol = 1e-9 * grid.diameter();
    grid.boundary_nodes()
        .into_iter()
        .find(|&p| dist(&grid.coords(p), x0) <= tol)
        .map(|p| phi.values()[p])
        .ok_or_else(|| Error::Parameter(format!("{x0:?} is not a boundary node of the grid")))
}

/// Piecewise-linear interpolation, constant beyond the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Intermediate stages of the majorant construction, on the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorantStages {
    pub running_max: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub lifted: Vec<f64>,
    /// Result of replacing the convex part by its chord.
    pub split: Vec<f64>,
}

/// Concave, strictly increasing piecewise-linear majorant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcaveMajorant {
    lattice: Vec<f64>,
    values: Vec<f64>,
    /// Node slopes used for `d1`, averaged from adjacent segments.
    node_slopes: Vec<f64>,
    pub stages: MajorantStages,
}

/// Number of uniform cells added to the sample radii.
const MAJORANT_CELLS: usize = 2048;

/// Concave, strictly increasing `ω̃ ≥ ω` with `ω̃(0) = ω(0)`.
///
/// Works on the union of the sample radii and a uniform lattice:
/// running maximum, averaging over `[1.5r, 2.5r]`, running maximum plus a
/// small linear lift, convex part replaced by its chord, and finally the
/// slopes clipped at zero and lifted again so the result keeps increasing.
pub fn concave_majorant(modulus: &Modulus) -> Result<ConcaveMajorant> {
    let r_bar = modulus.r_max();
    if !(r_bar > 0.0) {
        return Err(Error::Data("modulus needs a positive radius range".into()));
    }
    let mut lattice: Vec<f64> = (0..=MAJORANT_CELLS)
        .map(|i| r_bar * i as f64 / MAJORANT_CELLS as f64)
        .chain(modulus.radii().iter().copied())
        .collect();
    lattice.sort_by(f64::total_cmp);
    lattice.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * r_bar);
    *lattice.last_mut().unwrap() = r_bar;
    let n = lattice.len();
    let u: Vec<f64> = lattice.iter().map(|&r| modulus.value(r)).collect();
    let u0 = u[0];

    // running maximum
    let mut running = u.clone();
    for i in 1..n {
        running[i] = running[i].max(running[i - 1]);
    }
    let top = running[n - 1];

    // averages of the running maximum over [1.5r, 2.5r], extended by `top`
    let mut cumulative = vec![0.0; n];
    for i in 1..n {
        cumulative[i] =
            cumulative[i - 1] + 0.5 * (running[i] + running[i - 1]) * (lattice[i] - lattice[i - 1]);
    }
    let integral = |x: f64| -> f64 {
        if x >= r_bar {
            return cumulative[n - 1] + (x - r_bar) * top;
        }
        let i = lattice.partition_point(|&v| v <= x) - 1;
        let dx = x - lattice[i];
        let slope = (running[i + 1] - running[i]) / (lattice[i + 1] - lattice[i]);
        cumulative[i] + dx * (running[i] + 0.5 * slope * dx)
    };
    let smoothed: Vec<f64> = lattice
        .iter()
        .map(|&r| {
            if r == 0.0 {
                u0
            } else {
                (integral(2.5 * r) - integral(1.5 * r)) / r
            }
        })
        .collect();

    let oscillation = u.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - u.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let lift_slope = 1e-6 * oscillation.max(1.0) / r_bar;
    let mut lifted = smoothed.clone();
    for i in 1..n {
        lifted[i] = lifted[i].max(lifted[i - 1]);
    }
    for (v, &r) in lifted.iter_mut().zip(&lattice) {
        *v += lift_slope * r;
    }

    // split into convex and concave kinks and replace the convex part by
    // its chord over [0, r̄]
    let seg_slope: Vec<f64> = (0..n - 1)
        .map(|i| (lifted[i + 1] - lifted[i]) / (lattice[i + 1] - lattice[i]))
        .collect();
    let mut convex_at_zero = 0.0;
    let mut concave_kinks: Vec<(f64, f64)> = Vec::new();
    for j in 1..n - 1 {
        let kink = seg_slope[j] - seg_slope[j - 1];
        if kink > 0.0 {
            convex_at_zero += kink * lattice[j];
        } else if kink < 0.0 {
            concave_kinks.push((lattice[j], -kink));
        }
    }
    let last_slope = seg_slope[n - 2];
    let v_end = lifted[n - 1];
    let concave_part = |x: f64| -> f64 {
        concave_kinks
            .iter()
            .map(|&(rj, d)| d * (rj - x).max(0.0))
            .sum()
    };
    let split: Vec<f64> = lattice
        .iter()
        .map(|&x| {
            v_end - (r_bar - x) * last_slope + (1.0 - x / r_bar) * convex_at_zero - concave_part(x)
        })
        .collect();

    // monotone repair
    let mut values = vec![split[0]; n];
    values[0] = lifted[0];
    for i in 0..n - 1 {
        let dx = lattice[i + 1] - lattice[i];
        let s = ((split[i + 1] - split[i]) / dx).max(0.0) + lift_slope;
        values[i + 1] = values[i] + s * dx;
    }
    // concavity must survive rounding in the repair
    let mut slopes: Vec<f64> = (0..n - 1)
        .map(|i| (values[i + 1] - values[i]) / (lattice[i + 1] - lattice[i]))
        .collect();
    for i in 1..slopes.len() {
        slopes[i] = slopes[i].min(slopes[i - 1]);
    }
    for i in 0..n - 1 {
        values[i + 1] = values[i] + slopes[i] * (lattice[i + 1] - lattice[i]);
    }
    for i in 0..n {
        values[i] = values[i].max(running[i]);
    }

    let mut node_slopes = vec![0.0; n];
    node_slopes[0] = slopes[0];
    node_slopes[n - 1] = slopes[n - 2];
    for i in 1..n - 1 {
        node_slopes[i] = 0.5 * (slopes[i - 1] + slopes[i]);
    }
    Ok(ConcaveMajorant {
        lattice,
        values,
        node_slopes,
        stages: MajorantStages {
            running_max: running,
            smoothed,
            lifted,
            split,
        },
    })
}

impl ConcaveMajorant {
    pub fn lattice(&self) -> &[f64] {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl ConcaveProfile for ConcaveMajorant {
    fn value(&self, r: f64) -> f64 {
        interp(&self.lattice, &self.values, r)
    }

    fn d1(&self, r: f64) -> f64 {
        interp(&self.lattice, &self.node_slopes, r)
    }

    fn d2(&self, r: f64) -> f64 {
        let xs = &self.lattice;
        let n = xs.len();
        let r = r.clamp(xs[0], xs[n - 1]);
        let i = (xs.partition_point(|&v| v <= r).max(1) - 1).min(n - 2);
        (self.node_slopes[i + 1] - self.node_slopes[i]) / (xs[i + 1] - xs[i])
    }

    fn r_max(&self) -> f64 {
        *self.lattice.last().unwrap()
    }
}

/// `ψ = √ω` and its first two derivatives at `r`.
fn psi_parts(omega: &dyn ConcaveProfile, r: f64) -> (f64, f64, f64) {
    let w = omega.value(r);
    let w1 = omega.d1(r);
    let w2 = omega.d2(r);
    let s = w.sqrt();
    (s, w1 / (2.0 * s), (2.0 * w2 * w - w1 * w1) / (4.0 * w * s))
}

/// The barrier `h` with all of its parameters.
#[derive(Debug, Clone)]
pub struct Barrier {
    pub omega: Arc<dyn ConcaveProfile>,
    pub kappa0: f64,
    pub rho: f64,
    pub m1: f64,
    pub t1: f64,
    /// Tangential (or normal) axis carrying the quadratic term.
    pub ell: usize,
    /// Overall factor `λ ≥ 1`.
    pub amplitude: f64,
    /// Orthogonal `Θ` with `y = Θ(x − x₀)`.
    pub rotation: DMatrix<f64>,
    pub origin: Vec<f64>,
    /// Largest radius with `ω ≤ α₀`.
    pub r0: f64,
    /// Minimum of `θ_ℓ𝒜θ_ℓᵀ` over the sampled boundary (set by the builder).
    pub c1: f64,
}

/// Value, gradient and diagonal Hessian of `h` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian_diag: Vec<f64>,
}

/// `r₀ = max{r ∈ (0, r̄] : ω(r) ≤ α₀}` by bisection.
fn radius_for_level(omega: &dyn ConcaveProfile, alpha0: f64) -> f64 {
    let r_bar = omega.r_max();
    if omega.value(r_bar) <= alpha0 {
        return r_bar;
    }
    let (mut lo, mut hi) = (0.0, r_bar);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if omega.value(mid) <= alpha0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl Barrier {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        omega: Arc<dyn ConcaveProfile>,
        kappa0: f64,
        m1: f64,
        t1: f64,
        ell: usize,
        amplitude: f64,
        rotation: DMatrix<f64>,
        origin: Vec<f64>,
        alpha0: f64,
    ) -> Result<Self> {
        let n = origin.len();
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return param(format!("kappa0 must be positive, got {kappa0}"));
        }
        if !(t1 > 0.0 && t1 <= 1.0) {
            return param(format!("t1 must lie in (0, 1], got {t1}"));
        }
        if !(m1 > 0.0 && m1.is_finite()) {
            return param(format!("m1 must be positive, got {m1}"));
        }
        if !(amplitude >= 1.0 && amplitude.is_finite()) {
            return param(format!("amplitude must be >= 1, got {amplitude}"));
        }
        if ell >= n || rotation.nrows() != n || rotation.ncols() != n {
            return param("barrier axis or rotation does not match the dimension");
        }
        let orth = &rotation * rotation.transpose() - DMatrix::identity(n, n);
        if orth.amax() > 1e-12 {
            return param("rotation must be orthogonal");
        }
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return param(format!("alpha0 must lie in (0, 1], got {alpha0}"));
        }
        if omega.value(0.0) != 0.0 {
            return param("barrier profile must vanish at 0");
        }
        let rho = (1.0 / kappa0.sqrt() + 1.0).powi(2);
        Ok(Self {
            r0: radius_for_level(omega.as_ref(), alpha0),
            omega,
            kappa0,
            rho,
            m1,
            t1,
            ell,
            amplitude,
            rotation,
            origin,
            c1: f64::NAN,
        })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    fn normal(&self) -> usize {
        self.dim() - 1
    }

    /// `y = Θ(x − x₀)`.
    pub fn to_local(&self, x: &[f64]) -> Vec<f64> {
        let d = DVector::from_iterator(self.dim(), x.iter().zip(&self.origin).map(|(a, b)| a - b));
        (&self.rotation * d).iter().copied().collect()
    }

    /// `x = Θᵀy + x₀`.
    pub fn to_global(&self, y: &[f64]) -> Vec<f64> {
        let v = self.rotation.transpose() * DVector::from_column_slice(y);
        v.iter().zip(&self.origin).map(|(a, b)| a + b).collect()
    }

    /// Radius of the part of the neighborhood inside `{κ₀|y′|² ≤ yₙ ≤ t₁}`.
    pub fn neighborhood_radius(&self) -> f64 {
        (self.t1 / self.kappa0 + self.t1 * self.t1).sqrt()
    }

    /// `h(y)`; `h(0) = 0`.
    pub fn value(&self, y: &[f64]) -> Result<f64> {
        if y.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        Ok(self.jet(y)?.value)
    }

    /// `h`, `∇h` and the diagonal of the Hessian (the off-diagonal part
    /// vanishes identically).
    pub fn jet(&self, y: &[f64]) -> Result<BarrierJet> {
        let n = self.dim();
        let nn = self.normal();
        let yn = y[nn];
        if !(yn > 0.0 && yn < 1.0) {
            return param(format!("barrier evaluated outside 0 < y_n < 1 (y_n = {yn})"));
        }
        let s = (self.rho * yn).sqrt();
        if s < self.omega.min_radius() || s > self.omega.r_max() * (1.0 + 1e-12) {
            return param(format!("profile radius {s} outside its admissible range"));
        }
        let (psi, dpsi, d2psi) = psi_parts(self.omega.as_ref(), s);
        let ln = yn.ln();
        let lam = self.amplitude;
        let yl = y[self.ell];
        let g_n = (self.rho / yn).sqrt() * dpsi + 1.0 / (ln * ln * yn);
        let log_curv = (2.0 / ln + 0.5) / (ln * ln * yn * yn);
        let mut gradient = vec![0.0; n];
        let mut hessian = vec![0.0; n];
        gradient[nn] = -g_n;
        hessian[nn] = (g_n - self.rho * d2psi) / (2.0 * yn) + log_curv;
        gradient[self.ell] += self.m1 * yl;
        hessian[self.ell] += self.m1;
        let value = lam * (-2.0 * psi + 0.5 * self.m1 * yl * yl + 1.0 / ln);
        for v in gradient.iter_mut().chain(hessian.iter_mut()) {
            *v *= lam;
        }
        if !value.is_finite() || gradient.iter().chain(&hessian).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite barrier value at y = {y:?}")));
        }
        Ok(BarrierJet {
            value,
            gradient,
            hessian_diag: hessian,
        })
    }

    /// `Δh(y)`.
    pub fn laplacian(&self, y: &[f64]) -> Result<f64> {
        Ok(self.jet(y)?.hessian_diag.iter().sum())
    }

    /// `ℒ_m h = div(Ã(y, h + m)∇h)` with `Ã = Θ𝒜Θᵀ` evaluated at
    /// `x = Θᵀy + x₀`.
    pub fn operator(&self, field: &dyn CoefficientField, y: &[f64], m: f64) -> Result<f64> {
        let n = self.dim();
        let jet = self.jet(y)?;
        let x = self.to_global(y);
        let z = jet.value + m;
        let th = &self.rotation;
        let a = th * field.matrix(&x, z) * th.transpose();
        let az = th * field.matrix_dz(&x, z) * th.transpose();
        let g = DVector::from_column_slice(&jet.gradient);
        // Σ_i ∂_{y_i} Ã_{ij}, with ∂_{y_i} = Σ_k Θ_{ik} ∂_{x_k}
        let dx: Vec<DMatrix<f64>> = (0..n).map(|k| field.matrix_dx(&x, z, k)).collect();
        let mut div = DVector::zeros(n);
        for i in 0..n {
            let mut d = DMatrix::zeros(n, n);
            for (k, dk) in dx.iter().enumerate() {
                d += dk * th[(i, k)];
            }
            let d = th * d * th.transpose();
            for j in 0..n {
                div[j] += d[(i, j)];
            }
        }
        let mut out = div.dot(&g) + (g.transpose() * &az * &g)[(0, 0)];
        for i in 0..n {
            out += a[(i, i)] * jet.hessian_diag[i];
        }
        if !out.is_finite() {
            return Err(Error::Data(format!("non-finite operator value at y = {y:?}")));
        }
        Ok(out)
    }

    pub fn certificate(&self, margins: BarrierMargins) -> BarrierCertificate {
        BarrierCertificate {
            kappa0: self.kappa0,
            rho: self.rho,
            m1: self.m1,
            t1: self.t1,
            ell: self.ell,
            amplitude: self.amplitude,
            margins,
        }
    }
}

/// Worst slacks of the four barrier inequalities (all `≥ 0` when they hold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierMargins {
    /// `min(−ω(|y|) − h(y))`.
    pub h_vs_omega: f64,
    /// `min Δh`.
    pub laplacian: f64,
    /// `min(ℒ_m h − K)`.
    #[serde(rename = "Lm")]
    pub lm: f64,
    /// `min(−ν − h)` on the outflow face `yₙ = t₁`.
    pub outflow: f64,
}

impl BarrierMargins {
    pub fn min(&self) -> f64 {
        self.h_vs_omega.min(self.laplacian).min(self.lm).min(self.outflow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub kappa0: f64,
    pub rho: f64,
    pub m1: f64,
    pub t1: f64,
    pub ell: usize,
    pub amplitude: f64,
    pub margins: BarrierMargins,
}

/// Sampling of the validity region `{κ₀|y′|² ≤ yₙ ≤ t₁}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSamples {
    /// Log-spaced levels of `yₙ` in `[floor, t₁]`.
    pub normal_levels: usize,
    /// Points per tangential axis at each level.
    pub tangential: usize,
    /// Number of values of `m` in `[−m₀, m₀]`.
    pub m_levels: usize,
    /// Smallest `yₙ` sampled.
    pub floor: f64,
}

impl Default for BarrierSamples {
    fn default() -> Self {
        Self {
            normal_levels: 100,
            tangential: 100,
            m_levels: 3,
            floor: 1e-10,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl BarrierSamples {
    fn validate(&self) -> Result<()> {
        if self.normal_levels < 2 || self.tangential < 1 || self.m_levels < 1 {
            return param("barrier sample counts are too small");
        }
        if !(self.floor > 0.0 && self.floor < 1e-2) {
            return param("barrier sample floor must lie in (0, 1e-2)");
        }
        Ok(())
    }

    fn m_values(&self, m0: f64) -> Vec<f64> {
        if self.m_levels == 1 {
            vec![0.0]
        } else {
            linspace(-m0, m0, self.m_levels)
        }
    }

    /// Points of the validity region, `yₙ` log-spaced from `floor` to `t1`.
    pub fn region_points(&self, dim: usize, kappa0: f64, t1: f64) -> Vec<Vec<f64>> {
        let (la, lb) = (self.floor.ln(), t1.ln());
        let mut out = Vec::new();
        for yn in linspace(la, lb, self.normal_levels).into_iter().map(f64::exp) {
            let yn = yn.clamp(self.floor, t1);
            out.extend(self.level_points(dim, kappa0, yn));
        }
        out
    }

    /// Points of `{κ₀|y′|² ≤ yₙ}` at fixed `yₙ`.
    fn level_points(&self, dim: usize, kappa0: f64, yn: f64) -> Vec<Vec<f64>> {
        let radius = (yn / kappa0).sqrt();
        let line = linspace(-radius, radius, self.tangential);
        let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..dim - 1 {
            pts = line
                .iter()
                .flat_map(|&v| {
                    pts.iter().map(move |p| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts.into_iter()
            .filter(|p| kappa0 * p.iter().map(|v| v * v).sum::<f64>() <= yn * (1.0 + 1e-12))
            .map(|mut p| {
                p.push(yn);
                p
            })
            .collect()
    }
}

/// True when `y` lies in the sampled validity region of `b`.
fn in_validity_region(b: &Barrier, y: &[f64], floor: f64) -> bool {
    let yn = y[b.normal()];
    let tangential: f64 = y[..b.normal()].iter().map(|v| v * v).sum();
    yn >= floor && yn <= b.t1 * (1.0 + 1e-12) && b.kappa0 * tangential <= yn * (1.0 + 1e-12)
}

/// Margins of the barrier inequalities at explicit points.
pub fn barrier_margins_at(
    b: &Barrier,
    field: &dyn CoefficientField,
    m0: f64,
    k: f64,
    nu: f64,
    points: &[Vec<f64>],
    samples: &BarrierSamples,
) -> Result<(BarrierMargins, usize)> {
    for y in points {
        if y.len() != b.dim() || !in_validity_region(b, y, samples.floor) {
            return param(format!("sample {y:?} lies outside the barrier validity region"));
        }
    }
    let ms = samples.m_values(m0);
    let per_point: Vec<[f64; 3]> = points
        .par_iter()
        .map(|y| {
            let jet = b.jet(y)?;
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let hv = -b.omega.value(r.min(b.omega.r_max())) - jet.value;
            let lap: f64 = jet.hessian_diag.iter().sum();
            let mut lm = f64::INFINITY;
            for &m in &ms {
                lm = lm.min(b.operator(field, y, m)? - k);
            }
            Ok([hv, lap, lm])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut margins = BarrierMargins {
        h_vs_omega: f64::INFINITY,
        laplacian: f64::INFINITY,
        lm: f64::INFINITY,
        outflow: f64::INFINITY,
    };
    let mut witness = 0;
    let mut worst = f64::INFINITY;
    for (i, v) in per_point.iter().enumerate() {
        margins.h_vs_omega = margins.h_vs_omega.min(v[0]);
        margins.laplacian = margins.laplacian.min(v[1]);
        margins.lm = margins.lm.min(v[2]);
        let w = v[0].min(v[1]).min(v[2]);
        if w < worst {
            worst = w;
            witness = i;
        }
    }
    for y in samples.level_points(b.dim(), b.kappa0, b.t1) {
        margins.outflow = margins.outflow.min(-nu - b.jet(&y)?.value);
    }
    Ok((margins, witness))
}

/// Checks `h(0) = 0`, `h ≤ −ω(|y|)`, `Δh > 0`, `ℒ_m h ≥ K` for `m` on a
/// lattice of `[−m₀, m₀]`, and `h ≤ −ν` on the outflow face.
pub fn verify_barrier(
    b: &Barrier,
    field: &dyn CoefficientField,
    m0: f64,
    k: f64,
    nu: f64,
    samples: &BarrierSamples,
) -> Result<PrincipleReport> {
    samples.validate()?;
    let origin_value = b.value(&vec![0.0; b.dim()])?;
    let points = samples.region_points(b.dim(), b.kappa0, b.t1);
    let (margins, witness) = barrier_margins_at(b, field, m0, k, nu, &points, samples)?;
    let tol = 1e-12;
    let mut report = PrincipleReport::new(PrincipleName::Barrier, margins.min(), Some(witness), tol);
    // the laplacian must be strictly positive
    report.holds = report.holds && margins.laplacian > 0.0 && origin_value == 0.0;
    report.metadata.insert("h_at_origin".into(), json!(origin_value));
    report.metadata.insert("samples".into(), json!(points.len()));
    report
        .metadata
        .insert("certificate".into(), serde_json::to_value(b.certificate(margins)).unwrap());
    Ok(report)
}

/// Parameters of the barrier search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSearch {
    /// Required depth on the outflow face; `None` uses `m₀`.
    pub nu: Option<f64>,
    /// Neighborhood must lie in `|y| < eta`; `None` means unconstrained.
    pub eta: Option<f64>,
    pub alpha0: f64,
    pub m1_start: f64,
    /// Maximum number of `(m₁, t₁)` candidates.
    pub budget: usize,
    /// Number of halvings of `t₁` tried per `m₁`.
    pub t1_levels: usize,
    pub samples: BarrierSamples,
    /// Boundary samples per tangential axis for choosing `ℓ`.
    pub axis_samples: usize,
}

impl Default for BarrierSearch {
    fn default() -> Self {
        Self {
            nu: None,
            eta: None,
            alpha0: 1.0,
            m1_start: 1.0,
            budget: 2000,
            t1_levels: 30,
            samples: BarrierSamples::default(),
            axis_samples: 21,
        }
    }
}

/// Axis `ℓ` maximizing `min θ_ℓ𝒜θ_ℓᵀ` over boundary samples
/// `yₙ = κ₀|y′|² ≤ t` and `|z| ≤ 2m₀`; ties go to the smaller index.
fn choose_axis(
    field: &dyn CoefficientField,
    proto: &Barrier,
    m0: f64,
    t: f64,
    samples: usize,
) -> (usize, f64) {
    let n = proto.dim();
    let radius = (t / proto.kappa0).sqrt();
    let line = linspace(-radius, radius, samples.max(2));
    let mut tangential: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..n - 1 {
        tangential = line
            .iter()
            .flat_map(|&v| {
                tangential.iter().map(move |p| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let zs = linspace(-2.0 * m0, 2.0 * m0, 5);
    let mut best = (0usize, f64::NEG_INFINITY);
    for ell in 0..n {
        let theta = proto.rotation.row(ell).transpose();
        let mut worst = f64::INFINITY;
        for yp in &tangential {
            let r2: f64 = yp.iter().map(|v| v * v).sum();
            let yn = proto.kappa0 * r2;
            if yn > t {
                continue;
            }
            let mut y = yp.clone();
            y.push(yn);
            let x = proto.to_global(&y);
            for &z in &zs {
                let q = (theta.transpose() * field.matrix(&x, z) * &theta)[(0, 0)];
                worst = worst.min(q);
            }
        }
        if worst > best.1 {
            best = (ell, worst);
        }
    }
    best
}

/// Builds a barrier at `origin` by sweeping `m₁ = m1_start·2^i` upward and,
/// for each `m₁`, `t₁` downward by halving, until every sampled inequality
/// holds. When the outflow depth falls short of `ν`, the whole barrier is
/// scaled by `λ = ν / depth`.
#[allow(clippy::too_many_arguments)]
pub fn build_barrier(
    omega: Arc<dyn ConcaveProfile>,
    kappa0: f64,
    m0: f64,
    k: f64,
    field: &dyn CoefficientField,
    rotation: DMatrix<f64>,
    origin: Vec<f64>,
    search: &BarrierSearch,
) -> Result<Barrier> {
    if field.dim() != origin.len() {
        return param("field and boundary point dimensions differ");
    }
    if !(m0 > 0.0) {
        return param(format!("m0 must be positive, got {m0}"));
    }
    search.samples.validate()?;
    let nu = search.nu.unwrap_or(m0);
    let proto = Barrier::new(
        omega.clone(),
        kappa0,
        1.0,
        0.5,
        0,
        1.0,
        rotation.clone(),
        origin.clone(),
        search.alpha0,
    )?;
    let t_start = 0.5f64.min(proto.r0 * proto.r0 / proto.rho);
    let (ell, c1) = choose_axis(field, &proto, m0, t_start, search.axis_samples);
    let eta = search.eta.unwrap_or(f64::INFINITY);

    let mut tried = 0usize;
    let mut last = (search.m1_start, t_start, String::from("no candidate evaluated"));
    let mut m1 = search.m1_start;
    while tried < search.budget {
        let mut t1 = t_start;
        for _ in 0..search.t1_levels {
            if tried == search.budget {
                break;
            }
            tried += 1;
            let candidate = Barrier::new(
                omega.clone(),
                kappa0,
                m1,
                t1,
                ell,
                1.0,
                rotation.clone(),
                origin.clone(),
                search.alpha0,
            )?;
            let radius = candidate.neighborhood_radius();
            if t1 < search.samples.floor * 10.0 {
                last = (m1, t1, "t1 reached the sampling floor".into());
                break;
            }
            if radius >= candidate.r0.min(eta) {
                last = (m1, t1, format!("neighborhood radius {radius} too large"));
                t1 *= 0.5;
                continue;
            }
            let depth = search
                .samples
                .level_points(candidate.dim(), kappa0, t1)
                .iter()
                .map(|y| candidate.jet(y).map(|j| j.value))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            if depth >= 0.0 {
                last = (m1, t1, "outflow face not below zero".into());
                t1 *= 0.5;
                continue;
            }
            let amplitude = if -depth >= nu {
                1.0
            } else {
                nu / -depth * (1.0 + 1e-9)
            };
            let mut candidate = Barrier { amplitude, ..candidate };
            candidate.c1 = c1;
            let points = search.samples.region_points(candidate.dim(), kappa0, t1);
            let (margins, _) =
                barrier_margins_at(&candidate, field, m0, k, nu, &points, &search.samples)?;
            if margins.min() >= 0.0 && margins.laplacian > 0.0 {
                return Ok(candidate);
            }
            last = (m1, t1, failing_inequality(&margins));
            t1 *= 0.5;
        }
        m1 *= 2.0;
        if !m1.is_finite() {
            break;
        }
    }
    Err(Error::BarrierConstruction {
        tried,
        m1: last.0,
        t1: last.1,
        failing: last.2,
    })
}

fn failing_inequality(m: &BarrierMargins) -> String {
    let mut parts = Vec::new();
    if m.h_vs_omega < 0.0 {
        parts.push(format!("h <= -omega (margin {:e})", m.h_vs_omega));
    }
    if m.laplacian <= 0.0 {
        parts.push(format!("laplacian > 0 (margin {:e})", m.laplacian));
    }
    if m.lm < 0.0 {
        parts.push(format!("L_m h >= K (margin {:e})", m.lm));
    }
    if m.outflow < 0.0 {
        parts.push(format!("outflow h <= -nu (margin {:e})", m.outflow));
    }
    parts.join(", ")
}

/// Boundary point, convexity constant and barrier parameters for
/// [`boundary_modulus_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryModulusSpec {
    pub x0: Vec<f64>,
    pub sigma: f64,
    pub kappa0: f64,
    /// Rows map `x − x₀` to local coordinates; the last row is the inward
    /// normal.
    pub rotation: DMatrix<f64>,
    pub k: f64,
    pub search: BarrierSearch,
}

impl BoundaryModulusSpec {
    /// Spec for a boundary node of a box grid, with the inward normal of
    /// the face containing it.
    pub fn on_box_face(grid: &StructuredGrid, x0: Vec<f64>, sigma: f64, kappa0: f64) -> Result<Self> {
        let n = grid.dim();
        let tol = 1e-9 * grid.diameter();
        let face = (0..n).find_map(|a| {
            if (x0[a] - grid.lows()[a]).abs() <= tol {
                Some((a, 1.0))
            } else if (x0[a] - grid.highs()[a]).abs() <= tol {
                Some((a, -1.0))
            } else {
                None
            }
        });
        let (axis, sign) = face.ok_or_else(|| Error::Parameter(format!("{x0:?} is not on the box boundary")))?;
        // signed permutation: tangential axes first, inward normal last
        let mut rotation = DMatrix::zeros(n, n);
        let mut row = 0;
        for a in (0..n).filter(|&a| a != axis) {
            rotation[(row, a)] = 1.0;
            row += 1;
        }
        rotation[(n - 1, axis)] = sign;
        Ok(Self {
            x0,
            sigma,
            kappa0,
            rotation,
            k: 1.0,
            search: BarrierSearch::default(),
        })
    }
}

/// Reads `δ₀` off the barrier: the largest radius such that `−h < σ` at
/// every sampled point of the validity region closer than `δ₀`.
pub fn barrier_radius(b: &Barrier, sigma: f64, samples: &BarrierSamples) -> Result<f64> {
    let mut delta = b.neighborhood_radius();
    for y in samples.region_points(b.dim(), b.kappa0, b.t1) {
        let h = b.jet(&y)?.value;
        if -h >= sigma {
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            delta = delta.min(r);
        }
    }
    Ok(delta)
}

/// Checks `|w^ε(x) − φ(x₀)| ≤ σ` for every rung and every node with
/// `|x − x₀| < δ₀`, where `δ₀` comes from a barrier built on the concave
/// majorant of the boundary data's modulus at `x₀`.
///
/// Constant data need no barrier and use `δ₀ = diam Ω`.
pub fn boundary_modulus_check(
    field: &dyn CoefficientField,
    ladder: &[DiscreteSolution],
    dirichlet: &BoundaryData,
    spec: &BoundaryModulusSpec,
) -> Result<PrincipleReport> {
    let first = ladder
        .first()
        .ok_or_else(|| Error::Parameter("empty ladder".into()))?;
    let grid = &first.grid;
    if !(spec.sigma > 0.0) {
        return param("sigma must be positive");
    }
    let phi0 = boundary_value_at(grid, dirichlet, &spec.x0)?;
    let modulus = Modulus::of_boundary_data(grid, dirichlet, &spec.x0)?;
    let oscillation = modulus.values().iter().fold(0.0f64, |m, v| m.max(*v));

    let mut metadata = serde_json::Map::new();
    let delta0 = if oscillation == 0.0 {
        grid.diameter()
    } else {
        let majorant = concave_majorant(&modulus)?;
        let m0 = dirichlet.sup_abs(grid).max(1e-12);
        let barrier = build_barrier(
            Arc::new(majorant),
            spec.kappa0,
            m0,
            spec.k,
            field,
            spec.rotation.clone(),
            spec.x0.clone(),
            &spec.search,
        )?;
        metadata.insert("m1".into(), json!(barrier.m1));
        metadata.insert("t1".into(), json!(barrier.t1));
        metadata.insert("amplitude".into(), json!(barrier.amplitude));
        barrier_radius(&barrier, spec.sigma, &spec.search.samples)?
    };

    let mut worst = (f64::INFINITY, None);
    for sol in ladder {
        if &sol.grid != grid {
            return param("ladder rungs live on different grids");
        }
        for p in 0..grid.len() {
            if dist(&grid.coords(p), &spec.x0) < delta0 {
                let slack = spec.sigma - (sol.values[p] - phi0).abs();
                if slack < worst.0 {
                    worst = (slack, Some(p));
                }
            }
        }
    }
    let margin = if worst.0.is_finite() { worst.0 } else { spec.sigma };
    let mut report = PrincipleReport::new(PrincipleName::BoundaryModulus, margin, worst.1, 0.0);
    report.metadata.insert("delta0".into(), json!(delta0));
    report.metadata.insert("sigma".into(), json!(spec.sigma));
    report.metadata.insert("rungs".into(), json!(ladder.len()));
    for (k, v) in metadata {
        report.metadata.insert(k, v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::make_builtin_family;

    fn identity_barrier(omega: Arc<dyn ConcaveProfile>, m1: f64, t1: f64, ell: usize) -> Barrier {
        Barrier::new(omega, 1.0, m1, t1, ell, 1.0, DMatrix::identity(2, 2), vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn linear_profile_value() {
        let omega = Arc::new(PowerLaw::new(1.0, 1.0, 1.0).unwrap());
        let b = identity_barrier(omega, 3.0, 0.1, 0);
        assert_eq!(b.rho, 4.0);
        let h = b.value(&[0.0, 1e-4]).unwrap();
        let expected = -2.0 * (4e-4f64).powf(0.25) + 1.0 / (1e-4f64).ln();
        assert!((h - expected).abs() < 1e-14);
        assert!((h + 0.391417).abs() < 1e-6);
        assert_eq!(b.value(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let omega: Arc<dyn ConcaveProfile> = Arc::new(PowerLaw::new(1.0, 0.5, 1.0).unwrap());
        for ell in [0, 1] {
            let b = identity_barrier(omega.clone(), 2.5, 0.05, ell);
            let d = 1e-7;
            for y in [[0.01, 0.02], [-0.03, 0.01], [0.0, 1e-3]] {
                let jet = b.jet(&y).unwrap();
                for i in 0..2 {
                    let mut yp = y;
                    let mut ym = y;
                    yp[i] += d;
                    ym[i] -= d;
                    let fd = (b.value(&yp).unwrap() - b.value(&ym).unwrap()) / (2.0 * d);
                    assert!((fd - jet.gradient[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
                    let gp = b.jet(&yp).unwrap().gradient[i];
                    let gm = b.jet(&ym).unwrap().gradient[i];
                    let fd2 = (gp - gm) / (2.0 * d);
                    assert!((fd2 - jet.hessian_diag[i]).abs() <= 1e-5 * (1.0 + fd2.abs()));
                }
            }
        }
    }

    /// `𝒜(x,z) = diag(1 + z², 2 + x₁z)`.
    #[derive(Debug)]
    struct Curved;

    impl CoefficientField for Curved {
        fn dim(&self) -> usize {
            2
        }
        fn matrix(&self, x: &[f64], z: f64) -> DMatrix<f64> {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 + z * z, 2.0 + x[0] * z]))
        }
        fn k(&self, x: &[f64], z: f64) -> DVector<f64> {
            self.matrix(x, z).diagonal()
        }
    }

    #[test]
    fn operator_matches_flux_differences() {
        let omega: Arc<dyn ConcaveProfile> = Arc::new(PowerLaw::new(1.0, 0.5, 1.0).unwrap());
        let theta = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, -0.8, 0.6]);
        let b = Barrier::new(omega, 2.0, 3.0, 0.05, 0, 1.5, theta, vec![0.3, -0.2], 1.0).unwrap();
        let y = [0.01, 0.02];
        let m = 0.4;
        // flux F(y) = Ã(y, h+m)∇h, with Ã = Θ𝒜Θᵀ
        let flux = |y: &[f64]| -> DVector<f64> {
            let jet = b.jet(y).unwrap();
            let x = b.to_global(y);
            let a = &b.rotation * Curved.matrix(&x, jet.value + m) * b.rotation.transpose();
            a * DVector::from_column_slice(&jet.gradient)
        };
        let d = 1e-6;
        let mut div = 0.0;
        for i in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[i] += d;
            ym[i] -= d;
            div += (flux(&yp)[i] - flux(&ym)[i]) / (2.0 * d);
        }
        let op = b.operator(&Curved, &y, m).unwrap();
        assert!((op - div).abs() <= 1e-5 * (1.0 + div.abs()), "{op} vs {div}");
    }

    #[test]
    fn majorant_of_linear_modulus() {
        let r: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let m = Modulus::new(r.clone(), r.clone()).unwrap();
        let w = concave_majorant(&m).unwrap();
        assert_eq!(w.value(0.0), 0.0);
        for &x in &r {
            assert!(w.value(x) >= x);
        }
    }

    #[test]
    fn majorant_rejects_decreasing_radii() {
        assert!(matches!(
            Modulus::new(vec![0.0, 0.5, 0.4], vec![0.0, 1.0, 2.0]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn psi_properties_for_square_root() {
        let omega = PowerLaw::new(1.0, 0.5, 1.0).unwrap();
        let a0 = omega.value(1.0) / 1.0;
        for i in 0..100 {
            let r = 10f64.powf(-8.0 + 8.0 * i as f64 / 99.0);
            let (psi, d1, d2) = psi_parts(&omega, r);
            assert!(psi <= 1.0);
            assert!(-d2 >= d1 * d1 / psi * (1.0 - 1e-12));
            assert!(psi >= (a0 * r).sqrt());
        }
    }

    #[test]
    fn identity_field_barrier_builds() {
        let f = make_builtin_family("identity", &[]).unwrap();
        let omega: Arc<dyn ConcaveProfile> = Arc::new(PowerLaw::new(1.0, 1.0, 1.0).unwrap());
        let b = build_barrier(
            omega,
            1.0,
            1.0,
            1.0,
            &f,
            DMatrix::identity(2, 2),
            vec![0.0, 0.0],
            &BarrierSearch::default(),
        )
        .unwrap();
        assert_eq!(b.ell, 0);
        let r = verify_barrier(&b, &f, 1.0, 1.0, 1.0, &BarrierSamples::default()).unwrap();
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn box_face_rotation_points_inward() {
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 5).unwrap();
        let spec = BoundaryModulusSpec::on_box_face(&g, vec![1.0, 0.5], 0.1, 1.0).unwrap();
        let y = (spec.rotation.clone() * DVector::from_vec(vec![-0.1, 0.0])).iter().copied().collect::<Vec<_>>();
        assert!(y[1] > 0.0);
        assert!(BoundaryModulusSpec::on_box_face(&g, vec![0.0, 0.0], 0.1, 1.0).is_err());
    }
}
