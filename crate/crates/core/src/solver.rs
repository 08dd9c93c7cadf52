//! Finite-difference discretization of the truncated, regularized operator
//!
//! ```text
//! Q_ε^M w = div 𝒜(x,χ_M(w))∇w + γ(x,χ_M(w))·∇w + f(x,χ_M(w)) + εΔw
//! ```
//!
//! on structured grids, a damped Newton solver for the Dirichlet problem,
//! and the continuation down a decreasing ladder of viscosities `ε`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{make_builtin_family, CoefficientField};
use crate::error::{param, Error, Result};
use crate::grid::{BoundaryData, StructuredGrid};
use crate::linalg::BandMatrix;

/// Smooth odd clamp `χ_M`: the identity on `|z| ≤ M`, constant `±3M/2` on
/// `|z| ≥ 2M`.
///
/// On `M ≤ |z| ≤ 2M` the derivative is `1 − S(t)`, `t = (|z| − M)/M`, with
/// `S` the quintic smoothstep, so `0 ≤ χ′ ≤ 1` and `χ` is `C³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationProfile {
    level: f64,
}

pub fn build_truncation(level: f64) -> Result<TruncationProfile> {
    if !(level > 0.0 && level.is_finite()) {
        return param(format!("truncation level must be positive, got {level}"));
    }
    Ok(TruncationProfile { level })
}

impl TruncationProfile {
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn value(&self, z: f64) -> f64 {
        let m = self.level;
        let a = z.abs();
        let v = if a <= m {
            a
        } else if a >= 2.0 * m {
            1.5 * m
        } else {
            let t = (a - m) / m;
            // ∫₀ᵗ (1 − S) = t − (t⁶ − 3t⁵ + 5t⁴/2)
            let t4 = t * t * t * t;
            m + m * (t - t4 * (t * t - 3.0 * t + 2.5))
        };
        v.copysign(z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let m = self.level;
        let a = z.abs();
        if a <= m {
            1.0
        } else if a >= 2.0 * m {
            0.0
        } else {
            let t = (a - m) / m;
            1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)
        }
    }
}

/// `ε_k = 2^{−k}`, `k = 0..=20`.
pub fn default_eps_ladder() -> Vec<f64> {
    (0..=20).map(|k| 0.5f64.powi(k)).collect()
}

/// Newton and continuation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Strictly decreasing positive viscosities.
    pub eps_ladder: Vec<f64>,
    /// Target max-norm of the interior residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Step reduction factor of the backtracking line search.
    pub backtrack: f64,
    /// Smallest admissible step length.
    pub min_step: f64,
    /// Truncation level `M`; `None` uses `sup|φ|` (or 1 when `φ ≡ 0`).
    pub truncation: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_ladder: default_eps_ladder(),
            newton_tol: 1e-10,
            max_newton_iters: 60,
            backtrack: 0.5,
            min_step: 0.5f64.powi(30),
            truncation: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_ladder.is_empty() {
            return param("eps_ladder must not be empty");
        }
        if self.eps_ladder.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return param("eps_ladder entries must be positive and finite");
        }
        if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return param("eps_ladder must be strictly decreasing");
        }
        if !(self.newton_tol > 0.0) {
            return param("newton_tol must be positive");
        }
        if self.max_newton_iters == 0 {
            return param("max_newton_iters must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return param("backtrack factor must lie in (0, 1)");
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return param("min_step must lie in (0, 1]");
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0 && m.is_finite()) {
                return param("truncation level must be positive");
            }
        }
        Ok(())
    }
}

/// Converged nodal field for one viscosity.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    pub grid: StructuredGrid,
    pub values: Vec<f64>,
    pub eps: f64,
    /// Truncation level `M` used in the solve.
    pub truncation: f64,
    pub residual_norm: f64,
    pub newton_iters: usize,
    /// Residual max-norm before each Newton step and after the last one.
    pub norm_history: Vec<f64>,
}

impl DiscreteSolution {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Residual vector and its Jacobian.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub residual: Vec<f64>,
    pub jacobian: BandMatrix,
}

/// Coefficients evaluated at one node, with `z`-derivatives already
/// multiplied by `χ′(w)`.
struct NodeCoeffs {
    a: Vec<f64>,
    da: Vec<f64>,
    drift: Vec<f64>,
    ddrift: Vec<f64>,
    f: f64,
    df: f64,
}

#[derive(Clone, Copy)]
enum Mode {
    ResidualOnly,
    Exact,
    /// Coefficients frozen at the iterate (no `∂_z` chain terms).
    Frozen,
}

/// Half-bandwidth needed by the stencil.
fn bandwidth(field: &dyn CoefficientField, grid: &StructuredGrid) -> usize {
    let s = grid.strides();
    let n = grid.dim();
    if field.is_diagonal() {
        s[n - 1]
    } else {
        s[n - 1] + s[n - 2]
    }
}

fn node_coeffs(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    w: &[f64],
    trunc: &TruncationProfile,
    mode: Mode,
) -> Result<Vec<NodeCoeffs>> {
    let n = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .map(|q| {
            let x = grid.coords(q);
            let c = trunc.value(w[q]);
            let chain = match mode {
                Mode::Frozen => 0.0,
                _ => trunc.derivative(w[q]),
            };
            let a = field.matrix(&x, c);
            let mut nc = NodeCoeffs {
                a: a.transpose().iter().copied().collect(),
                da: vec![0.0; n * n],
                drift: field.drift(&x, c).iter().copied().collect(),
                ddrift: vec![0.0; n],
                f: field.zero_order(&x, c),
                df: 0.0,
            };
            if !matches!(mode, Mode::ResidualOnly) && chain != 0.0 {
                nc.da = field
                    .matrix_dz(&x, c)
                    .transpose()
                    .iter()
                    .map(|v| v * chain)
                    .collect();
                nc.ddrift = field.drift_dz(&x, c).iter().map(|v| v * chain).collect();
                nc.df = field.zero_order_dz(&x, c) * chain;
            }
            let finite = nc.a.iter().chain(&nc.da).chain(&nc.drift).chain(&nc.ddrift).all(|v| v.is_finite())
                && nc.f.is_finite()
                && nc.df.is_finite();
            if !finite {
                return Err(Error::Data(format!(
                    "non-finite coefficient at node {q} (x = {x:?}, w = {})",
                    w[q]
                )));
            }
            Ok(nc)
        })
        .collect()
}

/// Residual of one interior row and, unless `ResidualOnly`, its entries.
fn interior_row(
    grid: &StructuredGrid,
    coeffs: &[NodeCoeffs],
    w: &[f64],
    eps: f64,
    diagonal: bool,
    p: usize,
    mode: Mode,
) -> (f64, Vec<(usize, f64)>) {
    let n = grid.dim();
    let h = grid.spacing();
    let s = grid.strides();
    let want = !matches!(mode, Mode::ResidualOnly);
    let mut res = 0.0;
    let mut ent: Vec<(usize, f64)> = Vec::new();
    let cp = &coeffs[p];
    let mut diag_entry = 0.0;

    for i in 0..n {
        let (pp, pm) = (p + s[i], p - s[i]);
        let h2 = h[i] * h[i];
        let ii = i * n + i;
        let (ap, a_plus, a_minus) = (cp.a[ii], coeffs[pp].a[ii], coeffs[pm].a[ii]);
        let fwd = w[pp] - w[p];
        let bwd = w[p] - w[pm];
        let face_p = 0.5 * (ap + a_plus);
        let face_m = 0.5 * (ap + a_minus);
        res += (face_p * fwd - face_m * bwd) / h2;
        res += eps * (fwd - bwd) / h2;
        if want {
            let dap = cp.da[ii];
            ent.push((pp, (face_p + 0.5 * coeffs[pp].da[ii] * fwd + eps) / h2));
            ent.push((pm, (face_m - 0.5 * coeffs[pm].da[ii] * bwd + eps) / h2));
            diag_entry += (-face_p - face_m + 0.5 * dap * fwd - 0.5 * dap * bwd - 2.0 * eps) / h2;
        }

        if !diagonal {
            for j in (0..n).filter(|&j| j != i) {
                let ij = i * n + j;
                let den = 4.0 * h[i] * h[j];
                let dj_plus = w[pp + s[j]] - w[pp - s[j]];
                let dj_minus = w[pm + s[j]] - w[pm - s[j]];
                let a_ip = coeffs[pp].a[ij];
                let a_im = coeffs[pm].a[ij];
                res += (a_ip * dj_plus - a_im * dj_minus) / den;
                if want {
                    ent.push((pp, coeffs[pp].da[ij] * dj_plus / den));
                    ent.push((pm, -coeffs[pm].da[ij] * dj_minus / den));
                    ent.push((pp + s[j], a_ip / den));
                    ent.push((pp - s[j], -a_ip / den));
                    ent.push((pm + s[j], -a_im / den));
                    ent.push((pm - s[j], a_im / den));
                }
            }
        }

        let g = cp.drift[i];
        let (d, nb, coef) = if g >= 0.0 {
            (fwd / h[i], pp, 1.0 / h[i])
        } else {
            (bwd / h[i], pm, -1.0 / h[i])
        };
        res += g * d;
        if want {
            if g != 0.0 {
                ent.push((nb, g * coef));
                diag_entry -= g * coef;
            }
            diag_entry += cp.ddrift[i] * d;
        }
    }
    res += cp.f;
    if want {
        diag_entry += cp.df;
        ent.push((p, diag_entry));
    }
    (res, ent)
}

fn assemble(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    w: &[f64],
    eps: f64,
    trunc: &TruncationProfile,
    mode: Mode,
) -> Result<(Vec<f64>, Option<BandMatrix>)> {
    if w.len() != grid.len() {
        return param(format!(
            "iterate has {} values, grid has {} nodes",
            w.len(),
            grid.len()
        ));
    }
    if field.dim() != grid.dim() {
        return param(format!(
            "field dimension {} does not match grid dimension {}",
            field.dim(),
            grid.dim()
        ));
    }
    let coeffs = node_coeffs(field, grid, w, trunc, mode)?;
    let diagonal = field.is_diagonal();
    let mask = grid.boundary_mask();
    let rows: Vec<(f64, Vec<(usize, f64)>)> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            if mask[p] {
                (0.0, Vec::new())
            } else {
                interior_row(grid, &coeffs, w, eps, diagonal, p, mode)
            }
        })
        .collect();
    let residual: Vec<f64> = rows.iter().map(|r| r.0).collect();
    if let Some(p) = residual.iter().position(|r| !r.is_finite()) {
        return Err(Error::Data(format!("non-finite residual at node {p}")));
    }
    let jacobian = match mode {
        Mode::ResidualOnly => None,
        _ => {
            let bw = bandwidth(field, grid);
            let mut band = BandMatrix::zeros(grid.len(), bw, bw);
            for (p, (_, ent)) in rows.iter().enumerate() {
                if mask[p] {
                    band.set(p, p, 1.0);
                } else {
                    for &(c, v) in ent {
                        band.add(p, c, v);
                    }
                }
            }
            Some(band)
        }
    };
    Ok((residual, jacobian))
}

/// Residual of `Q_ε^M` at the interior nodes (boundary entries are zero)
/// and its exact Jacobian, whose boundary rows are identity rows.
pub fn assemble_residual(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    w: &[f64],
    eps: f64,
    trunc: &TruncationProfile,
) -> Result<Assembly> {
    let (residual, jac) = assemble(field, grid, w, eps, trunc, Mode::Exact)?;
    Ok(Assembly {
        residual,
        jacobian: jac.expect("jacobian requested"),
    })
}

/// Residual only; cheaper than [`assemble_residual`].
pub fn residual(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    w: &[f64],
    eps: f64,
    trunc: &TruncationProfile,
) -> Result<Vec<f64>> {
    Ok(assemble(field, grid, w, eps, trunc, Mode::ResidualOnly)?.0)
}

/// Linear operator with coefficients frozen at `w`.
pub fn frozen_operator(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    w: &[f64],
    eps: f64,
    trunc: &TruncationProfile,
) -> Result<BandMatrix> {
    Ok(assemble(field, grid, w, eps, trunc, Mode::Frozen)?
        .1
        .expect("jacobian requested"))
}

/// Sign pattern of the interior block of a discrete operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MMatrixReport {
    pub holds: bool,
    /// Largest off-diagonal entry (should be `≤ 0`).
    pub max_offdiag: f64,
    /// Smallest `−aₚₚ − Σ_{q≠p} aₚq` over interior rows, in the sign
    /// convention of the discrete elliptic operator (should be `≥ 0`).
    pub min_row_dominance: f64,
    /// Smallest `−aₚₚ` (should be `> 0`).
    pub min_negated_diagonal: f64,
}

/// Checks that the negated interior block of `op` is an M-matrix pattern:
/// nonpositive off-diagonals and weak diagonal dominance.
pub fn check_m_matrix(op: &BandMatrix, grid: &StructuredGrid) -> MMatrixReport {
    let mask = grid.boundary_mask();
    let scale = (0..grid.len())
        .filter(|&p| !mask[p])
        .map(|p| op.get(p, p).abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut max_off = f64::NEG_INFINITY;
    let mut min_dom = f64::INFINITY;
    let mut min_diag = f64::INFINITY;
    for p in (0..grid.len()).filter(|&p| !mask[p]) {
        let mut row_sum = 0.0;
        for (c, v) in op.row_entries(p) {
            if c == p {
                min_diag = min_diag.min(-v);
            } else if v != 0.0 {
                // in the convention L u = Σ aₚq uq, off-diagonals are ≥ 0
                max_off = max_off.max(-v);
            }
            row_sum += v;
        }
        min_dom = min_dom.min(-row_sum);
    }
    let tol = 1e-12 * scale;
    MMatrixReport {
        holds: max_off <= tol && min_dom >= -tol && min_diag > 0.0,
        max_offdiag: max_off,
        min_row_dominance: min_dom,
        min_negated_diagonal: min_diag,
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Discrete harmonic extension of the boundary data.
pub fn harmonic_extension(grid: &StructuredGrid, dirichlet: &BoundaryData) -> Result<Vec<f64>> {
    let identity = make_builtin_family("identity", &[grid.dim() as f64])?;
    let trunc = build_truncation(1.0)?;
    let mut w = boundary_start(grid, dirichlet);
    let asm = assemble_residual(&identity, grid, &w, 1.0, &trunc)?;
    let lu = asm.jacobian.factorize()?;
    let mut delta: Vec<f64> = asm.residual.iter().map(|r| -r).collect();
    lu.solve_in_place(&mut delta);
    let mask = grid.boundary_mask();
    for p in 0..w.len() {
        if !mask[p] {
            w[p] += delta[p];
        }
    }
    Ok(w)
}

fn boundary_start(grid: &StructuredGrid, dirichlet: &BoundaryData) -> Vec<f64> {
    let mask = grid.boundary_mask();
    dirichlet
        .values()
        .iter()
        .zip(&mask)
        .map(|(&v, &b)| if b { v } else { 0.0 })
        .collect()
}

/// Damped Newton solve of `Q_ε^M w = 0`, `w = φ` on the boundary.
///
/// Starts from `warm_start` (its boundary values are replaced by `φ`) or
/// from the discrete harmonic extension of `φ`.
pub fn newton_solve(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    dirichlet: &BoundaryData,
    eps: f64,
    trunc: &TruncationProfile,
    config: &SolverConfig,
    warm_start: Option<&[f64]>,
) -> Result<DiscreteSolution> {
    if !(eps > 0.0 && eps.is_finite()) {
        return param(format!("newton_solve needs eps > 0, got {eps}"));
    }
    if dirichlet.len() != grid.len() {
        return param("boundary data does not match the grid");
    }
    let mask = grid.boundary_mask();
    let mut w = match warm_start {
        Some(ws) => {
            if ws.len() != grid.len() {
                return param("warm start does not match the grid");
            }
            ws.to_vec()
        }
        None => harmonic_extension(grid, dirichlet)?,
    };
    for p in 0..w.len() {
        if mask[p] {
            w[p] = dirichlet.values()[p];
        }
    }

    let mut res = residual(field, grid, &w, eps, trunc)?;
    let mut norm = max_norm(&res);
    let mut history = vec![norm];
    let failure = |reason: &str, norm: f64, history: &[f64], w: &[f64]| Error::NewtonFailure {
        eps,
        reason: reason.to_string(),
        last_norm: norm,
        norm_history: history.to_vec(),
        last_iterate: w.to_vec(),
    };
    let mut iters = 0;
    while norm > config.newton_tol {
        if iters == config.max_newton_iters {
            return Err(failure("iteration cap reached", norm, &history, &w));
        }
        iters += 1;
        let asm = assemble_residual(field, grid, &w, eps, trunc)?;
        let lu = asm.jacobian.factorize()?;
        let mut delta: Vec<f64> = asm.residual.iter().map(|r| -r).collect();
        lu.solve_in_place(&mut delta);

        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = w
                .iter()
                .zip(&delta)
                .zip(&mask)
                .map(|((wi, di), &b)| if b { *wi } else { wi + step * di })
                .collect();
            let trial_res = residual(field, grid, &trial, eps, trunc)?;
            let trial_norm = max_norm(&trial_res);
            if trial_norm < norm || trial_norm <= config.newton_tol {
                w = trial;
                res = trial_res;
                norm = trial_norm;
                break;
            }
            step *= config.backtrack;
            if step < config.min_step {
                return Err(failure("line search reached the minimum step", norm, &history, &w));
            }
        }
        history.push(norm);
    }
    debug_assert!(res.iter().all(|r| r.abs() <= config.newton_tol));
    Ok(DiscreteSolution {
        grid: grid.clone(),
        values: w,
        eps,
        truncation: trunc.level(),
        residual_norm: norm,
        newton_iters: iters,
        norm_history: history,
    })
}

/// Solutions along the viscosity ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub rungs: Vec<DiscreteSolution>,
    /// `‖w^{ε_{k+1}} − w^{ε_k}‖_∞` for consecutive rungs.
    pub differences: Vec<f64>,
}

impl Ladder {
    pub fn last(&self) -> &DiscreteSolution {
        self.rungs.last().expect("ladders are nonempty")
    }
}

/// Truncation level for the given data: the configured one, or `sup|φ|`
/// (1 when `φ ≡ 0`). A configured level below `sup|φ|` is rejected.
pub fn truncation_level(
    grid: &StructuredGrid,
    dirichlet: &BoundaryData,
    config: &SolverConfig,
) -> Result<f64> {
    let sup = dirichlet.sup_abs(grid);
    match config.truncation {
        Some(m) if m < sup => param(format!(
            "truncation level {m} is below sup|φ| = {sup}"
        )),
        Some(m) => Ok(m),
        None if sup > 0.0 => Ok(sup),
        None => Ok(1.0),
    }
}

/// Solves down `config.eps_ladder`, warm-starting each rung from the
/// previous one.
pub fn viscosity_continuation(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    dirichlet: &BoundaryData,
    config: &SolverConfig,
) -> Result<Ladder> {
    config.validate()?;
    let trunc = build_truncation(truncation_level(grid, dirichlet, config)?)?;
    let mut rungs: Vec<DiscreteSolution> = Vec::with_capacity(config.eps_ladder.len());
    let mut differences = Vec::new();
    for &eps in &config.eps_ladder {
        let warm = rungs.last().map(|s| s.values.as_slice());
        let sol = newton_solve(field, grid, dirichlet, eps, &trunc, config, warm)?;
        if let Some(prev) = rungs.last() {
            differences.push(
                sol.values
                    .iter()
                    .zip(&prev.values)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
            );
        }
        rungs.push(sol);
    }
    Ok(Ladder { rungs, differences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncation_branches() {
        let t = build_truncation(2.0).unwrap();
        assert_eq!(t.value(1.0), 1.0);
        assert_eq!(t.value(6.0), 3.0);
        assert_eq!(t.value(-6.0), -3.0);
        assert!((t.value(4.0) - 3.0).abs() < 1e-15);
        assert!((t.value(2.0) - 2.0).abs() < 1e-15);
        assert!(build_truncation(0.0).is_err());
        assert!(build_truncation(-1.0).is_err());
    }

    #[test]
    fn truncation_derivative_matches_differences() {
        let t = build_truncation(1.0).unwrap();
        let h = 1e-6;
        for i in 0..400 {
            let z = -2.5 + 5.0 * i as f64 / 399.0;
            let fd = (t.value(z + h) - t.value(z - h)) / (2.0 * h);
            assert!((fd - t.derivative(z)).abs() < 1e-8, "z = {z}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            eps_ladder: vec![0.5, 1.0],
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            eps_ladder: vec![],
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn quadratic_is_discretely_harmonic() {
        let f = make_builtin_family("identity", &[]).unwrap();
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 9).unwrap();
        let w = g.sample(|c| c[0] * c[0] - c[1] * c[1]);
        let t = build_truncation(10.0).unwrap();
        let r = residual(&f, &g, &w, 0.0, &t).unwrap();
        assert!(max_norm(&r) < 1e-12);
    }

    /// Non-diagonal, z-dependent field used to exercise every stencil term.
    struct Mixed;

    impl CoefficientField for Mixed {
        fn dim(&self) -> usize {
            2
        }
        fn matrix(&self, x: &[f64], z: f64) -> nalgebra::DMatrix<f64> {
            let a = 1.0 + 0.3 * z.sin() + 0.2 * x[0];
            let b = 1.5 + 0.4 * (z * x[1]).cos();
            let c = 0.1 * (1.0 + z * z).ln() + 0.05;
            nalgebra::DMatrix::from_row_slice(2, 2, &[a, c, c, b])
        }
        fn k(&self, _x: &[f64], _z: f64) -> nalgebra::DVector<f64> {
            nalgebra::DVector::from_vec(vec![0.5, 0.5])
        }
        fn drift(&self, x: &[f64], z: f64) -> nalgebra::DVector<f64> {
            nalgebra::DVector::from_vec(vec![z - 0.1, x[0] * z])
        }
        fn drift_dz(&self, x: &[f64], _z: f64) -> nalgebra::DVector<f64> {
            nalgebra::DVector::from_vec(vec![1.0, x[0]])
        }
        fn zero_order(&self, x: &[f64], z: f64) -> f64 {
            -z * z * z - x[1]
        }
        fn zero_order_dz(&self, _x: &[f64], z: f64) -> f64 {
            -3.0 * z * z
        }
    }

    fn directional_check(field: &dyn CoefficientField, grid: &StructuredGrid, trunc: &TruncationProfile, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-0.9..0.9)).collect();
        let eps = 0.3;
        let asm = assemble_residual(field, grid, &w, eps, trunc).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let v: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wp: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let wm: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let rp = residual(field, grid, &wp, eps, trunc).unwrap();
            let rm = residual(field, grid, &wm, eps, trunc).unwrap();
            let jv = asm.jacobian.mul_vec(&v);
            let scale = max_norm(&jv).max(1.0);
            for p in grid.interior_nodes() {
                let fd = (rp[p] - rm[p]) / (2.0 * h);
                assert!((fd - jv[p]).abs() < 1e-6 * scale, "node {p}: {fd} vs {}", jv[p]);
            }
        }
    }

    #[test]
    fn jacobian_matches_differences_mixed_field() {
        let g = StructuredGrid::new(vec![-1.0, 0.0], vec![1.0, 1.5], vec![9, 7]).unwrap();
        directional_check(&Mixed, &g, &build_truncation(0.6).unwrap(), 3);
    }

    #[test]
    fn jacobian_matches_differences_sharpness() {
        let f = make_builtin_family("sharpness", &[1.0]).unwrap();
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 17).unwrap();
        directional_check(&f, &g, &build_truncation(1.0).unwrap(), 11);
    }

    #[test]
    fn constant_data_is_fixed_point() {
        let f = make_builtin_family("identity", &[]).unwrap();
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 11).unwrap();
        let phi = BoundaryData::constant(&g, 0.7);
        let t = build_truncation(1.0).unwrap();
        let sol = newton_solve(&f, &g, &phi, 0.5, &t, &SolverConfig::default(), None).unwrap();
        assert!(sol.newton_iters <= 1);
        assert!(sol.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn linear_case_reproduces_quadratic() {
        let f = make_builtin_family("identity", &[]).unwrap();
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 17).unwrap();
        let exact = g.sample(|c| c[0] * c[0] - c[1] * c[1]);
        let phi = BoundaryData::from_values(&g, exact.clone()).unwrap();
        let t = build_truncation(1.0).unwrap();
        let sol = newton_solve(&f, &g, &phi, 0.5, &t, &SolverConfig::default(), None).unwrap();
        let err = sol.values.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10);
    }

    #[test]
    fn m_matrix_pattern_for_diagonal_fields() {
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 9).unwrap();
        let t = build_truncation(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fedii = make_builtin_family("fedii", &[]).unwrap().with_drift(vec![0.7, -0.4]).unwrap();
        let op = assemble_residual(&fedii, &g, &w, 1e-3, &t).unwrap().jacobian;
        assert!(check_m_matrix(&op, &g).holds);
        let sharp = make_builtin_family("sharpness", &[1.0]).unwrap();
        let op = frozen_operator(&sharp, &g, &w, 1e-3, &t).unwrap();
        assert!(check_m_matrix(&op, &g).holds);
    }

    #[test]
    fn zero_data_gives_zero_ladder() {
        let f = make_builtin_family("sharpness", &[1.0]).unwrap();
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 9).unwrap();
        let phi = BoundaryData::constant(&g, 0.0);
        let cfg = SolverConfig {
            eps_ladder: vec![1.0, 0.1, 0.01],
            ..SolverConfig::default()
        };
        let ladder = viscosity_continuation(&f, &g, &phi, &cfg).unwrap();
        assert_eq!(ladder.rungs.len(), 3);
        for r in &ladder.rungs {
            assert_eq!(r.sup_norm(), 0.0);
        }
        assert_eq!(ladder.differences, vec![0.0, 0.0]);
    }

    #[test]
    fn truncation_below_data_rejected() {
        let g = StructuredGrid::uniform(2, -1.0, 1.0, 5).unwrap();
        let phi = BoundaryData::constant(&g, 2.0);
        let cfg = SolverConfig {
            truncation: Some(1.0),
            ..SolverConfig::default()
        };
        assert!(truncation_level(&g, &phi, &cfg).is_err());
        assert_eq!(truncation_level(&g, &phi, &SolverConfig::default()).unwrap(), 2.0);
        let zero = BoundaryData::constant(&g, 0.0);
        assert_eq!(truncation_level(&g, &zero, &SolverConfig::default()).unwrap(), 1.0);
    }
}
