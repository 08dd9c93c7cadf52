//! Discrete checks of the maximum principle, the comparison principle and
//! interior derivative control along the viscosity ladder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coefficients::CoefficientField;
use crate::error::{param, Result};
use crate::grid::{BoundaryData, StructuredGrid};
use crate::solver::{viscosity_continuation, DiscreteSolution, SolverConfig};

/// Which principle a report is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleName {
    Maximum,
    Comparison,
    InteriorBounds,
    Barrier,
    BoundaryModulus,
}

/// Outcome of a principle check. `holds ⇔ margin ≥ −tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipleReport {
    pub name: PrincipleName,
    pub holds: bool,
    /// Worst slack of the checked inequality.
    pub margin: f64,
    /// Node (or sample) index where the margin is attained.
    pub witness: Option<usize>,
    pub tol: f64,
    pub metadata: BTreeMap<String, Value>,
    /// Violated preconditions found by sampling.
    pub warnings: Vec<String>,
}

impl PrincipleReport {
    pub(crate) fn new(name: PrincipleName, margin: f64, witness: Option<usize>, tol: f64) -> Self {
        Self {
            name,
            holds: margin >= -tol,
            margin,
            witness,
            tol,
            metadata: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

/// Samples the sign conditions `f(x,z)·sign z ≤ 0` and `f_z ≤ 0` at the
/// grid nodes for `|z| ≤ z_max`.
fn zero_order_warnings(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    z_max: f64,
) -> Vec<String> {
    let mut warnings = Vec::new();
    let zs: Vec<f64> = (0..9).map(|i| z_max * (-1.0 + i as f64 / 4.0)).collect();
    let mut sign_bad = None;
    let mut slope_bad = None;
    'outer: for p in 0..grid.len() {
        let x = grid.coords(p);
        for &z in &zs {
            if sign_bad.is_none() && field.zero_order(&x, z) * z.signum() > 0.0 && z != 0.0 {
                sign_bad = Some((x.clone(), z));
            }
            if slope_bad.is_none() && field.zero_order_dz(&x, z) > 0.0 {
                slope_bad = Some((x.clone(), z));
            }
            if sign_bad.is_some() && slope_bad.is_some() {
                break 'outer;
            }
        }
    }
    if let Some((x, z)) = sign_bad {
        warnings.push(format!("f(x,z)·sign z > 0 at x = {x:?}, z = {z}"));
    }
    if let Some((x, z)) = slope_bad {
        warnings.push(format!("f_z(x,z) > 0 at x = {x:?}, z = {z}"));
    }
    warnings
}

/// `sup_Ω |w| ≤ sup_∂Ω |φ| + tol` with `tol = 1e−8(1 + sup|φ|)`.
///
/// The margin is `sup|φ| − max_interior |w|`; the witness is the interior
/// node of largest `|w|`. Sign conditions on `f` are sampled and reported
/// as warnings.
pub fn check_maximum_principle(
    field: &dyn CoefficientField,
    sol: &DiscreteSolution,
    dirichlet: &BoundaryData,
) -> Result<PrincipleReport> {
    let grid = &sol.grid;
    if dirichlet.len() != grid.len() || sol.values.len() != grid.len() {
        return param("solution, boundary data and grid do not match");
    }
    let sup_phi = dirichlet.sup_abs(grid);
    let mut worst = (0.0f64, None);
    for p in grid.interior_nodes() {
        let v = sol.values[p].abs();
        if worst.1.is_none() || v > worst.0 {
            worst = (v, Some(p));
        }
    }
    let tol = 1e-8 * (1.0 + sup_phi);
    let mut report = PrincipleReport::new(PrincipleName::Maximum, sup_phi - worst.0, worst.1, tol);
    report.warnings = zero_order_warnings(field, grid, sup_phi.max(sol.truncation));
    report.metadata.insert("eps".into(), json!(sol.eps));
    report.metadata.insert("sup_boundary".into(), json!(sup_phi));
    report.metadata.insert("max_interior".into(), json!(worst.0));
    Ok(report)
}

/// Nodewise `w₀ + κ − w₁`; the margin is its minimum.
pub fn compare_fields(w0: &[f64], w1: &[f64], kappa: f64, tol: f64) -> PrincipleReport {
    let mut worst = (f64::INFINITY, None);
    for (p, (a, b)) in w0.iter().zip(w1).enumerate() {
        let gap = a + kappa - b;
        if gap < worst.0 {
            worst = (gap, Some(p));
        }
    }
    PrincipleReport::new(PrincipleName::Comparison, worst.0, worst.1, tol)
}

/// Solves with data `φ₀` and `φ₁` on the same ladder and checks
/// `w₀ + κ ≥ w₁ − 1e−8` at the final rung.
///
/// Both solves share one truncation level, `max(sup|φ₀|, sup|φ₁|)` unless
/// configured.
pub fn check_comparison(
    field: &dyn CoefficientField,
    grid: &StructuredGrid,
    phi0: &BoundaryData,
    phi1: &BoundaryData,
    kappa: f64,
    config: &SolverConfig,
) -> Result<PrincipleReport> {
    if phi0.len() != grid.len() || phi1.len() != grid.len() {
        return param("boundary data do not match the grid");
    }
    let tol = 1e-8;
    for p in grid.boundary_nodes() {
        let gap = phi0.values()[p] + kappa - phi1.values()[p];
        if gap < -1e-14 * (1.0 + phi1.values()[p].abs()) {
            return param(format!(
                "boundary data are not ordered: φ₀ + κ − φ₁ = {gap} at node {p}"
            ));
        }
    }
    let mut warnings = Vec::new();
    let sup = phi0.sup_abs(grid).max(phi1.sup_abs(grid));
    let mut drift_seen = false;
    for p in 0..grid.len() {
        let x = grid.coords(p);
        if field.drift(&x, 0.0).norm() > 0.0 || field.drift(&x, sup).norm() > 0.0 {
            drift_seen = true;
            break;
        }
    }
    if drift_seen {
        warnings.push("field has a nonzero drift".to_string());
    }
    warnings.extend(
        zero_order_warnings(field, grid, sup.max(1.0))
            .into_iter()
            .filter(|w| w.starts_with("f_z")),
    );

    let mut cfg = config.clone();
    if cfg.truncation.is_none() {
        cfg.truncation = Some(if sup > 0.0 { sup } else { 1.0 });
    }
    let l0 = viscosity_continuation(field, grid, phi0, &cfg)?;
    let l1 = viscosity_continuation(field, grid, phi1, &cfg)?;
    let mut report = compare_fields(&l0.last().values, &l1.last().values, kappa, tol);
    report.warnings = warnings;
    report.metadata.insert("kappa".into(), json!(kappa));
    report.metadata.insert("eps".into(), json!(l0.last().eps));
    report
        .metadata
        .insert("truncation".into(), json!(cfg.truncation));
    Ok(report)
}

/// Interior derivative statistics of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeStats {
    /// Largest Euclidean norm of the centered-difference gradient.
    pub max_grad: f64,
    /// Largest Frobenius norm of the centered-difference Hessian.
    pub max_hess: f64,
    /// Node of the largest Hessian.
    pub hess_node: usize,
}

/// Nodes of the box shrunk by `shrink` about its center, excluding the
/// outer shell so that every centered stencil fits.
pub fn shrunk_interior(grid: &StructuredGrid, shrink: f64) -> Vec<usize> {
    let center = grid.center();
    let half: Vec<f64> = grid
        .lows()
        .iter()
        .zip(grid.highs())
        .map(|(l, h)| 0.5 * (h - l) * shrink)
        .collect();
    grid.interior_nodes()
        .into_iter()
        .filter(|&p| {
            grid.coords(p)
                .iter()
                .zip(&center)
                .zip(&half)
                .all(|((x, c), r)| (x - c).abs() <= r * (1.0 + 1e-12))
        })
        .collect()
}

/// Gradient and Hessian maxima over the given interior nodes.
pub fn derivative_stats(grid: &StructuredGrid, w: &[f64], nodes: &[usize]) -> DerivativeStats {
    let n = grid.dim();
    let s = grid.strides();
    let h = grid.spacing();
    let mut out = DerivativeStats {
        max_grad: 0.0,
        max_hess: 0.0,
        hess_node: nodes.first().copied().unwrap_or(0),
    };
    for &p in nodes {
        let mut g2 = 0.0;
        let mut h2 = 0.0;
        for i in 0..n {
            let d = (w[p + s[i]] - w[p - s[i]]) / (2.0 * h[i]);
            g2 += d * d;
            let dii = (w[p + s[i]] - 2.0 * w[p] + w[p - s[i]]) / (h[i] * h[i]);
            h2 += dii * dii;
            for j in (i + 1)..n {
                let dij = (w[p + s[i] + s[j]] - w[p + s[i] - s[j]] - w[p - s[i] + s[j]]
                    + w[p - s[i] - s[j]])
                    / (4.0 * h[i] * h[j]);
                h2 += 2.0 * dij * dij;
            }
        }
        out.max_grad = out.max_grad.max(g2.sqrt());
        if h2.sqrt() > out.max_hess {
            out.max_hess = h2.sqrt();
            out.hess_node = p;
        }
    }
    out
}

/// Blow-up factor allowed relative to the first rung.
pub const REGULARITY_FACTOR: f64 = 10.0;

/// Checks that interior gradient and Hessian maxima on the shrunk box stay
/// within [`REGULARITY_FACTOR`] times their first-rung values.
///
/// The per-rung table is stored in `metadata["rungs"]`.
pub fn interior_regularity_report(
    ladder: &[DiscreteSolution],
    shrink: f64,
) -> Result<PrincipleReport> {
    if ladder.len() < 3 {
        return param(format!("ladder needs at least 3 rungs, got {}", ladder.len()));
    }
    if !(shrink > 0.0 && shrink < 1.0) {
        return param(format!("shrink must lie in (0, 1), got {shrink}"));
    }
    let grid = &ladder[0].grid;
    if ladder.iter().any(|s| &s.grid != grid) {
        return param("ladder rungs live on different grids");
    }
    let nodes = shrunk_interior(grid, shrink);
    if nodes.is_empty() {
        return param("shrunk subdomain contains no interior nodes");
    }
    let stats: Vec<DerivativeStats> = ladder
        .iter()
        .map(|s| derivative_stats(grid, &s.values, &nodes))
        .collect();
    let floor = 1e-12;
    let grad_cap = REGULARITY_FACTOR * (stats[0].max_grad + floor);
    let hess_cap = REGULARITY_FACTOR * (stats[0].max_hess + floor);
    let mut worst = (f64::INFINITY, None);
    for st in &stats {
        let m = (grad_cap - st.max_grad).min(hess_cap - st.max_hess);
        if m < worst.0 {
            worst = (m, Some(st.hess_node));
        }
    }
    let mut report = PrincipleReport::new(PrincipleName::InteriorBounds, worst.0, worst.1, 0.0);
    let table: Vec<Value> = ladder
        .iter()
        .zip(&stats)
        .map(|(s, st)| json!({"eps": s.eps, "max_grad": st.max_grad, "max_hess": st.max_hess}))
        .collect();
    report.metadata.insert("rungs".into(), Value::Array(table));
    report.metadata.insert("shrink".into(), json!(shrink));
    report.metadata.insert("factor".into(), json!(REGULARITY_FACTOR));
    Ok(report)
}
