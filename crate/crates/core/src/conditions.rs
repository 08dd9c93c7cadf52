//! Sampled checks of the structural conditions on `𝒜`, `k⃗` and `γ`:
//! diagonal equivalence, nondegeneracy boxes, subordination, super
//! subordination, subunit drift and the Wirtinger-type gradient bound.
//!
//! Every "for all ξ" quantifier is discharged exactly at each sample by a
//! (generalized) symmetric eigenvalue computation.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{param, Error, Result};
use crate::linalg::{asymmetry, max_generalized_ratio, min_eigenvalue};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return param(format!("invalid interval [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half: f64) -> Result<Self> {
        Self::new(-half, half)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Axis-aligned box `x̃ + Π[−rᵢ, rᵢ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub center: Vec<f64>,
    pub half_lengths: Vec<f64>,
}

impl BoxRegion {
    pub fn new(center: Vec<f64>, half_lengths: Vec<f64>) -> Result<Self> {
        if center.is_empty() || center.len() != half_lengths.len() {
            return param("box center and half-lengths must be nonempty and of equal length");
        }
        if half_lengths.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return param(format!("box half-lengths must be positive, got {half_lengths:?}"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return param("box center must be finite");
        }
        Ok(Self {
            center,
            half_lengths,
        })
    }

    /// Box `Π[lowsᵢ, highsᵢ]`.
    pub fn from_bounds(lows: &[f64], highs: &[f64]) -> Result<Self> {
        if lows.len() != highs.len() {
            return param("box bounds must have equal length");
        }
        Self::new(
            lows.iter().zip(highs).map(|(l, h)| 0.5 * (l + h)).collect(),
            lows.iter().zip(highs).map(|(l, h)| 0.5 * (h - l)).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `γℛ`: same center, half-lengths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.center.clone(),
            self.half_lengths.iter().map(|r| r * factor).collect(),
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .zip(&self.half_lengths)
            .all(|((xi, ci), ri)| (xi - ci).abs() <= *ri)
    }
}

/// Names of the checked conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Diagonal,
    Subordinate,
    SuperSubordinate,
    Subunit,
    DriftSuperSubordinate,
    Wirtinger,
    Nondegeneracy,
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Diagonal => "diagonal",
            Self::Subordinate => "subordinate",
            Self::SuperSubordinate => "super_subordinate",
            Self::Subunit => "subunit",
            Self::DriftSuperSubordinate => "drift_super_subordinate",
            Self::Wirtinger => "wirtinger",
            Self::Nondegeneracy => "nondegeneracy",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ConditionName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "diagonal" => Self::Diagonal,
            "subordinate" => Self::Subordinate,
            "super_subordinate" => Self::SuperSubordinate,
            "subunit" => Self::Subunit,
            "drift_super_subordinate" => Self::DriftSuperSubordinate,
            "wirtinger" => Self::Wirtinger,
            "nondegeneracy" => Self::Nondegeneracy,
            other => return param(format!("unknown condition `{other}`")),
        })
    }
}

/// A point of `Ω × ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub z: f64,
}

/// Outcome of one sampled condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_name: ConditionName,
    pub holds: bool,
    /// Smallest constant making the inequality hold on the samples
    /// (`null` in JSON when infinite).
    pub best_constant: f64,
    pub worst_point: Option<SamplePoint>,
    pub samples: usize,
    /// Direction `ξ` attaining the worst ratio, when one exists.
    #[serde(skip)]
    pub witness: Option<Vec<f64>>,
}

/// How sample points are placed in a box and a `z` interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLattice {
    /// `per_axis` equispaced points per axis, endpoints included.
    Uniform { per_axis: usize },
    /// Center plus `center ± half·2^{−j}`, `j = 0..=levels`, per axis;
    /// refines geometrically toward the center.
    Dyadic { levels: u32 },
}

impl SampleLattice {
    fn axis_points(&self, center: f64, half: f64) -> Vec<f64> {
        match *self {
            SampleLattice::Uniform { per_axis } => {
                if half == 0.0 {
                    return vec![center];
                }
                let n = per_axis.max(2);
                (0..n)
                    .map(|i| center - half + 2.0 * half * i as f64 / (n - 1) as f64)
                    .collect()
            }
            SampleLattice::Dyadic { levels } => {
                let mut pts = vec![center];
                if half > 0.0 {
                    for j in 0..=levels {
                        let d = half * 0.5f64.powi(j as i32);
                        pts.push(center - d);
                        pts.push(center + d);
                    }
                    pts.sort_by(f64::total_cmp);
                }
                pts
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SampleLattice::Uniform { per_axis } if per_axis < 2 => {
                param("sample density must be at least 2 per axis")
            }
            SampleLattice::Dyadic { levels } if levels > 60 => {
                param("dyadic lattice depth must be at most 60")
            }
            _ => Ok(()),
        }
    }

    /// Sample points of `region × z_range`, axis 0 fastest, `z` slowest.
    pub fn points(&self, region: &BoxRegion, z_range: Interval) -> Vec<SamplePoint> {
        let axes: Vec<Vec<f64>> = region
            .center
            .iter()
            .zip(&region.half_lengths)
            .map(|(&c, &r)| self.axis_points(c, r))
            .collect();
        let zs = self.axis_points(z_range.center(), z_range.half_width());
        let mut out = Vec::new();
        for &z in &zs {
            for x in tensor(&axes) {
                out.push(SamplePoint { x, z });
            }
        }
        out
    }
}

/// Tensor product of per-axis coordinate lists, axis 0 fastest.
fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = axis
            .iter()
            .flat_map(|&v| {
                out.iter().map(move |prefix| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Per-sample ratio and optional witness direction.
struct Evaluated {
    ratio: f64,
    witness: Option<Vec<f64>>,
}

/// Ordered max-reduction: the first sample attaining the maximum wins.
fn reduce(
    name: ConditionName,
    points: Vec<SamplePoint>,
    values: Vec<Evaluated>,
    bound: Option<f64>,
    sqrt: bool,
) -> ConditionReport {
    let mut best = 0.0f64;
    let mut arg: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if arg.is_none() || v.ratio > best {
            best = v.ratio;
            arg = Some(i);
        }
    }
    let best_constant = if sqrt { best.max(0.0).sqrt() } else { best };
    let holds = match bound {
        Some(b) => best_constant <= b * (1.0 + 1e-12),
        None => best_constant.is_finite(),
    };
    let samples = points.len();
    let (worst_point, witness) = match arg {
        Some(i) => (Some(points[i].clone()), values[i].witness.clone()),
        None => (None, None),
    };
    ConditionReport {
        condition_name: name,
        holds,
        best_constant,
        worst_point,
        samples,
        witness,
    }
}

fn check_dims(field: &dyn CoefficientField, region: &BoxRegion) -> Result<()> {
    if region.dim() != field.dim() {
        return param(format!(
            "region dimension {} does not match field dimension {}",
            region.dim(),
            field.dim()
        ));
    }
    Ok(())
}

fn symmetric_matrix(field: &dyn CoefficientField, s: &SamplePoint) -> Result<DMatrix<f64>> {
    let a = field.matrix(&s.x, s.z);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asymmetry(&a) > 1e-12 * scale.max(1.0) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "coefficient matrix is not symmetric/finite at x = {:?}, z = {}",
            s.x, s.z
        )));
    }
    Ok(a)
}

/// Tests `Σkⁱξᵢ² ≤ ξᵀ𝒜ξ ≤ ΛΣkⁱξᵢ²` at every sample.
///
/// `best_constant` is the smallest `Λ ≥ 1` satisfying the upper bound; the
/// report fails when the lower bound is violated anywhere or `Λ` exceeds
/// `lambda_bound`.
pub fn check_diagonal_equivalence(
    field: &dyn CoefficientField,
    region: &BoxRegion,
    z_range: Interval,
    lambda_bound: f64,
    sample_density: usize,
) -> Result<ConditionReport> {
    check_dims(field, region)?;
    if !(lambda_bound >= 1.0) {
        return param(format!("lambda_bound must be >= 1, got {lambda_bound}"));
    }
    let lattice = SampleLattice::Uniform {
        per_axis: sample_density,
    };
    lattice.validate()?;
    let points = lattice.points(region, z_range);
    let evals: Vec<(f64, Evaluated)> = points
        .par_iter()
        .map(|s| {
            let a = symmetric_matrix(field, s)?;
            let k = field.k(&s.x, s.z);
            let dk = DMatrix::from_diagonal(&k);
            let scale = a.norm().max(f64::MIN_POSITIVE);
            let lower_gap = min_eigenvalue(&(&a - &dk)) / scale;
            let upper = max_generalized_ratio(&a, &dk);
            Ok((
                lower_gap,
                Evaluated {
                    ratio: upper.value.max(1.0),
                    witness: Some(upper.direction.iter().copied().collect()),
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut worst_lower = (0.0f64, None);
    for (i, (gap, _)) in evals.iter().enumerate() {
        if *gap < worst_lower.0 {
            worst_lower = (*gap, Some(i));
        }
    }
    let values: Vec<Evaluated> = evals.into_iter().map(|e| e.1).collect();
    let mut report = reduce(
        ConditionName::Diagonal,
        points.clone(),
        values,
        Some(lambda_bound),
        false,
    );
    if worst_lower.0 < -1e-10 {
        report.holds = false;
        if let Some(i) = worst_lower.1 {
            report.worst_point = Some(points[i].clone());
            let s = &points[i];
            let a = field.matrix(&s.x, s.z);
            let dk = DMatrix::from_diagonal(&field.k(&s.x, s.z));
            let eig = nalgebra::SymmetricEigen::new(&a - &dk);
            let j = eig.eigenvalues.imin();
            report.witness = Some(eig.eigenvectors.column(j).iter().copied().collect());
        }
    }
    Ok(report)
}

/// Options for [`check_subordination_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub lattice: SampleLattice,
    /// Optional upper bounds per condition; unbounded checks hold iff the
    /// best constant is finite.
    pub bounds: BTreeMap<ConditionName, f64>,
    /// Exponent `θ` in `|∂_z𝒜ξ|² ≤ B²(k*)^{2θ−1} ξᵀ𝒜ξ`; `θ = 1` is the
    /// super subordination condition itself.
    pub super_exponent: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            lattice: SampleLattice::Uniform { per_axis: 9 },
            bounds: BTreeMap::new(),
            super_exponent: 1.0,
        }
    }
}

fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose() * m
}

fn ratio_eval(p: &DMatrix<f64>, s: &DMatrix<f64>) -> Evaluated {
    let r = max_generalized_ratio(p, s);
    Evaluated {
        ratio: r.value,
        witness: Some(r.direction.iter().copied().collect()),
    }
}

fn subunit_eval(field: &dyn CoefficientField, s: &SamplePoint, a: &DMatrix<f64>) -> Evaluated {
    let g = field.drift(&s.x, s.z);
    if !field.is_diagonal() {
        return ratio_eval(&outer(&g), a);
    }
    let mut sum = 0.0;
    for i in 0..g.len() {
        let aii = a[(i, i)];
        if aii > 0.0 {
            sum += g[i] * g[i] / aii;
        } else if g[i] != 0.0 {
            let mut e = vec![0.0; g.len()];
            e[i] = 1.0;
            return Evaluated {
                ratio: f64::INFINITY,
                witness: Some(e),
            };
        }
    }
    Evaluated {
        ratio: sum,
        witness: None,
    }
}

fn wirtinger_eval(field: &dyn CoefficientField, s: &SamplePoint) -> Evaluated {
    let n = field.dim();
    let k = field.k(&s.x, s.z);
    let kz = field.k_dz(&s.x, s.z);
    let kx: Vec<DVector<f64>> = (0..n).map(|a| field.k_dx(&s.x, s.z, a)).collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        let grad2 = kz[i] * kz[i] + kx.iter().map(|d| d[i] * d[i]).sum::<f64>();
        let r = if k[i] > 0.0 {
            grad2 / k[i]
        } else if grad2 > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(r);
    }
    Evaluated {
        ratio: worst,
        witness: None,
    }
}

/// Sampled constants of the subordination family of conditions.
///
/// Each constant is the square root of the worst generalized eigenvalue
/// `max ξᵀPξ / ξᵀSξ`:
///
/// | flag                      | `P`                              | `S`                |
/// |---------------------------|----------------------------------|--------------------|
/// | `subordinate`             | `Σ(∂ᵢ𝒜)ᵀ∂ᵢ𝒜 + (∂_z𝒜)ᵀ∂_z𝒜`       | `𝒜`                |
/// | `super_subordinate`       | `(∂_z𝒜)ᵀ∂_z𝒜`                    | `(k*)^{2θ−1} 𝒜`    |
/// | `subunit`                 | `γγᵀ`                            | `𝒜`                |
/// | `drift_super_subordinate` | `∂_zγ ∂_zγᵀ`                     | `k* 𝒜`             |
///
/// The `wirtinger` flag reports `max |∇_{x,z}kⁱ| / √kⁱ` and requires `k⃗`
/// to be at least twice differentiable.
pub fn check_subordination_suite(
    field: &dyn CoefficientField,
    region: &BoxRegion,
    z_range: Interval,
    flags: &[ConditionName],
    options: &SuiteOptions,
) -> Result<Vec<ConditionReport>> {
    check_dims(field, region)?;
    if flags.is_empty() {
        return param("empty condition flag set");
    }
    options.lattice.validate()?;
    for f in flags {
        if matches!(f, ConditionName::Diagonal | ConditionName::Nondegeneracy) {
            return param(format!("`{f}` is not part of the subordination suite"));
        }
    }
    if flags.contains(&ConditionName::Wirtinger) && field.k_regularity() < 2 {
        return param(format!(
            "wirtinger check needs k in C², field `{}` has only {} continuous derivatives",
            field.name(),
            field.k_regularity()
        ));
    }
    let theta = options.super_exponent;
    if !(theta.is_finite() && theta >= 0.5) {
        return param(format!("super subordination exponent must be >= 1/2, got {theta}"));
    }
    let points = options.lattice.points(region, z_range);
    let n = field.dim();

    let mut reports = Vec::new();
    for &flag in flags {
        let values: Vec<Evaluated> = points
            .par_iter()
            .map(|s| {
                let a = symmetric_matrix(field, s)?;
                Ok(match flag {
                    ConditionName::Subordinate => {
                        let mut p = gram(&field.matrix_dz(&s.x, s.z));
                        for i in 0..n {
                            p += gram(&field.matrix_dx(&s.x, s.z, i));
                        }
                        ratio_eval(&p, &a)
                    }
                    ConditionName::SuperSubordinate => {
                        let ks = field.kstar(&s.x, s.z).max(0.0);
                        let p = gram(&field.matrix_dz(&s.x, s.z));
                        ratio_eval(&p, &(a * ks.powf(2.0 * theta - 1.0)))
                    }
                    ConditionName::Subunit => subunit_eval(field, s, &a),
                    ConditionName::DriftSuperSubordinate => {
                        let ks = field.kstar(&s.x, s.z).max(0.0);
                        let p = outer(&field.drift_dz(&s.x, s.z));
                        ratio_eval(&p, &(a * ks))
                    }
                    ConditionName::Wirtinger => wirtinger_eval(field, s),
                    ConditionName::Diagonal | ConditionName::Nondegeneracy => unreachable!(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(reduce(
            flag,
            points.clone(),
            values,
            options.bounds.get(&flag).copied(),
            true,
        ));
    }
    Ok(reports)
}

/// Searches for a box `ℛ` with half-lengths `< epsilon`, `x ∈ ⅓ℛ`, and
/// `kⁱ > 0` on the i-wrap `𝒯ᵢ(ℛ)` for every `i` and sampled `z`.
///
/// Candidates use half-lengths `ε/2, ε/4, ε/8` and center offsets that are
/// multiples of `ε/8` with `|offset| ≤ r/3`; offsets are tried in the order
/// `+1, −1, +2, −2, …, 0` per axis, axis 0 fastest.
pub fn check_nondegeneracy_box(
    field: &dyn CoefficientField,
    x: &[f64],
    epsilon: f64,
    z_range: Interval,
    search_budget: usize,
    samples_per_axis: usize,
) -> Result<BoxRegion> {
    let n = field.dim();
    if x.len() != n {
        return param(format!("point has {} coordinates, field dimension is {n}", x.len()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    if search_budget == 0 {
        return param("search budget must be positive");
    }
    let density = samples_per_axis.max(2);
    let step = epsilon / 8.0;
    let mut tried = 0usize;
    let mut best: Option<(f64, BoxRegion, usize, Vec<f64>)> = None;

    for div in [2.0, 4.0, 8.0] {
        let half = epsilon / div;
        let jmax = ((half / 3.0) / step + 1e-12).floor() as i64;
        let mut offsets = Vec::new();
        for j in 1..=jmax {
            offsets.push(j);
            offsets.push(-j);
        }
        offsets.push(0);
        let per_axis: Vec<Vec<f64>> = (0..n)
            .map(|a| offsets.iter().map(|&j| x[a] + j as f64 * step).collect())
            .collect();
        let mut combo = vec![0usize; n];
        loop {
            if tried == search_budget {
                break;
            }
            tried += 1;
            let center: Vec<f64> = (0..n).map(|a| per_axis[a][combo[a]]).collect();
            let candidate = BoxRegion::new(center, vec![half; n])?;
            let (margin, axis, point) = wrap_margin(field, &candidate, z_range, density);
            if margin > 0.0 {
                return Ok(candidate);
            }
            if best.as_ref().is_none_or(|b| margin > b.0) {
                best = Some((margin, candidate, axis, point));
            }
            // advance the odometer, axis 0 fastest
            let mut a = 0;
            while a < n {
                combo[a] += 1;
                if combo[a] < offsets.len() {
                    break;
                }
                combo[a] = 0;
                a += 1;
            }
            if a == n {
                break;
            }
        }
        if tried == search_budget {
            break;
        }
    }
    let (_, b, axis, point) = best.expect("at least one candidate is tried");
    Err(Error::NondegeneracyViolation {
        budget: search_budget,
        best_center: b.center,
        best_half_lengths: b.half_lengths,
        failing_axis: axis,
        failing_point: point,
    })
}

/// Smallest `kⁱ(y,z) − tol_pos` over the sampled i-wraps, with the axis and
/// point `(y, z)` where it is attained.
fn wrap_margin(
    field: &dyn CoefficientField,
    b: &BoxRegion,
    z_range: Interval,
    density: usize,
) -> (f64, usize, Vec<f64>) {
    let n = field.dim();
    let lattice = SampleLattice::Uniform { per_axis: density };
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|a| lattice.axis_points(b.center[a], b.half_lengths[a]))
        .collect();
    let zs = lattice.axis_points(z_range.center(), z_range.half_width());
    let mut worst = (f64::INFINITY, 0usize, Vec::new());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for side in [-1.0, 1.0] {
                let mut face_axes = axes.clone();
                face_axes[j] = vec![b.center[j] + side * b.half_lengths[j]];
                for y in tensor(&face_axes) {
                    for &z in &zs {
                        let k = field.k(&y, z);
                        let tol = 1e-12 * (1.0 + k.norm());
                        let margin = k[i] - tol;
                        if margin < worst.0 {
                            let mut pt = y.clone();
                            pt.push(z);
                            worst = (margin, i, pt);
                        }
                    }
                }
            }
        }
    }
    worst
}
