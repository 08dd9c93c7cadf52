//! Coefficient fields `𝒜(x,z)`, `k⃗(x,z)`, `γ(x,z)` and `f(x,z)` of the
//! divergence-form operator
//!
//! ```text
//! Q w = div 𝒜(x,w) ∇w + γ(x,w)·∇w + f(x,w)
//! ```
//!
//! together with the built-in coefficient families.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

const FD_STEP: f64 = 1e-6;

/// Pointwise evaluators of the problem coefficients.
///
/// Implementors must be pure: the same `(x, z)` always yields the same value.
/// Only `dim`, `matrix` and `k` are required; derivatives fall back to
/// centered differences and the lower-order terms default to zero.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;

    /// Symmetric matrix `𝒜(x,z)`.
    fn matrix(&self, x: &[f64], z: f64) -> DMatrix<f64>;

    /// Diagonal comparison weights `k⃗(x,z)`.
    fn k(&self, x: &[f64], z: f64) -> DVector<f64>;

    fn name(&self) -> String {
        "custom".to_string()
    }

    fn matrix_dz(&self, x: &[f64], z: f64) -> DMatrix<f64> {
        (self.matrix(x, z + FD_STEP) - self.matrix(x, z - FD_STEP)) / (2.0 * FD_STEP)
    }

    fn matrix_dx(&self, x: &[f64], z: f64, axis: usize) -> DMatrix<f64> {
        let (xp, xm) = shifted(x, axis, FD_STEP);
        (self.matrix(&xp, z) - self.matrix(&xm, z)) / (2.0 * FD_STEP)
    }

    fn k_dz(&self, x: &[f64], z: f64) -> DVector<f64> {
        (self.k(x, z + FD_STEP) - self.k(x, z - FD_STEP)) / (2.0 * FD_STEP)
    }

    fn k_dx(&self, x: &[f64], z: f64, axis: usize) -> DVector<f64> {
        let (xp, xm) = shifted(x, axis, FD_STEP);
        (self.k(&xp, z) - self.k(&xm, z)) / (2.0 * FD_STEP)
    }

    /// Number of continuous derivatives of `k⃗` (`u32::MAX` for smooth).
    fn k_regularity(&self) -> u32 {
        u32::MAX
    }

    /// Drift `γ(x,z)`.
    fn drift(&self, _x: &[f64], _z: f64) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    fn drift_dz(&self, _x: &[f64], _z: f64) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Zero-order term `f(x,z)`.
    fn zero_order(&self, _x: &[f64], _z: f64) -> f64 {
        0.0
    }

    fn zero_order_dz(&self, _x: &[f64], _z: f64) -> f64 {
        0.0
    }

    /// True when `𝒜` is diagonal everywhere.
    fn is_diagonal(&self) -> bool {
        false
    }

    /// `k*(x,z) = minᵢ kⁱ(x,z)`.
    fn kstar(&self, x: &[f64], z: f64) -> f64 {
        self.k(x, z).min()
    }
}

fn shifted(x: &[f64], axis: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[axis] += h;
    xm[axis] -= h;
    (xp, xm)
}

/// Names accepted by [`make_builtin_family`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Sharpness,
    Fedii,
    Axis,
    Identity,
    Power,
}

impl FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpness" => Ok(Self::Sharpness),
            "fedii" => Ok(Self::Fedii),
            "axis" => Ok(Self::Axis),
            "identity" => Ok(Self::Identity),
            "power" => Ok(Self::Power),
            other => param(format!("unknown coefficient family `{other}`")),
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Sharpness => "sharpness",
            Self::Fedii => "fedii",
            Self::Axis => "axis",
            Self::Identity => "identity",
            Self::Power => "power",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Identity,
    /// `k(x,z) = 2m (x₁² + z²)^{2m-1}`, the conjugate-equation weight.
    Sharpness { m: u32 },
    /// `k(x₁) = exp(-1/x₁²)`, extended by zero.
    Fedii,
    /// `kⁱ(x) = exp(-1/dᵢ²)` with `dᵢ` the distance to the i-th axis.
    Axis,
    /// `kⁱ(x) = |x₁|^p` for `i ≥ 2`.
    Power { p: f64 },
}

/// One of the built-in families, optionally with a constant drift and a
/// linear zero-order term `f(x,z) = c·z`.
///
/// All built-in matrices are diagonal, `𝒜 = diag(k⃗)` with `k¹ ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinFamily {
    kind: Kind,
    dim: usize,
    drift: Option<DVector<f64>>,
    zero_slope: f64,
}

/// Builds a built-in family from its name and parameter list.
///
/// | name        | params      | dim           |
/// |-------------|-------------|---------------|
/// | `identity`  | `[n?]`      | `n` (default 2) |
/// | `sharpness` | `[m]`       | 2             |
/// | `fedii`     | `[]`        | 2             |
/// | `axis`      | `[n?]`      | `n` (default 2) |
/// | `power`     | `[p, n?]`   | `n` (default 2) |
pub fn make_builtin_family(name: &str, params: &[f64]) -> Result<BuiltinFamily> {
    let family: FamilyName = name.parse()?;
    let dim_param = |idx: usize| -> Result<usize> {
        match params.get(idx) {
            None => Ok(2),
            Some(&n) if n.fract() == 0.0 && (2.0..=3.0).contains(&n) => Ok(n as usize),
            Some(&n) => param(format!("{family}: dimension must be 2 or 3, got {n}")),
        }
    };
    let max_params = |count: usize| -> Result<()> {
        if params.len() > count {
            param(format!(
                "{family}: expected at most {count} parameters, got {}",
                params.len()
            ))
        } else {
            Ok(())
        }
    };
    let (kind, dim) = match family {
        FamilyName::Identity => {
            max_params(1)?;
            (Kind::Identity, dim_param(0)?)
        }
        FamilyName::Sharpness => {
            max_params(1)?;
            let m = match params.first() {
                Some(&m) if m >= 1.0 && m.fract() == 0.0 && m <= 64.0 => m as u32,
                Some(&m) => return param(format!("sharpness: m must be an integer >= 1, got {m}")),
                None => return param("sharpness: missing parameter m"),
            };
            (Kind::Sharpness { m }, 2)
        }
        FamilyName::Fedii => {
            max_params(0)?;
            (Kind::Fedii, 2)
        }
        FamilyName::Axis => {
            max_params(1)?;
            (Kind::Axis, dim_param(0)?)
        }
        FamilyName::Power => {
            max_params(2)?;
            let p = match params.first() {
                Some(&p) if p > 0.0 && p.is_finite() => p,
                Some(&p) => return param(format!("power: exponent must be positive, got {p}")),
                None => return param("power: missing exponent p"),
            };
            (Kind::Power { p }, dim_param(1)?)
        }
    };
    Ok(BuiltinFamily {
        kind,
        dim,
        drift: None,
        zero_slope: 0.0,
    })
}

impl BuiltinFamily {
    /// Adds a constant drift `γ`.
    pub fn with_drift(mut self, drift: Vec<f64>) -> Result<Self> {
        if drift.len() != self.dim {
            return param(format!(
                "drift has {} components, field dimension is {}",
                drift.len(),
                self.dim
            ));
        }
        self.drift = Some(DVector::from_vec(drift));
        Ok(self)
    }

    /// Sets `f(x,z) = slope·z`. A positive slope violates the sign
    /// condition of the maximum principle.
    pub fn with_zero_order_slope(mut self, slope: f64) -> Self {
        self.zero_slope = slope;
        self
    }

    pub fn family(&self) -> FamilyName {
        match self.kind {
            Kind::Identity => FamilyName::Identity,
            Kind::Sharpness { .. } => FamilyName::Sharpness,
            Kind::Fedii => FamilyName::Fedii,
            Kind::Axis => FamilyName::Axis,
            Kind::Power { .. } => FamilyName::Power,
        }
    }

    /// Per-component `(kⁱ, ∂_z kⁱ, ∇ₓ kⁱ)` at a point.
    fn k_parts(&self, x: &[f64], z: f64) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let n = self.dim;
        let mut k = vec![1.0; n];
        let mut kz = vec![0.0; n];
        let mut kx = vec![vec![0.0; n]; n];
        match self.kind {
            Kind::Identity => {}
            Kind::Sharpness { m } => {
                let m = m as i32;
                let r2 = x[0] * x[0] + z * z;
                let base = r2.powi(2 * m - 2);
                let mf = m as f64;
                k[1] = 2.0 * mf * base * r2;
                // d/dr2 of 2m r2^{2m-1} = 2m(2m-1) r2^{2m-2}
                let dk_dr2 = 2.0 * mf * (2.0 * mf - 1.0) * base;
                kz[1] = dk_dr2 * 2.0 * z;
                kx[1][0] = dk_dr2 * 2.0 * x[0];
            }
            Kind::Fedii => {
                let (v, d) = flat_exp(x[0] * x[0]);
                k[1] = v;
                kx[1][0] = d * 2.0 * x[0];
            }
            Kind::Axis => {
                for i in 1..n {
                    let d2: f64 = (0..n).filter(|&j| j != i).map(|j| x[j] * x[j]).sum();
                    let (v, d) = flat_exp(d2);
                    k[i] = v;
                    for j in (0..n).filter(|&j| j != i) {
                        kx[i][j] = d * 2.0 * x[j];
                    }
                }
            }
            Kind::Power { p } => {
                let a = x[0].abs();
                let v = a.powf(p);
                let d = if a == 0.0 {
                    0.0
                } else {
                    p * a.powf(p - 1.0) * x[0].signum()
                };
                for i in 1..n {
                    k[i] = v;
                    kx[i][0] = d;
                }
            }
        }
        (k, kz, kx)
    }
}

/// `exp(-1/s)` and its derivative in `s`, both extended by zero at `s = 0`.
fn flat_exp(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0)
    } else {
        let v = (-1.0 / s).exp();
        (v, v / (s * s))
    }
}

impl CoefficientField for BuiltinFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        match self.kind {
            Kind::Sharpness { m } => format!("sharpness(m={m})"),
            Kind::Power { p } => format!("power(p={p})"),
            _ => self.family().to_string(),
        }
    }

    fn matrix(&self, x: &[f64], z: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.k(x, z))
    }

    fn k(&self, x: &[f64], z: f64) -> DVector<f64> {
        DVector::from_vec(self.k_parts(x, z).0)
    }

    fn matrix_dz(&self, x: &[f64], z: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.k_dz(x, z))
    }

    fn matrix_dx(&self, x: &[f64], z: f64, axis: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.k_dx(x, z, axis))
    }

    fn k_dz(&self, x: &[f64], z: f64) -> DVector<f64> {
        DVector::from_vec(self.k_parts(x, z).1)
    }

    fn k_dx(&self, x: &[f64], z: f64, axis: usize) -> DVector<f64> {
        let (_, _, kx) = self.k_parts(x, z);
        DVector::from_iterator(self.dim, kx.iter().map(|row| row[axis]))
    }

    fn k_regularity(&self) -> u32 {
        match self.kind {
            Kind::Power { p } => {
                let even_integer = p.fract() == 0.0 && (p as u64) % 2 == 0;
                if even_integer {
                    u32::MAX
                } else if p.fract() == 0.0 {
                    p as u32 - 1
                } else {
                    p.floor() as u32
                }
            }
            _ => u32::MAX,
        }
    }

    fn drift(&self, _x: &[f64], _z: f64) -> DVector<f64> {
        self.drift
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim))
    }

    fn zero_order(&self, _x: &[f64], z: f64) -> f64 {
        self.zero_slope * z
    }

    fn zero_order_dz(&self, _x: &[f64], _z: f64) -> f64 {
        self.zero_slope
    }

    fn is_diagonal(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_family() {
        let f = make_builtin_family("identity", &[]).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.matrix(&[0.3, -0.2], 1.5), DMatrix::identity(2, 2));
        assert_eq!(f.k(&[0.3, -0.2], 1.5), DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(f.drift(&[0.0, 0.0], 0.0).norm(), 0.0);
        assert_eq!(f.zero_order(&[0.0, 0.0], 3.0), 0.0);
        let f3 = make_builtin_family("identity", &[3.0]).unwrap();
        assert_eq!(f3.dim(), 3);
    }

    #[test]
    fn sharpness_weight_at_half() {
        let f = make_builtin_family("sharpness", &[1.0]).unwrap();
        let k = f.k(&[0.5, 0.7], 0.0);
        assert_eq!(k[0], 1.0);
        assert!((k[1] - 0.5).abs() < 1e-15);
        let a = f.matrix(&[0.5, 0.7], 0.0);
        assert_eq!(a[(0, 0)], 1.0);
        assert!((a[(1, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(a[(0, 1)], 0.0);
    }

    #[test]
    fn fedii_vanishes_only_on_axis() {
        let f = make_builtin_family("fedii", &[]).unwrap();
        assert_eq!(f.k(&[0.0, 0.3], 0.0)[1], 0.0);
        for x1 in [-0.5, 0.5] {
            let k = f.k(&[x1, 0.0], 0.0)[1];
            assert!(k > 0.0);
            assert!((k - (-4.0f64).exp()).abs() < 1e-15);
        }
        assert_eq!(f.k_dx(&[0.0, 0.1], 0.0, 0)[1], 0.0);
    }

    #[test]
    fn axis_family_in_three_dimensions() {
        let f = make_builtin_family("axis", &[3.0]).unwrap();
        // on the x₂ axis only k² may vanish
        let k = f.k(&[0.0, 0.4, 0.0], 0.0);
        assert_eq!(k[1], 0.0);
        assert!(k[2] > 0.0);
        assert_eq!(k[0], 1.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(
            make_builtin_family("sharpness", &[0.0]),
            Err(Error::Parameter(_))
        ));
        assert!(make_builtin_family("sharpness", &[1.5]).is_err());
        assert!(make_builtin_family("sharpness", &[]).is_err());
        assert!(make_builtin_family("power", &[-1.0]).is_err());
        assert!(make_builtin_family("identity", &[4.0]).is_err());
        assert!(make_builtin_family("fedii", &[1.0]).is_err());
        assert!(matches!(
            make_builtin_family("nope", &[]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn power_regularity() {
        let reg = |p: f64| make_builtin_family("power", &[p]).unwrap().k_regularity();
        assert_eq!(reg(2.0), u32::MAX);
        assert_eq!(reg(1.0), 0);
        assert_eq!(reg(3.0), 2);
        assert_eq!(reg(2.5), 2);
        assert_eq!(reg(1.5), 1);
    }

    #[test]
    fn lower_order_terms() {
        let f = make_builtin_family("identity", &[])
            .unwrap()
            .with_zero_order_slope(-2.0)
            .with_drift(vec![1.0, 0.5])
            .unwrap();
        assert_eq!(f.zero_order(&[0.0, 0.0], 0.25), -0.5);
        assert_eq!(f.zero_order_dz(&[0.0, 0.0], 0.25), -2.0);
        assert_eq!(f.drift(&[0.0, 0.0], 0.0)[1], 0.5);
        assert!(make_builtin_family("identity", &[])
            .unwrap()
            .with_drift(vec![1.0])
            .is_err());
    }
}
