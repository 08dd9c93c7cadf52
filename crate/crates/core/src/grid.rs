//! Uniform tensor-product grids on axis-aligned boxes.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Uniform grid on `[lows, highs]` with `counts` nodes per axis.
///
/// Nodes are numbered with axis 0 varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    lows: Vec<f64>,
    highs: Vec<f64>,
    counts: Vec<usize>,
    #[serde(skip)]
    spacing: Vec<f64>,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl StructuredGrid {
    pub fn new(lows: Vec<f64>, highs: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let dim = lows.len();
        if !(2..=3).contains(&dim) {
            return param(format!("grid dimension must be 2 or 3, got {dim}"));
        }
        if highs.len() != dim || counts.len() != dim {
            return param("grid lows, highs and counts must have equal length");
        }
        for a in 0..dim {
            if counts[a] < 3 {
                return param(format!("grid axis {a}: need at least 3 nodes, got {}", counts[a]));
            }
            if !(lows[a].is_finite() && highs[a].is_finite() && highs[a] > lows[a]) {
                return param(format!(
                    "grid axis {a}: invalid extent [{}, {}]",
                    lows[a], highs[a]
                ));
            }
        }
        let spacing = (0..dim)
            .map(|a| (highs[a] - lows[a]) / (counts[a] - 1) as f64)
            .collect();
        let mut strides = vec![1; dim];
        for a in 1..dim {
            strides[a] = strides[a - 1] * counts[a - 1];
        }
        Ok(Self {
            lows,
            highs,
            counts,
            spacing,
            strides,
        })
    }

    /// Square/cubic grid `[low, high]^dim` with `count` nodes per axis.
    pub fn uniform(dim: usize, low: f64, high: f64, count: usize) -> Result<Self> {
        Self::new(vec![low; dim], vec![high; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    pub fn lows(&self) -> &[f64] {
        &self.lows
    }

    pub fn highs(&self) -> &[f64] {
        &self.highs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis integer index of a node.
    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.counts
            .iter()
            .map(|&c| {
                let i = rest % c;
                rest /= c;
                i
            })
            .collect()
    }

    pub fn node(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    /// Coordinate of index `i` along `axis`; the last node hits `highs` exactly.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.highs[axis]
        } else {
            self.lows[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.multi_index(node)
            .iter()
            .zip(&self.counts)
            .any(|(&i, &c)| i == 0 || i + 1 == c)
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|p| self.is_boundary(p)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.is_boundary(p)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&p| !self.is_boundary(p)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| h - l)
            .product()
    }

    pub fn diameter(&self) -> f64 {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|p| f(&self.coords(p))).collect()
    }

    /// Same box with `(count - 1) * factor + 1` nodes per axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.lows.clone(),
            self.highs.clone(),
            self.counts.iter().map(|c| (c - 1) * factor + 1).collect(),
        )
    }
}

/// Dirichlet data as a full nodal vector; only boundary entries are used.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    values: Vec<f64>,
}

impl BoundaryData {
    /// Samples `phi` on boundary nodes; interior entries are zero.
    pub fn from_fn(grid: &StructuredGrid, phi: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|p| {
                if grid.is_boundary(p) {
                    phi(&grid.coords(p))
                } else {
                    0.0
                }
            })
            .collect();
        Self { values }
    }

    pub fn from_values(grid: &StructuredGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return param(format!(
                "boundary data has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return param("boundary data must be finite");
        }
        Ok(Self { values })
    }

    pub fn constant(grid: &StructuredGrid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sup |φ|` over boundary nodes.
    pub fn sup_abs(&self, grid: &StructuredGrid) -> f64 {
        grid.boundary_nodes()
            .iter()
            .map(|&p| self.values[p].abs())
            .fold(0.0, f64::max)
    }

    /// Adds a constant to every value.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}
