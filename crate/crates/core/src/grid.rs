//! Rectangular grids over boxes in R^d and real functions sampled on them.
//!
//! Values are stored axis-major with the last axis varying fastest, so on a
//! 2-D grid with axes `x` (length `nx`) and `y` (length `ny`) the value at
//! `(x[i], y[j])` sits at linear index `i * ny + j`. Every operator and
//! constraint builder in the crate relies on this ordering.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("a grid needs at least one axis".into()));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {k} has {} points, need at least 2",
                    axis.len()
                )));
            }
            if axis.iter().any(|z| !z.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {k} has a non-finite coordinate")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidGrid(format!("axis {k} is not strictly increasing")));
            }
        }
        Ok(Grid { axes })
    }

    /// `n` equispaced points `lo + (hi - lo) * j / (n - 1)`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![linspace(lo, hi, n)?])
    }

    /// The canonical grid `z_j = j / (n - 1)` on `[0, 1]`.
    pub fn unit(n: usize) -> Result<Self> {
        Grid::uniform(0.0, 1.0, n)
    }

    /// Tensor product of equispaced axes over the box `[lo, hi]`.
    pub fn uniform_box(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::InvalidGrid("box bounds and counts disagree in length".into()));
        }
        let axes = lo
            .iter()
            .zip(hi)
            .zip(counts)
            .map(|((&a, &b), &n)| linspace(a, b, n))
            .collect::<Result<Vec<_>>>()?;
        Grid::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear-index stride of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.axes[k + 1].len();
        }
        strides
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let len = self.axes[k].len();
            out[k] = idx % len;
            idx /= len;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, axis)| axis[i])
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[a.len() - 1]).collect()
    }

    /// Trapezoid quadrature weights, one per grid point.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = self.axes.iter().map(|a| trapezoid(a)).collect();
        (0..self.len())
            .map(|idx| {
                self.multi_index(idx)
                    .iter()
                    .zip(&per_axis)
                    .map(|(&i, w)| w[i])
                    .product()
            })
            .collect()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::InvalidGrid(format!(
            "cannot place {n} points on [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|j| lo + step * j as f64).collect();
    out[n - 1] = hi;
    Ok(out)
}

fn trapezoid(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|j| {
            let left = if j > 0 { axis[j] - axis[j - 1] } else { 0.0 };
            let right = if j + 1 < n { axis[j + 1] - axis[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    Sup,
}

/// A real function sampled on every point of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionOnGrid {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl FunctionOnGrid {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FunctionOnGrid { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.points().map(|z| f(&z)).collect();
        FunctionOnGrid::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        FunctionOnGrid { grid, values }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        FunctionOnGrid {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn same_grid(&self, other: &FunctionOnGrid) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn norm(&self, p: Norm) -> f64 {
        match p {
            Norm::Sup => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::L1 => self
                .grid
                .quadrature_weights()
                .iter()
                .zip(&self.values)
                .map(|(w, v)| w * v.abs())
                .sum(),
            Norm::L2 => self
                .grid
                .quadrature_weights()
                .iter()
                .zip(&self.values)
                .map(|(w, v)| w * v * v)
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Pointwise `self - other`.
    pub fn diff(&self, other: &FunctionOnGrid) -> Result<FunctionOnGrid> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &FunctionOnGrid) -> Result<FunctionOnGrid> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Pointwise `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &FunctionOnGrid) -> Result<FunctionOnGrid> {
        self.zip_with(other, |x, y| x + a * y)
    }

    pub fn scale(&self, a: f64) -> FunctionOnGrid {
        self.with_values(self.values.iter().map(|v| a * v).collect())
    }

    fn zip_with(
        &self,
        other: &FunctionOnGrid,
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<FunctionOnGrid> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f1(values: Vec<f64>) -> FunctionOnGrid {
        let grid = Arc::new(Grid::unit(values.len()).unwrap());
        FunctionOnGrid::new(grid, values).unwrap()
    }

    #[test]
    fn sup_norm_is_max_abs() {
        assert_eq!(f1(vec![1.0, -3.0, 2.0]).norm(Norm::Sup), 3.0);
    }

    #[test]
    fn zero_function_has_zero_norms() {
        let f = f1(vec![0.0; 5]);
        for p in [Norm::L1, Norm::L2, Norm::Sup] {
            assert_eq!(f.norm(p), 0.0);
        }
    }

    #[test]
    fn trapezoid_l1_of_constant() {
        let f = f1(vec![1.0, 1.0, 1.0]);
        assert_eq!(f.grid().quadrature_weights(), vec![0.25, 0.5, 0.25]);
        assert!((f.norm(Norm::L1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diff_examples() {
        let f = f1(vec![61.0, 142.0, 45.0, 137.0]);
        let g = f1(vec![45.0, 61.0, 137.0, 142.0]);
        assert_eq!(f.diff(&g).unwrap().values(), &[16.0, 81.0, -92.0, -5.0]);
        let a = f1(vec![1.0, 2.0]);
        assert_eq!(a.diff(&a).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn diff_rejects_mismatched_grids() {
        let f = f1(vec![1.0, 2.0]);
        let g = f1(vec![1.0, 2.0, 3.0]);
        assert!(matches!(f.diff(&g), Err(Error::GridMismatch)));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![vec![0.0]]).is_err());
        assert!(Grid::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(Grid::new(vec![]).is_err());
        let g = Grid::uniform_box(&[0.0, 0.0], &[1.0, 2.0], &[3, 4]).unwrap();
        assert_eq!(g.len(), 12);
        assert_eq!(g.strides(), vec![4, 1]);
        assert_eq!(g.point(5), vec![0.5, 2.0 / 3.0]);
        assert_eq!(g.linear_index(&g.multi_index(7)), 7);
    }

    #[test]
    fn non_finite_values_rejected() {
        let grid = Arc::new(Grid::unit(2).unwrap());
        assert!(matches!(
            FunctionOnGrid::new(grid, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn triangle_inequality((a, b) in pair()) {
            let (f, g) = (f1(a), f1(b));
            let sum = f.add(&g).unwrap();
            for p in [Norm::L1, Norm::L2, Norm::Sup] {
                prop_assert!(sum.norm(p) <= f.norm(p) + g.norm(p) + 1e-9);
            }
        }

        #[test]
        fn absolute_homogeneity((a, _) in pair(), c in -10.0f64..10.0) {
            let f = f1(a);
            for p in [Norm::L1, Norm::L2, Norm::Sup] {
                let lhs = f.scale(c).norm(p);
                let rhs = c.abs() * f.norm(p);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
            }
        }
    }
}
