//! Clamped B-spline bases with interior knots at empirical quantiles, and
//! their tensor products.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degree {
    Quadratic,
    Cubic,
}

impl Degree {
    pub fn order(self) -> usize {
        match self {
            Degree::Quadratic => 2,
            Degree::Cubic => 3,
        }
    }

    pub fn label(self) -> char {
        match self {
            Degree::Quadratic => 'Q',
            Degree::Cubic => 'C',
        }
    }
}

/// Univariate clamped B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisBasis {
    degree: usize,
    lo: f64,
    hi: f64,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl AxisBasis {
    pub fn new(degree: usize, lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::DegenerateSample(format!(
                "empty covariate range [{lo}, {hi}]"
            )));
        }
        let mut prev = lo;
        for &k in &interior {
            if !(k > prev) || !(k < hi) {
                return Err(Error::DegenerateSample(format!(
                    "interior knots {interior:?} are not strictly inside ({lo}, {hi})"
                )));
            }
            prev = k;
        }
        let mut knots = vec![lo; degree + 1];
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Ok(AxisBasis {
            degree,
            lo,
            hi,
            interior,
            knots,
        })
    }

    pub fn dim(&self) -> usize {
        self.degree + 1 + self.interior.len()
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Index of the first nonzero function and the `degree + 1` values
    /// starting there.
    pub fn eval_local(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let t = &self.knots;
        let x = x.clamp(self.lo, self.hi);
        let last = self.dim() - 1;
        let span = if x >= self.hi {
            last
        } else {
            // t[span] <= x < t[span + 1] with span in p..=last
            let upper = t[p + 1..=last + 1].partition_point(|&k| k <= x);
            p + upper
        };
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (span - p, n)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.dim()];
        let (first, vals) = self.eval_local(x);
        row[first..first + vals.len()].copy_from_slice(&vals);
        row
    }
}

/// Tensor-product basis; the last axis varies fastest in the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplineBasis {
    degree: Degree,
    axes: Vec<AxisBasis>,
}

impl SplineBasis {
    pub fn from_axes(degree: Degree, axes: Vec<AxisBasis>) -> Self {
        SplineBasis { degree, axes }
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisBasis] {
        &self.axes
    }

    pub fn k_n(&self) -> usize {
        self.axes.iter().map(AxisBasis::dim).product()
    }

    pub fn eval_row(&self, point: &[f64]) -> Vec<f64> {
        let mut row = vec![1.0];
        for (axis, &x) in self.axes.iter().zip(point) {
            let uni = axis.eval(x);
            let mut next = Vec::with_capacity(row.len() * uni.len());
            for &a in &row {
                next.extend(uni.iter().map(|&b| a * b));
            }
            row = next;
        }
        row
    }

    /// Basis values at each row of `points` (n x d).
    pub fn design_matrix(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.k_n();
        let mut out = DMatrix::zeros(points.nrows(), k);
        let mut point = vec![0.0; self.dim()];
        for i in 0..points.nrows() {
            for (j, p) in point.iter_mut().enumerate() {
                *p = points[(i, j)];
            }
            for (j, v) in self.eval_row(&point).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Basis values at the given list of points.
    pub fn design_rows<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = points.into_iter().map(|p| self.eval_row(p)).collect();
        let mut out = DMatrix::zeros(rows.len(), self.k_n());
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Linear interpolation between order statistics (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interior knots at the `i/(m+1)` empirical quantiles of each covariate,
/// boundary knots at the sample range.
pub fn build_basis(degree: Degree, knots_per_axis: &[usize], z: &DMatrix<f64>) -> Result<SplineBasis> {
    if knots_per_axis.len() != z.ncols() {
        return Err(Error::DimensionMismatch {
            expected: z.ncols(),
            got: knots_per_axis.len(),
        });
    }
    let n = z.nrows();
    let mut axes = Vec::with_capacity(z.ncols());
    for (j, &m) in knots_per_axis.iter().enumerate() {
        if n <= m + 1 {
            return Err(Error::DegenerateSample(format!(
                "{n} observations cannot support {m} interior knots"
            )));
        }
        let mut col: Vec<f64> = z.column(j).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        let interior = (1..=m)
            .map(|i| quantile_sorted(&col, i as f64 / (m + 1) as f64))
            .collect();
        axes.push(AxisBasis::new(degree.order(), col[0], col[n - 1], interior)?);
    }
    Ok(SplineBasis { degree, axes })
}
