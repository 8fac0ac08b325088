//! Wald functionals: operator residuals `||f - op(f)||` and sup-norm
//! distances to a shape cone.
//!
//! Cone distances are evaluated through exact closed forms. With `t` the
//! distance and `h` a nearest cone element, `h - t` is a cone minorant of
//! `f` and `h + t` a cone majorant, so the distance is half the largest gap
//! between `f` and its greatest cone minorant (or least cone majorant). For
//! the cones handled here those extremal elements are running maxima and
//! minima, convex minorants and concave majorants. [`cone_distance_lp`]
//! solves the same problem as a linear program.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FunctionOnGrid, Grid, Norm};
use crate::lp::{LinearProgram, LpError, LpStatus, Sense};
use crate::operators::{self, ShapeOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    Monotone,
    Convex,
    Concave,
    MonotoneConvex,
    MonotoneConcave,
}

impl Restriction {
    fn has_curvature(self) -> bool {
        !matches!(self, Restriction::Monotone)
    }

    /// The operator used to impose the restriction on an estimate.
    pub fn enforcing_operator(self) -> ShapeOperator {
        use ShapeOperator::*;
        match self {
            Restriction::Monotone => Rearrange,
            Restriction::Convex => Gcm,
            Restriction::Concave => Lcm,
            Restriction::MonotoneConvex => Compose(vec![Rearrange, Gcm]),
            Restriction::MonotoneConcave => Compose(vec![Rearrange, Lcm]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub restriction: Restriction,
    pub dim: usize,
}

impl ShapeSpec {
    pub fn new(restriction: Restriction, dim: usize) -> Self {
        ShapeSpec { restriction, dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WaldFunctional {
    OperatorResidual { op: ShapeOperator, norm: Norm },
    ConeDistance { shape: ShapeSpec },
}

impl WaldFunctional {
    /// Whether the functional is positively homogeneous, convex and
    /// Lipschitz. The rearrangement residual is not convex; compositions
    /// are not covered by any known result and are reported as false.
    pub fn is_conforming(&self) -> bool {
        match self {
            WaldFunctional::ConeDistance { .. } => true,
            WaldFunctional::OperatorResidual { op, .. } => {
                matches!(op, ShapeOperator::Gcm | ShapeOperator::Lcm)
            }
        }
    }

    /// Sup-norm Lipschitz constant: distances are 1-Lipschitz, residuals of
    /// 1-Lipschitz operators are 2-Lipschitz.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            WaldFunctional::ConeDistance { .. } => 1.0,
            WaldFunctional::OperatorResidual { .. } => 2.0,
        }
    }
}

pub fn evaluate(phi: &WaldFunctional, f: &FunctionOnGrid) -> Result<f64> {
    match phi {
        WaldFunctional::OperatorResidual { op, norm } => {
            let g = operators::apply(op, f)?;
            Ok(f.diff(&g)?.norm(*norm))
        }
        WaldFunctional::ConeDistance { shape } => cone_distance(shape, f),
    }
}

fn check_dim(shape: &ShapeSpec, f: &FunctionOnGrid) -> Result<()> {
    if shape.dim != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim,
            got: f.dim(),
        });
    }
    Ok(())
}

fn half_max_gap(upper: &[f64], lower: &[f64]) -> f64 {
    let gap = upper
        .iter()
        .zip(lower)
        .fold(0.0f64, |m, (u, l)| m.max(u - l));
    0.5 * gap
}

/// Sup-norm distance from `f` to the cone described by `shape`.
pub fn cone_distance(shape: &ShapeSpec, f: &FunctionOnGrid) -> Result<f64> {
    check_dim(shape, f)?;
    let v = f.values();
    let d = match shape.restriction {
        Restriction::Monotone => half_max_gap(operators::prefix_max(f).values(), v),
        Restriction::Convex => half_max_gap(v, operators::gcm(f)?.values()),
        Restriction::Concave => half_max_gap(operators::lcm(f)?.values(), v),
        Restriction::MonotoneConvex => {
            let floor = operators::gcm(&operators::suffix_min(f))?;
            half_max_gap(v, floor.values())
        }
        Restriction::MonotoneConcave => {
            let ceil = operators::lcm(&operators::prefix_max(f))?;
            half_max_gap(ceil.values(), v)
        }
    };
    Ok(d)
}

/// Sparse rows `a` with `a'h >= 0` characterizing the cone on `grid`.
///
/// Monotonicity contributes first differences along every axis; convexity
/// and concavity contribute second divided differences (univariate only).
pub fn shape_constraints(shape: &ShapeSpec, grid: &Grid) -> Result<Vec<Vec<(usize, f64)>>> {
    if shape.dim != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim,
            got: grid.dim(),
        });
    }
    if shape.restriction.has_curvature() && grid.dim() != 1 {
        return Err(Error::Unsupported(
            "curvature constraints are only built for univariate grids".into(),
        ));
    }
    let mut rows = Vec::new();
    let monotone = matches!(
        shape.restriction,
        Restriction::Monotone | Restriction::MonotoneConvex | Restriction::MonotoneConcave
    );
    if monotone {
        let strides = grid.strides();
        for idx in 0..grid.len() {
            let m = grid.multi_index(idx);
            for (axis, &s) in strides.iter().enumerate() {
                if m[axis] + 1 < grid.axis(axis).len() {
                    rows.push(vec![(idx + s, 1.0), (idx, -1.0)]);
                }
            }
        }
    }
    let sign = match shape.restriction {
        Restriction::Convex | Restriction::MonotoneConvex => 1.0,
        Restriction::Concave | Restriction::MonotoneConcave => -1.0,
        Restriction::Monotone => 0.0,
    };
    if sign != 0.0 {
        let z = grid.axis(0);
        for i in 1..z.len() - 1 {
            let hl = z[i] - z[i - 1];
            let hr = z[i + 1] - z[i];
            rows.push(vec![
                (i + 1, sign / hr),
                (i, -sign * (1.0 / hr + 1.0 / hl)),
                (i - 1, sign / hl),
            ]);
        }
    }
    Ok(rows)
}

/// Sup-norm cone distance as the linear program
/// `min t` s.t. `|f_j - h_j| <= t` and `A h >= 0`.
pub fn cone_distance_lp(shape: &ShapeSpec, f: &FunctionOnGrid) -> Result<f64> {
    check_dim(shape, f)?;
    let rows = shape_constraints(shape, f.grid())?;
    let n = f.values().len();
    let t = n;
    let mut lp = LinearProgram::new(n + 1);
    lp.set_cost(t, 1.0);
    for j in 0..n {
        lp.set_free(j);
    }
    for (j, &v) in f.values().iter().enumerate() {
        lp.add_sparse(&[(j, 1.0), (t, 1.0)], Sense::Ge, v);
        lp.add_sparse(&[(j, 1.0), (t, -1.0)], Sense::Le, v);
    }
    for row in &rows {
        lp.add_sparse(row, Sense::Ge, 0.0);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective_value),
        other => Err(Error::Lp(LpError::Invalid(format!(
            "distance program ended with status {other:?}"
        )))),
    }
}
