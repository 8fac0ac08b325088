//! Shape-enforcing operators on grid functions.
//!
//! Rearrangement sorts values along grid fibers (averaging over all axis
//! orders when `d > 1`). The greatest convex minorant is the discrete
//! biconjugate; in one dimension it is the lower convex hull of the graph,
//! in higher dimensions it is obtained point by point from a small linear
//! program. The least concave majorant is `-gcm(-f)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FunctionOnGrid;
use crate::lp::{LinearProgram, LpError, LpStatus, Sense};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeOperator {
    Rearrange,
    Gcm,
    Lcm,
    /// Members are applied left to right.
    Compose(Vec<ShapeOperator>),
}

impl ShapeOperator {
    pub fn name(&self) -> String {
        match self {
            ShapeOperator::Rearrange => "rearrange".into(),
            ShapeOperator::Gcm => "gcm".into(),
            ShapeOperator::Lcm => "lcm".into(),
            ShapeOperator::Compose(ops) => ops
                .iter()
                .map(|o| o.name())
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

pub fn apply(op: &ShapeOperator, f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    match op {
        ShapeOperator::Rearrange => Ok(rearrange_multi(f)),
        ShapeOperator::Gcm => gcm(f),
        ShapeOperator::Lcm => lcm(f),
        ShapeOperator::Compose(ops) => {
            let mut cur = f.clone();
            for o in ops {
                cur = apply(o, &cur)?;
            }
            Ok(cur)
        }
    }
}

fn require_1d(f: &FunctionOnGrid) -> Result<()> {
    if f.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: f.dim(),
        });
    }
    Ok(())
}

/// Ascending stable sort of the values.
pub fn rearrange_1d(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    require_1d(f)?;
    let mut v = f.values().to_vec();
    v.sort_by(f64::total_cmp);
    Ok(f.with_values(v))
}

/// Visits every 1-D fiber along `axis`, handing its linear indices to `visit`.
fn for_each_fiber(shape: &[usize], axis: usize, mut visit: impl FnMut(&[usize])) {
    let stride: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let mut idx = vec![0usize; len];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * len * stride + inner;
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot = base + k * stride;
            }
            visit(&idx);
        }
    }
}

fn sort_along(values: &mut [f64], shape: &[usize], axis: usize) {
    let mut buf = Vec::with_capacity(shape[axis]);
    for_each_fiber(shape, axis, |idx| {
        buf.clear();
        buf.extend(idx.iter().map(|&i| values[i]));
        buf.sort_by(f64::total_cmp);
        for (&i, &v) in idx.iter().zip(&buf) {
            values[i] = v;
        }
    });
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(d - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, d - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Average over all axis orders `pi` of `M_{pi_1} o ... o M_{pi_d} f`, where
/// `M_j` sorts every fiber along axis `j`.
pub fn rearrange_multi(f: &FunctionOnGrid) -> FunctionOnGrid {
    let shape = f.grid().shape();
    let d = shape.len();
    if d == 1 {
        let mut v = f.values().to_vec();
        v.sort_by(f64::total_cmp);
        return f.with_values(v);
    }
    let perms = permutations(d);
    let mut acc = vec![0.0; f.values().len()];
    for pi in &perms {
        let mut v = f.values().to_vec();
        for &axis in pi.iter().rev() {
            sort_along(&mut v, &shape, axis);
        }
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x;
        }
    }
    let m = perms.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    f.with_values(acc)
}

/// Running maximum over the componentwise order: entry `j` becomes
/// `max { f_i : z_i <= z_j }`. This is the least monotone majorant.
pub fn prefix_max(f: &FunctionOnGrid) -> FunctionOnGrid {
    let shape = f.grid().shape();
    let mut v = f.values().to_vec();
    for axis in 0..shape.len() {
        for_each_fiber(&shape, axis, |idx| {
            for w in idx.windows(2) {
                v[w[1]] = v[w[1]].max(v[w[0]]);
            }
        });
    }
    f.with_values(v)
}

/// Running minimum from above: entry `j` becomes `min { f_i : z_i >= z_j }`,
/// the greatest monotone minorant.
pub fn suffix_min(f: &FunctionOnGrid) -> FunctionOnGrid {
    let shape = f.grid().shape();
    let mut v = f.values().to_vec();
    for axis in 0..shape.len() {
        for_each_fiber(&shape, axis, |idx| {
            for w in idx.windows(2).rev() {
                v[w[0]] = v[w[0]].min(v[w[1]]);
            }
        });
    }
    f.with_values(v)
}

/// Lower convex hull of the graph, interpolated back onto the grid.
pub fn gcm_1d(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    require_1d(f)?;
    let z = f.grid().axis(0);
    Ok(f.with_values(lower_hull_values(z, f.values())))
}

fn lower_hull_values(z: &[f64], v: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b when it lies on or above the chord a -> j
            let cross = (z[b] - z[a]) * (v[j] - v[a]) - (v[b] - v[a]) * (z[j] - z[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    let mut out = vec![0.0; n];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = v[a];
        for k in a + 1..b {
            let t = (z[k] - z[a]) / (z[b] - z[a]);
            out[k] = (1.0 - t) * v[a] + t * v[b];
        }
    }
    let last = *hull.last().expect("grid has at least two points");
    out[last] = v[last];
    out
}

/// Minimum chord formula: entry `l` is the smallest value at `z_l` of a
/// chord joining `(z_j, f_j)` and `(z_k, f_k)` with `j <= l <= k`.
/// Cubic cost; kept as a reference implementation.
pub fn gcm_1d_chord(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    require_1d(f)?;
    let z = f.grid().axis(0);
    let v = f.values();
    let n = z.len();
    let mut out = vec![0.0; n];
    for l in 0..n {
        let mut best = v[l];
        for j in 0..=l {
            for k in l..n {
                if j == k {
                    continue;
                }
                let chord = ((z[k] - z[l]) * v[j] + (z[l] - z[j]) * v[k]) / (z[k] - z[j]);
                best = best.min(chord);
            }
        }
        out[l] = best;
    }
    Ok(f.with_values(out))
}

/// Biconjugate at grid point `l`: `max v` over `(v, xi)` subject to
/// `v + xi'(z_j - z_l) <= f_j` for every grid point `j`.
pub fn gcm_lp(f: &FunctionOnGrid, l: usize) -> Result<f64> {
    let grid = f.grid();
    let d = grid.dim();
    let zl = grid.point(l);
    let mut lp = LinearProgram::new(1 + d);
    let mut c = vec![0.0; 1 + d];
    c[0] = -1.0;
    lp.minimize(c);
    for j in 0..=d {
        lp.set_free(j);
    }
    for (j, zj) in grid.points().enumerate() {
        let mut row = Vec::with_capacity(1 + d);
        row.push(1.0);
        row.extend(zj.iter().zip(&zl).map(|(a, b)| a - b));
        lp.add_constraint(row, Sense::Le, f.values()[j]);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.x[0]),
        other => Err(Error::Lp(LpError::Invalid(format!(
            "biconjugate program ended with status {other:?}"
        )))),
    }
}

/// Greatest convex minorant on the grid.
pub fn gcm(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    if f.dim() == 1 {
        return gcm_1d(f);
    }
    let grid = f.grid();
    let d = grid.dim();
    let points: Vec<Vec<f64>> = grid.points().collect();
    let v = f.values();
    let mut out = Vec::with_capacity(v.len());
    for l in 0..points.len() {
        out.push(gcm_dual_at(&points, v, l, d)?.min(v[l]));
    }
    Ok(f.with_values(out))
}

/// `min sum_j lambda_j f_j` over convex weights whose barycenter is `z_l`.
fn gcm_dual_at(points: &[Vec<f64>], v: &[f64], l: usize, d: usize) -> Result<f64> {
    let n = points.len();
    let mut lp = LinearProgram::new(n);
    lp.minimize(v.to_vec());
    lp.add_constraint(vec![1.0; n], Sense::Eq, 1.0);
    for axis in 0..d {
        let zl = points[l][axis];
        let row = points.iter().map(|p| p[axis] - zl).collect();
        lp.add_constraint(row, Sense::Eq, 0.0);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective_value),
        other => Err(Error::Lp(LpError::Invalid(format!(
            "minorant program ended with status {other:?}"
        )))),
    }
}

/// Least concave majorant, `-gcm(-f)`.
pub fn lcm(f: &FunctionOnGrid) -> Result<FunctionOnGrid> {
    Ok(gcm(&f.scale(-1.0))?.scale(-1.0))
}

/// True when every discrete second divided difference is at least `-tol`.
pub fn is_convex_1d(z: &[f64], v: &[f64], tol: f64) -> bool {
    (1..v.len().saturating_sub(1)).all(|i| {
        let left = (v[i] - v[i - 1]) / (z[i] - z[i - 1]);
        let right = (v[i + 1] - v[i]) / (z[i + 1] - z[i]);
        right - left >= -tol
    })
}

/// True when the values are nondecreasing along every axis (within `tol`).
pub fn is_monotone(f: &FunctionOnGrid, tol: f64) -> bool {
    let shape = f.grid().shape();
    let v = f.values();
    let mut ok = true;
    for axis in 0..shape.len() {
        for_each_fiber(&shape, axis, |idx| {
            ok &= idx.windows(2).all(|w| v[w[1]] >= v[w[0]] - tol);
        });
    }
    ok
}
