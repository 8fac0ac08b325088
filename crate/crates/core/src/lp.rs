//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Problems in this crate are small (a few hundred variables and rows at
//! most), so the solver keeps a full tableau and does no factorization.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Invalid(String),
    #[error("simplex did not terminate within {iterations} pivots")]
    NumericalFailure { iterations: usize },
    #[error("solution violates constraint {row} by {violation:.3e}")]
    Inaccurate { row: usize, violation: f64 },
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    sense: Sense,
    rhs: f64,
}

/// `minimize c'x` subject to row constraints and per-variable bounds.
///
/// Variables default to the bounds `[0, +inf)`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<Row>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative primal feasibility tolerance.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub optimality_tol: f64,
    /// Pivot cap; `None` means `50 * (rows + cols)` of the standard form.
    pub max_pivots: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            max_pivots: None,
        }
    }
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn minimize(&mut self, c: Vec<f64>) -> &mut Self {
        assert_eq!(c.len(), self.n_vars(), "objective length");
        self.objective = c;
        self
    }

    pub fn set_cost(&mut self, j: usize, c: f64) -> &mut Self {
        self.objective[j] = c;
        self
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn set_free(&mut self, j: usize) -> &mut Self {
        self.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.n_vars(), "constraint length");
        self.rows.push(Row { coeffs, sense, rhs });
        self
    }

    /// Adds a constraint given as `(column, coefficient)` pairs.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) -> &mut Self {
        let mut coeffs = vec![0.0; self.n_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, sense, rhs)
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// The LP dual of `min c'x s.t. Ax >= b, x >= 0`, namely
    /// `max b'y s.t. A'y <= c, y >= 0`, returned as the minimization of
    /// `-b'y`. Only programs of exactly that form are accepted.
    pub fn canonical_dual(&self) -> Result<LinearProgram, LpError> {
        let canonical = self.rows.iter().all(|r| r.sense == Sense::Ge)
            && self.lower.iter().all(|&l| l == 0.0)
            && self.upper.iter().all(|u| u.is_infinite());
        if !canonical {
            return Err(LpError::Invalid(
                "dual is only formed for min c'x, Ax >= b, x >= 0".into(),
            ));
        }
        let m = self.rows.len();
        let mut dual = LinearProgram::new(m);
        dual.minimize(self.rows.iter().map(|r| -r.rhs).collect());
        for (j, &c) in self.objective.iter().enumerate() {
            let col = self.rows.iter().map(|r| r.coeffs[j]).collect();
            dual.add_constraint(col, Sense::Le, c);
        }
        Ok(dual)
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Invalid("non-finite objective coefficient".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() || r.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LpError::Invalid(format!("non-finite entry in row {i}")));
            }
        }
        for j in 0..self.n_vars() {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::Invalid(format!("bad bounds on variable {j}")));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("empty bounds on variable {j}")));
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.solve_with(SolverOptions::default())
    }

    pub fn solve_with(&self, opts: SolverOptions) -> Result<LpSolution, LpError> {
        self.validate()?;
        let std = StandardForm::build(self);
        let outcome = std.solve(opts)?;
        let (status, y) = match outcome {
            Outcome::Optimal(y) => (LpStatus::Optimal, y),
            Outcome::Infeasible => {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: vec![f64::NAN; self.n_vars()],
                    objective_value: f64::NAN,
                })
            }
            Outcome::Unbounded => {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    x: vec![f64::NAN; self.n_vars()],
                    objective_value: f64::NEG_INFINITY,
                })
            }
        };
        let x = std.recover(&y);
        self.check_feasible(&x, opts.feasibility_tol)?;
        let objective_value = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution {
            status,
            x,
            objective_value,
        })
    }

    fn check_feasible(&self, x: &[f64], tol: f64) -> Result<(), LpError> {
        let b_inf = self.rows.iter().fold(0.0f64, |m, r| m.max(r.rhs.abs()));
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eps = tol * (1.0 + b_inf.max(x_inf));
        for (i, r) in self.rows.iter().enumerate() {
            let lhs: f64 = r.coeffs.iter().zip(x).map(|(a, x)| a * x).sum();
            let violation = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            if violation > eps {
                return Err(LpError::Inaccurate { row: i, violation });
            }
        }
        Ok(())
    }
}

/// How an original variable maps onto non-negative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = offset + y[col]`
    Shift { col: usize, offset: f64 },
    /// `x = offset - y[col]`
    Mirror { col: usize, offset: f64 },
    /// `x = y[pos] - y[neg]`
    Split { pos: usize, neg: usize },
}

enum Outcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// `min c'y s.t. A y (sense) b, y >= 0` with `b >= 0`.
struct StandardForm {
    n_cols: usize,
    cost: Vec<f64>,
    rows: Vec<(Vec<f64>, Sense, f64)>,
    maps: Vec<VarMap>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut maps = Vec::with_capacity(lp.n_vars());
        let mut n_cols = 0;
        let mut extra_upper = Vec::new();
        for j in 0..lp.n_vars() {
            let (lo, hi) = (lp.lower[j], lp.upper[j]);
            let map = if lo.is_finite() {
                let col = n_cols;
                n_cols += 1;
                if hi.is_finite() {
                    extra_upper.push((col, hi - lo));
                }
                VarMap::Shift { col, offset: lo }
            } else if hi.is_finite() {
                let col = n_cols;
                n_cols += 1;
                VarMap::Mirror { col, offset: hi }
            } else {
                let pos = n_cols;
                n_cols += 2;
                VarMap::Split { pos, neg: pos + 1 }
            };
            maps.push(map);
        }

        let expand = |coeffs: &[f64], rhs: f64| -> (Vec<f64>, f64) {
            let mut out = vec![0.0; n_cols];
            let mut rhs = rhs;
            for (a, map) in coeffs.iter().zip(&maps) {
                if *a == 0.0 {
                    continue;
                }
                match *map {
                    VarMap::Shift { col, offset } => {
                        out[col] += a;
                        rhs -= a * offset;
                    }
                    VarMap::Mirror { col, offset } => {
                        out[col] -= a;
                        rhs -= a * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        out[pos] += a;
                        out[neg] -= a;
                    }
                }
            }
            (out, rhs)
        };

        let mut rows = Vec::with_capacity(lp.rows.len() + extra_upper.len());
        for r in &lp.rows {
            let (coeffs, rhs) = expand(&r.coeffs, r.rhs);
            rows.push((coeffs, r.sense, rhs));
        }
        for (col, width) in extra_upper {
            let mut coeffs = vec![0.0; n_cols];
            coeffs[col] = 1.0;
            rows.push((coeffs, Sense::Le, width));
        }
        for row in rows.iter_mut() {
            if row.2 < 0.0 {
                row.0.iter_mut().for_each(|a| *a = -*a);
                row.2 = -row.2;
                row.1 = match row.1 {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
            }
        }

        let (cost, _) = expand(&lp.objective, 0.0);
        StandardForm {
            n_cols,
            cost,
            rows,
            maps,
        }
    }

    fn recover(&self, y: &[f64]) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| match *m {
                VarMap::Shift { col, offset } => offset + y[col],
                VarMap::Mirror { col, offset } => offset - y[col],
                VarMap::Split { pos, neg } => y[pos] - y[neg],
            })
            .collect()
    }

    fn solve(&self, opts: SolverOptions) -> Result<Outcome, LpError> {
        let m = self.rows.len();
        let n = self.n_cols;
        let n_slack = self.rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let n_art = self.rows.iter().filter(|r| r.1 != Sense::Le).count();
        let first_art = n + n_slack;
        let total = first_art + n_art;
        let width = total + 1;

        let mut t = Tableau {
            data: vec![0.0; (m + 1) * width],
            width,
            m,
            basis: vec![0; m],
            piv_tol: 1e-11,
        };

        let mut slack = n;
        let mut art = first_art;
        for (i, (coeffs, sense, rhs)) in self.rows.iter().enumerate() {
            let row = t.row_mut(i);
            row[..n].copy_from_slice(coeffs);
            row[total] = *rhs;
            match sense {
                Sense::Le => {
                    row[slack] = 1.0;
                    t.basis[i] = slack;
                    slack += 1;
                }
                Sense::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    t.basis[i] = art;
                    art += 1;
                }
                Sense::Eq => {
                    row[art] = 1.0;
                    t.basis[i] = art;
                    art += 1;
                }
            }
        }

        let b_inf = self.rows.iter().fold(0.0f64, |mx, r| mx.max(r.2));
        let cap = opts.max_pivots.unwrap_or(50 * (m + total));
        let mut pivots = 0usize;

        if n_art > 0 {
            let mut phase1 = vec![0.0; total];
            phase1[first_art..].iter_mut().for_each(|c| *c = 1.0);
            t.load_costs(&phase1);
            match t.run(total, opts.optimality_tol, cap, &mut pivots)? {
                Step::Optimal => {}
                Step::Unbounded => unreachable!("phase one is bounded below by zero"),
            }
            let infeasibility = -t.row(m)[total];
            if infeasibility > opts.feasibility_tol * (1.0 + b_inf) {
                return Ok(Outcome::Infeasible);
            }
            // Drive zero-level artificials out of the basis where possible.
            for i in 0..m {
                if t.basis[i] >= first_art {
                    let entering = (0..first_art).find(|&j| t.row(i)[j].abs() > 1e-9);
                    if let Some(j) = entering {
                        t.pivot(i, j);
                    }
                }
            }
        }

        let mut phase2 = vec![0.0; total];
        phase2[..n].copy_from_slice(&self.cost);
        t.load_costs(&phase2);
        match t.run(first_art, opts.optimality_tol, cap, &mut pivots)? {
            Step::Optimal => {}
            Step::Unbounded => return Ok(Outcome::Unbounded),
        }

        let mut y = vec![0.0; n];
        for i in 0..m {
            let b = t.basis[i];
            if b < n {
                y[b] = t.row(i)[total];
            }
        }
        Ok(Outcome::Optimal(y))
    }
}

enum Step {
    Optimal,
    Unbounded,
}

/// Rows `0..m` are constraints, row `m` holds reduced costs with the
/// negated objective value in the last column.
struct Tableau {
    data: Vec<f64>,
    width: usize,
    m: usize,
    basis: Vec<usize>,
    piv_tol: f64,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    fn load_costs(&mut self, cost: &[f64]) {
        let w = self.width;
        let m = self.m;
        let mut z = vec![0.0; w];
        z[..cost.len()].copy_from_slice(cost);
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.data[i * w..(i + 1) * w];
                for (zj, a) in z.iter_mut().zip(row) {
                    *zj -= cb * a;
                }
            }
        }
        self.row_mut(m).copy_from_slice(&z);
    }

    /// Bland's rule over columns `0..eligible`.
    fn run(
        &mut self,
        eligible: usize,
        opt_tol: f64,
        cap: usize,
        pivots: &mut usize,
    ) -> Result<Step, LpError> {
        let rhs = self.width - 1;
        loop {
            let entering = {
                let z = self.row(self.m);
                (0..eligible).find(|&j| z[j] < -opt_tol)
            };
            let Some(e) = entering else {
                return Ok(Step::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.data[i * self.width + e];
                if a > self.piv_tol {
                    let ratio = self.data[i * self.width + rhs].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie
                                || tie && self.basis[i] < self.basis[r]
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(Step::Unbounded);
            };
            *pivots += 1;
            if *pivots > cap {
                return Err(LpError::NumericalFailure { iterations: cap });
            }
            self.pivot(r, e);
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let p = self.data[r * w + e];
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            row.iter_mut().for_each(|a| *a /= p);
            row[e] = 1.0;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + e];
            if f != 0.0 {
                let row = &mut self.data[i * w..(i + 1) * w];
                for (a, pr) in row.iter_mut().zip(&pivot_row) {
                    *a -= f * pr;
                }
                row[e] = 0.0;
            }
        }
        self.basis[r] = e;
    }
}
