//! Series least squares and the multiplier (score) bootstrap.
//!
//! The regression is `y = p(z)'beta + w'gamma + u`, fitted by one QR least
//! squares on `X = [P | W]`. Bootstrap draws are
//!
//! ```text
//! G_b(z) = r_n [p(z); 0]' (X'X/n)^{-1} (1/n) sum_i x_i u_i omega_ib
//! ```
//!
//! with iid standard normal multipliers `omega`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FunctionOnGrid, Grid, Norm};
use crate::rng;
use crate::sieve::SplineBasis;

const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct Sample {
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub w: Option<DMatrix<f64>>,
}

impl Sample {
    pub fn new(y: DVector<f64>, z: DMatrix<f64>, w: Option<DMatrix<f64>>) -> Result<Self> {
        let n = y.len();
        if z.nrows() != n || w.as_ref().is_some_and(|w| w.nrows() != n) {
            return Err(Error::InvalidSample("row counts differ".into()));
        }
        if n == 0 || z.ncols() == 0 {
            return Err(Error::InvalidSample("empty sample".into()));
        }
        let finite = y.iter().chain(z.iter()).all(|v| v.is_finite())
            && w.as_ref().map_or(true, |w| w.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidSample("non-finite entry".into()));
        }
        Ok(Sample { y, z, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_controls(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.ncols())
    }

    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Sample> {
        Sample::new(y, self.z.clone(), self.w.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub basis: SplineBasis,
    pub beta: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    pub residuals: DVector<f64>,
    /// `(X'X/n)^{-1}` over all regressors, sieve block first.
    pub gram_inverse: DMatrix<f64>,
    pub r_n: f64,
    pub c_n: f64,
    design: DMatrix<f64>,
}

impl SeriesFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn k_n(&self) -> usize {
        self.basis.k_n()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn fitted(&self) -> DVector<f64> {
        let coef = self.coefficients();
        &self.design * coef
    }

    fn coefficients(&self) -> DVector<f64> {
        match &self.gamma {
            None => self.beta.clone(),
            Some(g) => {
                let mut c = DVector::zeros(self.beta.len() + g.len());
                c.rows_mut(0, self.beta.len()).copy_from(&self.beta);
                c.rows_mut(self.beta.len(), g.len()).copy_from(g);
                c
            }
        }
    }
}

pub fn fit(sample: &Sample, basis: &SplineBasis) -> Result<SeriesFit> {
    if sample.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: sample.dim(),
        });
    }
    let n = sample.n();
    let k = basis.k_n();
    let q = sample.n_controls();
    let p = k + q;
    if n <= p {
        return Err(Error::InvalidSample(format!(
            "{n} observations for {p} regressors"
        )));
    }
    let mut x = DMatrix::zeros(n, p);
    x.columns_mut(0, k).copy_from(&basis.design_matrix(&sample.z));
    if let Some(w) = &sample.w {
        x.columns_mut(k, q).copy_from(w);
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if dmin == 0.0 || dmax / dmin > MAX_CONDITION {
        return Err(Error::RankDeficient {
            condition: dmax / dmin,
        });
    }
    let qty = qr.q().transpose() * &sample.y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let gram_inverse = (&r_inv * r_inv.transpose()) * n as f64;

    let residuals = &sample.y - &x * &coef;
    let beta = coef.rows(0, k).into_owned();
    let gamma = (q > 0).then(|| coef.rows(k, q).into_owned());
    Ok(SeriesFit {
        basis: basis.clone(),
        beta,
        gamma,
        residuals,
        gram_inverse,
        r_n: (n as f64 / k as f64).sqrt(),
        c_n: 1.0 / (n as f64).ln(),
        design: x,
    })
}

/// `p(z)'beta` at every grid point; controls are excluded.
pub fn eval_on_grid(fit: &SeriesFit, grid: &Arc<Grid>) -> Result<FunctionOnGrid> {
    let e = grid_design(&fit.basis, grid)?;
    let v = e * &fit.beta;
    FunctionOnGrid::new(grid.clone(), v.as_slice().to_vec())
}

fn grid_design(basis: &SplineBasis, grid: &Grid) -> Result<DMatrix<f64>> {
    if grid.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: grid.dim(),
        });
    }
    let points: Vec<Vec<f64>> = grid.points().collect();
    Ok(basis.design_rows(points.iter().map(Vec::as_slice)))
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapEnsemble {
    #[serde(skip)]
    pub draws: Vec<FunctionOnGrid>,
    pub sup_norms: Vec<f64>,
    pub seed: u64,
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// `B` multiplier-bootstrap draws on `grid`; draw `b` uses stream `b` of
/// `seed`, so the ensemble does not depend on the thread count.
pub fn score_bootstrap(
    fit: &SeriesFit,
    grid: &Arc<Grid>,
    b: usize,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(Error::InvalidConfig("bootstrap count must be positive".into()));
    }
    let n = fit.n();
    let k = fit.k_n();
    let e = grid_design(&fit.basis, grid)?;
    let load = e * fit.gram_inverse.rows(0, k) * fit.r_n;
    // rows of X scaled by residual and 1/n
    let mut scores = fit.design.clone();
    for (i, mut row) in scores.row_iter_mut().enumerate() {
        row *= fit.residuals[i] / n as f64;
    }
    let scores_t = scores.transpose();

    let draws: Vec<FunctionOnGrid> = (0..b)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng::stream(seed, idx as u64);
            let omega = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let s = &scores_t * omega;
            let g = &load * s;
            FunctionOnGrid::new(grid.clone(), g.as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    let sup_norms = draws.iter().map(|d| d.norm(Norm::Sup)).collect();
    Ok(BootstrapEnsemble {
        draws,
        sup_norms,
        seed,
    })
}
