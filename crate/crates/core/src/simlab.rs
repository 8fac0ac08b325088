//! Simulation designs and the Monte Carlo runner behind the size and power
//! tables.
//!
//! Univariate designs live on `[-1, 1]` with `Z = -1 + 2 Phi(Z*)`; bivariate
//! designs live on `[0, 1]^2` with `Z_j = Phi(Z_j*)`. Noise is `N(0, 1)`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimator::Sample;
use crate::functionals::Restriction;
use crate::grid::Grid;
use crate::rng;
use crate::sieve::Degree;
use crate::testengine::{self, GammaRule, SieveSpec, TestConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// `a z - b pdf(c z)`
    Uni1,
    /// `-b pdf(|z|^1.5)`
    Uni2,
    /// `a CES_b(z) + c log(1 + z1 + z2)`
    Bi1,
    /// `b pdf(|z|^1.5)`
    Uni2c,
    /// `a CES_b(z) + c log(1 + 5 (z1 + z2))`
    Bi2,
}

impl Family {
    pub fn dim(self) -> usize {
        match self {
            Family::Bi1 | Family::Bi2 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Uni1 => "uni1",
            Family::Uni2 => "uni2",
            Family::Bi1 => "bi1",
            Family::Uni2c => "uni2c",
            Family::Bi2 => "bi2",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        [Family::Uni1, Family::Uni2, Family::Bi1, Family::Uni2c, Family::Bi2]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown design family `{s}`")))
    }

    /// Step size `Delta` of the alternatives `a = c = -Delta delta`.
    fn step(self) -> f64 {
        match self {
            Family::Bi2 => 0.2,
            _ => 0.05,
        }
    }

    /// Restriction tested along this family's power curve.
    pub fn default_restriction(self) -> Restriction {
        match self {
            Family::Uni1 | Family::Uni2 | Family::Bi1 => Restriction::Monotone,
            Family::Uni2c => Restriction::Convex,
            Family::Bi2 => Restriction::Concave,
        }
    }

    /// Sieves used for this family in the tables.
    pub fn default_sieves(self) -> Vec<SieveSpec> {
        if self.dim() == 1 {
            [3, 5, 7]
                .into_iter()
                .map(|k| SieveSpec::new(Degree::Cubic, vec![k]))
                .collect()
        } else {
            [(Degree::Quadratic, 0), (Degree::Quadratic, 1), (Degree::Cubic, 0), (Degree::Cubic, 1)]
                .into_iter()
                .map(|(d, k)| SieveSpec::new(d, vec![k, k]))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Design {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Design {
    pub fn new(family: Family, a: f64, b: f64, c: f64) -> Self {
        Design { family, a, b, c }
    }

    /// Null designs D1, D2, D3 (`which` in 1..=3). Uni2 and Uni2c only have D1.
    pub fn null(family: Family, which: usize) -> Result<Design> {
        let (a, b, c) = match (family, which) {
            (_, 1) => (0.0, 0.0, 0.0),
            (Family::Uni1, 2) => (0.1, 0.5, 0.5),
            (Family::Uni1, 3) => (0.5, 2.0, 1.0),
            (Family::Bi1 | Family::Bi2, 2) => (0.2, 1.0, 0.0),
            (Family::Bi1 | Family::Bi2, 3) => (0.5, 0.0, 0.5),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{} has no null design D{which}",
                    family.name()
                )))
            }
        };
        Ok(Design::new(family, a, b, c))
    }

    /// Alternative indexed by `delta`; `delta = 0` is D1.
    pub fn alternative(family: Family, delta: f64) -> Design {
        match family {
            Family::Uni2 | Family::Uni2c => Design::new(family, 0.0, 0.5 * delta, 0.0),
            _ => {
                let s = family.step() * delta;
                Design::new(family, -s, 0.2 * delta, -s)
            }
        }
    }

    pub fn params_label(&self) -> String {
        match self.family {
            Family::Uni2 | Family::Uni2c => format!("b={}", self.b),
            _ => format!("a={};b={};c={}", self.a, self.b, self.c),
        }
    }

    pub fn grid(&self, points_per_axis: usize) -> Result<Grid> {
        match self.family.dim() {
            1 => Grid::uniform(-1.0, 1.0, points_per_axis),
            _ => Grid::uniform_box(&[0.0, 0.0], &[1.0, 1.0], &[points_per_axis; 2]),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `(z1^b / 2 + z2^b / 2)^(1/b)`, the geometric mean at `b = 0`.
fn ces(z1: f64, z2: f64, b: f64) -> f64 {
    if b == 0.0 {
        (z1 * z2).sqrt()
    } else {
        (0.5 * z1.powf(b) + 0.5 * z2.powf(b)).powf(1.0 / b)
    }
}

pub fn theta0(design: &Design, z: &[f64]) -> Result<f64> {
    let Design { family, a, b, c } = *design;
    if z.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            got: z.len(),
        });
    }
    let inside = match family.dim() {
        1 => (-1.0..=1.0).contains(&z[0]),
        _ => z.iter().all(|v| (0.0..=1.0).contains(v)),
    };
    if !inside {
        return Err(Error::DomainViolation { point: z.to_vec() });
    }
    let pdf = |x: f64| std_normal().pdf(x);
    Ok(match family {
        Family::Uni1 => a * z[0] - b * pdf(c * z[0]),
        Family::Uni2 => -b * pdf(z[0].abs().powf(1.5)),
        Family::Uni2c => b * pdf(z[0].abs().powf(1.5)),
        Family::Bi1 => a * ces(z[0], z[1], b) + c * (1.0 + z[0] + z[1]).ln(),
        Family::Bi2 => a * ces(z[0], z[1], b) + c * (1.0 + 5.0 * (z[0] + z[1])).ln(),
    })
}

/// `n` observations; per observation the latent normals are drawn first,
/// then the noise.
pub fn draw_sample(design: &Design, n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidSample("empty sample".into()));
    }
    let d = design.family.dim();
    let phi = std_normal();
    let mut rng = rng::stream(seed, 0);
    let mut z = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut point = vec![0.0; d];
    for i in 0..n {
        for (j, p) in point.iter_mut().enumerate() {
            let latent: f64 = StandardNormal.sample(&mut rng);
            let u = phi.cdf(latent);
            *p = if d == 1 { (2.0 * u - 1.0).clamp(-1.0, 1.0) } else { u };
            z[(i, j)] = *p;
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        y[i] = theta0(design, &point)? + noise;
    }
    Sample::new(y, z, None)
}

/// One table cell: a design, sample size, sieve and restriction.
#[derive(Debug, Clone)]
pub struct Cell {
    pub design: Design,
    pub delta: Option<f64>,
    pub n: usize,
    pub sieve: SieveSpec,
    pub restriction: Restriction,
}

#[derive(Debug, Clone)]
pub struct McOptions {
    pub reps: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid_points: Option<usize>,
    pub rules: Vec<GammaRule>,
    pub timing: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            reps: 500,
            bootstrap: 200,
            alpha: 0.05,
            seed: 20240101,
            grid_points: None,
            rules: GammaRule::ALL.to_vec(),
            timing: false,
        }
    }
}

/// Default grid resolution: 101 points on the line, 11 x 11 on the square.
pub fn default_grid_points(dim: usize) -> usize {
    if dim == 1 {
        101
    } else {
        11
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    pub family: &'static str,
    pub delta: Option<f64>,
    pub params: String,
    pub n: usize,
    pub basis: String,
    pub gamma_rule: String,
    pub alpha: f64,
    pub reps: usize,
    pub reject_rate: f64,
    pub se: f64,
    pub runtime_ms: Option<u128>,
    /// Canonical description of everything that determines the row.
    pub fingerprint: String,
}

pub fn run_cell(cell: &Cell, opts: &McOptions) -> Result<Vec<McRow>> {
    if opts.reps < 50 {
        return Err(Error::InvalidConfig(format!(
            "{} replications requested, at least 50 required",
            opts.reps
        )));
    }
    let dim = cell.design.family.dim();
    let points = opts.grid_points.unwrap_or_else(|| default_grid_points(dim));
    let grid = Arc::new(cell.design.grid(points)?);
    let mut config = TestConfig::for_restriction(cell.restriction, grid, cell.sieve.clone());
    config.alpha = opts.alpha;
    config.bootstrap = opts.bootstrap;
    let started = Instant::now();
    let design = cell.design;
    let n = cell.n;
    let records = testengine::rejection_harness(&config, &opts.rules, opts.reps, opts.seed, |s| {
        draw_sample(&design, n, s)
    })?;
    let elapsed = started.elapsed().as_millis();
    let fingerprint = format!(
        "{}|{}|{:?}|{}|n={}|grid={}|B={}|alpha={}|reps={}|seed={}",
        design.family.name(),
        design.params_label(),
        cell.restriction,
        cell.sieve.label(),
        n,
        points,
        opts.bootstrap,
        opts.alpha,
        opts.reps,
        opts.seed
    );
    Ok(records
        .into_iter()
        .map(|r| McRow {
            family: design.family.name(),
            delta: cell.delta,
            params: design.params_label(),
            n,
            basis: cell.sieve.label(),
            gamma_rule: r.gamma_rule.clone(),
            alpha: opts.alpha,
            reps: r.reps,
            reject_rate: r.frequency,
            se: r.se,
            runtime_ms: opts.timing.then_some(elapsed),
            fingerprint: format!("{fingerprint}|gamma={}", r.gamma_rule),
        })
        .collect())
}

pub fn run_mc(cells: &[Cell], opts: &McOptions) -> Result<Vec<McRow>> {
    let mut rows = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        log::info!(
            "cell {}/{}: {} {} n={} {}",
            i + 1,
            cells.len(),
            cell.design.family.name(),
            cell.design.params_label(),
            cell.n,
            cell.sieve.label()
        );
        rows.extend(run_cell(cell, opts)?);
    }
    Ok(rows)
}

pub const SUITES: [&str; 7] = [
    "size-mon-uni",
    "size-mon-bi",
    "size-con-uni",
    "size-conc-bi",
    "size-moncon-uni",
    "size-monconc-bi",
    "power-curves",
];

/// Narrowing of a suite's cell list.
#[derive(Debug, Clone, Default)]
pub struct SuiteFilter {
    pub family: Option<Family>,
    pub restriction: Option<Restriction>,
    pub ns: Option<Vec<usize>>,
    pub sieves: Option<Vec<SieveSpec>>,
    pub designs: Option<Vec<usize>>,
    pub deltas: Option<Vec<f64>>,
}

pub fn suite_cells(name: &str, filter: &SuiteFilter) -> Result<Vec<Cell>> {
    let (family, restriction) = match name {
        "size-mon-uni" => (Family::Uni1, Restriction::Monotone),
        "size-mon-bi" => (Family::Bi1, Restriction::Monotone),
        "size-con-uni" => (Family::Uni1, Restriction::Convex),
        "size-conc-bi" => (Family::Bi2, Restriction::Concave),
        "size-moncon-uni" => (Family::Uni1, Restriction::MonotoneConvex),
        "size-monconc-bi" => (Family::Bi2, Restriction::MonotoneConcave),
        "power-curves" => {
            let family = filter.family.unwrap_or(Family::Uni1);
            (family, filter.restriction.unwrap_or(family.default_restriction()))
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown suite `{other}`; expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    let sieves = filter.sieves.clone().unwrap_or_else(|| family.default_sieves());
    let mut cells = Vec::new();
    if name == "power-curves" {
        let ns = filter.ns.clone().unwrap_or_else(|| vec![500]);
        let deltas = filter
            .deltas
            .clone()
            .unwrap_or_else(|| (0..=10).map(f64::from).collect());
        for sieve in &sieves {
            for &n in &ns {
                for &delta in &deltas {
                    cells.push(Cell {
                        design: Design::alternative(family, delta),
                        delta: Some(delta),
                        n,
                        sieve: sieve.clone(),
                        restriction,
                    });
                }
            }
        }
    } else {
        let ns = filter.ns.clone().unwrap_or_else(|| vec![500, 750, 1000]);
        let designs = filter.designs.clone().unwrap_or_else(|| vec![1, 2, 3]);
        for sieve in &sieves {
            for &n in &ns {
                for &d in &designs {
                    cells.push(Cell {
                        design: Design::null(family, d)?,
                        delta: None,
                        n,
                        sieve: sieve.clone(),
                        restriction,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows as CSV; a `delta` column is included when `with_delta`.
pub fn write_csv<W: Write>(rows: &[McRow], with_delta: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidConfig(format!("csv output failed: {e}"));
    let mut header = vec!["family"];
    if with_delta {
        header.push("delta");
    }
    header.extend([
        "params", "n", "basis", "gamma_rule", "alpha", "reps", "reject_rate", "se", "runtime_ms",
    ]);
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.family.to_string()];
        if with_delta {
            rec.push(fmt_opt(r.delta));
        }
        rec.extend([
            r.params.clone(),
            r.n.to_string(),
            r.basis.clone(),
            r.gamma_rule.clone(),
            r.alpha.to_string(),
            r.reps.to_string(),
            r.reject_rate.to_string(),
            r.se.to_string(),
            fmt_opt(r.runtime_ms),
        ]);
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidConfig(format!("csv output failed: {e}")))?;
    Ok(())
}

/// Synthetic wage-growth data: `y` growth rate, `z` weekly hours in
/// `3..=90`, `w` demographics (experience, education, female, age).
#[derive(Debug, Clone)]
pub struct Fixture {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<[f64; 4]>,
}

pub const FIXTURE_CONTROLS: [&str; 4] = ["experience", "education", "female", "age"];

/// Growth rises with hours as `slope * ln(z / 3)`; a negative `slope`
/// gives a decreasing relation.
pub fn fixture(n: usize, slope: f64, seed: u64) -> Fixture {
    let mut rng = rng::stream(seed, 0);
    let mut out = Fixture {
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let h: f64 = StandardNormal.sample(&mut rng);
        let hours = (45.0 + 14.0 * h).round().clamp(3.0, 90.0);
        let experience = rng.gen_range(0.0..20.0f64);
        let education = [12.0, 14.0, 16.0, 18.0][rng.gen_range(0..4)];
        let female = f64::from(rng.gen_bool(0.42));
        let age = 22.0 + experience + rng.gen_range(0.0..8.0);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let growth = slope * (hours / 3.0).ln() - 0.002 * experience + 0.004 * education
            - 0.01 * female
            + 0.05 * noise;
        out.y.push(growth);
        out.z.push(hours);
        out.w.push([experience, education, female, age]);
    }
    out
}

pub fn write_fixture_csv<W: Write>(fx: &Fixture, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidConfig(format!("csv output failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y", "z1"];
    header.extend(FIXTURE_CONTROLS);
    w.write_record(&header).map_err(io)?;
    for i in 0..fx.y.len() {
        let mut rec = vec![fx.y[i].to_string(), fx.z[i].to_string()];
        rec.extend(fx.w[i].iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidConfig(format!("csv output failed: {e}")))?;
    Ok(())
}
