//! The Wald-type test: statistic `r_n phi(theta_hat)`, data-driven
//! `kappa_hat = r_n c_n / tau_hat`, bootstrap critical value and p-value.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, BootstrapEnsemble, Sample, SeriesFit};
use crate::functionals::{self, Restriction, WaldFunctional};
use crate::grid::{FunctionOnGrid, Grid, Norm};
use crate::operators::{self, ShapeOperator};
use crate::rng;
use crate::sieve::{self, Degree};

pub const REPORT_SCHEMA: &str = "shapetest-report/1";

/// Largest tolerated share of bootstrap evaluations that may fail.
const MAX_DRAW_FAILURES: f64 = 0.01;
/// Largest tolerated share of failed Monte Carlo replications.
const MAX_REP_FAILURES: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaRule {
    Fixed(f64),
    /// `0.01 / ln n`
    LogRule,
    /// `1 / n`
    InverseN,
}

impl GammaRule {
    pub fn gamma(self, n: usize) -> f64 {
        match self {
            GammaRule::Fixed(g) => g,
            GammaRule::LogRule => 0.01 / (n as f64).ln(),
            GammaRule::InverseN => 1.0 / n as f64,
        }
    }

    pub fn label(self) -> String {
        match self {
            GammaRule::Fixed(g) => format!("fixed:{g}"),
            GammaRule::LogRule => "logn".into(),
            GammaRule::InverseN => "invn".into(),
        }
    }

    pub fn parse(s: &str) -> Result<GammaRule> {
        match s {
            "logn" | "log" | "lognrule" => Ok(GammaRule::LogRule),
            "invn" | "inverse" => Ok(GammaRule::InverseN),
            _ => {
                let g = s
                    .strip_prefix("fixed:")
                    .and_then(|g| g.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown gamma rule `{s}`")))?;
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::InvalidConfig(format!("gamma {g} outside (0, 1)")));
                }
                Ok(GammaRule::Fixed(g))
            }
        }
    }

    pub const ALL: [GammaRule; 3] = [GammaRule::InverseN, GammaRule::LogRule, GammaRule::Fixed(0.01)];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub degree: Degree,
    pub knots: Vec<usize>,
}

impl SieveSpec {
    pub fn new(degree: Degree, knots: Vec<usize>) -> Self {
        SieveSpec { degree, knots }
    }

    /// Short label such as `C5` or `Q0`.
    pub fn label(&self) -> String {
        format!("{}{}", self.degree.label(), self.knots[0])
    }
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub alpha: f64,
    pub gamma_rule: GammaRule,
    pub bootstrap: usize,
    pub functional: WaldFunctional,
    pub gamma_op: ShapeOperator,
    pub grid: Arc<Grid>,
    pub sieve: SieveSpec,
    pub seed: u64,
    /// Replaces the default coupling rate `1 / ln n`.
    pub c_n: Option<f64>,
    /// Replaces the data-driven `kappa_hat`.
    pub kappa_override: Option<f64>,
}

impl TestConfig {
    /// Defaults for `restriction`: sup-norm distance for monotonicity and
    /// the joint restrictions, sup-norm GCM/LCM residual for curvature.
    pub fn for_restriction(restriction: Restriction, grid: Arc<Grid>, sieve: SieveSpec) -> Self {
        let functional = match restriction {
            Restriction::Convex => WaldFunctional::OperatorResidual {
                op: ShapeOperator::Gcm,
                norm: Norm::Sup,
            },
            Restriction::Concave => WaldFunctional::OperatorResidual {
                op: ShapeOperator::Lcm,
                norm: Norm::Sup,
            },
            _ => WaldFunctional::ConeDistance {
                shape: functionals::ShapeSpec::new(restriction, grid.dim()),
            },
        };
        TestConfig {
            alpha: 0.05,
            gamma_rule: GammaRule::LogRule,
            bootstrap: 200,
            functional,
            gamma_op: restriction.enforcing_operator(),
            grid,
            sieve,
            seed: 0,
            c_n: None,
            kappa_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.bootstrap < 50 {
            return Err(Error::InvalidConfig(format!(
                "bootstrap count {} below 50",
                self.bootstrap
            )));
        }
        if let GammaRule::Fixed(g) = self.gamma_rule {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidConfig(format!("gamma {g} outside (0, 1)")));
            }
        }
        if !self.functional.is_conforming() {
            return Err(Error::InvalidConfig(
                "the rearrangement residual is not convex and cannot drive the test".into(),
            ));
        }
        if self.sieve.knots.len() != self.grid.dim() {
            return Err(Error::InvalidConfig("one knot count per covariate required".into()));
        }
        if let Some(k) = self.kappa_override {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("kappa {k} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Value of rank `ceil(q B)` (1-based, clamped to `1..=B`) among `values`.
pub fn order_statistic(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    let rank = ((q * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    sorted[rank - 1]
}

pub fn kappa_from(r_n: f64, c_n: f64, tau: f64) -> Option<f64> {
    (tau > 0.0).then(|| r_n * c_n / tau)
}

/// `tau_hat` and `kappa_hat = r_n c_n / tau_hat`; `None` when every draw
/// vanishes, in which case callers use `kappa = 0`.
pub fn kappa_hat(ens: &BootstrapEnsemble, r_n: f64, c_n: f64, gamma: f64) -> (f64, Option<f64>) {
    let tau = order_statistic(&ens.sup_norms, 1.0 - gamma);
    (tau, kappa_from(r_n, c_n, tau))
}

/// Evaluates `phi(G_b + kappa * restricted)` for every draw and returns the
/// `1 - alpha` order statistic with the values. Failed evaluations count as
/// `+inf`; more than 1% failures is an error.
pub fn critical_value(
    ens: &BootstrapEnsemble,
    restricted: &FunctionOnGrid,
    functional: &WaldFunctional,
    kappa: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let results: Vec<Result<f64>> = ens
        .draws
        .par_iter()
        .map(|g| functionals::evaluate(functional, &g.add_scaled(kappa, restricted)?))
        .collect();
    let total = results.len();
    let mut failed = 0;
    let values: Vec<f64> = results
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|e| {
                log::warn!("bootstrap evaluation failed: {e}");
                failed += 1;
                f64::INFINITY
            })
        })
        .collect();
    if failed as f64 > MAX_DRAW_FAILURES * total as f64 {
        return Err(Error::BootstrapFailures { failed, total });
    }
    Ok((order_statistic(&values, 1.0 - alpha), values))
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub alpha: f64,
    pub gamma_rule: String,
    pub bootstrap: usize,
    pub functional: WaldFunctional,
    pub gamma_op: ShapeOperator,
    pub basis: Degree,
    pub knots: Vec<usize>,
    pub grid: GridSummary,
    pub seed: u64,
    pub kappa_override: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub schema: &'static str,
    pub n: usize,
    pub k_n: usize,
    pub r_n: f64,
    pub c_n: f64,
    pub statistic: f64,
    pub gamma: f64,
    pub tau_hat: f64,
    pub kappa_hat: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub bootstrap_values: Vec<f64>,
    pub provenance: Provenance,
}

/// Everything that does not depend on `gamma`: fit, estimate on the grid,
/// statistic and bootstrap ensemble.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fit: SeriesFit,
    pub theta_hat: FunctionOnGrid,
    pub restricted: FunctionOnGrid,
    pub statistic: f64,
    pub c_n: f64,
    pub ensemble: BootstrapEnsemble,
}

pub fn prepare(sample: &Sample, config: &TestConfig) -> Result<Prepared> {
    config.validate()?;
    let basis = sieve::build_basis(config.sieve.degree, &config.sieve.knots, &sample.z)
        .map_err(Error::at("basis"))?;
    let fit = estimator::fit(sample, &basis).map_err(Error::at("fit"))?;
    let theta_hat = estimator::eval_on_grid(&fit, &config.grid).map_err(Error::at("estimate"))?;
    let phi = functionals::evaluate(&config.functional, &theta_hat).map_err(Error::at("statistic"))?;
    let restricted = operators::apply(&config.gamma_op, &theta_hat).map_err(Error::at("restriction"))?;
    let ensemble = estimator::score_bootstrap(&fit, &config.grid, config.bootstrap, config.seed)
        .map_err(Error::at("bootstrap"))?;
    let c_n = config.c_n.unwrap_or(fit.c_n);
    Ok(Prepared {
        statistic: fit.r_n * phi,
        fit,
        theta_hat,
        restricted,
        c_n,
        ensemble,
    })
}

impl Prepared {
    pub fn decide(&self, config: &TestConfig, rule: GammaRule) -> Result<TestReport> {
        let n = self.fit.n();
        let gamma = rule.gamma(n);
        let (tau, kappa) = kappa_hat(&self.ensemble, self.fit.r_n, self.c_n, gamma);
        let kappa = config.kappa_override.unwrap_or(kappa.unwrap_or(0.0));
        let (crit, values) = critical_value(
            &self.ensemble,
            &self.restricted,
            &config.functional,
            kappa,
            config.alpha,
        )
        .map_err(Error::at("critical value"))?;
        let exceed = values.iter().filter(|&&v| v >= self.statistic).count();
        let grid = &config.grid;
        Ok(TestReport {
            schema: REPORT_SCHEMA,
            n,
            k_n: self.fit.k_n(),
            r_n: self.fit.r_n,
            c_n: self.c_n,
            statistic: self.statistic,
            gamma,
            tau_hat: tau,
            kappa_hat: kappa,
            critical_value: crit,
            p_value: exceed as f64 / values.len() as f64,
            reject: self.statistic > crit,
            bootstrap_values: values,
            provenance: Provenance {
                alpha: config.alpha,
                gamma_rule: rule.label(),
                bootstrap: config.bootstrap,
                functional: config.functional.clone(),
                gamma_op: config.gamma_op.clone(),
                basis: config.sieve.degree,
                knots: config.sieve.knots.clone(),
                grid: GridSummary {
                    lower: grid.lower(),
                    upper: grid.upper(),
                    shape: grid.shape(),
                },
                seed: config.seed,
                kappa_override: config.kappa_override,
            },
        })
    }
}

pub fn run_test(sample: &Sample, config: &TestConfig) -> Result<TestReport> {
    prepare(sample, config)?.decide(config, config.gamma_rule)
}

/// Monte Carlo rejection frequency for one gamma rule.
#[derive(Debug, Clone, Serialize)]
pub struct McRecord {
    pub gamma_rule: String,
    pub reps: usize,
    pub rejections: usize,
    pub failures: usize,
    pub frequency: f64,
    pub se: f64,
}

impl McRecord {
    fn new(rule: GammaRule, rejections: usize, reps: usize, failures: usize) -> Self {
        let p = rejections as f64 / reps as f64;
        McRecord {
            gamma_rule: rule.label(),
            reps,
            rejections,
            failures,
            frequency: p,
            se: (p * (1.0 - p) / reps as f64).sqrt(),
        }
    }
}

/// Runs `n_reps` replications; replication `r` draws its sample from
/// `make_sample(seed)` and its bootstrap from an independent derived seed.
/// Every rule in `rules` is decided on the same replications.
pub fn rejection_harness<F>(
    config: &TestConfig,
    rules: &[GammaRule],
    n_reps: usize,
    master_seed: u64,
    make_sample: F,
) -> Result<Vec<McRecord>>
where
    F: Fn(u64) -> Result<Sample> + Sync,
{
    if n_reps == 0 || rules.is_empty() {
        return Err(Error::InvalidConfig("need at least one replication and one rule".into()));
    }
    config.validate()?;
    let outcomes: Vec<Result<Vec<bool>>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let sample = make_sample(rng::derive_seed(master_seed, r, rng::TAG_SAMPLE))?;
            let mut cfg = config.clone();
            cfg.seed = rng::derive_seed(master_seed, r, rng::TAG_BOOTSTRAP);
            let prepared = prepare(&sample, &cfg)?;
            rules
                .iter()
                .map(|&rule| prepared.decide(&cfg, rule).map(|rep| rep.reject))
                .collect()
        })
        .collect();

    let mut failures = 0;
    let mut rejections = vec![0usize; rules.len()];
    for o in &outcomes {
        match o {
            Ok(flags) => {
                for (acc, &f) in rejections.iter_mut().zip(flags) {
                    *acc += f as usize;
                }
            }
            Err(e) => {
                log::warn!("replication failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > MAX_REP_FAILURES * n_reps as f64 {
        return Err(Error::ReplicationFailures {
            failed: failures,
            total: n_reps,
        });
    }
    let done = n_reps - failures;
    Ok(rules
        .iter()
        .zip(rejections)
        .map(|(&rule, rej)| McRecord::new(rule, rej, done, failures))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(n: usize, seed: u64, theta: impl Fn(f64) -> f64, noise: f64) -> Sample {
        let mut r = rng::stream(seed, 0);
        let z = DMatrix::from_fn(n, 1, |_, _| r.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |i, _| {
            let u: f64 = StandardNormal.sample(&mut r);
            theta(z[(i, 0)]) + noise * u
        });
        Sample::new(y, z, None).unwrap()
    }

    fn config(restriction: Restriction) -> TestConfig {
        let grid = Arc::new(Grid::uniform(-1.0, 1.0, 101).unwrap());
        TestConfig::for_restriction(restriction, grid, SieveSpec::new(Degree::Cubic, vec![5]))
    }

    #[test]
    fn kappa_arithmetic() {
        let r_n = (1000.0f64 / 9.0).sqrt();
        let c_n = 1.0 / 1000.0f64.ln();
        let k = kappa_from(r_n, c_n, 2.0).unwrap();
        assert!((k - 0.76297).abs() < 1e-5, "{k}");
        assert_eq!(kappa_from(r_n, c_n, 0.0), None);
    }

    #[test]
    fn order_statistic_convention() {
        assert_eq!(order_statistic(&[4.0, 2.0, 1.0, 3.0], 0.75), 3.0);
        assert_eq!(order_statistic(&[1.0, 2.0, 3.0, 4.0], 1.0), 4.0);
        assert_eq!(order_statistic(&[1.0, 2.0, 3.0, 4.0], 0.0), 1.0);
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(order_statistic(&v, 0.95), 190.0);
    }

    #[test]
    fn gamma_rules() {
        assert_eq!(GammaRule::InverseN.gamma(500), 0.002);
        assert!((GammaRule::LogRule.gamma(500) - 0.01 / 500f64.ln()).abs() < 1e-18);
        assert_eq!(GammaRule::parse("fixed:0.05").unwrap(), GammaRule::Fixed(0.05));
        assert_eq!(GammaRule::parse("logn").unwrap(), GammaRule::LogRule);
        assert!(GammaRule::parse("fixed:2").is_err());
        assert!(GammaRule::parse("median").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = config(Restriction::Monotone);
        assert!(c.validate().is_ok());
        c.bootstrap = 49;
        assert!(c.validate().is_err());
        let mut c = config(Restriction::Monotone);
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = config(Restriction::Monotone);
        c.functional = WaldFunctional::OperatorResidual {
            op: ShapeOperator::Rearrange,
            norm: Norm::Sup,
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn noiseless_monotone_truth_is_not_rejected() {
        let s = sample(300, 1, |z| z, 0.0);
        let c = config(Restriction::Monotone);
        for alpha in [0.01, 0.05, 0.5] {
            let rep = run_test(&s, &TestConfig { alpha, ..c.clone() }).unwrap();
            assert!(rep.statistic.abs() < 1e-9);
            assert!(!rep.reject);
        }
    }

    #[test]
    fn decision_agrees_with_p_value() {
        let c = config(Restriction::Monotone);
        for seed in 0..12 {
            let s = sample(300, seed, |z| -0.3 * z, 1.0);
            let rep = run_test(&s, &TestConfig { seed, ..c.clone() }).unwrap();
            if rep.reject {
                assert!(rep.p_value <= c.alpha);
            }
            if rep.p_value < c.alpha {
                assert!(rep.reject);
            }
            assert!((0.0..=1.0).contains(&rep.p_value));
        }
    }

    #[test]
    fn strong_decrease_is_rejected() {
        let s = sample(1000, 3, |z| -2.0 * z, 1.0);
        let rep = run_test(&s, &config(Restriction::Monotone)).unwrap();
        assert!(rep.reject && rep.p_value < 0.01);
    }

    #[test]
    fn kappa_decreases_as_gamma_shrinks() {
        let s = sample(500, 4, |z| z * z, 1.0);
        let c = config(Restriction::Monotone);
        let prep = prepare(&s, &c).unwrap();
        let mut prev = f64::INFINITY;
        for g in [0.5, 0.2, 0.1, 0.05, 0.01, 0.001] {
            let rep = prep.decide(&c, GammaRule::Fixed(g)).unwrap();
            assert!(rep.kappa_hat <= prev);
            prev = rep.kappa_hat;
        }
    }

    #[test]
    fn critical_value_is_monotone_in_alpha() {
        let s = sample(400, 5, |z| z, 1.0);
        let c = config(Restriction::Monotone);
        let prep = prepare(&s, &c).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.25, 0.5] {
            let (cv, _) = critical_value(&prep.ensemble, &prep.restricted, &c.functional, 0.3, alpha).unwrap();
            assert!(cv <= prev);
            prev = cv;
        }
        let (cv0, _) = critical_value(&prep.ensemble, &prep.restricted, &c.functional, 0.0, 0.05).unwrap();
        let plain: Vec<f64> = prep
            .ensemble
            .draws
            .iter()
            .map(|g| functionals::evaluate(&c.functional, g).unwrap())
            .collect();
        assert_eq!(cv0, order_statistic(&plain, 0.95));
    }

    #[test]
    fn fixed_kappa_decision_is_scale_equivariant() {
        let s = sample(500, 6, |z| 0.2 * z - 0.5 * (-z * z).exp(), 1.0);
        let mut c = config(Restriction::MonotoneConvex);
        c.kappa_override = Some(0.4);
        let base = run_test(&s, &c).unwrap();
        let scaled = run_test(&s.with_outcome(&s.y * 3.0).unwrap(), &c).unwrap();
        assert!((scaled.statistic - 3.0 * base.statistic).abs() < 1e-8 * (1.0 + base.statistic));
        assert!((scaled.critical_value - 3.0 * base.critical_value).abs() < 1e-8 * (1.0 + base.critical_value));
        assert_eq!(base.reject, scaled.reject);
    }

    #[test]
    fn report_is_reproducible_and_versioned() {
        let s = sample(300, 7, |z| z.sin(), 1.0);
        let c = config(Restriction::Convex);
        let a = serde_json::to_string(&run_test(&s, &c).unwrap()).unwrap();
        let b = serde_json::to_string(&run_test(&s, &c).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"schema\":\"shapetest-report/1\""));
        assert!(a.contains("\"gamma_rule\":\"logn\""));
    }

    #[test]
    fn stage_is_named_on_failure() {
        let s = sample(5, 8, |z| z, 1.0);
        let err = run_test(&s, &config(Restriction::Monotone)).unwrap_err();
        assert!(err.to_string().starts_with("basis"), "{err}");
    }

    #[test]
    fn harness_reports_binomial_error() {
        let c = TestConfig {
            bootstrap: 50,
            ..config(Restriction::Monotone)
        };
        let recs = rejection_harness(&c, &[GammaRule::LogRule], 20, 9, |seed| {
            Ok(sample(200, seed, |z| -3.0 * z, 1.0))
        })
        .unwrap();
        assert_eq!(recs[0].reps, 20);
        assert_eq!(recs[0].frequency, 1.0);
        assert_eq!(recs[0].se, 0.0);
    }
}
