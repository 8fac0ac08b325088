//! Wald-type tests of shape restrictions (monotonicity, convexity,
//! concavity and their intersections) for nonparametric regression
//! functions estimated by B-spline series.

pub mod error;
pub mod estimator;
pub mod functionals;
pub mod grid;
pub mod lp;
pub mod operators;
pub mod rng;
pub mod sieve;
pub mod simlab;
pub mod testengine;

pub use error::{Error, Result};
pub use estimator::{BootstrapEnsemble, Sample, SeriesFit};
pub use functionals::{Restriction, ShapeSpec, WaldFunctional};
pub use grid::{FunctionOnGrid, Grid, Norm};
pub use operators::ShapeOperator;
pub use sieve::{Degree, SplineBasis};
pub use testengine::{GammaRule, SieveSpec, TestConfig, TestReport};
