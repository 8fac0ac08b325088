//! `shapetest` command-line front end.
//!
//! Exit codes: 0 test did not reject, 3 test rejected, 1 error, 2 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use shapetest::functionals::Restriction;
use shapetest::operators::{self, ShapeOperator};
use shapetest::simlab::{self, Family, McOptions, SuiteFilter};
use shapetest::testengine::{self, GammaRule, SieveSpec, TestConfig};
use shapetest::{Degree, FunctionOnGrid, Grid, Norm, Sample};

const EXIT_REJECT: u8 = 3;

#[derive(Parser)]
#[command(name = "shapetest", version, about = "Wald-type tests of shape restrictions")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SHAPETEST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a shape restriction on a CSV dataset (columns y, z1[, z2], controls).
    Test(TestArgs),
    /// Run a Monte Carlo size or power suite and write CSV.
    Simulate(SimulateArgs),
    /// Apply a shape-enforcing operator to gridded values (columns z1[, z2], f).
    Operators(OperatorArgs),
    /// Write a synthetic hours/wage-growth dataset.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Mon,
    Con,
    Conc,
    MonCon,
    MonConc,
}

impl From<ShapeArg> for Restriction {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Mon => Restriction::Monotone,
            ShapeArg::Con => Restriction::Convex,
            ShapeArg::Conc => Restriction::Concave,
            ShapeArg::MonCon => Restriction::MonotoneConvex,
            ShapeArg::MonConc => Restriction::MonotoneConcave,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Quadratic,
    Cubic,
}

impl From<BasisArg> for Degree {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Quadratic => Degree::Quadratic,
            BasisArg::Cubic => Degree::Cubic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Rearrange,
    Gcm,
    Lcm,
    MonCon,
    MonConc,
}

impl From<OpArg> for ShapeOperator {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Rearrange => ShapeOperator::Rearrange,
            OpArg::Gcm => ShapeOperator::Gcm,
            OpArg::Lcm => ShapeOperator::Lcm,
            OpArg::MonCon => Restriction::MonotoneConvex.enforcing_operator(),
            OpArg::MonConc => Restriction::MonotoneConcave.enforcing_operator(),
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Input CSV.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "mon")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "cubic")]
    basis: BasisArg,
    /// Interior knots per axis (default 5 for one regressor, 1 for two).
    #[arg(long)]
    knots: Option<usize>,
    /// fixed:<gamma>, logn or invn.
    #[arg(long, default_value = "logn")]
    gamma_rule: String,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only observations with every regressor in [lo, hi].
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    z_range: Option<(f64, f64)>,
    /// Grid points per axis (default 101 for one regressor, 11 for two).
    #[arg(long)]
    grid: Option<usize>,
    /// Report path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Suite name, e.g. size-mon-uni or power-curves.
    suite: String,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 20240101)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Design family for power-curves.
    #[arg(long)]
    family: Option<String>,
    /// Restriction for power-curves (defaults to the family's).
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Restrict to one sieve degree.
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// Restrict to one knot count.
    #[arg(long)]
    knots: Option<usize>,
    /// Null designs to run (1..=3), comma separated.
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<usize>>,
    /// Alternatives to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Gamma rules, comma separated (default: all three).
    #[arg(long, value_delimiter = ',')]
    gamma_rule: Option<Vec<String>>,
    #[arg(long)]
    grid: Option<usize>,
    /// Fill the runtime_ms column.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OperatorArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    op: OpArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Coefficient on log hours; negative for a decreasing relation.
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    slope: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("malformed CSV at record {}", i + 1))?;
            let row = rec
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("non-numeric field in record {}", i + 1))?;
            rows.push(row);
        }
        if rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// y, z1[, z2]; every other column is a control.
fn sample_from_table(t: &Table, z_range: Option<(f64, f64)>) -> Result<Sample> {
    let y = t.column("y").ok_or_else(|| anyhow!("missing column `y`"))?;
    let mut zc = vec![t.column("z1").ok_or_else(|| anyhow!("missing column `z1`"))?];
    zc.extend(t.column("z2"));
    let wc: Vec<usize> = (0..t.header.len())
        .filter(|j| *j != y && !zc.contains(j))
        .collect();
    let rows: Vec<&Vec<f64>> = t
        .rows
        .iter()
        .filter(|r| z_range.map_or(true, |(lo, hi)| zc.iter().all(|&j| r[j] >= lo && r[j] <= hi)))
        .collect();
    if rows.is_empty() {
        bail!("no observations left after --z-range");
    }
    let n = rows.len();
    let yv = DVector::from_iterator(n, rows.iter().map(|r| r[y]));
    let z = DMatrix::from_fn(n, zc.len(), |i, j| rows[i][zc[j]]);
    let w = (!wc.is_empty()).then(|| DMatrix::from_fn(n, wc.len(), |i, j| rows[i][wc[j]]));
    Ok(Sample::new(yv, z, w)?)
}

fn cmd_test(args: TestArgs) -> Result<ExitCode> {
    let table = Table::read(&args.input)?;
    let sample = sample_from_table(&table, args.z_range)?;
    let d = sample.dim();
    let points = args.grid.unwrap_or_else(|| simlab::default_grid_points(d));
    let lo: Vec<f64> = (0..d).map(|j| sample.z.column(j).min()).collect();
    let hi: Vec<f64> = (0..d).map(|j| sample.z.column(j).max()).collect();
    let grid = Arc::new(Grid::uniform_box(&lo, &hi, &vec![points; d])?);
    let knots = args.knots.unwrap_or(if d == 1 { 5 } else { 1 });
    let sieve = SieveSpec::new(args.basis.into(), vec![knots; d]);
    let mut config = TestConfig::for_restriction(args.shape.into(), grid, sieve);
    config.alpha = args.alpha;
    config.gamma_rule = GammaRule::parse(&args.gamma_rule)?;
    config.bootstrap = args.bootstrap;
    config.seed = args.seed;
    let report = testengine::run_test(&sample, &config)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(if report.reject {
        ExitCode::from(EXIT_REJECT)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let family = args.family.as_deref().map(Family::parse).transpose()?;
    let mut filter = SuiteFilter {
        family,
        restriction: args.shape.map(Into::into),
        ns: args.n,
        sieves: None,
        designs: args.designs,
        deltas: args.deltas,
    };
    if args.basis.is_some() || args.knots.is_some() {
        let base = simlab::suite_cells(&args.suite, &SuiteFilter { sieves: None, ..filter.clone() })?;
        let mut sieves: Vec<SieveSpec> = Vec::new();
        for c in base {
            let keep = args.basis.map_or(true, |b| c.sieve.degree == Degree::from(b))
                && args.knots.map_or(true, |k| c.sieve.knots[0] == k);
            if keep && !sieves.contains(&c.sieve) {
                sieves.push(c.sieve);
            }
        }
        if sieves.is_empty() {
            bail!("no sieve in suite {} matches --basis/--knots", args.suite);
        }
        filter.sieves = Some(sieves);
    }
    let cells = simlab::suite_cells(&args.suite, &filter)?;
    let rules = match args.gamma_rule {
        Some(v) => v.iter().map(|s| GammaRule::parse(s)).collect::<Result<Vec<_>, _>>()?,
        None => GammaRule::ALL.to_vec(),
    };
    let opts = McOptions {
        reps: args.reps,
        bootstrap: args.bootstrap,
        alpha: args.alpha,
        seed: args.seed,
        grid_points: args.grid,
        rules,
        timing: args.timing,
    };
    let rows = simlab::run_mc(&cells, &opts)?;
    let out = output(args.out.as_deref())?;
    simlab::write_csv(&rows, args.suite == "power-curves", out)?;
    Ok(ExitCode::SUCCESS)
}

/// Rebuilds a rectangular grid from coordinate columns.
fn gridded(t: &Table) -> Result<FunctionOnGrid> {
    let f = t.column("f").ok_or_else(|| anyhow!("missing column `f`"))?;
    let mut zc = vec![t.column("z1").ok_or_else(|| anyhow!("missing column `z1`"))?];
    zc.extend(t.column("z2"));
    let axes: Vec<Vec<f64>> = zc
        .iter()
        .map(|&j| {
            let mut v: Vec<f64> = t.rows.iter().map(|r| r[j]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    if total != t.rows.len() {
        bail!("grid not rectangular: {} rows for a {} point product grid", t.rows.len(), total);
    }
    let grid = Grid::new(axes)?;
    let mut values = vec![f64::NAN; total];
    for r in &t.rows {
        let idx: Vec<usize> = zc
            .iter()
            .enumerate()
            .map(|(k, &j)| grid.axis(k).partition_point(|&a| a < r[j]))
            .collect();
        let lin = grid.linear_index(&idx);
        if !values[lin].is_nan() {
            bail!("grid not rectangular: duplicate point");
        }
        values[lin] = r[f];
    }
    Ok(FunctionOnGrid::new(Arc::new(grid), values)?)
}

fn cmd_operators(args: OperatorArgs) -> Result<ExitCode> {
    let f = gridded(&Table::read(&args.input)?)?;
    let op: ShapeOperator = args.op.into();
    let g = operators::apply(&op, &f)?;
    let residual = f.diff(&g)?.norm(Norm::Sup);
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    let d = f.dim();
    let mut header: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
    header.extend(["f".to_string(), "value".to_string()]);
    w.write_record(&header)?;
    let grid = f.grid();
    for (i, (a, b)) in f.values().iter().zip(g.values()).enumerate() {
        let mut rec: Vec<String> = grid.point(i).iter().map(f64::to_string).collect();
        rec.push(a.to_string());
        rec.push(b.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    eprintln!("residual={residual}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_fixture(args: FixtureArgs) -> Result<ExitCode> {
    let fx = simlab::fixture(args.n, args.slope, args.seed);
    simlab::write_fixture_csv(&fx, output(args.out.as_deref())?)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Operators(a) => cmd_operators(a),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
