//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use shapetest::functionals::{self, Restriction, ShapeSpec, WaldFunctional};
use shapetest::lp::{LinearProgram, LpStatus, Sense};
use shapetest::operators::{self, ShapeOperator};
use shapetest::rng::stream;
use shapetest::simlab::{self, Cell, Design, Family, McOptions, McRow};
use shapetest::testengine::{GammaRule, SieveSpec};
use shapetest::{Degree, FunctionOnGrid, Grid, Norm};

const TOL: f64 = 1e-8;
const RESTRICTIONS: [Restriction; 5] = [
    Restriction::Monotone,
    Restriction::Convex,
    Restriction::Concave,
    Restriction::MonotoneConvex,
    Restriction::MonotoneConcave,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, out: Outcome) -> bool {
    println!(
        "{} {id} {name}: {} [{:.1}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        started.elapsed().as_secs_f64()
    );
    out.pass
}

fn sup(f: &FunctionOnGrid, g: &FunctionOnGrid) -> f64 {
    f.diff(g).unwrap().norm(Norm::Sup)
}

fn vec_fn(grid: &Arc<Grid>, v: Vec<f64>) -> FunctionOnGrid {
    FunctionOnGrid::new(grid.clone(), v).unwrap()
}

fn counterexample() -> Outcome {
    let grid = Arc::new(Grid::unit(4).unwrap());
    let phi = WaldFunctional::OperatorResidual {
        op: ShapeOperator::Rearrange,
        norm: Norm::Sup,
    };
    let t1 = vec_fn(&grid, vec![40.0, 54.0, 42.0, 69.0]);
    let t2 = vec_fn(&grid, vec![21.0, 88.0, 3.0, 68.0]);
    let s = t1.add(&t2).unwrap();
    let v: Vec<f64> = [&t1, &t2, &s]
        .iter()
        .map(|f| functionals::evaluate(&phi, f).unwrap())
        .collect();
    Outcome {
        pass: v == [12.0, 67.0, 92.0] && v[2] > v[0] + v[1],
        detail: format!("phi = {} / {} / {}", v[0], v[1], v[2]),
    }
}

fn random_axis(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x += rng.gen_range(0.05..1.0);
            x
        })
        .collect()
}

fn random_grid(rng: &mut ChaCha8Rng, d: usize) -> Arc<Grid> {
    let axes = if d == 1 {
        let n = rng.gen_range(2..=50);
        vec![random_axis(rng, n)]
    } else {
        let (a, b) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
        vec![random_axis(rng, a), random_axis(rng, b)]
    };
    Arc::new(Grid::new(axes).unwrap())
}

fn random_fn(rng: &mut ChaCha8Rng, grid: &Arc<Grid>) -> FunctionOnGrid {
    vec_fn(grid, (0..grid.len()).map(|_| rng.gen_range(-5.0..5.0)).collect())
}

/// A random element of the restriction's cone.
fn cone_element(rng: &mut ChaCha8Rng, grid: &Arc<Grid>, r: Restriction) -> FunctionOnGrid {
    let d = grid.dim();
    let planes: Vec<(Vec<f64>, f64)> = (0..rng.gen_range(1..5))
        .map(|_| {
            let slope = (0..d)
                .map(|_| {
                    if matches!(r, Restriction::Convex | Restriction::Concave) {
                        rng.gen_range(-2.0..2.0)
                    } else {
                        rng.gen_range(0.0..2.0)
                    }
                })
                .collect();
            (slope, rng.gen_range(-3.0..3.0))
        })
        .collect();
    let affine = |z: &[f64], p: &(Vec<f64>, f64)| p.1 + z.iter().zip(&p.0).map(|(a, b)| a * b).sum::<f64>();
    let max_aff = |z: &[f64]| planes.iter().map(|p| affine(z, p)).fold(f64::NEG_INFINITY, f64::max);
    let min_aff = |z: &[f64]| planes.iter().map(|p| affine(z, p)).fold(f64::INFINITY, f64::min);
    match r {
        Restriction::Monotone => {
            let steps: Vec<Vec<f64>> = grid
                .axes()
                .iter()
                .map(|ax| {
                    let mut acc = 0.0;
                    ax.iter()
                        .map(|_| {
                            if rng.gen_bool(0.7) {
                                acc += rng.gen_range(0.0..2.0);
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            let c = rng.gen_range(0.0..1.0);
            let vals = (0..grid.len())
                .map(|i| {
                    let m = grid.multi_index(i);
                    let z = grid.point(i);
                    steps.iter().zip(&m).map(|(s, &k)| s[k]).sum::<f64>()
                        + c * z.iter().product::<f64>()
                })
                .collect();
            vec_fn(grid, vals)
        }
        Restriction::Convex | Restriction::MonotoneConvex => {
            FunctionOnGrid::from_fn(grid.clone(), max_aff).unwrap()
        }
        Restriction::Concave | Restriction::MonotoneConcave => {
            FunctionOnGrid::from_fn(grid.clone(), min_aff).unwrap()
        }
    }
}

#[derive(Default)]
struct Tally {
    checks: usize,
    violations: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.violations.len() < 5 {
            self.violations.push(what());
        } else if !ok {
            self.violations.push(String::new());
        }
    }
}

fn property_suite() -> Outcome {
    let started = Instant::now();
    let mut t = Tally::default();
    let mut rng = stream(0xacce, 2);
    for inst in 0..1000 {
        let d = 1 + inst % 2;
        let grid = random_grid(&mut rng, d);
        let f = random_fn(&mut rng, &grid);
        let g = random_fn(&mut rng, &grid);
        let fg = f.add(&g).unwrap();
        let dist_fg = sup(&f, &g);
        let a = rng.gen_range(0.1..5.0);
        for r in RESTRICTIONS {
            let shape = ShapeSpec::new(r, d);
            let cone = WaldFunctional::ConeDistance { shape };
            let op = r.enforcing_operator();
            let resid = WaldFunctional::OperatorResidual {
                op: op.clone(),
                norm: Norm::Sup,
            };
            let theta = cone_element(&mut rng, &grid, r);
            let ev = |phi: &WaldFunctional, h: &FunctionOnGrid| functionals::evaluate(phi, h).unwrap();
            let up = |h: &FunctionOnGrid| operators::apply(&op, h).unwrap();
            let tag = |p: &str| format!("instance {inst} d={d} {r:?}: {p}");

            let uf = up(&f);
            t.check(sup(&up(&uf), &uf) <= TOL, || tag("idempotence"));
            t.check(sup(&up(&theta), &theta) <= TOL, || tag("fixes cone element"));
            t.check(ev(&cone, &theta) <= TOL, || tag("distance zero on cone"));
            t.check(sup(&uf, &up(&g)) <= dist_fg + TOL, || tag("operator 1-Lipschitz"));

            for phi in [&cone, &resid] {
                let (pf, pg) = (ev(phi, &f), ev(phi, &g));
                let lip = phi.lipschitz_constant();
                t.check((pf - pg).abs() <= lip * dist_fg + TOL, || tag("Lipschitz"));
                let pa = ev(phi, &f.scale(a));
                t.check((pa - a * pf).abs() <= TOL * (1.0 + pa.abs()), || tag("homogeneity"));
            }

            let conforming = [cone.clone(), resid.clone()]
                .into_iter()
                .filter(|phi| phi.is_conforming())
                .collect::<Vec<_>>();
            for phi in &conforming {
                let lhs = ev(phi, &fg);
                t.check(lhs <= ev(phi, &f) + ev(phi, &g) + TOL, || tag("subadditivity"));
                let mut prev = f64::INFINITY;
                for s in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
                    let v = ev(phi, &f.add_scaled(s, &theta).unwrap());
                    t.check(v <= prev + TOL, || tag("damping"));
                    prev = v;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    let n_viol = t.violations.len();
    Outcome {
        pass: n_viol == 0 && elapsed < Duration::from_secs(120),
        detail: format!(
            "{} checks on 1000 instances, {} violations{}",
            t.checks,
            n_viol,
            t.violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    }
}

fn oracle_equivalences() -> Outcome {
    let started = Instant::now();
    let mut rng = stream(0xacce, 3);
    let mut gcm_err: f64 = 0.0;
    for _ in 0..500 {
        let grid = random_grid(&mut rng, 1);
        let f = random_fn(&mut rng, &grid);
        let chord = operators::gcm_1d_chord(&f).unwrap();
        for (l, c) in chord.values().iter().enumerate() {
            gcm_err = gcm_err.max((operators::gcm_lp(&f, l).unwrap() - c).abs());
        }
    }

    let mut cone_err: f64 = 0.0;
    for _ in 0..500 {
        let grid = random_grid(&mut rng, 1);
        let f = random_fn(&mut rng, &grid);
        let v = f.values();
        let mut drop: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                drop = drop.max(v[i] - v[j]);
            }
        }
        let lp = functionals::cone_distance_lp(&ShapeSpec::new(Restriction::Monotone, 1), &f).unwrap();
        cone_err = cone_err.max((lp - 0.5 * drop).abs());
    }

    let mut gap: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(1..=8);
        let mut lp = LinearProgram::new(n);
        lp.minimize((0..n).map(|_| rng.gen_range(0.1..2.0)).collect());
        for _ in 0..m {
            // a positive row sum keeps x = t(1, ..., 1) feasible for large t
            let row = loop {
                let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
                if row.iter().sum::<f64>() > 0.1 {
                    break row;
                }
            };
            lp.add_constraint(row, Sense::Ge, rng.gen_range(-1.0..3.0));
        }
        let primal = lp.solve().unwrap();
        let dual = lp.canonical_dual().unwrap().solve().unwrap();
        if primal.status != LpStatus::Optimal || dual.status != LpStatus::Optimal {
            bad += 1;
            continue;
        }
        gap = gap.max((primal.objective_value + dual.objective_value).abs());
    }
    let pass = gcm_err <= 1e-6
        && cone_err <= 1e-6
        && gap <= 1e-6
        && bad == 0
        && started.elapsed() < Duration::from_secs(120);
    Outcome {
        pass,
        detail: format!(
            "max |chord - lp| = {gcm_err:.2e}, max |cone lp - half drop| = {cone_err:.2e}, max duality gap = {gap:.2e}, non-optimal = {bad}"
        ),
    }
}

fn mc_options(reps: usize, rules: Vec<GammaRule>) -> McOptions {
    McOptions {
        reps,
        bootstrap: 200,
        alpha: 0.05,
        seed: 20240101,
        grid_points: None,
        rules,
        timing: false,
    }
}

fn null_cell(family: Family, which: usize, n: usize, knots: usize, r: Restriction) -> Cell {
    Cell {
        design: Design::null(family, which).unwrap(),
        delta: None,
        n,
        sieve: SieveSpec::new(Degree::Cubic, vec![knots]),
        restriction: r,
    }
}

fn rate(rows: &[McRow], rule: &str) -> f64 {
    rows.iter().find(|r| r.gamma_rule == rule).unwrap().reject_rate
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            ranks[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn run_binary(args: &[&str]) -> (Vec<u8>, Option<i32>) {
    let out = Command::new(env!("CARGO_BIN_EXE_shapetest"))
        .args(args)
        .output()
        .expect("run shapetest");
    (out.stdout, out.status.code())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.csv");
    let data = data.to_str().unwrap();
    let (_, code) = run_binary(&["fixture", "--n", "800", "--seed", "5", "--out", data]);
    let sim = [
        "simulate", "size-mon-uni", "--reps", "60", "--bootstrap", "100", "--n", "500", "--knots", "3", "--seed", "9",
    ];
    let test = ["test", data, "--shape", "mon", "--seed", "11"];
    let (s1, c1) = run_binary(&sim);
    let (s2, c2) = run_binary(&sim);
    let (t1, d1) = run_binary(&test);
    let (t2, d2) = run_binary(&test);
    let pass = code == Some(0)
        && c1 == Some(0)
        && c1 == c2
        && d1 == d2
        && matches!(d1, Some(0) | Some(3))
        && !s1.is_empty()
        && !t1.is_empty()
        && s1 == s2
        && t1 == t2;
    Outcome {
        pass,
        detail: format!(
            "simulate {} bytes identical={}, test {} bytes identical={}",
            s1.len(),
            s1 == s2,
            t1.len(),
            t1 == t2
        ),
    }
}

fn main() {
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "rearrangement residual counterexample", t, counterexample());

    let t = Instant::now();
    all &= report(2, "operator and functional property suite", t, property_suite());

    let t = Instant::now();
    all &= report(3, "oracle equivalences", t, oracle_equivalences());

    // Size cells shared by criteria 4, 5 and 7.
    let all_rules = mc_options(500, GammaRule::ALL.to_vec());
    let t = Instant::now();
    let c5_d1 = simlab::run_cell(&null_cell(Family::Uni1, 1, 500, 5, Restriction::Monotone), &all_rules).unwrap();
    let p = rate(&c5_d1, "logn");
    let se = (p * (1.0 - p) / 500.0).sqrt();
    all &= report(
        4,
        "size, monotone, D1 C5 n=500",
        t,
        Outcome {
            pass: (0.031..=0.097).contains(&p),
            detail: format!("frequency {p:.4} (se {se:.4}), window [0.031, 0.097]"),
        },
    );

    let t = Instant::now();
    let c3_d3 = simlab::run_cell(&null_cell(Family::Uni1, 3, 1000, 3, Restriction::Monotone), &all_rules).unwrap();
    let p = rate(&c3_d3, "logn");
    all &= report(
        5,
        "conservative at interior null, D3 C3 n=1000",
        t,
        Outcome {
            pass: p <= 0.03,
            detail: format!("frequency {p:.4}, bound 0.03"),
        },
    );

    let t = Instant::now();
    let power_opts = mc_options(200, vec![GammaRule::LogRule]);
    let mut deltas = Vec::new();
    let mut power = Vec::new();
    for delta in 0..=10 {
        let delta = f64::from(delta);
        let cell = Cell {
            design: Design::alternative(Family::Uni1, delta),
            delta: Some(delta),
            n: 1000,
            sieve: SieveSpec::new(Degree::Cubic, vec![3]),
            restriction: Restriction::Monotone,
        };
        let rows = simlab::run_cell(&cell, &power_opts).unwrap();
        deltas.push(delta);
        power.push(rows[0].reject_rate);
    }
    let rho = spearman(&deltas, &power);
    let top = power[10];
    all &= report(
        6,
        "power, Uni1 alternatives C3 n=1000",
        t,
        Outcome {
            pass: top >= 0.95 && rho > 0.9,
            detail: format!(
                "frequency at delta=10 {top:.3}, Spearman rho {rho:.3}, curve {:?}",
                power
            ),
        },
    );

    let t = Instant::now();
    let mut cells = vec![c5_d1, c3_d3];
    for cell in [
        null_cell(Family::Uni1, 2, 750, 7, Restriction::Monotone),
        null_cell(Family::Uni1, 1, 500, 3, Restriction::Convex),
    ] {
        cells.push(simlab::run_cell(&cell, &all_rules).unwrap());
    }
    let spread = cells
        .iter()
        .map(|rows| {
            let r: Vec<f64> = rows.iter().map(|r| r.reject_rate).collect();
            r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    all &= report(
        7,
        "gamma rule insensitivity",
        t,
        Outcome {
            pass: spread <= 0.005,
            detail: format!("max spread across invn/logn/fixed:0.01 over {} cells = {spread:.4}", cells.len()),
        },
    );

    let t = Instant::now();
    all &= report(8, "byte-identical reruns", t, determinism());

    if !all {
        std::process::exit(1);
    }
}
