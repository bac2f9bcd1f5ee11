//! Subcommand implementations. Each validates its inputs, opens the output
//! directory, computes, and returns the run with its pass flag.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use ditasep_core::hydro::{current_at, validate_v0, ContactCase, CurrentPoint, HydroOptions, Profile};
use ditasep_core::lpp::{lln_estimate, Environment};
use ditasep_core::pde::{
    godunov_run, hj_residual, maximal_current_check, viscosity_spot_check, weak_form_check, BumpTest,
    GodunovOptions, Mesh, PointClass, ResidualOptions, Scheme, SpaceTimeField, SpaceTimeGrid, ViscosityOptions,
};
use ditasep_core::rng::{mix64, replica_seed, CounterRng, STREAM_AUX};
use ditasep_core::shape::{level_curve, shape_grid, LevelSolver, ShapeOptions};
use ditasep_core::stats::median;
use ditasep_core::tasep::{check_envelope, evolve, init_heights, run_heights, Boundary, Event, HeightTrajectory};
use ditasep_core::SpeedField;
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::init::{self, Init};
use crate::output::{num, Run};
use crate::speed;

/// Bisection tolerance of level-curve queries.
const LEVEL_QUERY_TOL: f64 = 1e-9;

/// Largest window `--trace` accepts.
const TRACE_SITES: i64 = 2000;

pub struct Ctx {
    pub seed: u64,
    pub mem_cap_mb: u64,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn mem_cap_bytes(&self) -> usize {
        usize::try_from(self.mem_cap_mb).unwrap_or(usize::MAX).saturating_mul(1 << 20)
    }

    fn open(&self, outputs: &[&str]) -> Result<Run> {
        for o in outputs {
            ensure!(!o.is_empty() && !Path::new(o).is_absolute(), "output name `{o}` must be a relative file name");
        }
        let run = Run::new(&self.out_dir)?;
        for o in outputs {
            run.check_target(o)?;
        }
        Ok(run)
    }

    fn solver(&self, field: &SpeedField, t_max: f64, h: f64) -> Result<LevelSolver> {
        let mut s = LevelSolver::new(field, t_max, h, LEVEL_QUERY_TOL)?;
        s.opts.mem_cap_bytes = self.mem_cap_bytes();
        Ok(s)
    }
}

pub fn dispatch(cmd: &Cmd, ctx: &Ctx) -> Result<(Run, bool)> {
    match cmd {
        Cmd::LppLln(a) => lpp_lln(a, ctx),
        Cmd::TasepSim(a) => tasep_sim(a, ctx),
        Cmd::EnvelopeCheck(a) => envelope_check(a, ctx),
        Cmd::ShapeGrid(a) => shape(a, ctx),
        Cmd::LevelCurve(a) => level(a, ctx),
        Cmd::Hydro(a) => hydro(a, ctx),
        Cmd::Godunov(a) => godunov(a, ctx),
        Cmd::PdeCheck(a) => pde_check(a, ctx),
        Cmd::Compare(a) => compare(a, ctx),
        Cmd::Run(_) => bail!("`run` cannot be nested"),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    ensure!(v > 0.0 && v.is_finite(), "--{name} must be positive and finite, got {v}");
    Ok(())
}

fn ordered(name: &str, p: Pair) -> Result<()> {
    ensure!(p.0 < p.1, "--{name} needs a < b, got {p}");
    Ok(())
}

fn scales(n: &[u64]) -> Result<()> {
    ensure!(!n.is_empty(), "--n needs at least one scale");
    ensure!(n.iter().all(|&k| k > 0), "--n: scales must be positive");
    Ok(())
}

/// `k` equally spaced points on `[a, b]`, ends included.
fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    (0..k).map(|j| if j + 1 == k { b } else { a + (b - a) * j as f64 / (k - 1) as f64 }).collect()
}

fn row(items: &[&dyn ToString]) -> Vec<String> {
    items.iter().map(|i| i.to_string()).collect()
}

fn lpp_lln(a: &LppLln, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    scales(&a.n)?;
    ensure!(a.replicas > 0, "--replicas must be positive");
    ensure!(a.x >= a.start.0 && a.y >= a.start.1, "target ({}, {}) must dominate --start {}", a.x, a.y, a.start);
    let mut run = ctx.open(&[&a.out])?;
    let field = Arc::new(fields.lpp);
    let tables = run.stage("passage", || {
        a.n.par_iter()
            .map(|&n| Ok(lln_estimate(field.clone(), ctx.seed, (a.start.0, a.start.1), (a.x, a.y), &[n], a.replicas)?))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for t in &tables {
        let (_, mean, se) = t.summary[0];
        for r in &t.rows {
            rows.push(row(&[&r.n, &r.replica, &num(r.value), &num(mean), &num(se)]));
        }
    }
    run.write_csv(&a.out, &["n", "replica", "value", "mean", "stderr"], rows)?;
    Ok((run, true))
}

/// Macroscopic window to sites `⌊na⌋ ..= ⌊nb⌋`.
fn sites(n: u64, w: Pair) -> (i64, i64) {
    ((n as f64 * w.0).floor() as i64, (n as f64 * w.1).floor() as i64)
}

fn tasep_sim(a: &TasepSim, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    ensure!(a.n > 0, "--n must be positive");
    positive("t", a.t)?;
    ordered("window", a.window)?;
    ensure!(a.replicas > 0, "--replicas must be positive");
    ensure!(a.snapshots > 0, "--snapshots must be positive");
    let (lo, hi) = sites(a.n, a.window);
    ensure!(hi > lo, "--window covers fewer than two sites at n = {}", a.n);
    ensure!(!a.trace || hi - lo <= TRACE_SITES, "--trace is limited to windows of {TRACE_SITES} sites");
    let events_name = format!("{}_events.csv", a.out.trim_end_matches(".csv"));
    let mut names = vec![a.out.as_str()];
    if a.trace {
        names.push(&events_name);
    }
    let mut run = ctx.open(&names)?;

    let horizon = a.n as f64 * a.t;
    let times: Vec<f64> = (0..=a.snapshots).map(|j| horizon * j as f64 / a.snapshots as f64).collect();
    let field = Arc::new(fields.lpp);
    let results: Vec<(HeightTrajectory, Vec<Event>)> = run.stage("simulate", || {
        (0..a.replicas)
            .into_par_iter()
            .map(|r| {
                let s = replica_seed(ctx.seed, r);
                let env = Environment::new(s, a.n, field.clone())?;
                let rule = init.rule(s);
                // one extra site so every reported site has an occupation
                let traj = evolve(&env, &rule, (lo, hi + 1), horizon, &times).with_context(|| format!("replica {r}"))?;
                let mut events = Vec::new();
                if a.trace {
                    let z0 = init_heights(&rule, a.n, traj.padded.0, traj.padded.1)?;
                    let raw = run_heights(&env, traj.padded.0, &z0, Boundary::Frozen, horizon, &[], true);
                    events = raw.events.into_iter().filter(|e| (lo..=hi).contains(&e.site)).collect();
                }
                Ok((traj, events))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    for (r, (traj, _)) in results.iter().enumerate() {
        for (t, h) in &traj.snapshots {
            let occ = HeightTrajectory::occupations(h);
            for k in 0..=(hi - lo) as usize {
                rows.push(row(&[&r, &num(*t), &(lo + k as i64), &h[k], &occ[k]]));
            }
        }
    }
    run.write_csv(&a.out, &["replica", "time", "site", "height", "occupation"], rows)?;
    if a.trace {
        let rows = results
            .iter()
            .enumerate()
            .flat_map(|(r, (_, ev))| ev.iter().map(move |e| row(&[&r, &num(e.time), &e.site, &e.height])))
            .collect::<Vec<_>>();
        run.write_csv(&events_name, &["replica", "time", "site", "height"], rows)?;
    }
    Ok((run, true))
}

fn envelope_check(a: &EnvelopeCheck, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    ensure!(a.n > 0, "--n must be positive");
    positive("horizon", a.horizon)?;
    ensure!(a.sites.0.fract() == 0.0 && a.sites.1.fract() == 0.0, "--sites must be integers");
    ordered("sites", a.sites)?;
    ensure!(a.seeds > 0, "--seeds must be positive");
    let window = (a.sites.0 as i64, a.sites.1 as i64);
    let mut run = ctx.open(&[&a.out])?;
    let field = Arc::new(fields.lpp);
    let reports = run.stage("envelope", || {
        (0..a.seeds)
            .into_par_iter()
            .map(|r| {
                let s = replica_seed(ctx.seed, r);
                let env = Environment::new(s, a.n, field.clone())?;
                let xi = env.with_seed(if a.decouple { mix64(s ^ 0xdec0_0b1e) } else { s });
                Ok((s, check_envelope(&env, &xi, &init.rule(s), window, a.horizon)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let total: u64 = reports.iter().map(|(_, r)| r.violation_count).sum();
    let passed = if a.decouple { total > 0 } else { reports.iter().all(|(_, r)| r.passed()) };
    let runs: Vec<_> = reports
        .iter()
        .map(|(s, r)| {
            json!({
                "seed": s,
                "checks": r.checks,
                "events": r.events,
                "violations": r.violation_count,
                "inconclusive": r.inconclusive,
                "truncation_mismatches": r.truncation_mismatches,
                "first_violations": r.violations.iter().take(5).map(|v| json!({
                    "time": v.time, "site": v.site, "z": v.z, "envelope": v.envelope, "argmax_anchor": v.argmax_anchor,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let report = json!({
        "check": "envelope",
        "coupled": !a.decouple,
        "n": a.n,
        "sites": [window.0, window.1],
        "horizon": a.horizon,
        "violation_total": total,
        "passed": passed,
        "runs": runs,
    });
    run.write_json(&a.out, &report)?;
    Ok((run, passed))
}

fn shape(a: &ShapeGrid, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    positive("h", a.h)?;
    ensure!(a.extent.0 >= 0.0 && a.extent.1 >= 0.0, "--extent must be nonnegative");
    let mut run = ctx.open(&[&a.out])?;
    let opts = ShapeOptions { max_component: a.max_component, mem_cap_bytes: ctx.mem_cap_bytes(), ..Default::default() };
    let g = run.stage("shape", || Ok(shape_grid(&fields.lpp, [a.start.0, a.start.1], [a.extent.0, a.extent.1], a.h, &opts)?))?;
    let mut rows = Vec::with_capacity((g.ni + 1) * (g.nj + 1));
    for j in 0..=g.nj {
        for i in 0..=g.ni {
            let (u, w) = (g.start[0] + i as f64 * g.h, g.start[1] + j as f64 * g.h);
            rows.push(row(&[&num(u), &num(w), &num(g.node(i, j))]));
        }
    }
    run.write_csv(&a.out, &["u", "w", "gamma"], rows)?;
    Ok((run, true))
}

fn level(a: &LevelCurve, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    positive("t", a.t)?;
    positive("h", a.h)?;
    ordered("xrange", a.xrange)?;
    ensure!(a.samples >= 2, "--samples must be at least 2");
    let mut run = ctx.open(&[&a.out])?;
    let solver = ctx.solver(&fields.lpp, a.t, a.h)?;
    let xs = linspace(a.xrange.0, a.xrange.1, a.samples);
    let curve = run.stage("level", || Ok(level_curve(&solver, a.q, init.v0(a.q), a.t, &xs)?))?;
    let rows = curve.samples.iter().map(|(x, g)| row(&[&num(a.q), &num(a.t), &num(*x), &num(*g)]));
    run.write_csv(&a.out, &["q", "t", "x", "g"], rows)?;
    Ok((run, true))
}

/// `v(x, t)` at every `(t, x)` pair, in parallel.
fn currents(solver: &LevelSolver, init: &Init, ts: &[f64], xs: &[f64]) -> Result<Vec<Profile>> {
    let opts = HydroOptions::default();
    let v0 = |q: f64| init.v0(q);
    let jobs: Vec<(f64, f64)> = ts.iter().flat_map(|&t| xs.iter().map(move |&x| (t, x))).collect();
    let pts: Vec<CurrentPoint> = jobs
        .par_iter()
        .map(|&(t, x)| current_at(solver, &v0, x, t, &opts).with_context(|| format!("v({x}, {t})")))
        .collect::<Result<_>>()?;
    Ok(ts.iter().zip(pts.chunks(xs.len())).map(|(&t, p)| Profile::from_points(t, p)).collect())
}

fn hydro(a: &Hydro, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    positive("t", a.t)?;
    positive("h", a.h)?;
    ordered("xrange", a.xrange)?;
    ensure!(a.samples >= 2, "--samples must be at least 2");
    ensure!(a.times >= 1, "--times must be positive");
    validate_v0(&|q| init.v0(q), a.xrange.0 - 8.0, a.xrange.1 + 8.0, 4096)?;
    let mut run = ctx.open(&[&a.out])?;
    let solver = ctx.solver(&fields.lpp, a.t, a.h)?;
    let xs = linspace(a.xrange.0, a.xrange.1, a.samples);
    let ts: Vec<f64> = (1..=a.times).map(|j| a.t * j as f64 / a.times as f64).collect();
    let profiles = run.stage("envelope", || currents(&solver, &init, &ts, &xs))?;
    let mut rows = Vec::new();
    if a.include_t0 {
        for &x in &xs {
            rows.push(row(&[&0, &num(x), &num(init.v0(x)), &num(init.rho0(x)), &num(x), &ContactCase::Contact0.as_str()]));
        }
    }
    for p in &profiles {
        for k in 0..xs.len() {
            rows.push(row(&[&num(p.t), &num(p.xs[k]), &num(p.v[k]), &num(p.rho[k]), &num(p.qstar[k]), &p.cases[k].as_str()]));
        }
    }
    run.write_csv(&a.out, &["t", "x", "v", "rho", "qstar", "case"], rows)?;
    Ok((run, true))
}

fn godunov(a: &Godunov, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    positive("t", a.t)?;
    positive("dx", a.dx)?;
    ordered("xrange", a.xrange)?;
    ensure!(a.snapshots >= 1, "--snapshots must be positive");
    ensure!(a.cfl > 0.0 && a.cfl <= 1.0, "--cfl must lie in (0, 1]");
    let mesh = Mesh::new(a.xrange.0, a.xrange.1, a.dx)?;
    let mut run = ctx.open(&[&a.out])?;
    let times: Vec<f64> = (0..=a.snapshots).map(|j| a.t * j as f64 / a.snapshots as f64).collect();
    let scheme = match a.scheme {
        SchemeArg::SupplyDemand => Scheme::SupplyDemand,
        SchemeArg::NonConservative => Scheme::NonConservative,
    };
    let opts = GodunovOptions { cfl: a.cfl, dt: None, scheme };
    let g = run.stage("godunov", || Ok(godunov_run(&fields.particle, &|x| init.rho0(x), mesh, a.t, &times, &opts)?))?;
    let mut rows = Vec::with_capacity(g.snapshots.len() * mesh.cells);
    for (t, rho) in &g.snapshots {
        for (k, r) in rho.iter().enumerate() {
            rows.push(row(&[&num(*t), &num(mesh.centre(k)), &num(*r)]));
        }
    }
    run.write_csv(&a.out, &["t", "x", "rho"], rows)?;
    let passed = match scheme {
        Scheme::SupplyDemand => {
            g.mass_defect <= 1e-12 * (mesh.b() - mesh.a).max(1.0) && g.min_rho >= -1e-12 && g.max_rho <= 1.0 + 1e-12
        }
        Scheme::NonConservative => true,
    };
    eprintln!(
        "godunov: {} steps, dt {}, mass defect {:.2e}, range [{}, {}]",
        g.steps, g.dt, g.mass_defect, g.min_rho, g.max_rho
    );
    Ok((run, passed))
}

/// Reads the named columns of a CSV file.
fn read_columns(path: &Path, cols: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let idx = cols
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| anyhow!("{} has no column `{c}`", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::new(); cols.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        for (o, &i) in out.iter_mut().zip(&idx) {
            let v = &rec[i];
            o.push(v.parse().map_err(|_| anyhow!("{} record {}: `{v}` is not a number", path.display(), line + 1))?);
        }
    }
    Ok(out)
}

fn axis(v: &[f64]) -> Vec<f64> {
    let mut a = v.to_vec();
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

/// Tensor grid from `(t, x, value)` columns.
fn read_grid(path: &Path, value: &str) -> Result<SpaceTimeGrid> {
    let c = read_columns(path, &["t", "x", value])?;
    let (ts, xs) = (axis(&c[0]), axis(&c[1]));
    let nx = xs.len();
    let mut values = vec![f64::NAN; ts.len() * nx];
    for ((t, x), v) in c[0].iter().zip(&c[1]).zip(&c[2]) {
        let j = ts.binary_search_by(|s| s.total_cmp(t)).unwrap();
        let i = xs.binary_search_by(|s| s.total_cmp(x)).unwrap();
        values[j * nx + i] = *v;
    }
    ensure!(
        c[0].len() == values.len() && values.iter().all(|v| !v.is_nan()),
        "{} is not a full (t, x) grid",
        path.display()
    );
    SpaceTimeGrid::new(xs, ts, values).with_context(|| path.display().to_string())
}

fn parse_points(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let q: Pair = p.parse().map_err(|e: String| anyhow!("point `{p}`: {e}"))?;
            Ok((q.0, q.1))
        })
        .collect()
}

fn max_step(axis: &[f64]) -> f64 {
    axis.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Grid nodes at least `margin` inside the grid.
fn interior_nodes(g: &SpaceTimeGrid, margin: f64) -> Vec<(f64, f64)> {
    let (x0, x1) = (g.xs[0], *g.xs.last().unwrap());
    let (t0, t1) = (g.ts[0], *g.ts.last().unwrap());
    let mut out = Vec::new();
    for &t in &g.ts {
        for &x in &g.xs {
            if x - margin >= x0 && x + margin <= x1 && t - margin >= t0 && t + margin <= t1 && t > margin {
                out.push((x, t));
            }
        }
    }
    out
}

/// Centres of grid cells at least `margin` inside the grid.
fn cell_midpoints(g: &SpaceTimeGrid, margin: f64) -> Vec<(f64, f64)> {
    let mid = |a: &[f64]| a.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect::<Vec<_>>();
    let (xs, ts) = (mid(&g.xs), mid(&g.ts));
    let (x0, x1, t0, t1) = (g.xs[0], g.xs[g.xs.len() - 1], g.ts[0], g.ts[g.ts.len() - 1]);
    ts.iter()
        .filter(|&&t| t - margin >= t0 && t + margin <= t1 && t > margin)
        .flat_map(|&t| xs.iter().filter(|&&x| x - margin >= x0 && x + margin <= x1).map(move |&x| (x, t)))
        .collect()
}

fn pde_check(a: &PdeCheck, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    positive("tol", a.tol)?;
    if let Some(d) = a.delta {
        positive("delta", d)?;
    }
    let want = if a.mode == Mode::Maxcurrent { 2 } else { 1 };
    ensure!(a.input.len() == want, "--mode {:?} takes {want} input file(s)", a.mode);
    let points = a.points.as_deref().map(parse_points).transpose()?;
    let value = if matches!(a.mode, Mode::Residual | Mode::Viscosity) { "v" } else { "rho" };
    let grids = a.input.iter().map(|p| read_grid(p, value)).collect::<Result<Vec<_>>>()?;
    let tilde = &fields.particle;
    if matches!(a.mode, Mode::Weak | Mode::Maxcurrent) {
        ensure!(tilde.depends_on_first_only(), "--mode {:?} needs a speed that depends on x only", a.mode);
    }
    let mut run = ctx.open(&[&a.out])?;
    let g = &grids[0];
    let report = match a.mode {
        Mode::Residual => {
            let delta = a.delta.unwrap_or(2.0 * max_step(&g.xs).max(max_step(&g.ts)));
            let pts = points.unwrap_or_else(|| interior_nodes(g, delta));
            ensure!(!pts.is_empty(), "no sample points lie a distance {delta} inside the grid");
            let opts = ResidualOptions { delta, ..Default::default() };
            let r = run.stage("residual", || Ok(hj_residual(g, tilde, &pts, &opts)?))?;
            let included = r.points.iter().any(|p| p.class == PointClass::Included);
            let passed = included && r.median <= a.tol && r.excluded_fraction <= a.max_excluded;
            json!({
                "check": "residual",
                "delta": delta,
                "points": r.points.len(),
                "median": r.median,
                "max": r.max,
                "excluded_fraction": r.excluded_fraction,
                "tol": a.tol,
                "passed": passed,
                "samples": r.points.iter().map(|p| json!({
                    "x": p.x, "t": p.t,
                    "class": match p.class {
                        PointClass::Included => "included",
                        PointClass::NotDifferentiable => "not_differentiable",
                        PointClass::FieldDiscontinuous => "field_discontinuous",
                    },
                    "residual": p.residual,
                })).collect::<Vec<_>>(),
            })
        }
        Mode::Viscosity => {
            // inside one cell the interpolant has no kinks of its own
            let cell = max_step(&g.xs).min(max_step(&g.ts));
            let radius = a.delta.unwrap_or(ViscosityOptions::default().radius.min(0.45 * cell));
            let pts = points.unwrap_or_else(|| {
                let all = cell_midpoints(g, radius);
                let stride = all.len().div_ceil(16).max(1);
                all.into_iter().step_by(stride).collect()
            });
            ensure!(!pts.is_empty(), "no sample points lie a distance {radius} inside the grid");
            let opts = ViscosityOptions { radius, tol: a.tol, seed: Some(ctx.seed), ..Default::default() };
            let r = run.stage("viscosity", || Ok(viscosity_spot_check(g, tilde, &pts, &opts)?))?;
            let violations: usize = r.iter().map(|p| p.violations).sum();
            let fin = |v: f64| if v.is_finite() { json!(v) } else { json!(null) };
            json!({
                "check": "viscosity",
                "radius": radius,
                "tol": a.tol,
                "violations": violations,
                "inconclusive": r.iter().filter(|p| p.inconclusive()).count(),
                "passed": violations == 0,
                "samples": r.iter().map(|p| json!({
                    "x": p.x, "t": p.t,
                    "touching_above": p.touching_above, "touching_below": p.touching_below,
                    "worst_sub": fin(p.worst_sub), "worst_super": fin(p.worst_super),
                    "violations": p.violations,
                })).collect::<Vec<_>>(),
            })
        }
        Mode::Weak => {
            let dx = g.xs[1] - g.xs[0];
            ensure!(g.xs.windows(2).all(|w| ((w[1] - w[0]) - dx).abs() <= 1e-9 * dx.max(1.0)), "cell centres must be equally spaced");
            let mesh = Mesh::new(g.xs[0] - 0.5 * dx, g.xs[g.xs.len() - 1] + 0.5 * dx, dx)?;
            let nx = g.xs.len();
            let snaps: Vec<(f64, Vec<f64>)> =
                g.ts.iter().enumerate().map(|(j, &t)| (t, g.values[j * nx..(j + 1) * nx].to_vec())).collect();
            let horizon = *g.ts.last().unwrap();
            let len = mesh.b() - mesh.a;
            let tests: Vec<BumpTest> = match &a.bumps {
                Some(s) => parse_points(s)?.into_iter().map(|(x0, wx)| BumpTest { x0, wx, horizon }).collect(),
                None => [0.25, 0.5, 0.75].iter().map(|f| BumpTest { x0: mesh.a + f * len, wx: len / 8.0, horizon }).collect(),
            };
            let c: Vec<f64> = (0..mesh.cells).map(|k| tilde.eval([mesh.centre(k), 0.0])).collect();
            let defects = run.stage("weak", || Ok(weak_form_check(&snaps, mesh, c, tests.clone())?))?;
            let worst = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            json!({
                "check": "weak",
                "tol": a.tol,
                "max_abs_defect": worst,
                "passed": worst <= a.tol,
                "tests": tests.iter().zip(&defects).map(|(b, d)| json!({"x0": b.x0, "wx": b.wx, "horizon": b.horizon, "defect": d})).collect::<Vec<_>>(),
            })
        }
        Mode::Maxcurrent => {
            let (lam, rho) = (&grids[0], &grids[1]);
            let xs: Vec<f64> = match &a.xs {
                Some(s) => speed::parse_list(s)?,
                None => {
                    let lo = lam.xs[0].max(rho.xs[0]);
                    let hi = lam.xs[lam.xs.len() - 1].min(rho.xs[rho.xs.len() - 1]);
                    ensure!(lo < hi, "the two inputs share no x range");
                    (1..=12).map(|k| lo + (hi - lo) * k as f64 / 13.0).collect()
                }
            };
            let traj = |g: &SpaceTimeGrid| -> Result<Vec<(f64, Vec<f64>)>> {
                lam.ts
                    .iter()
                    .map(|&t| Ok((t, xs.iter().map(|&x| g.value(x, t)).collect::<std::result::Result<Vec<_>, _>>()?)))
                    .collect()
            };
            let (tl, tr) = (traj(lam)?, traj(rho).context("the ρ input must cover the λ input's times and probes")?);
            let cmp = run.stage("maxcurrent", || Ok(maximal_current_check(&tl, &tr, tilde, &xs, a.tol)?))?;
            let holds = cmp.iter().all(|c| c.holds);
            json!({
                "check": "maxcurrent",
                "tol": a.tol,
                "passed": holds,
                "probes": cmp.iter().map(|c| json!({
                    "x": c.x, "lambda_current": c.lambda_current, "rho_current": c.rho_current,
                    "holds": c.holds, "near_equal": c.near_equal,
                })).collect::<Vec<_>>(),
            })
        }
    };
    let passed = report["passed"].as_bool().unwrap_or(false);
    run.write_json(&a.out, &report)?;
    Ok((run, passed))
}

fn compare(a: &Compare, ctx: &Ctx) -> Result<(Run, bool)> {
    let fields = speed::load(&a.speed)?;
    let init = init::parse(&a.init)?;
    scales(&a.n)?;
    ensure!(a.n.windows(2).all(|w| w[0] < w[1]), "--n must be increasing");
    positive("t", a.t)?;
    positive("h", a.h)?;
    positive("bound", a.bound)?;
    ordered("xrange", a.xrange)?;
    ensure!(a.bins >= 1, "--bins must be positive");
    ensure!(a.replicas > 0, "--replicas must be positive");
    let width = (a.xrange.1 - a.xrange.0) / a.bins as f64;
    ensure!(a.n[0] as f64 * width >= 2.0, "bins narrower than two sites at n = {}", a.n[0]);
    let names = [format!("{}_bins.csv", a.out), format!("{}_heights.csv", a.out), format!("{}.json", a.out)];
    let mut run = ctx.open(&names.iter().map(String::as_str).collect::<Vec<_>>())?;

    let edges = linspace(a.xrange.0, a.xrange.1, a.bins + 1);
    let solver = ctx.solver(&fields.lpp, 1.05 * a.t, a.h)?;
    let hyd = run.stage("hydro", || currents(&solver, &init, &[a.t], &edges))?.remove(0);
    let hyd_bins = hyd.bin_density();

    // LLN suite
    let field = Arc::new(fields.lpp.clone());
    let mut bin_rows = Vec::new();
    let mut height_rows = Vec::new();
    let mut lln = Vec::new();
    for &n in &a.n {
        let window = (sites(n, a.xrange).0 - 1, sites(n, a.xrange).1 + 1);
        let s: Vec<i64> = edges.iter().map(|&e| (n as f64 * e).floor() as i64).collect();
        let horizon = n as f64 * a.t;
        let heights: Vec<Vec<i64>> = run.stage(&format!("tasep n={n}"), || {
            (0..a.replicas)
                .into_par_iter()
                .map(|r| {
                    let seed = replica_seed(ctx.seed, r);
                    let env = Environment::new(seed, n, field.clone())?;
                    let traj = evolve(&env, &init.rule(seed), window, horizon, &[horizon])?;
                    let z = &traj.snapshots[0].1;
                    Ok(s.iter().map(|&i| z[(i - window.0) as usize]).collect())
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let reps = a.replicas as f64;
        let nf = n as f64;
        let mut l1 = 0.0;
        for k in 0..a.bins {
            let emp = heights.iter().map(|z| (z[k + 1] - z[k]) as f64 / (s[k + 1] - s[k]) as f64).sum::<f64>() / reps;
            l1 += (emp - hyd_bins[k]).abs() * (edges[k + 1] - edges[k]);
            bin_rows.push(row(&[&n, &num(edges[k]), &num(edges[k + 1]), &num(emp), &num(hyd_bins[k])]));
        }
        let mut dev_sum = 0.0;
        for (k, &x) in edges.iter().enumerate() {
            let mean = heights.iter().map(|z| z[k] as f64 / nf).sum::<f64>() / reps;
            let dev = heights.iter().map(|z| (z[k] as f64 / nf - hyd.v[k]).abs()).sum::<f64>() / reps;
            dev_sum += dev;
            height_rows.push(row(&[&n, &num(x), &num(mean), &num(hyd.v[k]), &num(dev)]));
        }
        lln.push((n, l1, dev_sum / edges.len() as f64));
    }
    let decreasing = lln.windows(2).all(|w| w[1].1 < w[0].1);
    let last = lln.last().unwrap().1;
    let lln_pass = decreasing && (a.trend_only || last <= a.bound);
    let mut suites = serde_json::Map::new();
    suites.insert(
        "lln".into(),
        json!({
            "scales": lln.iter().map(|(n, l1, dev)| json!({"n": n, "density_l1": l1, "mean_height_deviation": dev})).collect::<Vec<_>>(),
            "decreasing": decreasing,
            "bound": if a.trend_only { json!(null) } else { json!(a.bound) },
            "passed": lln_pass,
        }),
    );
    let mut passed = lln_pass;

    if !a.skip_envelope {
        let (n, window, horizon, seeds) = (30u64, (-30i64, 30i64), 5.0, 5u64);
        let reports = run.stage("envelope", || {
            (0..seeds)
                .into_par_iter()
                .map(|r| {
                    let seed = replica_seed(ctx.seed, r);
                    let env = Environment::new(seed, n, field.clone())?;
                    Ok(check_envelope(&env, &env.with_seed(seed), &init.rule(seed), window, horizon)?)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let ok = reports.iter().all(|r| r.passed());
        passed &= ok;
        suites.insert(
            "envelope".into(),
            json!({
                "n": n, "sites": [window.0, window.1], "horizon": horizon, "seeds": seeds,
                "checks": reports.iter().map(|r| r.checks).sum::<u64>(),
                "violations": reports.iter().map(|r| r.violation_count).sum::<u64>(),
                "passed": ok,
            }),
        );
    }

    if !a.skip_pde {
        let tilde = &fields.particle;
        let mut pde_json = serde_json::Map::new();
        let mut ok = true;
        if tilde.depends_on_first_only() {
            let dx = 1.0 / 400.0;
            let ext = ((solver.r_high() * a.t + 1.0) / dx).ceil() * dx;
            let mesh = Mesh::new(a.xrange.0 - ext, a.xrange.1 + ext, dx)?;
            let g = run.stage("godunov", || Ok(godunov_run(tilde, &|x| init.rho0(x), mesh, a.t, &[a.t], &GodunovOptions::default())?))?;
            let rho = &g.snapshots[0].1;
            let mut l1 = 0.0;
            for k in 0..a.bins {
                let cells: Vec<f64> = (0..mesh.cells)
                    .filter(|&c| (edges[k]..edges[k + 1]).contains(&mesh.centre(c)))
                    .map(|c| rho[c])
                    .collect();
                let avg = cells.iter().sum::<f64>() / cells.len().max(1) as f64;
                l1 += (avg - hyd_bins[k]).abs() * (edges[k + 1] - edges[k]);
            }
            let conserved = g.mass_defect <= 1e-12 * (mesh.b() - mesh.a).max(1.0);
            let gk = l1 <= a.bound && conserved;
            ok &= gk;
            pde_json.insert(
                "godunov".into(),
                json!({"dx": dx, "density_l1": l1, "mass_defect": g.mass_defect, "bound": a.bound, "passed": gk}),
            );
        }
        let mut rng = CounterRng::new(ctx.seed, STREAM_AUX);
        let pts: Vec<(f64, f64)> =
            (0..20).map(|_| (rng.range(a.xrange.0, a.xrange.1), rng.range(0.5 * a.t, a.t))).collect();
        let opts = HydroOptions::default();
        let v0 = |q: f64| init.v0(q);
        let v = |x: f64, t: f64| -> std::result::Result<f64, ditasep_core::Error> { Ok(current_at(&solver, &v0, x, t, &opts)?.v) };
        let r = run.stage("residual", || Ok(hj_residual(&v, tilde, &pts, &ResidualOptions { delta: 0.01, ..Default::default() })?))?;
        let included: Vec<f64> = r.points.iter().filter_map(|p| p.residual).collect();
        let med = if included.is_empty() { f64::NAN } else { median(&included) };
        let rk = r.excluded_fraction <= 0.05 && med <= 0.02;
        ok &= rk;
        pde_json.insert(
            "residual".into(),
            json!({"points": r.points.len(), "median": med, "max": r.max, "excluded_fraction": r.excluded_fraction, "passed": rk}),
        );
        pde_json.insert("passed".into(), json!(ok));
        passed &= ok;
        suites.insert("pde".into(), serde_json::Value::Object(pde_json));
    }

    run.write_csv(&names[0], &["n", "x_left", "x_right", "rho_tasep", "rho_hydro"], bin_rows)?;
    run.write_csv(&names[1], &["n", "x", "z_over_n", "v", "abs_deviation"], height_rows)?;
    run.write_json(&names[2], &json!({"check": "compare", "t": a.t, "suites": suites, "passed": passed}))?;
    Ok((run, passed))
}
