//! Acceptance run: one pass/fail line per criterion. Pass criterion numbers
//! as arguments to run a subset.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use ditasep_core::hydro::{self, current_at, lax_oleinik_value, HydroOptions};
use ditasep_core::lpp::{lln_estimate, passage_rect, Environment, DEFAULT_MEM_CAP};
use ditasep_core::pde::{
    bin_averages, godunov_run, hj_residual, maximal_current_check, GodunovOptions, Mesh, ResidualOptions,
};
use ditasep_core::rng::{replica_seed, CounterRng, STREAM_AUX};
use ditasep_core::shape::{gamma, psi, shape_closed_form, shape_grid, subadditivity_case, LevelSolver, ShapeOptions};
use ditasep_core::tasep::{check_envelope, evolve, DensityProfile, InitRule};
use ditasep_core::{Result, SpeedField};

struct Outcome {
    pass: bool,
    detail: String,
}

struct Ctx {
    two_phase: LevelSolver,
    homogeneous: LevelSolver,
}

fn tilde_two_phase() -> SpeedField {
    SpeedField::xstep(1.0, 3.0, 0.0).unwrap()
}

fn step_v0(q: f64) -> f64 {
    q.min(0.0)
}

fn step_rho0(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn c1(_: &Ctx) -> Result<Outcome> {
    let f = Arc::new(SpeedField::constant(1.0)?);
    let tab = lln_estimate(f, 20_240_601, (0.0, 0.0), (1.0, 1.0), &[2000], 10)?;
    let (_, mean, se) = tab.summary[0];
    let rel = (mean - 4.0).abs() / 4.0;
    Ok(Outcome { pass: rel <= 0.02, detail: format!("mean G/n = {mean:.4} ± {se:.4}, relative error {rel:.4} (tol 0.02)") })
}

fn c2(_: &Ctx) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for k in 0..=200 {
        let x = -1.0 + k as f64 / 100.0;
        worst = worst.max((gamma(x + psi(x), psi(x))? - 1.0).abs());
    }
    Ok(Outcome { pass: worst <= 1e-12, detail: format!("max |γ(x+ψ(x), ψ(x)) − 1| = {worst:.2e} over 201 points") })
}

fn c3(_: &Ctx) -> Result<Outcome> {
    let c = Arc::new(tilde_two_phase().unshear());
    let (mut viol, mut checks, mut inconclusive, mut trunc, mut events) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for seed in 0..100u64 {
        let env = Environment::new(seed, 30, c.clone())?;
        let rule = InitRule::Bernoulli { profile: DensityProfile::Constant(0.5), seed: seed + 1000 };
        let rep = check_envelope(&env, &env, &rule, (-30, 30), 5.0)?;
        viol += rep.violation_count;
        checks += rep.checks;
        inconclusive += rep.inconclusive;
        trunc += rep.truncation_mismatches;
        events += rep.events;
    }
    // decoupled clocks must be caught
    let env = Environment::new(7, 30, c.clone())?;
    let rule = InitRule::Bernoulli { profile: DensityProfile::Constant(0.5), seed: 1007 };
    let control = check_envelope(&env, &env.with_seed(99_999), &rule, (-30, 30), 5.0)?;
    Ok(Outcome {
        pass: viol == 0 && trunc == 0 && control.violation_count > 0,
        detail: format!(
            "100 seeds: {viol} violations, {trunc} truncation mismatches, {checks} site checks, {events} events, {inconclusive} inconclusive; decoupled control: {} violations",
            control.violation_count
        ),
    })
}

fn c4(_: &Ctx) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for c0 in [0.5, 1.0, 3.0] {
        let field = SpeedField::constant(c0)?;
        let mut errs = Vec::new();
        for h in [1.0 / 100.0, 1.0 / 200.0] {
            let g = shape_grid(&field, [0.0, 0.0], [2.0, 2.0], h, &ShapeOptions::default())?;
            let mut worst = 0.0f64;
            for j in 0..=g.nj {
                for i in 0..=g.ni {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let exact = shape_closed_form(c0, i as f64 * h, j as f64 * h);
                    worst = worst.max((g.node(i, j) - exact).abs() / exact);
                }
            }
            errs.push(worst);
        }
        let ratio = errs[1] / errs[0];
        let ok = errs[1] <= 0.02 && (0.35..=0.65).contains(&ratio);
        pass &= ok;
        parts.push(format!("c0={c0}: {:.2e} → {:.2e} (ratio {ratio:.2})", errs[0], errs[1]));
    }
    Ok(Outcome { pass, detail: format!("relative sup error h=1/100 → 1/200: {}", parts.join("; ")) })
}

/// Replica-averaged binned density at time `n` for the homogeneous step.
fn tasep_bins(n: u64, replicas: u64, edges: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let field = Arc::new(SpeedField::constant(1.0)?);
    let rule = InitRule::Deterministic(DensityProfile::Riemann { left: 1.0, right: 0.0 });
    let ni = n as i64;
    let window = (-ni - 1, ni + 1);
    let sites: Vec<i64> = edges.iter().map(|e| (e * n as f64).floor() as i64).collect();
    let mut acc = vec![0.0; edges.len() - 1];
    for r in 0..replicas {
        let env = Environment::new(replica_seed(5150, r), n, field.clone())?;
        let traj = evolve(&env, &rule, window, n as f64, &[n as f64])?;
        let z = &traj.snapshots[0].1;
        let at = |i: i64| z[(i - window.0) as usize];
        for k in 0..acc.len() {
            let (a, b) = (sites[k], sites[k + 1]);
            acc[k] += (at(b) - at(a)) as f64 / (b - a) as f64 / replicas as f64;
        }
    }
    let exact = (0..acc.len())
        .map(|k| {
            let mid = (sites[k] + sites[k + 1]) as f64 / (2.0 * n as f64);
            (0.5 * (1.0 - mid)).clamp(0.0, 1.0)
        })
        .collect();
    Ok((acc, exact))
}

fn c5(_: &Ctx) -> Result<Outcome> {
    let edges: Vec<f64> = (0..=40).map(|k| -1.0 + 0.05 * k as f64).collect();
    let mut errs = Vec::new();
    for n in [250u64, 500, 1000] {
        let (emp, exact) = tasep_bins(n, 20, &edges)?;
        let l1: f64 = emp.iter().zip(&exact).map(|(a, b)| (a - b).abs() * 0.05).sum();
        errs.push((n, l1));
    }
    let monotone = errs.windows(2).all(|w| w[1].1 < w[0].1);
    let last = errs[2].1;
    Ok(Outcome {
        pass: monotone && last <= 0.05,
        detail: format!(
            "L¹ of replica-averaged bins: {} (monotone: {monotone}, tol 0.05 at n=1000)",
            errs.iter().map(|(n, e)| format!("n={n}: {e:.4}")).collect::<Vec<_>>().join(", ")
        ),
    })
}

fn c6(ctx: &Ctx) -> Result<Outcome> {
    let opts = HydroOptions::default();
    let mut worst = [0.0f64; 2];
    let mut ladder_ok = true;
    let mut rng = CounterRng::new(606, STREAM_AUX);
    for (f, (solver, tilde, xr)) in [
        (&ctx.homogeneous, SpeedField::constant(1.0)?, (-1.5, 1.5)),
        (&ctx.two_phase, tilde_two_phase(), (-1.5, 3.5)),
    ]
    .into_iter()
    .enumerate()
    {
        let speed = 2.0 * solver.r_high() + 2.0;
        for _ in 0..20 {
            let x = rng.range(xr.0, xr.1);
            let t = rng.range(0.25, 1.0);
            let env = current_at(solver, &step_v0, x, t, &opts)?.v;
            let lo = lax_oleinik_value(&tilde, &step_v0, x, t, 8, speed)?;
            ladder_ok &= lo.ladder.windows(2).all(|w| w[1].1 >= w[0].1);
            worst[f] = worst[f].max((env - lo.value).abs());
        }
    }
    Ok(Outcome {
        pass: worst[0] <= 0.02 && worst[1] <= 0.02 && ladder_ok,
        detail: format!(
            "max |envelope − Lax–Oleinik| over 20 points: homogeneous {:.2e}, two-phase {:.2e} (tol 0.02, m=8); ladder nondecreasing: {ladder_ok}",
            worst[0], worst[1]
        ),
    })
}

fn c7(ctx: &Ctx) -> Result<Outcome> {
    let opts = HydroOptions::default();
    let mut rng = CounterRng::new(707, STREAM_AUX);
    let one = SpeedField::constant(1.0)?;
    let hv = |x: f64, t: f64| -> Result<f64> { Ok(current_at(&ctx.homogeneous, &step_v0, x, t, &opts)?.v) };
    let pts: Vec<(f64, f64)> = (0..100)
        .map(|_| {
            let t = rng.range(0.5, 1.0);
            (rng.range(-0.9, 0.9) * t, t)
        })
        .collect();
    let hom = hj_residual(&hv, &one, &pts, &ResidualOptions::default())?;

    let tilde = tilde_two_phase();
    let assumptions = ctx.two_phase.field().assumption_report();
    let tv = |x: f64, t: f64| -> Result<f64> { Ok(current_at(&ctx.two_phase, &step_v0, x, t, &opts)?.v) };
    let pts: Vec<(f64, f64)> = (0..100).map(|_| (rng.range(-1.5, 3.5), rng.range(0.5, 1.0))).collect();
    let two = hj_residual(&tv, &tilde, &pts, &ResidualOptions { delta: 0.01, ..Default::default() })?;
    Ok(Outcome {
        pass: hom.median <= 0.02 && assumptions.ok() && two.excluded_fraction <= 0.05,
        detail: format!(
            "homogeneous fan: median {:.2e}, max {:.2e}, excluded {:.0}%; two-phase (assumptions ok: {}): excluded {:.0}%, median {:.2e}",
            hom.median,
            hom.max,
            100.0 * hom.excluded_fraction,
            assumptions.ok(),
            100.0 * two.excluded_fraction,
            two.median
        ),
    })
}

fn c8(ctx: &Ctx) -> Result<Outcome> {
    let opts = HydroOptions::default();
    let mesh = Mesh::new(-2.0, 4.0, 1.0 / 400.0)?;
    let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let edges: Vec<f64> = (0..=100).map(|k| -1.5 + 0.05 * k as f64).collect();
    let probes = [-0.9, -0.6, -0.3, -0.1, 0.1, 0.3, 0.7, 1.2, 1.8, 2.3, 2.7, 2.95];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, solver, tilde) in
        [("homogeneous", &ctx.homogeneous, SpeedField::constant(1.0)?), ("two-phase", &ctx.two_phase, tilde_two_phase())]
    {
        let run = godunov_run(&tilde, &step_rho0, mesh, 1.0, &times, &GodunovOptions::default())?;
        let g_bins = bin_averages(&mesh, &run.snapshots.last().unwrap().1, &edges)?;
        let pts = edges.iter().map(|&x| current_at(solver, &step_v0, x, 1.0, &opts)).collect::<Result<Vec<_>>>()?;
        let prof = hydro::Profile::from_points(1.0, &pts);
        let l1: f64 = prof.bin_density().iter().zip(&g_bins).map(|(a, b)| (a - b).abs() * 0.05).sum();

        let cell = |x: f64| ((x - mesh.a) / mesh.dx).floor() as usize;
        let lam: Vec<(f64, Vec<f64>)> =
            run.snapshots.iter().map(|(t, r)| (*t, probes.iter().map(|&x| r[cell(x)]).collect())).collect();
        let d = 0.01;
        let mut rho = Vec::new();
        for &t in &times {
            let row = if t == 0.0 {
                probes.iter().map(|&x| step_rho0(x)).collect()
            } else {
                probes
                    .iter()
                    .map(|&x| {
                        let a = current_at(solver, &step_v0, x - d, t, &opts)?.v;
                        let b = current_at(solver, &step_v0, x + d, t, &opts)?.v;
                        Ok(((b - a) / (2.0 * d)).clamp(0.0, 1.0))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            rho.push((t, row));
        }
        let cmp = maximal_current_check(&lam, &rho, &tilde, &probes, 0.02)?;
        let holds = cmp.iter().all(|c| c.holds);
        let near = cmp.iter().filter(|c| c.near_equal).count();
        let (worst, worst_x) = cmp
            .iter()
            .map(|c| (c.lambda_current - c.rho_current, c.x))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        pass &= l1 <= 0.05 && holds && run.mass_defect <= 1e-12;
        parts.push(format!(
            "{name}: L¹ {l1:.4}, current inequality holds at {}/{} x (max λ−ρ excess {worst:.2e} at x={worst_x}, near-equal {near})",
            cmp.iter().filter(|c| c.holds).count(),
            cmp.len()
        ));
    }
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn c9(ctx: &Ctx) -> Result<Outcome> {
    let mut rng = CounterRng::new(909, STREAM_AUX);
    let mut parts = Vec::new();

    // superadditivity of passage times; v is counted once
    let c = Arc::new(tilde_two_phase().unshear());
    let env = Environment::new(4242, 40, c)?;
    let mut sup_viol = 0;
    for _ in 0..500 {
        let u = (rng.range(-40.0, 0.0) as i64, rng.range(-40.0, 0.0) as i64);
        let v = (u.0 + rng.range(0.0, 30.0) as i64, u.1 + rng.range(0.0, 30.0) as i64);
        let w = (v.0 + rng.range(0.0, 30.0) as i64, v.1 + rng.range(0.0, 30.0) as i64);
        let from_u = passage_rect(&env, u, ((w.0 - u.0) as usize, (w.1 - u.1) as usize), DEFAULT_MEM_CAP)?;
        let from_v = passage_rect(&env, v, ((w.0 - v.0) as usize, (w.1 - v.1) as usize), DEFAULT_MEM_CAP)?;
        let guw = from_u.get(w.0, w.1).unwrap();
        let guv = from_u.get(v.0, v.1).unwrap();
        let gvw = from_v.get(w.0, w.1).unwrap();
        if guw < guv + gvw - env.weight(v.0, v.1) - 1e-9 * guw.abs().max(1.0) {
            sup_viol += 1;
        }
    }
    parts.push(format!("superadditivity 500 triples: {sup_viol} violations"));

    // level-curve monotonicity and lifted equality
    let solver = &ctx.two_phase;
    let (mut mono_viol, mut lift_viol, mut lifted) = (0, 0, 0);
    for _ in 0..100 {
        let q = rng.range(-1.0, 1.0);
        let v0q = step_v0(q);
        let x = rng.range(-1.5, 1.5);
        let t = rng.range(0.2, 1.0);
        let d = 0.05;
        let g = solver.g(q, v0q, x, t)?;
        if g < solver.g(q, v0q, x + d, t)? - 1e-3 || g > solver.g(q, v0q, x, t + d)? + 1e-3 || g < (-x).max(0.0) {
            mono_viol += 1;
        }
        if g > (-x).max(0.0) + 1e-3 {
            lifted += 1;
            if (solver.gamma_root([q - v0q, -v0q], x + g, g)? - t).abs() > 1e-3 {
                lift_viol += 1;
            }
        }
    }
    parts.push(format!(
        "level curves 100 queries: {mono_viol} monotonicity violations, {lift_viol}/{lifted} lifted-equality violations"
    ));

    // subadditivity of level curves
    let sub_tol = 5e-3;
    let (mut sub_viol, mut worst) = (0, f64::INFINITY);
    for _ in 0..50 {
        let q0 = rng.range(-1.0, 1.0);
        let q = q0 + rng.range(-0.5, 1.0);
        let x = q + rng.range(-1.0, 1.0);
        let t = rng.range(0.3, 1.0);
        let s = t * rng.range(0.1, 0.9);
        let case = subadditivity_case(solver, &step_v0, q0, q, x, t, s)?;
        worst = worst.min(case.slack);
        if case.slack < -sub_tol {
            sub_viol += 1;
        }
    }
    parts.push(format!("subadditivity 50 configurations: {sub_viol} violations beyond {sub_tol:.0e} (min slack {worst:.2e})"));

    let mut fench = 0.0f64;
    for c in [0.5, 1.0, 3.0] {
        for k in 0..=10 {
            let p = k as f64 / 10.0;
            fench = fench.max((hydro::fenchel_min(p, c) - c * p * (1.0 - p)).abs());
        }
    }
    parts.push(format!("Fenchel max error {fench:.1e}"));

    let mesh = Mesh::new(-2.0, 4.0, 1.0 / 400.0)?;
    let two = |x: f64| if x <= -0.5 { 0.8 } else if x <= 1.0 { 0.3 } else { 0.6 };
    let run = godunov_run(&tilde_two_phase(), &two, mesh, 1.0, &[1.0], &GodunovOptions::default())?;
    parts.push(format!(
        "Godunov mass defect {:.1e}/step, range [{:.3}, {:.3}]",
        run.mass_defect, run.min_rho, run.max_rho
    ));
    let pass = sup_viol == 0
        && mono_viol == 0
        && lift_viol == 0
        && sub_viol == 0
        && fench <= 1e-6
        && run.mass_defect <= 1e-12
        && run.min_rho >= 0.0
        && run.max_rho <= 1.0;
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ctx = Ctx {
        two_phase: LevelSolver::new(&tilde_two_phase().unshear(), 1.05, 1.0 / 64.0, 1e-9).unwrap(),
        homogeneous: LevelSolver::new(&SpeedField::constant(1.0).unwrap(), 1.05, 1.0 / 64.0, 1e-9).unwrap(),
    };
    let criteria: [(&str, fn(&Ctx) -> Result<Outcome>); 9] = [
        ("1 homogeneous LPP law of large numbers", c1),
        ("2 level-set identity", c2),
        ("3 exact envelope identity", c3),
        ("4 grid shape solver vs closed form", c4),
        ("5 hydrodynamic convergence", c5),
        ("6 envelope vs Lax–Oleinik", c6),
        ("7 Hamilton–Jacobi residual", c7),
        ("8 maximal-current identification", c8),
        ("9 property suites", c9),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(k + 1)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f(&ctx) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
