//! Checks of the PDE characterisations: Hamilton–Jacobi residuals, a
//! viscosity falsification harness, a supply–demand Godunov scheme for
//! `ρ_t + (c̃(x) ρ(1 − ρ))_x = 0`, the weak form and the maximal-current
//! inequality.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::rng::{CounterRng, STREAM_AUX};
use crate::stats::median;
use crate::{Error, Result, SpeedField};

/// `f(ρ) = ρ(1 − ρ)`.
#[inline]
pub fn flux(rho: f64) -> f64 {
    rho * (1.0 - rho)
}

/// A scalar function of `(x, t)`.
pub trait SpaceTimeField {
    fn value(&self, x: f64, t: f64) -> Result<f64>;
}

impl<F: Fn(f64, f64) -> Result<f64>> SpaceTimeField for F {
    fn value(&self, x: f64, t: f64) -> Result<f64> {
        self(x, t)
    }
}

/// Values on a tensor grid, bilinear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major in `t`.
    pub values: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(xs: Vec<f64>, ts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || ts.is_empty() || values.len() != xs.len() * ts.len() {
            return Err(Error::GridMismatch("space-time grid shape"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch("grid axes must increase"));
        }
        Ok(Self { xs, ts, values })
    }

    pub fn from_field(f: &dyn SpaceTimeField, xs: Vec<f64>, ts: Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(xs.len() * ts.len());
        for &t in &ts {
            for &x in &xs {
                values.push(f.value(x, t)?);
            }
        }
        Self::new(xs, ts, values)
    }

    fn bracket(axis: &[f64], v: f64) -> Option<(usize, f64)> {
        let n = axis.len();
        if n == 1 {
            return if v == axis[0] { Some((0, 0.0)) } else { None };
        }
        if v < axis[0] || v > axis[n - 1] {
            return None;
        }
        let i = axis.partition_point(|&a| a <= v).clamp(1, n - 1) - 1;
        Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
    }
}

impl SpaceTimeField for SpaceTimeGrid {
    fn value(&self, x: f64, t: f64) -> Result<f64> {
        let (i, fx) = Self::bracket(&self.xs, x).ok_or(Error::SupportOutsideDomain)?;
        let (j, ft) = Self::bracket(&self.ts, t).ok_or(Error::SupportOutsideDomain)?;
        let nx = self.xs.len();
        let at = |i: usize, j: usize| self.values[j * nx + i];
        let row = |j: usize| (1.0 - fx) * at(i, j) + fx * at(i + 1, j);
        if self.ts.len() == 1 {
            return Ok(row(0));
        }
        Ok((1.0 - ft) * row(j) + ft * row(j + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    pub delta: f64,
    /// Centred differences at `Δ` and `Δ/2` must agree within this, relative.
    pub rel_tol: f64,
    /// Denominator floor of the relative comparison.
    pub rel_floor: f64,
    /// Envelopes of `c̃` closer than this count as a continuity point.
    pub env_tol: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { delta: 1e-3, rel_tol: 5e-3, rel_floor: 0.1, env_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Included,
    NotDifferentiable,
    FieldDiscontinuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    pub x: f64,
    pub t: f64,
    pub class: PointClass,
    pub v_x: f64,
    pub v_t: f64,
    /// `|v_t + c̃(x, −v)·v_x(1 − v_x)|` on included points.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub points: Vec<ResidualPoint>,
    pub median: f64,
    pub max: f64,
    pub excluded_fraction: f64,
}

fn agree(a: f64, b: f64, opts: &ResidualOptions) -> bool {
    (a - b).abs() <= opts.rel_tol * a.abs().max(b.abs()).max(opts.rel_floor)
}

/// Pointwise residual of `v_t + c̃(x, −v) f(v_x) = 0` at sample points.
pub fn hj_residual(
    v: &dyn SpaceTimeField,
    tilde: &SpeedField,
    points: &[(f64, f64)],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let d = opts.delta;
    let mut out = Vec::with_capacity(points.len());
    for &(x, t) in points {
        if t <= d {
            return Err(invalid("sample point", "t must exceed the difference step"));
        }
        let v0 = v.value(x, t)?;
        let dx = |h: f64| -> Result<f64> { Ok((v.value(x + h, t)? - v.value(x - h, t)?) / (2.0 * h)) };
        let dt = |h: f64| -> Result<f64> { Ok((v.value(x, t + h)? - v.value(x, t - h)?) / (2.0 * h)) };
        let (px1, px2) = (dx(d)?, dx(0.5 * d)?);
        let (pt1, pt2) = (dt(d)?, dt(0.5 * d)?);
        // one-sided slopes differ by O(Δ) at smooth points and by a fixed
        // amount at kinks, which centred differences alone cannot see
        let jump = |h: f64| -> Result<f64> {
            Ok((v.value(x + h, t)? - v0) / h - (v0 - v.value(x - h, t)?) / h)
        };
        let (j1, j2) = (jump(0.5 * d)?, jump(0.25 * d)?);
        let kink = j2.abs() > 0.75 * j1.abs() + opts.rel_tol * px2.abs().max(opts.rel_floor);
        let (lo, hi) = tilde.envelopes([x, -v0]);
        let class = if kink || !(agree(px1, px2, opts) && agree(pt1, pt2, opts)) {
            PointClass::NotDifferentiable
        } else if hi - lo > opts.env_tol {
            PointClass::FieldDiscontinuous
        } else {
            PointClass::Included
        };
        let residual = match class {
            PointClass::Included => Some((pt2 + lo * flux(px2)).abs()),
            _ => None,
        };
        out.push(ResidualPoint { x, t, class, v_x: px2, v_t: pt2, residual });
    }
    let rs: Vec<f64> = out.iter().filter_map(|p| p.residual).collect();
    let excluded = out.len() - rs.len();
    Ok(ResidualReport {
        median: if rs.is_empty() { f64::NAN } else { median(&rs) },
        max: rs.iter().copied().fold(0.0, f64::max),
        excluded_fraction: if out.is_empty() { 0.0 } else { excluded as f64 / out.len() as f64 },
        points: out,
    })
}

/// Quadratic test functions `v(x₀,t₀) + p·dx + q·dt ± (κ/2)(dx² + dt²)`
/// with `(p, q)` on a lattice around the centred-difference slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityOptions {
    /// Touching radius.
    pub radius: f64,
    /// Samples per axis of the touching box.
    pub box_samples: usize,
    /// Lattice half-width and spacing of `(p, q)` offsets.
    pub half_width: i32,
    pub spacing: f64,
    pub kappas: Vec<f64>,
    /// `φ − v` may dip this far below zero and still count as touching.
    pub touch_tol: f64,
    pub tol: f64,
    /// Random jitter of the lattice; `None` keeps it exact.
    pub seed: Option<u64>,
}

impl Default for ViscosityOptions {
    fn default() -> Self {
        Self {
            radius: 5.0 / 400.0,
            box_samples: 9,
            half_width: 10,
            spacing: 0.002,
            kappas: alloc::vec![1.0, 10.0, 100.0, 1000.0],
            touch_tol: 1e-9,
            tol: 0.02,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityPoint {
    pub x: f64,
    pub t: f64,
    pub touching_above: usize,
    pub touching_below: usize,
    /// Worst `φ_t + c̃_low f(φ_x)` over functions touching from above.
    pub worst_sub: f64,
    /// Worst `φ_t + c̃_high f(φ_x)` over functions touching from below.
    pub worst_super: f64,
    pub violations: usize,
}

impl ViscosityPoint {
    pub fn inconclusive(&self) -> bool {
        self.touching_above == 0 && self.touching_below == 0
    }
}

/// Falsification harness for the envelope-selected viscosity inequalities.
pub fn viscosity_spot_check(
    v: &dyn SpaceTimeField,
    tilde: &SpeedField,
    points: &[(f64, f64)],
    opts: &ViscosityOptions,
) -> Result<Vec<ViscosityPoint>> {
    let r = opts.radius;
    let n = opts.box_samples.max(3);
    let mut rng = opts.seed.map(|s| CounterRng::new(s, STREAM_AUX));
    let mut out = Vec::with_capacity(points.len());
    for &(x0, t0) in points {
        if t0 <= r {
            return Err(invalid("sample point", "t must exceed the touching radius"));
        }
        let c0 = v.value(x0, t0)?;
        let (lo, hi) = tilde.envelopes([x0, -c0]);
        let mut samples = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let dx = -r + 2.0 * r * a as f64 / (n - 1) as f64;
                let dt = -r + 2.0 * r * b as f64 / (n - 1) as f64;
                samples.push((dx, dt, v.value(x0 + dx, t0 + dt)? - c0));
            }
        }
        // rays towards the centre, so touching is checked at small scales
        for k in 1..=11 {
            let rr = r * libm::exp2(-(k as f64));
            for (ux, ut) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let (dx, dt) = (rr * ux, rr * ut);
                samples.push((dx, dt, v.value(x0 + dx, t0 + dt)? - c0));
            }
        }
        let p0 = (v.value(x0 + r, t0)? - v.value(x0 - r, t0)?) / (2.0 * r);
        let q0 = (v.value(x0, t0 + r)? - v.value(x0, t0 - r)?) / (2.0 * r);
        let mut pt = ViscosityPoint {
            x: x0,
            t: t0,
            touching_above: 0,
            touching_below: 0,
            worst_sub: f64::NEG_INFINITY,
            worst_super: f64::INFINITY,
            violations: 0,
        };
        let k = opts.half_width;
        for i in -k..=k {
            for j in -k..=k {
                let (mut p, mut q) = (p0 + i as f64 * opts.spacing, q0 + j as f64 * opts.spacing);
                if let Some(g) = rng.as_mut() {
                    p += (g.uniform() - 0.5) * opts.spacing;
                    q += (g.uniform() - 0.5) * opts.spacing;
                }
                for &kappa in &opts.kappas {
                    let lin = |s: &(f64, f64, f64)| p * s.0 + q * s.1;
                    let quad = |s: &(f64, f64, f64)| 0.5 * kappa * (s.0 * s.0 + s.1 * s.1);
                    let above = samples.iter().all(|s| lin(s) + quad(s) - s.2 >= -opts.touch_tol);
                    let below = samples.iter().all(|s| lin(s) - quad(s) - s.2 <= opts.touch_tol);
                    if above {
                        pt.touching_above += 1;
                        let h = q + lo * flux(p);
                        pt.worst_sub = pt.worst_sub.max(h);
                        if h > opts.tol {
                            pt.violations += 1;
                        }
                    }
                    if below {
                        pt.touching_below += 1;
                        let h = q + hi * flux(p);
                        pt.worst_super = pt.worst_super.min(h);
                        if h < -opts.tol {
                            pt.violations += 1;
                        }
                    }
                }
            }
        }
        out.push(pt);
    }
    Ok(out)
}

/// Demand of the cell on the left of an interface.
#[inline]
pub fn demand(rho: f64, c: f64) -> f64 {
    if rho < 0.5 {
        c * flux(rho)
    } else {
        0.25 * c
    }
}

/// Supply of the cell on the right of an interface.
#[inline]
pub fn supply(rho: f64, c: f64) -> f64 {
    if rho > 0.5 {
        c * flux(rho)
    } else {
        0.25 * c
    }
}

#[inline]
pub fn interface_flux(rl: f64, cl: f64, rr: f64, cr: f64) -> f64 {
    demand(rl, cl).min(supply(rr, cr))
}

/// Uniform cells `[a + kΔx, a + (k+1)Δx]`, `k < cells`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub a: f64,
    pub dx: f64,
    pub cells: usize,
}

impl Mesh {
    pub fn new(a: f64, b: f64, dx: f64) -> Result<Self> {
        if !(b > a) || !(dx > 0.0) {
            return Err(invalid("mesh", "need a < b and dx > 0"));
        }
        let cells = libm::round((b - a) / dx) as usize;
        if cells == 0 || ((b - a) / dx - cells as f64).abs() > 1e-6 {
            return Err(invalid("mesh", "dx must divide b − a"));
        }
        Ok(Self { a, dx, cells })
    }

    pub fn centre(&self, k: usize) -> f64 {
        self.a + (k as f64 + 0.5) * self.dx
    }

    pub fn b(&self) -> f64 {
        self.a + self.cells as f64 * self.dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SupplyDemand,
    /// Upwinded primitive form `ρ_t + c̃ f'(ρ) ρ_x = 0`; not conservative
    /// across interfaces. Negative control only.
    NonConservative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GodunovOptions {
    pub cfl: f64,
    /// Requested step; reduced to the CFL limit when too large.
    pub dt: Option<f64>,
    pub scheme: Scheme,
}

impl Default for GodunovOptions {
    fn default() -> Self {
        Self { cfl: 0.5, dt: None, scheme: Scheme::SupplyDemand }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GodunovRun {
    pub mesh: Mesh,
    /// `c̃` per cell, sampled at the centre.
    pub c: Vec<f64>,
    pub rho0: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub dt: f64,
    pub steps: usize,
    /// True when a requested `dt` broke the CFL bound and was reduced.
    pub cfl_adjusted: bool,
    /// Largest per-step `|Δmass + dt·(net outflow)|`.
    pub mass_defect: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

/// Cell averages of `ρ₀` by a 16-point midpoint rule.
pub fn cell_averages(mesh: &Mesh, rho0: &dyn Fn(f64) -> f64) -> Vec<f64> {
    (0..mesh.cells)
        .map(|k| {
            let x0 = mesh.a + k as f64 * mesh.dx;
            (0..16).map(|s| rho0(x0 + (s as f64 + 0.5) * mesh.dx / 16.0)).sum::<f64>() / 16.0
        })
        .collect()
}

pub fn godunov_run(
    tilde: &SpeedField,
    rho0: &dyn Fn(f64) -> f64,
    mesh: Mesh,
    horizon: f64,
    record_times: &[f64],
    opts: &GodunovOptions,
) -> Result<GodunovRun> {
    godunov_run_observed(tilde, rho0, mesh, horizon, record_times, opts, &mut |_, _| {})
}

/// As [`godunov_run`], calling `observer(t, ρ)` at `t = 0` and after every
/// step.
pub fn godunov_run_observed(
    tilde: &SpeedField,
    rho0: &dyn Fn(f64) -> f64,
    mesh: Mesh,
    horizon: f64,
    record_times: &[f64],
    opts: &GodunovOptions,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<GodunovRun> {
    if !tilde.depends_on_first_only() {
        return Err(Error::NotSpatialOnly);
    }
    if !(horizon >= 0.0) {
        return Err(invalid("horizon", "must be nonnegative"));
    }
    if !(opts.cfl > 0.0 && opts.cfl <= 0.5) {
        return Err(invalid("cfl", "must lie in (0, 1/2]"));
    }
    let n = mesh.cells;
    let c: Vec<f64> = (0..n).map(|k| tilde.eval([mesh.centre(k), 0.0])).collect();
    let c_max = c.iter().copied().fold(0.0, f64::max);
    let dt_cfl = opts.cfl * mesh.dx / c_max;
    let (dt, cfl_adjusted) = match opts.dt {
        Some(d) if d > dt_cfl => (dt_cfl, true),
        Some(d) if d > 0.0 => (d, false),
        Some(_) => return Err(invalid("dt", "must be positive")),
        None => (dt_cfl, false),
    };
    let mut rho = cell_averages(&mesh, rho0);
    if rho.iter().any(|r| !(*r >= 0.0 && *r <= 1.0)) {
        return Err(Error::DensityOutOfRange(rho.iter().copied().find(|r| !(*r >= 0.0 && *r <= 1.0)).unwrap()));
    }
    let rho_init = rho.clone();
    let mut record: Vec<f64> = record_times.iter().copied().filter(|&t| t >= 0.0 && t <= horizon).collect();
    record.sort_by(|a, b| a.total_cmp(b));
    let mut snapshots = Vec::new();
    let mut ri = 0;
    while ri < record.len() && record[ri] <= 0.0 {
        snapshots.push((record[ri], rho.clone()));
        ri += 1;
    }
    observer(0.0, &rho);
    let mut t = 0.0;
    let mut steps = 0;
    let mut mass_defect = 0.0f64;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for r in &rho {
        lo = lo.min(*r);
        hi = hi.max(*r);
    }
    let mut f = alloc::vec![0.0; n + 1];
    let mut next = alloc::vec![0.0; n];
    while t < horizon {
        let target = if ri < record.len() { record[ri].min(horizon) } else { horizon };
        let mut h = dt.min(target - t);
        if h <= 0.0 {
            h = dt.min(horizon - t);
        }
        let lam = h / mesh.dx;
        match opts.scheme {
            Scheme::SupplyDemand => {
                for k in 0..=n {
                    let (l, r) = (k.saturating_sub(1), k.min(n - 1));
                    f[k] = interface_flux(rho[l], c[l], rho[r], c[r]);
                }
                for k in 0..n {
                    next[k] = rho[k] - lam * (f[k + 1] - f[k]);
                }
                let m0: f64 = rho.iter().sum::<f64>() * mesh.dx;
                let m1: f64 = next.iter().sum::<f64>() * mesh.dx;
                mass_defect = mass_defect.max((m1 - m0 + h * (f[n] - f[0])).abs());
            }
            Scheme::NonConservative => {
                for k in 0..n {
                    let s = c[k] * (1.0 - 2.0 * rho[k]);
                    let (l, r) = (k.saturating_sub(1), (k + 1).min(n - 1));
                    let grad = if s >= 0.0 { rho[k] - rho[l] } else { rho[r] - rho[k] };
                    next[k] = rho[k] - lam * s * grad;
                }
            }
        }
        core::mem::swap(&mut rho, &mut next);
        t = if (target - (t + h)).abs() <= 1e-12 * target.abs().max(1.0) { target } else { t + h };
        steps += 1;
        for r in &rho {
            lo = lo.min(*r);
            hi = hi.max(*r);
        }
        observer(t, &rho);
        while ri < record.len() && record[ri] <= t {
            snapshots.push((record[ri], rho.clone()));
            ri += 1;
        }
    }
    while ri < record.len() {
        snapshots.push((record[ri], rho.clone()));
        ri += 1;
    }
    Ok(GodunovRun {
        mesh,
        c,
        rho0: rho_init,
        snapshots,
        dt,
        steps,
        cfl_adjusted,
        mass_defect,
        min_rho: lo,
        max_rho: hi,
    })
}

/// `B((x − x₀)/w_x)·B(t/T)` with `B(s) = (1 − s²)²` on `|s| < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpTest {
    pub x0: f64,
    pub wx: f64,
    pub horizon: f64,
}

impl BumpTest {
    fn b(s: f64) -> (f64, f64) {
        if s.abs() >= 1.0 {
            (0.0, 0.0)
        } else {
            let u = 1.0 - s * s;
            (u * u, -4.0 * s * u)
        }
    }

    /// `(φ, φ_x, φ_t)`.
    pub fn eval(&self, x: f64, t: f64) -> (f64, f64, f64) {
        let (bx, dbx) = Self::b((x - self.x0) / self.wx);
        let (bt, dbt) = Self::b(t / self.horizon);
        (bx * bt, dbx / self.wx * bt, bx * dbt / self.horizon)
    }
}

/// Accumulates `∬ (λ φ_t + c̃ f(λ) φ_x) + ∫ ρ₀ φ(·, 0)` from a stream of
/// cell-average snapshots. `φ_x` is integrated exactly over each cell and
/// `φ_t` exactly over each time step, so constant states cancel exactly.
#[derive(Debug, Clone)]
pub struct WeakForm {
    mesh: Mesh,
    c: Vec<f64>,
    tests: Vec<BumpTest>,
    acc: Vec<f64>,
    last: Option<(f64, Vec<f64>)>,
}

impl WeakForm {
    pub fn new(mesh: Mesh, c: Vec<f64>, tests: Vec<BumpTest>) -> Result<Self> {
        if c.len() != mesh.cells {
            return Err(Error::GridMismatch("speed samples vs cells"));
        }
        for t in &tests {
            if t.x0 - t.wx < mesh.a || t.x0 + t.wx > mesh.b() {
                return Err(Error::SupportOutsideDomain);
            }
        }
        let k = tests.len();
        Ok(Self { mesh, c, tests, acc: alloc::vec![0.0; k], last: None })
    }

    /// `Σ_k c_k f(λ_k) (φ(x_{k+½}, t) − φ(x_{k−½}, t))`.
    fn flux_term(&self, test: &BumpTest, t: f64, lam: &[f64]) -> f64 {
        let h = 0.5 * self.mesh.dx;
        lam.iter()
            .enumerate()
            .map(|(k, &l)| {
                let x = self.mesh.centre(k);
                self.c[k] * flux(l) * (test.eval(x + h, t).0 - test.eval(x - h, t).0)
            })
            .sum()
    }

    pub fn observe(&mut self, t: f64, lam: &[f64]) {
        let dx = self.mesh.dx;
        match &self.last {
            None => {
                for (a, test) in self.acc.iter_mut().zip(&self.tests) {
                    *a += lam.iter().enumerate().map(|(k, &l)| l * test.eval(self.mesh.centre(k), 0.0).0).sum::<f64>() * dx;
                }
            }
            Some((t0, prev)) => {
                let h = t - t0;
                for (i, test) in self.tests.iter().enumerate() {
                    let mut s = 0.0;
                    for k in 0..lam.len() {
                        let x = self.mesh.centre(k);
                        s += 0.5 * (prev[k] + lam[k]) * (test.eval(x, t).0 - test.eval(x, *t0).0) * dx;
                    }
                    s += 0.5 * h * (self.flux_term(test, *t0, prev) + self.flux_term(test, t, lam));
                    self.acc[i] += s;
                }
            }
        }
        self.last = Some((t, lam.to_vec()));
    }

    /// Defect per test function. The stream must reach past every test's
    /// time support.
    pub fn defects(&self) -> Result<Vec<f64>> {
        let t_end = self.last.as_ref().map(|l| l.0).unwrap_or(0.0);
        if self.tests.iter().any(|t| t.horizon > t_end + 1e-12) {
            return Err(Error::SupportOutsideDomain);
        }
        Ok(self.acc.clone())
    }
}

/// Weak-form defects of a stored trajectory whose first snapshot is `t = 0`.
pub fn weak_form_check(
    snapshots: &[(f64, Vec<f64>)],
    mesh: Mesh,
    c: Vec<f64>,
    tests: Vec<BumpTest>,
) -> Result<Vec<f64>> {
    if snapshots.first().map(|s| s.0) != Some(0.0) {
        return Err(Error::GridMismatch("trajectory must start at t = 0"));
    }
    let mut wf = WeakForm::new(mesh, c, tests)?;
    for (t, lam) in snapshots {
        if lam.len() != mesh.cells {
            return Err(Error::GridMismatch("snapshot length"));
        }
        wf.observe(*t, lam);
    }
    wf.defects()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentComparison {
    pub x: f64,
    /// `∫₀ᵗ G(x, λ) ds`.
    pub lambda_current: f64,
    /// `∫₀ᵗ G(x, ρ) ds`.
    pub rho_current: f64,
    pub holds: bool,
    pub near_equal: bool,
}

/// Time-integrated currents of two trajectories sampled at the same
/// `(t_k, x_j)`; checks `∫G(x, λ) ≤ ∫G(x, ρ) + tol`.
pub fn maximal_current_check(
    lambda: &[(f64, Vec<f64>)],
    rho: &[(f64, Vec<f64>)],
    tilde: &SpeedField,
    xs: &[f64],
    tol: f64,
) -> Result<Vec<CurrentComparison>> {
    if !tilde.depends_on_first_only() {
        return Err(Error::NotSpatialOnly);
    }
    if lambda.len() != rho.len() || lambda.len() < 2 {
        return Err(Error::GridMismatch("snapshot counts"));
    }
    for (a, b) in lambda.iter().zip(rho) {
        if a.0 != b.0 {
            return Err(Error::GridMismatch("snapshot times"));
        }
        if a.1.len() != xs.len() || b.1.len() != xs.len() {
            return Err(Error::GridMismatch("sample counts"));
        }
    }
    let integrate = |traj: &[(f64, Vec<f64>)], j: usize, c: f64| -> f64 {
        traj.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * c * (flux(w[0].1[j]) + flux(w[1].1[j]))).sum()
    };
    Ok(xs
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let c = tilde.eval([x, 0.0]);
            let (a, b) = (integrate(lambda, j, c), integrate(rho, j, c));
            CurrentComparison { x, lambda_current: a, rho_current: b, holds: a <= b + tol, near_equal: (a - b).abs() <= tol }
        })
        .collect())
}

/// Averages of `ρ` over bins `[e_k, e_{k+1}]` from cell averages; bin edges
/// must fall on cell edges.
pub fn bin_averages(mesh: &Mesh, rho: &[f64], edges: &[f64]) -> Result<Vec<f64>> {
    let idx = |e: f64| -> Result<usize> {
        let k = (e - mesh.a) / mesh.dx;
        let r = libm::round(k);
        if (k - r).abs() > 1e-6 || r < 0.0 || r as usize > mesh.cells {
            return Err(Error::GridMismatch("bin edge off the cell lattice"));
        }
        Ok(r as usize)
    };
    edges
        .windows(2)
        .map(|w| {
            let (a, b) = (idx(w[0])?, idx(w[1])?);
            Ok(rho[a..b].iter().sum::<f64>() / (b - a) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(rl: f64, rr: f64) -> impl Fn(f64) -> f64 {
        move |x| if x <= 0.0 { rl } else { rr }
    }

    #[test]
    fn flux_consistency_and_zero_demand() {
        for c in [0.5, 1.0, 3.0] {
            for k in 0..=20 {
                let r = k as f64 / 20.0;
                assert_eq!(interface_flux(r, c, r, c), c * flux(r));
            }
            assert_eq!(interface_flux(0.0, c, 0.9, 2.0), 0.0);
        }
    }

    #[test]
    fn rarefaction_and_shock() {
        let one = SpeedField::constant(1.0).unwrap();
        let mesh = Mesh::new(-2.0, 2.0, 1.0 / 400.0).unwrap();
        let run = godunov_run(&one, &step(1.0, 0.0), mesh, 1.0, &[1.0], &GodunovOptions::default()).unwrap();
        let rho = &run.snapshots[0].1;
        let l1: f64 = (0..mesh.cells)
            .map(|k| {
                let x = mesh.centre(k);
                let ex = (0.5 * (1.0 - x)).clamp(0.0, 1.0);
                (rho[k] - ex).abs() * mesh.dx
            })
            .sum();
        assert!(l1 <= 0.02, "{l1}");
        assert!(run.mass_defect <= 1e-12);
        assert!(run.min_rho >= 0.0 && run.max_rho <= 1.0);

        let run = godunov_run(&one, &step(0.0, 1.0), mesh, 1.0, &[1.0], &GodunovOptions::default()).unwrap();
        let rho = &run.snapshots[0].1;
        for k in 0..mesh.cells {
            let ex = if mesh.centre(k) < 0.0 { 0.0 } else { 1.0 };
            assert_eq!(rho[k], ex);
        }
    }

    #[test]
    fn cfl_adjusted() {
        let f = SpeedField::xstep(1.0, 3.0, 0.0).unwrap();
        let mesh = Mesh::new(-1.0, 1.0, 0.01).unwrap();
        let opts = GodunovOptions { dt: Some(0.1), ..Default::default() };
        let run = godunov_run(&f, &step(1.0, 0.0), mesh, 0.1, &[], &opts).unwrap();
        assert!(run.cfl_adjusted);
        assert!(run.dt * 3.0 / 0.01 <= 0.5 + 1e-12);
        let general = SpeedField::bump(1.0, 0.5).unwrap();
        assert_eq!(
            godunov_run(&general, &step(1.0, 0.0), mesh, 0.1, &[], &GodunovOptions::default()).unwrap_err(),
            Error::NotSpatialOnly
        );
    }

    #[test]
    fn weak_form_constant_state_vanishes() {
        let mesh = Mesh::new(-1.0, 1.0, 0.01).unwrap();
        let c = alloc::vec![2.0; mesh.cells];
        let test = BumpTest { x0: 0.0, wx: 0.5, horizon: 0.5 };
        let snaps: Vec<(f64, Vec<f64>)> =
            (0..=100).map(|k| (k as f64 * 0.01, alloc::vec![0.3; mesh.cells])).collect();
        let d = weak_form_check(&snaps, mesh, c, alloc::vec![test]).unwrap();
        assert!(d[0].abs() < 1e-12, "{}", d[0]);
    }

    #[test]
    fn residual_on_closed_form_fan() {
        let one = SpeedField::constant(1.0).unwrap();
        let v = |x: f64, t: f64| -> Result<f64> {
            let r = x / t;
            Ok(if r <= -1.0 {
                x
            } else if r >= 1.0 {
                0.0
            } else {
                -t * (1.0 - r) * (1.0 - r) / 4.0
            })
        };
        let pts: Vec<(f64, f64)> = (0..20).map(|k| (-0.9 + 0.09 * k as f64, 1.0)).collect();
        let rep = hj_residual(&v, &one, &pts, &ResidualOptions::default()).unwrap();
        assert_eq!(rep.excluded_fraction, 0.0);
        assert!(rep.max <= 1e-6, "{}", rep.max);

        // standing shock: v = min(x, 0) for ρ₀ = 1{x ≥ 0}... heights with
        // slope 1 on the right
        let w = |x: f64, _t: f64| -> Result<f64> { Ok(x.max(0.0)) };
        let rep = hj_residual(&w, &one, &[(0.0, 1.0)], &ResidualOptions::default()).unwrap();
        assert_eq!(rep.points[0].class, PointClass::NotDifferentiable);
    }

    #[test]
    fn viscosity_inequalities_on_fan() {
        let one = SpeedField::constant(1.0).unwrap();
        let v = |x: f64, t: f64| -> Result<f64> {
            let r = (x / t).clamp(-1.0, 1.0);
            Ok(if x / t <= -1.0 { x } else { -t * (1.0 - r) * (1.0 - r) / 4.0 })
        };
        let rep = viscosity_spot_check(&v, &one, &[(0.2, 1.0), (-1.0, 1.0)], &ViscosityOptions::default()).unwrap();
        for p in &rep {
            assert!(!p.inconclusive());
            assert_eq!(p.violations, 0, "{p:?}");
        }
    }
}
