//! Hydrodynamic current `v(x, t) = sup_q {v₀(q) − g^q(x − q, t)}`, its
//! density, and the Lax–Oleinik control representation used as an
//! independent check.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::shape::{psi, LevelSolver};
use crate::{Error, Result, SpeedField};

/// Tuning of the `q` search.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroOptions {
    /// Approximate number of coarse points over the default search interval.
    /// The spacing is kept when the interval is widened.
    pub coarse: usize,
    /// Refinement rounds around the incumbent.
    pub rounds: usize,
    /// Required distance of the maximiser from the interval ends.
    pub margin: f64,
    /// Hard cap on interval doublings.
    pub max_doublings: u32,
    /// Runner-ups within this of the maximum are reported as ties.
    pub tie_tol: f64,
}

impl Default for HydroOptions {
    fn default() -> Self {
        Self { coarse: 64, rounds: 4, margin: 0.5, max_doublings: 6, tie_tol: 1e-6 }
    }
}

/// Which branch the maximiser's level curve sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactCase {
    Interior,
    /// `g = 0` with `q* ≤ x`.
    Contact0,
    /// `g = q* − x` with `q* ≥ x`.
    Contact1,
}

impl ContactCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContactCase::Interior => "interior",
            ContactCase::Contact0 => "contact0",
            ContactCase::Contact1 => "contact1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentPoint {
    pub x: f64,
    pub v: f64,
    pub qstar: f64,
    pub g: f64,
    pub case: ContactCase,
    /// Other evaluated `q` within `tie_tol` of the maximum.
    pub ties: Vec<f64>,
    /// Search interval actually used.
    pub trunc: (f64, f64),
}

fn pow2_floor(x: f64) -> f64 {
    libm::exp2(libm::floor(libm::log2(x)))
}

fn classify(g: f64, x: f64, q: f64) -> ContactCase {
    let eps = 1e-9;
    if q <= x && g <= eps {
        ContactCase::Contact0
    } else if q >= x && g <= q - x + eps {
        ContactCase::Contact1
    } else {
        ContactCase::Interior
    }
}

/// Maximises `F(q) = v₀(q) − g^q(x − q, t)`.
pub fn current_at(
    solver: &LevelSolver,
    v0: &dyn Fn(f64) -> f64,
    x: f64,
    t: f64,
    opts: &HydroOptions,
) -> Result<CurrentPoint> {
    current_at_with(solver, v0, x, t, opts, default_half_width(solver, t))
}

fn default_half_width(solver: &LevelSolver, t: f64) -> f64 {
    2.0 * (1.0 + solver.r_high()) * t + 1.0
}

/// As [`current_at`] with an explicit initial half-width of the search.
pub fn current_at_with(
    solver: &LevelSolver,
    v0: &dyn Fn(f64) -> f64,
    x: f64,
    t: f64,
    opts: &HydroOptions,
    half_width: f64,
) -> Result<CurrentPoint> {
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let f = |q: f64| -> Result<(f64, f64)> {
        let v0q = v0(q);
        let g = solver.g(q, v0q, x - q, t)?;
        Ok((v0q - g, g))
    };
    // The lattice depends on the scale of the problem only, so a wider
    // interval adds far points without moving the near ones.
    let delta = pow2_floor(2.0 * default_half_width(solver, t) / opts.coarse as f64);
    let mut a = half_width;
    for _ in 0..=opts.max_doublings {
        let (lo, hi) = (x - a, x + a);
        let mut evals: Vec<(f64, f64, f64)> = Vec::new();
        let k0 = libm::ceil(lo / delta) as i64;
        let k1 = libm::floor(hi / delta) as i64;
        for k in k0..=k1 {
            let q = k as f64 * delta;
            let (v, g) = f(q)?;
            evals.push((q, v, g));
        }
        let pick = |evals: &[(f64, f64, f64)]| -> (f64, f64, f64) {
            let top = evals.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            *evals
                .iter()
                .filter(|e| e.1 >= top - 1e-12)
                .min_by(|a, b| (a.0 - x).abs().total_cmp(&(b.0 - x).abs()).then(a.0.total_cmp(&b.0)))
                .unwrap()
        };
        let mut best = pick(&evals);
        let mut step = delta;
        for _ in 0..opts.rounds {
            step *= 0.25;
            let centre = best.0;
            for k in -3i64..=3 {
                let q = centre + k as f64 * step;
                if k == 0 || q < lo || q > hi || evals.iter().any(|e| e.0 == q) {
                    continue;
                }
                let (v, g) = f(q)?;
                evals.push((q, v, g));
            }
            best = pick(&evals);
        }
        if best.0 - lo >= opts.margin && hi - best.0 >= opts.margin {
            let mut ties: Vec<f64> = evals
                .iter()
                .filter(|e| e.0 != best.0 && e.1 >= best.1 - opts.tie_tol)
                .map(|e| e.0)
                .collect();
            ties.sort_by(|a, b| a.total_cmp(b));
            return Ok(CurrentPoint {
                x,
                v: best.1,
                qstar: best.0,
                g: best.2,
                case: classify(best.2, x, best.0),
                ties,
                trunc: (lo, hi),
            });
        }
        a *= 2.0;
    }
    Err(Error::CapReached { what: "truncation interval", limit: a })
}

/// Sampled `v(·, t)` and its density.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub t: f64,
    pub xs: Vec<f64>,
    pub v: Vec<f64>,
    /// Finite-difference density, clamped to `[0, 1]`.
    pub rho: Vec<f64>,
    pub qstar: Vec<f64>,
    pub cases: Vec<ContactCase>,
    pub trunc: Vec<(f64, f64)>,
    /// Largest excursion of the unclamped density outside `[0, 1]`.
    pub rho_excursion: f64,
}

impl Profile {
    /// Assembles a profile from per-`x` results (sorted by `x`).
    pub fn from_points(t: f64, points: &[CurrentPoint]) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
        let v: Vec<f64> = points.iter().map(|p| p.v).collect();
        let (rho, rho_excursion) = density(&xs, &v);
        Self {
            t,
            xs,
            v,
            rho,
            qstar: points.iter().map(|p| p.qstar).collect(),
            cases: points.iter().map(|p| p.case).collect(),
            trunc: points.iter().map(|p| p.trunc).collect(),
            rho_excursion,
        }
    }

    /// Bin averages of the density, `(v(x_{k+1}) − v(x_k)) / (x_{k+1} − x_k)`.
    pub fn bin_density(&self) -> Vec<f64> {
        self.xs.windows(2).zip(self.v.windows(2)).map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0])).collect()
    }
}

/// Centred differences (one-sided at the ends), clamped to `[0, 1]`.
pub fn density(xs: &[f64], v: &[f64]) -> (Vec<f64>, f64) {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    let mut exc = 0.0f64;
    for k in 0..n {
        let (a, b) = if n < 2 {
            (0, 0)
        } else if k == 0 {
            (0, 1)
        } else if k == n - 1 {
            (n - 2, n - 1)
        } else {
            (k - 1, k + 1)
        };
        let r = if a == b { 0.0 } else { (v[b] - v[a]) / (xs[b] - xs[a]) };
        exc = exc.max(-r).max(r - 1.0);
        out.push(r.clamp(0.0, 1.0));
    }
    (out, exc.max(0.0))
}

pub fn current(
    solver: &LevelSolver,
    v0: &dyn Fn(f64) -> f64,
    xs: &[f64],
    t: f64,
    opts: &HydroOptions,
) -> Result<Profile> {
    let pts = xs.iter().map(|&x| current_at(solver, v0, x, t, opts)).collect::<Result<Vec<_>>>()?;
    Ok(Profile::from_points(t, &pts))
}

/// Checks that `v₀` is nondecreasing and 1-Lipschitz on samples of `[a, b]`.
pub fn validate_v0(v0: &dyn Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> Result<()> {
    let mut prev = v0(a);
    for k in 1..=samples {
        let x0 = a + (b - a) * (k - 1) as f64 / samples as f64;
        let x1 = a + (b - a) * k as f64 / samples as f64;
        let v = v0(x1);
        let d = v - prev;
        if d < -1e-12 || d > (x1 - x0) + 1e-12 {
            return Err(invalid("v0", "must be nondecreasing and 1-Lipschitz"));
        }
        prev = v;
    }
    Ok(())
}

/// One maximiser check.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximizerCheck {
    pub x: f64,
    pub case: ContactCase,
    /// `|Γ^{q*}(x − q* + g, g) − t|` for interior cases.
    pub defect: f64,
    pub ok: bool,
}

/// Interior maximisers must lie on the lifted level curve; contact
/// maximisers on the wedge floor.
pub fn maximizer_diagnostics(
    solver: &LevelSolver,
    v0: &dyn Fn(f64) -> f64,
    profile: &Profile,
    tol: f64,
) -> Result<Vec<MaximizerCheck>> {
    let t = profile.t;
    let mut out = Vec::with_capacity(profile.xs.len());
    for k in 0..profile.xs.len() {
        let (x, q) = (profile.xs[k], profile.qstar[k]);
        let v0q = v0(q);
        let g = v0q - profile.v[k];
        let case = profile.cases[k];
        let (defect, ok) = match case {
            ContactCase::Interior => {
                let root = [q - v0q, -v0q];
                let val = solver.gamma_root(root, x - q + g, g)?;
                let d = (val - t).abs();
                (d, d <= tol)
            }
            ContactCase::Contact0 => (g.abs(), g.abs() <= tol && q <= x),
            ContactCase::Contact1 => ((g - (q - x)).abs(), (g - (q - x)).abs() <= tol && q >= x),
        };
        out.push(MaximizerCheck { x, case, defect, ok });
    }
    Ok(out)
}

/// `min_ξ {ξp + c·ψ(ξ/c)}` by a fine scan and golden-section polish.
pub fn fenchel_min(p: f64, c: f64) -> f64 {
    let obj = |xi: f64| xi * p + c * psi(xi / c);
    let (lo, hi) = (-2.0 * c - 1.0, 2.0 * c + 1.0);
    let n = 40_000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=n {
        let xi = lo + (hi - lo) * k as f64 / n as f64;
        let v = obj(xi);
        if v < best.0 {
            best = (v, xi);
        }
    }
    let d = (hi - lo) / n as f64;
    let (mut a, mut b) = (best.1 - d, best.1 + d);
    let phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    for _ in 0..80 {
        let m1 = b - phi * (b - a);
        let m2 = a + phi * (b - a);
        if obj(m1) <= obj(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    best.0.min(obj(0.5 * (a + b)))
}

/// Controls and value of a Lax–Oleinik search.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxOleinikResult {
    pub value: f64,
    /// Piecewise-constant velocities, one per piece.
    pub controls: Vec<f64>,
    /// Durations of the pieces, summing to `t`.
    pub durations: Vec<f64>,
    /// Best value for `m = 1, 2, 4, …` up to the requested size.
    pub ladder: Vec<(usize, f64)>,
}

/// Total substeps of the path integration; divisible by every power of two
/// up to 512 so that refined control families contain the coarser ones.
pub const LO_SUBSTEPS: usize = 512;

/// Value of one control with equal pieces: the path runs from `q` with
/// `w₁' = ξ_k` on piece `k`, ending at `x`; returns `v₀(q) − ∫ c̃ ψ(ξ/c̃)`.
pub fn lax_oleinik_path(tilde: &SpeedField, v0: &dyn Fn(f64) -> f64, x: f64, t: f64, controls: &[f64]) -> f64 {
    let m = controls.len();
    let durations = alloc::vec![t / m as f64; m];
    lax_oleinik_timed(tilde, v0, x, controls, &durations)
}

/// As [`lax_oleinik_path`] with piece `k` lasting `durations[k]`.
pub fn lax_oleinik_timed(
    tilde: &SpeedField,
    v0: &dyn Fn(f64) -> f64,
    x: f64,
    controls: &[f64],
    durations: &[f64],
) -> f64 {
    let q = x - controls.iter().zip(durations).map(|(c, d)| c * d).sum::<f64>();
    if tilde.depends_on_first_only() {
        let cost = PieceCost::new(tilde);
        let mut a = q;
        let mut total = 0.0;
        for (&xi, &d) in controls.iter().zip(durations) {
            let b = a + xi * d;
            total += cost.eval(a, b, d);
            a = b;
        }
        return v0(q) - total;
    }
    let t: f64 = durations.iter().sum();
    let v0q = v0(q);
    let mut w1 = q;
    let mut w2 = -v0q;
    for (&xi, &d) in controls.iter().zip(durations) {
        let per = libm::ceil(LO_SUBSTEPS as f64 * d / t).max(1.0) as usize;
        let ds = d / per as f64;
        for _ in 0..per {
            // midpoint rule in w₁; w₂ enters through c̃(x, y) for general fields
            let xm = w1 + 0.5 * ds * xi;
            let c0 = tilde.eval([xm, w2]);
            let k1 = c0 * psi(xi / c0);
            let c1 = tilde.eval([xm, w2 + 0.5 * ds * k1]);
            w2 += ds * c1 * psi(xi / c1);
            w1 += ds * xi;
        }
    }
    -w2
}

/// Cost `∫ c̃ ψ(ξ/c̃)` of one straight piece for fields of the first
/// coordinate only, split at the straight interfaces so constant regions
/// are integrated exactly.
struct PieceCost<'a> {
    tilde: &'a SpeedField,
    cuts: Vec<f64>,
}

impl<'a> PieceCost<'a> {
    const SUB: usize = 16;

    fn new(tilde: &'a SpeedField) -> Self {
        let mut cuts: Vec<f64> = tilde
            .line_sides()
            .unwrap_or_default()
            .iter()
            .filter(|s| s[1] != 0.0 && s[2].abs() <= 1e-12 * s[1].abs())
            .map(|s| -s[0] / s[1])
            .collect();
        cuts.sort_by(|a, b| a.total_cmp(b));
        Self { tilde, cuts }
    }

    fn eval(&self, a: f64, b: f64, d: f64) -> f64 {
        if a == b {
            return d * self.tilde.eval([a, 0.0]) * psi(0.0);
        }
        if d <= 0.0 {
            // instantaneous jump: free to the right, unit cost to the left
            return (a - b).max(0.0);
        }
        let xi = (b - a) / d;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut total = 0.0;
        let mut u = lo;
        for &z in self.cuts.iter().filter(|&&z| z > lo && z < hi).chain(core::iter::once(&hi)) {
            let w = (z - u) / Self::SUB as f64;
            for s in 0..Self::SUB {
                let c = self.tilde.eval([u + w * (s as f64 + 0.5), 0.0]);
                total += w * c * psi(xi / c);
            }
            u = z;
        }
        total / xi.abs()
    }
}

/// Lower bound on `v(x, t)` from piecewise-constant controls with up to `m`
/// pieces (`m` a power of two up to [`LO_SUBSTEPS`]). Each level starts
/// from the previous optimum, so the ladder is nondecreasing. For fields of
/// the first coordinate only the piece durations are free as well.
pub fn lax_oleinik_value(
    tilde: &SpeedField,
    v0: &dyn Fn(f64) -> f64,
    x: f64,
    t: f64,
    m: usize,
    speed_range: f64,
) -> Result<LaxOleinikResult> {
    if m == 0 || !m.is_power_of_two() || m > LO_SUBSTEPS {
        return Err(invalid("m", "must be a power of two up to 512"));
    }
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let timed = tilde.depends_on_first_only();
    let eval = |c: &[f64]| lax_oleinik_path(tilde, v0, x, t, c);
    // constant controls
    let r = speed_range.max(1.0);
    let n = 800;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=n {
        let xi = -r + 2.0 * r * k as f64 / n as f64;
        let v = eval(&[xi]);
        if v > best.0 {
            best = (v, xi);
        }
    }
    let mut controls = alloc::vec![best.1];
    let mut value = pattern_search(&eval, &mut controls, best.0, 2.0 * r / n as f64);
    let mut ladder = alloc::vec![(1usize, value)];
    let mut path = Waypoints::from_controls(x, t, &controls);
    let mut size = 1;
    while size < m {
        size *= 2;
        controls = controls.iter().flat_map(|&c| [c, c]).collect();
        if timed {
            let cand = waypoint_dp(tilde, v0, x, t, size, r);
            let v = eval(&cand);
            if v > value {
                value = v;
                controls = cand;
            }
        }
        for _ in 0..3 {
            let before = value;
            value = line_scans(&eval, &mut controls, value, r);
            value = pattern_search(&eval, &mut controls, value, 0.25);
            if value <= before {
                break;
            }
        }
        if timed {
            // free breakpoints, from the better of the equal-piece optimum
            // and the previous timed path with every piece halved
            let cost = PieceCost::new(tilde);
            let obj = |w: &Waypoints| w.value(&cost, v0);
            let halved = path.halved();
            let equal = Waypoints::from_controls(x, t, &controls);
            path = if obj(&halved) >= obj(&equal) { halved } else { equal };
            path.refine(&obj, 0.25 * r * t / size as f64);
            value = value.max(obj(&path)).max(ladder.last().unwrap().1);
        }
        ladder.push((size, value));
    }
    let durations = if timed {
        controls = path.controls();
        path.durations()
    } else {
        alloc::vec![t / m as f64; m]
    };
    Ok(LaxOleinikResult { value, controls, durations, ladder })
}

/// Path through `(s_k, y_k)`, `k = 0..=m`, with `s_0 = 0`, `s_m = t` and
/// `y_m = x` held fixed.
#[derive(Clone)]
struct Waypoints {
    s: Vec<f64>,
    y: Vec<f64>,
}

impl Waypoints {
    fn from_controls(x: f64, t: f64, controls: &[f64]) -> Self {
        let m = controls.len();
        let dt = t / m as f64;
        let mut y = alloc::vec![x; m + 1];
        for k in (0..m).rev() {
            y[k] = y[k + 1] - controls[k] * dt;
        }
        let s = (0..=m).map(|k| if k == m { t } else { k as f64 * dt }).collect();
        Self { s, y }
    }

    fn halved(&self) -> Self {
        let m = self.s.len() - 1;
        let mut s = Vec::with_capacity(2 * m + 1);
        let mut y = Vec::with_capacity(2 * m + 1);
        for k in 0..m {
            s.extend([self.s[k], 0.5 * (self.s[k] + self.s[k + 1])]);
            y.extend([self.y[k], 0.5 * (self.y[k] + self.y[k + 1])]);
        }
        s.push(self.s[m]);
        y.push(self.y[m]);
        Self { s, y }
    }

    fn durations(&self) -> Vec<f64> {
        self.s.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn controls(&self) -> Vec<f64> {
        self.s
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(s, y)| {
                let d = s[1] - s[0];
                if d > 0.0 {
                    (y[1] - y[0]) / d
                } else if y[1] == y[0] {
                    0.0
                } else {
                    f64::INFINITY.copysign(y[1] - y[0])
                }
            })
            .collect()
    }

    fn value(&self, cost: &PieceCost, v0: &dyn Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.s.len() - 1 {
            total += cost.eval(self.y[k], self.y[k + 1], self.s[k + 1] - self.s[k]);
        }
        v0(self.y[0]) - total
    }

    /// Compass search over the free waypoints and interior times, singly and
    /// as a waypoint moved together with its time.
    fn refine(&mut self, obj: &dyn Fn(&Waypoints) -> f64, step0: f64) {
        let m = self.s.len() - 1;
        let mut best = obj(self);
        let mut step = step0;
        let mut trial = self.clone();
        while step > 1e-9 {
            let mut improved = false;
            for k in 0..m {
                for (dy, ds) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
                    if ds != 0.0 && k == 0 {
                        continue;
                    }
                    trial.s.copy_from_slice(&self.s);
                    trial.y.copy_from_slice(&self.y);
                    trial.y[k] += dy * step;
                    if k > 0 {
                        let sk = (self.s[k] + ds * step).clamp(self.s[k - 1], self.s[k + 1]);
                        trial.s[k] = sk;
                    }
                    let v = obj(&trial);
                    if v > best {
                        best = v;
                        self.s.copy_from_slice(&trial.s);
                        self.y.copy_from_slice(&trial.y);
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }
}

/// For fields depending on the first coordinate only the cost of a piece
/// depends on its end positions alone; minimise over waypoints on a lattice
/// containing the origin and `x`.
fn waypoint_dp(tilde: &SpeedField, v0: &dyn Fn(f64) -> f64, x: f64, t: f64, m: usize, r: f64) -> Vec<f64> {
    let dt = t / m as f64;
    let span = r * t;
    let delta = pow2_floor(2.0 * span / 320.0);
    let k0 = libm::ceil((x - span) / delta) as i64;
    let k1 = libm::floor((x + span) / delta) as i64;
    let mut ys: Vec<f64> = (k0..=k1).map(|k| k as f64 * delta).collect();
    if !ys.contains(&x) {
        ys.push(x);
        ys.sort_by(|a, b| a.total_cmp(b));
    }
    let n = ys.len();
    let sub = 16;
    let piece = |a: f64, b: f64| -> f64 {
        let xi = (b - a) / dt;
        let mut acc = 0.0;
        for s in 0..sub {
            let c = tilde.eval([a + (b - a) * (s as f64 + 0.5) / sub as f64, 0.0]);
            acc += c * psi(xi / c);
        }
        acc * dt / sub as f64
    };
    let table: Vec<f64> = (0..n * n).map(|ab| piece(ys[ab / n], ys[ab % n])).collect();
    let ix = ys.iter().position(|&y| y == x).unwrap();
    // cost[k][a]: cheapest from waypoint a at piece boundary k to x at the end
    let mut cost = alloc::vec![f64::INFINITY; n];
    cost[ix] = 0.0;
    let mut next = alloc::vec![alloc::vec![0usize; n]; m];
    for k in (0..m).rev() {
        let mut c2 = alloc::vec![f64::INFINITY; n];
        for a in 0..n {
            for b in 0..n {
                let v = table[a * n + b] + cost[b];
                if v < c2[a] {
                    c2[a] = v;
                    next[k][a] = b;
                }
            }
        }
        cost = c2;
    }
    let start = (0..n)
        .max_by(|&a, &b| (v0(ys[a]) - cost[a]).total_cmp(&(v0(ys[b]) - cost[b])))
        .unwrap();
    let mut out = Vec::with_capacity(m);
    let mut a = start;
    for k in 0..m {
        let b = next[k][a];
        out.push((ys[b] - ys[a]) / dt);
        a = b;
    }
    out
}

/// Global scans along single coordinates and along pairs that keep the
/// start point fixed. These reach controls that pause on an interface, which
/// local moves from a constant control do not.
fn line_scans(eval: &dyn Fn(&[f64]) -> f64, c: &mut Vec<f64>, mut best: f64, r: f64) -> f64 {
    let m = c.len();
    let n = 200;
    let grid: Vec<f64> = (0..=n).map(|k| -r + 2.0 * r * k as f64 / n as f64).collect();
    let mut trial = c.clone();
    for i in 0..m {
        for &g in &grid {
            trial.copy_from_slice(c);
            trial[i] = g;
            let v = eval(&trial);
            if v > best {
                best = v;
                c.copy_from_slice(&trial);
            }
        }
        for j in 0..m {
            if j == i {
                continue;
            }
            let sum = c[i] + c[j];
            for &g in &grid {
                trial.copy_from_slice(c);
                trial[i] = g;
                trial[j] = sum - g;
                let v = eval(&trial);
                if v > best {
                    best = v;
                    c.copy_from_slice(&trial);
                }
            }
        }
    }
    best
}

/// Coordinate and pairwise compass search, maximising.
fn pattern_search(eval: &dyn Fn(&[f64]) -> f64, c: &mut Vec<f64>, mut best: f64, step0: f64) -> f64 {
    let m = c.len();
    let mut step = step0;
    let mut trial = c.clone();
    while step > 1e-7 {
        let mut improved = false;
        for i in 0..m {
            for s in [step, -step] {
                trial.copy_from_slice(c);
                trial[i] += s;
                let v = eval(&trial);
                if v > best {
                    best = v;
                    c.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        // moves that keep the endpoint q fixed
        for i in 0..m {
            for j in i + 1..m {
                for s in [step, -step] {
                    trial.copy_from_slice(c);
                    trial[i] += s;
                    trial[j] -= s;
                    let v = eval(&trial);
                    if v > best {
                        best = v;
                        c.copy_from_slice(&trial);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_v0(q: f64) -> f64 {
        q.min(0.0)
    }

    #[test]
    fn homogeneous_fan_values() {
        let c = SpeedField::constant(1.0).unwrap();
        let s = LevelSolver::new(&c, 1.0, 0.01, 1e-9).unwrap();
        let p = current_at(&s, &step_v0, 0.0, 1.0, &HydroOptions::default()).unwrap();
        assert!((p.v + 0.25).abs() < 1e-12, "{}", p.v);
        assert_eq!(p.qstar, 0.0);
        assert_eq!(p.case, ContactCase::Interior);
        let xs: Vec<f64> = (0..=40).map(|k| -1.0 + k as f64 / 20.0).collect();
        let prof = current(&s, &step_v0, &xs, 1.0, &HydroOptions::default()).unwrap();
        for (x, r) in prof.xs.iter().zip(&prof.rho).skip(1).take(39) {
            assert!((r - 0.5 * (1.0 - x)).abs() < 1e-9, "{x} {r}");
        }
    }

    #[test]
    fn empty_and_full_systems() {
        let c = SpeedField::constant(1.0).unwrap();
        let s = LevelSolver::new(&c, 1.0, 0.01, 1e-9).unwrap();
        let zero = |_: f64| 0.0;
        let p = current_at(&s, &zero, 0.3, 1.0, &HydroOptions::default()).unwrap();
        assert_eq!(p.v, 0.0);
        assert_eq!(p.case, ContactCase::Contact0);
        let full = |q: f64| q;
        let p = current_at(&s, &full, -2.0, 1.0, &HydroOptions::default()).unwrap();
        assert!((p.v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_time_close_to_datum() {
        let c = SpeedField::xstep(1.0, 3.0, 0.0).unwrap().unshear();
        let s = LevelSolver::new(&c, 0.05, 1.0 / 64.0, 1e-9).unwrap();
        for x in [-0.5, 0.0, 0.4] {
            let p = current_at(&s, &step_v0, x, 0.05, &HydroOptions::default()).unwrap();
            assert!((p.v - step_v0(x)).abs() <= 2.0 * 0.05 * 3.0);
        }
    }

    #[test]
    fn fenchel_identity() {
        for c in [0.5, 1.0, 3.0] {
            for k in 0..=10 {
                let p = k as f64 / 10.0;
                assert!((fenchel_min(p, c) - c * p * (1.0 - p)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn lax_oleinik_homogeneous() {
        let c = SpeedField::constant(1.0).unwrap();
        let r = lax_oleinik_value(&c, &step_v0, 0.0, 1.0, 4, 4.0).unwrap();
        assert!((r.value + 0.25).abs() < 1e-3, "{}", r.value);
        assert!(r.ladder.windows(2).all(|w| w[1].1 >= w[0].1));
        // a single constant control is a lower bound
        let still = lax_oleinik_path(&c, &step_v0, 0.3, 1.0, &[0.0]);
        assert!((still + 0.25).abs() < 1e-12);
        let r = lax_oleinik_value(&c, &step_v0, 0.3, 1.0, 2, 4.0).unwrap();
        assert!(still <= r.value);
        // exact: v = −(1 − x)²/4
        assert!((r.value + 0.49 / 4.0).abs() < 1e-3, "{}", r.value);
    }
}
