//! Piecewise-continuous speed functions `c(u, w)` with discontinuities along
//! lines and monotone graphs.
//!
//! A field is a partition of the plane into open regions cut out by sign
//! tests against a finite list of curves; each region carries a continuous
//! value rule. On a curve the value is the minimum over all adjacent regions,
//! which makes the field lower semicontinuous.
//!
//! Fields are immutable. Shear, unshear and shift are affine changes of the
//! query coordinates and share the underlying definition.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use spin::Mutex;

use crate::error::invalid;
use crate::{Error, Result};

/// Absolute tolerance on the signed curve tests. Points closer than this to a
/// curve (in the curve's own signed measure) take the on-curve rule.
pub const ON_CURVE_TOL: f64 = 1e-12;

/// Affine map `p ↦ m·p + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine { m: [[1.0, 0.0], [0.0, 1.0]], b: [0.0, 0.0] };

    #[inline(always)]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.b[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.b[1],
        ]
    }

    /// Linear part only.
    #[inline]
    pub fn apply_linear(&self, v: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * v[0] + self.m[0][1] * v[1], self.m[1][0] * v[0] + self.m[1][1] * v[1]]
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Affine) -> Affine {
        let a = &self.m;
        let c = &inner.m;
        let m = [
            [a[0][0] * c[0][0] + a[0][1] * c[1][0], a[0][0] * c[0][1] + a[0][1] * c[1][1]],
            [a[1][0] * c[0][0] + a[1][1] * c[1][0], a[1][0] * c[0][1] + a[1][1] * c[1][1]],
        ];
        let b = self.apply(inner.b);
        Affine { m, b }
    }

    pub fn inverse(&self) -> Affine {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let m = [[d / det, -b / det], [-c / det, a / det]];
        let inv = Affine { m, b: [0.0, 0.0] };
        let t = inv.apply_linear(self.b);
        Affine { m, b: [-t[0], -t[1]] }
    }

    /// Transpose of the linear part applied to a covector.
    fn pull_covector(&self, l: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * l[0] + self.m[1][0] * l[1], self.m[0][1] * l[0] + self.m[1][1] * l[1]]
    }
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson), extended linearly
/// outside the tabulated range.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` strictly increasing, `ys` strictly monotone. Endpoint derivatives
    /// may be prescribed; otherwise one-sided secants are used.
    pub fn new(xs: &[f64], ys: &[f64], d_start: Option<f64>, d_end: Option<f64>) -> Result<Self> {
        let k = xs.len();
        if k < 2 || ys.len() != k {
            return Err(invalid("tabulated curve", "need at least two (x, y) samples of equal length"));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(invalid("tabulated curve", "non-finite sample"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tabulated curve", "x samples must be strictly increasing"));
        }
        let up = ys[1] > ys[0];
        if ys.windows(2).any(|w| if up { w[1] <= w[0] } else { w[1] >= w[0] }) {
            return Err(invalid("tabulated curve", "y samples must be strictly monotone"));
        }
        let sec: Vec<f64> = (0..k - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ds = Vec::with_capacity(k);
        ds.push(d_start.unwrap_or(sec[0]));
        for i in 1..k - 1 {
            ds.push(0.5 * (sec[i - 1] + sec[i]));
        }
        ds.push(d_end.unwrap_or(sec[k - 2]));
        for i in 0..k - 1 {
            let a = ds[i] / sec[i];
            let b = ds[i + 1] / sec[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / libm::sqrt(s);
                ds[i] = t * a * sec[i];
                ds[i + 1] = t * b * sec[i];
            }
        }
        Ok(Self { xs: xs.into(), ys: ys.into(), ds })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.ds[0] * (x - self.xs[0]);
        }
        if x >= self.xs[k - 1] {
            return self.ys[k - 1] + self.ds[k - 1] * (x - self.xs[k - 1]);
        }
        let i = self.xs.partition_point(|&t| t <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.ds[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.ds[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let k = self.xs.len();
        if x <= self.xs[0] {
            return self.ds[0];
        }
        if x >= self.xs[k - 1] {
            return self.ds[k - 1];
        }
        let i = self.xs.partition_point(|&t| t <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        (6.0 * t2 - 6.0 * t) / h * self.ys[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.ds[i]
            + (-6.0 * t2 + 6.0 * t) / h * self.ys[i + 1]
            + (3.0 * t2 - 2.0 * t) * self.ds[i + 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveKind {
    /// `a·u + b·w = d` with `(a, b)` a unit normal.
    Line { a: f64, b: f64, d: f64 },
    /// `w = h(u)`.
    Graph(MonotoneCubic),
}

/// A discontinuity curve. `domain` is the parameter interval on which the
/// curve is genuinely given; geometry extends beyond it (lines, linear
/// extension of graphs) so that regions stay well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscontinuityCurve {
    pub kind: CurveKind,
    pub domain: (f64, f64),
}

impl DiscontinuityCurve {
    /// The line `w = slope·u + intercept`; positive side is above.
    pub fn line_segment(slope: f64, intercept: f64, domain: (f64, f64)) -> Self {
        let norm = libm::sqrt(1.0 + slope * slope);
        Self { kind: CurveKind::Line { a: -slope / norm, b: 1.0 / norm, d: intercept / norm }, domain }
    }

    /// The vertical line `u = at`; positive side is to the right.
    pub fn vertical(at: f64) -> Self {
        Self {
            kind: CurveKind::Line { a: 1.0, b: 0.0, d: at },
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// The horizontal line `w = at`; positive side is above.
    pub fn horizontal(at: f64) -> Self {
        Self {
            kind: CurveKind::Line { a: 0.0, b: 1.0, d: at },
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn graph(h: MonotoneCubic) -> Self {
        let domain = h.domain();
        Self { kind: CurveKind::Graph(h), domain }
    }

    /// Signed test; zero on the curve.
    #[inline(always)]
    pub fn side(&self, p: [f64; 2]) -> f64 {
        match &self.kind {
            CurveKind::Line { a, b, d } => a * p[0] + b * p[1] - d,
            CurveKind::Graph(h) => p[1] - h.eval(p[0]),
        }
    }

    /// Unit-free tangent directions at sample points along the curve.
    fn tangents(&self) -> Vec<[f64; 2]> {
        match &self.kind {
            CurveKind::Line { a, b, .. } => alloc::vec![[-*b, *a]],
            CurveKind::Graph(h) => {
                let (lo, hi) = h.domain();
                let mut ts: Vec<[f64; 2]> = h.nodes().iter().map(|&x| [1.0, h.derivative(x)]).collect();
                for k in 0..64 {
                    let x = lo + (hi - lo) * (k as f64 + 0.5) / 64.0;
                    ts.push([1.0, h.derivative(x)]);
                }
                ts
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Negative,
    Positive,
}

/// Continuous value rule attached to a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueRule {
    Constant(f64),
    /// `base + amp·sin(u)·sin(w)`.
    Bump { base: f64, amp: f64 },
}

impl ValueRule {
    #[inline(always)]
    pub fn at(&self, p: [f64; 2]) -> f64 {
        match *self {
            ValueRule::Constant(c) => c,
            ValueRule::Bump { base, amp } => base + amp * libm::sin(p[0]) * libm::sin(p[1]),
        }
    }

    fn lower_bound(&self) -> f64 {
        match *self {
            ValueRule::Constant(c) => c,
            ValueRule::Bump { base, amp } => base - amp.abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ValueRule::Constant(_))
    }
}

/// An open region: the set of points on the prescribed side of each listed
/// curve. `witness` is an interior point used by bound certification.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub signature: Vec<(usize, Side)>,
    pub rule: ValueRule,
    pub witness: Option<[f64; 2]>,
}

enum Membership {
    Inside,
    OnBoundary,
    Outside,
}

impl Region {
    #[inline]
    fn membership(&self, p: [f64; 2], curves: &[DiscontinuityCurve]) -> Membership {
        let mut tie = false;
        for &(k, side) in &self.signature {
            let s = curves[k].side(p);
            if s.abs() <= ON_CURVE_TOL {
                tie = true;
            } else if (s > 0.0) != (side == Side::Positive) {
                return Membership::Outside;
            }
        }
        if tie {
            Membership::OnBoundary
        } else {
            Membership::Inside
        }
    }
}

#[derive(Debug)]
struct FieldDef {
    name: String,
    curves: Vec<DiscontinuityCurve>,
    regions: Vec<Region>,
    /// Covector `ℓ` such that the field is a function of `ℓ·p` alone;
    /// zero for constants.
    dependence: Option<[f64; 2]>,
}

impl FieldDef {
    #[inline]
    fn eval(&self, q: [f64; 2]) -> f64 {
        if self.regions.len() == 1 {
            return self.regions[0].rule.at(q);
        }
        let mut low = f64::INFINITY;
        for r in &self.regions {
            match r.membership(q, &self.curves) {
                Membership::Inside => return r.rule.at(q),
                Membership::OnBoundary => low = low.min(r.rule.at(q)),
                Membership::Outside => {}
            }
        }
        debug_assert!(low.is_finite(), "regions of `{}` do not cover {q:?}", self.name);
        low
    }

    fn envelopes(&self, q: [f64; 2]) -> (f64, f64) {
        if self.regions.len() == 1 {
            let v = self.regions[0].rule.at(q);
            return (v, v);
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.regions {
            match r.membership(q, &self.curves) {
                Membership::Inside => {
                    let v = r.rule.at(q);
                    return (v, v);
                }
                Membership::OnBoundary => {
                    let v = r.rule.at(q);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                Membership::Outside => {}
            }
        }
        (lo, hi)
    }
}

/// How the field depends on its arguments, in the query frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldKind {
    Constant(f64),
    /// The field is a function of `ℓ·p` for the given covector.
    Directional([f64; 2]),
    General,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    fn key(&self) -> [u64; 4] {
        [self.x0.to_bits(), self.x1.to_bits(), self.y0.to_bits(), self.y1.to_bits()]
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Numeric report on the curve-geometry assumptions, reading the field as an
/// LPP-frame speed and its shear as the particle-frame speed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionReport {
    pub curves: usize,
    /// Curves with a horizontal tangent somewhere in the LPP frame.
    pub horizontal: usize,
    /// Curves with a vertical tangent somewhere in the LPP frame.
    pub vertical: usize,
    /// Curves whose particle-frame slope equals −1 somewhere.
    pub particle_slope_minus_one: usize,
    /// Every curve has particle-frame slope outside `[−1, 0]`.
    pub strong_particle_condition: bool,
}

impl AssumptionReport {
    pub fn ok(&self) -> bool {
        self.horizontal == 0 && self.vertical == 0 && self.particle_slope_minus_one == 0
    }
}

/// Result of the logarithmic growth probe.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthProbe {
    /// `(side, sup c / ln side)` along the doubling sequence.
    pub ratios: Vec<(f64, f64)>,
    pub decreasing: bool,
}

/// The speed function. Cheap to clone; the definition is shared.
pub struct SpeedField {
    def: Arc<FieldDef>,
    to_base: Affine,
    bounds_cache: Mutex<BTreeMap<[u64; 4], (f64, f64)>>,
}

impl Clone for SpeedField {
    fn clone(&self) -> Self {
        Self {
            def: self.def.clone(),
            to_base: self.to_base,
            bounds_cache: Mutex::new(self.bounds_cache.lock().clone()),
        }
    }
}

impl fmt::Debug for SpeedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpeedField")
            .field("name", &self.def.name)
            .field("curves", &self.def.curves.len())
            .field("regions", &self.def.regions.len())
            .field("to_base", &self.to_base)
            .finish()
    }
}

impl SpeedField {
    /// General constructor. Regions must cover the plane up to curves.
    pub fn from_parts(
        name: impl Into<String>,
        curves: Vec<DiscontinuityCurve>,
        regions: Vec<Region>,
        dependence: Option<[f64; 2]>,
    ) -> Result<Self> {
        if regions.is_empty() {
            return Err(invalid("regions", "at least one region is required"));
        }
        for r in &regions {
            if r.signature.iter().any(|&(k, _)| k >= curves.len()) {
                return Err(invalid("regions", "signature refers to a missing curve"));
            }
            let lb = r.rule.lower_bound();
            if !(lb > 0.0) || !lb.is_finite() {
                return Err(invalid("speed", "values must be positive and finite"));
            }
            if let ValueRule::Bump { base, amp } = r.rule {
                if !base.is_finite() || !amp.is_finite() {
                    return Err(invalid("speed", "values must be finite"));
                }
            }
        }
        let def = FieldDef { name: name.into(), curves, regions, dependence };
        Ok(Self { def: Arc::new(def), to_base: Affine::IDENTITY, bounds_cache: Mutex::new(BTreeMap::new()) })
    }

    /// `c ≡ value`.
    pub fn constant(value: f64) -> Result<Self> {
        let r = Region { signature: Vec::new(), rule: ValueRule::Constant(value), witness: None };
        Self::from_parts("constant", Vec::new(), alloc::vec![r], Some([0.0, 0.0]))
    }

    /// `left` for `u < at`, `right` for `u > at`.
    pub fn xstep(left: f64, right: f64, at: f64) -> Result<Self> {
        Self::two_sided("xstep", DiscontinuityCurve::vertical(at), left, right, [1.0, 0.0])
    }

    /// `below` for `w < at`, `above` for `w > at`.
    pub fn ystep(below: f64, above: f64, at: f64) -> Result<Self> {
        Self::two_sided("ystep", DiscontinuityCurve::horizontal(at), below, above, [0.0, 1.0])
    }

    /// `below` under the line `w = slope·u + intercept`, `above` over it.
    pub fn oblique_step(below: f64, above: f64, slope: f64, intercept: f64) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(invalid("oblique_step", "slope and intercept must be finite"));
        }
        let full = (f64::NEG_INFINITY, f64::INFINITY);
        Self::two_sided(
            "oblique_step",
            DiscontinuityCurve::line_segment(slope, intercept, full),
            below,
            above,
            [-slope, 1.0],
        )
    }

    /// `below` under the monotone graph through the samples, `above` over it.
    pub fn tabulated(
        us: &[f64],
        ws: &[f64],
        d_start: Option<f64>,
        d_end: Option<f64>,
        below: f64,
        above: f64,
    ) -> Result<Self> {
        let h = MonotoneCubic::new(us, ws, d_start, d_end)?;
        let curves = alloc::vec![DiscontinuityCurve::graph(h)];
        let regions = alloc::vec![
            Region { signature: alloc::vec![(0, Side::Negative)], rule: ValueRule::Constant(below), witness: None },
            Region { signature: alloc::vec![(0, Side::Positive)], rule: ValueRule::Constant(above), witness: None },
        ];
        Self::from_parts("tabulated", curves, regions, None)
    }

    /// `base + amp·sin(u)·sin(w)`, continuous; requires `base > |amp|`.
    pub fn bump(base: f64, amp: f64) -> Result<Self> {
        let r = Region { signature: Vec::new(), rule: ValueRule::Bump { base, amp }, witness: None };
        Self::from_parts("bump", Vec::new(), alloc::vec![r], None)
    }

    /// Checkerboard of `nx × ny` cells of size `cell_w × cell_h` with lower
    /// left corner `origin`; cell `(k, l)` has value `low` when `k + l` is
    /// even and `high` otherwise. Outside the block the value is `low`.
    pub fn rect_checker(
        low: f64,
        high: f64,
        cell_w: f64,
        cell_h: f64,
        nx: usize,
        ny: usize,
        origin: [f64; 2],
    ) -> Result<Self> {
        if !(cell_w > 0.0 && cell_h > 0.0) || nx == 0 || ny == 0 {
            return Err(invalid("rect_checker", "cells must have positive size and count"));
        }
        let mut curves = Vec::new();
        for k in 0..=nx {
            curves.push(DiscontinuityCurve::vertical(origin[0] + k as f64 * cell_w));
        }
        for l in 0..=ny {
            curves.push(DiscontinuityCurve::horizontal(origin[1] + l as f64 * cell_h));
        }
        let v = |k: usize| k;
        let h = |l: usize| nx + 1 + l;
        let mut regions = Vec::new();
        for k in 0..nx {
            for l in 0..ny {
                let val = if (k + l) % 2 == 0 { low } else { high };
                regions.push(Region {
                    signature: alloc::vec![
                        (v(k), Side::Positive),
                        (v(k + 1), Side::Negative),
                        (h(l), Side::Positive),
                        (h(l + 1), Side::Negative),
                    ],
                    rule: ValueRule::Constant(val),
                    witness: Some([
                        origin[0] + (k as f64 + 0.5) * cell_w,
                        origin[1] + (l as f64 + 0.5) * cell_h,
                    ]),
                });
            }
        }
        let outside = [
            alloc::vec![(v(0), Side::Negative)],
            alloc::vec![(v(nx), Side::Positive)],
            alloc::vec![(v(0), Side::Positive), (v(nx), Side::Negative), (h(0), Side::Negative)],
            alloc::vec![(v(0), Side::Positive), (v(nx), Side::Negative), (h(ny), Side::Positive)],
        ];
        for signature in outside {
            regions.push(Region { signature, rule: ValueRule::Constant(low), witness: None });
        }
        Self::from_parts("rect_checker", curves, regions, None)
    }

    fn two_sided(
        name: &str,
        curve: DiscontinuityCurve,
        neg: f64,
        pos: f64,
        dependence: [f64; 2],
    ) -> Result<Self> {
        let regions = alloc::vec![
            Region { signature: alloc::vec![(0, Side::Negative)], rule: ValueRule::Constant(neg), witness: None },
            Region { signature: alloc::vec![(0, Side::Positive)], rule: ValueRule::Constant(pos), witness: None },
        ];
        let dep = if neg == pos { [0.0, 0.0] } else { dependence };
        Self::from_parts(name, alloc::vec![curve], regions, Some(dep))
    }

    fn with_transform(&self, inner: Affine) -> Self {
        Self {
            def: self.def.clone(),
            to_base: self.to_base.compose(&inner),
            bounds_cache: Mutex::new(BTreeMap::new()),
        }
    }

    /// `c̃(x, y) = c(x + y, y)`.
    pub fn shear(&self) -> Self {
        self.with_transform(Affine { m: [[1.0, 1.0], [0.0, 1.0]], b: [0.0, 0.0] })
    }

    /// Inverse of [`shear`](Self::shear): `c(u, w) = c̃(u − w, w)`.
    pub fn unshear(&self) -> Self {
        self.with_transform(Affine { m: [[1.0, -1.0], [0.0, 1.0]], b: [0.0, 0.0] })
    }

    /// `p ↦ c(p + (a, b))`.
    pub fn shifted(&self, a: f64, b: f64) -> Self {
        self.with_transform(Affine { m: [[1.0, 0.0], [0.0, 1.0]], b: [a, b] })
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn transform(&self) -> Affine {
        self.to_base
    }

    /// Field value with the lower-semicontinuous on-curve rule.
    #[inline]
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.def.eval(self.to_base.apply(p))
    }

    /// Which side of every curve `p` lies on, two bits per curve (curves
    /// past the 32nd fold onto earlier bits). Equal signatures at the ends of
    /// a segment mean it crosses no line.
    #[inline]
    pub fn signature(&self, p: [f64; 2]) -> u64 {
        let q = self.to_base.apply(p);
        let mut s = 0u64;
        for (k, c) in self.def.curves.iter().enumerate() {
            let v = c.side(q);
            let code = if v.abs() <= ON_CURVE_TOL {
                2
            } else if v > 0.0 {
                1
            } else {
                0
            };
            s ^= code << (2 * (k % 32));
        }
        s
    }

    /// Side tests of the curves as affine maps `p ↦ s₀ + s_u·p_u + s_w·p_w`
    /// in query coordinates, in signature order; `None` unless every curve
    /// is a line.
    pub fn line_sides(&self) -> Option<Vec<[f64; 3]>> {
        let m = &self.to_base;
        self.def
            .curves
            .iter()
            .map(|c| match c.kind {
                CurveKind::Line { a, b, d } => Some([
                    a * m.b[0] + b * m.b[1] - d,
                    a * m.m[0][0] + b * m.m[1][0],
                    a * m.m[0][1] + b * m.m[1][1],
                ]),
                CurveKind::Graph(_) => None,
            })
            .collect()
    }

    pub fn has_curves(&self) -> bool {
        !self.def.curves.is_empty()
    }

    /// True when the two signatures cannot be joined by a segment avoiding
    /// the open side of some line: some curve has opposite strict codes.
    #[inline]
    pub fn signatures_cross(a: u64, b: u64) -> bool {
        let mut x = a ^ b;
        let mut k = 0;
        while x != 0 {
            if x & 3 == 1 && (a >> k) & 3 != 2 && (b >> k) & 3 != 2 {
                return true;
            }
            x >>= 2;
            k += 2;
        }
        false
    }

    /// True when the signature records a point on some curve.
    #[inline]
    pub fn signature_on_curve(s: u64) -> bool {
        let mut x = s;
        while x != 0 {
            if x & 3 == 2 {
                return true;
            }
            x >>= 2;
        }
        false
    }

    /// Mean of `1/c` along the segment `a → b`: exact for piecewise-constant
    /// fields up to bisection accuracy, composite midpoint inside regions.
    pub fn segment_mean_inv(&self, a: [f64; 2], b: [f64; 2], samples: usize) -> f64 {
        let k = samples.max(1);
        let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let lines_only = self.def.curves.iter().all(|c| matches!(c.kind, CurveKind::Line { .. }));
        if lines_only {
            // side tests are affine along the segment
            let (qa, qb) = (self.to_base.apply(a), self.to_base.apply(b));
            let mut cuts: Vec<f64> = alloc::vec![0.0, 1.0];
            for c in &self.def.curves {
                let (sa, sb) = (c.side(qa), c.side(qb));
                if (sa > ON_CURVE_TOL && sb < -ON_CURVE_TOL) || (sa < -ON_CURVE_TOL && sb > ON_CURVE_TOL) {
                    cuts.push(sa / (sa - sb));
                }
            }
            cuts.sort_by(|x, y| x.total_cmp(y));
            let smooth = !self.def.regions.iter().all(|r| r.rule.is_constant());
            let mut total = 0.0;
            for w in cuts.windows(2) {
                let len = w[1] - w[0];
                if len <= 0.0 {
                    continue;
                }
                let n = if smooth { libm::ceil(k as f64 * len).max(1.0) as usize } else { 1 };
                let mut acc = 0.0;
                for i in 0..n {
                    acc += 1.0 / self.eval(at(w[0] + len * (i as f64 + 0.5) / n as f64));
                }
                total += len * acc / n as f64;
            }
            return total;
        }
        let ts: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let sig: Vec<u64> = ts.iter().map(|&t| self.signature(at(t))).collect();
        let inv: Vec<f64> = ts.iter().map(|&t| 1.0 / self.eval(at(t))).collect();
        let mut total = 0.0;
        let mut run_start = 0.0;
        let mut run_sum = 0.0;
        let mut run_len = 0usize;
        for i in 0..k {
            run_sum += inv[i];
            run_len += 1;
            let end = if i + 1 == k {
                1.0
            } else if sig[i + 1] != sig[i] {
                let (mut lo, mut hi) = (ts[i], ts[i + 1]);
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    if self.signature(at(mid)) == sig[i] {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            } else {
                continue;
            };
            total += (end - run_start) * run_sum / run_len as f64;
            run_start = end;
            run_sum = 0.0;
            run_len = 0;
        }
        total
    }

    /// Lower and upper envelopes at `p`.
    pub fn envelopes(&self, p: [f64; 2]) -> (f64, f64) {
        self.def.envelopes(self.to_base.apply(p))
    }

    pub fn kind(&self) -> FieldKind {
        match self.def.dependence {
            Some(l) if l == [0.0, 0.0] => FieldKind::Constant(self.def.regions[0].rule.at([0.0, 0.0])),
            Some(l) => FieldKind::Directional(self.to_base.pull_covector(l)),
            None => FieldKind::General,
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.kind() {
            FieldKind::Constant(c) => Some(c),
            _ => None,
        }
    }

    /// True when the field, read in the query frame, depends on the first
    /// coordinate only (constants included).
    pub fn depends_on_first_only(&self) -> bool {
        match self.kind() {
            FieldKind::Constant(_) => true,
            FieldKind::Directional(l) => l[1].abs() <= 1e-12 * l[0].abs(),
            FieldKind::General => false,
        }
    }

    /// Certified `(inf, sup)` of the field over a compact rectangle. Results
    /// are cached per rectangle.
    pub fn bounds_on(&self, rect: Rect) -> Result<(f64, f64)> {
        if !(rect.x1 >= rect.x0 && rect.y1 >= rect.y0) {
            return Err(Error::NegativeExtent);
        }
        if ![rect.x0, rect.x1, rect.y0, rect.y1].iter().all(|v| v.is_finite()) {
            return Err(invalid("rect", "bounds must be finite"));
        }
        let key = rect.key();
        if let Some(b) = self.bounds_cache.lock().get(&key) {
            return Ok(*b);
        }
        let b = self.compute_bounds(rect);
        self.bounds_cache.lock().insert(key, b);
        Ok(b)
    }

    /// Constant on every region and every curve a straight line.
    pub fn straight_and_flat(&self) -> bool {
        self.def.regions.iter().all(|r| r.rule.is_constant())
            && self.def.curves.iter().all(|c| matches!(c.kind, CurveKind::Line { .. }))
    }

    /// Exact value when the field is piecewise constant with straight
    /// curves and no curve meets `rect`; `None` when that cannot be decided
    /// without sampling.
    pub fn constant_on(&self, rect: Rect) -> Option<f64> {
        if let Some(c) = self.constant_value() {
            return Some(c);
        }
        if !self.straight_and_flat() {
            return None;
        }
        let corners = [[rect.x0, rect.y0], [rect.x1, rect.y0], [rect.x0, rect.y1], [rect.x1, rect.y1]]
            .map(|p| self.to_base.apply(p));
        for c in &self.def.curves {
            let s = corners.map(|p| c.side(p));
            let pos = s.iter().all(|&v| v > ON_CURVE_TOL);
            let neg = s.iter().all(|&v| v < -ON_CURVE_TOL);
            if !(pos || neg) {
                return None;
            }
        }
        Some(self.eval([0.5 * (rect.x0 + rect.x1), 0.5 * (rect.y0 + rect.y1)]))
    }

    fn compute_bounds(&self, r: Rect) -> (f64, f64) {
        if let Some(c) = self.constant_value() {
            return (c, c);
        }
        let (w, h) = (r.x1 - r.x0, r.y1 - r.y0);
        let mut lo = (f64::INFINITY, [r.x0, r.y0]);
        let mut hi = (f64::NEG_INFINITY, [r.x0, r.y0]);
        let take = |p: [f64; 2], lo: &mut (f64, [f64; 2]), hi: &mut (f64, [f64; 2])| {
            let (a, b) = self.envelopes(p);
            if a < lo.0 {
                *lo = (a, p);
            }
            if b > hi.0 {
                *hi = (b, p);
            }
        };
        const G: usize = 64;
        for i in 0..=G {
            for j in 0..=G {
                let p = [r.x0 + w * i as f64 / G as f64, r.y0 + h * j as f64 / G as f64];
                take(p, &mut lo, &mut hi);
            }
        }
        const B: usize = 1024;
        for k in 0..=B {
            let t = k as f64 / B as f64;
            for p in [[r.x0 + w * t, r.y0], [r.x0 + w * t, r.y1], [r.x0, r.y0 + h * t], [r.x1, r.y0 + h * t]] {
                take(p, &mut lo, &mut hi);
            }
        }
        let inv = self.to_base.inverse();
        for reg in &self.def.regions {
            if let Some(wb) = reg.witness {
                let p = inv.apply(wb);
                if r.contains(p) {
                    take(p, &mut lo, &mut hi);
                }
            }
        }
        if self.def.regions.iter().any(|reg| !reg.rule.is_constant()) {
            let step0 = [w / G as f64, h / G as f64];
            lo.0 = self.refine(r, lo.1, step0, -1.0).min(lo.0);
            hi.0 = self.refine(r, hi.1, step0, 1.0).max(hi.0);
        }
        (lo.0, hi.0)
    }

    /// Compass search for an extremum of `sign·c` inside `r`.
    fn refine(&self, r: Rect, start: [f64; 2], step0: [f64; 2], sign: f64) -> f64 {
        let clamp = |p: [f64; 2]| [p[0].clamp(r.x0, r.x1), p[1].clamp(r.y0, r.y1)];
        let mut p = start;
        let mut best = sign * self.eval(p);
        let mut step = step0;
        while step[0].max(step[1]) > 1e-10 {
            let mut moved = false;
            for d in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]] {
                let q = clamp([p[0] + d[0] * step[0], p[1] + d[1] * step[1]]);
                let v = sign * self.eval(q);
                if v > best {
                    best = v;
                    p = q;
                    moved = true;
                }
            }
            if !moved {
                step = [step[0] * 0.5, step[1] * 0.5];
            }
        }
        sign * best
    }

    /// Doubling-square probe of `sup c / ln(side)` around `anchor`, sides
    /// `2, 4, …, 2^16`.
    pub fn growth_probe(&self, anchor: [f64; 2]) -> Result<GrowthProbe> {
        let mut ratios = Vec::new();
        for k in 1..=16 {
            let side = (1u64 << k) as f64;
            let half = 0.5 * side;
            let rect = Rect::new(anchor[0] - half, anchor[0] + half, anchor[1] - half, anchor[1] + half);
            let (_, sup) = self.bounds_on(rect)?;
            ratios.push((side, sup / libm::log(side)));
        }
        let decreasing = ratios.windows(2).all(|w| w[1].1 < w[0].1);
        Ok(GrowthProbe { ratios, decreasing })
    }

    /// Curve-geometry report. The field is read as an LPP-frame speed in its
    /// current query frame.
    pub fn assumption_report(&self) -> AssumptionReport {
        let to_query = |t: [f64; 2]| {
            // p_base = m·p + b, so tangents pull back through m⁻¹.
            let inv = self.to_base.inverse();
            inv.apply_linear(t)
        };
        let mut rep = AssumptionReport {
            curves: self.def.curves.len(),
            horizontal: 0,
            vertical: 0,
            particle_slope_minus_one: 0,
            strong_particle_condition: true,
        };
        for c in &self.def.curves {
            let ts: Vec<[f64; 2]> = c.tangents().into_iter().map(to_query).collect();
            let scale = |t: &[f64; 2]| t[0].abs().max(t[1].abs());
            if ts.iter().any(|t| t[1].abs() <= 1e-12 * scale(t)) {
                rep.horizontal += 1;
            }
            if ts.iter().any(|t| t[0].abs() <= 1e-12 * scale(t)) {
                rep.vertical += 1;
                rep.particle_slope_minus_one += 1;
            }
            // Particle-frame tangent (du − dw, dw); slope in [−1, 0] iff
            // dw/(du − dw) ∈ [−1, 0].
            let bad_strong = ts.iter().any(|t| {
                let (dx, dy) = (t[0] - t[1], t[1]);
                if dx.abs() <= 1e-12 * scale(t) {
                    return false;
                }
                let s = dy / dx;
                (-1.0 - 1e-12..=1e-12).contains(&s)
            });
            if bad_strong || ts.iter().any(|t| t[0].abs() <= 1e-12 * scale(t)) {
                rep.strong_particle_condition = false;
            }
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, STREAM_AUX};

    #[test]
    fn constant_field() {
        let c = SpeedField::constant(2.0).unwrap();
        assert_eq!(c.eval([0.3, 1.7]), 2.0);
        assert_eq!(c.shear().eval([0.3, 1.7]), 2.0);
        assert_eq!(c.bounds_on(Rect::new(-3.0, 5.0, 0.0, 1.0)).unwrap(), (2.0, 2.0));
        assert_eq!(c.kind(), FieldKind::Constant(2.0));
    }

    #[test]
    fn two_phase_lsc_and_envelopes() {
        let c = SpeedField::xstep(1.0, 3.0, 0.0).unwrap();
        assert_eq!(c.eval([0.0, 5.0]), 1.0);
        assert_eq!(c.envelopes([0.0, 5.0]), (1.0, 3.0));
        assert_eq!(c.envelopes([0.5, 5.0]), (3.0, 3.0));
        assert_eq!(c.bounds_on(Rect::new(-1.0, 1.0, 0.0, 1.0)).unwrap(), (1.0, 3.0));
        assert!(c.depends_on_first_only());
    }

    #[test]
    fn oblique_on_curve_takes_min() {
        let c = SpeedField::oblique_step(1.0, 4.0, 2.0, 0.0).unwrap();
        assert_eq!(c.eval([1.0, 2.0]), 1.0);
        // normal probes from both sides
        let n = [-2.0 / libm::sqrt(5.0), 1.0 / libm::sqrt(5.0)];
        for e in [1e-3, 1e-6, 1e-9] {
            assert_eq!(c.eval([1.0 + e * n[0], 2.0 + e * n[1]]), 4.0);
            assert_eq!(c.eval([1.0 - e * n[0], 2.0 - e * n[1]]), 1.0);
        }
    }

    #[test]
    fn triple_point_envelopes() {
        let curves = alloc::vec![DiscontinuityCurve::vertical(0.0), DiscontinuityCurve::horizontal(0.0)];
        let regions = alloc::vec![
            Region { signature: alloc::vec![(0, Side::Negative)], rule: ValueRule::Constant(1.0), witness: None },
            Region {
                signature: alloc::vec![(0, Side::Positive), (1, Side::Negative)],
                rule: ValueRule::Constant(2.0),
                witness: None
            },
            Region {
                signature: alloc::vec![(0, Side::Positive), (1, Side::Positive)],
                rule: ValueRule::Constant(5.0),
                witness: None
            },
        ];
        let c = SpeedField::from_parts("triple", curves, regions, None).unwrap();
        assert_eq!(c.envelopes([0.0, 0.0]), (1.0, 5.0));
        assert_eq!(c.eval([0.0, 0.0]), 1.0);
        assert_eq!(c.envelopes([1.0, 0.0]), (2.0, 5.0));
    }

    #[test]
    fn shear_maps_curves() {
        // vertical u = 0 in the LPP frame becomes x + y = 0
        let c = SpeedField::xstep(1.0, 2.0, 0.0).unwrap().shear();
        assert_eq!(c.eval([1.0, -1.0]), 1.0);
        assert_eq!(c.envelopes([1.0, -1.0]), (1.0, 2.0));
        assert_eq!(c.eval([1.0, -0.9]), 2.0);
        // the diagonal u = w becomes x = 0
        let d = SpeedField::oblique_step(1.0, 2.0, 1.0, 0.0).unwrap().shear();
        for y in [-3.0, 0.0, 7.5] {
            assert_eq!(d.envelopes([0.0, y]), (1.0, 2.0));
            assert_eq!(d.eval([-0.1, y]), 2.0);
            assert_eq!(d.eval([0.1, y]), 1.0);
        }
        assert!(d.depends_on_first_only());
    }

    #[test]
    fn shear_roundtrip_and_exactness() {
        let c = SpeedField::tabulated(&[-2.0, 0.0, 1.0, 3.0], &[-1.0, 0.0, 2.0, 2.5], None, None, 1.0, 2.5)
            .unwrap();
        let s = c.shear();
        let rt = s.unshear();
        let mut rng = CounterRng::new(11, STREAM_AUX);
        for _ in 0..10_000 {
            let p = [rng.range(-5.0, 5.0), rng.range(-5.0, 5.0)];
            assert_eq!(rt.eval(p), c.eval(p));
            assert_eq!(s.eval(p), c.eval([p[0] + p[1], p[1]]));
        }
    }

    #[test]
    fn bump_bounds() {
        let c = SpeedField::bump(2.0, 1.0).unwrap();
        let (lo, hi) = c.bounds_on(Rect::new(0.0, core::f64::consts::PI, 0.0, core::f64::consts::PI)).unwrap();
        assert!((lo - 2.0).abs() < 1e-6, "{lo}");
        assert!((hi - 3.0).abs() < 1e-6, "{hi}");
    }

    #[test]
    fn negative_extent_is_an_error() {
        let c = SpeedField::constant(1.0).unwrap();
        assert_eq!(c.bounds_on(Rect::new(1.0, 0.0, 0.0, 1.0)), Err(Error::NegativeExtent));
        assert!(c.bounds_on(Rect::new(1.0, 1.0, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn checker_witnesses_found() {
        let c = SpeedField::rect_checker(1.0, 3.0, 0.01, 0.01, 40, 40, [0.0, 0.0]).unwrap();
        let (lo, hi) = c.bounds_on(Rect::new(0.0, 0.4, 0.0, 0.4)).unwrap();
        assert_eq!((lo, hi), (1.0, 3.0));
        assert_eq!(c.eval([0.005, 0.005]), 1.0);
        assert_eq!(c.eval([0.015, 0.005]), 3.0);
        assert_eq!(c.eval([0.01, 0.005]), 1.0);
        assert_eq!(c.eval([5.0, 5.0]), 1.0);
        let rep = c.assumption_report();
        assert!(rep.horizontal > 0 && rep.vertical > 0);
    }

    #[test]
    fn growth_probe_bounded_fields() {
        for c in [SpeedField::xstep(1.0, 3.0, 0.0).unwrap(), SpeedField::bump(2.0, 0.5).unwrap()] {
            let g = c.growth_probe([0.0, 0.0]).unwrap();
            assert!(g.decreasing);
            assert_eq!(g.ratios.len(), 16);
        }
    }

    #[test]
    fn assumption_reports() {
        // particle-frame x-step, read in the LPP frame: a line of slope 1
        let c = SpeedField::xstep(1.0, 3.0, 0.0).unwrap().unshear();
        let rep = c.assumption_report();
        assert!(rep.ok(), "{rep:?}");
        // vertical in the particle frame is slope −∞, not in [−1, 0]
        assert!(rep.strong_particle_condition);
        let v = SpeedField::xstep(1.0, 3.0, 0.0).unwrap();
        assert_eq!(v.assumption_report().vertical, 1);
    }

    #[test]
    fn monotone_cubic_is_monotone() {
        let h = MonotoneCubic::new(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.1, 2.0, 2.05], None, None).unwrap();
        let mut prev = h.eval(-1.0);
        for k in 1..=4000 {
            let x = -1.0 + 5.0 * k as f64 / 4000.0;
            let v = h.eval(x);
            assert!(v > prev);
            prev = v;
        }
        assert!((h.eval(2.0) - 2.0).abs() < 1e-15);
        assert!(MonotoneCubic::new(&[0.0, 1.0], &[1.0, 1.0], None, None).is_err());
    }

    #[test]
    fn nonpositive_values_rejected() {
        assert!(SpeedField::constant(0.0).is_err());
        assert!(SpeedField::xstep(1.0, -1.0, 0.0).is_err());
        assert!(SpeedField::bump(1.0, 1.0).is_err());
    }
}
