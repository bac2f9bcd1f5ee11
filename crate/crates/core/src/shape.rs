//! Macroscopic shape functions and level curves.
//!
//! `Γ_c((a, b), (x, y))` is the supremum over up-right paths of
//! `∫ γ(x'(s)) / c(x(s)) ds`. It is computed by a Bellman recursion on a
//! square grid: every node takes the best of its predecessors along a finite
//! move set, paying `γ(Δ)/c` with `c` sampled at the move midpoint. Moves
//! close to the axes are long and integrate `1/c` along the half-row (or
//! half-column) they cross.
//!
//! Level curves `g(r, t) = inf{y ≥ max(0, −r) : Γ(r + y, y) ≥ t}` are read
//! off the grid by bisection on its bilinear interpolant.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use spin::Mutex;

use crate::error::invalid;
use crate::speed_field::{FieldKind, Rect};
use crate::{Error, Result, SpeedField};

/// Homogeneous shape `(√x + √y)²`.
pub fn gamma(x: f64, y: f64) -> Result<f64> {
    if !(x >= 0.0 && y >= 0.0) {
        return Err(invalid("gamma", "arguments must be nonnegative"));
    }
    Ok(gamma_unchecked(x, y))
}

#[inline(always)]
pub(crate) fn gamma_unchecked(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        return x + y;
    }
    let s = libm::sqrt(x) + libm::sqrt(y);
    s * s
}

/// Negative Legendre dual of `f(ρ) = ρ(1 − ρ)`.
#[inline]
pub fn psi(y: f64) -> f64 {
    if y < -1.0 {
        -y
    } else if y <= 1.0 {
        let d = 1.0 - y;
        0.25 * d * d
    } else {
        0.0
    }
}

/// Level curve of the homogeneous field `c ≡ c0`.
#[inline]
pub fn level_closed_form(c0: f64, r: f64, t: f64) -> f64 {
    let s = t * c0;
    if s <= 0.0 {
        return r.min(0.0).abs();
    }
    s * psi(r / s)
}

/// `Γ` of the homogeneous field `c ≡ c0`.
pub fn shape_closed_form(c0: f64, x: f64, y: f64) -> f64 {
    gamma_unchecked(x, y) / c0
}

/// Default bound on the move components: `max(8, round(0.8/√h))`.
pub fn move_bound(h: f64) -> u32 {
    let m = libm::round(0.8 / libm::sqrt(h));
    if m > 8.0 {
        m as u32
    } else {
        8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOptions {
    /// Largest move component; `None` uses [`move_bound`].
    pub max_component: Option<u32>,
    /// Add `(p, 1)` and `(1, p)` for `p` beyond the bound.
    pub long_moves: bool,
    /// Longest long move in grid steps; `None` spans the grid.
    pub long_reach: Option<usize>,
    /// Add the crossings of straight discontinuity lines with grid lines as
    /// nodes, so that paths can follow a line and leave it between nodes.
    /// Used only for piecewise-constant fields.
    pub curve_nodes: bool,
    /// Sample speeds slightly off discontinuity curves, on the slower side.
    pub nudge: bool,
    pub mem_cap_bytes: usize,
    /// Nodes whose value provably exceeds this are skipped and hold `+∞`.
    pub cutoff: Option<f64>,
}

impl Default for ShapeOptions {
    fn default() -> Self {
        Self { max_component: None, long_moves: true, long_reach: None, curve_nodes: true, nudge: false, mem_cap_bytes: crate::lpp::DEFAULT_MEM_CAP, cutoff: None }
    }
}

/// `Γ` from `start` on the nodes `start + h·(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub start: [f64; 2],
    pub h: f64,
    pub ni: usize,
    pub nj: usize,
    /// Row-major in `j`.
    pub values: Vec<f64>,
    /// Short moves `(p, q)`.
    pub move_set: Vec<(u32, u32)>,
    /// Longest `(p, 1)` / `(1, p)` move, or `0` when disabled.
    pub long_reach: usize,
}

impl ValueGrid {
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.ni + 1) + i]
    }

    /// Interpolant at offset `(du, dw)` from the start; `None` outside the
    /// grid. Tensor-product linear, except in the first cell off each axis
    /// where `Γ` grows like a square root and the fit uses `{1, √y, y}`
    /// through the first three nodes.
    pub fn interpolate(&self, du: f64, dw: f64) -> Option<f64> {
        let x = du / self.h;
        let y = dw / self.h;
        let eps = 1e-9;
        if !(x >= -eps && y >= -eps && x <= self.ni as f64 + eps && y <= self.nj as f64 + eps) {
            return None;
        }
        let (ix, wx) = axis_weights(x.clamp(0.0, self.ni as f64), self.ni);
        let (iy, wy) = axis_weights(y.clamp(0.0, self.nj as f64), self.nj);
        let mut acc = 0.0;
        for b in 0..3 {
            if wy[b] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for a in 0..3 {
                if wx[a] != 0.0 {
                    let v = self.node(ix[a], iy[b]);
                    if v == f64::INFINITY {
                        return Some(v);
                    }
                    row += wx[a] * v;
                }
            }
            acc += wy[b] * row;
        }
        Some(acc)
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.ni as f64 * self.h, self.nj as f64 * self.h]
    }
}

/// Lower bound on the value at node `(i, j)` of a field with speed at most
/// one, from paths of moves `(1, 0)`, `(2, 1)`, `(1, 1)` and their mirrors.
fn move_floor(i: f64, j: f64, m: u32) -> f64 {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    if m < 2 {
        return a + 3.0 * b;
    }
    let g21 = 3.0 + 2.0 * core::f64::consts::SQRT_2;
    if a >= 2.0 * b {
        a + (g21 - 2.0) * b
    } else {
        (g21 - 4.0) * a + (8.0 - g21) * b
    }
}

/// Node indices and weights along one axis at grid coordinate `x ∈ [0, n]`.
#[inline]
fn axis_weights(x: f64, n: usize) -> ([usize; 3], [f64; 3]) {
    if n == 0 {
        return ([0, 0, 0], [1.0, 0.0, 0.0]);
    }
    if x < 1.0 && n >= 2 {
        let s = libm::sqrt(x);
        let d = 1.0 / (core::f64::consts::SQRT_2 - 2.0);
        return ([0, 1, 2], [1.0 + s * d - x - x * d, -2.0 * s * d + x + 2.0 * x * d, s * d - x * d]);
    }
    let i = (libm::floor(x) as usize).min(n - 1);
    let f = x - i as f64;
    ([i, i + 1, i + 1], [1.0 - f, f, 0.0])
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Coprime moves with components at most `m`, in lexicographic order.
pub fn short_moves(m: u32) -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    for p in 0..=m {
        for q in 0..=m {
            if (p, q) != (0, 0) && gcd(p, q) == 1 {
                v.push((p, q));
            }
        }
    }
    v
}

/// Bellman solution of the variational formula on `start + [0, extent]`.
pub fn shape_grid(
    field: &SpeedField,
    start: [f64; 2],
    extent: [f64; 2],
    h: f64,
    opts: &ShapeOptions,
) -> Result<ValueGrid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("h", "grid spacing must be positive"));
    }
    if !(extent[0] >= 0.0 && extent[1] >= 0.0) {
        return Err(Error::NegativeExtent);
    }
    let ni = libm::ceil(extent[0] / h - 1e-9).max(0.0) as usize;
    let nj = libm::ceil(extent[1] / h - 1e-9).max(0.0) as usize;
    let (hw, hh) = (2 * ni + 1, 2 * nj + 1);
    let cells = (ni + 1).checked_mul(nj + 1).ok_or(Error::ExtentOverflow)?;
    let half = hw.checked_mul(hh).ok_or(Error::ExtentOverflow)?;
    let bytes = (7 * cells + 2 * half).saturating_mul(8);
    if bytes > opts.mem_cap_bytes {
        return Err(Error::MemoryBudget { requested_bytes: bytes, cap_bytes: opts.mem_cap_bytes });
    }

    let m = opts.max_component.unwrap_or_else(|| move_bound(h));
    // last computed column of each row; the computed set is a down-set, so
    // every source of a computed node is computed
    let row_end: Vec<Option<usize>> = match opts.cutoff {
        None => vec![Some(ni); nj + 1],
        Some(t) => {
            let rect = Rect::new(start[0], start[0] + ni as f64 * h, start[1], start[1] + nj as f64 * h);
            let c_max = field.bounds_on(rect)?.1;
            // every leg is at least h·γ(move)/c_max; ten steps of margin keep
            // interpolation stencils near the cutoff level complete
            let lim = t * c_max / h + 10.0;
            let mut e = ni as i64;
            (0..=nj)
                .map(|j| {
                    while e >= 0 && move_floor(e as f64, j as f64, m) > lim {
                        e -= 1;
                    }
                    (e >= 0).then_some(e as usize)
                })
                .collect()
        }
    };
    // half-grid columns read by computed nodes, per half row
    let half_end: Vec<usize> = (0..hh).map(|l| row_end[l / 2].map_or(0, |e| (2 * e + 2).min(hw - 1))).collect();
    // 1/c on the half grid start + (h/2)·(k, l)
    let mut inv_c = vec![0.0; half];
    let probe = h / 10.0;
    for l in 0..hh {
        let y = start[1] + 0.5 * h * l as f64;
        for k in 0..=half_end[l] {
            let x = start[0] + 0.5 * h * k as f64;
            let mut c = field.eval([x, y]);
            if opts.nudge {
                let (lo, hi) = field.envelopes([x, y]);
                if lo < hi {
                    for d in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
                        c = c.min(field.eval([x + probe * d[0], y + probe * d[1]]));
                    }
                }
            }
            inv_c[l * hw + k] = 1.0 / c;
        }
    }
    // moves whose ends and midpoint disagree on the side of some curve get
    // an exact line integral instead of the midpoint rule
    let sig: Vec<u64> = if field.has_curves() && field.constant_value().is_none() {
        let mut s = vec![0u64; half];
        for l in 0..hh {
            let y = start[1] + 0.5 * h * l as f64;
            for k in 0..=half_end[l] {
                s[l * hw + k] = field.signature([start[0] + 0.5 * h * k as f64, y]);
            }
        }
        s
    } else {
        Vec::new()
    };

    let moves = short_moves(m);
    let costs: Vec<f64> = moves.iter().map(|&(p, q)| h * gamma_unchecked(p as f64, q as f64)).collect();
    let reach = if opts.long_moves { opts.long_reach.unwrap_or(usize::MAX).min(ni.max(nj)) } else { 0 };
    let long_gamma: Vec<f64> = (0..=reach).map(|p| h * gamma_unchecked(p as f64, 1.0) / p.max(1) as f64).collect();

    // prefix sums of 1/c along half rows (between node rows j−1 and j) and
    // half columns
    let stride = ni + 1;
    let mut row_ps = Vec::new();
    let mut col_ps = Vec::new();
    if reach > m as usize {
        row_ps = vec![0.0; (nj + 1) * (ni + 1)];
        for j in 1..=nj {
            let l = 2 * j - 1;
            for i in 0..ni {
                row_ps[j * stride + i + 1] = row_ps[j * stride + i] + inv_c[l * hw + 2 * i + 1];
            }
        }
        col_ps = vec![0.0; (ni + 1) * (nj + 1)];
        for i in 1..=ni {
            let k = 2 * i - 1;
            for j in 0..nj {
                col_ps[i * (nj + 1) + j + 1] = col_ps[i * (nj + 1) + j] + inv_c[(2 * j + 1) * hw + k];
            }
        }
    }

    // first node of the run of equal signatures ending at each node, along
    // rows (row_run) and along columns (col_run, column-major)
    let mut row_run = Vec::new();
    let mut col_run = Vec::new();
    if reach > m as usize && !sig.is_empty() {
        let node_sig = |i: usize, j: usize| sig[2 * j * hw + 2 * i];
        row_run = vec![0usize; cells];
        for j in 0..=nj {
            for i in 1..=ni {
                row_run[j * stride + i] =
                    if node_sig(i, j) == node_sig(i - 1, j) { row_run[j * stride + i - 1] } else { i };
            }
        }
        col_run = vec![0usize; cells];
        for i in 0..=ni {
            for j in 1..=nj {
                col_run[i * (nj + 1) + j] =
                    if node_sig(i, j) == node_sig(i, j - 1) { col_run[i * (nj + 1) + j - 1] } else { j };
            }
        }
    }

    let mut curve_nodes = if opts.curve_nodes && !sig.is_empty() {
        CurveNodes::new(field, start, h, ni, nj, m as usize)
    } else {
        None
    };
    let mut boost = if curve_nodes.is_some() { vec![f64::NEG_INFINITY; cells] } else { Vec::new() };

    let mut g = vec![if opts.cutoff.is_some() { f64::INFINITY } else { 0.0 }; cells];
    g[0] = 0.0;
    for j in 0..=nj {
        let Some(end) = row_end[j] else { break };
        for i in 0..=end {
            if let Some(cn) = curve_nodes.as_mut() {
                let grid = NodeView { g: &g, inv_c: &inv_c, sig: &sig, hw, stride, ni, nj };
                cn.process_before(j * stride + i, &grid, &mut boost);
            }
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = if boost.is_empty() { f64::NEG_INFINITY } else { boost[j * stride + i] };
            for (mv, &cost) in moves.iter().zip(&costs) {
                let (p, q) = (mv.0 as usize, mv.1 as usize);
                if p <= i && q <= j {
                    let mid = (2 * j - q) * hw + 2 * i - p;
                    let mut w = inv_c[mid];
                    if !sig.is_empty() {
                        let a = (2 * j - 2 * q) * hw + 2 * i - 2 * p;
                        let b = 2 * j * hw + 2 * i;
                        if sig[a] != sig[mid] || sig[b] != sig[mid] {
                            let pa = [start[0] + h * (i - p) as f64, start[1] + h * (j - q) as f64];
                            let pb = [start[0] + h * i as f64, start[1] + h * j as f64];
                            w = field.segment_mean_inv(pa, pb, 2 * p.max(q));
                        }
                    }
                    let v = g[(j - q) * stride + i - p] + cost * w;
                    if v > best {
                        best = v;
                    }
                }
            }
            if reach > m as usize {
                let m = m as usize;
                if j >= 1 && i > m {
                    let ps = &row_ps[j * stride..(j + 1) * stride];
                    let base = (j - 1) * stride;
                    let hi = i.min(reach);
                    // moves starting in the run of nodes that share the end
                    // signature all take the prefix-sum weight
                    let run_end = if sig.is_empty() {
                        hi
                    } else {
                        let a0 = i - m - 1;
                        let sa = sig[2 * (j - 1) * hw + 2 * a0];
                        if sa == sig[2 * j * hw + 2 * i] && !SpeedField::signature_on_curve(sa) {
                            (i - row_run[base + a0]).min(hi)
                        } else {
                            m
                        }
                    };
                    if run_end > m {
                        let (lo, hi) = (i - run_end, i - m);
                        let pi = ps[i];
                        let n = hi - lo;
                        let (gs, pss, lgs) = (&g[base + lo..base + hi], &ps[lo..hi], &long_gamma[m + 1..m + 1 + n]);
                        for k in 0..n {
                            let v = gs[n - 1 - k] + lgs[k] * (pi - pss[n - 1 - k]);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    for p in run_end + 1..=hi {
                        let w = match long_weight(&sig, field, start, h, hw, (i - p, j - 1), (i, j)) {
                            LongWeight::Prefix => ps[i] - ps[i - p],
                            LongWeight::Exact(x) => x * p as f64,
                            LongWeight::Skip => break,
                        };
                        best = best.max(g[base + i - p] + long_gamma[p] * w);
                    }
                }
                if i >= 1 && j > m {
                    let cs = &col_ps[i * (nj + 1)..(i + 1) * (nj + 1)];
                    let hi = j.min(reach);
                    let run_end = if sig.is_empty() {
                        hi
                    } else {
                        let a0 = j - m - 1;
                        let sa = sig[2 * a0 * hw + 2 * (i - 1)];
                        if sa == sig[2 * j * hw + 2 * i] && !SpeedField::signature_on_curve(sa) {
                            (j - col_run[(i - 1) * (nj + 1) + a0]).min(hi)
                        } else {
                            m
                        }
                    };
                    if run_end > m {
                        let (lo, hi) = (j - run_end, j - m);
                        let cj = cs[j];
                        let n = hi - lo;
                        let (css, lgs) = (&cs[lo..hi], &long_gamma[m + 1..m + 1 + n]);
                        for k in 0..n {
                            let v = g[(hi - 1 - k) * stride + i - 1] + lgs[k] * (cj - css[n - 1 - k]);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    for p in run_end + 1..=hi {
                        let w = match long_weight(&sig, field, start, h, hw, (i - 1, j - p), (i, j)) {
                            LongWeight::Prefix => cs[j] - cs[j - p],
                            LongWeight::Exact(x) => x * p as f64,
                            LongWeight::Skip => break,
                        };
                        best = best.max(g[(j - p) * stride + i - 1] + long_gamma[p] * w);
                    }
                }
            }
            g[j * stride + i] = best;
        }
    }
    Ok(ValueGrid { start, h, ni, nj, values: g, move_set: moves, long_reach: reach })
}

/// Read-only view of the grid state shared with [`CurveNodes`].
struct NodeView<'a> {
    g: &'a [f64],
    inv_c: &'a [f64],
    sig: &'a [u64],
    hw: usize,
    stride: usize,
    ni: usize,
    nj: usize,
}

impl NodeView<'_> {
    #[inline]
    fn value(&self, i: usize, j: usize) -> f64 {
        self.g[j * self.stride + i]
    }

    #[inline]
    fn node_sig(&self, i: usize, j: usize) -> u64 {
        self.sig[2 * j * self.hw + 2 * i]
    }

    #[inline]
    fn node_inv_c(&self, i: usize, j: usize) -> f64 {
        self.inv_c[2 * j * self.hw + 2 * i]
    }
}

/// Crossing of a discontinuity line with a grid row or column.
struct CurvePoint {
    /// Offset from the grid start.
    p: [f64; 2],
    sig: u64,
    line: usize,
    /// Previous crossing on the same line, with the mean of `1/c` along the
    /// line between the two.
    prev: Option<(usize, f64)>,
    next: Option<usize>,
    /// Processed just before this node in row-major order.
    key: usize,
    value: f64,
}

/// Extra nodes on straight discontinuity lines of a piecewise-constant field
/// that runs up-right. A path can run along such a line between consecutive
/// crossings and join or leave it at any point of that stretch; the best
/// point has a closed form because every leg lies in one constant region.
/// All added moves are genuine paths with exact weights, so the grid stays a
/// lower bound.
struct CurveNodes {
    field: SpeedField,
    start: [f64; 2],
    h: f64,
    m: usize,
    pts: Vec<CurvePoint>,
    cursor: usize,
}

const SNAP: f64 = 1e-9;

impl CurveNodes {
    fn new(field: &SpeedField, start: [f64; 2], h: f64, ni: usize, nj: usize, m: usize) -> Option<Self> {
        if !field.straight_and_flat() {
            return None;
        }
        let sides = field.line_sides()?;
        if sides.len() > 32 {
            return None;
        }
        let stride = ni + 1;
        let cells = stride * (nj + 1);
        let (eu, ew) = (ni as f64 * h, nj as f64 * h);
        let mut pts: Vec<CurvePoint> = Vec::new();
        for (line, sd) in sides.iter().enumerate() {
            let s0 = sd[0] + sd[1] * start[0] + sd[2] * start[1];
            let (su, sw) = (sd[1], sd[2]);
            // only lines a path can follow
            if su * sw > 0.0 || (su == 0.0 && sw == 0.0) {
                continue;
            }
            let tangent = [sw.abs(), su.abs()];
            let mut on_line: Vec<(f64, [f64; 2])> = Vec::new();
            if su != 0.0 {
                for j in 0..=nj {
                    let w = j as f64 * h;
                    let u = -(s0 + sw * w) / su;
                    if u >= -SNAP * h && u <= eu + SNAP * h {
                        on_line.push((0.0, [u.clamp(0.0, eu), w]));
                    }
                }
            }
            if sw != 0.0 {
                for i in 0..=ni {
                    let u = i as f64 * h;
                    let w = -(s0 + su * u) / sw;
                    if w >= -SNAP * h && w <= ew + SNAP * h {
                        on_line.push((0.0, [u, w.clamp(0.0, ew)]));
                    }
                }
            }
            for e in on_line.iter_mut() {
                e.0 = e.1[0] * tangent[0] + e.1[1] * tangent[1];
            }
            on_line.sort_by(|a, b| a.0.total_cmp(&b.0));
            on_line.dedup_by(|b, a| (b.0 - a.0).abs() <= SNAP * h);
            let mut prev: Option<usize> = None;
            for (_, p) in on_line {
                let abs = [start[0] + p[0], start[1] + p[1]];
                let (fu, fw) = (p[0] / h, p[1] / h);
                let (c, r) = (libm::ceil(fu - SNAP) as usize, libm::ceil(fw - SNAP) as usize);
                let at_node = (fu - c as f64).abs() <= SNAP && (fw - r as f64).abs() <= SNAP;
                let key = r * stride + c + at_node as usize;
                let link = prev.map(|k| {
                    let q: &CurvePoint = &pts[k];
                    let qa = [start[0] + q.p[0], start[1] + q.p[1]];
                    (k, field.segment_mean_inv(qa, abs, 2))
                });
                pts.push(CurvePoint { p, sig: field.signature(abs), line, prev: link, next: None, key, value: f64::NEG_INFINITY });
                prev = Some(pts.len() - 1);
            }
        }
        if pts.is_empty() {
            return None;
        }
        // stable in the order along each line
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by_key(|&k| pts[k].key);
        let mut remap = vec![0usize; pts.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots: Vec<Option<CurvePoint>> = pts.into_iter().map(Some).collect();
        let mut sorted: Vec<CurvePoint> = order.iter().map(|&k| slots[k].take().unwrap()).collect();
        for cp in sorted.iter_mut() {
            if let Some((k, w)) = cp.prev {
                cp.prev = Some((remap[k], w));
            }
        }
        sorted.retain(|cp| cp.key < cells);
        // dropping trailing points cannot break links: keys grow along lines
        for k in 0..sorted.len() {
            if let Some((pk, _)) = sorted[k].prev {
                sorted[pk].next = Some(k);
            }
        }
        Some(Self { field: field.clone(), start, h, m, pts: sorted, cursor: 0 })
    }

    fn abs(&self, p: [f64; 2]) -> [f64; 2] {
        [self.start[0] + p[0], self.start[1] + p[1]]
    }

    /// Mean of `1/c` on the leg between a grid node and a curve point.
    fn leg(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        gamma_unchecked(b[0] - a[0], b[1] - a[1]) * self.field.segment_mean_inv(self.abs(a), self.abs(b), 2)
    }

    /// `1/c` on the open triangle spanned by a stretch of line `line` with
    /// ends `sa`, `sb` and the node `(i, j)`, when that triangle lies in one
    /// region.
    fn triangle_inv(&self, grid: &NodeView, line: usize, sa: u64, sb: u64, i: usize, j: usize) -> Option<f64> {
        let sn = grid.node_sig(i, j);
        let mask = !(3u64 << (2 * line));
        if SpeedField::signature_on_curve(sn) || (sn ^ sa) & mask != 0 || (sn ^ sb) & mask != 0 {
            return None;
        }
        Some(grid.node_inv_c(i, j))
    }

    fn process_before(&mut self, key: usize, grid: &NodeView, boost: &mut [f64]) {
        while self.cursor < self.pts.len() && self.pts[self.cursor].key <= key {
            let k = self.cursor;
            self.cursor += 1;
            let v = self.pull(k, grid);
            self.pts[k].value = v;
            if v.is_finite() {
                self.push(k, grid, boost);
            }
        }
    }

    fn pull(&self, k: usize, grid: &NodeView) -> f64 {
        let h = self.h;
        let cp = &self.pts[k];
        let p = cp.p;
        let (c0, r0) = (libm::floor(p[0] / h + SNAP) as usize, libm::floor(p[1] / h + SNAP) as usize);
        let (c0, r0) = (c0.min(grid.ni), r0.min(grid.nj));
        let mut v = f64::NEG_INFINITY;
        for jj in r0.saturating_sub(self.m)..=r0 {
            for ii in c0.saturating_sub(self.m)..=c0 {
                let n = [ii as f64 * h, jj as f64 * h];
                if n[0] <= p[0] + SNAP * h && n[1] <= p[1] + SNAP * h {
                    let leg = [p[0].max(n[0]), p[1].max(n[1])];
                    v = v.max(grid.value(ii, jj) + self.leg(n, leg));
                }
            }
        }
        let Some((pk, w_line)) = cp.prev else { return v };
        let a = &self.pts[pk];
        if !a.value.is_finite() {
            return v;
        }
        let d = [p[0] - a.p[0], p[1] - a.p[1]];
        let along = gamma_unchecked(d[0].max(0.0), d[1].max(0.0)) * w_line;
        v = v.max(a.value + along);
        // join the stretch a → p anywhere from the row or column below it
        let (cl, rb) = (libm::floor(a.p[0] / h + SNAP) as usize, libm::floor(a.p[1] / h + SNAP) as usize);
        let sources = (0..=c0).map(|ii| (ii, rb.min(grid.nj))).chain((0..=r0).map(|jj| (cl.min(grid.ni), jj)));
        for (ii, jj) in sources {
            let Some(w) = self.triangle_inv(grid, cp.line, a.sig, cp.sig, ii, jj) else { continue };
            let (x0, y0) = (a.p[0] - ii as f64 * h, a.p[1] - jj as f64 * h);
            let lo = [(x0, d[0]), (y0, d[1])]
                .iter()
                .map(|&(z, dz)| if z >= 0.0 { 0.0 } else if dz > 0.0 { -z / dz } else { f64::INFINITY })
                .fold(0.0, f64::max);
            if lo > 1.0 {
                continue;
            }
            let best = concave_leg_max(-along, w, x0, y0, d[0], d[1], lo, 1.0);
            v = v.max(grid.value(ii, jj) + along + best);
        }
        v
    }

    fn push(&self, k: usize, grid: &NodeView, boost: &mut [f64]) {
        let h = self.h;
        let cp = &self.pts[k];
        let p = cp.p;
        let (c, r) = (libm::ceil(p[0] / h - SNAP) as usize, libm::ceil(p[1] / h - SNAP) as usize);
        for jj in r..=(r + self.m).min(grid.nj) {
            for ii in c..=(c + self.m).min(grid.ni) {
                let n = [ii as f64 * h, jj as f64 * h];
                let leg = [p[0].min(n[0]), p[1].min(n[1])];
                let idx = jj * grid.stride + ii;
                boost[idx] = boost[idx].max(cp.value + self.leg(leg, n));
            }
        }
        // the stretch to the next crossing, which starts here
        let Some(nk) = cp.next else { return };
        let (a, b) = (cp, &self.pts[nk]);
        let w_line = b.prev.unwrap().1;
        let d = [b.p[0] - a.p[0], b.p[1] - a.p[1]];
        let along = gamma_unchecked(d[0].max(0.0), d[1].max(0.0)) * w_line;
        // leave the stretch a → b anywhere towards the row or column above it
        let (c, r) = (libm::ceil(b.p[0] / h - SNAP) as usize, libm::ceil(b.p[1] / h - SNAP) as usize);
        let (cs, rs) = (libm::ceil(a.p[0] / h - SNAP) as usize, libm::ceil(a.p[1] / h - SNAP) as usize);
        let (r, c) = (r.min(grid.nj), c.min(grid.ni));
        let targets = (cs..=grid.ni).map(|ii| (ii, r)).chain((rs..=grid.nj).map(|jj| (c, jj)));
        for (ii, jj) in targets {
            let Some(w) = self.triangle_inv(grid, a.line, a.sig, b.sig, ii, jj) else { continue };
            let (x0, y0) = (ii as f64 * h - a.p[0], jj as f64 * h - a.p[1]);
            if x0 < 0.0 || y0 < 0.0 {
                continue;
            }
            let hi = [(x0, d[0]), (y0, d[1])]
                .iter()
                .map(|&(z, dz)| if dz > 0.0 { z / dz } else { f64::INFINITY })
                .fold(1.0, f64::min);
            let best = concave_leg_max(along, w, x0, y0, -d[0], -d[1], 0.0, hi);
            let idx = jj * grid.stride + ii;
            boost[idx] = boost[idx].max(a.value + best);
        }
    }
}

/// Maximum over `μ ∈ [lo, hi]` of `α·μ + w·γ(x₀ + μ·dx, y₀ + μ·dy)`, which is
/// concave in `μ`. Stationary points solve a quadratic in `s = √(y/x)`.
fn concave_leg_max(alpha: f64, w: f64, x0: f64, y0: f64, dx: f64, dy: f64, lo: f64, hi: f64) -> f64 {
    let f = |mu: f64| alpha * mu + w * gamma_unchecked((x0 + mu * dx).max(0.0), (y0 + mu * dy).max(0.0));
    let mut best = f(lo).max(f(hi));
    let (a2, b2, c2) = (dx, dx + dy + alpha / w, dy);
    let mut roots = [f64::NAN; 2];
    if a2.abs() <= 1e-300 {
        if b2 != 0.0 {
            roots[0] = -c2 / b2;
        }
    } else {
        let disc = b2 * b2 - 4.0 * a2 * c2;
        if disc >= 0.0 {
            let sq = libm::sqrt(disc);
            roots = [(-b2 + sq) / (2.0 * a2), (-b2 - sq) / (2.0 * a2)];
        }
    }
    for s in roots {
        if s > 0.0 {
            let s2 = s * s;
            let den = dy - s2 * dx;
            if den != 0.0 {
                let mu = (s2 * x0 - y0) / den;
                if mu > lo && mu < hi {
                    best = best.max(f(mu));
                }
            }
        }
    }
    best
}

enum LongWeight {
    Prefix,
    Exact(f64),
    Skip,
}

/// Long moves crossing a curve are dropped (short moves carry paths across);
/// those touching a curve are integrated exactly. A row or column meets a
/// line or monotone graph at most once, so every longer move crosses too.
#[inline]
fn long_weight(
    sig: &[u64],
    field: &SpeedField,
    start: [f64; 2],
    h: f64,
    hw: usize,
    a: (usize, usize),
    b: (usize, usize),
) -> LongWeight {
    if sig.is_empty() {
        return LongWeight::Prefix;
    }
    let (sa, sb) = (sig[2 * a.1 * hw + 2 * a.0], sig[2 * b.1 * hw + 2 * b.0]);
    if sa == sb && !SpeedField::signature_on_curve(sa) {
        return LongWeight::Prefix;
    }
    if SpeedField::signatures_cross(sa, sb) {
        return LongWeight::Skip;
    }
    let pa = [start[0] + h * a.0 as f64, start[1] + h * a.1 as f64];
    let pb = [start[0] + h * b.0 as f64, start[1] + h * b.1 as f64];
    let n = (b.0 - a.0).max(b.1 - a.1);
    LongWeight::Exact(field.segment_mean_inv(pa, pb, 2 * n))
}

/// Level curve from a grid rooted at its start. `t_bracket` is an upper
/// bracket scale `t·r_high`.
pub fn level_from_grid(grid: &ValueGrid, r: f64, t: f64, t_bracket: f64, tol: f64) -> Result<f64> {
    let beta = (-r).max(0.0);
    let at = |y: f64| grid.interpolate(r + y, y);
    let base = at(beta).ok_or(Error::CapReached { what: "level-curve grid extent", limit: grid.extent()[0] })?;
    if base >= t {
        return Ok(beta);
    }
    let mut hi = (t_bracket * psi(r / t_bracket)).max(beta);
    let cap = grid.extent()[1].min(grid.extent()[0] - r);
    loop {
        match at(hi) {
            Some(v) if v >= t => break,
            _ => {}
        }
        if hi >= cap {
            return Err(Error::CapReached { what: "level-curve bracket", limit: cap });
        }
        hi = (beta + 1.25 * (hi - beta) + grid.h).min(cap);
    }
    let mut lo = beta;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if at(mid).unwrap_or(f64::INFINITY) >= t {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Default bisection tolerance for level curves.
pub const LEVEL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum MemoKey {
    Line(i64),
    Point(i64, i64),
}

fn quantize(x: f64) -> i64 {
    libm::round(x * (1u64 << 40) as f64) as i64
}

fn dequantize(k: i64) -> f64 {
    k as f64 / (1u64 << 40) as f64
}

/// Level curves `g` rooted anywhere, with Γ grids memoised per distinct
/// shifted field. Fields that are constant on the relevant box use the
/// closed form.
pub struct LevelSolver {
    field: SpeedField,
    pub t_max: f64,
    pub h: f64,
    pub tol: f64,
    pub margin: f64,
    pub opts: ShapeOptions,
    r_high: f64,
    kind: FieldKind,
    memo: Mutex<BTreeMap<MemoKey, Arc<ValueGrid>>>,
}

impl core::fmt::Debug for LevelSolver {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LevelSolver")
            .field("field", &self.field)
            .field("t_max", &self.t_max)
            .field("h", &self.h)
            .field("grids", &self.memo.lock().len())
            .finish()
    }
}

impl LevelSolver {
    /// `field` is the LPP-frame speed `c`. Queries with `t ≤ t_max` are
    /// answered from one grid per shifted field.
    pub fn new(field: &SpeedField, t_max: f64, h: f64, tol: f64) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(invalid("t", "must be positive"));
        }
        if !(h > 0.0) || !(tol > 0.0) {
            return Err(invalid("h", "grid spacing and tolerance must be positive"));
        }
        let (_, r_high) = field.bounds_on(Rect::new(-64.0, 64.0, -64.0, 64.0))?;
        Ok(Self {
            field: field.clone(),
            t_max,
            h,
            tol,
            margin: 0.1,
            opts: ShapeOptions::default(),
            r_high,
            kind: field.kind(),
            memo: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn field(&self) -> &SpeedField {
        &self.field
    }

    pub fn r_high(&self) -> f64 {
        self.r_high
    }

    /// Number of Γ grids built so far.
    pub fn grids_built(&self) -> usize {
        self.memo.lock().len()
    }

    fn extent(&self) -> f64 {
        self.t_max * self.r_high * (1.0 + self.margin) + 2.0 * self.h
    }

    /// Canonical root and memo key for the shift `root`.
    fn key(&self, root: [f64; 2]) -> (MemoKey, [f64; 2]) {
        match self.kind {
            FieldKind::Directional(l) => {
                let k = quantize(l[0] * root[0] + l[1] * root[1]);
                let s = dequantize(k);
                let canon = if l[0].abs() >= l[1].abs() { [s / l[0], 0.0] } else { [0.0, s / l[1]] };
                (MemoKey::Line(k), canon)
            }
            _ => {
                let (a, b) = (quantize(root[0]), quantize(root[1]));
                (MemoKey::Point(a, b), [dequantize(a), dequantize(b)])
            }
        }
    }

    fn grid(&self, root: [f64; 2]) -> Result<Arc<ValueGrid>> {
        let (key, canon) = self.key(root);
        if let Some(g) = self.memo.lock().get(&key) {
            return Ok(g.clone());
        }
        let e = self.extent();
        let mut opts = self.opts.clone();
        // queries never need Γ above the horizon
        opts.cutoff = opts.cutoff.or(Some(self.t_max * (1.0 + 1e-9)));
        let g = Arc::new(shape_grid(&self.field, canon, [e, e], self.h, &opts)?);
        Ok(self.memo.lock().entry(key).or_insert(g).clone())
    }

    /// Constant speed on the box reachable from `root` before level `t`.
    fn box_constant(&self, root: [f64; 2], t: f64) -> Result<Option<f64>> {
        if let FieldKind::Constant(c) = self.kind {
            return Ok(Some(c));
        }
        let e = t * self.r_high * (1.0 + self.margin);
        let rect = Rect::new(root[0], root[0] + e, root[1], root[1] + e);
        if self.field.straight_and_flat() {
            return Ok(self.field.constant_on(rect));
        }
        let (lo, hi) = self.field.bounds_on(rect)?;
        Ok(if lo == hi { Some(lo) } else { None })
    }

    /// `g(r, t)` for the field shifted so that `root` is the origin.
    pub fn g_root(&self, root: [f64; 2], r: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid("t", "must be positive"));
        }
        if t > self.t_max * (1.0 + 1e-12) {
            return Err(invalid("t", "exceeds the solver's t_max"));
        }
        let bracket = t * self.r_high;
        // Γ ≥ |r| / r_high along the wedge floor.
        if r >= bracket {
            return Ok(0.0);
        }
        if r <= -bracket {
            return Ok(-r);
        }
        if let Some(c0) = self.box_constant(root, t)? {
            return Ok(level_closed_form(c0, r, t));
        }
        let grid = self.grid(root)?;
        level_from_grid(&grid, r, t, bracket, self.tol)
    }

    /// `g^q(r, t)` with root `(q − v₀(q), −v₀(q))`.
    pub fn g(&self, q: f64, v0q: f64, r: f64, t: f64) -> Result<f64> {
        self.g_root([q - v0q, -v0q], r, t)
    }

    /// `Γ` of the field shifted by `root`, at `(u, w)`; `+∞` where it
    /// clearly exceeds `t_max`.
    pub fn gamma_root(&self, root: [f64; 2], u: f64, w: f64) -> Result<f64> {
        if let FieldKind::Constant(c) = self.kind {
            return Ok(shape_closed_form(c, u, w));
        }
        let grid = self.grid(root)?;
        grid.interpolate(u, w).ok_or(Error::CapReached { what: "shape grid extent", limit: self.extent() })
    }
}

/// Sampled level curve `x ↦ g^q(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    pub q: f64,
    pub v0q: f64,
    pub t: f64,
    pub samples: Vec<(f64, f64)>,
}

pub fn level_curve(solver: &LevelSolver, q: f64, v0q: f64, t: f64, xs: &[f64]) -> Result<LevelCurve> {
    let samples = xs.iter().map(|&x| Ok((x, solver.g(q, v0q, x, t)?))).collect::<Result<Vec<_>>>()?;
    Ok(LevelCurve { q, v0q, t, samples })
}

/// Outcome of one level-curve subadditivity configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubadditivityCase {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// `g^{q0}(q − q0, t − s) + ḡ(x − q, s) ≥ g^{q0}(x − q0, t)`, where `ḡ` is
/// the level curve restarted at the particle-frame point reached by the
/// first curve above `q`.
pub fn subadditivity_case(
    solver: &LevelSolver,
    v0: &dyn Fn(f64) -> f64,
    q0: f64,
    q: f64,
    x: f64,
    t: f64,
    s: f64,
) -> Result<SubadditivityCase> {
    if !(s > 0.0 && s < t) {
        return Err(invalid("s", "restart time must lie in (0, t)"));
    }
    let v0q0 = v0(q0);
    let y1 = solver.g(q0, v0q0, q - q0, t - s)?;
    // particle point (q, y1 − v₀(q0)) is the LPP point (q + y, y)
    let y = y1 - v0q0;
    let g_bar = solver.g_root([q + y, y], x - q, s)?;
    let lhs = y1 + g_bar;
    let rhs = solver.g(q0, v0q0, x - q0, t)?;
    Ok(SubadditivityCase { lhs, rhs, slack: lhs - rhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(gamma(1.0, 1.0).unwrap(), 4.0);
        assert_eq!(gamma(3.0, 0.0).unwrap(), 3.0);
        assert_eq!(gamma(4.0, 1.0).unwrap(), 9.0);
        assert!(gamma(-1.0, 0.0).is_err());
        assert_eq!(psi(0.0), 0.25);
        assert_eq!(psi(-2.0), 2.0);
        assert_eq!(psi(1.0), 0.0);
        assert_eq!(psi(3.0), 0.0);
    }

    #[test]
    fn level_set_identity() {
        for k in 0..=200 {
            let x = -1.0 + k as f64 / 100.0;
            let v = gamma(x + psi(x), psi(x)).unwrap();
            assert!((v - 1.0).abs() <= 1e-12, "{x}: {v}");
        }
    }

    #[test]
    fn move_bounds() {
        assert_eq!(move_bound(1.0 / 100.0), 8);
        assert_eq!(move_bound(1.0 / 200.0), 11);
        assert!(short_moves(1).contains(&(1, 0)));
        assert!(short_moves(4).contains(&(3, 4)));
        assert!(!short_moves(4).contains(&(2, 4)));
    }

    #[test]
    fn homogeneous_grid_close_to_closed_form() {
        let c = SpeedField::constant(1.0).unwrap();
        let g = shape_grid(&c, [0.0, 0.0], [1.0, 1.0], 1.0 / 100.0, &ShapeOptions::default()).unwrap();
        let v = g.interpolate(1.0, 1.0).unwrap();
        assert!((v - 4.0).abs() < 0.08, "{v}");
        // representable directions are exact
        assert!((g.interpolate(1.0, 0.5).unwrap() - gamma(1.0, 0.5).unwrap()).abs() < 1e-12);
        assert!((g.interpolate(1.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_speed_scales_values() {
        let a = shape_grid(&SpeedField::constant(1.0).unwrap(), [0.0, 0.0], [0.5, 0.5], 0.05, &ShapeOptions::default())
            .unwrap();
        let b = shape_grid(&SpeedField::constant(2.0).unwrap(), [0.0, 0.0], [0.5, 0.5], 0.05, &ShapeOptions::default())
            .unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(*y, x / 2.0);
        }
    }

    #[test]
    fn homogeneous_level_curve_examples() {
        let c = SpeedField::constant(1.0).unwrap();
        let s = LevelSolver::new(&c, 1.0, 0.01, LEVEL_TOL).unwrap();
        assert_eq!(s.g(0.0, 0.0, 0.0, 1.0).unwrap(), 0.25);
        assert_eq!(s.g(0.0, 0.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(s.g(0.0, 0.0, -2.0, 1.0).unwrap(), 2.0);
        assert_eq!(s.grids_built(), 0);
    }

    #[test]
    fn grid_level_curve_matches_closed_form() {
        // a two-phase field whose interface is far away behaves like c ≡ 1
        // on the box, but force the grid path with a general field
        let c = SpeedField::bump(2.0, 1e-9).unwrap();
        let s = LevelSolver::new(&c, 1.0, 1.0 / 64.0, 1e-9).unwrap();
        for r in [-0.5, 0.0, 0.7] {
            let g = s.g(0.0, 0.0, r, 1.0).unwrap();
            let exact = level_closed_form(2.0, r, 1.0);
            assert!((g - exact).abs() < 0.01, "{r}: {g} vs {exact}");
        }
        assert_eq!(s.grids_built(), 1);
    }

    #[test]
    fn level_curve_is_monotone() {
        let c = SpeedField::xstep(1.0, 3.0, 0.0).unwrap().unshear();
        let s = LevelSolver::new(&c, 1.0, 1.0 / 32.0, LEVEL_TOL).unwrap();
        let xs: Vec<f64> = (0..41).map(|k| -2.0 + 0.1 * k as f64).collect();
        let lc = level_curve(&s, 0.0, 0.0, 1.0, &xs).unwrap();
        assert!(lc.samples.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        let lc2 = level_curve(&s, 0.0, 0.0, 0.5, &xs).unwrap();
        assert!(lc.samples.iter().zip(&lc2.samples).all(|(a, b)| b.1 <= a.1 + 1e-12));
        assert!(lc.samples.iter().all(|&(x, g)| g >= (-x).max(0.0) - 1e-12));
    }

    #[test]
    fn spatial_fields_share_grids_along_the_line() {
        let c = SpeedField::xstep(1.0, 3.0, 0.0).unwrap().unshear();
        let s = LevelSolver::new(&c, 1.0, 1.0 / 16.0, LEVEL_TOL).unwrap();
        let a = s.g(0.25, 0.0, 0.1, 1.0).unwrap();
        let b = s.g(0.25, 0.75, 0.1, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.grids_built(), 1);
    }
}
