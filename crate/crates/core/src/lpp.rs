//! Seeded exponential environments and last-passage times.
//!
//! The environment is one family of rate-one exponentials `E(seed, i, j)`
//! indexed by particle coordinates. The LPP weight at `(u, w)` and the TASEP
//! clock at `(i, j) = (u − w, w)` are the same random variable:
//!
//! ```text
//! weight(u, w) = E(seed, u − w, w) / c(u/n, w/n)
//! clock(i, j)  = weight(i + j, j)
//! ```
//!
//! so the particle system and the corner growth model can be compared
//! exactly in floating point.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::rng::{hash_key, replica_seed, std_exponential, STREAM_CLOCK};
use crate::stats::mean_stderr;
use crate::{Error, Result, SpeedField};

/// Default cap on dense grid storage.
pub const DEFAULT_MEM_CAP: usize = 1 << 30;

/// Largest supported absolute lattice coordinate.
pub const MAX_INDEX: i64 = 1 << 62;

#[derive(Debug, Clone)]
pub struct Environment {
    pub seed: u64,
    pub n: u64,
    /// LPP-frame speed `c`.
    pub field: Arc<SpeedField>,
    /// Lattice shift `(a, b)`: site `(u, w)` reads the unshifted weight at
    /// `(u + a, w + b)`.
    pub origin_shift: (i64, i64),
}

impl Environment {
    pub fn new(seed: u64, n: u64, field: Arc<SpeedField>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "scale must be positive"));
        }
        Ok(Self { seed, n, field, origin_shift: (0, 0) })
    }

    /// Same randomness, origin moved by `(a, b)`.
    pub fn shifted(&self, a: i64, b: i64) -> Self {
        let (a0, b0) = self.origin_shift;
        Self { origin_shift: (a0 + a, b0 + b), ..self.clone() }
    }

    /// Same field and scale, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// LPP weight at site `(u, w)`, mean `1/c(u/n, w/n)` (after the shift).
    #[inline]
    pub fn weight(&self, u: i64, w: i64) -> f64 {
        let (u, w) = (u + self.origin_shift.0, w + self.origin_shift.1);
        let e = std_exponential(hash_key(self.seed, STREAM_CLOCK, u - w, w));
        let nf = self.n as f64;
        e / self.field.eval([u as f64 / nf, w as f64 / nf])
    }

    /// TASEP clock for the drop of `z_i` from level `−j` to `−j − 1`, with
    /// rate `c̃(i/n, j/n)`.
    #[inline]
    pub fn clock(&self, i: i64, j: i64) -> f64 {
        self.weight(i + j, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Corner,
    Wedge,
}

/// Last-passage values `G(start, v)` for `v` in
/// `start + [0, width] × [0, height]`, row-major in `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageGrid {
    pub start: (i64, i64),
    pub extent: (usize, usize),
    pub values: Vec<f64>,
    pub frame: Frame,
}

impl PassageGrid {
    /// Value at the absolute site `(u, w)`.
    pub fn get(&self, u: i64, w: i64) -> Option<f64> {
        let du = u.checked_sub(self.start.0)?;
        let dw = w.checked_sub(self.start.1)?;
        if du < 0 || dw < 0 || du as usize > self.extent.0 || dw as usize > self.extent.1 {
            return None;
        }
        Some(self.values[dw as usize * (self.extent.0 + 1) + du as usize])
    }

    /// Terminal value `G(start, start + extent)`.
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

fn check_extent(start: (i64, i64), extent: (usize, usize)) -> Result<usize> {
    let (w, h) = extent;
    let fits = |s: i64, e: usize| {
        (e as u64) < MAX_INDEX as u64 && s.abs() < MAX_INDEX && (s + e as i64).abs() < MAX_INDEX
    };
    if !fits(start.0, w) || !fits(start.1, h) {
        return Err(Error::ExtentOverflow);
    }
    (w + 1).checked_mul(h + 1).ok_or(Error::ExtentOverflow)
}

/// Dense last-passage grid with an arbitrary weight function of the
/// absolute site.
pub fn passage_rect_with<F: FnMut(i64, i64) -> f64>(
    start: (i64, i64),
    extent: (usize, usize),
    mem_cap_bytes: usize,
    mut weight: F,
) -> Result<PassageGrid> {
    let cells = check_extent(start, extent)?;
    let bytes = cells.checked_mul(8).ok_or(Error::ExtentOverflow)?;
    if bytes > mem_cap_bytes {
        return Err(Error::MemoryBudget { requested_bytes: bytes, cap_bytes: mem_cap_bytes });
    }
    let stride = extent.0 + 1;
    let mut values = vec![0.0; cells];
    for dw in 0..=extent.1 {
        for du in 0..=extent.0 {
            let left = if du > 0 { values[dw * stride + du - 1] } else { f64::NEG_INFINITY };
            let down = if dw > 0 { values[(dw - 1) * stride + du] } else { f64::NEG_INFINITY };
            let best = if du == 0 && dw == 0 { 0.0 } else { left.max(down) };
            values[dw * stride + du] = best + weight(start.0 + du as i64, start.1 + dw as i64);
        }
    }
    Ok(PassageGrid { start, extent, values, frame: Frame::Corner })
}

/// Dense last-passage grid over the environment.
pub fn passage_rect(
    env: &Environment,
    start: (i64, i64),
    extent: (usize, usize),
    mem_cap_bytes: usize,
) -> Result<PassageGrid> {
    passage_rect_with(start, extent, mem_cap_bytes, |u, w| env.weight(u, w))
}

/// Terminal value only, with one row of storage.
pub fn passage_terminal(env: &Environment, start: (i64, i64), extent: (usize, usize)) -> Result<f64> {
    check_extent(start, extent)?;
    let mut row = vec![f64::NEG_INFINITY; extent.0 + 1];
    for dw in 0..=extent.1 {
        let w = start.1 + dw as i64;
        let mut left = f64::NEG_INFINITY;
        for (du, cell) in row.iter_mut().enumerate() {
            let best = if du == 0 && dw == 0 { 0.0 } else { left.max(*cell) };
            let v = best + env.weight(start.0 + du as i64, w);
            *cell = v;
            left = v;
        }
    }
    Ok(row[extent.0])
}

/// Passage times `L(i, j)` on the wedge `{j ≥ −i·1{i ≤ 0}}` rooted at the
/// environment origin, for `j ∈ [0, j_max]` and `i ≤ i_max`. Boundary
/// values are zero; interior values follow
/// `L(i, j) = max(L(i − 1, j), L(i + 1, j − 1)) + ω(i, j)` with
/// `ω(i, j) = weight(i + j, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeGrid {
    pub i_max: i64,
    pub j_max: i64,
    /// Row `j` (from 1) holds `i ∈ [1 − j, i_max + j_max − j]`.
    rows: Vec<Vec<f64>>,
}

impl WedgeGrid {
    /// `L(i, j)`; zero on the boundary, error below it.
    pub fn get(&self, i: i64, j: i64) -> Result<f64> {
        let b = if i <= 0 { -i } else { 0 };
        if j < b {
            return Err(Error::OutsideWedge { i, j });
        }
        if j == b {
            return Ok(0.0);
        }
        if j > self.j_max || i > self.i_max + self.j_max - j {
            return Err(invalid("site", "outside the computed wedge window"));
        }
        Ok(self.rows[(j - 1) as usize][(i - (1 - j)) as usize])
    }
}

pub fn passage_wedge(env: &Environment, i_max: i64, j_max: i64) -> Result<WedgeGrid> {
    if j_max < 0 || i_max < 0 {
        return Err(invalid("wedge extent", "i_max and j_max must be nonnegative"));
    }
    check_extent((1, 1), ((i_max + j_max) as usize, j_max as usize))?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(j_max as usize);
    for j in 1..=j_max {
        let lo = 1 - j;
        let hi = i_max + j_max - j;
        let mut row = Vec::with_capacity((hi - lo + 1) as usize);
        for i in lo..=hi {
            // (i − 1, j) is on the boundary when i − 1 = −j.
            let left = if i - 1 < lo { 0.0 } else { row[(i - 1 - lo) as usize] };
            let below = if j == 1 {
                0.0
            } else {
                let prev: &Vec<f64> = &rows[(j - 2) as usize];
                prev[(i + 1 - (2 - j)) as usize]
            };
            let v: f64 = if left > below { left } else { below };
            row.push(v + env.weight(i + j, j));
        }
        rows.push(row);
    }
    Ok(WedgeGrid { i_max, j_max, rows })
}

/// One line of an LLN table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlnRow {
    pub n: u64,
    pub replica: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnTable {
    pub rows: Vec<LlnRow>,
    /// `(n, mean, stderr)` per scale.
    pub summary: Vec<(u64, f64, f64)>,
}

/// `G((⌊na⌋, ⌊nb⌋), (⌊nx⌋, ⌊ny⌋)) / n` for each scale and replica.
/// Replica `r` uses seed `replica_seed(seed, r)`.
pub fn lln_estimate(
    field: Arc<SpeedField>,
    seed: u64,
    start: (f64, f64),
    target: (f64, f64),
    n_list: &[u64],
    replicas: u64,
) -> Result<LlnTable> {
    if !(target.0 >= start.0 && target.1 >= start.1) {
        return Err(invalid("target", "must dominate the start point"));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &n in n_list {
        let nf = n as f64;
        let s = (libm::floor(nf * start.0) as i64, libm::floor(nf * start.1) as i64);
        let e = (libm::floor(nf * target.0) as i64, libm::floor(nf * target.1) as i64);
        let extent = ((e.0 - s.0).max(0) as usize, (e.1 - s.1).max(0) as usize);
        let mut vals = Vec::with_capacity(replicas as usize);
        for r in 0..replicas {
            let env = Environment::new(replica_seed(seed, r), n, field.clone())?;
            let value = passage_terminal(&env, s, extent)? / nf;
            rows.push(LlnRow { n, replica: r, value });
            vals.push(value);
        }
        let (m, se) = mean_stderr(&vals);
        summary.push((n, m, se));
    }
    Ok(LlnTable { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, STREAM_AUX};

    fn env(c: f64, seed: u64, n: u64) -> Environment {
        Environment::new(seed, n, Arc::new(SpeedField::constant(c).unwrap())).unwrap()
    }

    fn brute(w: &dyn Fn(i64, i64) -> f64, a: i64, b: i64) -> f64 {
        // all monotone paths from (0,0) to (a,b)
        fn go(w: &dyn Fn(i64, i64) -> f64, u: i64, v: i64, a: i64, b: i64) -> f64 {
            let here = w(u, v);
            if u == a && v == b {
                return here;
            }
            let mut best = f64::NEG_INFINITY;
            if u < a {
                best = best.max(go(w, u + 1, v, a, b));
            }
            if v < b {
                best = best.max(go(w, u, v + 1, a, b));
            }
            here + best
        }
        go(w, 0, 0, a, b)
    }

    #[test]
    fn two_by_two_example() {
        let t = |u: i64, w: i64| [[1.0, 3.0], [2.0, 1.0]][u as usize][w as usize];
        let g = passage_rect_with((0, 0), (1, 1), DEFAULT_MEM_CAP, t).unwrap();
        assert_eq!(g.get(1, 1), Some(5.0));
        let row = passage_rect_with((0, 0), (2, 0), DEFAULT_MEM_CAP, |_, _| 1.0).unwrap();
        assert_eq!(row.get(2, 0), Some(3.0));
    }

    #[test]
    fn dp_matches_brute_force() {
        let mut rng = CounterRng::new(5, STREAM_AUX);
        for trial in 0..200 {
            let a = (trial % 7) as i64;
            let b = ((trial / 7) % (13 - a as usize)) as i64;
            let b = b.min(12 - a);
            // dyadic weights keep every partial sum exact
            let ws: Vec<f64> = (0..(a + 1) * (b + 1)).map(|_| (rng.next_u64() % 64) as f64 / 8.0).collect();
            let w = |u: i64, v: i64| ws[(v * (a + 1) + u) as usize];
            let g = passage_rect_with((0, 0), (a as usize, b as usize), DEFAULT_MEM_CAP, w).unwrap();
            assert_eq!(g.terminal(), brute(&w, a, b));
        }
    }

    #[test]
    fn terminal_matches_full_grid() {
        let e = env(1.0, 3, 50);
        let g = passage_rect(&e, (-4, 7), (30, 20), DEFAULT_MEM_CAP).unwrap();
        assert_eq!(g.terminal(), passage_terminal(&e, (-4, 7), (30, 20)).unwrap());
    }

    #[test]
    fn scaling_by_constant_speed_is_exact() {
        let (a, b) = (env(1.0, 9, 10), env(2.0, 9, 10));
        for (u, w) in [(0, 0), (3, -7), (100, 2)] {
            assert_eq!(b.weight(u, w), a.weight(u, w) / 2.0);
        }
    }

    #[test]
    fn memory_cap_enforced() {
        let e = env(1.0, 1, 1);
        assert!(matches!(passage_rect(&e, (0, 0), (999, 999), 1000), Err(Error::MemoryBudget { .. })));
        assert_eq!(passage_rect(&e, (0, 0), (usize::MAX / 2, 3), usize::MAX), Err(Error::ExtentOverflow));
    }

    #[test]
    fn wedge_matches_corner_after_index_map() {
        let field = Arc::new(SpeedField::xstep(1.0, 3.0, 0.0).unwrap().unshear());
        let e = Environment::new(17, 10, field).unwrap().shifted(-3, 2);
        let wedge = passage_wedge(&e, 12, 15).unwrap();
        let rect = passage_rect(&e, (1, 1), (26, 14), DEFAULT_MEM_CAP).unwrap();
        let mut rng = CounterRng::new(2, STREAM_AUX);
        for _ in 0..100 {
            let j = 1 + (rng.next_u64() % 15) as i64;
            let i = 1 - j + (rng.next_u64() % (12 + 15 - j + j) as u64) as i64;
            let i = i.min(12 + 15 - j);
            assert_eq!(wedge.get(i, j).unwrap(), rect.get(i + j, j).unwrap());
        }
        for i in -5..5 {
            assert_eq!(wedge.get(i, if i <= 0 { -i } else { 0 }).unwrap(), 0.0);
        }
        assert_eq!(wedge.get(0, 1).unwrap(), e.weight(1, 1));
        assert!(matches!(wedge.get(-3, 2), Err(Error::OutsideWedge { .. })));
    }

    #[test]
    fn weights_are_order_independent() {
        let e = env(1.0, 4, 10);
        let a: Vec<f64> = (0..50).map(|k| e.weight(k, 2 * k)).collect();
        let b: Vec<f64> = (0..50).rev().map(|k| e.weight(k, 2 * k)).collect();
        assert!(a.iter().eq(b.iter().rev()));
    }
}
