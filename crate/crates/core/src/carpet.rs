//! Generalized Sierpinski carpets: parameters, cell addressing, the
//! graphical carpet on a level-`n` box, and its plain-text export format.
//!
//! Membership is decided digit by digit in base `k` with exact integer
//! arithmetic. A cell of the level-`n` box `[0, k^n)^d` survives iff none of
//! its `n` digit vectors lies entirely inside the central digit range.

use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{Error, ParamError, Result};
use crate::network::{LatticeGraph, Network};

/// Default refusal threshold for graph construction.
pub const DEFAULT_VERTEX_BUDGET: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CarpetParams {
    d: usize,
    k: u64,
    a: u64,
}

/// Checks `d >= 2`, `1 <= a < k` and `a + k` even.
pub fn validate_params(d: i64, k: i64, a: i64) -> Result<CarpetParams, ParamError> {
    if d < 2 {
        return Err(ParamError::Dimension(d));
    }
    if a < 1 || a >= k {
        return Err(ParamError::BlockSide { k, a });
    }
    if (a + k) % 2 != 0 {
        return Err(ParamError::Parity { sum: a + k });
    }
    Ok(CarpetParams {
        d: d as usize,
        k: k as u64,
        a: a as u64,
    })
}

impl CarpetParams {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn a(&self) -> u64 {
        self.a
    }

    /// Digits `(k - a)/2 .. (k + a)/2` of the removed central block.
    pub fn central_range(&self) -> Range<u64> {
        (self.k - self.a) / 2..(self.k + self.a) / 2
    }

    #[inline]
    fn is_central(&self, digit: u64) -> bool {
        let lo = (self.k - self.a) / 2;
        digit >= lo && digit < lo + self.a
    }

    /// `k^m`, checked.
    pub fn side(&self, m: u32) -> Result<u64> {
        self.k.checked_pow(m).ok_or(Error::Overflow("k^m"))
    }

    /// Survival test on raw coordinates of a level-`n` cell.
    pub fn survives(&self, coords: &[i64], n: u32) -> bool {
        let mut rest: Vec<u64> = coords.iter().map(|&c| c as u64).collect();
        for _ in 0..n {
            let mut all_central = true;
            for r in rest.iter_mut() {
                let digit = *r % self.k;
                *r /= self.k;
                all_central &= self.is_central(digit);
            }
            if all_central {
                return false;
            }
        }
        true
    }
}

/// A cell of the level-`n` subdivision of the unit cube, indexed by integer
/// coordinates in `[0, k^n)^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellAddress {
    pub level: u32,
    pub coords: Vec<u64>,
}

impl CellAddress {
    pub fn new(level: u32, coords: Vec<u64>) -> Self {
        CellAddress { level, coords }
    }

    /// Digit vectors, coarsest level first: `digits()[i][j]` is the base-`k`
    /// digit of coordinate `j` at subdivision level `i + 1`.
    pub fn digits(&self, k: u64) -> Vec<Vec<u64>> {
        let n = self.level as usize;
        let mut out = vec![vec![0u64; self.coords.len()]; n];
        for (j, &c) in self.coords.iter().enumerate() {
            let mut rest = c;
            for i in (0..n).rev() {
                out[i][j] = rest % k;
                rest /= k;
            }
        }
        out
    }

    pub fn from_digits(k: u64, digits: &[Vec<u64>]) -> Self {
        let d = digits.first().map_or(0, Vec::len);
        let mut coords = vec![0u64; d];
        for vector in digits {
            for (c, &digit) in coords.iter_mut().zip(vector) {
                *c = *c * k + digit;
            }
        }
        CellAddress {
            level: digits.len() as u32,
            coords,
        }
    }

    /// The level-`m` ancestor, `m <= level`.
    pub fn truncate(&self, m: u32, k: u64) -> Self {
        let div = k.pow(self.level - m);
        CellAddress {
            level: m,
            coords: self.coords.iter().map(|c| c / div).collect(),
        }
    }
}

/// True iff no digit vector of `addr` lies coordinate-wise in the central range.
pub fn cell_survives(addr: &CellAddress, params: &CarpetParams) -> bool {
    addr.digits(params.k)
        .iter()
        .all(|v| !v.iter().all(|&digit| params.is_central(digit)))
}

/// `(k^d - a^d)^n` with overflow detection.
pub fn count_cells(n: u32, params: &CarpetParams) -> Result<u64> {
    let kd = params
        .k
        .checked_pow(params.d as u32)
        .ok_or(Error::Overflow("k^d"))?;
    let ad = params.a.pow(params.d as u32);
    (kd - ad)
        .checked_pow(n)
        .ok_or(Error::Overflow("(k^d - a^d)^n"))
}

/// `log(k^d - a^d) / log(k)`.
pub fn hausdorff_dimension(params: &CarpetParams) -> f64 {
    let kd = (params.k as f64).powi(params.d as i32);
    let ad = (params.a as f64).powi(params.d as i32);
    (kd - ad).ln() / (params.k as f64).ln()
}

/// Immutable level-`n` graphical carpet: surviving cells of `[0, k^n)^d`
/// with vertex ids in lexicographic coordinate order.
#[derive(Debug, Clone)]
pub struct CarpetGraph {
    params: CarpetParams,
    level: u32,
    lattice: LatticeGraph,
}

pub fn build_graph(n: u32, params: &CarpetParams) -> Result<CarpetGraph> {
    build_graph_with_budget(n, params, DEFAULT_VERTEX_BUDGET)
}

pub fn build_graph_with_budget(n: u32, params: &CarpetParams, budget: u64) -> Result<CarpetGraph> {
    // u128 overflow saturates: such a request exceeds any u64 budget anyway.
    let requested = (params.k as u128)
        .checked_pow(params.d as u32)
        .and_then(|kd| (kd - (params.a as u128).pow(params.d as u32)).checked_pow(n))
        .unwrap_or(u128::MAX);
    if requested > budget as u128 {
        return Err(Error::Capacity {
            requested,
            limit: budget,
        });
    }
    let d = params.d;
    let side = params.side(n)? as i64;
    let mut cells = Vec::with_capacity(requested as usize);
    let mut c = vec![0i64; d];
    if side > 0 {
        'outer: loop {
            if params.survives(&c, n) {
                cells.push(c.clone());
            }
            // odometer, last coordinate fastest
            for i in (0..d).rev() {
                c[i] += 1;
                if c[i] < side {
                    continue 'outer;
                }
                c[i] = 0;
            }
            break;
        }
    }
    debug_assert_eq!(cells.len() as u128, requested);
    Ok(CarpetGraph {
        params: params.clone(),
        level: n,
        lattice: LatticeGraph::from_cells(d, cells)?,
    })
}

/// Partition of the box `[0, k^j)^d` used as the domain `D_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxPartition {
    pub level: u32,
    /// Cells with every coordinate below `k^(j-1)`; empty for `j = 0`.
    pub inner: Vec<usize>,
    /// Box cells that are neither inner nor boundary.
    pub annulus: Vec<usize>,
    /// Box cells on the outer face `max coordinate = k^j - 1`.
    pub boundary: Vec<usize>,
}

impl BoxPartition {
    /// All box vertices in id order.
    pub fn members(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .inner
            .iter()
            .chain(&self.annulus)
            .chain(&self.boundary)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    /// Box vertices that are not on the boundary.
    pub fn interior(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.inner.iter().chain(&self.annulus).copied().collect();
        all.sort_unstable();
        all
    }
}

impl CarpetGraph {
    pub fn params(&self) -> &CarpetParams {
        &self.params
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn lattice(&self) -> &LatticeGraph {
        &self.lattice
    }

    pub fn network(&self) -> &Network {
        self.lattice.network()
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn coord(&self, v: usize) -> &[i64] {
        self.lattice.coord(v)
    }

    pub fn find(&self, c: &[i64]) -> Option<usize> {
        self.lattice.find(c)
    }

    /// Side length `k^level` of the built box.
    pub fn side(&self) -> i64 {
        self.params.k.pow(self.level) as i64
    }

    /// Splits the box `D_j` into inner region, annulus and boundary.
    pub fn box_vertices(&self, j: u32) -> Result<BoxPartition> {
        if j > self.level {
            return Err(Error::Range(format!(
                "box level {j} exceeds graph level {}",
                self.level
            )));
        }
        let side = self.params.k.pow(j) as i64;
        let inner_side = if j == 0 {
            0
        } else {
            self.params.k.pow(j - 1) as i64
        };
        let mut part = BoxPartition {
            level: j,
            inner: Vec::new(),
            annulus: Vec::new(),
            boundary: Vec::new(),
        };
        let inside = |v: usize| self.coord(v).iter().all(|&c| c < side);
        for v in 0..self.len() {
            let c = self.coord(v);
            if !inside(v) {
                continue;
            }
            let on_face = c.iter().any(|&x| x == side - 1);
            let touches_outside = self.network().neighbors(v).iter().any(|&w| !inside(w));
            if on_face || touches_outside {
                part.boundary.push(v);
            } else if c.iter().all(|&x| x < inner_side) {
                part.inner.push(v);
            } else {
                part.annulus.push(v);
            }
        }
        Ok(part)
    }

    /// The surviving cell farthest from the faces of the built box, ties
    /// broken by lowest id.
    pub fn central_vertex(&self) -> usize {
        let two_side = 2 * self.side();
        let score = |v: usize| {
            self.coord(v)
                .iter()
                .map(|&c| (2 * c + 1).min(two_side - 2 * c - 1))
                .min()
                .unwrap_or(0)
        };
        let mut best = 0;
        let mut best_score = i64::MIN;
        for v in 0..self.len() {
            let s = score(v);
            if s > best_score {
                best = v;
                best_score = s;
            }
        }
        best
    }

    /// Writes the plain-text interchange format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        writeln!(
            out,
            "carpet {} {} {} {} {} {}",
            p.d,
            p.k,
            p.a,
            self.level,
            self.len(),
            self.network().edge_count()
        )?;
        for v in 0..self.len() {
            write!(out, "v {v}")?;
            for c in self.coord(v) {
                write!(out, " {c}")?;
            }
            writeln!(out)?;
        }
        for (u, v) in self.network().edges() {
            writeln!(out, "e {u} {v}")?;
        }
        Ok(())
    }

    /// Parses the interchange format and checks it against a fresh build of
    /// the declared carpet.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let perr = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "empty input"))?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "carpet" {
            return Err(perr(hl, "expected `carpet d k a n |V| |E|`"));
        }
        let nums: Vec<i64> = fields[1..]
            .iter()
            .map(|f| f.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(hl, "non-integer header field"))?;
        let params = validate_params(nums[0], nums[1], nums[2])?;
        let level = u32::try_from(nums[3]).map_err(|_| perr(hl, "bad level"))?;
        let (nv, ne) = (nums[4] as usize, nums[5] as usize);
        let graph = build_graph(level, &params)?;
        if graph.len() != nv || graph.network().edge_count() != ne {
            return Err(perr(hl, "vertex or edge count disagrees with the declared carpet"));
        }
        let mut seen_v = 0usize;
        let mut edges = graph.network().edges();
        for (ln, line) in lines {
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.first() {
                None => continue,
                Some(&"v") => {
                    let vals: Vec<i64> = toks[1..]
                        .iter()
                        .map(|t| t.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(ln, "non-integer vertex field"))?;
                    if vals.len() != params.d + 1 || vals[0] as usize != seen_v {
                        return Err(perr(ln, "vertex line out of order or malformed"));
                    }
                    if graph.coord(seen_v) != &vals[1..] {
                        return Err(perr(ln, "vertex coordinates disagree with carpet"));
                    }
                    seen_v += 1;
                }
                Some(&"e") => {
                    if seen_v != nv {
                        return Err(perr(ln, "edge line before all vertex lines"));
                    }
                    let vals: Vec<usize> = toks[1..]
                        .iter()
                        .map(|t| t.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(ln, "non-integer edge field"))?;
                    if vals.len() != 2 || edges.next() != Some((vals[0], vals[1])) {
                        return Err(perr(ln, "edge disagrees with carpet adjacency"));
                    }
                }
                Some(_) => return Err(perr(ln, "unknown record type")),
            }
        }
        let complete = seen_v == nv && edges.next().is_none();
        drop(edges);
        if !complete {
            return Err(perr(0, "truncated graph file"));
        }
        Ok(graph)
    }
}
