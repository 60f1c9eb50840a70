//! Cube isometries, m-association and the mirrored coupling of two lazy walks.
//!
//! Local coordinates are kept doubled so that they stay integral: the doubled
//! local coordinate of `c` in its level-`m` cube is `2 (c mod k^m) + 1 - k^m`.
//! A signed permutation acts on a vector by `sigma(l)_i = s_i * l_{pi(i)}`.
//!
//! One coupled step works as follows.
//!
//! * If the walkers coincide they take the same lazy step.
//! * If their coordinate sums have different parity, a fair coin picks one
//!   walker, which moves to a uniform neighbour while the other holds. Each
//!   walker then holds with probability 1/2 and otherwise moves uniformly,
//!   which is exactly the lazy law.
//! * Otherwise `x` takes a lazy step `e` and `y` follows the witness image
//!   `sigma(e)` under a maximal coupling of the pushed-forward law and `y`'s
//!   own lazy law. When `sigma` maps the neighbour directions of `x` onto
//!   those of `y` the image is always accepted.
//!
//! After every step the association level and the witness are recomputed.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carpet::CarpetGraph;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, StreamRng};

/// Cap on coupled steps per trial unless configured otherwise.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
/// Renewal intervals allowed for an upgrade.
pub const DEFAULT_RENEWALS: usize = 8;

/// A signed coordinate permutation carrying one level-`m` cube onto another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeIsometry {
    pub level: u32,
    pub source_cube: Vec<i64>,
    pub target_cube: Vec<i64>,
    /// `permutation[i]` is the source axis feeding target axis `i`.
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
}

impl CubeIsometry {
    pub fn identity(level: u32, cube: Vec<i64>) -> Self {
        let d = cube.len();
        CubeIsometry {
            level,
            source_cube: cube.clone(),
            target_cube: cube,
            permutation: (0..d).collect(),
            signs: vec![1; d],
        }
    }

    /// Image of the lattice point `c`, which must lie in the source cube.
    pub fn apply(&self, c: &[i64], k: u64) -> Vec<i64> {
        let s = side(k, self.level);
        let local: Vec<i64> = c
            .iter()
            .zip(&self.source_cube)
            .map(|(&ci, &q)| 2 * (ci - q * s) + 1 - s)
            .collect();
        (0..c.len())
            .map(|i| {
                let l = self.signs[i] as i64 * local[self.permutation[i]];
                (l - 1 + s) / 2 + self.target_cube[i] * s
            })
            .collect()
    }

    /// Whether `x` lies in the source cube and is carried onto `y`.
    pub fn maps(&self, x: &[i64], y: &[i64], k: u64) -> bool {
        let s = side(k, self.level);
        x.iter().zip(&self.source_cube).all(|(&c, &q)| c.div_euclid(s) == q)
            && y.iter().zip(&self.target_cube).all(|(&c, &q)| c.div_euclid(s) == q)
            && self.apply(x, k) == y
    }

    /// Image of the unit step `sign * e_axis`.
    #[inline]
    pub fn map_direction(&self, axis: usize, sign: i8) -> (usize, i8) {
        let target = self
            .permutation
            .iter()
            .position(|&p| p == axis)
            .expect("permutation covers every axis");
        (target, self.signs[target] * sign)
    }
}

#[inline]
fn side(k: u64, m: u32) -> i64 {
    (k as i64).pow(m)
}

fn doubled_local(c: &[i64], s: i64, out: &mut [i64]) {
    for (o, &ci) in out.iter_mut().zip(c) {
        *o = 2 * ci.rem_euclid(s) + 1 - s;
    }
}

/// Centre of `v` minus the centre of its level-`m` cube.
pub fn local_coords(graph: &CarpetGraph, v: usize, m: u32) -> Vec<f64> {
    let s = side(graph.params().k(), m);
    graph
        .coord(v)
        .iter()
        .map(|&c| (2 * c.rem_euclid(s) + 1 - s) as f64 / 2.0)
        .collect()
}

/// All permutations of `0..d` in lexicographic order.
fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..d).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (1..d).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..d).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Every `(permutation index, signs)` with `sigma(lx) = ly`, in
/// lexicographic order with `-1` before `+1`.
fn matching_isometries(perms: &[Vec<usize>], lx: &[i64], ly: &[i64]) -> Vec<(usize, Vec<i8>)> {
    let d = lx.len();
    let mut out = Vec::new();
    for (pi, p) in perms.iter().enumerate() {
        if !(0..d).all(|i| ly[i].abs() == lx[p[i]].abs()) {
            continue;
        }
        // Axes where the local coordinate vanishes leave the sign free.
        let free: Vec<usize> = (0..d).filter(|&i| ly[i] == 0).collect();
        let base: Vec<i8> = (0..d)
            .map(|i| if ly[i] == 0 || ly[i] == lx[p[i]] { 1 } else { -1 })
            .collect();
        for mask in 0..(1usize << free.len()) {
            let mut signs = base.clone();
            for (bit, &axis) in free.iter().enumerate() {
                // Bit clear means -1 so the enumeration is lexicographic.
                signs[axis] = if mask >> (free.len() - 1 - bit) & 1 == 0 { -1 } else { 1 };
            }
            out.push((pi, signs));
        }
    }
    out
}

fn first_matching(perms: &[Vec<usize>], lx: &[i64], ly: &[i64]) -> bool {
    let d = lx.len();
    perms
        .iter()
        .any(|p| (0..d).all(|i| ly[i].abs() == lx[p[i]].abs()))
}

fn check_level(graph: &CarpetGraph, m: u32) -> Result<()> {
    if m > graph.level() {
        return Err(Error::Range(format!(
            "level-{m} cubes do not fit in the level-{} graph",
            graph.level()
        )));
    }
    Ok(())
}

fn check_vertex(graph: &CarpetGraph, v: usize) -> Result<()> {
    if v >= graph.len() {
        return Err(Error::Argument(format!("vertex {v} is not in the graph")));
    }
    Ok(())
}

/// Every isometry witnessing that `x` and `y` are `m`-associated.
pub fn association_isometries(graph: &CarpetGraph, x: usize, y: usize, m: u32) -> Result<Vec<CubeIsometry>> {
    check_level(graph, m)?;
    check_vertex(graph, x)?;
    check_vertex(graph, y)?;
    let d = graph.params().d();
    let s = side(graph.params().k(), m);
    let (cx, cy) = (graph.coord(x), graph.coord(y));
    let mut lx = vec![0; d];
    let mut ly = vec![0; d];
    doubled_local(cx, s, &mut lx);
    doubled_local(cy, s, &mut ly);
    let perms = permutations(d);
    let source: Vec<i64> = cx.iter().map(|c| c.div_euclid(s)).collect();
    let target: Vec<i64> = cy.iter().map(|c| c.div_euclid(s)).collect();
    Ok(matching_isometries(&perms, &lx, &ly)
        .into_iter()
        .map(|(pi, signs)| CubeIsometry {
            level: m,
            source_cube: source.clone(),
            target_cube: target.clone(),
            permutation: perms[pi].clone(),
            signs,
        })
        .collect())
}

/// Largest `m <= m_max` at which `x` and `y` are associated. Every lower
/// level is checked as well, and a gap is reported as an invariant error.
pub fn association_level(graph: &CarpetGraph, x: usize, y: usize, m_max: u32) -> Result<u32> {
    check_level(graph, m_max)?;
    check_vertex(graph, x)?;
    check_vertex(graph, y)?;
    let d = graph.params().d();
    let perms = permutations(d);
    let mut lx = vec![0; d];
    let mut ly = vec![0; d];
    let mut best = None;
    for m in 0..=m_max {
        let s = side(graph.params().k(), m);
        doubled_local(graph.coord(x), s, &mut lx);
        doubled_local(graph.coord(y), s, &mut ly);
        let ok = first_matching(&perms, &lx, &ly);
        match (ok, best) {
            (true, Some(b)) if b + 1 < m => {
                return Err(Error::Invariant(format!(
                    "pair ({x}, {y}) is {m}-associated but not {}-associated",
                    b + 1
                )))
            }
            (true, _) => best = Some(m),
            (false, _) => {}
        }
    }
    best.ok_or_else(|| Error::Invariant(format!("pair ({x}, {y}) is not even 0-associated")))
}

/// Chooses one witness among the valid isometries, listed in canonical order.
pub trait WitnessPolicy: Sync {
    fn select(&self, candidates: usize, rng: &mut StreamRng) -> usize;
}

/// Lexicographically smallest `(permutation, signs)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Canonical;

impl WitnessPolicy for Canonical {
    fn select(&self, _candidates: usize, _rng: &mut StreamRng) -> usize {
        0
    }
}

/// Uniform choice among the valid isometries at the current level.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomWitness;

impl WitnessPolicy for RandomWitness {
    fn select(&self, candidates: usize, rng: &mut StreamRng) -> usize {
        rng.random_range(0..candidates)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationState {
    pub x: usize,
    pub y: usize,
    pub level: u32,
    pub witness: CubeIsometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Walkers already met and moved together.
    Together,
    /// One walker moved while the other held.
    ParityFix,
    /// `y` followed the witness image of `x`'s increment.
    Mirrored,
    /// `y` drew from the residual of the maximal coupling.
    Residual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub together: u64,
    pub parity_fix: u64,
    pub mirrored: u64,
    pub residual: u64,
}

impl StepCounts {
    fn record(&mut self, kind: StepKind) {
        match kind {
            StepKind::Together => self.together += 1,
            StepKind::ParityFix => self.parity_fix += 1,
            StepKind::Mirrored => self.mirrored += 1,
            StepKind::Residual => self.residual += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpgradeEvent {
    pub step: u64,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub coupled: bool,
    pub steps_taken: u64,
    pub exited_box: bool,
    pub truncated: bool,
    pub renewal_times: Vec<u64>,
    pub max_level_reached: u32,
    pub upgrades: Vec<UpgradeEvent>,
    pub step_counts: StepCounts,
    /// SHA-256 over the little-endian `(x, y)` ids of every visited state.
    pub digest: String,
}

/// Drives coupled walks on one graph with a fixed witness policy and a
/// fixed ceiling on the association level.
pub struct Coupler<'g, P: WitnessPolicy = Canonical> {
    graph: &'g CarpetGraph,
    policy: P,
    perms: Vec<Vec<usize>>,
    m_max: u32,
}

impl<'g> Coupler<'g, Canonical> {
    pub fn new(graph: &'g CarpetGraph, m_max: u32) -> Result<Self> {
        Coupler::with_policy(graph, m_max, Canonical)
    }
}

impl<'g, P: WitnessPolicy> Coupler<'g, P> {
    pub fn with_policy(graph: &'g CarpetGraph, m_max: u32, policy: P) -> Result<Self> {
        check_level(graph, m_max)?;
        Ok(Coupler {
            graph,
            policy,
            perms: permutations(graph.params().d()),
            m_max,
        })
    }

    pub fn graph(&self) -> &'g CarpetGraph {
        self.graph
    }

    pub fn m_max(&self) -> u32 {
        self.m_max
    }

    /// Association level and a policy-chosen witness for `(x, y)`.
    pub fn associate(&self, x: usize, y: usize, rng: &mut StreamRng) -> Result<AssociationState> {
        check_vertex(self.graph, x)?;
        check_vertex(self.graph, y)?;
        let d = self.graph.params().d();
        let k = self.graph.params().k();
        let (cx, cy) = (self.graph.coord(x), self.graph.coord(y));
        let mut lx = vec![0; d];
        let mut ly = vec![0; d];
        for m in (0..=self.m_max).rev() {
            let s = side(k, m);
            doubled_local(cx, s, &mut lx);
            doubled_local(cy, s, &mut ly);
            if !first_matching(&self.perms, &lx, &ly) {
                continue;
            }
            let candidates = matching_isometries(&self.perms, &lx, &ly);
            let (pi, signs) = candidates[self.policy.select(candidates.len(), rng)].clone();
            return Ok(AssociationState {
                x,
                y,
                level: m,
                witness: CubeIsometry {
                    level: m,
                    source_cube: cx.iter().map(|c| c.div_euclid(s)).collect(),
                    target_cube: cy.iter().map(|c| c.div_euclid(s)).collect(),
                    permutation: self.perms[pi].clone(),
                    signs,
                },
            });
        }
        Err(Error::Invariant(format!("no witness for ({x}, {y}) at any level")))
    }

    fn parity(&self, v: usize) -> i64 {
        self.graph.coord(v).iter().sum::<i64>().rem_euclid(2)
    }

    /// Axis and sign of the unit step from `from` to its neighbour `to`.
    fn direction(&self, from: usize, to: usize) -> (usize, i8) {
        let (a, b) = (self.graph.coord(from), self.graph.coord(to));
        let axis = (0..a.len()).find(|&i| a[i] != b[i]).expect("distinct neighbours");
        (axis, if b[axis] > a[axis] { 1 } else { -1 })
    }

    fn neighbour_in(&self, v: usize, axis: usize, sign: i8) -> Option<usize> {
        let mut c = self.graph.coord(v).to_vec();
        c[axis] += sign as i64;
        self.graph.find(&c)
    }

    /// Moves `y` given that `x` moved in direction `dir`, returning the new
    /// position of `y` and whether the witness image was used.
    fn follow(&self, state: &AssociationState, dir: (usize, i8), rng: &mut StreamRng) -> (usize, bool) {
        let net = self.graph.network();
        let a = net.degree(state.x) as f64;
        let ny = net.neighbors(state.y);
        let b = ny.len() as f64;
        let (axis, sign) = state.witness.map_direction(dir.0, dir.1);
        if let Some(z) = self.neighbour_in(state.y, axis, sign) {
            if a >= b || rng.random_bool(a / b) {
                return (z, true);
            }
        }
        // Residual law: y's move probabilities minus the pushed-forward ones.
        let images: Vec<usize> = net
            .neighbors(state.x)
            .iter()
            .filter_map(|&u| {
                let (ax, sg) = self.direction(state.x, u);
                let (ax, sg) = state.witness.map_direction(ax, sg);
                self.neighbour_in(state.y, ax, sg)
            })
            .collect();
        let weights: Vec<f64> = ny
            .iter()
            .map(|w| {
                let pushed = if images.contains(w) { 1.0 / (2.0 * a) } else { 0.0 };
                (1.0 / (2.0 * b) - pushed).max(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (w, &wt) in ny.iter().zip(&weights) {
            if wt > 0.0 {
                if u < wt {
                    return (*w, false);
                }
                u -= wt;
            }
        }
        let last = ny.iter().zip(&weights).rev().find(|(_, &wt)| wt > 0.0);
        (last.map(|(w, _)| *w).unwrap_or(state.y), false)
    }

    /// One coupled step followed by a refresh of level and witness.
    pub fn coupled_step(&self, state: &AssociationState, rng: &mut StreamRng) -> Result<(AssociationState, StepKind)> {
        let net = self.graph.network();
        let (x, y, kind) = if state.x == state.y {
            let v = crate::heat::lazy_step(net, state.x, rng);
            (v, v, StepKind::Together)
        } else if self.parity(state.x) != self.parity(state.y) {
            let mover_is_x = rng.random_bool(0.5);
            let v = if mover_is_x { state.x } else { state.y };
            let nbrs = net.neighbors(v);
            let to = if nbrs.is_empty() { v } else { nbrs[rng.random_range(0..nbrs.len())] };
            if mover_is_x {
                (to, state.y, StepKind::ParityFix)
            } else {
                (state.x, to, StepKind::ParityFix)
            }
        } else {
            let nx = net.neighbors(state.x);
            if nx.is_empty() || rng.random_bool(0.5) {
                (state.x, state.y, StepKind::Mirrored)
            } else {
                let to = nx[rng.random_range(0..nx.len())];
                let (ny, mirrored) = self.follow(state, self.direction(state.x, to), rng);
                (to, ny, if mirrored { StepKind::Mirrored } else { StepKind::Residual })
            }
        };
        if kind == StepKind::Mirrored {
            let k = self.graph.params().k();
            let s = side(k, state.level);
            let inside = |v: usize, cube: &[i64]| self.graph.coord(v).iter().zip(cube).all(|(&c, &q)| c.div_euclid(s) == q);
            if inside(x, &state.witness.source_cube)
                && inside(y, &state.witness.target_cube)
                && !state.witness.maps(self.graph.coord(x), self.graph.coord(y), k)
            {
                return Err(Error::Invariant(format!(
                    "witness lost inside its cubes at ({x}, {y}), level {}",
                    state.level
                )));
            }
        }
        Ok((self.associate(x, y, rng)?, kind))
    }

    fn in_box(&self, v: usize, limit: i64) -> bool {
        self.graph.coord(v).iter().all(|&c| c < limit)
    }

    fn check_start(&self, x0: usize, y0: usize, n: u32) -> Result<()> {
        check_vertex(self.graph, x0)?;
        check_vertex(self.graph, y0)?;
        if n == 0 {
            return Err(Error::Argument("box level must be at least 1".into()));
        }
        if self.graph.level() < n + 1 {
            return Err(Error::Range(format!(
                "box level {n} needs a graph of level at least {}",
                n + 1
            )));
        }
        let inner = side(self.graph.params().k(), n - 1);
        if !self.in_box(x0, inner) || !self.in_box(y0, inner) {
            return Err(Error::Argument(format!(
                "starting vertices must lie in the level-{} box",
                n - 1
            )));
        }
        Ok(())
    }

    /// Runs the coupled walk from `(x0, y0)` until the walkers meet, one of
    /// them reaches the boundary layer of the level-`n` box, or `max_steps`
    /// is reached. The boundary layer is the one used by the harmonic
    /// solvers, so an uncoupled exit bounds the oscillation of every
    /// function harmonic in the box.
    pub fn run(&self, x0: usize, y0: usize, n: u32, max_steps: u64, rng: &mut StreamRng) -> Result<CouplingOutcome> {
        self.check_start(x0, y0, n)?;
        let mut walk = Walk::start(self, x0, y0, rng)?;
        let limit = side(self.graph.params().k(), n) - 1;
        loop {
            if walk.state.x == walk.state.y {
                return Ok(walk.finish(true, false, false));
            }
            if walk.steps >= max_steps {
                return Ok(walk.finish(false, false, true));
            }
            walk.advance(self, rng)?;
            if !self.in_box(walk.state.x, limit) || !self.in_box(walk.state.y, limit) {
                return Ok(walk.finish(false, true, false));
            }
        }
    }
}

/// Book-keeping shared by the walk drivers.
struct Walk {
    state: AssociationState,
    steps: u64,
    anchor: Vec<i64>,
    renewal_radius2: i64,
    renewal_times: Vec<u64>,
    max_level: u32,
    upgrades: Vec<UpgradeEvent>,
    counts: StepCounts,
    hasher: Sha256,
}

impl Walk {
    fn start<P: WitnessPolicy>(c: &Coupler<'_, P>, x0: usize, y0: usize, rng: &mut StreamRng) -> Result<Self> {
        let state = c.associate(x0, y0, rng)?;
        let mut hasher = Sha256::new();
        hasher.update((x0 as u64).to_le_bytes());
        hasher.update((y0 as u64).to_le_bytes());
        let r = side(c.graph.params().k(), state.level);
        Ok(Walk {
            anchor: c.graph.coord(x0).to_vec(),
            renewal_radius2: r * r,
            renewal_times: vec![0],
            max_level: state.level,
            upgrades: Vec::new(),
            counts: StepCounts::default(),
            steps: 0,
            state,
            hasher,
        })
    }

    /// One step; returns true when the step completed a renewal interval.
    fn advance<P: WitnessPolicy>(&mut self, c: &Coupler<'_, P>, rng: &mut StreamRng) -> Result<bool> {
        let (next, kind) = c.coupled_step(&self.state, rng)?;
        self.steps += 1;
        self.counts.record(kind);
        if next.level > self.state.level {
            self.upgrades.push(UpgradeEvent {
                step: self.steps,
                from: self.state.level,
                to: next.level,
            });
        }
        self.max_level = self.max_level.max(next.level);
        self.hasher.update((next.x as u64).to_le_bytes());
        self.hasher.update((next.y as u64).to_le_bytes());
        self.state = next;
        let pos = c.graph.coord(self.state.x);
        let moved2: i64 = pos.iter().zip(&self.anchor).map(|(a, b)| (a - b) * (a - b)).sum();
        if moved2 >= self.renewal_radius2 {
            self.renewal_times.push(self.steps);
            self.anchor = pos.to_vec();
            let r = side(c.graph.params().k(), self.state.level);
            self.renewal_radius2 = r * r;
            return Ok(true);
        }
        Ok(false)
    }

    fn finish(self, coupled: bool, exited_box: bool, truncated: bool) -> CouplingOutcome {
        let digest = self.hasher.finalize();
        CouplingOutcome {
            coupled,
            steps_taken: self.steps,
            exited_box,
            truncated,
            renewal_times: self.renewal_times,
            max_level_reached: self.max_level,
            upgrades: self.upgrades,
            step_counts: self.counts,
            digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

/// Single canonical-policy run using stream `(seed, "couple", 0)`. The
/// association ceiling is the box level.
pub fn run_coupled_walk(graph: &CarpetGraph, x0: usize, y0: usize, n: u32, max_steps: u64, seed: u64) -> Result<CouplingOutcome> {
    let coupler = Coupler::new(graph, n)?;
    coupler.run(x0, y0, n, max_steps, &mut rng::stream(seed, "couple", 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    pub x0: usize,
    pub y0: usize,
    pub box_level: u32,
    pub trials: usize,
    pub coupled: usize,
    pub exited: usize,
    pub truncated: usize,
    /// Coupled fraction among trials that were not truncated.
    pub probability: f64,
    pub standard_error: f64,
    pub mean_steps: f64,
    /// Per-trial digests, in trial order, when requested.
    pub digests: Option<Vec<String>>,
}

/// Independent coupled walks; trial `i` uses stream `(seed, "couple", i)`.
pub fn coupling_probability<P: WitnessPolicy>(
    coupler: &Coupler<'_, P>,
    x0: usize,
    y0: usize,
    n: u32,
    trials: usize,
    max_steps: u64,
    seed: u64,
    audit: bool,
) -> Result<CouplingEstimate> {
    if trials == 0 {
        return Err(Error::Argument("at least one trial is required".into()));
    }
    coupler.check_start(x0, y0, n)?;
    let outcomes = par::map_indexed(trials, |i| {
        coupler.run(x0, y0, n, max_steps, &mut rng::stream(seed, "couple", i as u64))
    });
    let outcomes: Vec<CouplingOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let coupled = outcomes.iter().filter(|o| o.coupled).count();
    let exited = outcomes.iter().filter(|o| o.exited_box).count();
    let truncated = outcomes.iter().filter(|o| o.truncated).count();
    let (probability, standard_error) = proportion(coupled, trials - truncated);
    let total_steps: u64 = outcomes.iter().map(|o| o.steps_taken).sum();
    Ok(CouplingEstimate {
        x0,
        y0,
        box_level: n,
        trials,
        coupled,
        exited,
        truncated,
        probability,
        standard_error,
        mean_steps: total_steps as f64 / trials as f64,
        digests: audit.then(|| outcomes.into_iter().map(|o| o.digest).collect()),
    })
}

fn proportion(successes: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = successes as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// Unordered pairs `x < y` inside the level-`(n-1)` box that are
/// `m`-associated.
pub fn association_catalog(graph: &CarpetGraph, m: u32, n: u32) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::Argument("box level must be at least 1".into()));
    }
    check_level(graph, m)?;
    let members = graph.box_vertices(n - 1)?.members();
    let rows = par::map_indexed(members.len(), |i| {
        let x = members[i];
        members[i + 1..]
            .iter()
            .filter(|&&y| association_level(graph, x, y, m).map(|l| l >= m).unwrap_or(false))
            .map(|&y| (x, y))
            .collect::<Vec<_>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeEstimate {
    pub m: u32,
    pub box_level: u32,
    pub renewals: usize,
    pub trials: usize,
    pub catalog_size: usize,
    /// Sampled pairs that were already `(m+1)`-associated.
    pub immediate: usize,
    /// Upgrade seen at any step before the last allowed renewal.
    pub per_step_successes: usize,
    /// Upgrade seen at one of the renewal times themselves.
    pub per_renewal_successes: usize,
    pub exited: usize,
    pub truncated: usize,
    pub probability: f64,
    pub standard_error: f64,
    pub per_renewal_probability: f64,
    pub per_renewal_standard_error: f64,
}

/// Fraction of sampled `m`-associated pairs that become `(m+1)`-associated
/// within `renewals` renewal intervals without reaching the boundary layer
/// of the level-`n` box.
/// Trial `i` uses stream `(seed, "upgrade", i)`.
pub fn upgrade_probability<P: WitnessPolicy>(
    coupler: &Coupler<'_, P>,
    m: u32,
    n: u32,
    renewals: usize,
    trials: usize,
    max_steps: u64,
    seed: u64,
) -> Result<UpgradeEstimate> {
    if trials == 0 {
        return Err(Error::Argument("at least one trial is required".into()));
    }
    if m + 1 > coupler.m_max() {
        return Err(Error::Range(format!(
            "level {} is above the association ceiling {}",
            m + 1,
            coupler.m_max()
        )));
    }
    let catalog = association_catalog(coupler.graph(), m, n)?;
    if catalog.is_empty() {
        return Err(Error::Config(format!("no {m}-associated pairs in the level-{} box", n - 1)));
    }
    let target = m + 1;
    let limit = side(coupler.graph().params().k(), n) - 1;
    // (immediate, per-step, per-renewal, exited, truncated)
    let results = par::map_indexed(trials, |i| -> Result<(bool, bool, bool, bool, bool)> {
        let mut rng = rng::stream(seed, "upgrade", i as u64);
        let (x0, y0) = catalog[rng.random_range(0..catalog.len())];
        coupler.check_start(x0, y0, n)?;
        let mut walk = Walk::start(coupler, x0, y0, &mut rng)?;
        if walk.state.level >= target {
            return Ok((true, true, true, false, false));
        }
        let mut step_hit = false;
        let mut done = 0;
        while done < renewals {
            if walk.steps >= max_steps {
                return Ok((false, step_hit, false, false, true));
            }
            let renewed = walk.advance(coupler, &mut rng)?;
            if !coupler.in_box(walk.state.x, limit) || !coupler.in_box(walk.state.y, limit) {
                return Ok((false, step_hit, false, true, false));
            }
            let up = walk.state.level >= target;
            step_hit |= up;
            if renewed {
                done += 1;
                if up {
                    return Ok((false, true, true, false, false));
                }
            }
        }
        Ok((false, step_hit, false, false, false))
    });
    let results: Vec<_> = results.into_iter().collect::<Result<_>>()?;
    let count = |f: fn(&(bool, bool, bool, bool, bool)) -> bool| results.iter().filter(|r| f(r)).count();
    let truncated = count(|r| r.4);
    let per_step_successes = count(|r| r.1);
    let per_renewal_successes = count(|r| r.2);
    let (probability, standard_error) = proportion(per_step_successes, trials - truncated);
    let (per_renewal_probability, per_renewal_standard_error) = proportion(per_renewal_successes, trials - truncated);
    Ok(UpgradeEstimate {
        m,
        box_level: n,
        renewals,
        trials,
        catalog_size: catalog.len(),
        immediate: count(|r| r.0),
        per_step_successes,
        per_renewal_successes,
        exited: count(|r| r.3),
        truncated,
        probability,
        standard_error,
        per_renewal_probability,
        per_renewal_standard_error,
    })
}

/// Position of `y` after exactly `steps` coupled steps, for each trial.
/// Walks are not stopped on meeting or leaving a box. Trial `i` uses stream
/// `(seed, "marginal", i)`.
pub fn marginal_positions<P: WitnessPolicy>(
    coupler: &Coupler<'_, P>,
    x0: usize,
    y0: usize,
    steps: u64,
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let out = par::map_indexed(trials, |i| -> Result<usize> {
        let mut rng = rng::stream(seed, "marginal", i as u64);
        let mut state = coupler.associate(x0, y0, &mut rng)?;
        for _ in 0..steps {
            state = coupler.coupled_step(&state, &mut rng)?.0;
        }
        Ok(state.y)
    });
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_graph, validate_params};

    fn carpet(n: u32) -> CarpetGraph {
        build_graph(n, &validate_params(2, 3, 1).unwrap()).unwrap()
    }

    #[test]
    fn local_coordinates() {
        let g = carpet(2);
        let v = g.find(&[0, 0]).unwrap();
        assert_eq!(local_coords(&g, v, 0), vec![0.0, 0.0]);
        assert_eq!(local_coords(&g, v, 1), vec![-1.0, -1.0]);
        let w = g.find(&[2, 0]).unwrap();
        assert_eq!(local_coords(&g, w, 1), vec![1.0, -1.0]);
    }

    #[test]
    fn permutations_are_lexicographic() {
        assert_eq!(
            permutations(3),
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
    }

    #[test]
    fn isometry_examples() {
        let g = carpet(2);
        let a = g.find(&[0, 0]).unwrap();
        let b = g.find(&[2, 0]).unwrap();
        let c = g.find(&[1, 0]).unwrap();
        let isos = association_isometries(&g, a, b, 1).unwrap();
        assert_eq!(isos[0].permutation, vec![0, 1]);
        assert_eq!(isos[0].signs, vec![-1, 1]);
        assert!(isos.iter().all(|i| i.maps(g.coord(a), g.coord(b), 3)));
        assert_eq!(association_isometries(&g, a, c, 0).unwrap().len(), 8);
        assert!(association_isometries(&g, a, a, 2).unwrap().iter().any(|i| *i == CubeIsometry::identity(2, vec![0, 0])));
        assert_eq!(association_level(&g, a, b, 1).unwrap(), 1);
        assert_eq!(association_level(&g, a, c, 2).unwrap(), 0);
        assert_eq!(association_level(&g, a, a, 2).unwrap(), 2);
        assert!(association_isometries(&g, a, b, 3).is_err());
    }

    #[test]
    fn mirrored_step_meets_on_the_axis() {
        let g = carpet(1);
        let a = g.find(&[0, 0]).unwrap();
        let b = g.find(&[2, 0]).unwrap();
        let c = g.find(&[1, 0]).unwrap();
        let coupler = Coupler::new(&g, 1).unwrap();
        let mut rng = rng::stream(0, "test", 0);
        let state = coupler.associate(a, b, &mut rng).unwrap();
        assert_eq!(state.level, 1);
        let mut seen = false;
        for i in 0..200 {
            let mut rng = rng::stream(i, "test", 0);
            let (next, kind) = coupler.coupled_step(&state, &mut rng).unwrap();
            assert_eq!(kind, StepKind::Mirrored);
            if next.x == c {
                assert_eq!(next.y, c);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn identical_start_is_coupled_immediately() {
        let g = carpet(3);
        let out = run_coupled_walk(&g, 0, 0, 2, 100, 1).unwrap();
        assert!(out.coupled && !out.exited_box);
        assert_eq!(out.steps_taken, 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let g = carpet(3);
        let x = g.find(&[0, 1]).unwrap();
        let y = g.find(&[2, 2]).unwrap();
        let a = run_coupled_walk(&g, x, y, 2, 10_000, 9).unwrap();
        let b = run_coupled_walk(&g, x, y, 2, 10_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.coupled != a.exited_box || a.truncated);
    }

    #[test]
    fn start_validation() {
        let g = carpet(2);
        assert!(run_coupled_walk(&g, 0, 1, 2, 10, 0).is_err());
        let g = carpet(3);
        let far = g.find(&[8, 8]).unwrap();
        assert!(run_coupled_walk(&g, 0, far, 2, 10, 0).is_err());
        let c = Coupler::new(&g, 2).unwrap();
        assert!(coupling_probability(&c, 0, 1, 2, 0, 10, 0, false).is_err());
        assert!(upgrade_probability(&c, 0, 2, 8, 0, 10, 0).is_err());
    }
}
