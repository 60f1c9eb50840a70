//! Discrete Dirichlet problems on boxes and balls of the graphical carpet:
//! harmonic measure, Harnack constants, oscillation ratios, hitting
//! probabilities and expected exit times.
//!
//! A function is harmonic at `v` when it equals the mean of its values over
//! the graph neighbors of `v`. Using the true vertex degree means the walk
//! reflects off the carpet's internal holes and the walls at coordinate 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::carpet::CarpetGraph;
use crate::error::{Error, Result};
use crate::network::{LatticeGraph, Network};
use crate::par;
use crate::solver::{solve_dirichlet_system, SolveOptions};

/// Values below this are treated as zero in Harnack ratios.
pub const HARNACK_FLOOR: f64 = 1e-300;

/// Tolerated overshoot in the post-solve maximum principle check, relative
/// to the magnitude of the boundary data.
const MAX_PRINCIPLE_SLACK: f64 = 1e-7;

/// Dirichlet domain: unknowns on `interior`, prescribed data on `boundary`.
#[derive(Debug, Clone)]
pub struct BoxDomain<'g> {
    network: &'g Network,
    pub level: Option<u32>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl<'g> BoxDomain<'g> {
    /// The box `D_j` of a carpet graph.
    pub fn of_box(graph: &'g CarpetGraph, j: u32) -> Result<Self> {
        let part = graph.box_vertices(j)?;
        Ok(BoxDomain {
            network: graph.network(),
            level: Some(j),
            interior: part.interior(),
            boundary: part.boundary,
        })
    }

    /// Arbitrary domain; every neighbor of an interior vertex must be in the
    /// interior or on the boundary.
    pub fn new(network: &'g Network, mut interior: Vec<usize>, mut boundary: Vec<usize>) -> Result<Self> {
        interior.sort_unstable();
        boundary.sort_unstable();
        let mut role = vec![0u8; network.len()];
        for &v in &interior {
            if v >= network.len() {
                return Err(Error::Argument(format!("vertex {v} out of range")));
            }
            role[v] = 1;
        }
        for &b in &boundary {
            if b >= network.len() {
                return Err(Error::Argument(format!("vertex {b} out of range")));
            }
            if role[b] == 1 {
                return Err(Error::Argument(format!("vertex {b} is both interior and boundary")));
            }
            role[b] = 2;
        }
        for &v in &interior {
            if let Some(&w) = network.neighbors(v).iter().find(|&&w| role[w] == 0) {
                return Err(Error::Argument(format!(
                    "interior vertex {v} has neighbor {w} outside the domain"
                )));
            }
        }
        Ok(BoxDomain {
            network,
            level: None,
            interior,
            boundary,
        })
    }

    pub fn network(&self) -> &'g Network {
        self.network
    }

    /// Boundary vertices adjacent to at least one interior vertex; the only
    /// ones a walk started inside can hit first.
    pub fn exposed_boundary(&self) -> Vec<usize> {
        let mut is_interior = vec![false; self.network.len()];
        for &v in &self.interior {
            is_interior[v] = true;
        }
        self.boundary
            .iter()
            .copied()
            .filter(|&b| self.network.neighbors(b).iter().any(|&w| is_interior[w]))
            .collect()
    }

    fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.interior.iter().chain(&self.boundary).copied()
    }
}

/// Solution of a Dirichlet problem. `values` spans every graph vertex;
/// entries outside the domain are NaN.
#[derive(Debug, Clone)]
pub struct HarmonicField {
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl HarmonicField {
    pub fn value(&self, v: usize) -> f64 {
        self.values[v]
    }
}

/// Harmonic extension of `boundary_values` (indexed like `domain.boundary`).
pub fn solve_dirichlet(domain: &BoxDomain<'_>, boundary_values: &[f64], tolerance: f64) -> Result<HarmonicField> {
    if domain.boundary.is_empty() {
        return Err(Error::Argument("domain has an empty boundary".into()));
    }
    if boundary_values.len() != domain.boundary.len() {
        return Err(Error::Argument(format!(
            "{} boundary values for {} boundary vertices",
            boundary_values.len(),
            domain.boundary.len()
        )));
    }
    let mut known = vec![0.0; domain.network.len()];
    for (&b, &g) in domain.boundary.iter().zip(boundary_values) {
        known[b] = g;
    }
    let sol = solve_dirichlet_system(
        domain.network,
        &domain.interior,
        &known,
        None,
        &SolveOptions::with_tolerance(tolerance),
    )?;
    let (lo, hi) = boundary_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &g| (l.min(g), h.max(g)));
    let slack = MAX_PRINCIPLE_SLACK * (hi - lo).abs().max(hi.abs()).max(lo.abs()).max(1e-300);
    for &v in &domain.interior {
        let value = sol.values[v];
        if !(value >= lo - slack && value <= hi + slack) {
            return Err(Error::MaxPrinciple { vertex: v, value, min: lo, max: hi });
        }
    }
    let mut values = vec![f64::NAN; domain.network.len()];
    for v in domain.members() {
        values[v] = sol.values[v];
    }
    Ok(HarmonicField {
        values,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// Harmonic measure of the single boundary vertex `b`.
pub fn harmonic_measure(domain: &BoxDomain<'_>, b: usize, tolerance: f64) -> Result<HarmonicField> {
    let pos = domain
        .boundary
        .iter()
        .position(|&w| w == b)
        .ok_or_else(|| Error::Argument(format!("vertex {b} is not on the domain boundary")))?;
    let mut data = vec![0.0; domain.boundary.len()];
    data[pos] = 1.0;
    solve_dirichlet(domain, &data, tolerance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub level: u32,
    /// `max_b max_{x,y inner} h_b(x) / h_b(y)`.
    pub constant: f64,
    /// `max_b osc_inner(h_b) / sup_box(h_b)`.
    pub rho: f64,
    /// Witness of `constant`: numerator vertex, denominator vertex, boundary vertex.
    pub witness: (usize, usize, usize),
    /// Boundary vertex attaining `rho`.
    pub rho_witness: usize,
    /// Inner vertices where the `rho` witness is largest and smallest.
    pub rho_pair: (usize, usize),
    pub boundary_solves: usize,
    pub max_residual: f64,
}

struct SweepEntry {
    b: usize,
    argmax: usize,
    max: f64,
    argmin: usize,
    min: f64,
    sup: f64,
    residual: f64,
}

fn check_level(graph: &CarpetGraph, n: u32) -> Result<()> {
    if n < 1 || n > graph.level() {
        return Err(Error::Range(format!(
            "box level {n} must lie in 1..={}",
            graph.level()
        )));
    }
    Ok(())
}

fn boundary_sweep(graph: &CarpetGraph, n: u32, tolerance: f64) -> Result<(Vec<usize>, Vec<SweepEntry>)> {
    check_level(graph, n)?;
    let domain = BoxDomain::of_box(graph, n)?;
    let inner = graph.box_vertices(n)?.inner;
    let exposed = domain.exposed_boundary();
    let results = par::map_slice(&exposed, |&b| -> Result<SweepEntry> {
        let h = harmonic_measure(&domain, b, tolerance)?;
        let mut e = SweepEntry {
            b,
            argmax: inner[0],
            max: f64::NEG_INFINITY,
            argmin: inner[0],
            min: f64::INFINITY,
            sup: f64::NEG_INFINITY,
            residual: h.residual,
        };
        for &x in &inner {
            let v = h.value(x);
            if v > e.max {
                e.max = v;
                e.argmax = x;
            }
            if v < e.min {
                e.min = v;
                e.argmin = x;
            }
        }
        for z in domain.members() {
            e.sup = e.sup.max(h.value(z).abs());
        }
        Ok(e)
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((inner, entries))
}

/// Harnack constant and oscillation estimate of `D_n`, by a sweep over
/// the harmonic measures of all exposed boundary vertices.
///
/// Every positive harmonic function on the box is a nonnegative combination
/// of these harmonic measures, so the largest ratio among them bounds the
/// ratio of any positive harmonic function.
pub fn harnack_constant(graph: &CarpetGraph, n: u32, tolerance: f64) -> Result<HarnackReport> {
    let (inner, entries) = boundary_sweep(graph, n, tolerance)?;
    let mut report = HarnackReport {
        level: n,
        constant: 1.0,
        rho: 0.0,
        witness: (inner[0], inner[0], entries.first().map_or(0, |e| e.b)),
        rho_witness: entries.first().map_or(0, |e| e.b),
        rho_pair: (inner[0], inner[0]),
        boundary_solves: entries.len(),
        max_residual: 0.0,
    };
    for e in &entries {
        if e.min < HARNACK_FLOOR {
            return Err(Error::Degenerate { boundary: e.b, y: e.argmin, value: e.min });
        }
        let ratio = e.max / e.min;
        if ratio > report.constant {
            report.constant = ratio;
            report.witness = (e.argmax, e.argmin, e.b);
        }
        let osc = (e.max - e.min) / e.sup;
        if osc > report.rho {
            report.rho = osc;
            report.rho_witness = e.b;
            report.rho_pair = (e.argmax, e.argmin);
        }
        report.max_residual = report.max_residual.max(e.residual);
    }
    Ok(report)
}

/// Extreme-ray estimate of the oscillation ratio of `D_n`.
pub fn oscillation_rho(graph: &CarpetGraph, n: u32, tolerance: f64) -> Result<f64> {
    let (_, entries) = boundary_sweep(graph, n, tolerance)?;
    Ok(entries
        .iter()
        .map(|e| (e.max - e.min) / e.sup)
        .fold(0.0, f64::max))
}

/// Lattice graphs that know which balls they contain in full.
pub trait Geometry: Sync {
    fn lattice(&self) -> &LatticeGraph;

    /// True if every cell closer than `radius` to `center`, together with
    /// its neighbors, belongs to the built region.
    fn ball_fits(&self, center: usize, radius: f64) -> bool;
}

impl Geometry for LatticeGraph {
    fn lattice(&self) -> &LatticeGraph {
        self
    }

    fn ball_fits(&self, center: usize, radius: f64) -> bool {
        let reach = radius.ceil().max(1.0) as i64;
        let c = self.coord(center);
        (0..self.dim()).all(|axis| {
            let (lo, hi) = self.bounds(axis);
            c[axis] - reach >= lo && c[axis] + reach <= hi
        })
    }
}

impl Geometry for CarpetGraph {
    fn lattice(&self) -> &LatticeGraph {
        CarpetGraph::lattice(self)
    }

    // The faces at coordinate 0 are walls of the carpet itself, so only the
    // far faces limit the ball.
    fn ball_fits(&self, center: usize, radius: f64) -> bool {
        let reach = radius.ceil().max(1.0) as i64;
        self.coord(center).iter().all(|&c| c + reach <= self.side() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingSpec {
    pub center: usize,
    pub radius: f64,
    /// Start points satisfy `|y - x| <= offset_factor * radius`.
    pub offset_factor: f64,
    /// The walk is killed at distance `outer_factor * radius`.
    pub outer_factor: f64,
}

impl HittingSpec {
    pub fn new(center: usize, radius: f64, offset_factor: f64, outer_factor: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Argument(format!("radius {radius} must be positive")));
        }
        if !(offset_factor > 1.0 && outer_factor > offset_factor) {
            return Err(Error::Argument(format!(
                "need outer factor > offset factor > 1, got {outer_factor} and {offset_factor}"
            )));
        }
        Ok(HittingSpec { center, radius, offset_factor, outer_factor })
    }
}

/// Probability, for every vertex, that the walk reaches the open ball
/// `B(x, r)` before leaving `B(x, c2 r)`. Entries outside the outer ball are 0.
pub fn hitting_field<G: Geometry>(graph: &G, spec: &HittingSpec, tolerance: f64) -> Result<HarmonicField> {
    let lat = graph.lattice();
    let outer = spec.outer_factor * spec.radius;
    if !graph.ball_fits(spec.center, outer) {
        return Err(Error::Range(format!(
            "ball of radius {outer} around vertex {} leaves the built graph; build a larger level",
            spec.center
        )));
    }
    let (r2, o2) = (spec.radius * spec.radius, outer * outer);
    let mut known = vec![0.0; lat.len()];
    let mut interior = Vec::new();
    for v in 0..lat.len() {
        let d2 = lat.dist2(spec.center, v) as f64;
        if d2 < r2 {
            known[v] = 1.0;
        } else if d2 < o2 {
            interior.push(v);
        }
    }
    let sol = solve_dirichlet_system(
        lat.network(),
        &interior,
        &known,
        None,
        &SolveOptions::with_tolerance(tolerance),
    )?;
    Ok(HarmonicField {
        values: sol.values,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// `P^y(T(x, r) < tau(x, c2 r))` for the simple random walk.
pub fn hitting_probability<G: Geometry>(graph: &G, spec: &HittingSpec, y: usize, tolerance: f64) -> Result<f64> {
    let lat = graph.lattice();
    let limit = spec.offset_factor * spec.radius;
    if lat.dist(spec.center, y) > limit {
        return Err(Error::Argument(format!(
            "start vertex {y} is farther than {limit} from the center"
        )));
    }
    Ok(hitting_field(graph, spec, tolerance)?.value(y))
}

/// Expected number of lazy-walk steps (holding probability 1/2) for the
/// walk from `x` to reach distance at least `r` from `x`.
pub fn expected_exit_time<G: Geometry>(graph: &G, x: usize, r: f64) -> Result<f64> {
    expected_exit_time_with(graph, x, r, 0.5, crate::solver::DEFAULT_TOLERANCE)
}

/// Exit time for a walk that holds with probability `holding` each step.
pub fn expected_exit_time_with<G: Geometry>(
    graph: &G,
    x: usize,
    r: f64,
    holding: f64,
    tolerance: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&holding) {
        return Err(Error::Argument(format!("holding probability {holding} not in [0, 1)")));
    }
    if !(r > 0.0) {
        return Ok(0.0);
    }
    if !graph.ball_fits(x, r) {
        return Err(Error::Range(format!(
            "ball of radius {r} around vertex {x} leaves the built graph; build a larger level"
        )));
    }
    let lat = graph.lattice();
    let r2 = r * r;
    let interior: Vec<usize> = (0..lat.len())
        .filter(|&v| (lat.dist2(x, v) as f64) < r2)
        .collect();
    // (1 - holding) * (deg u - sum of neighbors) = deg per step
    let source: Vec<f64> = interior
        .iter()
        .map(|&v| lat.network().degree(v) as f64 / (1.0 - holding))
        .collect();
    let known = vec![0.0; lat.len()];
    let sol = solve_dirichlet_system(
        lat.network(),
        &interior,
        &known,
        Some(&source),
        &SolveOptions::with_tolerance(tolerance),
    )?;
    Ok(sol.values[x])
}

/// Samples `count` pairs `(x, y)` with the outer ball around `x` inside the
/// graph and `|y - x| <= c1 r`.
pub fn sample_hitting_pairs<G: Geometry, R: Rng>(
    graph: &G,
    radius: f64,
    offset_factor: f64,
    outer_factor: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let lat = graph.lattice();
    let centers: Vec<usize> = (0..lat.len())
        .filter(|&v| graph.ball_fits(v, outer_factor * radius))
        .collect();
    if centers.is_empty() {
        return Err(Error::Range(format!(
            "no vertex admits an outer ball of radius {}",
            outer_factor * radius
        )));
    }
    let reach2 = (offset_factor * radius).powi(2);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let x = centers[rng.random_range(0..centers.len())];
        let near: Vec<usize> = (0..lat.len())
            .filter(|&y| (lat.dist2(x, y) as f64) <= reach2)
            .collect();
        let y = near[rng.random_range(0..near.len())];
        pairs.push((x, y));
    }
    Ok(pairs)
}
