//! Dirichlet energies, effective resistances and resistance to infinity on
//! unit-conductance networks.

use serde::{Deserialize, Serialize};

use crate::carpet::{build_graph, CarpetGraph, CarpetParams};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::par;
use crate::solver::{solve_dirichlet_system, SolveOptions};

/// Successive resistance increments must shrink by at least this factor
/// before a finite limit is extrapolated.
pub const DIVERGENCE_RATIO: f64 = 1.05;

/// A potential together with its Dirichlet energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub potential: Vec<f64>,
    pub energy: f64,
}

/// `sum over edges {x, y} of (f(x) - f(y))^2`, accumulated in edge order.
pub fn dirichlet_energy(network: &Network, f: &[f64]) -> f64 {
    assert_eq!(f.len(), network.len(), "potential length must match the network");
    let mut energy = 0.0;
    for (u, v) in network.edges() {
        let d = f[u] - f[v];
        energy += d * d;
    }
    energy
}

fn membership(n: usize, set: &[usize], name: &str) -> Result<Vec<bool>> {
    if set.is_empty() {
        return Err(Error::Argument(format!("{name} is empty")));
    }
    let mut mark = vec![false; n];
    for &v in set {
        if v >= n {
            return Err(Error::Argument(format!("{name} contains {v}, outside the network")));
        }
        mark[v] = true;
    }
    Ok(mark)
}

/// Potential equal to 1 on `a`, 0 on `b` and harmonic elsewhere.
///
/// Components that touch only `a` are held at 1 and components that touch
/// neither set at 0; both carry no energy. Returns `None` when no component
/// meets both sets, so that no current can flow.
pub fn unit_potential(network: &Network, a: &[usize], b: &[usize], tolerance: f64) -> Result<Option<FlowField>> {
    let n = network.len();
    let in_a = membership(n, a, "source set")?;
    let in_b = membership(n, b, "ground set")?;
    if let Some(v) = (0..n).find(|&v| in_a[v] && in_b[v]) {
        return Err(Error::Argument(format!("vertex {v} is in both sets")));
    }
    let comp = network.components();
    let ncomp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut touches = vec![(false, false); ncomp];
    for v in 0..n {
        touches[comp[v]].0 |= in_a[v];
        touches[comp[v]].1 |= in_b[v];
    }
    if !touches.iter().any(|&(ta, tb)| ta && tb) {
        return Ok(None);
    }
    let mut known = vec![0.0; n];
    let mut interior = Vec::new();
    for v in 0..n {
        let (ta, tb) = touches[comp[v]];
        if in_a[v] || (ta && !tb) {
            known[v] = 1.0;
        } else if !in_b[v] && ta && tb {
            interior.push(v);
        }
    }
    let sol = solve_dirichlet_system(network, &interior, &known, None, &SolveOptions::with_tolerance(tolerance))?;
    let energy = dirichlet_energy(network, &sol.values);
    Ok(Some(FlowField {
        potential: sol.values,
        energy,
    }))
}

/// Effective resistance between `a` and `b` with unit conductances.
/// Infinite when no path joins the two sets.
pub fn effective_resistance(network: &Network, a: &[usize], b: &[usize], tolerance: f64) -> Result<f64> {
    Ok(match unit_potential(network, a, b, tolerance)? {
        Some(field) => 1.0 / field.energy,
        None => f64::INFINITY,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Extrapolation {
    /// Geometric fit `R_N = R - beta * gamma^N` through the last three levels.
    Converged { value: f64, gamma: f64 },
    /// Increments did not shrink by [`DIVERGENCE_RATIO`].
    Divergent { decay_ratio: f64 },
    /// No fit was attempted; the raw sequence is still reported.
    Refused { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceReport {
    pub target: Vec<usize>,
    pub levels: Vec<u32>,
    /// `R_N` for each level, grounded on everything outside the interior of `D_N`.
    pub resistances: Vec<f64>,
    pub extrapolation: Extrapolation,
}

impl ResistanceReport {
    pub fn extrapolated(&self) -> Option<f64> {
        match self.extrapolation {
            Extrapolation::Converged { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self.extrapolation, Extrapolation::Divergent { .. })
    }
}

fn extrapolate(levels: &[u32], r: &[f64]) -> Extrapolation {
    let n = r.len();
    if n < 3 {
        return Extrapolation::Refused {
            reason: format!("{n} levels given, at least 3 are needed"),
        };
    }
    if levels[n - 2] != levels[n - 3] + 1 || levels[n - 1] != levels[n - 2] + 1 {
        return Extrapolation::Refused {
            reason: "the last three levels are not consecutive".into(),
        };
    }
    if r[n - 3..].iter().any(|v| !v.is_finite()) {
        return Extrapolation::Refused {
            reason: "infinite resistance in the sequence".into(),
        };
    }
    let d1 = r[n - 2] - r[n - 3];
    let d2 = r[n - 1] - r[n - 2];
    if d2 <= 0.0 {
        return Extrapolation::Converged {
            value: r[n - 1],
            gamma: 0.0,
        };
    }
    let decay_ratio = d1 / d2;
    if decay_ratio < DIVERGENCE_RATIO {
        return Extrapolation::Divergent { decay_ratio };
    }
    let gamma = d2 / d1;
    Extrapolation::Converged {
        value: r[n - 1] + d2 * gamma / (1.0 - gamma),
        gamma,
    }
}

/// Resistance from `target` to the exterior of the box `D_N` for each
/// requested `N`, with a geometric extrapolation in `N`. A level whose
/// ground meets the target contributes zero.
pub fn resistance_to_infinity(graph: &CarpetGraph, target: &[usize], levels: &[u32], tolerance: f64) -> Result<ResistanceReport> {
    if levels.is_empty() {
        return Err(Error::Argument("no levels given".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("levels must be strictly increasing".into()));
    }
    if let Some(&n) = levels.iter().find(|&&n| n == 0 || n > graph.level()) {
        return Err(Error::Range(format!(
            "level {n} outside 1..={}",
            graph.level()
        )));
    }
    let mut target = target.to_vec();
    target.sort_unstable();
    target.dedup();
    membership(graph.len(), &target, "target set")?;
    let k = graph.params().k() as i64;
    let resistances = par::map_slice(levels, |&n| -> Result<f64> {
        let limit = k.pow(n) - 1;
        let ground: Vec<usize> = (0..graph.len())
            .filter(|&v| graph.coord(v).iter().any(|&c| c >= limit))
            .collect();
        let mut is_ground = vec![false; graph.len()];
        for &v in &ground {
            is_ground[v] = true;
        }
        if target.iter().any(|&v| is_ground[v]) {
            return Ok(0.0);
        }
        effective_resistance(graph.network(), &target, &ground, tolerance)
    });
    let resistances = resistances.into_iter().collect::<Result<Vec<_>>>()?;
    let extrapolation = extrapolate(levels, &resistances);
    Ok(ResistanceReport {
        target,
        levels: levels.to_vec(),
        resistances,
        extrapolation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceResistance {
    pub level: u32,
    pub value: f64,
    /// Both faces coincide, which happens only at level 0.
    pub degenerate: bool,
}

/// Resistance across the level-`n` carpet between the faces where the
/// first coordinate is `0` and `k^n - 1`.
pub fn face_resistance(params: &CarpetParams, n: u32, tolerance: f64) -> Result<FaceResistance> {
    let graph = build_graph(n, params)?;
    face_resistance_of(&graph, tolerance)
}

/// [`face_resistance`] on an already built graph.
pub fn face_resistance_of(graph: &CarpetGraph, tolerance: f64) -> Result<FaceResistance> {
    let last = graph.side() - 1;
    if last == 0 {
        return Ok(FaceResistance {
            level: graph.level(),
            value: 0.0,
            degenerate: true,
        });
    }
    let face = |c: i64| -> Vec<usize> { (0..graph.len()).filter(|&v| graph.coord(v)[0] == c).collect() };
    Ok(FaceResistance {
        level: graph.level(),
        value: effective_resistance(graph.network(), &face(0), &face(last), tolerance)?,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub size: usize,
    pub report: ResistanceReport,
    /// `|A| R(A)^zeta`, present when the resistance extrapolated.
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub spectral_dimension: f64,
    pub spectral_dimension_se: f64,
    pub zeta: f64,
    /// `d zeta / d d_s = -2 / (d_s - 2)^2`.
    pub dzeta_dds: f64,
    /// First-order error of `zeta` propagated from the `d_s` error bar.
    pub zeta_se: f64,
    pub entries: Vec<CapacityEntry>,
    pub max_constant: Option<f64>,
    /// `max c_i / min c_i`; absent unless every set extrapolated.
    pub spread: Option<f64>,
}

/// Computes `c_i = |A_i| R(A_i)^zeta` with `zeta = d_s / (d_s - 2)` for
/// every target set and reports how uniform the constants are.
pub fn capacity_volume_check(
    graph: &CarpetGraph,
    sets: &[Vec<usize>],
    levels: &[u32],
    ds: f64,
    ds_se: f64,
    tolerance: f64,
) -> Result<CapacityReport> {
    if !(ds > 2.0) {
        return Err(Error::Hypothesis(format!(
            "spectral dimension {ds} does not exceed 2"
        )));
    }
    if sets.is_empty() {
        return Err(Error::Argument("no target sets".into()));
    }
    let zeta = ds / (ds - 2.0);
    let dzeta_dds = -2.0 / ((ds - 2.0) * (ds - 2.0));
    let reports = sets
        .iter()
        .map(|s| resistance_to_infinity(graph, s, levels, tolerance))
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<CapacityEntry> = reports
        .into_iter()
        .map(|report| {
            let size = report.target.len();
            CapacityEntry {
                size,
                constant: report.extrapolated().map(|r| size as f64 * r.powf(zeta)),
                report,
            }
        })
        .collect();
    let constants: Option<Vec<f64>> = entries.iter().map(|e| e.constant).collect();
    let (max_constant, spread) = match constants {
        Some(c) => {
            let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = c.iter().copied().fold(f64::INFINITY, f64::min);
            (Some(max), Some(max / min))
        }
        None => (entries.iter().filter_map(|e| e.constant).reduce(f64::max), None),
    };
    Ok(CapacityReport {
        spectral_dimension: ds,
        spectral_dimension_se: ds_se,
        zeta,
        dzeta_dds,
        zeta_se: dzeta_dds.abs() * ds_se,
        entries,
        max_constant,
        spread,
    })
}

/// Vertices of the corner box `[0, s)^d`.
pub fn corner_box(graph: &CarpetGraph, s: i64) -> Vec<usize> {
    (0..graph.len())
        .filter(|&v| graph.coord(v).iter().all(|&c| c < s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::validate_params;

    #[test]
    fn energy_examples() {
        let net = Network::path(2);
        assert_eq!(dirichlet_energy(&net, &[0.0, 1.0]), 1.0);
        assert_eq!(dirichlet_energy(&net, &[3.0, 3.0]), 0.0);
        let cyc = Network::cycle(8);
        let f = [0.0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25];
        assert_eq!(dirichlet_energy(&cyc, &f), 0.5);
    }

    #[test]
    fn series_and_parallel() {
        let tol = 1e-10;
        assert!((effective_resistance(&Network::path(2), &[0], &[1], tol).unwrap() - 1.0).abs() < 1e-12);
        assert!((effective_resistance(&Network::path(3), &[0], &[2], tol).unwrap() - 2.0).abs() < 1e-10);
        assert!((effective_resistance(&Network::cycle(8), &[0], &[4], tol).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn argument_errors_and_disconnection() {
        let net = Network::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(effective_resistance(&net, &[], &[1], 1e-10).is_err());
        assert!(effective_resistance(&net, &[0], &[0, 1], 1e-10).is_err());
        assert_eq!(effective_resistance(&net, &[0], &[3], 1e-10).unwrap(), f64::INFINITY);
        assert!((effective_resistance(&net, &[0, 2], &[1], 1e-10).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn face_resistance_small_levels() {
        let p = validate_params(2, 3, 1).unwrap();
        let r0 = face_resistance(&p, 0, 1e-10).unwrap();
        assert!(r0.degenerate && r0.value == 0.0);
        let r1 = face_resistance(&p, 1, 1e-10).unwrap();
        assert!((r1.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn extrapolation_rules() {
        let geo: Vec<f64> = (1..=3).map(|n| 2.0 - 0.5f64.powi(n)).collect();
        match extrapolate(&[1, 2, 3], &geo) {
            Extrapolation::Converged { value, gamma } => {
                assert!((value - 2.0).abs() < 1e-12);
                assert!((gamma - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(extrapolate(&[1, 2, 3], &[1.0, 2.0, 3.0]), Extrapolation::Divergent { .. }));
        assert!(matches!(extrapolate(&[1, 2], &[1.0, 2.0]), Extrapolation::Refused { .. }));
        assert!(matches!(extrapolate(&[1, 2, 4], &[1.0, 2.0, 2.5]), Extrapolation::Refused { .. }));
    }

    #[test]
    fn target_meeting_ground_has_zero_resistance() {
        let g = build_graph(2, &validate_params(2, 3, 1).unwrap()).unwrap();
        let boundary = g.box_vertices(2).unwrap().boundary;
        let rep = resistance_to_infinity(&g, &boundary, &[2], 1e-10).unwrap();
        assert_eq!(rep.resistances, vec![0.0]);
    }

    #[test]
    fn hypothesis_check() {
        let g = build_graph(2, &validate_params(2, 3, 1).unwrap()).unwrap();
        let err = capacity_volume_check(&g, &[vec![0]], &[1, 2], 1.9, 0.01, 1e-10);
        assert!(matches!(err, Err(Error::Hypothesis(_))));
    }
}
