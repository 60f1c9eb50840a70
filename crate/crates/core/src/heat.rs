//! Lazy random-walk heat kernel and the scaling exponents fitted from it.
//!
//! One step of the walk holds with probability `laziness` and otherwise
//! moves to a uniformly chosen graph neighbor. Kernel rows are propagated
//! with sparse operator application only; memory stays O(|V|).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, ExponentEstimate};
use crate::harmonic::{expected_exit_time, Geometry};
use crate::network::{LatticeGraph, Network};
use crate::par;
use crate::rng;

pub const DEFAULT_LAZINESS: f64 = 0.5;

/// Kernel entries below this are excluded from logarithmic fits.
pub const PROBABILITY_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone)]
pub struct TransitionOperator<'g> {
    network: &'g Network,
    laziness: f64,
    inv_degree: Vec<f64>,
}

impl<'g> TransitionOperator<'g> {
    pub fn new(network: &'g Network) -> Self {
        Self::with_laziness(network, DEFAULT_LAZINESS).expect("default laziness is valid")
    }

    pub fn with_laziness(network: &'g Network, laziness: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&laziness) {
            return Err(Error::Argument(format!("laziness {laziness} not in [0, 1]")));
        }
        let inv_degree = (0..network.len())
            .map(|v| match network.degree(v) {
                0 => 0.0,
                d => 1.0 / d as f64,
            })
            .collect();
        Ok(TransitionOperator {
            network,
            laziness,
            inv_degree,
        })
    }

    pub fn network(&self) -> &'g Network {
        self.network
    }

    pub fn laziness(&self) -> f64 {
        self.laziness
    }

    /// Pushes a distribution forward one step. Each output entry is gathered
    /// from its neighbors in fixed order.
    pub fn step(&self, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; dist.len()];
        self.step_into(dist, &mut out);
        out
    }

    fn step_into(&self, dist: &[f64], out: &mut [f64]) {
        let move_p = 1.0 - self.laziness;
        par::fill_indexed(out, |v| {
            let stay = if self.network.degree(v) == 0 {
                dist[v]
            } else {
                self.laziness * dist[v]
            };
            let mut inflow = 0.0;
            for &u in self.network.neighbors(v) {
                inflow += dist[u] * self.inv_degree[u];
            }
            stay + move_p * inflow
        });
    }

    /// Degree-proportional stationary distribution.
    pub fn stationary(&self) -> Vec<f64> {
        let total: f64 = (0..self.network.len()).map(|v| self.network.degree(v) as f64).sum();
        (0..self.network.len())
            .map(|v| self.network.degree(v) as f64 / total)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct HeatKernelRow {
    pub source: usize,
    pub time: u64,
    pub probs: Vec<f64>,
}

fn point_mass(n: usize, x: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[x] = 1.0;
    p
}

/// `p_t(x, .)`.
pub fn heat_kernel_row(op: &TransitionOperator<'_>, x: usize, t: u64) -> HeatKernelRow {
    let mut rows = heat_kernel_rows(op, x, &[t]);
    rows.pop().expect("one row requested")
}

/// Rows `p_t(x, .)` for every requested time, computed in one sweep.
pub fn heat_kernel_rows(op: &TransitionOperator<'_>, x: usize, times: &[u64]) -> Vec<HeatKernelRow> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| times[i]);
    let mut out: Vec<Option<HeatKernelRow>> = vec![None; times.len()];
    let mut cur = point_mass(op.network.len(), x);
    let mut next = vec![0.0; cur.len()];
    let mut now = 0u64;
    for i in order {
        while now < times[i] {
            op.step_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            now += 1;
        }
        out[i] = Some(HeatKernelRow {
            source: x,
            time: now,
            probs: cur.clone(),
        });
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// On-diagonal values `p_t(x, x)` at the requested times.
pub fn diagonal_series(op: &TransitionOperator<'_>, x: usize, times: &[u64]) -> Vec<(u64, f64)> {
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut cur = point_mass(op.network.len(), x);
    let mut next = vec![0.0; cur.len()];
    let mut now = 0u64;
    let mut out = Vec::with_capacity(sorted.len());
    for t in sorted {
        while now < t {
            op.step_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            now += 1;
        }
        out.push((t, cur[x]));
    }
    out
}

/// Powers of two in `[lo, hi]`.
pub fn dyadic_times(lo: u64, hi: u64) -> Vec<u64> {
    (0..64)
        .map(|i| 1u64 << i)
        .filter(|&t| t >= lo && t <= hi)
        .collect()
}

/// `(side / 4)^2` for the largest coordinate extent: beyond this the walk
/// feels the finite box.
pub fn saturation_time(lattice: &LatticeGraph) -> u64 {
    let side = (0..lattice.dim())
        .map(|a| {
            let (lo, hi) = lattice.bounds(a);
            hi - lo + 1
        })
        .max()
        .unwrap_or(1);
    ((side as f64 / 4.0).powi(2)).floor() as u64
}

/// Spectral dimension from the on-diagonal decay `p_t(x, x) ~ t^(-d_s / 2)`,
/// fitted over the times falling inside `window`.
pub fn estimate_ds(
    op: &TransitionOperator<'_>,
    x: usize,
    times: &[u64],
    window: (u64, u64),
) -> Result<ExponentEstimate> {
    let inside: Vec<u64> = times
        .iter()
        .copied()
        .filter(|&t| t > 0 && t >= window.0 && t <= window.1)
        .collect();
    let series = diagonal_series(op, x, &inside);
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|(_, p)| *p > PROBABILITY_FLOOR)
        .map(|&(t, p)| ((t as f64).ln(), p.ln()))
        .unzip();
    if xs.len() < 4 {
        return Err(Error::Fit(format!(
            "{} usable times in window {:?}; at least 4 are needed",
            xs.len(),
            window
        )));
    }
    let fit = linear_fit(&xs, &ys)?;
    let degenerate = ys.iter().all(|&y| y == ys[0]);
    Ok(ExponentEstimate {
        value: -2.0 * fit.slope,
        standard_error: 2.0 * fit.slope_se,
        fit_window: (window.0 as f64, window.1 as f64),
        r_squared: fit.r_squared,
        points: fit.points,
        degenerate,
        fit,
    })
}

/// Walk dimension from `E tau(x, r) ~ r^(d_w)` over the given radii.
pub fn estimate_dw<G: Geometry>(graph: &G, x: usize, radii: &[f64]) -> Result<ExponentEstimate> {
    if radii.len() < 3 {
        return Err(Error::Fit(format!(
            "{} radii given; at least 3 are needed",
            radii.len()
        )));
    }
    let times = par::map_slice(radii, |&r| expected_exit_time(graph, x, r));
    let times = times.into_iter().collect::<Result<Vec<f64>>>()?;
    dw_from_exit_times(radii, &times)
}

/// Log-log slope of mean exit times against radii.
pub fn dw_from_exit_times(radii: &[f64], times: &[f64]) -> Result<ExponentEstimate> {
    if radii.len() < 3 {
        return Err(Error::Fit(format!(
            "{} radii given; at least 3 are needed",
            radii.len()
        )));
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    let lo = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ExponentEstimate {
        value: fit.slope,
        standard_error: fit.slope_se,
        fit_window: (lo, hi),
        r_squared: fit.r_squared,
        points: fit.points,
        degenerate: false,
        fit,
    })
}

/// Regime fits of the off-diagonal kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    /// `-log(p t^(d_s/2))` against `(|x-y|^d_w / t)^(1/(d_w-1))` for
    /// `|x - y| <= t`.
    pub sub_gaussian: Option<ExponentEstimate>,
    /// `-log p` against `|x-y|^2 / t` for `|x - y| > t`.
    pub gaussian: Option<ExponentEstimate>,
    pub sub_gaussian_pairs: usize,
    pub gaussian_pairs: usize,
    /// Pairs whose kernel value is below the floating point floor.
    pub excluded: usize,
    /// Walk steps per unit of diffusion time.
    pub steps_per_time: f64,
}

/// Lazy-walk steps per unit of Brownian time: one step of the lazy walk
/// has mean squared displacement 1/2, Brownian motion in `R^d` has `d`.
pub fn brownian_steps_per_time(dim: usize) -> f64 {
    2.0 * dim as f64
}

/// Fits both off-diagonal regimes. `pairs` are `(y, steps)`; the regime
/// split compares `|x - y|` with the time `steps / steps_per_time`.
pub fn regime_fit(
    op: &TransitionOperator<'_>,
    lattice: &LatticeGraph,
    x: usize,
    pairs: &[(usize, u64)],
    ds: f64,
    dw: f64,
    steps_per_time: f64,
) -> Result<RegimeFit> {
    if !(dw > 1.0) {
        return Err(Error::Argument(format!("walk dimension {dw} must exceed 1")));
    }
    if !(steps_per_time > 0.0) {
        return Err(Error::Argument("steps per unit time must be positive".into()));
    }
    if let Some(&(y, _)) = pairs.iter().find(|(y, _)| *y >= lattice.len()) {
        return Err(Error::Argument(format!("vertex {y} out of range")));
    }
    let mut times: Vec<u64> = pairs.iter().map(|&(_, t)| t).collect();
    times.sort_unstable();
    times.dedup();
    let rows = heat_kernel_rows(op, x, &times);
    let row_of = |t: u64| &rows[times.binary_search(&t).expect("time present")].probs;

    let (mut ax, mut ay, mut bx, mut by) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut excluded = 0;
    for &(y, steps) in pairs {
        let p = row_of(steps)[y];
        if !(p > PROBABILITY_FLOOR) || steps == 0 {
            excluded += 1;
            continue;
        }
        let t = steps as f64 / steps_per_time;
        let r = lattice.dist(x, y);
        if r <= t {
            ax.push((r.powf(dw) / t).powf(1.0 / (dw - 1.0)));
            ay.push(-(p * t.powf(ds / 2.0)).ln());
        } else {
            bx.push(r * r / t);
            by.push(-p.ln());
        }
    }
    let estimate = |xs: &[f64], ys: &[f64]| -> Option<ExponentEstimate> {
        let fit = linear_fit(xs, ys).ok()?;
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(ExponentEstimate {
            value: fit.slope,
            standard_error: fit.slope_se,
            fit_window: (lo, hi),
            r_squared: fit.r_squared,
            points: fit.points,
            degenerate: false,
            fit,
        })
    };
    Ok(RegimeFit {
        sub_gaussian: estimate(&ax, &ay),
        gaussian: estimate(&bx, &by),
        sub_gaussian_pairs: ax.len(),
        gaussian_pairs: bx.len(),
        excluded,
        steps_per_time,
    })
}

/// One lazy step from `v`.
#[inline]
pub fn lazy_step<R: Rng + ?Sized>(network: &Network, v: usize, rng: &mut R) -> usize {
    let nbrs = network.neighbors(v);
    if nbrs.is_empty() || rng.random_bool(0.5) {
        v
    } else {
        nbrs[rng.random_range(0..nbrs.len())]
    }
}

/// Lazy-walk trajectory of `steps` steps from `x`, including the start.
pub fn monte_carlo_walk(network: &Network, x: usize, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, "walk", 0);
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x);
    let mut v = x;
    for _ in 0..steps {
        v = lazy_step(network, v, &mut rng);
        path.push(v);
    }
    path
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMean {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Sampled exit times from `B(x, r)`; walker `i` uses stream `(seed, "exit", i)`.
pub fn monte_carlo_exit_time(lattice: &LatticeGraph, x: usize, r: f64, walks: usize, seed: u64) -> SampleMean {
    let r2 = r * r;
    let samples = par::map_indexed(walks, |i| {
        let mut rng = rng::stream(seed, "exit", i as u64);
        let mut v = x;
        let mut steps = 0u64;
        while (lattice.dist2(x, v) as f64) < r2 {
            v = lazy_step(lattice.network(), v, &mut rng);
            steps += 1;
        }
        steps as f64
    });
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    SampleMean {
        mean,
        standard_error: (var / n).sqrt(),
        samples: samples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_graph, validate_params, CarpetGraph};

    fn level(n: u32) -> CarpetGraph {
        build_graph(n, &validate_params(2, 3, 1).unwrap()).unwrap()
    }

    #[test]
    fn one_step_from_point_mass() {
        let g = level(2);
        let op = TransitionOperator::new(g.network());
        let x = g.find(&[0, 0]).unwrap();
        let p = heat_kernel_row(&op, x, 1).probs;
        assert_eq!(p[x], 0.5);
        for &w in g.network().neighbors(x) {
            assert_eq!(p[w], 0.25);
        }
        assert_eq!(heat_kernel_row(&op, x, 0).probs, point_mass(g.len(), x));
    }

    #[test]
    fn stationary_is_fixed() {
        let g = level(2);
        let op = TransitionOperator::new(g.network());
        let pi = op.stationary();
        let next = op.step(&pi);
        for (a, b) in pi.iter().zip(&next) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn eight_cycle_two_steps() {
        let net = Network::cycle(8);
        let op = TransitionOperator::new(&net);
        let p = heat_kernel_row(&op, 0, 2).probs;
        let want = [0.375, 0.25, 0.0625, 0.0, 0.0, 0.0, 0.0625, 0.25];
        for (a, b) in p.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_vertex_holds() {
        let net = Network::path(1);
        let op = TransitionOperator::new(&net);
        assert_eq!(op.step(&[1.0]), vec![1.0]);
    }

    #[test]
    fn rows_in_any_order() {
        let net = Network::cycle(8);
        let op = TransitionOperator::new(&net);
        let rows = heat_kernel_rows(&op, 0, &[3, 1, 3]);
        assert_eq!(rows[0].time, 3);
        assert_eq!(rows[1].time, 1);
        assert_eq!(rows[0].probs, rows[2].probs);
    }

    #[test]
    fn flat_series_is_degenerate() {
        let net = Network::path(1);
        let op = TransitionOperator::new(&net);
        let est = estimate_ds(&op, 0, &dyadic_times(1, 64), (1, 64)).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.degenerate);
    }

    #[test]
    fn small_window_rejected() {
        let net = Network::cycle(8);
        let op = TransitionOperator::new(&net);
        assert!(matches!(
            estimate_ds(&op, 0, &dyadic_times(1, 8), (1, 4)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn too_few_radii() {
        let g = level(3);
        let x = g.find(&[2, 2]).unwrap();
        assert!(matches!(estimate_dw(&g, x, &[3.0]), Err(Error::Fit(_))));
    }

    #[test]
    fn walk_is_reproducible() {
        let g = level(3);
        assert_eq!(monte_carlo_walk(g.network(), 5, 0, 1), vec![5]);
        let a = monte_carlo_walk(g.network(), 5, 200, 9);
        assert_eq!(a, monte_carlo_walk(g.network(), 5, 200, 9));
        assert!(a.windows(2).all(|w| w[0] == w[1] || g.network().has_edge(w[0], w[1])));
    }

    #[test]
    fn regime_fit_excludes_unreachable_pairs() {
        let g = level(3);
        let op = TransitionOperator::new(g.network());
        let x = g.find(&[0, 0]).unwrap();
        let far = g.find(&[26, 26]).unwrap();
        let fit = regime_fit(&op, g.lattice(), x, &[(x, 4), (far, 4)], 1.8, 2.1, 4.0).unwrap();
        assert_eq!(fit.excluded, 1);
        assert_eq!(fit.sub_gaussian_pairs, 1);
        assert!(fit.sub_gaussian.is_none());
        assert!(fit.gaussian.is_none());
    }
}
