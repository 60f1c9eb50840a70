//! Jacobi-preconditioned conjugate gradients for graph Laplacian systems
//! restricted to an interior vertex set.
//!
//! For interior vertex `v` the solved equation is
//! `deg(v) u(v) - sum_{w ~ v} u(w) = s(v)`, where `u(w)` is the prescribed
//! value for every neighbor `w` outside the interior. Degrees are the true
//! graph degrees, so the carpet boundary acts as a reflecting wall.

use crate::error::{Error, Result};
use crate::network::Network;
use crate::par;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative residual target `|r| / |b|`.
    pub tolerance: f64,
    /// Overrides the default cap of `50 * sqrt(|interior|)` iterations.
    pub max_iterations: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SolveOptions {
            tolerance,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Full-length vertex vector: solved interior values, prescribed values
    /// elsewhere.
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

const NOT_INTERIOR: u32 = u32::MAX;

/// Interior system in local numbering.
pub(crate) struct InteriorSystem<'a> {
    network: &'a Network,
    interior: Vec<usize>,
    local: Vec<u32>,
    offsets: Vec<usize>,
    coupling: Vec<u32>,
}

impl<'a> InteriorSystem<'a> {
    pub(crate) fn new(network: &'a Network, interior: &[usize]) -> Result<Self> {
        let mut local = vec![NOT_INTERIOR; network.len()];
        for (i, &v) in interior.iter().enumerate() {
            if v >= network.len() {
                return Err(Error::Argument(format!("interior vertex {v} out of range")));
            }
            if local[v] != NOT_INTERIOR {
                return Err(Error::Argument(format!("interior vertex {v} listed twice")));
            }
            local[v] = i as u32;
        }
        let mut offsets = Vec::with_capacity(interior.len() + 1);
        let mut coupling = Vec::new();
        offsets.push(0);
        for &v in interior {
            coupling.extend(
                network
                    .neighbors(v)
                    .iter()
                    .map(|&w| local[w])
                    .filter(|&l| l != NOT_INTERIOR),
            );
            offsets.push(coupling.len());
        }
        let system = InteriorSystem {
            network,
            interior: interior.to_vec(),
            local,
            offsets,
            coupling,
        };
        system.check_anchored()?;
        Ok(system)
    }

    /// Every connected piece of the interior must touch a prescribed vertex,
    /// otherwise the restricted Laplacian is singular.
    fn check_anchored(&self) -> Result<()> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            stack.push(s);
            let mut anchored = false;
            while let Some(i) = stack.pop() {
                let v = self.interior[i];
                anchored |= self.network.degree(v) > self.offsets[i + 1] - self.offsets[i];
                for &j in &self.coupling[self.offsets[i]..self.offsets[i + 1]] {
                    if !seen[j as usize] {
                        seen[j as usize] = true;
                        stack.push(j as usize);
                    }
                }
            }
            if !anchored {
                return Err(Error::Argument(format!(
                    "interior component containing vertex {} has no prescribed neighbor",
                    self.interior[s]
                )));
            }
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.interior.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.network.degree(self.interior[i]) as f64
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        par::fill_indexed(out, |i| {
            let mut s = self.diag(i) * x[i];
            for &j in &self.coupling[self.offsets[i]..self.offsets[i + 1]] {
                s -= x[j as usize];
            }
            s
        });
    }

    /// Right-hand side from boundary data plus an optional interior source.
    fn rhs(&self, known: &[f64], source: Option<&[f64]>) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let v = self.interior[i];
                let mut b = source.map_or(0.0, |s| s[i]);
                for &w in self.network.neighbors(v) {
                    if self.local[w] == NOT_INTERIOR {
                        b += known[w];
                    }
                }
                b
            })
            .collect()
    }

    pub(crate) fn solve(
        &self,
        known: &[f64],
        source: Option<&[f64]>,
        opts: &SolveOptions,
    ) -> Result<Solution> {
        if !(opts.tolerance > 0.0) {
            return Err(Error::Argument("tolerance must be positive".into()));
        }
        if known.len() != self.network.len() {
            return Err(Error::Argument("value vector length differs from vertex count".into()));
        }
        let n = self.len();
        let mut values = known.to_vec();
        if n == 0 {
            return Ok(Solution {
                values,
                residual: 0.0,
                iterations: 0,
            });
        }
        let b = self.rhs(known, source);
        let (x, residual, iterations) = self.pcg(&b, opts)?;
        for (i, &v) in self.interior.iter().enumerate() {
            values[v] = x[i];
        }
        Ok(Solution {
            values,
            residual,
            iterations,
        })
    }

    fn pcg(&self, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, f64, usize)> {
        let n = self.len();
        let cap = opts
            .max_iterations
            .unwrap_or_else(|| ((50.0 * (n as f64).sqrt()).ceil() as usize).max(1));
        let bnorm = par::dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok((x, 0.0, 0));
        }
        let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / self.diag(i)).collect();
        let mut r = b.to_vec();
        let mut z = vec![0.0; n];
        par::fill_indexed(&mut z, |i| r[i] * inv_diag[i]);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = par::dot(&r, &z);
        let mut history = Vec::new();
        for it in 1..=cap {
            self.apply(&p, &mut ap);
            let pap = par::dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Invariant(format!(
                    "interior operator not positive definite (p'Ap = {pap:e}); \
                     some interior component has no prescribed neighbor"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rel = par::dot(&r, &r).sqrt() / bnorm;
            history.push(rel);
            if rel <= opts.tolerance {
                return Ok((x, rel, it));
            }
            par::fill_indexed(&mut z, |i| r[i] * inv_diag[i]);
            let rz_next = par::dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergence {
            iterations: cap,
            residual: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }
}

/// Solves the Dirichlet problem: harmonic on `interior`, equal to `known`
/// elsewhere. `source`, if given, is indexed like `interior`.
pub fn solve_dirichlet_system(
    network: &Network,
    interior: &[usize],
    known: &[f64],
    source: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Solution> {
    if let Some(s) = source {
        if s.len() != interior.len() {
            return Err(Error::Argument("source length differs from interior size".into()));
        }
    }
    InteriorSystem::new(network, interior)?.solve(known, source, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_interpolates_linearly() {
        let net = Network::path(5);
        let mut known = vec![0.0; 5];
        known[4] = 1.0;
        let sol = solve_dirichlet_system(&net, &[1, 2, 3], &known, None, &SolveOptions::default())
            .unwrap();
        for (i, want) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            assert!((sol.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_interior_component_is_reported() {
        let net = Network::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let known = vec![1.0, 0.0, 0.0, 0.0];
        let err = solve_dirichlet_system(&net, &[1, 2, 3], &known, None, &SolveOptions::default());
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn iteration_cap_reports_history() {
        let net = Network::path(200);
        let mut known = vec![0.0; 200];
        known[199] = 1.0;
        let interior: Vec<usize> = (1..199).collect();
        let opts = SolveOptions {
            tolerance: 1e-14,
            max_iterations: Some(3),
        };
        match solve_dirichlet_system(&net, &interior, &known, None, &opts) {
            Err(Error::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let net = Network::path(3);
        let opts = SolveOptions::with_tolerance(0.0);
        assert!(solve_dirichlet_system(&net, &[1], &[0.0; 3], None, &opts).is_err());
    }
}
