//! Unweighted graphs in compressed adjacency form, and lattice graphs that
//! additionally carry integer cell coordinates.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Undirected simple graph with unit conductances, stored as a compressed
/// neighbor list. Neighbor lists are sorted by vertex id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Network {
    /// Builds a network on `n` vertices from an undirected edge list.
    /// Self loops are rejected; duplicate edges are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Argument(format!("edge ({u}, {v}) out of range for {n} vertices")));
            }
            if u == v {
                return Err(Error::Argument(format!("self loop at vertex {u}")));
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        Ok(Self::from_lists(lists))
    }

    pub(crate) fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in lists.iter_mut() {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Network { offsets, neighbors }
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path edges are valid")
    }

    /// Cycle graph on `n >= 3` vertices.
    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 vertices");
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges).expect("cycle edges are valid")
    }

    /// `side x side` discrete torus.
    pub fn torus2(side: usize) -> Self {
        assert!(side >= 3);
        let id = |i: usize, j: usize| i * side + j;
        let mut edges = Vec::with_capacity(2 * side * side);
        for i in 0..side {
            for j in 0..side {
                edges.push((id(i, j), id((i + 1) % side, j)));
                edges.push((id(i, j), id(i, (j + 1) % side)));
            }
        }
        Self::from_edges(side * side, &edges).expect("torus edges are valid")
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Copy of this network with the edge `{u, v}` deleted.
    pub fn without_edge(&self, u: usize, v: usize) -> Result<Self> {
        if !self.has_edge(u, v) {
            return Err(Error::Argument(format!("no edge ({u}, {v})")));
        }
        let lists = (0..self.len())
            .map(|w| {
                self.neighbors(w)
                    .iter()
                    .copied()
                    .filter(|&z| !((w == u && z == v) || (w == v && z == u)))
                    .collect()
            })
            .collect();
        Ok(Self::from_lists(lists))
    }

    /// Component label per vertex; labels are assigned in order of the
    /// smallest vertex id in each component.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.len() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &w in self.neighbors(u) {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }
}

/// A subgraph of `Z^dim` with unit-distance edges. Vertex `v` sits at the
/// cell with integer coordinates `coord(v)`; its geometric center is the
/// coordinate shifted by one half in every axis, which cancels in every
/// distance, so it is never materialized.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    dim: usize,
    coords: Vec<i64>,
    lo: Vec<i64>,
    extent: Vec<i64>,
    index: Vec<u32>,
    network: Network,
}

const ABSENT: u32 = u32::MAX;

impl LatticeGraph {
    /// Builds the unit-distance graph on the given cells. Vertex ids follow
    /// the order of `cells`.
    pub fn from_cells(dim: usize, cells: Vec<Vec<i64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("lattice dimension must be positive".into()));
        }
        if cells.len() >= ABSENT as usize {
            return Err(Error::Capacity {
                requested: cells.len() as u128,
                limit: ABSENT as u64 - 1,
            });
        }
        let mut lo = vec![i64::MAX; dim];
        let mut hi = vec![i64::MIN; dim];
        let mut coords = Vec::with_capacity(cells.len() * dim);
        for c in &cells {
            if c.len() != dim {
                return Err(Error::Argument(format!("cell {c:?} does not have {dim} coordinates")));
            }
            for i in 0..dim {
                lo[i] = lo[i].min(c[i]);
                hi[i] = hi[i].max(c[i]);
            }
            coords.extend_from_slice(c);
        }
        if cells.is_empty() {
            lo.iter_mut().for_each(|x| *x = 0);
            hi.iter_mut().for_each(|x| *x = -1);
        }
        let extent: Vec<i64> = lo.iter().zip(&hi).map(|(l, h)| h - l + 1).collect();
        let volume = extent
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e.max(0) as usize))
            .ok_or(Error::Overflow("lattice bounding box volume"))?;
        let mut graph = LatticeGraph {
            dim,
            coords,
            lo,
            extent,
            index: vec![ABSENT; volume],
            network: Network::from_lists(Vec::new()),
        };
        for v in 0..cells.len() {
            let slot = graph.slot(&cells[v]).expect("cell inside its own bounding box");
            if graph.index[slot] != ABSENT {
                return Err(Error::Argument(format!("duplicate cell {:?}", cells[v])));
            }
            graph.index[slot] = v as u32;
        }
        let mut probe = vec![0i64; dim];
        let lists = (0..cells.len())
            .map(|v| {
                let mut list = Vec::with_capacity(2 * dim);
                probe.copy_from_slice(graph.coord(v));
                for axis in 0..dim {
                    for delta in [-1i64, 1] {
                        probe[axis] += delta;
                        if let Some(w) = graph.find(&probe) {
                            list.push(w);
                        }
                        probe[axis] -= delta;
                    }
                }
                list
            })
            .collect();
        graph.network = Network::from_lists(lists);
        Ok(graph)
    }

    /// Axis-aligned box `[0, side)^dim` of `Z^dim`, cells in lexicographic order.
    pub fn grid(dim: usize, side: i64) -> Result<Self> {
        let mut cells = Vec::new();
        let total = (side.max(0) as usize).pow(dim as u32);
        for mut r in 0..total {
            let mut c = vec![0i64; dim];
            for i in (0..dim).rev() {
                c[i] = (r % side as usize) as i64;
                r /= side as usize;
            }
            cells.push(c);
        }
        Self::from_cells(dim, cells)
    }

    fn slot(&self, c: &[i64]) -> Option<usize> {
        let mut s = 0usize;
        for i in 0..self.dim {
            let off = c[i] - self.lo[i];
            if off < 0 || off >= self.extent[i] {
                return None;
            }
            s = s * self.extent[i] as usize + off as usize;
        }
        Some(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.network.len()
    }

    pub fn is_empty(&self) -> bool {
        self.network.is_empty()
    }

    #[inline]
    pub fn coord(&self, v: usize) -> &[i64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    /// Vertex id of the cell with coordinates `c`, if present.
    #[inline]
    pub fn find(&self, c: &[i64]) -> Option<usize> {
        if c.len() != self.dim {
            return None;
        }
        self.slot(c).and_then(|s| match self.index[s] {
            ABSENT => None,
            v => Some(v as usize),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Smallest and largest coordinate along `axis`.
    pub fn bounds(&self, axis: usize) -> (i64, i64) {
        (self.lo[axis], self.lo[axis] + self.extent[axis] - 1)
    }

    /// Squared Euclidean distance between cell centers.
    #[inline]
    pub fn dist2(&self, u: usize, v: usize) -> i64 {
        self.coord(u)
            .iter()
            .zip(self.coord(v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, u: usize, v: usize) -> f64 {
        (self.dist2(u, v) as f64).sqrt()
    }
}
