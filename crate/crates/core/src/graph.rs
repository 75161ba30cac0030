//! Area adjacency: construction, repair, row standardization and the ICAR
//! scaling factor.
//!
//! The graph is stored as a sorted, deduplicated edge list plus CSR-style
//! neighbor offsets, so traversal is `O(degree)` and no dense `M x M` matrix is
//! ever materialized.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge references unknown area id `{0}`")]
    UnknownArea(String),
    #[error("area id `{0}` listed more than once")]
    DuplicateAreaId(String),
    #[error("graph has {0} connected components after repair; supply more bridge edges")]
    StillDisconnected(usize),
    #[error("area index {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("graph is not connected ({0} components)")]
    Disconnected(usize),
    #[error("ICAR scaling factor failed: {0}")]
    NumericalFailure(String),
}

/// Undirected, self-edge-free adjacency over `M` areas.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaGraph {
    area_ids: Vec<String>,
    /// Sorted `(a, b)` pairs with `a < b`.
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl AreaGraph {
    /// Builds a graph from string-keyed edges. Self-edges are dropped and
    /// `(a, b)` / `(b, a)` collapse to one edge.
    pub fn build<S: AsRef<str>>(area_ids: &[S], edge_list: &[(S, S)]) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(area_ids.len());
        for (i, id) in area_ids.iter().enumerate() {
            if index.insert(id.as_ref().to_string(), i).is_some() {
                return Err(GraphError::DuplicateAreaId(id.as_ref().to_string()));
            }
        }
        let lookup = |s: &str| index.get(s).copied().ok_or_else(|| GraphError::UnknownArea(s.to_string()));
        let mut pairs = Vec::with_capacity(edge_list.len());
        for (a, b) in edge_list {
            pairs.push((lookup(a.as_ref())?, lookup(b.as_ref())?));
        }
        let ids = area_ids.iter().map(|s| s.as_ref().to_string()).collect();
        Ok(Self::from_index_edges(ids, pairs))
    }

    /// Builds a graph from index pairs. Panics if an index is out of range.
    pub fn from_index_edges(area_ids: Vec<String>, pairs: Vec<(usize, usize)>) -> Self {
        let m = area_ids.len();
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            assert!(a < m && b < m, "edge ({a}, {b}) out of range for {m} areas");
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut degree = vec![0usize; m];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; m + 1];
        for i in 0..m {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[m]];
        for &(a, b) in &edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..m {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Self { area_ids, edges, offsets, neighbors }
    }

    /// Path graph over `m` areas named `"0"`, `"1"`, ...
    pub fn path(m: usize) -> Self {
        let ids = (0..m).map(|i| i.to_string()).collect();
        Self::from_index_edges(ids, (1..m).map(|i| (i - 1, i)).collect())
    }

    /// Rook-contiguity lattice with `rows * cols` areas, numbered row-major.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let ids = (0..rows * cols).map(|i| i.to_string()).collect();
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    pairs.push((i, i + 1));
                }
                if r + 1 < rows {
                    pairs.push((i, i + cols));
                }
            }
        }
        Self::from_index_edges(ids, pairs)
    }

    pub fn len(&self) -> usize {
        self.area_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.area_ids.is_empty()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.degree(i)).collect()
    }

    /// Connected components as sorted index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let m = self.len();
        let mut label = vec![usize::MAX; m];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..m {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        members.push(v);
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.len() <= 1 || self.components().len() == 1
    }

    /// Adds `bridge_edges` and, if `augment_singletons`, gives every node of
    /// degree one the neighbors of its sole neighbor. Singletons are detected
    /// on the graph after bridging.
    pub fn repair<S: AsRef<str>>(&self, bridge_edges: &[(S, S)], augment_singletons: bool) -> Result<Self, GraphError> {
        let index: HashMap<&str, usize> = self.area_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut pairs = self.edges.clone();
        for (a, b) in bridge_edges {
            let ia = *index.get(a.as_ref()).ok_or_else(|| GraphError::UnknownArea(a.as_ref().to_string()))?;
            let ib = *index.get(b.as_ref()).ok_or_else(|| GraphError::UnknownArea(b.as_ref().to_string()))?;
            pairs.push((ia, ib));
        }
        let mut g = Self::from_index_edges(self.area_ids.clone(), pairs);
        if augment_singletons {
            let mut extra = Vec::new();
            for i in 0..g.len() {
                if g.degree(i) == 1 {
                    let hub = g.neighbors(i)[0];
                    extra.extend(g.neighbors(hub).iter().map(|&k| (i, k)));
                }
            }
            if !extra.is_empty() {
                let mut pairs = g.edges.clone();
                pairs.extend(extra);
                g = Self::from_index_edges(g.area_ids.clone(), pairs);
            }
        }
        let parts = g.components().len();
        if parts > 1 {
            return Err(GraphError::StillDisconnected(parts));
        }
        Ok(g)
    }

    /// Row-standardized weights: each area's neighbors get `1 / degree`.
    pub fn row_standardize(&self) -> Result<RowWeights, GraphError> {
        if let Some(i) = (0..self.len()).find(|&i| self.degree(i) == 0) {
            return Err(GraphError::IsolatedNode(i));
        }
        let weights = (0..self.len())
            .flat_map(|i| {
                let d = self.degree(i) as f64;
                std::iter::repeat_n(1.0 / d, self.degree(i))
            })
            .collect();
        Ok(RowWeights { offsets: self.offsets.clone(), neighbors: self.neighbors.clone(), weights })
    }

    /// Geometric mean of the diagonal of the Moore-Penrose inverse of the
    /// graph Laplacian, i.e. the marginal variances of a unit-precision ICAR
    /// field under the sum-to-zero constraint.
    ///
    /// Each diagonal entry is one Jacobi-preconditioned conjugate-gradient
    /// solve of `Q x = e_i - 1/M`; iterates stay in the sum-to-zero subspace
    /// because the right-hand side does.
    pub fn icar_scaling_factor(&self) -> Result<f64, GraphError> {
        let m = self.len();
        if m < 2 {
            return Err(GraphError::NumericalFailure("need at least two areas".into()));
        }
        let parts = self.components().len();
        if parts > 1 {
            return Err(GraphError::Disconnected(parts));
        }
        let diag: Vec<f64> = (0..m).into_par_iter().map(|i| self.laplacian_pinv_diag(i)).collect::<Result<_, _>>()?;
        let mean_log = diag.iter().map(|v| v.ln()).sum::<f64>() / m as f64;
        let kappa = mean_log.exp();
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(GraphError::NumericalFailure(format!("non-positive scaling factor {kappa}")));
        }
        Ok(kappa)
    }

    fn laplacian_apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let nb = self.neighbors(i);
            *o = nb.len() as f64 * x[i] - nb.iter().map(|&k| x[k]).sum::<f64>();
        }
    }

    fn laplacian_pinv_diag(&self, i: usize) -> Result<f64, GraphError> {
        let m = self.len();
        let inv_m = 1.0 / m as f64;
        let mut b = vec![-inv_m; m];
        b[i] += 1.0;
        let precond: Vec<f64> = (0..m).map(|k| 1.0 / self.degree(k) as f64).collect();

        let mut x = vec![0.0; m];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
        // keep the preconditioned residual in the sum-to-zero subspace
        project_mean_zero(&mut z);
        let mut p = z.clone();
        let mut qp = vec![0.0; m];
        let mut rz = dot(&r, &z);
        let b_norm = dot(&b, &b).sqrt();
        let max_iter = 20 * m + 200;
        for _ in 0..max_iter {
            self.laplacian_apply(&p, &mut qp);
            let pqp = dot(&p, &qp);
            if !(pqp > 0.0) {
                return Err(GraphError::NumericalFailure(format!(
                    "Laplacian not positive on sum-to-zero subspace at node {i}"
                )));
            }
            let alpha = rz / pqp;
            for k in 0..m {
                x[k] += alpha * p[k];
                r[k] -= alpha * qp[k];
            }
            if dot(&r, &r).sqrt() <= 1e-14 * b_norm {
                project_mean_zero(&mut x);
                return Ok(x[i]);
            }
            for k in 0..m {
                z[k] = r[k] * precond[k];
            }
            project_mean_zero(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..m {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(GraphError::NumericalFailure(format!("conjugate gradient did not converge for node {i}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_mean_zero(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Row-standardized adjacency weights in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWeights {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl RowWeights {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(neighbor, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    /// Spatial lag `L_i = sum_k W*_ik z_k`.
    pub fn lag(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(k, w)| w * z[k]).sum();
        }
    }
}
