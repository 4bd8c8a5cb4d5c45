//! Undirected state-transition graphs and their Laplacians.
//!
//! A [`TransitionGraph`] is a binary, symmetric, loop-free adjacency
//! structure built either from sampled transitions or analytically from an
//! environment. Dense storage is used throughout, with a hard cap of
//! [`MAX_DENSE_STATES`] states; the Kronecker estimator never materializes
//! joint matrices, so factor graphs stay small.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Largest state count for which dense adjacency/Laplacian matrices are
/// constructed. Exact eigensolvers need dense symmetric input at this scale;
/// anything larger must go through [`SparseGraph`].
pub const MAX_DENSE_STATES: usize = 2000;

/// One observed transition of a single agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionSample {
    pub agent_id: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

/// Per-state degree list (row sums of the adjacency matrix).
pub type DegreeVector = Vec<usize>;

/// Undirected state-adjacency graph with 0/1 entries and a zero diagonal.
///
/// Immutable after construction; operations that "modify" a graph return a
/// new one, so instances can be shared read-only across workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionGraph {
    num_states: usize,
    adjacency: Array2<u8>,
    state_labels: Option<Vec<String>>,
}

impl TransitionGraph {
    /// An edgeless graph on `num_states` vertices.
    pub fn empty(num_states: usize) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::Input("graph must have at least one state".into()));
        }
        if num_states > MAX_DENSE_STATES {
            return Err(Error::Resource(format!(
                "dense graph capped at {MAX_DENSE_STATES} states, got {num_states}"
            )));
        }
        Ok(Self {
            num_states,
            adjacency: Array2::zeros((num_states, num_states)),
            state_labels: None,
        })
    }

    /// Builds the graph induced by a set of sampled transitions.
    ///
    /// An edge {i, j} is present iff some sample moves i→j or j→i with
    /// i ≠ j; self-transitions are ignored. Duplicate samples are idempotent.
    pub fn from_samples(samples: &[TransitionSample], num_states: usize) -> Result<Self> {
        let mut g = Self::empty(num_states)?;
        for t in samples {
            if t.s >= num_states || t.s_next >= num_states {
                return Err(Error::Input(format!(
                    "sample ({} -> {}) out of range for {num_states} states",
                    t.s, t.s_next
                )));
            }
            if t.s != t.s_next {
                g.adjacency[(t.s, t.s_next)] = 1;
                g.adjacency[(t.s_next, t.s)] = 1;
            }
        }
        Ok(g)
    }

    /// Builds the graph from raw (s, s') pairs, same semantics as
    /// [`TransitionGraph::from_samples`].
    pub fn from_pairs(pairs: &[(usize, usize)], num_states: usize) -> Result<Self> {
        let samples: Vec<TransitionSample> = pairs
            .iter()
            .map(|&(s, s_next)| TransitionSample { agent_id: 0, s, a: 0, s_next })
            .collect();
        Self::from_samples(&samples, num_states)
    }

    /// Builds the graph from an explicit undirected edge list.
    pub fn from_edges(num_states: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = edges.to_vec();
        Self::from_pairs(&pairs, num_states)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0
    }

    /// Returns a copy with the undirected edge {i, j} added. Adding a
    /// self-loop is a no-op (the diagonal stays zero).
    pub fn with_edge(&self, i: usize, j: usize) -> Result<Self> {
        if i >= self.num_states || j >= self.num_states {
            return Err(Error::Input(format!(
                "edge ({i}, {j}) out of range for {} states",
                self.num_states
            )));
        }
        let mut g = self.clone();
        if i != j {
            g.adjacency[(i, j)] = 1;
            g.adjacency[(j, i)] = 1;
        }
        Ok(g)
    }

    pub fn set_labels(&mut self, labels: Vec<String>) {
        self.state_labels = Some(labels);
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.state_labels.as_deref()
    }

    /// Degree of every vertex (row sums).
    pub fn degree_vector(&self) -> DegreeVector {
        (0..self.num_states)
            .map(|i| (0..self.num_states).map(|j| self.adjacency[(i, j)] as usize).sum())
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.degree_vector().iter().sum::<usize>() / 2
    }

    /// Neighbor list of a vertex, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.num_states).filter(|&j| self.adjacency[(i, j)] != 0).collect()
    }

    /// Adjacency as a dense f64 matrix.
    pub fn adjacency_matrix(&self) -> Array2<f64> {
        self.adjacency.mapv(|x| x as f64)
    }

    /// Unnormalized Laplacian L = D − A. Rows sum to zero; L is PSD.
    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.num_states;
        let deg = self.degree_vector();
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            l[(i, i)] = deg[i] as f64;
            for j in 0..n {
                if self.adjacency[(i, j)] != 0 {
                    l[(i, j)] = -1.0;
                }
            }
        }
        l
    }

    /// Symmetric normalized Laplacian 𝓛 = D^{-1/2} L D^{-1/2}.
    ///
    /// Rows and columns of isolated vertices (degree 0) are left all-zero so
    /// indexing stays stable; such states never become subgoals.
    pub fn normalized_laplacian(&self) -> Array2<f64> {
        let n = self.num_states;
        let deg = self.degree_vector();
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            if deg[i] == 0 {
                continue;
            }
            l[(i, i)] = 1.0;
            for j in 0..n {
                if self.adjacency[(i, j)] != 0 {
                    l[(i, j)] = -1.0 / ((deg[i] as f64) * (deg[j] as f64)).sqrt();
                }
            }
        }
        l
    }

    /// Indices of degree-0 vertices.
    pub fn isolated_vertices(&self) -> Vec<usize> {
        self.degree_vector()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| (d == 0).then_some(i))
            .collect()
    }

    /// Connected components as a vertex → component-id map, ids compact and
    /// ordered by smallest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.num_states;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] != 0 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut ids = vec![usize::MAX; n];
        let mut next = 0;
        for i in 0..n {
            let r = find(&mut parent, i);
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            ids[i] = ids[r];
        }
        ids
    }

    pub fn num_components(&self) -> usize {
        self.components().iter().copied().max().map_or(0, |m| m + 1)
    }

    /// BFS distances from `source`; `None` marks unreachable vertices.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.num_states];
        dist[source] = Some(0);
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Largest finite BFS eccentricity (per-component diameter).
    pub fn diameter(&self) -> u32 {
        let mut best = 0;
        for s in 0..self.num_states {
            for d in self.bfs_distances(s).into_iter().flatten() {
                best = best.max(d);
            }
        }
        best
    }

    /// Serializes as an edge-list text document: a `num_states N` header
    /// followed by one `i j` pair per line, 0-indexed, i < j, sorted.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("num_states {}\n", self.num_states);
        for i in 0..self.num_states {
            for j in (i + 1)..self.num_states {
                if self.adjacency[(i, j)] != 0 {
                    let _ = writeln!(out, "{i} {j}");
                }
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, col: 1, msg: "empty edge list".into() })?;
        let num_states = header
            .strip_prefix("num_states ")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                col: 1,
                msg: format!("expected `num_states N` header, got `{header}`"),
            })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    col: 1,
                    msg: format!("expected `i j` pair, got `{line}`"),
                })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            edges.push((i, j));
        }
        Self::from_edges(num_states, &edges)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }
}

/// Whether factor graphs are combined with or without implicit self-loops.
///
/// `Plain` is the textbook product: joint vertices are adjacent iff every
/// factor pair is adjacent. `Reflexive` treats each factor vertex as also
/// adjacent to itself before taking the product (the diagonal of the result
/// is still dropped). Agents that can independently wait in place induce the
/// reflexive product as their joint transition graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    Plain,
    Reflexive,
}

/// Materializes the product graph of the factors under `mode`, using the
/// nested row-major joint indexing. Fails when the joint size exceeds `cap`.
pub fn product_graph(factors: &[TransitionGraph], mode: LoopMode, cap: usize) -> Result<TransitionGraph> {
    if factors.is_empty() {
        return Err(Error::Input("product of zero graphs".into()));
    }
    let dims: Vec<usize> = factors.iter().map(|g| g.num_states()).collect();
    let joint: usize = dims.iter().product();
    if joint > cap.min(MAX_DENSE_STATES) {
        return Err(Error::Resource(format!(
            "joint graph of {joint} states exceeds cap {}",
            cap.min(MAX_DENSE_STATES)
        )));
    }
    let mut g = TransitionGraph::empty(joint)?;
    let mut idx = vec![0usize; dims.len()];
    let mut jdx = vec![0usize; dims.len()];
    for i in 0..joint {
        crate::spectrum::decode_joint(i, &dims, &mut idx);
        for j in (i + 1)..joint {
            crate::spectrum::decode_joint(j, &dims, &mut jdx);
            let adjacent = idx.iter().zip(&jdx).zip(factors).all(|((&a, &b), f)| {
                if a == b {
                    matches!(mode, LoopMode::Reflexive)
                } else {
                    f.has_edge(a, b)
                }
            });
            if adjacent {
                g.adjacency[(i, j)] = 1;
                g.adjacency[(j, i)] = 1;
            }
        }
    }
    Ok(g)
}

/// Adjacency-list graph for joint spaces too large for dense storage.
#[derive(Debug, Clone)]
pub struct SparseGraph {
    num_states: usize,
    adj: Vec<Vec<u32>>,
}

impl SparseGraph {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, num_states: usize) -> Result<Self> {
        let mut seen: HashSet<(u32, u32)> = HashSet::new();
        let mut adj = vec![Vec::new(); num_states];
        for (s, t) in pairs {
            if s >= num_states || t >= num_states {
                return Err(Error::Input(format!(
                    "pair ({s}, {t}) out of range for {num_states} states"
                )));
            }
            if s == t {
                continue;
            }
            let key = (s.min(t) as u32, s.max(t) as u32);
            if seen.insert(key) {
                adj[s].push(t as u32);
                adj[t].push(s as u32);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self { num_states, adj })
    }

    pub fn from_dense(g: &TransitionGraph) -> Self {
        let adj = (0..g.num_states())
            .map(|i| g.neighbors(i).into_iter().map(|j| j as u32).collect())
            .collect();
        Self { num_states: g.num_states(), adj }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// y = L x with L = D − A, without forming L.
    pub fn laplacian_apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.num_states {
            let mut acc = self.adj[i].len() as f64 * x[i];
            for &j in &self.adj[i] {
                acc -= x[j as usize];
            }
            y[i] = acc;
        }
    }

    pub fn components(&self) -> Vec<usize> {
        let mut ids = vec![usize::MAX; self.num_states];
        let mut next = 0;
        for s in 0..self.num_states {
            if ids[s] != usize::MAX {
                continue;
            }
            ids[s] = next;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if ids[v as usize] == usize::MAX {
                        ids[v as usize] = next;
                        queue.push_back(v as usize);
                    }
                }
            }
            next += 1;
        }
        ids
    }
}
