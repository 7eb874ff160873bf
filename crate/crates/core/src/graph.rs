//! Skeleton graph, disentangled multi-scale adjacency and spatio-temporal
//! window tiling.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::Csr;
use crate::error::{Error, Result};

/// Edge list of the default 18-joint pose skeleton.
pub const DEFAULT_EDGES: &str = include_str!("../data/skeleton18.edges");

/// 0-based indices into the default joint ordering.
pub mod joints {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
    pub const COUNT: usize = 18;
}

/// Undirected joint graph with a dense 0/1 adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<f64>,
}

/// Parses `i j` pairs, one per line. Blank lines and `#` comments are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
            _ => {
                return Err(Error::Line {
                    line: lineno + 1,
                    msg: format!("expected two joint indices, got {line:?}"),
                })
            }
        }
    }
    Ok(edges)
}

/// Builds the graph from 1-indexed edges over `n` joints.
pub fn build_spatial_graph(edges: &[(usize, usize)], n: usize) -> Result<SkeletonGraph> {
    if n == 0 {
        return Err(Error::data("skeleton graph needs at least one joint"));
    }
    let mut adjacency = vec![0.0; n * n];
    let mut zero_based = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::data(format!(
                "edge ({i}, {j}) references a joint outside 1..={n}"
            )));
        }
        if i == j {
            return Err(Error::data(format!("self-loop on joint {i} in edge list")));
        }
        let (a, b) = (i - 1, j - 1);
        adjacency[a * n + b] = 1.0;
        adjacency[b * n + a] = 1.0;
        zero_based.push((a, b));
    }
    Ok(SkeletonGraph {
        n,
        edges: zero_based,
        adjacency,
    })
}

impl SkeletonGraph {
    /// The shipped 18-joint skeleton.
    pub fn default_skeleton() -> Self {
        let edges = parse_edge_list(DEFAULT_EDGES).expect("shipped edge file parses");
        build_spatial_graph(&edges, joints::COUNT).expect("shipped edge file is valid")
    }

    /// Loads an edge file; the joint count is the largest index mentioned.
    pub fn from_edge_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let edges = parse_edge_list(&text)?;
        let n = edges.iter().map(|&(i, j)| i.max(j)).max().unwrap_or(0);
        build_spatial_graph(&edges, n)
    }

    pub fn num_joints(&self) -> usize {
        self.n
    }

    /// 0-based undirected edges in input order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-major `N×N` 0/1 adjacency.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    /// All-pairs hop distances by breadth-first search; `None` if unreachable.
    pub fn hop_distances(&self) -> Vec<Option<usize>> {
        let n = self.n;
        let mut dist = vec![None; n * n];
        for src in 0..n {
            let mut queue = VecDeque::from([src]);
            dist[src * n + src] = Some(0);
            while let Some(u) = queue.pop_front() {
                let du = dist[src * n + u].expect("visited");
                for v in 0..n {
                    if self.adjacency[u * n + v] != 0.0 && dist[src * n + v].is_none() {
                        dist[src * n + v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances()[..self.n].iter().all(Option::is_some)
    }
}

/// One `N×N` 0/1 matrix per exact hop distance `0..=max_scale`.
///
/// Computed by repeated boolean reachability: a pair first becomes
/// reachable within `m` hops exactly when its distance is `m`.
pub fn disentangle_multiscale(graph: &SkeletonGraph, max_scale: usize) -> Vec<Vec<f64>> {
    let n = graph.n;
    let adj = &graph.adjacency;
    let mut reached = vec![false; n * n];
    let mut frontier = vec![false; n * n];
    for i in 0..n {
        reached[i * n + i] = true;
        frontier[i * n + i] = true;
    }
    let mut scales = Vec::with_capacity(max_scale + 1);
    scales.push(to_matrix(&frontier));
    for _ in 1..=max_scale {
        // within[m] = within[m-1] · (A + I), boolean.
        let mut next = vec![false; n * n];
        for i in 0..n {
            for k in 0..n {
                if !reached[i * n + k] {
                    continue;
                }
                for j in 0..n {
                    if adj[k * n + j] != 0.0 {
                        next[i * n + j] = true;
                    }
                }
            }
        }
        for (f, (nx, r)) in frontier.iter_mut().zip(next.iter().zip(reached.iter_mut())) {
            *f = *nx && !*r;
            *r |= *nx;
        }
        scales.push(to_matrix(&frontier));
    }
    scales
}

fn to_matrix(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Tiles `a + I` (clipped to 0/1) into every block of a `τN×τN` matrix.
pub fn tile_window(a: &[f64], n: usize, tau: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "adjacency must be n×n");
    assert!(tau >= 1, "window length must be positive");
    let mut block = a.to_vec();
    for i in 0..n {
        block[i * n + i] = 1.0;
    }
    for v in &mut block {
        *v = if *v != 0.0 { 1.0 } else { 0.0 };
    }
    let dim = tau * n;
    let mut out = vec![0.0; dim * dim];
    for p in 0..tau {
        for q in 0..tau {
            for i in 0..n {
                let row = (p * n + i) * dim + q * n;
                out[row..row + n].copy_from_slice(&block[i * n..(i + 1) * n]);
            }
        }
    }
    out
}

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}` with degree = row
/// sum. Zero-degree rows stay zero.
pub fn normalize(a: &[f64], dim: usize) -> Vec<f64> {
    assert_eq!(a.len(), dim * dim, "matrix must be square");
    let degree: Vec<f64> = (0..dim).map(|i| a[i * dim..(i + 1) * dim].iter().sum()).collect();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let d = degree[i] * degree[j];
            if d > 0.0 {
                out[i * dim + j] = a[i * dim + j] / d.sqrt();
            }
        }
    }
    out
}

/// Normalized spatio-temporal adjacency for every scale, ready for the graph
/// convolution.
#[derive(Clone, Debug)]
pub struct MultiScaleAdjacency {
    tau: usize,
    joints: usize,
    mats: Vec<Arc<Csr>>,
    transposed: Vec<Arc<Csr>>,
    blocks: Vec<Arc<Csr>>,
    blocks_transposed: Vec<Arc<Csr>>,
}

impl MultiScaleAdjacency {
    pub fn build(graph: &SkeletonGraph, max_scale: usize, tau: usize) -> Self {
        let n = graph.num_joints();
        let dim = tau * n;
        let mut mats = Vec::with_capacity(max_scale + 1);
        let mut transposed = Vec::with_capacity(max_scale + 1);
        let mut blocks = Vec::with_capacity(max_scale + 1);
        let mut blocks_transposed = Vec::with_capacity(max_scale + 1);
        for a in disentangle_multiscale(graph, max_scale) {
            let norm = normalize(&tile_window(&a, n, tau), dim);
            let csr = Csr::from_dense(dim, &norm);
            transposed.push(Arc::new(csr.transpose()));
            mats.push(Arc::new(csr));
            let block = Csr::from_dense(n, &normalize(&tile_window(&a, n, 1), n));
            blocks_transposed.push(Arc::new(block.transpose()));
            blocks.push(Arc::new(block));
        }
        MultiScaleAdjacency {
            tau,
            joints: n,
            mats,
            transposed,
            blocks,
            blocks_transposed,
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Number of matrices, `M + 1`.
    pub fn num_scales(&self) -> usize {
        self.mats.len()
    }

    pub fn matrix(&self, m: usize) -> &Arc<Csr> {
        &self.mats[m]
    }

    pub fn matrix_transposed(&self, m: usize) -> &Arc<Csr> {
        &self.transposed[m]
    }

    /// Normalized single-frame `N×N` matrix of scale `m`.
    ///
    /// Every block of the tiled window matrix has the same degrees up to a
    /// factor τ, so each block equals this matrix divided by τ. Applying the
    /// window matrix is therefore the same as applying this one to the
    /// window's frame mean and repeating the result for every frame.
    pub fn block(&self, m: usize) -> &Arc<Csr> {
        &self.blocks[m]
    }

    pub fn block_transposed(&self, m: usize) -> &Arc<Csr> {
        &self.blocks_transposed[m]
    }
}
