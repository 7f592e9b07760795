//! Weighted sensor digraphs and their structural theory.
//!
//! Orientation convention: `a[i][j]` is the weight of the link that carries
//! data *from* node `j` *to* node `i` (rows are receivers). Node `r` "reaches"
//! node `i` when information can flow `r -> ... -> i` along links with
//! positive weight. Every connectivity notion in this module (strongly
//! connected components, roots, quasi-strong connectivity) follows that
//! convention.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for the in/out degree comparison in [`SensorDigraph::is_balanced`].
pub const BALANCE_TOL: f64 = 1e-12;

/// A weighted directed graph with nonnegative coupling weights and no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDigraph {
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl SensorDigraph {
    /// Validates `weights` and builds the neighbor sets `N_i = {j : a_ij > 0}`.
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::NotSquare {
                rows: weights.nrows(),
                cols: weights.ncols(),
            });
        }
        let n = weights.nrows();
        for i in 0..n {
            for j in 0..n {
                let a = weights[(i, j)];
                if !a.is_finite() {
                    return Err(Error::NonFiniteWeight { i, j });
                }
                if a < 0.0 {
                    return Err(Error::NegativeWeight { i, j, value: a });
                }
                if i == j && a != 0.0 {
                    return Err(Error::SelfLoop { i, value: a });
                }
            }
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| weights[(i, j)] > 0.0).collect())
            .collect();
        Ok(Self { weights, neighbors })
    }

    /// Builds a digraph from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Builds a digraph from `(receiver, transmitter, weight)` triples.
    /// Repeated pairs overwrite earlier ones.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, a) in edges {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            w[(i, j)] = a;
        }
        Self::new(w)
    }

    /// The empty digraph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Nodes that node `i` hears.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Edges as `(receiver, transmitter, weight)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(move |(i, ns)| ns.iter().map(move |&j| (i, j, self.weights[(i, j)])))
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&j| self.weights[(i, j)]).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        (0..self.n()).map(|k| self.weights[(k, i)]).sum()
    }

    /// `(in_degrees, out_degrees)`: `in(i) = sum_j a_ij`, `out(i) = sum_j a_ji`.
    pub fn degrees(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        (
            (0..n).map(|i| self.in_degree(i)).collect(),
            (0..n).map(|i| self.out_degree(i)).collect(),
        )
    }

    /// True when every node has matching in- and out-degree within `tol`.
    pub fn is_balanced_with(&self, tol: f64) -> bool {
        let (din, dout) = self.degrees();
        din.iter().zip(&dout).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn is_balanced(&self) -> bool {
        self.is_balanced_with(BALANCE_TOL)
    }

    /// `L = Delta - A` with `Delta = diag(in-degrees)`.
    pub fn laplacian(&self) -> Laplacian {
        let n = self.n();
        let mut m = -self.weights.clone();
        for i in 0..n {
            // Same summation as the off-diagonal entries, so the row sum is zero
            // up to a single rounding of the final addition.
            m[(i, i)] = self.in_degree(i);
        }
        Laplacian { matrix: m }
    }

    /// Multiplies every weight by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Self::new(&self.weights * factor)
    }

    /// Strongly connected components, condensation and connectivity class.
    pub fn scc_decompose(&self) -> SccDecomposition {
        SccDecomposition::compute(self)
    }

    pub fn connectivity(&self) -> ConnectivityClass {
        self.scc_decompose().class
    }

    pub fn to_file(&self) -> DigraphFile {
        DigraphFile {
            n: self.n(),
            edges: self.edges().collect(),
        }
    }

    pub fn from_file(file: &DigraphFile) -> Result<Self> {
        Self::from_edges(file.n, &file.edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("digraph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DigraphFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(&file)
    }
}

/// On-disk digraph: node count plus `(receiver, transmitter, weight)` edges,
/// 0-based, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Weighted Laplacian `L = Delta - A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Diagonal of in-degrees.
    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.matrix.diagonal())
    }

    /// Recovers the digraph from the off-diagonal pattern.
    pub fn to_digraph(&self) -> SensorDigraph {
        let n = self.n();
        let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (-self.matrix[(i, j)]).max(0.0) });
        SensorDigraph::new(w).expect("Laplacian off-diagonals are nonpositive")
    }

    /// `diag(k) * L`, the coupling operator seen by the integrators when node
    /// `i` uses gain `k_i = K / c_i`.
    pub fn row_scaled(&self, k: &[f64]) -> Laplacian {
        let mut m = self.matrix.clone();
        for (i, &ki) in k.iter().enumerate() {
            m.row_mut(i).scale_mut(ki);
        }
        Laplacian { matrix: m }
    }

    /// Frobenius norm, used to scale residual tolerances.
    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }
}

/// Connectivity class of a digraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectivityClass {
    /// Strongly connected.
    #[serde(rename = "SC")]
    StronglyConnected,
    /// Quasi-strongly connected but not strongly connected.
    #[serde(rename = "QSC")]
    QuasiStronglyConnected,
    /// Weakly connected, more than one root component.
    #[serde(rename = "WC")]
    WeaklyConnected,
    #[serde(rename = "Disconnected")]
    Disconnected,
}

impl ConnectivityClass {
    /// True for classes that contain a spanning directed tree.
    pub fn has_spanning_tree(self) -> bool {
        matches!(self, Self::StronglyConnected | Self::QuasiStronglyConnected)
    }
}

impl fmt::Display for ConnectivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StronglyConnected => "SC",
            Self::QuasiStronglyConnected => "QSC",
            Self::WeaklyConnected => "WC",
            Self::Disconnected => "Disconnected",
        })
    }
}

/// An edge of the condensation digraph: information flows from component
/// `from` into component `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CondensationEdge {
    pub from: usize,
    pub to: usize,
}

/// Strongly connected components and the condensation digraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SccDecomposition {
    /// Node sets, sorted internally; components are numbered by their smallest node.
    pub components: Vec<Vec<usize>>,
    /// Component index of every node.
    pub component_of: Vec<usize>,
    /// Deduplicated, sorted condensation edges.
    pub condensation_edges: Vec<CondensationEdge>,
    /// Component indices such that information only flows forward:
    /// every edge `from -> to` has `from` earlier than `to`.
    pub topo_order: Vec<usize>,
    /// Components that receive nothing from other components.
    pub root_components: Vec<usize>,
    pub class: ConnectivityClass,
}

impl SccDecomposition {
    fn compute(g: &SensorDigraph) -> Self {
        let n = g.n();
        // successors in information-flow direction: j -> i whenever a_ij > 0
        let mut succ = vec![Vec::new(); n];
        for (i, j, _) in g.edges() {
            succ[j].push(i);
        }
        let raw = tarjan(&succ);

        // canonical numbering by smallest member
        let mut components: Vec<Vec<usize>> = raw
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        components.sort_by_key(|c| c[0]);
        let mut component_of = vec![0; n];
        for (k, c) in components.iter().enumerate() {
            for &v in c {
                component_of[v] = k;
            }
        }

        let mut condensation_edges: Vec<CondensationEdge> = g
            .edges()
            .filter_map(|(i, j, _)| {
                let (from, to) = (component_of[j], component_of[i]);
                (from != to).then_some(CondensationEdge { from, to })
            })
            .collect();
        condensation_edges.sort_unstable();
        condensation_edges.dedup();

        let k = components.len();
        let mut indeg = vec![0usize; k];
        for e in &condensation_edges {
            indeg[e.to] += 1;
        }
        let root_components: Vec<usize> = (0..k).filter(|&c| indeg[c] == 0).collect();

        // Kahn: repeatedly peel a component with no remaining incoming edges.
        let mut out_edges = vec![Vec::new(); k];
        for e in &condensation_edges {
            out_edges[e.from].push(e.to);
        }
        let mut remaining = indeg.clone();
        let mut ready: std::collections::BTreeSet<usize> = root_components.iter().copied().collect();
        let mut topo_order = Vec::with_capacity(k);
        while let Some(c) = ready.pop_first() {
            topo_order.push(c);
            for &t in &out_edges[c] {
                remaining[t] -= 1;
                if remaining[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        debug_assert_eq!(topo_order.len(), k, "condensation must be acyclic");

        let class = if k <= 1 {
            ConnectivityClass::StronglyConnected
        } else if root_components.len() == 1 {
            ConnectivityClass::QuasiStronglyConnected
        } else if weakly_connected(g) {
            ConnectivityClass::WeaklyConnected
        } else {
            ConnectivityClass::Disconnected
        };

        Self {
            components,
            component_of,
            condensation_edges,
            topo_order,
            root_components,
            class,
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Nodes of all root components, each list sorted.
    pub fn root_node_sets(&self) -> Vec<&[usize]> {
        self.root_components
            .iter()
            .map(|&c| self.components[c].as_slice())
            .collect()
    }

    /// The nodes of the unique root component, if there is exactly one.
    pub fn unique_root(&self) -> Option<&[usize]> {
        match self.root_components.as_slice() {
            [c] => Some(&self.components[*c]),
            _ => None,
        }
    }

    /// Position of each component in `topo_order`.
    pub fn topo_rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.components.len()];
        for (pos, &c) in self.topo_order.iter().enumerate() {
            rank[c] = pos;
        }
        rank
    }
}

/// Iterative Tarjan. Returns components in completion order.
fn tarjan(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = succ.len();
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut counter = 0;
    // (node, next successor position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for start in 0..n {
        if index[start] != UNVISITED {
            continue;
        }
        call.push((start, 0));
        index[start] = counter;
        low[start] = counter;
        counter += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(top) = call.last_mut() {
            let v = top.0;
            let next = succ[v].get(top.1).copied();
            if next.is_some() {
                top.1 += 1;
            }
            if let Some(w) = next {
                if index[w] == UNVISITED {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Connectivity of the undirected skeleton `{(i,j) : a_ij > 0 or a_ji > 0}`.
fn weakly_connected(g: &SensorDigraph) -> bool {
    let n = g.n();
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut groups = n;
    for (i, j, _) in g.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            groups -= 1;
        }
    }
    groups == 1
}
