//! Communication topologies.
//!
//! A [`Digraph`] stores, for every node `i`, its in-neighbor set
//! `N_i = { j : j -> i }`. Node ids are 0-based throughout the library.

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digraph {
    in_nbrs: Vec<Vec<usize>>,
}

impl Digraph {
    /// A graph on `n` nodes with no edges.
    pub fn edgeless(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("a digraph needs at least one node".into()));
        }
        Ok(Digraph {
            in_nbrs: vec![Vec::new(); n],
        })
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut g = Self::edgeless(n)?;
        for (i, nbrs) in g.in_nbrs.iter_mut().enumerate() {
            nbrs.extend((0..n).filter(|&j| j != i));
        }
        Ok(g)
    }

    /// Builds a graph from directed edges `(from, to)`. With `symmetric`, every
    /// edge is also inserted reversed. Duplicates are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], symmetric: bool) -> Result<Self> {
        let mut g = Self::edgeless(n)?;
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(Error::Argument(format!(
                    "edge ({from}, {to}) out of range for {n} nodes"
                )));
            }
            if from == to {
                return Err(Error::Argument(format!("self-loop on node {from}")));
            }
            g.in_nbrs[to].push(from);
            if symmetric {
                g.in_nbrs[from].push(to);
            }
        }
        for nbrs in &mut g.in_nbrs {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.in_nbrs.len()
    }

    /// `N_i`, sorted ascending. Never contains `i`.
    pub fn in_neighbors(&self, i: usize) -> Result<&[usize]> {
        self.in_nbrs
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Argument(format!("node {i} out of range for {} nodes", self.n())))
    }

    pub(crate) fn nbrs(&self, i: usize) -> &[usize] {
        &self.in_nbrs[i]
    }

    pub fn edge_count(&self) -> usize {
        self.in_nbrs.iter().map(Vec::len).sum()
    }

    /// All directed edges `(from, to)`, ordered by `to` then `from`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.in_nbrs
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (j, i)))
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.in_nbrs
            .get(to)
            .is_some_and(|nbrs| nbrs.binary_search(&from).is_ok())
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(j, i)| self.has_edge(i, j))
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n()];
        for (j, i) in self.edges() {
            out[j].push(i);
        }
        out
    }

    /// The subgraph induced on `keep` (ids relabelled by position in `keep`).
    pub fn induced(&self, keep: &[usize]) -> Result<Digraph> {
        if keep.is_empty() {
            return Err(Error::Argument("induced subgraph needs a nonempty node set".into()));
        }
        let mut index = vec![usize::MAX; self.n()];
        for (pos, &v) in keep.iter().enumerate() {
            if v >= self.n() {
                return Err(Error::Argument(format!("node {v} out of range")));
            }
            if index[v] != usize::MAX {
                return Err(Error::Argument(format!("node {v} listed twice")));
            }
            index[v] = pos;
        }
        let mut g = Digraph::edgeless(keep.len())?;
        for (pos, &v) in keep.iter().enumerate() {
            g.in_nbrs[pos] = self.in_nbrs[v]
                .iter()
                .filter_map(|&j| (index[j] != usize::MAX).then_some(index[j]))
                .collect();
            g.in_nbrs[pos].sort_unstable();
        }
        Ok(g)
    }
}

/// Strongly connected components (iterative Tarjan). Returns the component
/// id of every node; ids are in reverse topological order of the condensation.
pub fn strongly_connected_components(g: &Digraph) -> (usize, Vec<usize>) {
    let n = g.n();
    let out = g.out_adjacency();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut next_index = 0;
    let mut n_comp = 0;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        while let Some(&(v, edge)) = call.last() {
            if edge == 0 && index[v] == usize::MAX {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = out[v].get(edge) {
                if let Some(top) = call.last_mut() {
                    top.1 += 1;
                }
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp[w] = n_comp;
                    if w == v {
                        break;
                    }
                }
                n_comp += 1;
            }
        }
    }
    (n_comp, comp)
}

/// True iff some node reaches every other node along directed edges, i.e. the
/// condensation has exactly one source component.
pub fn is_rooted(g: &Digraph) -> bool {
    let (n_comp, comp) = strongly_connected_components(g);
    let mut has_incoming = vec![false; n_comp];
    for (j, i) in g.edges() {
        if comp[j] != comp[i] {
            has_incoming[comp[i]] = true;
        }
    }
    has_incoming.iter().filter(|&&b| !b).count() == 1
}

/// [`is_rooted`] applied to the subgraph induced on `keep`.
pub fn is_rooted_subgraph(g: &Digraph, keep: &[usize]) -> Result<bool> {
    Ok(is_rooted(&g.induced(keep)?))
}

/// Where each step's communication graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologyProvider {
    Fixed(Digraph),
    /// Every pair connected independently with `edge_prob` at each step.
    /// With `symmetric`, unordered pairs are drawn; otherwise ordered pairs.
    Stochastic {
        n: usize,
        edge_prob: f64,
        symmetric: bool,
    },
}

impl TopologyProvider {
    pub fn n(&self) -> usize {
        match self {
            TopologyProvider::Fixed(g) => g.n(),
            TopologyProvider::Stochastic { n, .. } => *n,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, TopologyProvider::Stochastic { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let TopologyProvider::Stochastic { n, edge_prob, .. } = self {
            if *n == 0 {
                return Err(Error::validation("topology.n", "must be positive"));
            }
            if !(0.0..=1.0).contains(edge_prob) {
                return Err(Error::validation(
                    "topology.edge_prob",
                    format!("{edge_prob} is not a probability"),
                ));
            }
        }
        Ok(())
    }
}

/// The graph for one step. `rng` must be the topology stream reserved for
/// that step; fixed providers do not consume it.
///
/// Pairs are visited in lexicographic order `(i, j)`, `i < j` for symmetric
/// sampling and all `i != j` otherwise, drawing one word per pair.
pub fn sample_topology(provider: &TopologyProvider, rng: &mut Stream) -> Digraph {
    match provider {
        TopologyProvider::Fixed(g) => g.clone(),
        &TopologyProvider::Stochastic {
            n,
            edge_prob,
            symmetric,
        } => {
            let mut in_nbrs = vec![Vec::new(); n];
            if symmetric {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.bernoulli(edge_prob) {
                            in_nbrs[i].push(j);
                            in_nbrs[j].push(i);
                        }
                    }
                }
                for nbrs in &mut in_nbrs {
                    nbrs.sort_unstable();
                }
            } else {
                for from in 0..n {
                    for to in 0..n {
                        if from != to && rng.bernoulli(edge_prob) {
                            in_nbrs[to].push(from);
                        }
                    }
                }
            }
            Digraph { in_nbrs }
        }
    }
}
