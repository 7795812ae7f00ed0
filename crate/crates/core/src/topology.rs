//! Per-round communication graphs and aggregation weights.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

/// Directed neighbor sets and aggregation weights of one round.
///
/// `weights[i]` maps every member of the closed neighborhood
/// `N_in(i) ∪ {i}` to its positive aggregation weight at receiver `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub n: usize,
    pub in_neighbors: Vec<Vec<usize>>,
    pub out_neighbors: Vec<Vec<usize>>,
    pub weights: Vec<BTreeMap<usize, f64>>,
}

/// A directed weighted edge `from -> to` as it appears in schedule files.
/// An edge with `from == to` sets the receiver's self weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "one")]
    pub w: f64,
}

fn one() -> f64 {
    1.0
}

impl RoundSchedule {
    /// Builds a schedule from directed weighted edges. Self weights default
    /// to 1.0 unless a self edge overrides them.
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        let mut in_sets = vec![BTreeSet::new(); n];
        let mut weights: Vec<BTreeMap<usize, f64>> =
            (0..n).map(|i| BTreeMap::from([(i, 1.0)])).collect();
        for e in edges {
            if e.from >= n || e.to >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} out of range for {n} clients",
                    e.from, e.to
                )));
            }
            if !(e.w > 0.0) || !e.w.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} has non-positive weight {}",
                    e.from, e.to, e.w
                )));
            }
            if e.from != e.to {
                in_sets[e.to].insert(e.from);
            }
            weights[e.to].insert(e.from, e.w);
        }
        let mut out_sets = vec![BTreeSet::new(); n];
        for (i, set) in in_sets.iter().enumerate() {
            for &j in set {
                out_sets[j].insert(i);
            }
        }
        Ok(Self {
            n,
            in_neighbors: in_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            out_neighbors: out_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            weights,
        })
    }

    /// Uniform unit weights over an undirected adjacency structure.
    pub fn from_undirected(adj: &[BTreeSet<usize>]) -> Self {
        let n = adj.len();
        let lists: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().copied().collect()).collect();
        let weights = (0..n)
            .map(|i| {
                std::iter::once(i)
                    .chain(adj[i].iter().copied())
                    .map(|j| (j, 1.0))
                    .collect()
            })
            .collect();
        Self {
            n,
            in_neighbors: lists.clone(),
            out_neighbors: lists,
            weights,
        }
    }

    /// `N_in(i) ∪ {i}` in ascending order.
    pub fn closure(&self, i: usize) -> Vec<usize> {
        self.weights[i].keys().copied().collect()
    }

    pub fn weight(&self, receiver: usize, sender: usize) -> Option<f64> {
        self.weights[receiver].get(&sender).copied()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.in_neighbors[i] == self.out_neighbors[i])
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (&j, &w) in &self.weights[i] {
                out.push(Edge { from: j, to: i, w });
            }
        }
        out
    }
}

/// `N_in(i) ∪ {i}`.
pub fn neighbors_closure(s: &RoundSchedule, i: usize) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = s.in_neighbors[i].iter().copied().collect();
    set.insert(i);
    set
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyKind {
    /// Circulant k-regular graph: `i ± 1..=k/2`, plus the antipode when k is odd.
    Regular { k: usize },
    /// Hub is client 0.
    Star,
    /// Path ordered by client id.
    Line,
    WattsStrogatz { k: usize, beta: f64 },
    /// Explicit rounds of directed edges. A single round is reused for
    /// every round.
    Custom { rounds: Vec<Vec<Edge>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    pub rounds: usize,
    pub seed: u64,
    pub time_varying: bool,
}

impl TopologySpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidTopology("need at least one client".into()));
        }
        match &self.kind {
            TopologyKind::Regular { k } => {
                if *k >= n && !(n == 1 && *k == 0) {
                    return Err(Error::InvalidTopology(format!(
                        "regular graph needs k < n (k={k}, n={n})"
                    )));
                }
                if !(n * k).is_multiple_of(2) {
                    return Err(Error::InvalidTopology(format!(
                        "regular graph needs n*k even (k={k}, n={n})"
                    )));
                }
            }
            TopologyKind::WattsStrogatz { k, beta } => {
                if k % 2 != 0 {
                    return Err(Error::InvalidTopology(format!(
                        "watts-strogatz needs even k, got {k}"
                    )));
                }
                if *k >= n && !(n == 1 && *k == 0) {
                    return Err(Error::InvalidTopology(format!(
                        "watts-strogatz needs k < n (k={k}, n={n})"
                    )));
                }
                if !(0.0..=1.0).contains(beta) {
                    return Err(Error::InvalidTopology(format!(
                        "watts-strogatz beta must lie in [0, 1], got {beta}"
                    )));
                }
            }
            TopologyKind::Custom { rounds } => {
                if rounds.is_empty() {
                    return Err(Error::InvalidTopology("schedule file has no rounds".into()));
                }
                if rounds.len() != 1 && rounds.len() < self.rounds {
                    return Err(Error::InvalidTopology(format!(
                        "schedule file has {} rounds, simulation needs {}",
                        rounds.len(),
                        self.rounds
                    )));
                }
                for r in rounds {
                    RoundSchedule::from_edges(n, r)?;
                }
            }
            TopologyKind::Star | TopologyKind::Line => {}
        }
        Ok(())
    }
}

/// Parses the JSON schedule format: an array of rounds, each an array of
/// `{"from": j, "to": i, "w": 1.0}` edges.
pub fn parse_schedule_json(text: &str) -> Result<Vec<Vec<Edge>>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("schedule file: {e}")))
}

/// Builds the schedule of round `t`.
pub fn build_schedule(spec: &TopologySpec, t: usize) -> Result<RoundSchedule> {
    spec.validate()?;
    if spec.rounds > 0 && t >= spec.rounds {
        return Err(Error::InvalidTopology(format!(
            "round {t} outside 0..{}",
            spec.rounds
        )));
    }
    let n = spec.n;
    let stamp = if spec.time_varying { t as u64 } else { 0 };
    Ok(match &spec.kind {
        TopologyKind::Regular { k } => {
            let adj = circulant(n, *k);
            if spec.time_varying {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng_for(spec.seed, Stream::Topology, &[0, stamp]));
                let relabeled: Vec<BTreeSet<usize>> = {
                    let mut out = vec![BTreeSet::new(); n];
                    for (u, set) in adj.iter().enumerate() {
                        for &v in set {
                            out[perm[u]].insert(perm[v]);
                        }
                    }
                    out
                };
                RoundSchedule::from_undirected(&relabeled)
            } else {
                RoundSchedule::from_undirected(&adj)
            }
        }
        TopologyKind::Star => {
            let mut adj = vec![BTreeSet::new(); n];
            for leaf in 1..n {
                adj[0].insert(leaf);
                adj[leaf].insert(0);
            }
            RoundSchedule::from_undirected(&adj)
        }
        TopologyKind::Line => {
            let mut adj = vec![BTreeSet::new(); n];
            for i in 1..n {
                adj[i - 1].insert(i);
                adj[i].insert(i - 1);
            }
            RoundSchedule::from_undirected(&adj)
        }
        TopologyKind::WattsStrogatz { k, beta } => {
            let adj = watts_strogatz(n, *k, *beta, spec.seed, stamp);
            RoundSchedule::from_undirected(&adj)
        }
        TopologyKind::Custom { rounds } => {
            let r = if rounds.len() == 1 { 0 } else { t };
            RoundSchedule::from_edges(n, &rounds[r])?
        }
    })
}

fn circulant(n: usize, k: usize) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); n];
    for i in 0..n {
        for j in 1..=k / 2 {
            let v = (i + j) % n;
            adj[i].insert(v);
            adj[v].insert(i);
        }
        if k % 2 == 1 {
            let v = (i + n / 2) % n;
            adj[i].insert(v);
            adj[v].insert(i);
        }
    }
    adj
}

/// Ring lattice with each lattice edge `(u, u+j)` rewired with probability
/// `beta` to a uniformly chosen non-adjacent endpoint.
fn watts_strogatz(n: usize, k: usize, beta: f64, seed: u64, stamp: u64) -> Vec<BTreeSet<usize>> {
    let mut adj = circulant(n, k);
    if beta == 0.0 {
        return adj;
    }
    let mut rng = rng_for(seed, Stream::Topology, &[1, stamp]);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() >= beta {
                continue;
            }
            if adj[u].len() >= n - 1 || !adj[u].contains(&v) {
                continue;
            }
            let candidates: Vec<usize> =
                (0..n).filter(|&w| w != u && !adj[u].contains(&w)).collect();
            if let Some(&w) = candidates.choose(&mut rng) {
                adj[u].remove(&v);
                adj[v].remove(&u);
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
    adj
}
