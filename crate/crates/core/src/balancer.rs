//! Load balancing across the alternatives of an obstructed link.
//!
//! Re-routing probabilities are inverse to each alternative's share of the
//! observed load, so emptier alternatives attract more of the displaced
//! traffic. Alternative sets either come from scenario configuration or are
//! generated from the k shortest simple detours around the obstructed link.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::network::{LinkId, NetworkError, NodeId, TrafficGraph};

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("alternative set for {0} is empty")]
    EmptyAlternatives(LinkId),
    #[error("expected {expected} occupancies, got {got}")]
    OccupancyMismatch { expected: usize, got: usize },
    #[error("no alternative route around {0} exists")]
    NoAlternativeRoute(LinkId),
    #[error("alternative {0} duplicates another alternative or the obstructed link")]
    InvalidAlternative(LinkId),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One detour: the path spliced into a re-routed vehicle's route, identified
/// by its first link off the obstructed path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlternativeRoute {
    pub key_link: LinkId,
    pub path: Vec<LinkId>,
}

/// How the load of an alternative route is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OccupancyMeasure {
    /// Occupancy of the identifying link only.
    #[default]
    KeyLink,
    /// Summed occupancy over the whole alternative path.
    WholePath,
}

/// The ordered alternatives of one obstructed link.
#[derive(Debug, Clone)]
pub struct AlternativeSet {
    obstructed: LinkId,
    alternatives: Vec<AlternativeRoute>,
}

impl AlternativeSet {
    pub fn new(
        obstructed: LinkId,
        alternatives: Vec<AlternativeRoute>,
    ) -> Result<Self, BalanceError> {
        if alternatives.is_empty() {
            return Err(BalanceError::EmptyAlternatives(obstructed));
        }
        let mut seen = BTreeSet::new();
        for alt in &alternatives {
            if alt.key_link == obstructed || !seen.insert(alt.key_link.clone()) {
                return Err(BalanceError::InvalidAlternative(alt.key_link.clone()));
            }
        }
        Ok(AlternativeSet {
            obstructed,
            alternatives,
        })
    }

    pub fn obstructed(&self) -> &LinkId {
        &self.obstructed
    }

    pub fn alternatives(&self) -> &[AlternativeRoute] {
        &self.alternatives
    }

    pub fn len(&self) -> usize {
        self.alternatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alternatives.is_empty()
    }
}

/// Re-routing distribution over the alternatives at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceVector {
    pub probabilities: Vec<f64>,
    pub tick: u64,
}

impl BalanceVector {
    /// Picks an index by inverse CDF against a uniform draw in [0,1).
    pub fn sample(&self, uniform: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            acc += p;
            if uniform < acc {
                return i;
            }
        }
        // Rounding can leave the accumulated mass a hair under 1; the last
        // nonzero bucket takes the remainder.
        self.probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probabilities.len() - 1)
    }
}

/// Computes the re-routing probabilities for one occupancy snapshot.
///
/// With every alternative occupied, each gets weight inverse to its load
/// share; if any alternative is empty, the empty ones split the whole mass
/// evenly and the occupied ones get nothing.
pub fn balance(
    alternatives: &AlternativeSet,
    occupancies: &[u32],
    tick: u64,
) -> Result<BalanceVector, BalanceError> {
    let n = alternatives.len();
    if occupancies.len() != n {
        return Err(BalanceError::OccupancyMismatch {
            expected: n,
            got: occupancies.len(),
        });
    }
    let zeros = occupancies.iter().filter(|&&x| x == 0).count();
    let probabilities = if zeros > 0 {
        occupancies
            .iter()
            .map(|&x| if x == 0 { 1.0 / zeros as f64 } else { 0.0 })
            .collect()
    } else {
        // P_j = (1/h_j) / sum_q (1/h_q) with h_j = x_j / sum_q x_q.
        let total: f64 = occupancies.iter().map(|&x| x as f64).sum();
        let inverse_shares: Vec<f64> = occupancies.iter().map(|&x| total / x as f64).collect();
        let norm: f64 = inverse_shares.iter().sum();
        inverse_shares.iter().map(|inv| inv / norm).collect()
    };
    Ok(BalanceVector {
        probabilities,
        tick,
    })
}

#[derive(Clone, PartialEq, Eq)]
struct QueueEntry {
    cost_bits: u64,
    node: NodeId,
}

impl QueueEntry {
    fn new(cost: f64, node: NodeId) -> Self {
        QueueEntry {
            cost_bits: cost.to_bits(),
            node,
        }
    }

    fn cost(&self) -> f64 {
        f64::from_bits(self.cost_bits)
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the cheapest entry.
        other
            .cost()
            .total_cmp(&self.cost())
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(
    graph: &TrafficGraph,
    source: &NodeId,
    target: &NodeId,
    banned_links: &BTreeSet<LinkId>,
    banned_nodes: &BTreeSet<NodeId>,
) -> Option<(Vec<NodeId>, f64)> {
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(source.clone(), 0.0);
    heap.push(QueueEntry::new(0.0, source.clone()));

    while let Some(entry) = heap.pop() {
        let cost = entry.cost();
        let node = entry.node;
        if &node == target {
            let mut path = vec![node.clone()];
            let mut current = node;
            while let Some(p) = prev.get(&current) {
                path.push(p.clone());
                current = p.clone();
            }
            path.reverse();
            return Some((path, cost));
        }
        if cost > dist.get(&node).copied().unwrap_or(f64::INFINITY) {
            continue;
        }
        for link_id in graph.links_from(&node) {
            if banned_links.contains(link_id) || banned_nodes.contains(&link_id.to) {
                continue;
            }
            let link = graph
                .link(link_id)
                .expect("adjacency refers to graph links");
            let next_cost = cost + link.length_m;
            let known = dist.get(&link_id.to).copied().unwrap_or(f64::INFINITY);
            if next_cost < known {
                dist.insert(link_id.to.clone(), next_cost);
                prev.insert(link_id.to.clone(), node.clone());
                heap.push(QueueEntry::new(next_cost, link_id.to.clone()));
            }
        }
    }
    None
}

/// K shortest simple node paths from `source` to `target` that avoid the
/// banned links (Yen's algorithm over link lengths). Paths are ordered by
/// cost, then lexicographically.
fn k_shortest_paths(
    graph: &TrafficGraph,
    source: &NodeId,
    target: &NodeId,
    always_banned: &BTreeSet<LinkId>,
    k: usize,
) -> Vec<(Vec<NodeId>, f64)> {
    let mut accepted: Vec<(Vec<NodeId>, f64)> = Vec::new();
    let Some(first) = dijkstra(graph, source, target, always_banned, &BTreeSet::new()) else {
        return accepted;
    };
    accepted.push(first);
    let mut candidates: Vec<(Vec<NodeId>, f64)> = Vec::new();

    while accepted.len() < k {
        let (last_path, _) = accepted.last().unwrap().clone();
        for spur_index in 0..last_path.len() - 1 {
            let spur_node = &last_path[spur_index];
            let root = &last_path[..=spur_index];

            let mut banned_links = always_banned.clone();
            for (path, _) in accepted.iter().chain(candidates.iter()) {
                if path.len() > spur_index + 1 && &path[..=spur_index] == root {
                    banned_links.insert(LinkId {
                        from: path[spur_index].clone(),
                        to: path[spur_index + 1].clone(),
                    });
                }
            }
            let banned_nodes: BTreeSet<NodeId> = root[..spur_index].iter().cloned().collect();

            if let Some((spur_path, spur_cost)) =
                dijkstra(graph, spur_node, target, &banned_links, &banned_nodes)
            {
                let mut total: Vec<NodeId> = root[..spur_index].to_vec();
                total.extend(spur_path);
                let root_cost: f64 = root
                    .windows(2)
                    .map(|w| {
                        graph
                            .link(&LinkId {
                                from: w[0].clone(),
                                to: w[1].clone(),
                            })
                            .expect("root follows graph links")
                            .length_m
                    })
                    .sum();
                let candidate = (total, root_cost + spur_cost);
                if !accepted.contains(&candidate) && !candidates.contains(&candidate) {
                    candidates.push(candidate);
                }
            }
        }
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if candidates.is_empty() {
            break;
        }
        accepted.push(candidates.remove(0));
    }
    accepted
}

/// Builds the alternative set for `obstructed` from the `k` shortest simple
/// detours between its endpoints. Detours sharing a first link collapse
/// into one alternative, so the set may end up smaller than `k`.
pub fn generate_alternatives(
    graph: &TrafficGraph,
    obstructed: &LinkId,
    k: usize,
) -> Result<AlternativeSet, BalanceError> {
    if !graph.contains_link(obstructed) {
        return Err(BalanceError::Network(NetworkError::UnknownLink(
            obstructed.clone(),
        )));
    }
    let banned: BTreeSet<LinkId> = [obstructed.clone()].into();
    let paths = k_shortest_paths(graph, &obstructed.from, &obstructed.to, &banned, k.max(1));
    let mut seen = BTreeSet::new();
    let mut alternatives = Vec::new();
    for (nodes, _) in paths {
        let links = graph.node_path_to_links(&nodes)?;
        let Some(first) = links.first() else { continue };
        if seen.insert(first.clone()) {
            alternatives.push(AlternativeRoute {
                key_link: first.clone(),
                path: links,
            });
        }
    }
    if alternatives.is_empty() {
        return Err(BalanceError::NoAlternativeRoute(obstructed.clone()));
    }
    AlternativeSet::new(obstructed.clone(), alternatives)
}
