//! Route prediction: enumerate the paths a vehicle's history supports from
//! its current position, score each one by summed frequency-weighted rank,
//! and return the best.

use crate::network::{HistoryGraph, LinkId, NodeId, TrafficGraph, VehicleId};
use crate::ranking::{edge_frequencies, EdgeFrequencies, EdgeRanks};

/// Which end of the current link the prediction tree is rooted at.
///
/// Rooting at the tail would re-predict the link already being driven, so
/// the head (the node the vehicle is driving toward) is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootPolicy {
    /// Root at the current link's `to` node.
    #[default]
    Head,
    /// Root at the current link's `from` node.
    Tail,
}

impl RootPolicy {
    /// The tree root for a vehicle currently traveling on `link`.
    pub fn root_of(&self, link: &LinkId) -> NodeId {
        match self {
            RootPolicy::Head => link.to.clone(),
            RootPolicy::Tail => link.from.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictionConfig {
    /// Prediction horizon `W`: maximum number of links per branch.
    pub horizon: usize,
    pub root_policy: RootPolicy,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            horizon: 5,
            root_policy: RootPolicy::default(),
        }
    }
}

/// All maximal history paths of up to `W` links from a root node.
#[derive(Debug, Clone)]
pub struct PredictionTree {
    root: NodeId,
    branches: Vec<Vec<LinkId>>,
}

impl PredictionTree {
    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn branches(&self) -> &[Vec<LinkId>] {
        &self.branches
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }
}

/// The winning branch and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedRoute {
    pub vehicle: VehicleId,
    pub links: Vec<LinkId>,
    pub score: f64,
}

impl PredictedRoute {
    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Whether the predicted sequence contains `link`.
    pub fn contains(&self, link: &LinkId) -> bool {
        self.links.contains(link)
    }
}

/// Enumerates every maximal path of at most `config.horizon` links starting
/// at `root`, following only links present in the vehicle's history.
///
/// Cycles are unrolled up to the horizon. A node with no history out-links
/// ends the branch; a root with none yields an empty tree.
pub fn build_tree(
    history: &HistoryGraph,
    root: &NodeId,
    config: &PredictionConfig,
) -> PredictionTree {
    let mut branches = Vec::new();
    let mut path: Vec<LinkId> = Vec::new();
    if config.horizon >= 1 {
        descend(history, root, config.horizon, &mut path, &mut branches);
    }
    PredictionTree {
        root: root.clone(),
        branches,
    }
}

fn descend(
    history: &HistoryGraph,
    node: &NodeId,
    remaining: usize,
    path: &mut Vec<LinkId>,
    branches: &mut Vec<Vec<LinkId>>,
) {
    let successors = history.links_from(node);
    if successors.is_empty() || remaining == 0 {
        if !path.is_empty() {
            branches.push(path.clone());
        }
        return;
    }
    for (link, _) in successors {
        let next = link.to.clone();
        path.push(link);
        descend(history, &next, remaining - 1, path, branches);
        path.pop();
    }
}

/// Score of a branch: the sum of `frequency * rank` over its links.
/// Links missing from the frequency or rank tables contribute 0.
pub fn score_branch(branch: &[LinkId], ranks: &EdgeRanks, freqs: &EdgeFrequencies) -> f64 {
    branch
        .iter()
        .map(|link| freqs.frequency(link) * ranks.rank(link))
        .sum()
}

/// Runs the route prediction for one vehicle: builds the tree at `root`,
/// scores every branch and returns the maximum. Ties go to the
/// lexicographically smallest link sequence; an empty tree yields an empty
/// route with score 0.
pub fn predict_route(
    history: &HistoryGraph,
    graph: &TrafficGraph,
    ranks: &EdgeRanks,
    root: &NodeId,
    config: &PredictionConfig,
) -> PredictedRoute {
    let freqs = edge_frequencies(history, graph);
    predict_route_with(history, ranks, &freqs, root, config)
}

/// Same as [`predict_route`] with precomputed frequencies, for callers that
/// evaluate many predictions against one history.
pub fn predict_route_with(
    history: &HistoryGraph,
    ranks: &EdgeRanks,
    freqs: &EdgeFrequencies,
    root: &NodeId,
    config: &PredictionConfig,
) -> PredictedRoute {
    let tree = build_tree(history, root, config);
    let mut best: Option<(f64, &Vec<LinkId>)> = None;
    for branch in tree.branches() {
        let score = score_branch(branch, ranks, freqs);
        let better = match &best {
            None => true,
            Some((s, b)) => score > *s || (score == *s && branch < *b),
        };
        if better {
            best = Some((score, branch));
        }
    }
    match best {
        Some((score, branch)) => PredictedRoute {
            vehicle: history.vehicle().clone(),
            links: branch.clone(),
            score,
        },
        None => PredictedRoute {
            vehicle: history.vehicle().clone(),
            links: Vec::new(),
            score: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Link;
    use std::collections::BTreeMap;

    fn link(from: &str, to: &str) -> Link {
        Link {
            from: NodeId::new(from),
            to: NodeId::new(to),
            length_m: 100.0,
            free_speed_mps: 10.0,
            capacity: 10,
        }
    }

    fn lid(from: &str, to: &str) -> LinkId {
        LinkId::new(from, to)
    }

    fn history_of(graph: &TrafficGraph, trips: &[Vec<LinkId>]) -> HistoryGraph {
        let mut h = HistoryGraph::new(VehicleId::new("v"));
        for trip in trips {
            h.record_trip(graph, trip).unwrap();
        }
        h
    }

    fn config(w: usize) -> PredictionConfig {
        PredictionConfig {
            horizon: w,
            ..PredictionConfig::default()
        }
    }

    #[test]
    fn root_policy_selects_link_end() {
        let link = lid("l", "m");
        assert_eq!(RootPolicy::Head.root_of(&link), NodeId::new("m"));
        assert_eq!(RootPolicy::Tail.root_of(&link), NodeId::new("l"));
    }

    #[test]
    fn tree_follows_chain_to_its_end() {
        let g = TrafficGraph::from_links([link("a", "b"), link("b", "c"), link("c", "d")]).unwrap();
        let h = history_of(&g, &[vec![lid("a", "b"), lid("b", "c"), lid("c", "d")]]);
        let tree = build_tree(&h, &NodeId::new("b"), &config(5));
        assert_eq!(tree.branches(), &[vec![lid("b", "c"), lid("c", "d")]]);
    }

    #[test]
    fn tree_fans_out_per_out_link() {
        let g = TrafficGraph::from_links([link("b", "c"), link("b", "d")]).unwrap();
        let h = history_of(&g, &[vec![lid("b", "c")], vec![lid("b", "d")]]);
        let tree = build_tree(&h, &NodeId::new("b"), &config(1));
        assert_eq!(tree.branches(), &[vec![lid("b", "c")], vec![lid("b", "d")]]);
    }

    #[test]
    fn tree_unrolls_cycles_to_depth() {
        let g = TrafficGraph::from_links([link("a", "b"), link("b", "a")]).unwrap();
        let h = history_of(&g, &[vec![lid("a", "b"), lid("b", "a"), lid("a", "b")]]);
        let tree = build_tree(&h, &NodeId::new("a"), &config(3));
        assert_eq!(
            tree.branches(),
            &[vec![lid("a", "b"), lid("b", "a"), lid("a", "b")]]
        );
    }

    #[test]
    fn tree_is_empty_without_history_at_root() {
        let h = HistoryGraph::new(VehicleId::new("v"));
        let tree = build_tree(&h, &NodeId::new("a"), &config(5));
        assert!(tree.is_empty());
    }

    fn manual_scores(pairs: &[(&str, &str, f64, f64)]) -> (EdgeRanks, EdgeFrequencies) {
        let mut ranks = BTreeMap::new();
        let mut freqs = BTreeMap::new();
        for (from, to, f, r) in pairs {
            ranks.insert(lid(from, to), *r);
            freqs.insert(lid(from, to), *f);
        }
        (
            EdgeRanks::from_map(ranks),
            EdgeFrequencies::from_map(VehicleId::new("v"), freqs),
        )
    }

    #[test]
    fn score_of_empty_branch_is_zero() {
        let (ranks, freqs) = manual_scores(&[]);
        assert_eq!(score_branch(&[], &ranks, &freqs), 0.0);
    }

    #[test]
    fn score_sums_frequency_times_rank() {
        let (ranks, freqs) = manual_scores(&[("a", "b", 0.5, 1.0), ("b", "c", 0.25, 0.07)]);
        let one = score_branch(&[lid("a", "b")], &ranks, &freqs);
        assert!((one - 0.5).abs() < 1e-12);
        let two = score_branch(&[lid("a", "b"), lid("b", "c")], &ranks, &freqs);
        assert!((two - 0.5175).abs() < 1e-12);
    }

    #[test]
    fn prediction_prefers_frequent_branch() {
        let g = TrafficGraph::from_links([link("a", "b"), link("b", "c"), link("b", "d")]).unwrap();
        let mut trips = vec![vec![lid("a", "b"), lid("b", "d")]];
        for _ in 0..9 {
            trips.push(vec![lid("a", "b"), lid("b", "c")]);
        }
        let h = history_of(&g, &trips);
        let ranks = crate::ranking::rank_edges(&g, &Default::default()).unwrap();
        let route = predict_route(&h, &g, &ranks, &NodeId::new("b"), &config(5));
        assert_eq!(route.links.first(), Some(&lid("b", "c")));
        assert!(route.score > 0.0);
    }

    #[test]
    fn prediction_without_history_is_empty() {
        let g = TrafficGraph::from_links([link("a", "b")]).unwrap();
        let h = HistoryGraph::new(VehicleId::new("v"));
        let ranks = crate::ranking::rank_edges(&g, &Default::default()).unwrap();
        let route = predict_route(&h, &g, &ranks, &NodeId::new("a"), &config(5));
        assert!(route.is_empty());
        assert_eq!(route.score, 0.0);
    }

    #[test]
    fn ties_break_to_lexicographically_smaller_sequence() {
        let g = TrafficGraph::from_links([link("a", "b"), link("b", "c"), link("b", "d")]).unwrap();
        let h = history_of(
            &g,
            &[
                vec![lid("a", "b"), lid("b", "c")],
                vec![lid("a", "b"), lid("b", "d")],
            ],
        );
        let ranks = crate::ranking::rank_edges(&g, &Default::default()).unwrap();
        let route = predict_route(&h, &g, &ranks, &NodeId::new("b"), &config(5));
        assert_eq!(route.links, vec![lid("b", "c")]);
    }

    // Independent reference: enumerate branches recursively and take the
    // best score by linear scan, without going through build_tree.
    fn oracle_best(
        h: &HistoryGraph,
        ranks: &EdgeRanks,
        freqs: &EdgeFrequencies,
        node: &NodeId,
        depth: usize,
    ) -> Vec<(Vec<LinkId>, f64)> {
        let succ = h.links_from(node);
        if succ.is_empty() || depth == 0 {
            return vec![(Vec::new(), 0.0)];
        }
        let mut out = Vec::new();
        for (l, _) in succ {
            let contribution = freqs.frequency(&l) * ranks.rank(&l);
            for (mut tail, s) in oracle_best(h, ranks, freqs, &l.to.clone(), depth - 1) {
                tail.insert(0, l.clone());
                out.push((tail, s + contribution));
            }
        }
        out
    }

    #[test]
    fn prediction_matches_exhaustive_oracle() {
        let g = TrafficGraph::from_links([
            link("a", "b"),
            link("b", "c"),
            link("b", "d"),
            link("c", "a"),
            link("d", "a"),
            link("a", "c"),
        ])
        .unwrap();
        let h = history_of(
            &g,
            &[
                vec![lid("a", "b"), lid("b", "c"), lid("c", "a")],
                vec![lid("a", "b"), lid("b", "d"), lid("d", "a"), lid("a", "c")],
                vec![lid("a", "c"), lid("c", "a"), lid("a", "b")],
            ],
        );
        let ranks = crate::ranking::rank_edges(&g, &Default::default()).unwrap();
        let freqs = edge_frequencies(&h, &g);
        for root in ["a", "b", "c", "d"] {
            let root = NodeId::new(root);
            for w in 1..=5 {
                let got = predict_route(&h, &g, &ranks, &root, &config(w));
                let candidates = oracle_best(&h, &ranks, &freqs, &root, w);
                let best = candidates.iter().filter(|(b, _)| !b.is_empty()).fold(
                    None::<&(Vec<LinkId>, f64)>,
                    |acc, c| match acc {
                        None => Some(c),
                        Some(a) if c.1 > a.1 || (c.1 == a.1 && c.0 < a.0) => Some(c),
                        Some(a) => Some(a),
                    },
                );
                match best {
                    Some((branch, score)) => {
                        assert_eq!(&got.links, branch, "root {root} W={w}");
                        assert!((got.score - score).abs() < 1e-12);
                    }
                    None => assert!(got.is_empty()),
                }
            }
        }
    }

    #[test]
    fn extending_a_branch_with_positive_weight_increases_score() {
        let (ranks, freqs) = manual_scores(&[("a", "b", 0.5, 1.0), ("b", "c", 0.1, 0.2)]);
        let short = score_branch(&[lid("a", "b")], &ranks, &freqs);
        let long = score_branch(&[lid("a", "b"), lid("b", "c")], &ranks, &freqs);
        assert!(long > short);
    }

    #[test]
    fn scaling_frequencies_preserves_argmax() {
        let g = TrafficGraph::from_links([link("a", "b"), link("b", "c"), link("b", "d")]).unwrap();
        let h = history_of(
            &g,
            &[
                vec![lid("a", "b"), lid("b", "c")],
                vec![lid("a", "b"), lid("b", "c")],
                vec![lid("a", "b"), lid("b", "d")],
            ],
        );
        let ranks = crate::ranking::rank_edges(&g, &Default::default()).unwrap();
        let freqs = edge_frequencies(&h, &g);
        let scaled = EdgeFrequencies::from_map(
            VehicleId::new("v"),
            freqs.iter().map(|(l, f)| (l.clone(), f * 0.3)).collect(),
        );
        let base = predict_route_with(&h, &ranks, &freqs, &NodeId::new("b"), &config(5));
        let after = predict_route_with(&h, &ranks, &scaled, &NodeId::new("b"), &config(5));
        assert_eq!(base.links, after.links);
    }
}
