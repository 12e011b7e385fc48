//! Edge ranking and per-vehicle usage frequencies.
//!
//! Links are ranked with a damped PageRank-style recursion on the line graph
//! of the road network: a link's rank is `(1-d)` plus `d` times the rank
//! flowing in from the links that point to it. Frequencies measure how often
//! a vehicle's history used a link relative to the traffic its tail node saw.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::network::{HistoryGraph, LinkId, TrafficGraph, VehicleId};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("graph has no links to rank")]
    EmptyGraph,
    #[error("ranking did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("damping factor must lie in (0,1), got {0}")]
    BadDamping(f64),
}

/// How rank flowing from a link is split over the links it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankNormalization {
    /// Each link's rank is divided evenly over its successor links before
    /// being summed by the recursion. The iteration then has a unique fixed
    /// point for any damping below 1.
    #[default]
    OutDegree,
    /// The raw recursion with unnormalized sums. Diverges on graphs whose
    /// line-graph spectral radius exceeds the reciprocal damping; kept for
    /// fidelity experiments.
    Literal,
}

/// Parameters of the edge-ranking iteration.
#[derive(Debug, Clone)]
pub struct RankingConfig {
    /// Damping factor `d` in (0,1).
    pub damping: f64,
    /// Max-norm convergence threshold.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub normalization: RankNormalization,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            damping: 0.93,
            tolerance: 1e-9,
            max_iterations: 10_000,
            normalization: RankNormalization::OutDegree,
        }
    }
}

/// Topological rank per link; every value is at least `1 - damping`.
#[derive(Debug, Clone)]
pub struct EdgeRanks {
    ranks: BTreeMap<LinkId, f64>,
}

impl EdgeRanks {
    /// Builds ranks from explicit values, e.g. for tools or tests.
    pub fn from_map(ranks: BTreeMap<LinkId, f64>) -> Self {
        EdgeRanks { ranks }
    }

    /// Rank of `link`; 0 for links outside the ranked graph.
    pub fn rank(&self, link: &LinkId) -> f64 {
        self.ranks.get(link).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LinkId, f64)> {
        self.ranks.iter().map(|(l, r)| (l, *r))
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// CSV dump: `link_from,link_to,rank` with a header line.
    pub fn to_csv(&self) -> String {
        values_to_csv("rank", self.ranks.iter().map(|(l, v)| (l, *v)))
    }
}

/// Per-vehicle usage frequency per link, each in `[0,1]`.
#[derive(Debug, Clone)]
pub struct EdgeFrequencies {
    vehicle: VehicleId,
    freqs: BTreeMap<LinkId, f64>,
}

impl EdgeFrequencies {
    /// Builds frequencies from explicit values, e.g. for tools or tests.
    pub fn from_map(vehicle: VehicleId, freqs: BTreeMap<LinkId, f64>) -> Self {
        EdgeFrequencies { vehicle, freqs }
    }

    pub fn vehicle(&self) -> &VehicleId {
        &self.vehicle
    }

    /// Frequency of `link`; 0 when the vehicle never used it.
    pub fn frequency(&self, link: &LinkId) -> f64 {
        self.freqs.get(link).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LinkId, f64)> {
        self.freqs.iter().map(|(l, f)| (l, *f))
    }

    /// CSV dump: `link_from,link_to,frequency` with a header line.
    pub fn to_csv(&self) -> String {
        values_to_csv("frequency", self.freqs.iter().map(|(l, v)| (l, *v)))
    }
}

fn values_to_csv<'a>(name: &str, rows: impl Iterator<Item = (&'a LinkId, f64)>) -> String {
    let mut out = format!("link_from,link_to,{name}\n");
    for (link, value) in rows {
        let _ = writeln!(out, "{},{},{value:.12}", link.from, link.to);
    }
    out
}

/// Computes the topological rank of every link by damped iteration from the
/// all-ones vector.
///
/// With out-degree normalization the iteration contracts with factor
/// `damping`, so the fixed point is unique and the residual shrinks
/// geometrically. In literal mode the raw sums may diverge; divergence is
/// reported as non-convergence with the last residual.
pub fn rank_edges(graph: &TrafficGraph, config: &RankingConfig) -> Result<EdgeRanks, RankingError> {
    if graph.is_empty() {
        return Err(RankingError::EmptyGraph);
    }
    if !(config.damping > 0.0 && config.damping < 1.0) {
        return Err(RankingError::BadDamping(config.damping));
    }
    let d = config.damping;

    let ids: Vec<&LinkId> = graph.link_ids().collect();
    let index: BTreeMap<&LinkId, usize> = ids.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let n = ids.len();

    // in_edges[i] lists predecessor link indices of link i; out_degree[j] is
    // the number of links fed by link j.
    let mut in_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut out_degree: Vec<usize> = vec![0; n];
    for (i, id) in ids.iter().enumerate() {
        let preds = graph
            .in_neighbors(id)
            .expect("link ids come from the graph");
        for p in &preds {
            in_edges[i].push(index[p]);
        }
        out_degree[i] = graph
            .out_neighbors(id)
            .expect("link ids come from the graph")
            .len();
    }

    let mut ranks = vec![1.0_f64; n];
    let mut next = vec![0.0_f64; n];
    let mut residual = f64::INFINITY;

    for iteration in 0..config.max_iterations {
        for i in 0..n {
            let mut sum = 0.0;
            for &p in &in_edges[i] {
                let contribution = match config.normalization {
                    RankNormalization::OutDegree => ranks[p] / out_degree[p] as f64,
                    RankNormalization::Literal => ranks[p],
                };
                sum += contribution;
            }
            next[i] = (1.0 - d) + d * sum;
        }
        residual = ranks
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut ranks, &mut next);
        if residual <= config.tolerance {
            let ranks = ids
                .iter()
                .zip(&ranks)
                .map(|(l, r)| ((*l).clone(), *r))
                .collect();
            return Ok(EdgeRanks { ranks });
        }
        if !residual.is_finite() || residual > 1e12 {
            return Err(RankingError::NonConvergence {
                iterations: iteration + 1,
                residual,
            });
        }
    }
    Err(RankingError::NonConvergence {
        iterations: config.max_iterations,
        residual,
    })
}

/// Computes the usage frequency of every link of `graph` for the vehicle
/// behind `history`.
///
/// The frequency of `(l,m)` is its history weight divided by the summed
/// history weights of the links pointing to node `l`. A zero denominator
/// yields frequency 0. A trip that starts at node `l` contributes to the
/// numerator but not to the denominator, so the raw ratio can exceed 1;
/// frequencies are capped at 1.
pub fn edge_frequencies(history: &HistoryGraph, graph: &TrafficGraph) -> EdgeFrequencies {
    let mut freqs = BTreeMap::new();
    for id in graph.link_ids() {
        let w = history.weight(id);
        let f = if w == 0 {
            0.0
        } else {
            let denom: u64 = graph
                .in_neighbors(id)
                .expect("link ids come from the graph")
                .iter()
                .map(|p| history.weight(p))
                .sum();
            if denom == 0 {
                0.0
            } else {
                (w as f64 / denom as f64).min(1.0)
            }
        };
        freqs.insert(id.clone(), f);
    }
    EdgeFrequencies {
        vehicle: history.vehicle().clone(),
        freqs,
    }
}
