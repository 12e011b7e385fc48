//! Road network model: the global traffic graph, per-vehicle trip histories,
//! and link occupancy state.
//!
//! The topology is immutable once built; occupancy lives in a separate
//! [`OccupancyTable`] that the simulation updates between ticks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Errors raised by graph construction and queries.
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate link {0}")]
    DuplicateLink(LinkId),
    #[error("invalid link {link}: {reason}")]
    InvalidLink { link: LinkId, reason: String },
    #[error("trip is not a connected path: {prev} is not followed by {next}")]
    DisconnectedTrip { prev: LinkId, next: LinkId },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("graph has no coordinates for node {0}")]
    MissingCoordinates(NodeId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifier of a road location (intersection or waypoint).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Identifier of a connected vehicle.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VehicleId(String);

impl VehicleId {
    pub fn new(id: impl Into<String>) -> Self {
        VehicleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VehicleId {
    fn from(s: &str) -> Self {
        VehicleId::new(s)
    }
}

/// A directed link `(from, to)`, the unit every ranking, control and
/// balancing quantity is keyed by.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId {
    pub from: NodeId,
    pub to: NodeId,
}

impl LinkId {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        LinkId {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// A directed road segment with its physical attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    /// Segment length in meters, finite and positive.
    pub length_m: f64,
    /// Free-flow speed in meters per second, finite and positive.
    pub free_speed_mps: f64,
    /// Maximum number of vehicles that can use the link simultaneously.
    pub capacity: u32,
}

impl Link {
    pub fn id(&self) -> LinkId {
        LinkId {
            from: self.from.clone(),
            to: self.to.clone(),
        }
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let bad = |reason: &str| NetworkError::InvalidLink {
            link: self.id(),
            reason: reason.to_string(),
        };
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(bad("length must be finite and positive"));
        }
        if !(self.free_speed_mps.is_finite() && self.free_speed_mps > 0.0) {
            return Err(bad("free speed must be finite and positive"));
        }
        if self.capacity < 1 {
            return Err(bad("capacity must be at least 1"));
        }
        Ok(())
    }
}

/// Geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_000.0;

impl Coord {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Self {
        Coord { lat_deg, lon_deg }
    }

    pub fn is_valid(&self) -> bool {
        self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && self.lat_deg.abs() <= 90.0
            && self.lon_deg.abs() <= 180.0
    }

    /// Great-circle distance to `other` in meters (haversine).
    pub fn distance_m(&self, other: &Coord) -> f64 {
        let lat1 = self.lat_deg.to_radians();
        let lat2 = other.lat_deg.to_radians();
        let dlat = (other.lat_deg - self.lat_deg).to_radians();
        let dlon = (other.lon_deg - self.lon_deg).to_radians();
        let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().asin()
    }
}

/// Distance in meters from a point to the segment `a`–`b`, using a local
/// equirectangular projection centered on the point. Adequate at the sub-city
/// scales the assessment radius works at.
pub fn point_segment_distance_m(p: &Coord, a: &Coord, b: &Coord) -> f64 {
    let lat0 = p.lat_deg.to_radians();
    let scale = lat0.cos();
    let project = |c: &Coord| {
        (
            (c.lon_deg - p.lon_deg).to_radians() * scale * EARTH_RADIUS_M,
            (c.lat_deg - p.lat_deg).to_radians() * EARTH_RADIUS_M,
        )
    };
    let (ax, ay) = project(a);
    let (bx, by) = project(b);
    // p projects to the origin.
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((-ax * dx - ay * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (cx * cx + cy * cy).sqrt()
}

/// The global road network `G_T`: an immutable weighted directed graph.
///
/// Node coordinates are optional; they are only needed when obstruction
/// events must be matched to the nearest link and when the assessment
/// radius is evaluated geometrically.
#[derive(Debug, Clone, Default)]
pub struct TrafficGraph {
    links: BTreeMap<LinkId, Link>,
    nodes: BTreeSet<NodeId>,
    coords: BTreeMap<NodeId, Coord>,
    /// Links keyed by their tail node (`from`).
    out_by_node: BTreeMap<NodeId, Vec<LinkId>>,
    /// Links keyed by their head node (`to`).
    in_by_node: BTreeMap<NodeId, Vec<LinkId>>,
}

impl TrafficGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from a list of links. Endpoints are declared
    /// implicitly. Parallel duplicate links are rejected.
    pub fn from_links(links: impl IntoIterator<Item = Link>) -> Result<Self, NetworkError> {
        let mut graph = TrafficGraph::new();
        for link in links {
            graph.add_link(link)?;
        }
        Ok(graph)
    }

    pub fn add_link(&mut self, link: Link) -> Result<(), NetworkError> {
        link.validate()?;
        let id = link.id();
        if self.links.contains_key(&id) {
            return Err(NetworkError::DuplicateLink(id));
        }
        self.nodes.insert(link.from.clone());
        self.nodes.insert(link.to.clone());
        self.out_by_node
            .entry(link.from.clone())
            .or_default()
            .push(id.clone());
        self.in_by_node
            .entry(link.to.clone())
            .or_default()
            .push(id.clone());
        self.links.insert(id, link);
        Ok(())
    }

    pub fn set_coord(&mut self, node: NodeId, coord: Coord) -> Result<(), NetworkError> {
        if !self.nodes.contains(&node) {
            return Err(NetworkError::UnknownNode(node));
        }
        self.coords.insert(node, coord);
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn contains_node(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn contains_link(&self, link: &LinkId) -> bool {
        self.links.contains_key(link)
    }

    pub fn link(&self, id: &LinkId) -> Result<&Link, NetworkError> {
        self.links
            .get(id)
            .ok_or_else(|| NetworkError::UnknownLink(id.clone()))
    }

    /// Links in deterministic (lexicographic) order.
    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link_ids(&self) -> impl Iterator<Item = &LinkId> {
        self.links.keys()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn coord(&self, node: &NodeId) -> Option<&Coord> {
        self.coords.get(node)
    }

    pub fn has_coords(&self) -> bool {
        !self.coords.is_empty()
    }

    /// Coordinates of both endpoints of `link`, or an error if either is
    /// missing.
    pub fn link_coords(&self, link: &LinkId) -> Result<(Coord, Coord), NetworkError> {
        let a = self
            .coords
            .get(&link.from)
            .ok_or_else(|| NetworkError::MissingCoordinates(link.from.clone()))?;
        let b = self
            .coords
            .get(&link.to)
            .ok_or_else(|| NetworkError::MissingCoordinates(link.to.clone()))?;
        Ok((*a, *b))
    }

    /// Links that point to `link`, i.e. links whose head equals `link.from`.
    pub fn in_neighbors(&self, link: &LinkId) -> Result<Vec<LinkId>, NetworkError> {
        if !self.links.contains_key(link) {
            return Err(NetworkError::UnknownLink(link.clone()));
        }
        Ok(self
            .in_by_node
            .get(&link.from)
            .map(|v| v.to_vec())
            .unwrap_or_default())
    }

    /// Links that start from `link`, i.e. links whose tail equals `link.to`.
    pub fn out_neighbors(&self, link: &LinkId) -> Result<Vec<LinkId>, NetworkError> {
        if !self.links.contains_key(link) {
            return Err(NetworkError::UnknownLink(link.clone()));
        }
        Ok(self
            .out_by_node
            .get(&link.to)
            .map(|v| v.to_vec())
            .unwrap_or_default())
    }

    /// All links leaving `node`.
    pub fn links_from(&self, node: &NodeId) -> &[LinkId] {
        self.out_by_node
            .get(node)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Converts a node path into the corresponding link path.
    pub fn node_path_to_links(&self, nodes: &[NodeId]) -> Result<Vec<LinkId>, NetworkError> {
        let mut links = Vec::new();
        for pair in nodes.windows(2) {
            let id = LinkId {
                from: pair[0].clone(),
                to: pair[1].clone(),
            };
            if !self.links.contains_key(&id) {
                return Err(NetworkError::UnknownLink(id));
            }
            links.push(id);
        }
        Ok(links)
    }

    /// Parses an edge-list network description.
    ///
    /// One link per line: `from to length_m free_speed_mps capacity`,
    /// whitespace or comma separated; `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self, NetworkError> {
        Self::parse_edge_list_named(text, "<edge-list>")
    }

    fn parse_edge_list_named(text: &str, file: &str) -> Result<Self, NetworkError> {
        let mut graph = TrafficGraph::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .collect();
            let err = |message: String| NetworkError::Parse {
                file: file.to_string(),
                line: idx + 1,
                message,
            };
            if fields.len() != 5 {
                return Err(err(format!(
                    "expected 5 fields (from to length free_speed capacity), got {}",
                    fields.len()
                )));
            }
            let length_m: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad length `{}`", fields[2])))?;
            let free_speed_mps: f64 = fields[3]
                .parse()
                .map_err(|_| err(format!("bad free speed `{}`", fields[3])))?;
            let capacity: u32 = fields[4]
                .parse()
                .map_err(|_| err(format!("bad capacity `{}`", fields[4])))?;
            graph.add_link(Link {
                from: NodeId::new(fields[0]),
                to: NodeId::new(fields[1]),
                length_m,
                free_speed_mps,
                capacity,
            })?;
        }
        Ok(graph)
    }

    /// Parses a node coordinate file: `node_id lat_deg lon_deg` per line.
    pub fn parse_node_coords(&mut self, text: &str) -> Result<(), NetworkError> {
        self.parse_node_coords_named(text, "<node-coords>")
    }

    fn parse_node_coords_named(&mut self, text: &str, file: &str) -> Result<(), NetworkError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .collect();
            let err = |message: String| NetworkError::Parse {
                file: file.to_string(),
                line: idx + 1,
                message,
            };
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 fields (node lat lon), got {}",
                    fields.len()
                )));
            }
            let lat: f64 = fields[1]
                .parse()
                .map_err(|_| err(format!("bad latitude `{}`", fields[1])))?;
            let lon: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad longitude `{}`", fields[2])))?;
            let coord = Coord::new(lat, lon);
            if !coord.is_valid() {
                return Err(err(format!("coordinate out of range ({lat}, {lon})")));
            }
            self.set_coord(NodeId::new(fields[0]), coord)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list_named(&text, &path.display().to_string())
    }

    pub fn load_node_coords(&mut self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        self.parse_node_coords_named(&text, &path.display().to_string())
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Per-vehicle trip history `G^(i)`: usage weights over links of the parent
/// graph. The weight of a link is the number of recorded trips that
/// traversed it.
#[derive(Debug, Clone)]
pub struct HistoryGraph {
    vehicle: VehicleId,
    weights: BTreeMap<LinkId, u64>,
}

impl HistoryGraph {
    pub fn new(vehicle: VehicleId) -> Self {
        HistoryGraph {
            vehicle,
            weights: BTreeMap::new(),
        }
    }

    pub fn vehicle(&self) -> &VehicleId {
        &self.vehicle
    }

    /// Usage weight of `link`; 0 when the link was never traversed.
    pub fn weight(&self, link: &LinkId) -> u64 {
        self.weights.get(link).copied().unwrap_or(0)
    }

    pub fn weighted_links(&self) -> impl Iterator<Item = (&LinkId, u64)> {
        self.weights.iter().map(|(l, w)| (l, *w))
    }

    /// Total number of link traversals recorded.
    pub fn total_traversals(&self) -> u64 {
        self.weights.values().sum()
    }

    /// Links of the history leaving `node`, with their weights.
    pub fn links_from(&self, node: &NodeId) -> Vec<(LinkId, u64)> {
        // Range over the (node, *) prefix of the ordered map.
        self.weights
            .iter()
            .filter(|(l, _)| &l.from == node)
            .map(|(l, w)| (l.clone(), *w))
            .collect()
    }

    /// Records one trip: every link on the path gets its weight incremented.
    ///
    /// The trip must be a connected path (each link's head is the next
    /// link's tail) over links of `graph`; otherwise the history is left
    /// unchanged.
    pub fn record_trip(
        &mut self,
        graph: &TrafficGraph,
        trip: &[LinkId],
    ) -> Result<(), NetworkError> {
        for link in trip {
            if !graph.contains_link(link) {
                return Err(NetworkError::UnknownLink(link.clone()));
            }
        }
        for pair in trip.windows(2) {
            if pair[0].to != pair[1].from {
                return Err(NetworkError::DisconnectedTrip {
                    prev: pair[0].clone(),
                    next: pair[1].clone(),
                });
            }
        }
        for link in trip {
            *self.weights.entry(link.clone()).or_insert(0) += 1;
        }
        Ok(())
    }
}

/// Occupancy of a single link at a tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkState {
    pub link: LinkId,
    pub occupancy: u32,
    pub tick: u64,
}

/// Mutable per-tick occupancy counters, kept outside the immutable graph.
///
/// Only the simulation engine writes to the table; within a tick every
/// reader sees the same frozen snapshot.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTable {
    tick: u64,
    counts: BTreeMap<LinkId, u32>,
}

impl OccupancyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn occupancy(&self, link: &LinkId) -> u32 {
        self.counts.get(link).copied().unwrap_or(0)
    }

    pub fn enter(&mut self, link: &LinkId) {
        *self.counts.entry(link.clone()).or_insert(0) += 1;
    }

    pub fn leave(&mut self, link: &LinkId) {
        let count = self
            .counts
            .get_mut(link)
            .unwrap_or_else(|| panic!("leave on empty link {link}"));
        *count -= 1;
        if *count == 0 {
            self.counts.remove(link);
        }
    }

    pub fn state(&self, link: &LinkId) -> LinkState {
        LinkState {
            link: link.clone(),
            occupancy: self.occupancy(link),
            tick: self.tick,
        }
    }

    /// Total number of vehicles currently on any link.
    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }
}
