//! Obstruction event messages, nearest-link matching and the obstruction
//! registry.
//!
//! Events arrive as fixed-grammar text lines. An open message is
//!
//! ```text
//! New road incident: <location>. LatLon: <lat>,<lon>. Maxcapacity: <n>. Maxspeed: <v> [km/h]. Time: <ts>.
//! ```
//!
//! and a close message is
//!
//! ```text
//! Road incident closed: <location>. Time: <ts>.
//! ```
//!
//! Field order is fixed; whitespace after the field colons is tolerated;
//! trailing text is rejected. Locations must not contain a period since the
//! period terminates the field.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use chrono::{DateTime, NaiveDateTime, Utc};
use thiserror::Error;

use crate::network::{point_segment_distance_m, Coord, LinkId, NetworkError, TrafficGraph};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Default assessment radius around an obstruction, in meters.
pub const DEFAULT_ASSESSMENT_RADIUS_M: f64 = 575.0;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("parse error at token `{token}`: {message}")]
    Parse {
        token: &'static str,
        message: String,
    },
    #[error("invalid event field `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("an active obstruction already exists on link {0}")]
    DuplicateObstruction(LinkId),
    #[error("an active obstruction already exists for location `{0}`")]
    DuplicateLocation(String),
    #[error("no active obstruction for location `{0}`")]
    UnknownIncident(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn parse_err(token: &'static str, message: impl Into<String>) -> EventError {
    EventError::Parse {
        token,
        message: message.into(),
    }
}

/// An incident-opening message.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidentOpen {
    pub location: String,
    pub latitude: f64,
    pub longitude: f64,
    pub max_capacity: u32,
    pub max_speed_kmh: f64,
    pub timestamp: DateTime<Utc>,
}

/// An incident-closing message.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidentClose {
    pub location: String,
    pub timestamp: DateTime<Utc>,
}

/// Either message kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Open(IncidentOpen),
    Close(IncidentClose),
}

impl Event {
    pub fn location(&self) -> &str {
        match self {
            Event::Open(o) => &o.location,
            Event::Close(c) => &c.location,
        }
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            Event::Open(o) => o.timestamp,
            Event::Close(c) => c.timestamp,
        }
    }
}

fn validate_location(location: &str) -> Result<(), EventError> {
    let invalid = |message: &str| EventError::Invalid {
        field: "location",
        message: message.to_string(),
    };
    if location.is_empty() {
        return Err(invalid("must be nonempty"));
    }
    if location.contains('.') {
        return Err(invalid("must not contain a period"));
    }
    if location.contains('\n') || location.contains('\r') {
        return Err(invalid("must be a single line"));
    }
    if location != location.trim() {
        return Err(invalid("must not start or end with whitespace"));
    }
    Ok(())
}

impl IncidentOpen {
    pub fn new(
        location: impl Into<String>,
        latitude: f64,
        longitude: f64,
        max_capacity: u32,
        max_speed_kmh: f64,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, EventError> {
        let location = location.into();
        validate_location(&location)?;
        let coord = Coord::new(latitude, longitude);
        if !coord.is_valid() {
            return Err(EventError::Invalid {
                field: "latlon",
                message: format!("coordinate out of range ({latitude}, {longitude})"),
            });
        }
        if max_capacity < 1 {
            return Err(EventError::Invalid {
                field: "capacity",
                message: "must be at least 1".to_string(),
            });
        }
        if !(max_speed_kmh.is_finite() && max_speed_kmh >= 0.0) {
            return Err(EventError::Invalid {
                field: "speed",
                message: "must be finite and nonnegative".to_string(),
            });
        }
        Ok(IncidentOpen {
            location,
            latitude,
            longitude,
            max_capacity,
            max_speed_kmh,
            timestamp,
        })
    }

    pub fn coord(&self) -> Coord {
        Coord::new(self.latitude, self.longitude)
    }
}

impl IncidentClose {
    pub fn new(location: impl Into<String>, timestamp: DateTime<Utc>) -> Result<Self, EventError> {
        let location = location.into();
        validate_location(&location)?;
        Ok(IncidentClose {
            location,
            timestamp,
        })
    }
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { rest: text }
    }

    fn skip_spaces(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn expect(&mut self, token: &'static str, literal: &str) -> Result<(), EventError> {
        match self.rest.strip_prefix(literal) {
            Some(rest) => {
                self.rest = rest;
                Ok(())
            }
            None => Err(parse_err(
                token,
                format!("expected `{literal}` at `{}`", truncate(self.rest)),
            )),
        }
    }

    /// Text up to (not including) the next period. The period is consumed.
    fn until_period(&mut self, token: &'static str) -> Result<&'a str, EventError> {
        match self.rest.find('.') {
            Some(pos) => {
                let field = &self.rest[..pos];
                self.rest = &self.rest[pos + 1..];
                Ok(field)
            }
            None => Err(parse_err(token, "missing terminating period")),
        }
    }

    /// A decimal number: optional sign, digits, optional fraction. Stops
    /// before a period that is not followed by a digit, so the sentence
    /// terminator is left in place.
    fn number(&mut self, token: &'static str) -> Result<f64, EventError> {
        let bytes = self.rest.as_bytes();
        let mut end = 0;
        if end < bytes.len() && (bytes[end] == b'-' || bytes[end] == b'+') {
            end += 1;
        }
        let int_start = end;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end == int_start {
            return Err(parse_err(
                token,
                format!("expected a number at `{}`", truncate(self.rest)),
            ));
        }
        if end < bytes.len() && bytes[end] == b'.' {
            let frac_start = end + 1;
            let mut frac_end = frac_start;
            while frac_end < bytes.len() && bytes[frac_end].is_ascii_digit() {
                frac_end += 1;
            }
            if frac_end > frac_start {
                end = frac_end;
            }
        }
        let text = &self.rest[..end];
        let value: f64 = text
            .parse()
            .map_err(|_| parse_err(token, format!("malformed number `{text}`")))?;
        self.rest = &self.rest[end..];
        Ok(value)
    }

    fn integer(&mut self, token: &'static str) -> Result<u32, EventError> {
        let bytes = self.rest.as_bytes();
        let mut end = 0;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end == 0 {
            return Err(parse_err(
                token,
                format!("expected an integer at `{}`", truncate(self.rest)),
            ));
        }
        let text = &self.rest[..end];
        // A fraction after the digits means the field is not an integer.
        if bytes.len() > end
            && bytes[end] == b'.'
            && bytes.len() > end + 1
            && bytes[end + 1].is_ascii_digit()
        {
            return Err(parse_err(
                token,
                format!("expected an integer, got `{text}.…`"),
            ));
        }
        let value: u32 = text
            .parse()
            .map_err(|_| parse_err(token, format!("integer `{text}` out of range")))?;
        self.rest = &self.rest[end..];
        Ok(value)
    }

    fn end(&mut self, token: &'static str) -> Result<(), EventError> {
        self.skip_spaces();
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(parse_err(
                token,
                format!("unexpected trailing text `{}`", truncate(self.rest)),
            ))
        }
    }
}

fn truncate(s: &str) -> String {
    let mut t: String = s.chars().take(24).collect();
    if t.len() < s.len() {
        t.push('…');
    }
    t
}

fn parse_location(cursor: &mut Cursor, token: &'static str) -> Result<String, EventError> {
    cursor.skip_spaces();
    let raw = cursor.until_period(token)?;
    let location = raw.trim_end_matches([' ', '\t']);
    if location.is_empty() {
        return Err(parse_err(token, "location must be nonempty"));
    }
    Ok(location.to_string())
}

fn parse_timestamp(cursor: &mut Cursor) -> Result<DateTime<Utc>, EventError> {
    cursor.expect("time", "Time:")?;
    cursor.skip_spaces();
    let raw = cursor.until_period("timestamp")?;
    let raw = raw.trim_end_matches([' ', '\t']);
    let naive = NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
        .map_err(|e| parse_err("timestamp", format!("`{raw}`: {e}")))?;
    Ok(naive.and_utc())
}

/// Parses one event message.
pub fn parse_event(text: &str) -> Result<Event, EventError> {
    let trimmed = text.trim();
    let mut cursor = Cursor::new(trimmed);
    if trimmed.starts_with("New road incident:") {
        cursor.expect("prefix", "New road incident:")?;
        let location = parse_location(&mut cursor, "location")?;
        cursor.skip_spaces();

        cursor.expect("latlon", "LatLon:")?;
        cursor.skip_spaces();
        let latitude = cursor.number("latitude")?;
        cursor.expect("latlon", ",")?;
        let longitude = cursor.number("longitude")?;
        if latitude.abs() > 90.0 {
            return Err(parse_err(
                "latitude",
                format!("{latitude} out of range [-90,90]"),
            ));
        }
        if longitude.abs() > 180.0 {
            return Err(parse_err(
                "longitude",
                format!("{longitude} out of range [-180,180]"),
            ));
        }
        cursor.expect("latlon", ".")?;
        cursor.skip_spaces();

        cursor.expect("capacity", "Maxcapacity:")?;
        cursor.skip_spaces();
        let max_capacity = cursor.integer("capacity")?;
        if max_capacity < 1 {
            return Err(parse_err("capacity", "must be at least 1"));
        }
        cursor.expect("capacity", ".")?;
        cursor.skip_spaces();

        cursor.expect("speed", "Maxspeed:")?;
        cursor.skip_spaces();
        let max_speed_kmh = cursor.number("speed")?;
        if max_speed_kmh < 0.0 {
            return Err(parse_err("speed", "must be nonnegative"));
        }
        cursor.skip_spaces();
        cursor.expect("speed", "[km/h]")?;
        cursor.expect("speed", ".")?;
        cursor.skip_spaces();

        let timestamp = parse_timestamp(&mut cursor)?;
        cursor.end("trailing")?;

        Ok(Event::Open(
            IncidentOpen::new(
                location,
                latitude,
                longitude,
                max_capacity,
                max_speed_kmh,
                timestamp,
            )
            .map_err(|e| match e {
                EventError::Invalid { field, message } => EventError::Parse {
                    token: field,
                    message,
                },
                other => other,
            })?,
        ))
    } else if trimmed.starts_with("Road incident closed:") {
        cursor.expect("prefix", "Road incident closed:")?;
        let location = parse_location(&mut cursor, "location")?;
        cursor.skip_spaces();
        let timestamp = parse_timestamp(&mut cursor)?;
        cursor.end("trailing")?;
        Ok(Event::Close(IncidentClose {
            location,
            timestamp,
        }))
    } else {
        Err(parse_err(
            "prefix",
            format!("not an incident message: `{}`", truncate(trimmed)),
        ))
    }
}

/// Formats an event in its canonical message form. Coordinates are printed
/// with six decimals; `parse_event` reproduces the event exactly.
pub fn format_event(event: &Event) -> String {
    match event {
        Event::Open(o) => format!(
            "New road incident: {}. LatLon: {:.6},{:.6}. Maxcapacity: {}. Maxspeed: {} [km/h]. Time: {}.",
            o.location,
            o.latitude,
            o.longitude,
            o.max_capacity,
            o.max_speed_kmh,
            o.timestamp.format(TIMESTAMP_FORMAT),
        ),
        Event::Close(c) => format!(
            "Road incident closed: {}. Time: {}.",
            c.location,
            c.timestamp.format(TIMESTAMP_FORMAT),
        ),
    }
}

/// Finds the link nearest to a point: minimal distance from the point to
/// the segment between the link's endpoint coordinates, ties broken by link
/// order. Every link endpoint must carry coordinates.
pub fn match_link(graph: &TrafficGraph, lat: f64, lon: f64) -> Result<LinkId, EventError> {
    let point = Coord::new(lat, lon);
    let mut best: Option<(f64, LinkId)> = None;
    for id in graph.link_ids() {
        let (a, b) = graph.link_coords(id)?;
        let d = point_segment_distance_m(&point, &a, &b);
        let replace = match &best {
            None => true,
            Some((bd, _)) => d < *bd,
        };
        if replace {
            best = Some((d, id.clone()));
        }
    }
    match best {
        Some((_, id)) => Ok(id),
        None => Err(EventError::Network(NetworkError::MissingCoordinates(
            crate::network::NodeId::new("<empty graph>"),
        ))),
    }
}

/// Whether an obstruction was scheduled (regular) or unforeseen (irregular).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObstructionKind {
    #[default]
    Irregular,
    Regular,
}

impl fmt::Display for ObstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObstructionKind::Irregular => f.write_str("irregular"),
            ObstructionKind::Regular => f.write_str("regular"),
        }
    }
}

/// A capacity reduction on one link, with its lifecycle.
#[derive(Debug, Clone)]
pub struct Obstruction {
    pub link: LinkId,
    pub location: String,
    /// Reduced capacity: the controller's reference value.
    pub capacity: u32,
    pub reduced_speed_kmh: f64,
    pub kind: ObstructionKind,
    pub radius_m: f64,
    pub active: bool,
    pub opened_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
}

impl Obstruction {
    pub fn reduced_speed_mps(&self) -> f64 {
        self.reduced_speed_kmh / 3.6
    }
}

/// Tracks open and past obstructions. At most one active obstruction may
/// exist per link and per location.
#[derive(Debug, Clone)]
pub struct ObstructionRegistry {
    default_kind: ObstructionKind,
    default_radius_m: f64,
    entries: Vec<Obstruction>,
    active_by_link: BTreeMap<LinkId, usize>,
    active_by_location: BTreeMap<String, usize>,
}

impl Default for ObstructionRegistry {
    fn default() -> Self {
        ObstructionRegistry {
            default_kind: ObstructionKind::Irregular,
            default_radius_m: DEFAULT_ASSESSMENT_RADIUS_M,
            entries: Vec::new(),
            active_by_link: BTreeMap::new(),
            active_by_location: BTreeMap::new(),
        }
    }
}

impl ObstructionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_defaults(kind: ObstructionKind, radius_m: f64) -> Self {
        ObstructionRegistry {
            default_kind: kind,
            default_radius_m: radius_m,
            ..Self::default()
        }
    }

    /// Applies a parsed event with the registry defaults for kind and radius.
    pub fn apply_event(
        &mut self,
        event: &Event,
        graph: &TrafficGraph,
    ) -> Result<&Obstruction, EventError> {
        match event {
            Event::Open(open) => {
                self.apply_open(open, graph, self.default_kind, self.default_radius_m)
            }
            Event::Close(close) => self.apply_close(close),
        }
    }

    /// Opens an obstruction on the link nearest to the incident coordinates.
    pub fn apply_open(
        &mut self,
        open: &IncidentOpen,
        graph: &TrafficGraph,
        kind: ObstructionKind,
        radius_m: f64,
    ) -> Result<&Obstruction, EventError> {
        let link = match_link(graph, open.latitude, open.longitude)?;
        if self.active_by_link.contains_key(&link) {
            return Err(EventError::DuplicateObstruction(link));
        }
        if self.active_by_location.contains_key(&open.location) {
            return Err(EventError::DuplicateLocation(open.location.clone()));
        }
        let obstruction = Obstruction {
            link: link.clone(),
            location: open.location.clone(),
            capacity: open.max_capacity,
            reduced_speed_kmh: open.max_speed_kmh,
            kind,
            radius_m,
            active: true,
            opened_at: open.timestamp,
            closed_at: None,
        };
        let idx = self.entries.len();
        self.entries.push(obstruction);
        self.active_by_link.insert(link, idx);
        self.active_by_location.insert(open.location.clone(), idx);
        Ok(&self.entries[idx])
    }

    /// Closes the active obstruction registered for the incident's location.
    pub fn apply_close(&mut self, close: &IncidentClose) -> Result<&Obstruction, EventError> {
        let idx = self
            .active_by_location
            .remove(&close.location)
            .ok_or_else(|| EventError::UnknownIncident(close.location.clone()))?;
        let entry = &mut self.entries[idx];
        self.active_by_link.remove(&entry.link);
        entry.active = false;
        entry.closed_at = Some(close.timestamp);
        Ok(&self.entries[idx])
    }

    /// Active obstructions in link order.
    pub fn active(&self) -> impl Iterator<Item = &Obstruction> {
        self.active_by_link.values().map(|&idx| &self.entries[idx])
    }

    pub fn active_on(&self, link: &LinkId) -> Option<&Obstruction> {
        self.active_by_link.get(link).map(|&idx| &self.entries[idx])
    }

    pub fn has_active(&self) -> bool {
        !self.active_by_link.is_empty()
    }

    /// All obstructions ever registered, in registration order.
    pub fn all(&self) -> &[Obstruction] {
        &self.entries
    }

    /// CSV dump: `link,capacity,speed_kmh,kind,opened_at,closed_at`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("link,capacity,speed_kmh,kind,opened_at,closed_at\n");
        for o in &self.entries {
            let closed = o
                .closed_at
                .map(|t| t.format(TIMESTAMP_FORMAT).to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                o.link,
                o.capacity,
                o.reduced_speed_kmh,
                o.kind,
                o.opened_at.format(TIMESTAMP_FORMAT),
                closed
            );
        }
        out
    }
}
