//! Directed road network model: junctions, homogeneous links and turn
//! movements, plus validation and free-flow routing.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Junction identifier.
    NodeId
);
id_type!(
    /// Link identifier.
    LinkId
);
id_type!(
    /// Turn movement identifier.
    MovementId
);

/// Functional road class, named after the OSM `highway` value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadClass(pub String);

impl RoadClass {
    pub fn new(name: impl Into<String>) -> Self {
        RoadClass(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for RoadClass {
    fn default() -> Self {
        RoadClass::new("residential")
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub lon: f64,
    pub lat: f64,
    pub signalized: bool,
    pub name: Option<String>,
}

impl NodeRecord {
    pub fn new(id: u64, lon: f64, lat: f64) -> Self {
        NodeRecord {
            id: NodeId(id),
            lon,
            lat,
            signalized: false,
            name: None,
        }
    }

    pub fn signalized(mut self) -> Self {
        self.signalized = true;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn check(&self) -> Result<(), NetError> {
        let ok = (-180.0..=180.0).contains(&self.lon) && (-90.0..=90.0).contains(&self.lat);
        if ok {
            Ok(())
        } else {
            Err(NetError::CoordinateOutOfRange {
                node: self.id,
                lon: self.lon,
                lat: self.lat,
            })
        }
    }
}

/// A homogeneous road segment with triangular fundamental-diagram parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkRecord {
    pub id: LinkId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub length_m: f64,
    pub free_flow_speed_mps: f64,
    pub lanes: u32,
    pub sat_flow_per_lane_vps: f64,
    pub jam_density_per_lane_vpm: f64,
    /// Explicit backward wave speed; derived from the fundamental diagram when absent.
    pub backward_wave_speed_override: Option<f64>,
    pub road_class: RoadClass,
}

impl LinkRecord {
    /// Creates a link with default saturation flow, jam density and class.
    pub fn new(id: u64, from: u64, to: u64, length_m: f64, speed_mps: f64, lanes: u32) -> Self {
        LinkRecord {
            id: LinkId(id),
            from_node: NodeId(from),
            to_node: NodeId(to),
            length_m,
            free_flow_speed_mps: speed_mps,
            lanes,
            sat_flow_per_lane_vps: defaults::SAT_FLOW_PER_LANE_VPS,
            jam_density_per_lane_vpm: defaults::JAM_DENSITY_PER_LANE_VPM,
            backward_wave_speed_override: None,
            road_class: RoadClass::default(),
        }
    }

    pub fn with_sat_flow(mut self, vps_per_lane: f64) -> Self {
        self.sat_flow_per_lane_vps = vps_per_lane;
        self
    }

    pub fn with_jam_density(mut self, vpm_per_lane: f64) -> Self {
        self.jam_density_per_lane_vpm = vpm_per_lane;
        self
    }

    pub fn with_backward_wave_speed(mut self, mps: f64) -> Self {
        self.backward_wave_speed_override = Some(mps);
        self
    }

    pub fn with_class(mut self, class: RoadClass) -> Self {
        self.road_class = class;
        self
    }

    /// Travel time at free-flow speed.
    pub fn free_flow_time(&self) -> f64 {
        self.length_m / self.free_flow_speed_mps
    }

    /// Vehicles the link holds at jam density. Real-valued.
    pub fn storage_capacity(&self) -> f64 {
        self.length_m * self.lanes as f64 * self.jam_density_per_lane_vpm
    }

    /// Backward (congestion) wave speed: `q / (k_j - q / v_f)` per lane unless overridden.
    pub fn backward_wave_speed(&self) -> f64 {
        match self.backward_wave_speed_override {
            Some(w) => w,
            None => {
                let q = self.sat_flow_per_lane_vps;
                q / (self.jam_density_per_lane_vpm - q / self.free_flow_speed_mps)
            }
        }
    }

    /// Discharge capacity of the whole link cross-section (veh/s).
    pub fn capacity_vps(&self) -> f64 {
        self.lanes as f64 * self.sat_flow_per_lane_vps
    }

    /// Checks the per-link invariants that do not depend on the rest of the network.
    pub fn check(&self) -> Result<(), NetError> {
        let link = self.id;
        if self.from_node == self.to_node {
            return Err(NetError::SelfLoop(link));
        }
        let positive = [
            ("length_m", self.length_m),
            ("free_flow_speed_mps", self.free_flow_speed_mps),
            ("sat_flow_per_lane_vps", self.sat_flow_per_lane_vps),
            ("jam_density_per_lane_vpm", self.jam_density_per_lane_vpm),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(NetError::NonPositive { link, field, value });
            }
        }
        if let Some(w) = self.backward_wave_speed_override {
            if !(w > 0.0 && w.is_finite()) {
                return Err(NetError::NonPositive {
                    link,
                    field: "backward_wave_speed_mps",
                    value: w,
                });
            }
        }
        if self.lanes == 0 {
            return Err(NetError::NonPositive {
                link,
                field: "lanes",
                value: 0.0,
            });
        }
        if self.length_m < 1.0 {
            return Err(NetError::TooShort {
                link,
                length_m: self.length_m,
            });
        }
        let bound = self.free_flow_speed_mps * self.jam_density_per_lane_vpm;
        if self.sat_flow_per_lane_vps >= bound {
            return Err(NetError::FundamentalDiagram {
                link,
                sat_flow: self.sat_flow_per_lane_vps,
                bound,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnMovement {
    pub id: MovementId,
    pub in_link: LinkId,
    pub out_link: LinkId,
    /// Multiplier on the in-link discharge capacity for this turn, in (0, 1].
    pub capacity_factor: f64,
}

impl TurnMovement {
    pub fn new(id: u64, in_link: u64, out_link: u64) -> Self {
        TurnMovement {
            id: MovementId(id),
            in_link: LinkId(in_link),
            out_link: LinkId(out_link),
            capacity_factor: defaults::CAPACITY_FACTOR,
        }
    }

    pub fn with_capacity_factor(mut self, factor: f64) -> Self {
        self.capacity_factor = factor;
        self
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate link id {0}")]
    DuplicateLink(LinkId),
    #[error("duplicate movement id {0}")]
    DuplicateMovement(MovementId),
    #[error("node {node} has coordinates out of range (lon {lon}, lat {lat})")]
    CoordinateOutOfRange { node: NodeId, lon: f64, lat: f64 },
    #[error("link {link} references missing node {node}")]
    MissingNode { link: LinkId, node: NodeId },
    #[error("link {0} is a self-loop")]
    SelfLoop(LinkId),
    #[error("link {link}: {field} must be positive and finite, got {value}")]
    NonPositive {
        link: LinkId,
        field: &'static str,
        value: f64,
    },
    #[error("link {link}: length {length_m} m is below the 1 m minimum")]
    TooShort { link: LinkId, length_m: f64 },
    #[error(
        "link {link}: saturation flow {sat_flow} veh/s/lane must be below speed x jam density = {bound}"
    )]
    FundamentalDiagram {
        link: LinkId,
        sat_flow: f64,
        bound: f64,
    },
    #[error("movement {movement} references missing link {link}")]
    MissingLink { movement: MovementId, link: LinkId },
    #[error("movement {movement}: link {in_link} does not end where link {out_link} starts")]
    JunctionMismatch {
        movement: MovementId,
        in_link: LinkId,
        out_link: LinkId,
    },
    #[error("movement {movement} duplicates the turn {in_link} -> {out_link}")]
    DuplicateTurn {
        movement: MovementId,
        in_link: LinkId,
        out_link: LinkId,
    },
    #[error("movement {movement}: capacity factor {factor} outside (0, 1]")]
    CapacityFactor { movement: MovementId, factor: f64 },
    #[error("invalid network document: {0}")]
    Json(#[from] serde_json::Error),
}

/// One problem found by [`NetworkGraph::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DanglingEndpoint { link: LinkId, node: NodeId },
    InvalidNode { node: NodeId, reason: String },
    InvalidLink { link: LinkId, reason: String },
    StorageBelowOne { link: LinkId, storage: f64 },
    IsolatedNode { node: NodeId },
    DanglingMovementLink { movement: MovementId, link: LinkId },
    MismatchedJunction { movement: MovementId, in_link: LinkId, out_link: LinkId },
    DuplicateTurn { movement: MovementId, in_link: LinkId, out_link: LinkId },
    InvalidCapacityFactor { movement: MovementId, factor: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingEndpoint { link, node } => {
                write!(f, "link {link} references absent node {node}")
            }
            Violation::InvalidNode { node, reason } => write!(f, "node {node}: {reason}"),
            Violation::InvalidLink { link, reason } => write!(f, "link {link}: {reason}"),
            Violation::StorageBelowOne { link, storage } => {
                write!(f, "link {link}: storage < 1 ({storage} vehicles)")
            }
            Violation::IsolatedNode { node } => write!(f, "node {node} has no incident links"),
            Violation::DanglingMovementLink { movement, link } => {
                write!(f, "movement {movement} references absent link {link}")
            }
            Violation::MismatchedJunction {
                movement,
                in_link,
                out_link,
            } => write!(
                f,
                "movement {movement}: links {in_link} and {out_link} do not meet at a junction"
            ),
            Violation::DuplicateTurn {
                movement,
                in_link,
                out_link,
            } => write!(
                f,
                "movement {movement} duplicates turn {in_link} -> {out_link}"
            ),
            Violation::InvalidCapacityFactor { movement, factor } => {
                write!(f, "movement {movement}: capacity factor {factor} outside (0, 1]")
            }
        }
    }
}

/// A route through the network with its free-flow cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub links: Vec<LinkId>,
    pub cost_s: f64,
}

/// Directed road network. Maps are keyed by id so iteration is always in
/// ascending id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkGraph {
    nodes: BTreeMap<NodeId, NodeRecord>,
    links: BTreeMap<LinkId, LinkRecord>,
    movements: BTreeMap<MovementId, TurnMovement>,
}

impl NetworkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a network without cross-reference checks. Duplicate ids are
    /// still rejected; everything else is left to [`NetworkGraph::validate`].
    pub fn from_parts(
        nodes: impl IntoIterator<Item = NodeRecord>,
        links: impl IntoIterator<Item = LinkRecord>,
        movements: impl IntoIterator<Item = TurnMovement>,
    ) -> Result<Self, NetError> {
        let mut net = NetworkGraph::new();
        for n in nodes {
            if net.nodes.insert(n.id, n.clone()).is_some() {
                return Err(NetError::DuplicateNode(n.id));
            }
        }
        for l in links {
            if net.links.insert(l.id, l.clone()).is_some() {
                return Err(NetError::DuplicateLink(l.id));
            }
        }
        for m in movements {
            if net.movements.insert(m.id, m.clone()).is_some() {
                return Err(NetError::DuplicateMovement(m.id));
            }
        }
        Ok(net)
    }

    pub fn add_node(&mut self, node: NodeRecord) -> Result<(), NetError> {
        if self.nodes.contains_key(&node.id) {
            return Err(NetError::DuplicateNode(node.id));
        }
        node.check()?;
        self.nodes.insert(node.id, node);
        Ok(())
    }

    pub fn add_link(&mut self, link: LinkRecord) -> Result<(), NetError> {
        if self.links.contains_key(&link.id) {
            return Err(NetError::DuplicateLink(link.id));
        }
        for node in [link.from_node, link.to_node] {
            if !self.nodes.contains_key(&node) {
                return Err(NetError::MissingNode {
                    link: link.id,
                    node,
                });
            }
        }
        link.check()?;
        self.links.insert(link.id, link);
        Ok(())
    }

    pub fn add_movement(&mut self, movement: TurnMovement) -> Result<(), NetError> {
        let id = movement.id;
        if self.movements.contains_key(&id) {
            return Err(NetError::DuplicateMovement(id));
        }
        let in_link = self.link(movement.in_link).ok_or(NetError::MissingLink {
            movement: id,
            link: movement.in_link,
        })?;
        let out_link = self.link(movement.out_link).ok_or(NetError::MissingLink {
            movement: id,
            link: movement.out_link,
        })?;
        if in_link.to_node != out_link.from_node {
            return Err(NetError::JunctionMismatch {
                movement: id,
                in_link: movement.in_link,
                out_link: movement.out_link,
            });
        }
        if self
            .movement_between(movement.in_link, movement.out_link)
            .is_some()
        {
            return Err(NetError::DuplicateTurn {
                movement: id,
                in_link: movement.in_link,
                out_link: movement.out_link,
            });
        }
        if !(movement.capacity_factor > 0.0 && movement.capacity_factor <= 1.0) {
            return Err(NetError::CapacityFactor {
                movement: id,
                factor: movement.capacity_factor,
            });
        }
        self.movements.insert(id, movement);
        Ok(())
    }

    /// Adds a movement for every in/out link pair at every node, optionally
    /// skipping U-turns. Ids continue after the current maximum.
    pub fn add_all_movements(&mut self, allow_u_turns: bool) {
        let mut next = self.movements.keys().last().map_or(1, |m| m.0 + 1);
        let existing: BTreeSet<(LinkId, LinkId)> = self
            .movements
            .values()
            .map(|m| (m.in_link, m.out_link))
            .collect();
        let mut pairs = Vec::new();
        for inl in self.links.values() {
            for outl in self.links.values() {
                if outl.from_node != inl.to_node || outl.id == inl.id {
                    continue;
                }
                if !allow_u_turns && outl.to_node == inl.from_node {
                    continue;
                }
                if !existing.contains(&(inl.id, outl.id)) {
                    pairs.push((inl.id, outl.id));
                }
            }
        }
        for (i, o) in pairs {
            let m = TurnMovement {
                id: MovementId(next),
                in_link: i,
                out_link: o,
                capacity_factor: defaults::CAPACITY_FACTOR,
            };
            self.movements.insert(m.id, m);
            next += 1;
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkRecord> {
        self.links.get(&id)
    }

    pub fn movement(&self, id: MovementId) -> Option<&TurnMovement> {
        self.movements.get(&id)
    }

    pub(crate) fn movement_mut(&mut self, id: MovementId) -> Option<&mut TurnMovement> {
        self.movements.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkRecord> {
        self.links.values()
    }

    pub fn movements(&self) -> impl Iterator<Item = &TurnMovement> {
        self.movements.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn movement_count(&self) -> usize {
        self.movements.len()
    }

    /// The movement joining `in_link` to `out_link`, if one exists.
    pub fn movement_between(&self, in_link: LinkId, out_link: LinkId) -> Option<&TurnMovement> {
        self.movements
            .values()
            .find(|m| m.in_link == in_link && m.out_link == out_link)
    }

    /// Movements whose in-link ends at `node`.
    pub fn movements_at(&self, node: NodeId) -> impl Iterator<Item = &TurnMovement> {
        self.movements.values().filter(move |m| {
            self.links
                .get(&m.in_link)
                .is_some_and(|l| l.to_node == node)
        })
    }

    pub fn out_links(&self, node: NodeId) -> impl Iterator<Item = &LinkRecord> {
        self.links.values().filter(move |l| l.from_node == node)
    }

    pub fn in_links(&self, node: NodeId) -> impl Iterator<Item = &LinkRecord> {
        self.links.values().filter(move |l| l.to_node == node)
    }

    pub(crate) fn remove_node(&mut self, id: NodeId) {
        self.nodes.remove(&id);
    }

    pub(crate) fn remove_link(&mut self, id: LinkId) {
        self.links.remove(&id);
    }

    pub(crate) fn remove_movement(&mut self, id: MovementId) {
        self.movements.remove(&id);
    }

    pub(crate) fn insert_link_unchecked(&mut self, link: LinkRecord) {
        self.links.insert(link.id, link);
    }

    /// Lists every structural problem. An empty report means the network can
    /// be simulated.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for n in self.nodes.values() {
            if let Err(e) = n.check() {
                out.push(Violation::InvalidNode {
                    node: n.id,
                    reason: e.to_string(),
                });
            }
        }
        let mut touched = BTreeSet::new();
        for l in self.links.values() {
            for node in [l.from_node, l.to_node] {
                if self.nodes.contains_key(&node) {
                    touched.insert(node);
                } else {
                    out.push(Violation::DanglingEndpoint { link: l.id, node });
                }
            }
            if let Err(e) = l.check() {
                out.push(Violation::InvalidLink {
                    link: l.id,
                    reason: e.to_string(),
                });
            }
            let storage = l.storage_capacity();
            if storage < 1.0 {
                out.push(Violation::StorageBelowOne {
                    link: l.id,
                    storage,
                });
            }
        }
        for n in self.nodes.keys() {
            if !touched.contains(n) {
                out.push(Violation::IsolatedNode { node: *n });
            }
        }
        let mut seen = BTreeMap::new();
        for m in self.movements.values() {
            let mut ends = Vec::with_capacity(2);
            for link in [m.in_link, m.out_link] {
                match self.links.get(&link) {
                    Some(l) => ends.push(l),
                    None => out.push(Violation::DanglingMovementLink {
                        movement: m.id,
                        link,
                    }),
                }
            }
            if let [a, b] = ends[..] {
                if a.to_node != b.from_node {
                    out.push(Violation::MismatchedJunction {
                        movement: m.id,
                        in_link: m.in_link,
                        out_link: m.out_link,
                    });
                }
            }
            if seen.insert((m.in_link, m.out_link), m.id).is_some() {
                out.push(Violation::DuplicateTurn {
                    movement: m.id,
                    in_link: m.in_link,
                    out_link: m.out_link,
                });
            }
            if !(m.capacity_factor > 0.0 && m.capacity_factor <= 1.0) {
                out.push(Violation::InvalidCapacityFactor {
                    movement: m.id,
                    factor: m.capacity_factor,
                });
            }
        }
        out
    }

    /// Outgoing turns per link, sorted by out-link id.
    pub fn successors(&self) -> BTreeMap<LinkId, Vec<LinkId>> {
        let mut succ: BTreeMap<LinkId, Vec<LinkId>> = BTreeMap::new();
        for m in self.movements.values() {
            succ.entry(m.in_link).or_default().push(m.out_link);
        }
        for v in succ.values_mut() {
            v.sort();
        }
        succ
    }

    /// Minimum free-flow-time route from `origin` to `dest` that only uses
    /// existing turn movements. Equal-cost routes are broken by the
    /// lexicographically smallest link-id sequence. `None` when unreachable.
    pub fn shortest_path(&self, origin: NodeId, dest: NodeId) -> Option<Path> {
        self.shortest_path_with(&self.successors(), origin, dest)
    }

    pub(crate) fn shortest_path_with(
        &self,
        succ: &BTreeMap<LinkId, Vec<LinkId>>,
        origin: NodeId,
        dest: NodeId,
    ) -> Option<Path> {
        let mut heap = BinaryHeap::new();
        for l in self.out_links(origin) {
            heap.push(Reverse(Label {
                cost: l.free_flow_time(),
                links: vec![l.id],
            }));
        }
        let mut settled = BTreeSet::new();
        while let Some(Reverse(label)) = heap.pop() {
            let last = *label.links.last().expect("labels are never empty");
            if !settled.insert(last) {
                continue;
            }
            let link = &self.links[&last];
            if link.to_node == dest {
                return Some(Path {
                    links: label.links,
                    cost_s: label.cost,
                });
            }
            for next in succ.get(&last).into_iter().flatten() {
                if settled.contains(next) {
                    continue;
                }
                let Some(nl) = self.links.get(next) else {
                    continue;
                };
                let mut links = label.links.clone();
                links.push(*next);
                heap.push(Reverse(Label {
                    cost: label.cost + nl.free_flow_time(),
                    links,
                }));
            }
        }
        None
    }

    /// Sum of free-flow times along a list of links.
    pub fn route_free_flow_time(&self, route: &[LinkId]) -> f64 {
        route.iter().map(|l| self.links[l].free_flow_time()).sum()
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        file.into_graph()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&NetworkFile::from_graph(self))
            .expect("network serialization cannot fail");
        s.push('\n');
        s
    }
}

#[derive(Debug, PartialEq)]
struct Label {
    cost: f64,
    links: Vec<LinkId>,
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.links.cmp(&other.links))
    }
}

/// On-disk network document. Speeds are stored in km/h.
#[derive(Debug, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<NodeJson>,
    pub links: Vec<LinkJson>,
    #[serde(default)]
    pub movements: Vec<MovementJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: u64,
    pub lon: f64,
    pub lat: f64,
    #[serde(default)]
    pub signalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkJson {
    pub id: u64,
    pub from_node: u64,
    pub to_node: u64,
    pub length_m: f64,
    pub speed_kmh: f64,
    pub lanes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sat_flow_per_lane_vps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jam_density_per_lane_vpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_wave_speed_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_class: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MovementJson {
    pub id: u64,
    pub in_link: u64,
    pub out_link: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_factor: Option<f64>,
}

impl NetworkFile {
    pub fn into_graph(self) -> Result<NetworkGraph, NetError> {
        let nodes = self.nodes.into_iter().map(|n| NodeRecord {
            id: NodeId(n.id),
            lon: n.lon,
            lat: n.lat,
            signalized: n.signalized,
            name: n.name,
        });
        let links = self.links.into_iter().map(|l| LinkRecord {
            id: LinkId(l.id),
            from_node: NodeId(l.from_node),
            to_node: NodeId(l.to_node),
            length_m: l.length_m,
            free_flow_speed_mps: l.speed_kmh / 3.6,
            lanes: l.lanes,
            sat_flow_per_lane_vps: l
                .sat_flow_per_lane_vps
                .unwrap_or(defaults::SAT_FLOW_PER_LANE_VPS),
            jam_density_per_lane_vpm: l
                .jam_density_per_lane_vpm
                .unwrap_or(defaults::JAM_DENSITY_PER_LANE_VPM),
            backward_wave_speed_override: l.backward_wave_speed_mps,
            road_class: l.road_class.map(RoadClass).unwrap_or_default(),
        });
        let movements = self.movements.into_iter().map(|m| TurnMovement {
            id: MovementId(m.id),
            in_link: LinkId(m.in_link),
            out_link: LinkId(m.out_link),
            capacity_factor: m.capacity_factor.unwrap_or(defaults::CAPACITY_FACTOR),
        });
        NetworkGraph::from_parts(nodes, links, movements)
    }

    pub fn from_graph(net: &NetworkGraph) -> Self {
        NetworkFile {
            nodes: net
                .nodes()
                .map(|n| NodeJson {
                    id: n.id.0,
                    lon: n.lon,
                    lat: n.lat,
                    signalized: n.signalized,
                    name: n.name.clone(),
                })
                .collect(),
            links: net
                .links()
                .map(|l| LinkJson {
                    id: l.id.0,
                    from_node: l.from_node.0,
                    to_node: l.to_node.0,
                    length_m: l.length_m,
                    speed_kmh: l.free_flow_speed_mps * 3.6,
                    lanes: l.lanes,
                    sat_flow_per_lane_vps: Some(l.sat_flow_per_lane_vps),
                    jam_density_per_lane_vpm: Some(l.jam_density_per_lane_vpm),
                    backward_wave_speed_mps: l.backward_wave_speed_override,
                    road_class: Some(l.road_class.0.clone()),
                })
                .collect(),
            movements: net
                .movements()
                .map(|m| MovementJson {
                    id: m.id.0,
                    in_link: m.in_link.0,
                    out_link: m.out_link.0,
                    capacity_factor: Some(m.capacity_factor),
                })
                .collect(),
        }
    }
}
