//! OpenStreetMap XML to [`NetworkGraph`]: parse, clip, build, simplify.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;
use crate::netgraph::{
    LinkId, LinkRecord, MovementId, NetError, NetworkGraph, NodeId, NodeRecord, RoadClass,
};

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("document ends inside <{element}> at byte {offset}")]
    Truncated { offset: u64, element: String },
    #[error("<{element}> at byte {offset}: missing or invalid attribute `{attribute}`")]
    Attribute {
        offset: u64,
        element: &'static str,
        attribute: &'static str,
    },
    #[error("invalid bounding box: {0}")]
    BoundingBox(String),
    #[error("way {way}: road class `{class}` has no defaults")]
    UnmappedClass { way: i64, class: String },
    #[error("node {0}: negative OSM ids cannot become network ids")]
    NegativeNodeId(i64),
    #[error("class defaults: {0}")]
    Defaults(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Tags = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct OsmNode {
    pub id: i64,
    pub lon: f64,
    pub lat: f64,
    pub tags: Tags,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OsmWay {
    pub id: i64,
    /// Index of this piece when clipping split the way, otherwise 0.
    pub part: u32,
    pub nodes: Vec<i64>,
    pub tags: Tags,
}

impl OsmWay {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawOsm {
    pub nodes: BTreeMap<i64, OsmNode>,
    /// Highway ways, ordered by (id, part).
    pub ways: Vec<OsmWay>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self, OsmError> {
        let finite = [min_lon, min_lat, max_lon, max_lat].iter().all(|v| v.is_finite());
        if !finite || min_lon >= max_lon || min_lat >= max_lat {
            return Err(OsmError::BoundingBox(format!(
                "need min < max on both axes, got {min_lon},{min_lat},{max_lon},{max_lat}"
            )));
        }
        Ok(BoundingBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        })
    }

    /// Inclusive on all edges.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }
}

/// Parses `min_lon,min_lat,max_lon,max_lat`.
impl FromStr for BoundingBox {
    type Err = OsmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(OsmError::BoundingBox(format!(
                "expected 4 comma-separated numbers, got `{s}`"
            )));
        }
        let mut v = [0.0; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| OsmError::BoundingBox(format!("`{p}` is not a number")))?;
        }
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.min_lon, self.min_lat, self.max_lon, self.max_lat
        )
    }
}

enum Open {
    None,
    Node(OsmNode),
    Way(OsmWay),
}

fn attr<T: FromStr>(
    e: &BytesStart<'_>,
    key: &'static str,
    element: &'static str,
    offset: u64,
) -> Result<T, OsmError> {
    let missing = || OsmError::Attribute {
        offset,
        element,
        attribute: key,
    };
    for a in e.attributes() {
        let a = a.map_err(|err| OsmError::Xml {
            offset,
            message: err.to_string(),
        })?;
        if a.key.as_ref() == key.as_bytes() {
            let v = a.unescape_value().map_err(|_| missing())?;
            return v.trim().parse().map_err(|_| missing());
        }
    }
    Err(missing())
}

/// Reads nodes and highway-tagged ways. Way references to undeclared nodes
/// are dropped with a warning.
pub fn parse_osm(document: &[u8]) -> Result<RawOsm, OsmError> {
    let mut reader = Reader::from_reader(document);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut open = Open::None;
    let mut nodes = BTreeMap::new();
    let mut ways = Vec::new();

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event_into(&mut buf).map_err(|err| match &err {
            quick_xml::Error::IllFormed(quick_xml::errors::IllFormedError::MissingEndTag(tag)) => {
                OsmError::Truncated {
                    offset: reader.buffer_position(),
                    element: tag.clone(),
                }
            }
            _ => OsmError::Xml {
                offset: reader.error_position(),
                message: err.to_string(),
            },
        })?;
        let (e, empty) = match &event {
            Event::Start(e) => (e, false),
            Event::Empty(e) => (e, true),
            Event::End(e) => {
                stack.pop();
                match (e.name().as_ref(), std::mem::replace(&mut open, Open::None)) {
                    (b"node", Open::Node(n)) => {
                        nodes.insert(n.id, n);
                    }
                    (b"way", Open::Way(w)) => ways.push(w),
                    (_, other) => open = other,
                }
                buf.clear();
                continue;
            }
            Event::Eof => {
                if let Some(element) = stack.pop() {
                    return Err(OsmError::Truncated {
                        offset: reader.buffer_position(),
                        element,
                    });
                }
                break;
            }
            _ => {
                buf.clear();
                continue;
            }
        };
        let name = e.name().as_ref().to_vec();
        match name.as_slice() {
            b"node" => {
                let n = OsmNode {
                    id: attr(e, "id", "node", offset)?,
                    lon: attr(e, "lon", "node", offset)?,
                    lat: attr(e, "lat", "node", offset)?,
                    tags: Tags::new(),
                };
                if empty {
                    nodes.insert(n.id, n);
                } else {
                    open = Open::Node(n);
                }
            }
            b"way" => {
                let w = OsmWay {
                    id: attr(e, "id", "way", offset)?,
                    part: 0,
                    nodes: Vec::new(),
                    tags: Tags::new(),
                };
                if empty {
                    ways.push(w);
                } else {
                    open = Open::Way(w);
                }
            }
            b"nd" => {
                if let Open::Way(w) = &mut open {
                    w.nodes.push(attr(e, "ref", "nd", offset)?);
                }
            }
            b"tag" => {
                let k: String = attr(e, "k", "tag", offset)?;
                let v: String = attr(e, "v", "tag", offset)?;
                match &mut open {
                    Open::Node(n) => {
                        n.tags.insert(k, v);
                    }
                    Open::Way(w) => {
                        w.tags.insert(k, v);
                    }
                    Open::None => {}
                }
            }
            _ => {}
        }
        if !empty {
            stack.push(String::from_utf8_lossy(&name).into_owned());
        }
        buf.clear();
    }

    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for mut w in ways {
        if !w.tags.contains_key("highway") {
            continue;
        }
        w.nodes.retain(|r| {
            let known = nodes.contains_key(r);
            if !known {
                warnings.push(format!("way {} references undeclared node {r}", w.id));
            }
            known
        });
        kept.push(w);
    }
    kept.sort_by_key(|w| (w.id, w.part));
    for msg in &warnings {
        log::warn!("{msg}");
    }
    Ok(RawOsm {
        nodes,
        ways: kept,
        warnings,
    })
}

/// Drops nodes outside `bbox` and cuts ways into maximal runs of surviving
/// consecutive nodes. Runs shorter than two nodes disappear.
pub fn filter_bbox(raw: &RawOsm, bbox: &BoundingBox) -> RawOsm {
    let nodes: BTreeMap<i64, OsmNode> = raw
        .nodes
        .iter()
        .filter(|(_, n)| bbox.contains(n.lon, n.lat))
        .map(|(id, n)| (*id, n.clone()))
        .collect();
    let mut ways = Vec::new();
    for w in &raw.ways {
        let mut part = 0;
        let mut run: Vec<i64> = Vec::new();
        let mut flush = |run: &mut Vec<i64>, ways: &mut Vec<OsmWay>| {
            if run.len() >= 2 {
                ways.push(OsmWay {
                    id: w.id,
                    part,
                    nodes: std::mem::take(run),
                    tags: w.tags.clone(),
                });
                part += 1;
            }
            run.clear();
        };
        for r in &w.nodes {
            if nodes.contains_key(r) {
                run.push(*r);
            } else {
                flush(&mut run, &mut ways);
            }
        }
        flush(&mut run, &mut ways);
    }
    RawOsm {
        nodes,
        ways,
        warnings: raw.warnings.clone(),
    }
}

/// Great-circle distance in meters between two (lon, lat) points.
pub fn haversine_length(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * defaults::EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub speed_kmh: f64,
    /// Lanes per direction.
    pub lanes: u32,
    #[serde(default = "default_sat")]
    pub sat_flow_per_lane_vps: f64,
    #[serde(default = "default_jam")]
    pub jam_density_per_lane_vpm: f64,
}

fn default_sat() -> f64 {
    defaults::SAT_FLOW_PER_LANE_VPS
}

fn default_jam() -> f64 {
    defaults::JAM_DENSITY_PER_LANE_VPM
}

/// Per-class link attributes used when a way carries no explicit tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDefaults(pub BTreeMap<String, ClassParams>);

impl Default for ClassDefaults {
    fn default() -> Self {
        ClassDefaults(
            defaults::CLASS_TABLE
                .iter()
                .map(|(class, speed_kmh, lanes)| {
                    (
                        class.to_string(),
                        ClassParams {
                            speed_kmh: *speed_kmh,
                            lanes: *lanes,
                            sat_flow_per_lane_vps: defaults::SAT_FLOW_PER_LANE_VPS,
                            jam_density_per_lane_vpm: defaults::JAM_DENSITY_PER_LANE_VPM,
                        },
                    )
                })
                .collect(),
        )
    }
}

impl ClassDefaults {
    /// Shipped table with entries from `text` (JSON map class -> params) replacing or extending it.
    pub fn with_overrides(text: &str) -> Result<Self, OsmError> {
        let extra: BTreeMap<String, ClassParams> =
            serde_json::from_str(text).map_err(|e| OsmError::Defaults(e.to_string()))?;
        let mut table = ClassDefaults::default();
        table.0.extend(extra);
        Ok(table)
    }

    pub fn get(&self, class: &str) -> Option<&ClassParams> {
        self.0.get(class)
    }
}

/// `highway` values that never carry motor traffic; build_graph skips them.
pub const NON_VEHICULAR: [&str; 12] = [
    "footway",
    "path",
    "pedestrian",
    "cycleway",
    "steps",
    "bridleway",
    "track",
    "corridor",
    "elevator",
    "platform",
    "construction",
    "proposed",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildOptions {
    pub allow_u_turns: bool,
}

/// Parses an OSM `maxspeed` value into km/h.
pub fn parse_maxspeed(v: &str) -> Option<f64> {
    let v = v.trim();
    let (num, factor) = if let Some(n) = v.strip_suffix("mph") {
        (n, 1.609344)
    } else if let Some(n) = v.strip_suffix("km/h") {
        (n, 1.0)
    } else if let Some(n) = v.strip_suffix("kmh") {
        (n, 1.0)
    } else {
        (v, 1.0)
    };
    let speed: f64 = num.trim().parse().ok()?;
    (speed > 0.0 && speed.is_finite()).then_some(speed * factor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Both,
    Forward,
    Backward,
}

fn direction(w: &OsmWay) -> Direction {
    match w.tag("oneway") {
        Some("yes" | "true" | "1") => Direction::Forward,
        Some("-1" | "reverse") => Direction::Backward,
        _ => Direction::Both,
    }
}

fn lanes_tag(w: &OsmWay, key: &str) -> Option<u32> {
    w.tag(key)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .filter(|l| *l >= 1)
}

/// Turns every way into directed links. Only way endpoints, nodes shared by
/// several ways (or visited twice) and signalized nodes become network nodes;
/// shape points in between are folded into the link length. Movements are
/// generated for every in/out pair at each node, U-turns only if enabled.
pub fn build_graph(
    raw: &RawOsm,
    classes: &ClassDefaults,
    options: BuildOptions,
) -> Result<NetworkGraph, OsmError> {
    struct Road<'a> {
        way: &'a OsmWay,
        class: &'a str,
        params: &'a ClassParams,
    }
    let mut roads = Vec::new();
    for w in &raw.ways {
        let class = w.tag("highway").unwrap_or_default();
        if NON_VEHICULAR.contains(&class) {
            continue;
        }
        let params = classes.get(class).ok_or_else(|| OsmError::UnmappedClass {
            way: w.id,
            class: class.to_string(),
        })?;
        roads.push(Road {
            way: w,
            class,
            params,
        });
    }

    let signalized = |id: i64| {
        raw.nodes
            .get(&id)
            .and_then(|n| n.tags.get("highway"))
            .is_some_and(|v| v == "traffic_signals")
    };
    let mut uses: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &roads {
        for id in &r.way.nodes {
            *uses.entry(*id).or_default() += 1;
        }
    }
    let is_anchor = |id: i64, i: usize, len: usize| {
        i == 0 || i + 1 == len || uses[&id] > 1 || signalized(id)
    };

    let mut net = NetworkGraph::new();
    let mut next_link = 1;
    for r in &roads {
        let w = r.way;
        let dir = direction(w);
        let total_lanes = lanes_tag(w, "lanes");
        let (fwd_lanes, bwd_lanes) = match dir {
            Direction::Both => (
                lanes_tag(w, "lanes:forward")
                    .or(total_lanes.map(|l| (l / 2).max(1)))
                    .unwrap_or(r.params.lanes),
                lanes_tag(w, "lanes:backward")
                    .or(total_lanes.map(|l| (l / 2).max(1)))
                    .unwrap_or(r.params.lanes),
            ),
            _ => {
                let l = total_lanes.unwrap_or(r.params.lanes);
                (l, l)
            }
        };
        let speed_kmh = match w.tag("maxspeed") {
            Some(v) => parse_maxspeed(v).unwrap_or_else(|| {
                log::warn!("way {}: ignoring unparsable maxspeed `{v}`", w.id);
                r.params.speed_kmh
            }),
            None => r.params.speed_kmh,
        };

        let mut start = 0;
        let mut length = 0.0;
        for i in 1..w.nodes.len() {
            let (a, b) = (&raw.nodes[&w.nodes[i - 1]], &raw.nodes[&w.nodes[i]]);
            length += haversine_length((a.lon, a.lat), (b.lon, b.lat));
            if !is_anchor(w.nodes[i], i, w.nodes.len()) {
                continue;
            }
            let (from, to) = (w.nodes[start], w.nodes[i]);
            start = i;
            let seg = std::mem::take(&mut length);
            if from == to {
                log::warn!("way {}: dropping closed loop at node {from}", w.id);
                continue;
            }
            for id in [from, to] {
                if id < 0 {
                    return Err(OsmError::NegativeNodeId(id));
                }
                if net.node(NodeId(id as u64)).is_none() {
                    let n = &raw.nodes[&id];
                    let mut rec = NodeRecord::new(id as u64, n.lon, n.lat);
                    rec.signalized = signalized(id);
                    rec.name = n.tags.get("name").cloned();
                    net.add_node(rec)?;
                }
            }
            let dirs: &[(i64, i64, u32)] = match dir {
                Direction::Both => &[(from, to, fwd_lanes), (to, from, bwd_lanes)],
                Direction::Forward => &[(from, to, fwd_lanes)],
                Direction::Backward => &[(to, from, bwd_lanes)],
            };
            for &(u, v, lanes) in dirs {
                let min_len = (1.0 / (lanes as f64 * r.params.jam_density_per_lane_vpm))
                    .ceil()
                    .max(1.0);
                let len = if seg < min_len {
                    log::warn!(
                        "way {}: segment {u}->{v} of {seg:.2} m lengthened to {min_len} m to hold one vehicle",
                        w.id
                    );
                    min_len
                } else {
                    seg
                };
                let link = LinkRecord::new(next_link, u as u64, v as u64, len, speed_kmh / 3.6, lanes)
                    .with_sat_flow(r.params.sat_flow_per_lane_vps)
                    .with_jam_density(r.params.jam_density_per_lane_vpm)
                    .with_class(RoadClass::new(r.class));
                net.add_link(link)?;
                next_link += 1;
            }
        }
    }
    net.add_all_movements(options.allow_u_turns);
    Ok(net)
}

fn same_flow(a: &LinkRecord, b: &LinkRecord) -> bool {
    a.road_class == b.road_class
        && a.free_flow_speed_mps == b.free_flow_speed_mps
        && a.lanes == b.lanes
        && a.sat_flow_per_lane_vps == b.sat_flow_per_lane_vps
        && a.jam_density_per_lane_vpm == b.jam_density_per_lane_vpm
        && a.backward_wave_speed_override == b.backward_wave_speed_override
}

struct Index {
    ins: BTreeMap<NodeId, Vec<LinkId>>,
    outs: BTreeMap<NodeId, Vec<LinkId>>,
    turn: BTreeMap<(LinkId, LinkId), MovementId>,
}

impl Index {
    fn build(net: &NetworkGraph) -> Self {
        let mut ins: BTreeMap<NodeId, Vec<LinkId>> = BTreeMap::new();
        let mut outs: BTreeMap<NodeId, Vec<LinkId>> = BTreeMap::new();
        for l in net.links() {
            ins.entry(l.to_node).or_default().push(l.id);
            outs.entry(l.from_node).or_default().push(l.id);
        }
        let turn = net
            .movements()
            .map(|m| ((m.in_link, m.out_link), m.id))
            .collect();
        Index { ins, outs, turn }
    }

    fn around(&self, n: NodeId) -> (&[LinkId], &[LinkId]) {
        (
            self.ins.get(&n).map_or(&[], Vec::as_slice),
            self.outs.get(&n).map_or(&[], Vec::as_slice),
        )
    }
}

/// Pass-through pairs (in, out) at `n` if the node can be removed.
fn mergeable(net: &NetworkGraph, idx: &Index, n: NodeId) -> Option<Vec<(LinkId, LinkId)>> {
    if net.node(n)?.signalized {
        return None;
    }
    let (ins, outs) = idx.around(n);
    let link = |id: &LinkId| net.link(*id).expect("indexed link exists");
    let pairs: Vec<(LinkId, LinkId)> = match (ins.len(), outs.len()) {
        (1, 1) => vec![(ins[0], outs[0])],
        (2, 2) => {
            let mut pairs = Vec::new();
            for i in ins {
                // Straight through means leaving towards the other neighbour.
                let o = outs
                    .iter()
                    .find(|o| link(o).to_node != link(i).from_node)?;
                pairs.push((*i, *o));
            }
            if pairs[0].1 == pairs[1].1 {
                return None;
            }
            pairs
        }
        _ => return None,
    };
    for (i, o) in &pairs {
        let (a, b) = (link(i), link(o));
        if a.from_node == b.to_node || !same_flow(a, b) {
            return None;
        }
        let m = idx.turn.get(&(*i, *o))?;
        if net.movement(*m)?.capacity_factor != 1.0 {
            return None;
        }
    }
    // Every movement at the node must be one of the through pairs.
    let at_node = ins
        .iter()
        .flat_map(|i| outs.iter().map(move |o| (*i, *o)))
        .filter(|p| idx.turn.contains_key(p))
        .count();
    (at_node == pairs.len()).then_some(pairs)
}

fn merge(net: &mut NetworkGraph, idx: &Index, n: NodeId, pairs: &[(LinkId, LinkId)]) {
    for (i, o) in pairs {
        let down = net.link(*o).expect("link exists").clone();
        let through = idx.turn[&(*i, *o)];
        net.remove_movement(through);
        let carried: Vec<MovementId> = net
            .movements()
            .filter(|m| m.in_link == *o)
            .map(|m| m.id)
            .collect();
        for m in carried {
            net.movement_mut(m).expect("movement exists").in_link = *i;
        }
        let mut up = net.link(*i).expect("link exists").clone();
        up.to_node = down.to_node;
        up.length_m += down.length_m;
        net.remove_link(*o);
        net.insert_link_unchecked(up);
    }
    net.remove_node(n);
}

/// Removes non-signalized pass-through nodes whose incident links share all
/// flow attributes, merging each pair into the upstream link. Free-flow costs
/// between surviving nodes are unchanged. Repeats until nothing merges.
pub fn simplify_chains(net: &NetworkGraph) -> NetworkGraph {
    let mut out = net.clone();
    loop {
        let mut changed = false;
        let mut touched: BTreeSet<NodeId> = BTreeSet::new();
        let idx = Index::build(&out);
        let ids: Vec<NodeId> = out.nodes().map(|n| n.id).collect();
        for n in ids {
            if touched.contains(&n) {
                continue;
            }
            let Some(pairs) = mergeable(&out, &idx, n) else {
                continue;
            };
            for (i, o) in &pairs {
                let (a, b) = (&idx_link(&out, *i), &idx_link(&out, *o));
                touched.insert(a.from_node);
                touched.insert(b.to_node);
            }
            merge(&mut out, &idx, n, &pairs);
            changed = true;
            // The index is stale around merged links; handle their ends next pass.
        }
        if !changed {
            return out;
        }
    }
}

fn idx_link(net: &NetworkGraph, id: LinkId) -> LinkRecord {
    net.link(id).expect("link exists").clone()
}

/// Runs the whole pipeline on an OSM document.
pub fn ingest(
    document: &[u8],
    bbox: &BoundingBox,
    classes: &ClassDefaults,
    options: BuildOptions,
) -> Result<NetworkGraph, OsmError> {
    let raw = parse_osm(document)?;
    let clipped = filter_bbox(&raw, bbox);
    let net = build_graph(&clipped, classes, options)?;
    Ok(simplify_chains(&net))
}
