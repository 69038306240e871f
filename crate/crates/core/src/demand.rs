//! Time-varying origin-destination demand and its expansion into trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{LinkId, NetworkGraph, NodeId};

/// Tolerance used when comparing cumulative counts against integer thresholds.
const COUNT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub rate_vps: f64,
}

/// Piecewise-constant arrival rate over sorted, non-overlapping segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemandProfile {
    segments: Vec<Segment>,
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("segment {index}: end {end_s} must exceed start {start_s}")]
    EmptySegment {
        index: usize,
        start_s: f64,
        end_s: f64,
    },
    #[error("segment {index}: rate {rate} must be finite and non-negative")]
    BadRate { index: usize, rate: f64 },
    #[error("segment {index} starts before the previous segment ends")]
    Overlap { index: usize },
    #[error("segment {index}: start {start_s} is negative")]
    NegativeStart { index: usize, start_s: f64 },
    #[error("od pair {origin} -> {destination}: origin equals destination")]
    SameEndpoints { origin: NodeId, destination: NodeId },
    #[error("od pair {origin} -> {destination}: node {node} is not in the network")]
    UnknownNode {
        origin: NodeId,
        destination: NodeId,
        node: NodeId,
    },
    #[error("od pair {origin} -> {destination} is not routable")]
    Unroutable { origin: NodeId, destination: NodeId },
    #[error("{0} trips exceed the vehicle id space")]
    TooManyTrips(usize),
    #[error("invalid demand document: {0}")]
    Json(#[from] serde_json::Error),
}

impl DemandProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self, DemandError> {
        for (index, s) in segments.iter().enumerate() {
            if !(s.end_s > s.start_s) {
                return Err(DemandError::EmptySegment {
                    index,
                    start_s: s.start_s,
                    end_s: s.end_s,
                });
            }
            if s.start_s < 0.0 {
                return Err(DemandError::NegativeStart {
                    index,
                    start_s: s.start_s,
                });
            }
            if !(s.rate_vps >= 0.0 && s.rate_vps.is_finite()) {
                return Err(DemandError::BadRate {
                    index,
                    rate: s.rate_vps,
                });
            }
            if index > 0 && s.start_s < segments[index - 1].end_s {
                return Err(DemandError::Overlap { index });
            }
        }
        Ok(DemandProfile { segments })
    }

    /// Single constant-rate segment.
    pub fn constant(start_s: f64, end_s: f64, rate_vps: f64) -> Result<Self, DemandError> {
        Self::new(vec![Segment {
            start_s,
            end_s,
            rate_vps,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Same profile moved later by `offset_s`.
    pub fn shifted(&self, offset_s: f64) -> Self {
        DemandProfile {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start_s: s.start_s + offset_s,
                    end_s: s.end_s + offset_s,
                    rate_vps: s.rate_vps,
                })
                .collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.rate_vps * (s.end_s - s.start_s))
            .sum()
    }

    pub fn max_rate(&self) -> f64 {
        self.segments.iter().map(|s| s.rate_vps).fold(0.0, f64::max)
    }

    fn rate_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .find(|s| s.start_s <= t && t < s.end_s)
            .map_or(0.0, |s| s.rate_vps)
    }
}

/// Expected number of departures in `[0, t]`.
pub fn cumulative_demand(profile: &DemandProfile, t: f64) -> f64 {
    let mut acc = 0.0;
    for s in &profile.segments {
        if t <= s.start_s {
            break;
        }
        acc += s.rate_vps * (t.min(s.end_s) - s.start_s);
    }
    acc
}

/// Deterministic expansion: the k-th departure is the first instant the
/// cumulative demand reaches k.
pub fn departure_times(profile: &DemandProfile) -> Vec<f64> {
    let mut out = Vec::new();
    let mut before = 0.0;
    let mut k = 1.0_f64;
    for s in &profile.segments {
        let after = before + s.rate_vps * (s.end_s - s.start_s);
        if s.rate_vps > 0.0 {
            while k <= after + COUNT_EPS {
                let t = s.start_s + (k - before) / s.rate_vps;
                out.push(t.min(s.end_s));
                k += 1.0;
            }
        }
        before = after;
    }
    out
}

/// Inhomogeneous Poisson arrivals by thinning against the maximum rate.
pub fn poisson_departures(profile: &DemandProfile, seed: u64) -> Vec<f64> {
    let lambda = profile.max_rate();
    let Some(last) = profile.segments.last() else {
        return Vec::new();
    };
    if lambda <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(lambda).expect("positive rate");
    let mut t = profile.segments[0].start_s;
    let mut out = Vec::new();
    loop {
        t += gap.sample(&mut rng);
        if t >= last.end_s {
            break;
        }
        let accept: f64 = rng.random();
        if accept * lambda < profile.rate_at(t) {
            out.push(t);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
    pub profile: DemandProfile,
}

impl OdPair {
    pub fn new(origin: u64, destination: u64, profile: DemandProfile) -> Self {
        OdPair {
            origin: NodeId(origin),
            destination: NodeId(destination),
            profile,
        }
    }

    /// Checks the pair against a network (distinct endpoints, both present).
    pub fn check(&self, net: &NetworkGraph) -> Result<(), DemandError> {
        if self.origin == self.destination {
            return Err(DemandError::SameEndpoints {
                origin: self.origin,
                destination: self.destination,
            });
        }
        for node in [self.origin, self.destination] {
            if net.node(node).is_none() {
                return Err(DemandError::UnknownNode {
                    origin: self.origin,
                    destination: self.destination,
                    node,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemandMode {
    Deterministic,
    Poisson { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripRequest {
    pub vehicle_id: VehicleId,
    /// Index of the OD pair in the list the trip was built from.
    pub od_index: usize,
    pub origin: NodeId,
    pub destination: NodeId,
    pub departure_s: f64,
    pub route: Vec<LinkId>,
}

/// Expands every OD pair into trips with free-flow shortest routes. Vehicle
/// ids follow (departure time, OD declaration order), starting at 1.
pub fn build_trips(
    net: &NetworkGraph,
    ods: &[OdPair],
    mode: DemandMode,
) -> Result<Vec<TripRequest>, DemandError> {
    let succ = net.successors();
    let mut routes = Vec::with_capacity(ods.len());
    for od in ods {
        od.check(net)?;
        let path = net
            .shortest_path_with(&succ, od.origin, od.destination)
            .ok_or(DemandError::Unroutable {
                origin: od.origin,
                destination: od.destination,
            })?;
        routes.push(path.links);
    }

    let mut departures: Vec<(f64, usize)> = Vec::new();
    for (i, od) in ods.iter().enumerate() {
        let times = match mode {
            DemandMode::Deterministic => departure_times(&od.profile),
            DemandMode::Poisson { seed } => {
                poisson_departures(&od.profile, seed.wrapping_add(i as u64))
            }
        };
        departures.extend(times.into_iter().map(|t| (t, i)));
    }
    // Stable sort keeps the per-OD generation order for equal keys.
    departures.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if departures.len() > u32::MAX as usize {
        return Err(DemandError::TooManyTrips(departures.len()));
    }
    Ok(departures
        .into_iter()
        .enumerate()
        .map(|(k, (t, i))| TripRequest {
            vehicle_id: VehicleId(k as u32 + 1),
            od_index: i,
            origin: ods[i].origin,
            destination: ods[i].destination,
            departure_s: t,
            route: routes[i].clone(),
        })
        .collect())
}

/// On-disk OD entry; rates are vehicles per hour.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdJson {
    pub origin: u64,
    pub destination: u64,
    pub profile: Vec<SegmentJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentJson {
    pub start_s: f64,
    pub end_s: f64,
    pub rate_vph: f64,
}

impl SegmentJson {
    pub fn to_segment(&self) -> Segment {
        Segment {
            start_s: self.start_s,
            end_s: self.end_s,
            rate_vps: self.rate_vph / 3600.0,
        }
    }
}

/// Parses a demand document (JSON array of OD entries).
pub fn load_demand(text: &str) -> Result<Vec<OdPair>, DemandError> {
    let entries: Vec<OdJson> = serde_json::from_str(text)?;
    entries
        .into_iter()
        .map(|e| {
            let profile = DemandProfile::new(e.profile.iter().map(SegmentJson::to_segment).collect())?;
            Ok(OdPair::new(e.origin, e.destination, profile))
        })
        .collect()
}
