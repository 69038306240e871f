//! Event-driven mesoscopic simulation kernel.
//!
//! Each link is a FIFO queue governed by the kinematic-wave rules in
//! [`rules`]. The kernel only advances the clock by popping the next event, so
//! results do not depend on any step size.

mod event;
mod kernel;
pub mod rules;

use serde::Serialize;

use crate::demand::{TripRequest, VehicleId};
use crate::netgraph::{LinkId, NetworkGraph, NodeId};
use crate::signals::TrafficControl;

pub use event::{Event, EventKind, EventRecord, Subject};
pub use rules::{EntryPermission, LinkState};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("{0} vehicles exceed the vehicle id space")]
    TooManyVehicles(usize),
    #[error("vehicle {0} appears twice")]
    DuplicateVehicle(VehicleId),
    #[error("vehicle {vehicle}: {reason}")]
    BadRoute { vehicle: VehicleId, reason: String },
    #[error("internal consistency error: {0}")]
    Internal(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub record_events: bool,
    pub record_census: bool,
}

impl SimOptions {
    pub fn full() -> Self {
        SimOptions {
            record_events: true,
            record_census: true,
        }
    }
}

/// One traversal of a link by a vehicle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkVisit {
    pub link: LinkId,
    pub vehicle: VehicleId,
    pub entry_s: f64,
    pub exit_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripRecord {
    pub vehicle_id: VehicleId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub route: Vec<LinkId>,
    pub depart_s: f64,
    /// `None` if the vehicle was still travelling at the horizon.
    pub arrive_s: Option<f64>,
    /// Time spent in the origin buffer before entering the first link.
    pub origin_wait_s: f64,
    pub free_flow_s: f64,
    pub visits: Vec<LinkVisit>,
}

impl TripRecord {
    pub fn travel_time_s(&self) -> Option<f64> {
        self.arrive_s.map(|a| a - self.depart_s)
    }

    /// Travel time beyond free flow, origin waiting included.
    pub fn delay_s(&self) -> Option<f64> {
        self.travel_time_s().map(|tt| tt - self.free_flow_s)
    }

    pub fn is_complete(&self) -> bool {
        self.arrive_s.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkLog {
    pub link: LinkId,
    pub free_flow_s: f64,
    /// Visits in entry order.
    pub visits: Vec<LinkVisit>,
}

/// Vehicle counts right after an event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Census {
    pub time_s: f64,
    pub generated: usize,
    pub waiting_at_origin: usize,
    pub on_network: usize,
    pub arrived: usize,
}

impl Census {
    pub fn is_conserved(&self) -> bool {
        self.generated == self.waiting_at_origin + self.on_network + self.arrived
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    /// Trips generated before the horizon, by vehicle id.
    pub trips: Vec<TripRecord>,
    /// Per-link logs in link id order.
    pub links: Vec<LinkLog>,
    pub event_count: u64,
    pub clock_end_s: f64,
    pub horizon_s: f64,
    /// Requested trips whose departure falls after the horizon.
    pub not_generated: usize,
    pub census: Vec<Census>,
    pub events: Vec<EventRecord>,
}

impl SimResult {
    pub fn trip(&self, id: VehicleId) -> Option<&TripRecord> {
        self.trips
            .binary_search_by_key(&id, |t| t.vehicle_id)
            .ok()
            .map(|i| &self.trips[i])
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkLog> {
        self.links.iter().find(|l| l.link == id)
    }

    pub fn completed(&self) -> usize {
        self.trips.iter().filter(|t| t.is_complete()).count()
    }

    pub fn incomplete(&self) -> usize {
        self.trips.len() - self.completed()
    }

    /// The event log as tab-separated lines.
    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

/// Runs the trips over `net` under `control` until every vehicle arrives or
/// the clock reaches `horizon_s`.
pub fn run_simulation(
    net: &NetworkGraph,
    trips: &[TripRequest],
    control: &TrafficControl,
    horizon_s: f64,
    options: SimOptions,
) -> Result<SimResult, SimError> {
    kernel::Kernel::new(net, trips, control, horizon_s, options)?.run()
}
