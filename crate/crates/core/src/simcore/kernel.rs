use std::collections::{BTreeMap, VecDeque};

use crate::demand::{TripRequest, VehicleId};
use crate::netgraph::{LinkId, LinkRecord, MovementId, NetworkGraph, NodeId};
use crate::signals::{SignalId, TrafficControl};

use super::event::{EventKind, EventQueue, EventRecord, Subject};
use super::rules::{
    earliest_unsignalled_exit, entry_permission_time, hole_travel_time, LinkState,
};
use super::{Census, LinkLog, LinkVisit, SimError, SimOptions, SimResult, TripRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Scheduled,
    AtOrigin,
    OnLink,
    Arrived,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Parked {
    No,
    Hole(usize),
    Red(SignalId),
}

#[derive(Debug)]
struct Vehicle {
    id: VehicleId,
    origin: NodeId,
    destination: NodeId,
    depart_s: f64,
    route: Vec<usize>,
    /// Movement from `route[i]` to `route[i + 1]`.
    turns: Vec<MovementId>,
    stage: Stage,
    route_index: usize,
    entry_s: f64,
    first_entry_s: Option<f64>,
    arrive_s: Option<f64>,
    parked: Parked,
}

impl Vehicle {
    fn turn(&self) -> Option<MovementId> {
        self.turns.get(self.route_index).copied()
    }
}

#[derive(Debug)]
struct Waiter {
    ready_s: f64,
    vehicle: usize,
    id: VehicleId,
}

fn sort_waiters(list: &mut [Waiter]) {
    list.sort_by(|a, b| a.ready_s.total_cmp(&b.ready_s).then(a.id.cmp(&b.id)));
}

struct LinkRt<'a> {
    rec: &'a LinkRecord,
    state: LinkState,
    queue: VecDeque<usize>,
    visits: Vec<LinkVisit>,
    waiters: Vec<Waiter>,
}

enum Source {
    Origin,
    Link(usize),
}

pub(crate) struct Kernel<'a> {
    control: &'a TrafficControl,
    horizon_s: f64,
    options: SimOptions,
    links: Vec<LinkRt<'a>>,
    vehicles: Vec<Vehicle>,
    origins: BTreeMap<NodeId, VecDeque<usize>>,
    pending_origins: VecDeque<NodeId>,
    red_waiters: BTreeMap<SignalId, Vec<Waiter>>,
    queue: EventQueue,
    generated: usize,
    arrived: usize,
    on_network: usize,
    events: Vec<EventRecord>,
    census: Vec<Census>,
    event_count: u64,
    notes: Vec<String>,
}

impl<'a> Kernel<'a> {
    pub(crate) fn new(
        net: &'a NetworkGraph,
        trips: &[TripRequest],
        control: &'a TrafficControl,
        horizon_s: f64,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        if !(horizon_s > 0.0) {
            return Err(SimError::NonPositiveHorizon(horizon_s));
        }
        if trips.len() > u32::MAX as usize {
            return Err(SimError::TooManyVehicles(trips.len()));
        }
        let index: BTreeMap<LinkId, usize> = net
            .links()
            .enumerate()
            .map(|(i, l)| (l.id, i))
            .collect();
        let turns: BTreeMap<(LinkId, LinkId), MovementId> = net
            .movements()
            .map(|m| ((m.in_link, m.out_link), m.id))
            .collect();
        let links = net
            .links()
            .map(|rec| LinkRt {
                rec,
                state: LinkState::default(),
                queue: VecDeque::new(),
                visits: Vec::new(),
                waiters: Vec::new(),
            })
            .collect();

        let mut vehicles = Vec::with_capacity(trips.len());
        let mut seen = std::collections::BTreeSet::new();
        for trip in trips {
            if !seen.insert(trip.vehicle_id) {
                return Err(SimError::DuplicateVehicle(trip.vehicle_id));
            }
            let bad = |reason: &str| SimError::BadRoute {
                vehicle: trip.vehicle_id,
                reason: reason.to_string(),
            };
            if trip.route.is_empty() {
                return Err(bad("empty route"));
            }
            let mut route = Vec::with_capacity(trip.route.len());
            for l in &trip.route {
                route.push(*index.get(l).ok_or_else(|| bad(&format!("unknown link {l}")))?);
            }
            if net.link(trip.route[0]).map(|l| l.from_node) != Some(trip.origin) {
                return Err(bad("first link does not leave the origin"));
            }
            if net.link(*trip.route.last().unwrap()).map(|l| l.to_node) != Some(trip.destination)
            {
                return Err(bad("last link does not reach the destination"));
            }
            let mut vturns = Vec::with_capacity(route.len().saturating_sub(1));
            for pair in trip.route.windows(2) {
                let m = turns
                    .get(&(pair[0], pair[1]))
                    .ok_or_else(|| bad(&format!("no movement {} -> {}", pair[0], pair[1])))?;
                vturns.push(*m);
            }
            if !(trip.departure_s >= 0.0 && trip.departure_s.is_finite()) {
                return Err(bad("departure time must be finite and non-negative"));
            }
            vehicles.push(Vehicle {
                id: trip.vehicle_id,
                origin: trip.origin,
                destination: trip.destination,
                depart_s: trip.departure_s,
                route,
                turns: vturns,
                stage: Stage::Scheduled,
                route_index: 0,
                entry_s: 0.0,
                first_entry_s: None,
                arrive_s: None,
                parked: Parked::No,
            });
        }

        let mut queue = EventQueue::default();
        for v in &vehicles {
            queue.push(v.depart_s, EventKind::Departure, Subject::Vehicle(v.id));
        }
        for sig in control.signal_ids() {
            if let Some(t) = control.next_phase_change(sig, 0.0) {
                if t <= horizon_s {
                    queue.push(t, EventKind::PhaseChange, Subject::Signal(sig));
                }
            }
        }
        queue.push(horizon_s, EventKind::HorizonEnd, Subject::Clock);

        Ok(Kernel {
            control,
            horizon_s,
            options,
            links,
            vehicles,
            origins: BTreeMap::new(),
            pending_origins: VecDeque::new(),
            red_waiters: BTreeMap::new(),
            queue,
            generated: 0,
            arrived: 0,
            on_network: 0,
            events: Vec::new(),
            census: Vec::new(),
            event_count: 0,
            notes: Vec::new(),
        })
    }

    pub(crate) fn run(mut self) -> Result<SimResult, SimError> {
        let by_id: BTreeMap<VehicleId, usize> = self
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id, i))
            .collect();
        let link_index: BTreeMap<LinkId, usize> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.rec.id, i))
            .collect();
        let total = self.vehicles.len();
        let mut clock = 0.0;
        while let Some(ev) = self.queue.pop() {
            if ev.time_s > self.horizon_s {
                break;
            }
            clock = ev.time_s;
            self.notes.clear();
            let t = ev.time_s;
            let stop = match (ev.kind, ev.subject) {
                (EventKind::Departure, Subject::Vehicle(id)) => {
                    let v = *by_id.get(&id).ok_or(SimError::Internal(format!(
                        "departure for unknown vehicle {id}"
                    )))?;
                    self.on_departure(v, t)?;
                    false
                }
                (EventKind::ExitCandidate, Subject::Vehicle(id)) => {
                    let v = *by_id.get(&id).ok_or(SimError::Internal(format!(
                        "exit candidate for unknown vehicle {id}"
                    )))?;
                    self.on_exit_candidate(v, t)?;
                    false
                }
                (EventKind::HoleArrival, Subject::Link(id)) => {
                    let l = *link_index.get(&id).ok_or(SimError::Internal(format!(
                        "hole arrival on unknown link {id}"
                    )))?;
                    self.on_hole_arrival(l, t)?;
                    false
                }
                (EventKind::PhaseChange, Subject::Signal(sig)) => {
                    self.on_phase_change(sig, t)?;
                    false
                }
                (EventKind::HorizonEnd, _) => {
                    let en_route = self.generated - self.arrived;
                    self.notes.push(format!("en_route={en_route}"));
                    true
                }
                (kind, subject) => {
                    return Err(SimError::Internal(format!(
                        "malformed event {kind} for {subject}"
                    )))
                }
            };
            self.drain_origins(t)?;
            self.event_count += 1;
            if self.options.record_events {
                let detail = if self.notes.is_empty() {
                    "-".to_string()
                } else {
                    self.notes.join(";")
                };
                self.events.push(EventRecord {
                    time_s: t,
                    kind: ev.kind,
                    subject: ev.subject,
                    detail,
                });
            }
            if self.options.record_census {
                let waiting: usize = self.origins.values().map(VecDeque::len).sum();
                self.census.push(Census {
                    time_s: t,
                    generated: self.generated,
                    waiting_at_origin: waiting,
                    on_network: self.on_network,
                    arrived: self.arrived,
                });
            }
            if stop || self.arrived == total {
                break;
            }
        }
        Ok(self.finish(clock))
    }

    fn on_departure(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        let veh = &mut self.vehicles[v];
        if veh.stage != Stage::Scheduled {
            return Err(SimError::Internal(format!("vehicle {} departs twice", veh.id)));
        }
        veh.stage = Stage::AtOrigin;
        let origin = veh.origin;
        self.generated += 1;
        let buffer = self.origins.entry(origin).or_default();
        buffer.push_back(v);
        let is_head = buffer.len() == 1;
        self.notes.push(format!("origin={origin} buffer={}", buffer.len()));
        if is_head {
            self.advance(v, t)?;
        }
        Ok(())
    }

    fn on_exit_candidate(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        let veh = &self.vehicles[v];
        let link = veh.route[veh.route_index];
        if veh.stage != Stage::OnLink
            || veh.parked != Parked::No
            || self.links[link].queue.front() != Some(&v)
        {
            return Err(SimError::Internal(format!(
                "exit candidate for vehicle {} that is not an active link head",
                veh.id
            )));
        }
        self.advance(v, t)
    }

    fn on_hole_arrival(&mut self, l: usize, t: f64) -> Result<(), SimError> {
        let mut waiters = std::mem::take(&mut self.links[l].waiters);
        sort_waiters(&mut waiters);
        self.notes.push(format!("waiters={}", waiters.len()));
        let mut rest = waiters.into_iter();
        while let Some(w) = rest.next() {
            self.vehicles[w.vehicle].parked = Parked::No;
            match self.own_status(w.vehicle, t)? {
                Own::Ready => {
                    let m = self.links[l].state.entry_count + 1;
                    if entry_permission_time(m, self.links[l].rec, &self.links[l].state).allows(t)
                    {
                        self.transfer(w.vehicle, t)?;
                    } else {
                        self.vehicles[w.vehicle].parked = Parked::Hole(l);
                        self.links[l].waiters.push(w);
                        self.links[l].waiters.extend(rest);
                        break;
                    }
                }
                other => self.defer(w.vehicle, t, other),
            }
        }
        Ok(())
    }

    fn on_phase_change(&mut self, sig: SignalId, t: f64) -> Result<(), SimError> {
        if let Some(next) = self.control.next_phase_change(sig, t) {
            if next <= self.horizon_s {
                self.queue
                    .push(next, EventKind::PhaseChange, Subject::Signal(sig));
            }
        }
        let phase = self
            .control
            .plan_at(sig, t)
            .and_then(|p| p.active_phase(t))
            .map_or("-".to_string(), |i| (i + 1).to_string());
        self.notes.push(format!("phase={phase}"));
        let Some(mut waiting) = self.red_waiters.remove(&sig) else {
            return Ok(());
        };
        sort_waiters(&mut waiting);
        let mut keep = Vec::new();
        for w in waiting {
            let turn = self.vehicles[w.vehicle].turn();
            if turn.is_some_and(|m| self.control.is_green(m, t)) {
                self.vehicles[w.vehicle].parked = Parked::No;
                self.advance(w.vehicle, t)?;
            } else {
                keep.push(w);
            }
        }
        if !keep.is_empty() {
            self.red_waiters.entry(sig).or_default().extend(keep);
        }
        Ok(())
    }

    /// Status of a vehicle's own constraints at `t` (link head) or trivially
    /// ready (origin head).
    fn own_status(&self, v: usize, t: f64) -> Result<Own, SimError> {
        let veh = &self.vehicles[v];
        if veh.stage == Stage::AtOrigin {
            return Ok(Own::Ready);
        }
        let link = &self.links[veh.route[veh.route_index]];
        let turn = veh.turn();
        let earliest =
            earliest_unsignalled_exit(veh.entry_s, link.rec, &link.state, turn, self.control, t);
        if earliest > t {
            return Ok(Own::Later(earliest));
        }
        if let Some(m) = turn {
            if let Some(sig) = self.control.signal_for(m) {
                if !self.control.is_green(m, t) {
                    return Ok(Own::Red(sig));
                }
            }
        }
        Ok(Own::Ready)
    }

    fn defer(&mut self, v: usize, t: f64, status: Own) {
        let id = self.vehicles[v].id;
        match status {
            Own::Later(at) => {
                if at.is_finite() {
                    self.queue
                        .push(at, EventKind::ExitCandidate, Subject::Vehicle(id));
                    self.notes.push(format!("veh:{id} wait until={at}"));
                } else {
                    self.notes.push(format!("veh:{id} no capacity"));
                }
            }
            Own::Red(sig) => {
                self.vehicles[v].parked = Parked::Red(sig);
                self.red_waiters.entry(sig).or_default().push(Waiter {
                    ready_s: t,
                    vehicle: v,
                    id,
                });
                self.notes.push(format!("veh:{id} red sig={sig}"));
            }
            Own::Ready => unreachable!("ready vehicles are not deferred"),
        }
    }

    /// Attempts to move a head vehicle (origin buffer or link) forward at `t`.
    fn advance(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        match self.own_status(v, t)? {
            Own::Ready => {}
            other => {
                self.defer(v, t, other);
                return Ok(());
            }
        }
        let veh = &self.vehicles[v];
        let next = match veh.stage {
            Stage::AtOrigin => Some(veh.route[0]),
            _ => veh.route.get(veh.route_index + 1).copied(),
        };
        let Some(target) = next else {
            return self.transfer(v, t);
        };
        let link = &self.links[target];
        let m = link.state.entry_count + 1;
        let permitted = link.waiters.is_empty()
            && entry_permission_time(m, link.rec, &link.state).allows(t);
        if permitted {
            self.transfer(v, t)
        } else {
            let id = veh.id;
            self.vehicles[v].parked = Parked::Hole(target);
            self.links[target].waiters.push(Waiter {
                ready_s: t,
                vehicle: v,
                id,
            });
            self.notes
                .push(format!("veh:{id} blocked link={}", self.links[target].rec.id));
            Ok(())
        }
    }

    /// Moves `v` one step along its route at `t`: origin to first link, link
    /// to next link, or last link to arrival.
    fn transfer(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        let (source, target) = {
            let veh = &self.vehicles[v];
            match veh.stage {
                Stage::AtOrigin => (Source::Origin, Some(veh.route[0])),
                Stage::OnLink => (
                    Source::Link(veh.route[veh.route_index]),
                    veh.route.get(veh.route_index + 1).copied(),
                ),
                _ => {
                    return Err(SimError::Internal(format!(
                        "vehicle {} cannot move from {:?}",
                        veh.id, veh.stage
                    )))
                }
            }
        };
        let id = self.vehicles[v].id;
        match source {
            Source::Origin => {
                let origin = self.vehicles[v].origin;
                let buffer = self.origins.get_mut(&origin).expect("origin buffer exists");
                if buffer.pop_front() != Some(v) {
                    return Err(SimError::Internal(format!(
                        "vehicle {id} left origin {origin} out of order"
                    )));
                }
                self.vehicles[v].first_entry_s = Some(t);
                self.on_network += 1;
            }
            Source::Link(l) => {
                self.leave_link(v, l, t)?;
                self.vehicles[v].route_index += 1;
            }
        }
        match target {
            Some(tl) => {
                let veh = &mut self.vehicles[v];
                veh.stage = Stage::OnLink;
                veh.entry_s = t;
                let link = &mut self.links[tl];
                link.state.entry_count += 1;
                link.queue.push_back(v);
                link.visits.push(LinkVisit {
                    link: link.rec.id,
                    vehicle: id,
                    entry_s: t,
                    exit_s: None,
                });
                self.notes.push(format!("veh:{id} enter link={}", link.rec.id));
                if link.queue.len() == 1 {
                    self.schedule_head(tl, t);
                }
            }
            None => {
                let veh = &mut self.vehicles[v];
                veh.stage = Stage::Arrived;
                veh.arrive_s = Some(t);
                self.arrived += 1;
                self.on_network -= 1;
                self.notes.push(format!("veh:{id} arrive"));
            }
        }
        if let Source::Origin = source {
            self.pending_origins.push_back(self.vehicles[v].origin);
        }
        Ok(())
    }

    /// Lets each origin whose head just left try its next vehicle.
    fn drain_origins(&mut self, t: f64) -> Result<(), SimError> {
        while let Some(origin) = self.pending_origins.pop_front() {
            if let Some(&head) = self.origins.get(&origin).and_then(|b| b.front()) {
                if self.vehicles[head].parked == Parked::No {
                    self.advance(head, t)?;
                }
            }
        }
        Ok(())
    }

    fn leave_link(&mut self, v: usize, l: usize, t: f64) -> Result<(), SimError> {
        let link = &mut self.links[l];
        if link.queue.pop_front() != Some(v) {
            return Err(SimError::Internal(format!(
                "FIFO violation on link {}",
                link.rec.id
            )));
        }
        let seq = link.state.exit_log.len();
        link.state.exit_log.push(t);
        link.visits[seq].exit_s = Some(t);
        let hole_at = t + hole_travel_time(link.rec);
        let link_id = link.rec.id;
        if hole_at <= self.horizon_s {
            self.queue
                .push(hole_at, EventKind::HoleArrival, Subject::Link(link_id));
        }
        if !self.links[l].queue.is_empty() {
            self.schedule_head(l, t);
        }
        Ok(())
    }

    fn schedule_head(&mut self, l: usize, t: f64) {
        let link = &self.links[l];
        let head = link.queue[0];
        let veh = &self.vehicles[head];
        let at = earliest_unsignalled_exit(
            veh.entry_s,
            link.rec,
            &link.state,
            veh.turn(),
            self.control,
            t,
        );
        if at.is_finite() {
            self.queue
                .push(at, EventKind::ExitCandidate, Subject::Vehicle(veh.id));
        }
    }

    fn finish(self, clock: f64) -> SimResult {
        let mut trips = Vec::with_capacity(self.generated);
        let mut by_vehicle: BTreeMap<VehicleId, Vec<LinkVisit>> = BTreeMap::new();
        for link in &self.links {
            for visit in &link.visits {
                by_vehicle.entry(visit.vehicle).or_default().push(visit.clone());
            }
        }
        let mut not_generated = 0;
        for veh in &self.vehicles {
            if veh.stage == Stage::Scheduled {
                not_generated += 1;
                continue;
            }
            let mut visits = by_vehicle.remove(&veh.id).unwrap_or_default();
            visits.sort_by(|a, b| a.entry_s.total_cmp(&b.entry_s));
            let route: Vec<LinkId> = veh.route.iter().map(|i| self.links[*i].rec.id).collect();
            let free_flow_s = veh
                .route
                .iter()
                .map(|i| self.links[*i].rec.free_flow_time())
                .sum();
            let origin_wait_s = veh.first_entry_s.unwrap_or(clock) - veh.depart_s;
            trips.push(TripRecord {
                vehicle_id: veh.id,
                origin: veh.origin,
                destination: veh.destination,
                route,
                depart_s: veh.depart_s,
                arrive_s: veh.arrive_s,
                origin_wait_s,
                free_flow_s,
                visits,
            });
        }
        trips.sort_by_key(|t| t.vehicle_id);
        let links = self
            .links
            .into_iter()
            .map(|l| LinkLog {
                link: l.rec.id,
                free_flow_s: l.rec.free_flow_time(),
                visits: l.visits,
            })
            .collect();
        SimResult {
            trips,
            links,
            event_count: self.event_count,
            clock_end_s: clock,
            horizon_s: self.horizon_s,
            not_generated,
            census: self.census,
            events: self.events,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Own {
    Ready,
    Later(f64),
    Red(SignalId),
}
