//! Fixed-step reference simulator.
//!
//! Advances a clock in steps of `dt` and, at every step, moves any vehicle
//! whose constraints hold, repeating until nothing else can move. It shares
//! no code with the event kernel: green tests, capacity factors, storage
//! slots and wave speeds are recomputed here from the raw records.

use std::collections::{BTreeMap, VecDeque};

use campusflow::demand::TripRequest;
use campusflow::netgraph::{LinkRecord, NetworkGraph};
use campusflow::signals::{CrossingWindow, SignalPlan};

const EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct FactorWindow {
    pub movement: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub factor: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Control {
    pub plans: Vec<SignalPlan>,
    pub crossings: Vec<CrossingWindow>,
    pub overrides: Vec<FactorWindow>,
}

/// Entry and exit instants keyed by (vehicle, link).
#[derive(Clone, Debug, Default)]
pub struct OracleRun {
    pub visits: BTreeMap<(u32, u64), (f64, Option<f64>)>,
    pub arrivals: BTreeMap<u32, f64>,
}

struct Link {
    length: f64,
    speed: f64,
    slots: usize,
    wave_time: f64,
    capacity: f64,
    /// Vehicle indices in entry order.
    entrants: Vec<usize>,
    exits: Vec<f64>,
}

impl Link {
    fn from_record(r: &LinkRecord) -> Self {
        let lanes = r.lanes as f64;
        let q = r.sat_flow_per_lane_vps;
        let kj = r.jam_density_per_lane_vpm;
        let w = r
            .backward_wave_speed_override
            .unwrap_or(q / (kj - q / r.free_flow_speed_mps));
        Link {
            length: r.length_m,
            speed: r.free_flow_speed_mps,
            slots: (r.length_m * lanes * kj + EPS).floor() as usize,
            wave_time: r.length_m / w,
            capacity: lanes * q,
            entrants: Vec::new(),
            exits: Vec::new(),
        }
    }

    fn head(&self) -> Option<usize> {
        self.entrants.get(self.exits.len()).copied()
    }

    fn admits(&self, t: f64) -> bool {
        let m = self.entrants.len() + 1;
        if m <= self.slots {
            return true;
        }
        match self.exits.get(m - self.slots - 1) {
            Some(e) => e + self.wave_time <= t + EPS,
            None => false,
        }
    }
}

fn plan_green(plan: &SignalPlan, m: u64, t: f64) -> bool {
    let local = (t - plan.offset_s).rem_euclid(plan.cycle_s);
    let mut start = 0.0;
    for ph in &plan.phases {
        let end = start + ph.green_s;
        if ph.movements.iter().any(|x| x.0 == m) && local + EPS >= start && local + EPS < end {
            return true;
        }
        start += ph.green_s + plan.lost_time_s;
    }
    false
}

impl Control {
    fn green(&self, net: &NetworkGraph, m: u64, t: f64) -> bool {
        let mv = net.movements().find(|x| x.id.0 == m).unwrap();
        let node = net.link(mv.out_link).unwrap().from_node;
        match self.plans.iter().find(|p| p.node == node) {
            Some(p) => plan_green(p, m, t),
            None => true,
        }
    }

    fn factor(&self, net: &NetworkGraph, m: u64, t: f64) -> f64 {
        let base = net.movements().find(|x| x.id.0 == m).unwrap().capacity_factor;
        let mut f = self
            .overrides
            .iter()
            .find(|o| o.movement == m && o.start_s <= t + EPS && t + EPS < o.end_s)
            .map_or(base, |o| o.factor);
        for c in self.crossings.iter().filter(|c| c.movement.0 == m) {
            if (t + EPS).rem_euclid(c.period_s) < c.active_s {
                f *= c.factor;
            }
        }
        f
    }
}

struct Veh {
    id: u32,
    depart: f64,
    route: Vec<u64>,
    /// Index of the link currently occupied; `None` while at the origin.
    pos: Option<usize>,
    entry: f64,
    ready_since: Option<f64>,
    done: bool,
}

/// Runs `trips` on `net` with time step `dt` (which should divide 1 s).
pub fn simulate(
    net: &NetworkGraph,
    trips: &[TripRequest],
    control: &Control,
    horizon_s: f64,
    dt: f64,
) -> OracleRun {
    let per_second = (1.0 / dt).round();
    let mut links: BTreeMap<u64, Link> = net
        .links()
        .map(|l| (l.id.0, Link::from_record(l)))
        .collect();
    let mut vehs: Vec<Veh> = trips
        .iter()
        .map(|t| Veh {
            id: t.vehicle_id.0,
            depart: t.departure_s,
            route: t.route.iter().map(|l| l.0).collect(),
            pos: None,
            entry: 0.0,
            ready_since: None,
            done: false,
        })
        .collect();
    let mut order: Vec<usize> = (0..vehs.len()).collect();
    order.sort_by(|&a, &b| {
        vehs[a]
            .depart
            .total_cmp(&vehs[b].depart)
            .then(vehs[a].id.cmp(&vehs[b].id))
    });
    let mut released = 0;
    let mut buffers: BTreeMap<u64, VecDeque<usize>> = BTreeMap::new();
    let mut run = OracleRun::default();

    let steps = (horizon_s * per_second).floor() as u64;
    for k in 0..=steps {
        let t = k as f64 / per_second;
        while released < order.len() && vehs[order[released]].depart <= t + EPS {
            let v = order[released];
            let origin = net.link(campusflow::netgraph::LinkId(vehs[v].route[0])).unwrap().from_node.0;
            buffers.entry(origin).or_default().push_back(v);
            released += 1;
        }
        loop {
            // Heads that satisfy their own constraints at t.
            let mut heads: Vec<usize> = Vec::new();
            for q in buffers.values() {
                if let Some(&v) = q.front() {
                    heads.push(v);
                }
            }
            for (id, l) in &links {
                if let Some(v) = l.head() {
                    debug_assert_eq!(vehs[v].route[vehs[v].pos.unwrap()], *id);
                    heads.push(v);
                }
            }
            let mut ready = Vec::new();
            for v in heads {
                let ok = own_ready(net, control, &links, &vehs[v], t);
                if ok {
                    if vehs[v].ready_since.is_none() {
                        vehs[v].ready_since = Some(t);
                    }
                    ready.push(v);
                } else {
                    vehs[v].ready_since = None;
                }
            }
            ready.sort_by(|&a, &b| {
                vehs[a]
                    .ready_since
                    .unwrap()
                    .total_cmp(&vehs[b].ready_since.unwrap())
                    .then(vehs[a].id.cmp(&vehs[b].id))
            });
            let mut moved = false;
            for v in ready {
                let next = match vehs[v].pos {
                    None => Some(0),
                    Some(i) if i + 1 < vehs[v].route.len() => Some(i + 1),
                    Some(_) => None,
                };
                if let Some(n) = next {
                    if !links[&vehs[v].route[n]].admits(t) {
                        continue;
                    }
                }
                let id = vehs[v].id;
                match vehs[v].pos {
                    None => {
                        let lid = vehs[v].route[0];
                        let origin = net.link(campusflow::netgraph::LinkId(lid)).unwrap().from_node.0;
                        buffers.get_mut(&origin).unwrap().pop_front();
                    }
                    Some(i) => {
                        let lid = vehs[v].route[i];
                        links.get_mut(&lid).unwrap().exits.push(t);
                        run.visits.get_mut(&(id, lid)).unwrap().1 = Some(t);
                    }
                }
                match next {
                    Some(n) => {
                        let lid = vehs[v].route[n];
                        links.get_mut(&lid).unwrap().entrants.push(v);
                        run.visits.insert((id, lid), (t, None));
                        vehs[v].pos = Some(n);
                        vehs[v].entry = t;
                    }
                    None => {
                        vehs[v].done = true;
                        run.arrivals.insert(id, t);
                    }
                }
                vehs[v].ready_since = None;
                moved = true;
            }
            if !moved {
                break;
            }
        }
        if vehs.iter().all(|v| v.done) {
            break;
        }
    }
    run
}

fn own_ready(net: &NetworkGraph, control: &Control, links: &BTreeMap<u64, Link>, v: &Veh, t: f64) -> bool {
    let Some(i) = v.pos else {
        return true;
    };
    let lid = v.route[i];
    let l = &links[&lid];
    if v.entry + l.length / l.speed > t + EPS {
        return false;
    }
    let movement = v.route.get(i + 1).map(|&out| {
        net.movements()
            .find(|m| m.in_link.0 == lid && m.out_link.0 == out)
            .unwrap()
            .id
            .0
    });
    if let Some(&last) = l.exits.last() {
        let f = movement.map_or(1.0, |m| control.factor(net, m, t));
        if last + 1.0 / (l.capacity * f) > t + EPS {
            return false;
        }
    }
    match movement {
        Some(m) => control.green(net, m, t),
        None => true,
    }
}

/// Largest absolute difference between kernel and oracle entry/exit times,
/// or infinity when the two disagree on which visits happened.
pub fn max_discrepancy(kernel: &campusflow::simcore::SimResult, oracle: &OracleRun) -> f64 {
    let mut worst: f64 = 0.0;
    let mut seen = 0;
    for log in &kernel.links {
        for v in &log.visits {
            seen += 1;
            let Some(&(entry, exit)) = oracle.visits.get(&(v.vehicle.0, log.link.0)) else {
                return f64::INFINITY;
            };
            worst = worst.max((entry - v.entry_s).abs());
            match (exit, v.exit_s) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    if seen != oracle.visits.len() {
        return f64::INFINITY;
    }
    worst
}
