//! Small hand-checkable networks.

use campusflow::demand::{TripRequest, VehicleId};
use campusflow::netgraph::{
    LinkId, LinkRecord, MovementId, NetworkGraph, NodeId, NodeRecord, TurnMovement,
};
use campusflow::signals::{CrossingWindow, Phase, SignalId, SignalPlan, TimeWindow, TrafficControl};
use campusflow::simcore::{run_simulation, SimOptions, SimResult};

use super::oracle::{self, FactorWindow};

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub net: NetworkGraph,
    pub trips: Vec<TripRequest>,
    pub plans: Vec<SignalPlan>,
    pub crossings: Vec<CrossingWindow>,
    /// (window, movement, factor)
    pub overrides: Vec<(TimeWindow, u64, f64)>,
    pub horizon_s: f64,
}

impl Fixture {
    pub fn control(&self) -> TrafficControl {
        let mut ctl = TrafficControl::new(&self.net, &self.plans, &self.crossings).unwrap();
        for (w, m, f) in &self.overrides {
            ctl.add_capacity_override(*w, MovementId(*m), *f).unwrap();
        }
        ctl
    }

    pub fn oracle_control(&self) -> oracle::Control {
        oracle::Control {
            plans: self.plans.clone(),
            crossings: self.crossings.clone(),
            overrides: self
                .overrides
                .iter()
                .map(|(w, m, f)| FactorWindow {
                    movement: *m,
                    start_s: w.start_s,
                    end_s: w.end_s,
                    factor: *f,
                })
                .collect(),
        }
    }

    pub fn run(&self) -> SimResult {
        run_simulation(&self.net, &self.trips, &self.control(), self.horizon_s, SimOptions::full())
            .unwrap()
    }

    pub fn run_oracle(&self, dt: f64) -> oracle::OracleRun {
        oracle::simulate(&self.net, &self.trips, &self.oracle_control(), self.horizon_s, dt)
    }
}

/// Straight chain: link `i` joins node `i` to node `i + 1`.
pub fn chain(links: Vec<LinkRecord>) -> NetworkGraph {
    let n = links.len() as u64;
    let mut net = NetworkGraph::new();
    for i in 1..=n + 1 {
        net.add_node(NodeRecord::new(i, 77.2 + 0.001 * i as f64, 28.68)).unwrap();
    }
    for l in links {
        net.add_link(l).unwrap();
    }
    for i in 1..n {
        net.add_movement(TurnMovement::new(i, i, i + 1)).unwrap();
    }
    net
}

/// Trips along a fixed route, numbered from `first_id`.
pub fn trips_on(route: &[u64], departures: &[f64], first_id: u32, net: &NetworkGraph) -> Vec<TripRequest> {
    let first = net.link(LinkId(route[0])).unwrap().from_node;
    let last = net.link(LinkId(*route.last().unwrap())).unwrap().to_node;
    departures
        .iter()
        .enumerate()
        .map(|(k, &t)| TripRequest {
            vehicle_id: VehicleId(first_id + k as u32),
            od_index: 0,
            origin: first,
            destination: last,
            departure_s: t,
            route: route.iter().map(|&l| LinkId(l)).collect(),
        })
        .collect()
}

/// Merges several trip lists and renumbers them by (departure, list order).
pub fn merge_trips(lists: Vec<Vec<TripRequest>>) -> Vec<TripRequest> {
    let mut all: Vec<TripRequest> = lists.into_iter().flatten().collect();
    all.sort_by(|a, b| a.departure_s.total_cmp(&b.departure_s));
    for (k, t) in all.iter_mut().enumerate() {
        t.vehicle_id = VehicleId(k as u32 + 1);
    }
    all
}

pub fn every(start: f64, headway: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start + headway * k as f64).collect()
}

/// One phase green on `[green_from, green_from + green)` of each cycle.
pub fn window_plan(signal: u64, node: u64, movement: u64, cycle: f64, green_from: f64, green: f64) -> SignalPlan {
    SignalPlan {
        signal_id: SignalId(signal),
        node: NodeId(node),
        cycle_s: cycle,
        offset_s: green_from,
        lost_time_s: cycle - green,
        phases: vec![Phase::new(green, [movement])],
    }
}

pub fn free_flow() -> Fixture {
    let net = chain(vec![LinkRecord::new(1, 1, 2, 100.0, 10.0, 1)]);
    let trips = trips_on(&[1], &[0.0], 1, &net);
    Fixture {
        name: "free_flow",
        net,
        trips,
        plans: vec![],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 100.0,
    }
}

pub fn discharge() -> Fixture {
    let net = chain(vec![LinkRecord::new(1, 1, 2, 100.0, 10.0, 1)]);
    let trips = trips_on(&[1], &[0.0; 5], 1, &net);
    Fixture {
        name: "discharge",
        net,
        trips,
        plans: vec![],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 100.0,
    }
}

pub fn red_stop() -> Fixture {
    let net = chain(vec![
        LinkRecord::new(1, 1, 2, 100.0, 10.0, 1),
        LinkRecord::new(2, 2, 3, 100.0, 10.0, 1),
    ]);
    let trips = trips_on(&[1, 2], &[0.0], 1, &net);
    Fixture {
        name: "red_stop",
        net,
        trips,
        plans: vec![window_plan(1, 2, 1, 60.0, 15.0, 15.0)],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 100.0,
    }
}

/// Upstream link A (1), short downstream link B (2) held red until t = 100,
/// then an exit link. B stores two vehicles and refills a hole in 10 s.
pub fn spillback() -> Fixture {
    let net = chain(vec![
        LinkRecord::new(1, 1, 2, 100.0, 10.0, 1),
        LinkRecord::new(2, 2, 3, 50.0, 10.0, 1)
            .with_jam_density(0.056)
            .with_backward_wave_speed(5.0),
        LinkRecord::new(3, 3, 4, 100.0, 10.0, 1),
    ]);
    let trips = trips_on(&[1, 2, 3], &[0.0; 5], 1, &net);
    Fixture {
        name: "spillback",
        net,
        trips,
        plans: vec![window_plan(1, 3, 2, 1000.0, 100.0, 900.0)],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 1000.0,
    }
}

pub fn origin_storage() -> Fixture {
    let net = chain(vec![LinkRecord::new(1, 1, 2, 50.0, 10.0, 1)
        .with_jam_density(0.056)
        .with_backward_wave_speed(5.0)]);
    let trips = trips_on(&[1], &[0.0; 3], 1, &net);
    Fixture {
        name: "origin_storage",
        net,
        trips,
        plans: vec![],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 100.0,
    }
}

/// Two one-link approaches crossing at node 3.
///
/// Link 1 (west, two lanes) feeds link 3 through movement 1; link 2 (north)
/// feeds link 4 through movement 2. The signal at node 3 runs a 60 s cycle
/// with phase 1 serving movement 1 and phase 2 serving movement 2.
pub fn cross_network() -> NetworkGraph {
    let mut net = NetworkGraph::new();
    let coords = [(77.200, 28.680), (77.202, 28.682), (77.202, 28.680), (77.204, 28.680), (77.202, 28.678)];
    for (i, (lon, lat)) in coords.iter().enumerate() {
        let mut n = NodeRecord::new(i as u64 + 1, *lon, *lat);
        if i == 2 {
            n = n.signalized();
        }
        net.add_node(n).unwrap();
    }
    net.add_link(LinkRecord::new(1, 1, 3, 200.0, 10.0, 2)).unwrap();
    net.add_link(LinkRecord::new(2, 2, 3, 200.0, 10.0, 1)).unwrap();
    net.add_link(LinkRecord::new(3, 3, 4, 200.0, 10.0, 2)).unwrap();
    net.add_link(LinkRecord::new(4, 3, 5, 200.0, 10.0, 1)).unwrap();
    net.add_movement(TurnMovement::new(1, 1, 3)).unwrap();
    net.add_movement(TurnMovement::new(2, 2, 4)).unwrap();
    net
}

pub fn cross_plan(green1: f64, green2: f64) -> SignalPlan {
    SignalPlan {
        signal_id: SignalId(1),
        node: NodeId(3),
        cycle_s: green1 + green2,
        offset_s: 0.0,
        lost_time_s: 0.0,
        phases: vec![Phase::new(green1, [1]), Phase::new(green2, [2])],
    }
}

/// Cross intersection with constant arrivals over `[0, 300)`.
pub fn cross(heavy_vps: f64, light_vps: f64, greens: (f64, f64)) -> Fixture {
    let net = cross_network();
    let a = (300.0 * heavy_vps).round() as usize;
    let b = (300.0 * light_vps).round() as usize;
    let trips = merge_trips(vec![
        trips_on(&[1, 3], &every(0.0, 1.0 / heavy_vps, a), 1, &net),
        trips_on(&[2, 4], &every(0.0, 1.0 / light_vps, b), 1, &net),
    ]);
    Fixture {
        name: "cross",
        net,
        trips,
        plans: vec![cross_plan(greens.0, greens.1)],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 1200.0,
    }
}

/// Two approaches merging into a short two-lane link that discharges into an
/// exit link. Movement 1 carries a pedestrian crossing window, movement 2 a
/// reduced turn factor, and movement 3 a temporary capacity cut.
pub fn merge() -> Fixture {
    let mut net = NetworkGraph::new();
    for i in 1..=5u64 {
        net.add_node(NodeRecord::new(i, 77.2 + 0.001 * i as f64, 28.68)).unwrap();
    }
    net.add_link(LinkRecord::new(1, 1, 3, 150.0, 10.0, 1)).unwrap();
    net.add_link(LinkRecord::new(2, 2, 3, 100.0, 10.0, 1)).unwrap();
    net.add_link(
        LinkRecord::new(3, 3, 4, 40.0, 10.0, 1)
            .with_jam_density(0.1)
            .with_backward_wave_speed(4.0),
    )
    .unwrap();
    net.add_link(LinkRecord::new(4, 4, 5, 100.0, 10.0, 1)).unwrap();
    net.add_movement(TurnMovement::new(1, 1, 3)).unwrap();
    net.add_movement(TurnMovement::new(2, 2, 3).with_capacity_factor(0.5)).unwrap();
    net.add_movement(TurnMovement::new(3, 3, 4)).unwrap();
    let trips = merge_trips(vec![
        trips_on(&[1, 3, 4], &every(0.0, 2.5, 30), 1, &net),
        trips_on(&[2, 3, 4], &every(1.0, 4.0, 20), 1, &net),
    ]);
    Fixture {
        name: "merge",
        net,
        trips,
        plans: vec![],
        crossings: vec![CrossingWindow {
            movement: MovementId(1),
            period_s: 40.0,
            active_s: 10.0,
            factor: 0.25,
        }],
        overrides: vec![(TimeWindow::new(30.0, 60.0), 3, 0.5)],
        horizon_s: 600.0,
    }
}

/// A signalized chain whose travel times, headways and wave times fall off
/// any decimal grid.
pub fn detuned() -> Fixture {
    let net = chain(vec![
        LinkRecord::new(1, 1, 2, 137.0, 11.1, 1).with_sat_flow(0.45),
        LinkRecord::new(2, 2, 3, 61.0, 9.7, 1)
            .with_sat_flow(0.45)
            .with_jam_density(0.07),
        LinkRecord::new(3, 3, 4, 90.0, 13.3, 1).with_sat_flow(0.45),
    ]);
    let trips = trips_on(&[1, 2, 3], &every(0.0, 1.3, 12), 1, &net);
    Fixture {
        name: "detuned",
        net,
        trips,
        plans: vec![window_plan(1, 3, 2, 47.0, 3.0, 21.0)],
        crossings: vec![],
        overrides: vec![],
        horizon_s: 600.0,
    }
}

pub fn oracle_fixtures() -> Vec<Fixture> {
    let mut symmetric = cross(0.1, 0.1, (30.0, 30.0));
    symmetric.name = "cross_symmetric";
    vec![
        free_flow(),
        discharge(),
        red_stop(),
        spillback(),
        origin_storage(),
        symmetric,
        merge(),
        detuned(),
    ]
}
