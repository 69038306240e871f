//! Seeded random small instances for property checks.

use campusflow::demand::{build_trips, DemandMode, DemandProfile, OdPair, TripRequest};
use campusflow::netgraph::{LinkRecord, MovementId, NetworkGraph, NodeId, NodeRecord, TurnMovement};
use campusflow::signals::{CrossingWindow, Phase, SignalId, SignalPlan, TrafficControl};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub net: NetworkGraph,
    pub trips: Vec<TripRequest>,
    pub plans: Vec<SignalPlan>,
    pub crossings: Vec<CrossingWindow>,
    pub horizon_s: f64,
}

impl Instance {
    pub fn control(&self) -> TrafficControl {
        TrafficControl::new(&self.net, &self.plans, &self.crossings).unwrap()
    }
}

fn random_link(rng: &mut ChaCha8Rng, id: u64, from: u64, to: u64) -> LinkRecord {
    let length = rng.random_range(20.0..300.0);
    let speed: f64 = rng.random_range(5.0..20.0);
    let lanes = rng.random_range(1..=3);
    let jam = rng.random_range(0.1..0.2);
    let sat_max = (0.9 * speed * jam).min(0.6);
    let sat = rng.random_range(0.25..sat_max);
    let mut l = LinkRecord::new(id, from, to, length, speed, lanes)
        .with_jam_density(jam)
        .with_sat_flow(sat);
    if rng.random_bool(0.2) {
        l = l.with_backward_wave_speed(rng.random_range(3.0..8.0));
    }
    l
}

/// Random network with at most eight nodes, random turn factors and demand.
/// With `signalized`, most junctions with incoming turns get a random plan
/// and some movements get crossing windows.
pub fn instance(seed: u64, signalized: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8u64);
    let mut net = NetworkGraph::new();
    for i in 1..=n {
        net.add_node(NodeRecord::new(
            i,
            77.2 + rng.random_range(0.0..0.01),
            28.68 + rng.random_range(0.0..0.01),
        ))
        .unwrap();
    }
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        pairs.insert((i, i + 1));
        if rng.random_bool(0.5) {
            pairs.insert((i + 1, i));
        }
    }
    for _ in 0..rng.random_range(0..=2 * n) {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            pairs.insert((a, b));
        }
    }
    for (k, (a, b)) in pairs.iter().enumerate() {
        net.add_link(random_link(&mut rng, k as u64 + 1, *a, *b)).unwrap();
    }
    let links: Vec<LinkRecord> = net.links().cloned().collect();
    let mut mid = 1;
    for inl in &links {
        for out in &links {
            if out.from_node == inl.to_node && out.to_node != inl.from_node {
                let f = if rng.random_bool(0.3) {
                    rng.random_range(0.4..1.0)
                } else {
                    1.0
                };
                net.add_movement(TurnMovement::new(mid, inl.id.0, out.id.0).with_capacity_factor(f))
                    .unwrap();
                mid += 1;
            }
        }
    }

    let mut ods = Vec::new();
    for _ in 0..rng.random_range(1..=4) {
        let o = rng.random_range(1..=n);
        let d = rng.random_range(1..=n);
        if o == d || net.shortest_path(NodeId(o), NodeId(d)).is_none() {
            continue;
        }
        let start = rng.random_range(0.0..200.0);
        let end = start + rng.random_range(10.0..200.0);
        let rate = rng.random_range(0.02..0.4);
        ods.push(OdPair::new(o, d, DemandProfile::constant(start, end, rate).unwrap()));
    }
    if ods.is_empty() {
        ods.push(OdPair::new(1, 2, DemandProfile::constant(0.0, 30.0, 0.2).unwrap()));
    }
    let trips = build_trips(&net, &ods, DemandMode::Deterministic).unwrap();

    let mut plans = Vec::new();
    let mut crossings = Vec::new();
    if signalized {
        for node in 1..=n {
            let mut ms: Vec<MovementId> = net.movements_at(NodeId(node)).map(|m| m.id).collect();
            if ms.is_empty() || !rng.random_bool(0.8) {
                continue;
            }
            ms.shuffle(&mut rng);
            let k = rng.random_range(1..=ms.len().min(3));
            let mut phases: Vec<Vec<u64>> = vec![Vec::new(); k];
            for (i, m) in ms.iter().enumerate() {
                let slot = if i < k { i } else { rng.random_range(0..k) };
                phases[slot].push(m.0);
            }
            let lost = if rng.random_bool(0.5) { rng.random_range(0.0..4.0) } else { 0.0 };
            let phases: Vec<Phase> = phases
                .into_iter()
                .map(|ms| Phase::new(rng.random_range(5.0..40.0), ms))
                .collect();
            let cycle = phases.iter().map(|p| p.green_s).sum::<f64>() + lost * phases.len() as f64;
            plans.push(SignalPlan {
                signal_id: SignalId(node),
                node: NodeId(node),
                cycle_s: cycle,
                offset_s: rng.random_range(0.0..cycle),
                lost_time_s: lost,
                phases,
            });
        }
        for m in net.movements() {
            if rng.random_bool(0.15) {
                let period = rng.random_range(20.0..90.0);
                crossings.push(CrossingWindow {
                    movement: m.id,
                    period_s: period,
                    active_s: rng.random_range(1.0..period * 0.5),
                    factor: rng.random_range(0.2..1.0),
                });
            }
        }
    }
    Instance {
        seed,
        net,
        trips,
        plans,
        crossings,
        horizon_s: rng.random_range(300.0..1500.0),
    }
}
