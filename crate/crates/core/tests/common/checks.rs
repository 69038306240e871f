//! Invariant checks over finished runs. Each returns a list of violations.

use std::collections::BTreeMap;

use campusflow::demand::TripRequest;
use campusflow::netgraph::{LinkId, NetworkGraph};
use campusflow::signals::SignalPlan;
use campusflow::simcore::SimResult;

const EPS: f64 = 1e-9;

/// Census conservation at every event, a recount of the census from trip
/// records, and FIFO order on every link.
pub fn conservation_and_fifo(res: &SimResult, trips: &[TripRequest]) -> Vec<String> {
    let mut out = Vec::new();
    if res.trips.len() + res.not_generated != trips.len() {
        out.push(format!(
            "{} records + {} not generated != {} trips",
            res.trips.len(),
            res.not_generated,
            trips.len()
        ));
    }
    let mut ids: Vec<u32> = res.trips.iter().map(|t| t.vehicle_id.0).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != res.trips.len() {
        out.push("a vehicle has two trip records".into());
    }
    if res.census.is_empty() {
        out.push("no census recorded".into());
    }
    for c in &res.census {
        if c.generated != c.waiting_at_origin + c.on_network + c.arrived {
            out.push(format!("census at {} not conserved: {c:?}", c.time_s));
        }
    }
    // Recount the state after the last event at each distinct instant.
    let mut last_at: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, c) in res.census.iter().enumerate() {
        last_at.insert(c.time_s.to_bits(), i);
    }
    for &i in last_at.values() {
        let c = &res.census[i];
        let t = c.time_s;
        let generated = res.trips.iter().filter(|r| r.depart_s <= t).count();
        let entered = res
            .trips
            .iter()
            .filter(|r| r.visits.first().is_some_and(|v| v.entry_s <= t))
            .count();
        let arrived = res
            .trips
            .iter()
            .filter(|r| r.arrive_s.is_some_and(|a| a <= t))
            .count();
        let expect = (generated, generated - entered, entered - arrived, arrived);
        let got = (c.generated, c.waiting_at_origin, c.on_network, c.arrived);
        if expect != got {
            out.push(format!("census at {t}: kernel {got:?}, recount {expect:?}"));
        }
    }
    for log in &res.links {
        let mut seen_open = false;
        for w in log.visits.windows(2) {
            if w[1].entry_s < w[0].entry_s {
                out.push(format!("link {}: entries out of order", log.link));
            }
            match (w[0].exit_s, w[1].exit_s) {
                (Some(a), Some(b)) if b < a => {
                    out.push(format!("link {}: vehicle {} overtook {}", log.link, w[1].vehicle, w[0].vehicle))
                }
                (None, Some(_)) => seen_open = true,
                _ => {}
            }
        }
        if seen_open {
            out.push(format!("link {}: exit after a vehicle still on the link", log.link));
        }
    }
    out
}

/// Sliding-window discharge bound and storage at entry, per link.
pub fn capacity_and_storage(res: &SimResult, net: &NetworkGraph) -> Vec<String> {
    let mut out = Vec::new();
    for log in &res.links {
        let l = net.link(log.link).unwrap();
        let cap = l.lanes as f64 * l.sat_flow_per_lane_vps;
        let exits: Vec<f64> = log.visits.iter().filter_map(|v| v.exit_s).collect();
        for i in 0..exits.len() {
            for j in i + 1..exits.len() {
                let count = (j - i + 1) as f64;
                let bound = (cap * (exits[j] - exits[i]) + EPS).floor() + 1.0;
                if count > bound {
                    out.push(format!(
                        "link {}: {count} exits in [{}, {}], bound {bound}",
                        log.link, exits[i], exits[j]
                    ));
                }
            }
        }
        let slots = (l.length_m * l.lanes as f64 * l.jam_density_per_lane_vpm + EPS).floor() as usize;
        let q = l.sat_flow_per_lane_vps;
        let w = l
            .backward_wave_speed_override
            .unwrap_or(q / (l.jam_density_per_lane_vpm - q / l.free_flow_speed_mps));
        for (m, v) in log.visits.iter().enumerate() {
            let present = log.visits[..m]
                .iter()
                .filter(|u| u.exit_s.is_none_or(|e| e > v.entry_s))
                .count();
            if present + 1 > slots {
                out.push(format!(
                    "link {}: entry at {} makes {} on a link storing {slots}",
                    log.link,
                    v.entry_s,
                    present + 1
                ));
            }
            if m >= slots {
                let freed = log.visits[m - slots].exit_s.map(|e| e + l.length_m / w);
                if freed.is_none_or(|f| v.entry_s + EPS < f) {
                    out.push(format!(
                        "link {}: entry at {} before the hole from {} arrives ({freed:?})",
                        log.link,
                        v.entry_s,
                        log.visits[m - slots].vehicle
                    ));
                }
            }
        }
    }
    out
}

/// Green test on `[start, start + green)` windows, evaluated exactly. Cycle
/// `k` starts at `offset + k * cycle`; phase time is measured from there.
pub fn green_exact(plan: &SignalPlan, movement: u64, t: f64) -> bool {
    let c = plan.cycle_s;
    let mut k = ((t - plan.offset_s) / c).floor();
    if t < plan.offset_s + k * c {
        k -= 1.0;
    } else if t - (plan.offset_s + k * c) >= c {
        k += 1.0;
    }
    let local = t - (plan.offset_s + k * c);
    let mut start = 0.0;
    for ph in &plan.phases {
        let end = start + ph.green_s;
        if ph.movements.iter().any(|m| m.0 == movement) && start <= local && local < end {
            return true;
        }
        start += ph.green_s + plan.lost_time_s;
    }
    false
}

/// Every exit through a signalized movement happens on green.
pub fn gating(res: &SimResult, net: &NetworkGraph, plans: &[SignalPlan]) -> (usize, Vec<String>) {
    let mut out = Vec::new();
    let mut checked = 0;
    for trip in &res.trips {
        for pair in trip.visits.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let Some(t) = a.exit_s else { continue };
            let m = net.movement_between(a.link, b.link).unwrap();
            let node = net.link(LinkId(a.link.0)).unwrap().to_node;
            if let Some(plan) = plans.iter().find(|p| p.node == node) {
                checked += 1;
                if !green_exact(plan, m.id.0, t) {
                    out.push(format!(
                        "vehicle {} left link {} through movement {} at {t} on red",
                        trip.vehicle_id, a.link, m.id
                    ));
                }
            }
        }
    }
    (checked, out)
}
