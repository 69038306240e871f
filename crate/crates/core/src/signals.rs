//! Fixed-time signal plans, pedestrian crossing windows, and the combined
//! time-query interface the kernel uses.
//!
//! Green windows are half-open: a movement is green at the instant its phase
//! starts and red at the instant it ends.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;
use crate::netgraph::{MovementId, NetworkGraph, NodeId};

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SignalId(pub u64);

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub green_s: f64,
    pub movements: BTreeSet<MovementId>,
}

impl Phase {
    pub fn new(green_s: f64, movements: impl IntoIterator<Item = u64>) -> Self {
        Phase {
            green_s,
            movements: movements.into_iter().map(MovementId).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub signal_id: SignalId,
    pub node: NodeId,
    pub cycle_s: f64,
    pub offset_s: f64,
    #[serde(default)]
    pub lost_time_s: f64,
    pub phases: Vec<Phase>,
}

/// Half-open time interval `[start_s, end_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        TimeWindow { start_s, end_s }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }

    pub fn shifted(&self, by: f64) -> Self {
        TimeWindow::new(self.start_s + by, self.end_s + by)
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal {signal}: movement {movement} has no green phase (permanent red)")]
    PermanentRed { signal: SignalId, movement: MovementId },
    #[error("signal {signal}: movement {movement} is not at junction {node}")]
    NotAtJunction {
        signal: SignalId,
        movement: MovementId,
        node: NodeId,
    },
    #[error("signal {0} is not defined")]
    UnknownSignal(SignalId),
    #[error("signal {signal} is invalid: {issues}")]
    InvalidPlan { signal: SignalId, issues: String },
    #[error("duplicate plan for signal {0}")]
    DuplicateSignal(SignalId),
    #[error("junction {node} has two plans ({first}, {second})")]
    DuplicateJunction {
        node: NodeId,
        first: SignalId,
        second: SignalId,
    },
    #[error("signal {signal}: override windows overlap")]
    OverlappingOverride { signal: SignalId },
    #[error("override for signal {signal} targets junction {node}, base plan uses {base}")]
    OverrideNodeMismatch {
        signal: SignalId,
        node: NodeId,
        base: NodeId,
    },
    #[error("crossing window on movement {movement} is invalid: {reason}")]
    InvalidCrossing { movement: MovementId, reason: String },
    #[error("capacity override on movement {movement}: {reason}")]
    InvalidCapacityOverride { movement: MovementId, reason: String },
    #[error("invalid signal document: {0}")]
    Json(#[from] serde_json::Error),
}

/// One plan problem. Warnings do not make a plan unusable.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanIssue {
    pub warning: bool,
    pub message: String,
}

impl PlanIssue {
    fn error(message: String) -> Self {
        PlanIssue {
            warning: false,
            message,
        }
    }

    fn warning(message: String) -> Self {
        PlanIssue {
            warning: true,
            message,
        }
    }
}

impl fmt::Display for PlanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = if self.warning { "warning" } else { "error" };
        write!(f, "{level}: {}", self.message)
    }
}

/// Checks the plan's own invariants. An empty report means the plan is usable.
pub fn validate_plan(plan: &SignalPlan) -> Vec<PlanIssue> {
    let mut out = Vec::new();
    if !(plan.cycle_s > 0.0 && plan.cycle_s.is_finite()) {
        out.push(PlanIssue::error(format!(
            "cycle {} must be positive",
            plan.cycle_s
        )));
    }
    if !(0.0..plan.cycle_s).contains(&plan.offset_s) {
        out.push(PlanIssue::error(format!(
            "offset {} outside [0, {})",
            plan.offset_s, plan.cycle_s
        )));
    }
    if !(plan.lost_time_s >= 0.0) {
        out.push(PlanIssue::error(format!(
            "lost time {} is negative",
            plan.lost_time_s
        )));
    }
    if plan.phases.is_empty() {
        out.push(PlanIssue::error("plan has no phases".into()));
    }
    for (i, p) in plan.phases.iter().enumerate() {
        if !(p.green_s > 0.0) {
            out.push(PlanIssue::error(format!(
                "phase {} green {} must be positive",
                i + 1,
                p.green_s
            )));
        }
        if p.movements.is_empty() {
            out.push(PlanIssue::error(format!("phase {} has no movements", i + 1)));
        }
    }
    let total = plan.phases.iter().map(|p| p.green_s).sum::<f64>()
        + plan.phases.len() as f64 * plan.lost_time_s;
    if (total - plan.cycle_s).abs() > defaults::PLAN_SUM_TOLERANCE_S {
        out.push(PlanIssue::error(format!(
            "greens plus lost time sum to {total}, cycle is {}",
            plan.cycle_s
        )));
    }
    out
}

/// [`validate_plan`] plus checks against the junction the plan controls.
pub fn validate_plan_in(plan: &SignalPlan, net: &NetworkGraph) -> Vec<PlanIssue> {
    let mut out = validate_plan(plan);
    if net.node(plan.node).is_none() {
        out.push(PlanIssue::error(format!("junction {} not in network", plan.node)));
        return out;
    }
    let at_node: BTreeSet<MovementId> = net.movements_at(plan.node).map(|m| m.id).collect();
    for (i, p) in plan.phases.iter().enumerate() {
        for m in &p.movements {
            if !at_node.contains(m) {
                out.push(PlanIssue::error(format!(
                    "phase {} lists movement {m}, which is not at junction {}",
                    i + 1,
                    plan.node
                )));
            }
        }
    }
    for m in &at_node {
        if !plan.phases.iter().any(|p| p.movements.contains(m)) {
            out.push(PlanIssue::warning(format!(
                "movement {m} at junction {} is in no phase and stays red",
                plan.node
            )));
        }
    }
    out
}

impl SignalPlan {
    /// Start of each phase's green window relative to the cycle start.
    pub fn phase_starts(&self) -> Vec<f64> {
        let mut s = 0.0;
        self.phases
            .iter()
            .map(|p| {
                let start = s;
                s += p.green_s + self.lost_time_s;
                start
            })
            .collect()
    }

    /// Start of the cycle containing `t` and the position within it.
    fn locate(&self, t: f64) -> (f64, f64) {
        let c = self.cycle_s;
        let mut k = ((t - self.offset_s) / c).floor();
        let mut start = self.offset_s + k * c;
        if t < start {
            k -= 1.0;
            start = self.offset_s + k * c;
        } else if t - start >= c {
            k += 1.0;
            start = self.offset_s + k * c;
        }
        (start, t - start)
    }

    /// Index of the phase showing green at `t`, or `None` during lost time.
    pub fn active_phase(&self, t: f64) -> Option<usize> {
        let (_, tau) = self.locate(t);
        let mut s = 0.0;
        for (i, p) in self.phases.iter().enumerate() {
            if tau >= s && tau < s + p.green_s {
                return Some(i);
            }
            s += p.green_s + self.lost_time_s;
        }
        None
    }

    pub fn serves(&self, m: MovementId) -> bool {
        self.phases.iter().any(|p| p.movements.contains(&m))
    }

    pub fn is_green(&self, m: MovementId, t: f64) -> bool {
        self.active_phase(t)
            .is_some_and(|i| self.phases[i].movements.contains(&m))
    }

    /// Earliest `t' >= t` at which `m` is green.
    pub fn next_green_start(&self, m: MovementId, t: f64) -> Result<f64, SignalError> {
        if self.is_green(m, t) {
            return Ok(t);
        }
        let serving: Vec<usize> = (0..self.phases.len())
            .filter(|i| self.phases[*i].movements.contains(&m))
            .collect();
        if serving.is_empty() {
            return Err(SignalError::PermanentRed {
                signal: self.signal_id,
                movement: m,
            });
        }
        let starts = self.phase_starts();
        let (cycle_start, tau) = self.locate(t);
        let candidate = serving
            .iter()
            .map(|&i| starts[i])
            .filter(|s| *s > tau)
            .map(|s| cycle_start + s)
            .reduce(f64::min)
            .unwrap_or_else(|| cycle_start + self.cycle_s + starts[serving[0]]);
        Ok(settle(candidate.max(t), |x| self.is_green(m, x)))
    }

    /// Next instant strictly after `t` at which the active phase changes.
    pub fn next_boundary_after(&self, t: f64) -> f64 {
        let starts = self.phase_starts();
        let (cycle_start, _) = self.locate(t);
        let mut best = f64::INFINITY;
        for base in [cycle_start, cycle_start + self.cycle_s] {
            for (i, p) in self.phases.iter().enumerate() {
                let on = base + starts[i];
                let off = on + p.green_s;
                if on > t && on < best {
                    best = settle(on, |x| self.active_phase(x) == Some(i));
                }
                if off > t && off < best {
                    best = settle(off, |x| self.active_phase(x) != Some(i));
                }
            }
        }
        best
    }

    /// Offset moved into `[0, cycle)`, logging a warning when it changes.
    pub fn normalized(mut self) -> Self {
        let o = self.offset_s.rem_euclid(self.cycle_s);
        if o != self.offset_s {
            log::warn!(
                "signal {}: offset {} normalized to {o}",
                self.signal_id,
                self.offset_s
            );
            self.offset_s = o;
        }
        self
    }
}

/// Moves `t` up by a few ulps until `ok` holds; window edges computed as
/// `cycle_start + s` may land a rounding step short of the true edge.
fn settle(mut t: f64, ok: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..64 {
        if ok(t) {
            return t;
        }
        t = t.next_up();
    }
    t
}

/// Periodic capacity reduction on one movement (pedestrian crossing activity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingWindow {
    pub movement: MovementId,
    pub period_s: f64,
    pub active_s: f64,
    pub factor: f64,
}

impl CrossingWindow {
    pub fn check(&self) -> Result<(), SignalError> {
        let reason = if !(self.period_s > 0.0) {
            Some("period must be positive")
        } else if !(self.active_s >= 0.0 && self.active_s <= self.period_s) {
            Some("active time must lie in [0, period]")
        } else if !(0.0..1.0).contains(&self.factor) {
            Some("factor must lie in [0, 1)")
        } else {
            None
        };
        match reason {
            Some(r) => Err(SignalError::InvalidCrossing {
                movement: self.movement,
                reason: r.into(),
            }),
            None => Ok(()),
        }
    }

    /// Next instant strictly after `t` where the window switches on or off.
    fn next_edge_after(&self, t: f64) -> f64 {
        let k = (t / self.period_s).floor();
        let edges = [
            k * self.period_s + self.active_s,
            (k + 1.0) * self.period_s,
            (k + 1.0) * self.period_s + self.active_s,
            (k + 2.0) * self.period_s,
        ];
        edges
            .into_iter()
            .filter(|e| *e > t)
            .reduce(f64::min)
            .unwrap_or_else(|| t.next_up())
    }
}

/// Capacity multiplier from a crossing window at time `t`.
pub fn crossing_capacity_factor(w: &CrossingWindow, t: f64) -> f64 {
    if t.rem_euclid(w.period_s) < w.active_s {
        w.factor
    } else {
        1.0
    }
}

/// Signal document: either a bare plan array or plans plus crossing windows.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SignalDocument {
    Plans(Vec<SignalPlan>),
    Full {
        signals: Vec<SignalPlan>,
        #[serde(default)]
        crossings: Vec<CrossingWindow>,
    },
}

#[derive(Debug, Default, Serialize)]
pub struct SignalFile {
    pub signals: Vec<SignalPlan>,
    pub crossings: Vec<CrossingWindow>,
}

impl SignalFile {
    /// Parses a signal document, normalizing offsets into `[0, cycle)`.
    pub fn from_json(text: &str) -> Result<Self, SignalError> {
        let (signals, crossings) = match serde_json::from_str(text)? {
            SignalDocument::Plans(p) => (p, Vec::new()),
            SignalDocument::Full { signals, crossings } => (signals, crossings),
        };
        Ok(SignalFile {
            signals: signals.into_iter().map(SignalPlan::normalized).collect(),
            crossings,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plans serialize");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug)]
struct SignalSchedule {
    base: SignalPlan,
    overrides: Vec<(TimeWindow, SignalPlan)>,
}

impl SignalSchedule {
    fn plan_at(&self, t: f64) -> &SignalPlan {
        self.overrides
            .iter()
            .find(|(w, _)| w.contains(t))
            .map_or(&self.base, |(_, p)| p)
    }

    /// First override edge strictly after `t`.
    fn next_switch_after(&self, t: f64) -> f64 {
        self.overrides
            .iter()
            .flat_map(|(w, _)| [w.start_s, w.end_s])
            .filter(|e| *e > t)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
struct FactorOverride {
    window: TimeWindow,
    factor: f64,
}

/// Everything time-dependent about junction control: active plans (base or
/// scenario override), movement capacity factors and crossing windows.
#[derive(Clone, Debug, Default)]
pub struct TrafficControl {
    schedules: BTreeMap<SignalId, SignalSchedule>,
    movement_signal: BTreeMap<MovementId, SignalId>,
    signal_movements: BTreeMap<SignalId, BTreeSet<MovementId>>,
    base_factor: BTreeMap<MovementId, f64>,
    factor_overrides: BTreeMap<MovementId, Vec<FactorOverride>>,
    crossings: BTreeMap<MovementId, Vec<CrossingWindow>>,
}

impl TrafficControl {
    /// Uncontrolled network: every movement always green at its base factor.
    pub fn uncontrolled(net: &NetworkGraph) -> Self {
        TrafficControl {
            base_factor: net.movements().map(|m| (m.id, m.capacity_factor)).collect(),
            ..Default::default()
        }
    }

    pub fn new(
        net: &NetworkGraph,
        plans: &[SignalPlan],
        crossings: &[CrossingWindow],
    ) -> Result<Self, SignalError> {
        let mut ctl = Self::uncontrolled(net);
        let mut by_node: BTreeMap<NodeId, SignalId> = BTreeMap::new();
        for plan in plans {
            let issues = validate_plan_in(plan, net);
            report_issues(plan.signal_id, &issues)?;
            if let Some(first) = by_node.insert(plan.node, plan.signal_id) {
                return Err(SignalError::DuplicateJunction {
                    node: plan.node,
                    first,
                    second: plan.signal_id,
                });
            }
            if ctl.schedules.contains_key(&plan.signal_id) {
                return Err(SignalError::DuplicateSignal(plan.signal_id));
            }
            let movements: BTreeSet<MovementId> =
                net.movements_at(plan.node).map(|m| m.id).collect();
            for m in &movements {
                ctl.movement_signal.insert(*m, plan.signal_id);
            }
            ctl.signal_movements.insert(plan.signal_id, movements);
            ctl.schedules.insert(
                plan.signal_id,
                SignalSchedule {
                    base: plan.clone(),
                    overrides: Vec::new(),
                },
            );
        }
        for w in crossings {
            w.check()?;
            if net.movement(w.movement).is_none() {
                return Err(SignalError::InvalidCrossing {
                    movement: w.movement,
                    reason: "movement not in network".into(),
                });
            }
            ctl.crossings.entry(w.movement).or_default().push(w.clone());
        }
        Ok(ctl)
    }

    /// Replaces a signal's plan inside `window`.
    pub fn add_plan_override(
        &mut self,
        net: &NetworkGraph,
        window: TimeWindow,
        plan: SignalPlan,
    ) -> Result<(), SignalError> {
        let sched = self
            .schedules
            .get_mut(&plan.signal_id)
            .ok_or(SignalError::UnknownSignal(plan.signal_id))?;
        if plan.node != sched.base.node {
            return Err(SignalError::OverrideNodeMismatch {
                signal: plan.signal_id,
                node: plan.node,
                base: sched.base.node,
            });
        }
        report_issues(plan.signal_id, &validate_plan_in(&plan, net))?;
        if sched.overrides.iter().any(|(w, _)| w.overlaps(&window)) {
            return Err(SignalError::OverlappingOverride {
                signal: plan.signal_id,
            });
        }
        sched.overrides.push((window, plan));
        sched
            .overrides
            .sort_by(|a, b| a.0.start_s.total_cmp(&b.0.start_s));
        Ok(())
    }

    /// Replaces a movement's base capacity factor inside `window`.
    pub fn add_capacity_override(
        &mut self,
        window: TimeWindow,
        movement: MovementId,
        factor: f64,
    ) -> Result<(), SignalError> {
        if !self.base_factor.contains_key(&movement) {
            return Err(SignalError::InvalidCapacityOverride {
                movement,
                reason: "movement not in network".into(),
            });
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(SignalError::InvalidCapacityOverride {
                movement,
                reason: format!("factor {factor} outside (0, 1]"),
            });
        }
        let list = self.factor_overrides.entry(movement).or_default();
        if list.iter().any(|o| o.window.overlaps(&window)) {
            return Err(SignalError::InvalidCapacityOverride {
                movement,
                reason: "override windows overlap".into(),
            });
        }
        list.push(FactorOverride { window, factor });
        Ok(())
    }

    pub fn signal_ids(&self) -> impl Iterator<Item = SignalId> + '_ {
        self.schedules.keys().copied()
    }

    pub fn base_plans(&self) -> impl Iterator<Item = &SignalPlan> {
        self.schedules.values().map(|s| &s.base)
    }

    /// The signal governing `m`, if its junction is controlled.
    pub fn signal_for(&self, m: MovementId) -> Option<SignalId> {
        self.movement_signal.get(&m).copied()
    }

    pub fn plan_at(&self, signal: SignalId, t: f64) -> Option<&SignalPlan> {
        self.schedules.get(&signal).map(|s| s.plan_at(t))
    }

    /// Green test for a movement; uncontrolled movements are always green.
    pub fn is_green(&self, m: MovementId, t: f64) -> bool {
        match self.movement_signal.get(&m) {
            Some(sig) => self.schedules[sig].plan_at(t).is_green(m, t),
            None => true,
        }
    }

    /// Green test through a specific signal; errors if `m` is not at its junction.
    pub fn is_green_at(&self, signal: SignalId, m: MovementId, t: f64) -> Result<bool, SignalError> {
        let sched = self
            .schedules
            .get(&signal)
            .ok_or(SignalError::UnknownSignal(signal))?;
        if !self.signal_movements[&signal].contains(&m) {
            return Err(SignalError::NotAtJunction {
                signal,
                movement: m,
                node: sched.base.node,
            });
        }
        Ok(sched.plan_at(t).is_green(m, t))
    }

    /// Earliest `t' >= t` at which `m` is green, across plan overrides.
    pub fn next_green_start(&self, m: MovementId, t: f64) -> Result<f64, SignalError> {
        let Some(sig) = self.movement_signal.get(&m) else {
            return Ok(t);
        };
        let sched = &self.schedules[sig];
        let mut now = t;
        loop {
            let plan = sched.plan_at(now);
            let switch = sched.next_switch_after(now);
            if plan.serves(m) {
                let g = plan.next_green_start(m, now)?;
                if g < switch {
                    return Ok(g);
                }
            }
            if switch.is_infinite() {
                return Err(SignalError::PermanentRed {
                    signal: *sig,
                    movement: m,
                });
            }
            now = switch;
        }
    }

    /// Next instant strictly after `t` at which the signal's display changes
    /// (phase boundary or plan switch).
    pub fn next_phase_change(&self, signal: SignalId, t: f64) -> Option<f64> {
        let sched = self.schedules.get(&signal)?;
        let b = sched.plan_at(t).next_boundary_after(t);
        Some(b.min(sched.next_switch_after(t)))
    }

    /// Effective capacity multiplier for `m` at `t`.
    pub fn capacity_factor(&self, m: MovementId, t: f64) -> f64 {
        let mut f = self
            .factor_overrides
            .get(&m)
            .and_then(|list| list.iter().find(|o| o.window.contains(t)))
            .map(|o| o.factor)
            .unwrap_or_else(|| self.base_factor.get(&m).copied().unwrap_or(1.0));
        for w in self.crossings.get(&m).into_iter().flatten() {
            f *= crossing_capacity_factor(w, t);
        }
        f
    }

    /// Next instant strictly after `t` at which `capacity_factor(m, _)` may change.
    pub fn next_factor_change(&self, m: MovementId, t: f64) -> f64 {
        let mut best = f64::INFINITY;
        for o in self.factor_overrides.get(&m).into_iter().flatten() {
            for e in [o.window.start_s, o.window.end_s] {
                if e > t {
                    best = best.min(e);
                }
            }
        }
        for w in self.crossings.get(&m).into_iter().flatten() {
            best = best.min(w.next_edge_after(t));
        }
        best
    }
}

fn report_issues(signal: SignalId, issues: &[PlanIssue]) -> Result<(), SignalError> {
    for w in issues.iter().filter(|i| i.warning) {
        log::warn!("signal {signal}: {}", w.message);
    }
    let errors: Vec<String> = issues
        .iter()
        .filter(|i| !i.warning)
        .map(|i| i.message.clone())
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(SignalError::InvalidPlan {
            signal,
            issues: errors.join("; "),
        })
    }
}
