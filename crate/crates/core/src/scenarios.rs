//! Scenario definitions layered on a base run: extra demand, signal plan
//! replacements and capacity reductions inside a time window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandError, DemandProfile, OdPair, SegmentJson};
use crate::metrics::NetworkSummary;
use crate::netgraph::{MovementId, NetworkGraph, NodeId};
use crate::signals::{
    validate_plan_in, CrossingWindow, SignalError, SignalId, SignalPlan, TimeWindow,
    TrafficControl,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario `{scenario}`: unknown node alias `{alias}`")]
    UnknownAlias { scenario: String, alias: String },
    #[error("scenario `{scenario}`: window [{start_s}, {end_s}) is not a valid interval")]
    BadWindow {
        scenario: String,
        start_s: f64,
        end_s: f64,
    },
    #[error("scenario `{scenario}`: {source}")]
    Demand {
        scenario: String,
        #[source]
        source: DemandError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Signal {
        scenario: String,
        #[source]
        source: SignalError,
    },
    #[error("scenario `{scenario}`: movement {movement} is not in the network")]
    UnknownMovement { scenario: String, movement: MovementId },
    #[error("scenario `{scenario}`: capacity factor {factor} on movement {movement} outside (0, 1]")]
    BadFactor {
        scenario: String,
        movement: MovementId,
        factor: f64,
    },
    #[error("composition: overrides for signal {0} overlap in time")]
    ConflictingPlans(SignalId),
    #[error("composition: capacity overrides for movement {0} overlap in time")]
    ConflictingCapacity(MovementId),
    #[error("composition needs at least one scenario")]
    EmptyComposition,
    #[error("composition gap must be finite and non-negative, got {0}")]
    BadGap(f64),
    #[error("invalid scenario document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Node given by id or by a name from the alias table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Id(u64),
    Alias(String),
}

/// Map from alias (e.g. `ramjas_gate`) to node id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable(pub BTreeMap<String, u64>);

impl AliasTable {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn resolve(&self, r: &NodeRef, scenario: &str) -> Result<NodeId, ScenarioError> {
        match r {
            NodeRef::Id(id) => Ok(NodeId(*id)),
            NodeRef::Alias(a) => self.0.get(a).map(|id| NodeId(*id)).ok_or_else(|| {
                ScenarioError::UnknownAlias {
                    scenario: scenario.to_string(),
                    alias: a.clone(),
                }
            }),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverlayJson {
    origin: NodeRef,
    destination: NodeRef,
    profile: Vec<SegmentJson>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityJson {
    movement: MovementId,
    factor: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioJson {
    name: String,
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
    window: TimeWindow,
    #[serde(default)]
    demand_overlays: Vec<OverlayJson>,
    #[serde(default)]
    plan_overrides: Vec<SignalPlan>,
    #[serde(default)]
    capacity_overrides: Vec<CapacityJson>,
    /// Periodic reductions, expanded into capacity overrides inside the window.
    #[serde(default)]
    crossing_windows: Vec<CrossingWindow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOverride {
    pub window: TimeWindow,
    pub plan: SignalPlan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityOverride {
    pub window: TimeWindow,
    pub movement: MovementId,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub window: TimeWindow,
    /// Profiles relative to `window.start_s`.
    pub demand_overlays: Vec<OdPair>,
    pub plan_overrides: Vec<PlanOverride>,
    pub capacity_overrides: Vec<CapacityOverride>,
}

impl ScenarioSpec {
    /// Empty scenario over `window`.
    pub fn new(name: impl Into<String>, window: TimeWindow) -> Self {
        ScenarioSpec {
            name: name.into(),
            window,
            demand_overlays: Vec::new(),
            plan_overrides: Vec::new(),
            capacity_overrides: Vec::new(),
        }
    }

    /// Installs the plan and capacity overrides on `control`.
    pub fn apply_to_control(
        &self,
        net: &NetworkGraph,
        control: &mut TrafficControl,
    ) -> Result<(), ScenarioError> {
        let wrap = |source| ScenarioError::Signal {
            scenario: self.name.clone(),
            source,
        };
        for o in &self.plan_overrides {
            control
                .add_plan_override(net, o.window, o.plan.clone())
                .map_err(wrap)?;
        }
        for c in &self.capacity_overrides {
            control
                .add_capacity_override(c.window, c.movement, c.factor)
                .map_err(wrap)?;
        }
        Ok(())
    }

    fn translated(&self, start_s: f64, anchor_s: f64) -> ScenarioSpec {
        let by = start_s - self.window.start_s;
        ScenarioSpec {
            name: self.name.clone(),
            window: self.window.shifted(by),
            demand_overlays: self
                .demand_overlays
                .iter()
                .map(|od| OdPair {
                    profile: od.profile.shifted(start_s - anchor_s),
                    ..od.clone()
                })
                .collect(),
            plan_overrides: self
                .plan_overrides
                .iter()
                .map(|o| PlanOverride {
                    window: o.window.shifted(by),
                    plan: o.plan.clone(),
                })
                .collect(),
            capacity_overrides: self
                .capacity_overrides
                .iter()
                .map(|c| CapacityOverride {
                    window: c.window.shifted(by),
                    ..c.clone()
                })
                .collect(),
        }
    }
}

fn check_window(name: &str, w: &TimeWindow) -> Result<(), ScenarioError> {
    if w.start_s.is_finite() && w.end_s.is_finite() && w.start_s >= 0.0 && w.end_s > w.start_s {
        Ok(())
    } else {
        Err(ScenarioError::BadWindow {
            scenario: name.to_string(),
            start_s: w.start_s,
            end_s: w.end_s,
        })
    }
}

/// Intervals where `w` is active inside `window`, as capacity overrides.
fn expand_crossing(w: &CrossingWindow, window: &TimeWindow) -> Vec<CapacityOverride> {
    let mut out = Vec::new();
    let mut k = (window.start_s / w.period_s).floor();
    loop {
        let start = k * w.period_s;
        if start >= window.end_s {
            break;
        }
        let s = start.max(window.start_s);
        let e = (start + w.active_s).min(window.end_s);
        if e > s {
            out.push(CapacityOverride {
                window: TimeWindow::new(s, e),
                movement: w.movement,
                factor: w.factor,
            });
        }
        k += 1.0;
    }
    out
}

/// Parses and validates a scenario document against `net`.
pub fn load_scenario(
    text: &str,
    net: &NetworkGraph,
    aliases: &AliasTable,
) -> Result<ScenarioSpec, ScenarioError> {
    let doc: ScenarioJson = serde_json::from_str(text)?;
    let name = doc.name.clone();
    check_window(&name, &doc.window)?;
    let demand_err = |source| ScenarioError::Demand {
        scenario: name.clone(),
        source,
    };
    let signal_err = |source| ScenarioError::Signal {
        scenario: name.clone(),
        source,
    };

    let mut overlays = Vec::with_capacity(doc.demand_overlays.len());
    for o in &doc.demand_overlays {
        let profile = DemandProfile::new(o.profile.iter().map(SegmentJson::to_segment).collect())
            .map_err(demand_err)?;
        let od = OdPair {
            origin: aliases.resolve(&o.origin, &name)?,
            destination: aliases.resolve(&o.destination, &name)?,
            profile,
        };
        od.check(net).map_err(demand_err)?;
        overlays.push(od);
    }

    let mut plans = Vec::with_capacity(doc.plan_overrides.len());
    for plan in doc.plan_overrides {
        let plan = plan.normalized();
        let errors: Vec<String> = validate_plan_in(&plan, net)
            .into_iter()
            .filter(|i| !i.warning)
            .map(|i| i.message)
            .collect();
        if !errors.is_empty() {
            return Err(signal_err(SignalError::InvalidPlan {
                signal: plan.signal_id,
                issues: errors.join("; "),
            }));
        }
        plans.push(PlanOverride {
            window: doc.window,
            plan,
        });
    }

    let mut capacity = Vec::new();
    let explicit = doc.capacity_overrides.iter().map(|c| CapacityOverride {
        window: doc.window,
        movement: c.movement,
        factor: c.factor,
    });
    let periodic = doc.crossing_windows.iter().flat_map(|w| {
        let checked = w.check().map_err(signal_err);
        let expanded = checked.map(|_| expand_crossing(w, &doc.window));
        match expanded {
            Ok(list) => list.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        }
    });
    for c in explicit.map(Ok).chain(periodic) {
        let c = c?;
        if net.movement(c.movement).is_none() {
            return Err(ScenarioError::UnknownMovement {
                scenario: name.clone(),
                movement: c.movement,
            });
        }
        if !(c.factor > 0.0 && c.factor <= 1.0) {
            return Err(ScenarioError::BadFactor {
                scenario: name.clone(),
                movement: c.movement,
                factor: c.factor,
            });
        }
        capacity.push(c);
    }

    Ok(ScenarioSpec {
        name,
        window: doc.window,
        demand_overlays: overlays,
        plan_overrides: plans,
        capacity_overrides: capacity,
    })
}

/// Base demand followed by the scenario's overlays moved to absolute time.
pub fn apply_overlays(base: &[OdPair], scenario: &ScenarioSpec) -> Vec<OdPair> {
    let mut out = base.to_vec();
    out.extend(scenario.demand_overlays.iter().map(|od| OdPair {
        profile: od.profile.shifted(scenario.window.start_s),
        ..od.clone()
    }));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionSpec {
    pub scenarios: Vec<ScenarioSpec>,
    pub gap_s: f64,
}

/// Chains scenarios back to back: each one starts where the previous ended
/// plus the gap. The first keeps its own start.
pub fn compose_sequential(c: &CompositionSpec) -> Result<ScenarioSpec, ScenarioError> {
    let first = c.scenarios.first().ok_or(ScenarioError::EmptyComposition)?;
    if c.scenarios.len() == 1 {
        return Ok(first.clone());
    }
    if !(c.gap_s.is_finite() && c.gap_s >= 0.0) {
        return Err(ScenarioError::BadGap(c.gap_s));
    }
    let anchor = first.window.start_s;
    let mut start = anchor;
    let mut merged = ScenarioSpec::new(
        c.scenarios
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        first.window,
    );
    for (i, s) in c.scenarios.iter().enumerate() {
        if i > 0 {
            start += c.gap_s;
        }
        let t = s.translated(start, anchor);
        start = t.window.end_s;
        for o in t.plan_overrides {
            if merged.plan_overrides.iter().any(|m| {
                m.plan.signal_id == o.plan.signal_id && m.window.overlaps(&o.window)
            }) {
                return Err(ScenarioError::ConflictingPlans(o.plan.signal_id));
            }
            merged.plan_overrides.push(o);
        }
        for o in t.capacity_overrides {
            if merged
                .capacity_overrides
                .iter()
                .any(|m| m.movement == o.movement && m.window.overlaps(&o.window))
            {
                return Err(ScenarioError::ConflictingCapacity(o.movement));
            }
            merged.capacity_overrides.push(o);
        }
        merged.demand_overlays.extend(t.demand_overlays);
    }
    merged.window = TimeWindow::new(anchor, start);
    Ok(merged)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: &'static str,
    pub baseline: Option<f64>,
    pub variant: Option<f64>,
    pub absolute: Option<f64>,
    /// Percent change relative to the baseline; `None` when undefined.
    pub relative_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub baseline: NetworkSummary,
    pub variant: NetworkSummary,
    pub deltas: Vec<MetricDelta>,
}

fn delta(metric: &'static str, b: Option<f64>, v: Option<f64>) -> MetricDelta {
    let absolute = b.zip(v).map(|(b, v)| v - b);
    let relative_pct = b.zip(absolute).and_then(|(b, d)| {
        if b != 0.0 {
            Some(100.0 * d / b)
        } else if d == 0.0 {
            Some(0.0)
        } else {
            None
        }
    });
    MetricDelta {
        metric,
        baseline: b,
        variant: v,
        absolute,
        relative_pct,
    }
}

pub fn compare_runs(baseline: &NetworkSummary, variant: &NetworkSummary) -> ComparisonReport {
    let (b, v) = (baseline, variant);
    let deltas = vec![
        delta("total_travel_time_s", Some(b.total_travel_time_s), Some(v.total_travel_time_s)),
        delta("total_delay_s", Some(b.total_delay_s), Some(v.total_delay_s)),
        delta("total_origin_wait_s", Some(b.total_origin_wait_s), Some(v.total_origin_wait_s)),
        delta(
            "completed_trips",
            Some(b.completed_trips as f64),
            Some(v.completed_trips as f64),
        ),
        delta(
            "incomplete_trips",
            Some(b.incomplete_trips as f64),
            Some(v.incomplete_trips as f64),
        ),
        delta("mean_delay_s", b.mean_delay_s, v.mean_delay_s),
    ];
    ComparisonReport {
        baseline: baseline.clone(),
        variant: variant.clone(),
        deltas,
    }
}

/// Marker written for an undefined relative change.
pub const UNDEFINED: &str = "undefined";

impl ComparisonReport {
    pub fn write_csv<W: std::io::Write>(
        &self,
        out: W,
        comment: Option<&str>,
    ) -> Result<(), crate::metrics::MetricsError> {
        use crate::metrics::fmt_g;
        let mut out = out;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        w.write_record(["metric", "baseline", "variant", "absolute", "relative_pct"])?;
        let show = |x: Option<f64>| x.map(fmt_g).unwrap_or_default();
        for d in &self.deltas {
            w.write_record([
                d.metric.to_string(),
                show(d.baseline),
                show(d.variant),
                show(d.absolute),
                d.relative_pct.map_or(UNDEFINED.to_string(), fmt_g),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
