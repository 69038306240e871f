//! Simulation-in-the-loop search over signal offsets and green splits.
//!
//! The search is plain coordinate descent: try each parameter one step up and
//! one step down, keep strict improvements, and shrink the step once a full
//! sweep finds nothing better.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defaults;
use crate::demand::TripRequest;
use crate::metrics::{fmt_g, summarize};
use crate::netgraph::NetworkGraph;
use crate::scenarios::{ScenarioError, ScenarioSpec};
use crate::signals::{validate_plan, CrossingWindow, SignalError, SignalId, SignalPlan, TrafficControl};
use crate::simcore::{run_simulation, SimError, SimOptions};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("signal {signal}: {message}")]
    InvalidPlan { signal: SignalId, message: String },
    #[error("no signal plans to optimize")]
    NothingToOptimize,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("step schedule must be non-empty and positive")]
    BadSchedule,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid optimizer config: {0}")]
    Config(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKind {
    Offset,
    /// Zero-based phase index.
    Green(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Param {
    pub signal: SignalId,
    pub kind: ParamKind,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ParamKind::Offset => write!(f, "sig{}_offset_s", self.signal),
            ParamKind::Green(p) => write!(f, "sig{}_green{}_s", self.signal, p + 1),
        }
    }
}

/// Offsets and greens of a set of plans, flattened per signal in id order as
/// `offset, green_1, ..., green_n`. Cycle and lost time stay fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanVector {
    plans: Vec<SignalPlan>,
    min_green_s: f64,
}

impl PlanVector {
    pub fn new(plans: &[SignalPlan], min_green_s: f64) -> Result<Self, OptimizerError> {
        if plans.is_empty() {
            return Err(OptimizerError::NothingToOptimize);
        }
        let mut plans = plans.to_vec();
        plans.sort_by_key(|p| p.signal_id);
        for p in &plans {
            let errors: Vec<String> = validate_plan(p)
                .into_iter()
                .filter(|i| !i.warning)
                .map(|i| i.message)
                .collect();
            if !errors.is_empty() {
                return Err(OptimizerError::InvalidPlan {
                    signal: p.signal_id,
                    message: errors.join("; "),
                });
            }
            if let Some(g) = p.phases.iter().find(|ph| ph.green_s < min_green_s) {
                return Err(OptimizerError::InvalidPlan {
                    signal: p.signal_id,
                    message: format!("green {} below minimum {min_green_s}", g.green_s),
                });
            }
        }
        Ok(PlanVector { plans, min_green_s })
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for p in &self.plans {
            out.push(Param {
                signal: p.signal_id,
                kind: ParamKind::Offset,
            });
            out.extend((0..p.phases.len()).map(|i| Param {
                signal: p.signal_id,
                kind: ParamKind::Green(i),
            }));
        }
        out
    }

    pub fn values(&self) -> Vec<f64> {
        self.plans
            .iter()
            .flat_map(|p| std::iter::once(p.offset_s).chain(p.phases.iter().map(|ph| ph.green_s)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.plans.iter().map(|p| 1 + p.phases.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_green_s(&self) -> f64 {
        self.min_green_s
    }

    /// The plans this vector stands for.
    pub fn decode(&self) -> &[SignalPlan] {
        &self.plans
    }

    fn locate(&self, index: usize) -> Option<(usize, ParamKind)> {
        let mut rest = index;
        for (i, p) in self.plans.iter().enumerate() {
            let n = 1 + p.phases.len();
            if rest < n {
                let kind = if rest == 0 {
                    ParamKind::Offset
                } else {
                    ParamKind::Green(rest - 1)
                };
                return Some((i, kind));
            }
            rest -= n;
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub vector: PlanVector,
    /// The move was cut short by the green bounds.
    pub clamped: bool,
}

impl Perturbed {
    /// True when clamping left nothing of the move.
    pub fn is_noop(&self, original: &PlanVector) -> bool {
        self.vector == *original
    }
}

/// Splits `amount` across `weights` proportionally; the last share takes the
/// rounding remainder so the parts sum to `amount`.
fn shares(amount: f64, weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(weights.len());
    let mut given = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let s = if i + 1 == weights.len() {
            amount - given
        } else {
            amount * w / total
        };
        given += s;
        out.push(s);
    }
    out
}

/// Moves one parameter by `step_s` in `direction` (+1 or -1). Greens trade
/// time with the other phases of the same signal, so the cycle is kept:
/// lengthening a phase takes time from the others in proportion to their
/// slack above minimum green, shortening hands time out in proportion to
/// their greens. Offsets wrap around the cycle.
pub fn perturb_plan(v: &PlanVector, index: usize, step_s: f64, direction: i8) -> Perturbed {
    let unchanged = || Perturbed {
        vector: v.clone(),
        clamped: true,
    };
    let Some((si, kind)) = v.locate(index) else {
        return unchanged();
    };
    let sign = if direction < 0 { -1.0 } else { 1.0 };
    let mut out = v.clone();
    let plan = &mut out.plans[si];
    match kind {
        ParamKind::Offset => {
            plan.offset_s = (plan.offset_s + sign * step_s).rem_euclid(plan.cycle_s);
            Perturbed {
                vector: out,
                clamped: false,
            }
        }
        ParamKind::Green(p) => {
            let min = v.min_green_s;
            let others: Vec<usize> = (0..plan.phases.len()).filter(|i| *i != p).collect();
            if others.is_empty() {
                return unchanged();
            }
            let (moved, weights): (f64, Vec<f64>) = if sign > 0.0 {
                let slack: Vec<f64> = others
                    .iter()
                    .map(|i| (plan.phases[*i].green_s - min).max(0.0))
                    .collect();
                (step_s.min(slack.iter().sum()), slack)
            } else {
                let room = (plan.phases[p].green_s - min).max(0.0);
                let greens = others.iter().map(|i| plan.phases[*i].green_s).collect();
                (step_s.min(room), greens)
            };
            if moved <= 0.0 {
                return unchanged();
            }
            plan.phases[p].green_s += sign * moved;
            for (i, s) in others.iter().zip(shares(moved, &weights)) {
                plan.phases[*i].green_s -= sign * s;
            }
            Perturbed {
                vector: out,
                clamped: moved < step_s,
            }
        }
    }
}

/// Fixed inputs of the objective.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    pub net: &'a NetworkGraph,
    pub trips: &'a [TripRequest],
    pub crossings: &'a [CrossingWindow],
    pub scenario: Option<&'a ScenarioSpec>,
    pub horizon_s: f64,
    /// Added per trip still travelling at the horizon.
    pub incomplete_penalty_s: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(net: &'a NetworkGraph, trips: &'a [TripRequest], horizon_s: f64) -> Self {
        Evaluator {
            net,
            trips,
            crossings: &[],
            scenario: None,
            horizon_s,
            incomplete_penalty_s: defaults::INCOMPLETE_PENALTY_HORIZONS * horizon_s,
        }
    }

    pub fn control(&self, v: &PlanVector) -> Result<TrafficControl, OptimizerError> {
        let mut ctl = TrafficControl::new(self.net, v.decode(), self.crossings)?;
        if let Some(s) = self.scenario {
            s.apply_to_control(self.net, &mut ctl)?;
        }
        Ok(ctl)
    }

    /// Total delay of completed trips plus the incomplete-trip penalty.
    pub fn evaluate_plan(&self, v: &PlanVector) -> Result<f64, OptimizerError> {
        let ctl = self.control(v)?;
        let res = run_simulation(self.net, self.trips, &ctl, self.horizon_s, SimOptions::default())?;
        let summary = summarize(&res);
        Ok(summary.total_delay_s + self.incomplete_penalty_s * summary.incomplete_trips as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub budget: usize,
    #[serde(default = "default_schedule")]
    pub step_schedule_s: Vec<f64>,
    #[serde(default = "default_min_green")]
    pub min_green_s: f64,
    /// Defaults to twice the horizon.
    #[serde(default)]
    pub incomplete_trip_penalty_s: Option<f64>,
}

fn default_schedule() -> Vec<f64> {
    defaults::STEP_SCHEDULE_S.to_vec()
}

fn default_min_green() -> f64 {
    defaults::MIN_GREEN_S
}

impl OptimizerConfig {
    pub fn with_budget(budget: usize) -> Self {
        OptimizerConfig {
            budget,
            step_schedule_s: default_schedule(),
            min_green_s: default_min_green(),
            incomplete_trip_penalty_s: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, OptimizerError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub values: Vec<f64>,
    pub objective: f64,
    pub step_s: f64,
    pub accepted: bool,
    /// Best objective seen up to and including this evaluation.
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchTrace {
    pub params: Vec<Param>,
    pub records: Vec<TraceRecord>,
    pub budget: usize,
    pub best_index: usize,
    pub best: PlanVector,
}

impl SearchTrace {
    pub fn evaluations(&self) -> usize {
        self.records.len()
    }

    pub fn best_objective(&self) -> f64 {
        self.records[self.best_index].objective
    }

    pub fn initial_objective(&self) -> f64 {
        self.records[0].objective
    }

    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        comment: Option<&str>,
    ) -> Result<(), crate::metrics::MetricsError> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        let mut header = vec!["iteration".to_string()];
        header.extend(self.params.iter().map(Param::to_string));
        header.extend(["step_s", "objective", "accepted", "best_so_far"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.values.iter().map(|x| fmt_g(*x)));
            row.push(fmt_g(r.step_s));
            row.push(fmt_g(r.objective));
            row.push(r.accepted.to_string());
            row.push(fmt_g(r.best_so_far));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coordinate descent from `v0`. Stops when the step schedule is exhausted
/// or `budget` evaluations have been spent.
pub fn hill_climb(
    eval: &Evaluator<'_>,
    v0: &PlanVector,
    schedule: &[f64],
    budget: usize,
) -> Result<SearchTrace, OptimizerError> {
    if budget == 0 {
        return Err(OptimizerError::ZeroBudget);
    }
    if schedule.is_empty() || schedule.iter().any(|s| !(*s > 0.0)) {
        return Err(OptimizerError::BadSchedule);
    }
    let first = eval.evaluate_plan(v0)?;
    let mut trace = SearchTrace {
        params: v0.params(),
        records: vec![TraceRecord {
            iteration: 0,
            values: v0.values(),
            objective: first,
            step_s: 0.0,
            accepted: true,
            best_so_far: first,
        }],
        budget,
        best_index: 0,
        best: v0.clone(),
    };
    let mut current = v0.clone();
    let mut best = first;

    'schedule: for &step in schedule {
        if step < 1.0 {
            break;
        }
        loop {
            let mut improved = false;
            for i in 0..current.len() {
                for dir in [1, -1] {
                    let cand = perturb_plan(&current, i, step, dir);
                    if cand.is_noop(&current) {
                        continue;
                    }
                    if trace.records.len() >= budget {
                        break 'schedule;
                    }
                    let obj = eval.evaluate_plan(&cand.vector)?;
                    let values = cand.vector.values();
                    let accepted = obj < best;
                    if accepted {
                        best = obj;
                        current = cand.vector;
                        trace.best_index = trace.records.len();
                        trace.best = current.clone();
                        improved = true;
                    }
                    log::debug!("eval {} step {step}: {obj} (best {best})", trace.records.len());
                    trace.records.push(TraceRecord {
                        iteration: trace.records.len(),
                        values,
                        objective: obj,
                        step_s: step,
                        accepted,
                        best_so_far: best,
                    });
                    if accepted {
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::NodeId;
    use crate::signals::Phase;

    fn plan(greens: &[f64], offset: f64) -> SignalPlan {
        SignalPlan {
            signal_id: SignalId(1),
            node: NodeId(3),
            cycle_s: greens.iter().sum(),
            offset_s: offset,
            lost_time_s: 0.0,
            phases: greens
                .iter()
                .enumerate()
                .map(|(i, g)| Phase::new(*g, [i as u64 + 1]))
                .collect(),
        }
    }

    fn vector(greens: &[f64], offset: f64) -> PlanVector {
        PlanVector::new(&[plan(greens, offset)], 5.0).unwrap()
    }

    #[test]
    fn perturb_examples() {
        let v = vector(&[30.0, 30.0], 0.0);
        let p = perturb_plan(&v, 1, 5.0, 1);
        assert_eq!(p.vector.values(), vec![0.0, 35.0, 25.0]);
        assert!(!p.clamped);

        let v = vector(&[55.0, 5.0], 0.0);
        let p = perturb_plan(&v, 1, 5.0, 1);
        assert!(p.clamped && p.is_noop(&v));

        let v = vector(&[30.0, 30.0], 55.0);
        assert_eq!(perturb_plan(&v, 0, 10.0, 1).vector.values()[0], 5.0);
        assert_eq!(perturb_plan(&v, 0, 60.0, -1).vector.values()[0], 55.0);
    }

    #[test]
    fn perturb_keeps_cycle_and_bounds() {
        let v = vector(&[20.0, 7.0, 33.0], 0.0);
        for i in 0..v.len() {
            for dir in [1, -1] {
                for step in [1.0, 4.0, 8.0, 50.0] {
                    let p = perturb_plan(&v, i, step, dir);
                    let plan = &p.vector.decode()[0];
                    let sum: f64 = plan.phases.iter().map(|ph| ph.green_s).sum();
                    assert!((sum - 60.0).abs() < 1e-9);
                    assert!(plan.phases.iter().all(|ph| ph.green_s >= 5.0 - 1e-12));
                    assert!(validate_plan(plan).is_empty());
                }
            }
        }
        let p = perturb_plan(&v, 3, 8.0, 1);
        // Slack 15 and 2 shared 8 s in proportion.
        let g: Vec<f64> = p.vector.values()[1..].to_vec();
        assert!((g[0] - (20.0 - 8.0 * 15.0 / 17.0)).abs() < 1e-12);
        assert!((g[1] - (7.0 - 8.0 * 2.0 / 17.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_infeasible_vectors() {
        assert!(PlanVector::new(&[plan(&[57.0, 3.0], 0.0)], 5.0).is_err());
        assert!(PlanVector::new(&[], 5.0).is_err());
        let mut bad = plan(&[30.0, 30.0], 0.0);
        bad.cycle_s = 70.0;
        assert!(PlanVector::new(&[bad], 5.0).is_err());
    }

    #[test]
    fn config_defaults() {
        let c = OptimizerConfig::from_json(r#"{"budget": 40}"#).unwrap();
        assert_eq!(c, OptimizerConfig::with_budget(40));
        assert_eq!(c.step_schedule_s, vec![8.0, 4.0, 2.0, 1.0]);
    }
}
