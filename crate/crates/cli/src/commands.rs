use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use campusflow::demand::{build_trips, load_demand, DemandMode, OdPair, TripRequest};
use campusflow::metrics::{
    hotspot_ranking, link_series, read_summary, summarize, write_links_csv, write_state_csv,
    write_summary_csv, write_trips_csv, fmt_g,
};
use campusflow::netgraph::NetworkGraph;
use campusflow::optimizer::{hill_climb, Evaluator, OptimizerConfig, PlanVector};
use campusflow::osm_ingest::{self, BoundingBox, BuildOptions, ClassDefaults};
use campusflow::scenarios::{
    apply_overlays, compare_runs, compose_sequential, load_scenario, AliasTable, CompositionSpec,
    ScenarioSpec,
};
use campusflow::signals::{SignalFile, TrafficControl};
use campusflow::simcore::{run_simulation, SimOptions};

use crate::output;

pub struct Failure {
    pub validation: bool,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn code(&self) -> u8 {
        if self.validation {
            2
        } else {
            3
        }
    }
}

trait Classify<T> {
    /// Bad input: exit status 2.
    fn invalid(self, what: impl Display) -> Result<T, Failure>;
    /// Fault while running: exit status 3.
    fn fault(self, what: impl Display) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn invalid(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            validation: true,
            error: e.into().context(what.to_string()),
        })
    }

    fn fault(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            validation: false,
            error: e.into().context(what.to_string()),
        })
    }
}

pub struct RunConfig {
    pub net: PathBuf,
    pub demand: PathBuf,
    pub signals: PathBuf,
    pub scenarios: Vec<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub gap_s: f64,
    pub horizon_s: f64,
    pub seed: Option<u64>,
}

impl RunConfig {
    fn header(&self, command: &str) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!("campusflow {command} seed={seed} horizon_s={}", fmt_g(self.horizon_s))
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).invalid(format!("cannot read {}", path.display()))
}

/// Everything a simulation needs, parsed and checked before any run starts.
struct Prepared {
    net: NetworkGraph,
    trips: Vec<TripRequest>,
    signals: SignalFile,
    scenario: Option<ScenarioSpec>,
}

impl Prepared {
    fn load(cfg: &RunConfig) -> Result<Self, Failure> {
        if !(cfg.horizon_s > 0.0 && cfg.horizon_s.is_finite()) {
            return Err(anyhow!("--horizon must be positive, got {}", cfg.horizon_s))
                .invalid("bad horizon");
        }
        let net = NetworkGraph::from_json(&read(&cfg.net)?)
            .invalid(format!("network {}", cfg.net.display()))?;
        let violations = net.validate();
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(anyhow!("{}", list.join("; ")))
                .invalid(format!("network {} is invalid", cfg.net.display()));
        }
        let base = load_demand(&read(&cfg.demand)?)
            .invalid(format!("demand {}", cfg.demand.display()))?;
        let signals = SignalFile::from_json(&read(&cfg.signals)?)
            .invalid(format!("signals {}", cfg.signals.display()))?;
        let aliases = match &cfg.aliases {
            Some(p) => AliasTable::from_json(&read(p)?).invalid(format!("aliases {}", p.display()))?,
            None => AliasTable::default(),
        };
        let mut specs = Vec::new();
        for p in &cfg.scenarios {
            specs.push(
                load_scenario(&read(p)?, &net, &aliases)
                    .invalid(format!("scenario {}", p.display()))?,
            );
        }
        let scenario = match specs.len() {
            0 => None,
            1 => specs.pop(),
            _ => Some(
                compose_sequential(&CompositionSpec {
                    scenarios: specs,
                    gap_s: cfg.gap_s,
                })
                .invalid("cannot compose scenarios")?,
            ),
        };
        let ods: Vec<OdPair> = match &scenario {
            Some(s) => apply_overlays(&base, s),
            None => base,
        };
        let mode = match cfg.seed {
            Some(seed) => DemandMode::Poisson { seed },
            None => DemandMode::Deterministic,
        };
        let trips = build_trips(&net, &ods, mode).invalid("cannot build trips")?;
        let prepared = Prepared {
            net,
            trips,
            signals,
            scenario,
        };
        prepared.control()?;
        Ok(prepared)
    }

    fn control(&self) -> Result<TrafficControl, Failure> {
        let mut ctl = TrafficControl::new(&self.net, &self.signals.signals, &self.signals.crossings)
            .invalid("signal plans")?;
        if let Some(s) = &self.scenario {
            s.apply_to_control(&self.net, &mut ctl).invalid("scenario overrides")?;
        }
        Ok(ctl)
    }
}

fn csv_bytes<F>(name: &str, f: F) -> Result<(String, Vec<u8>), Failure>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), campusflow::metrics::MetricsError>,
{
    let mut buf = Vec::new();
    f(&mut buf).fault(format!("writing {name}"))?;
    Ok((name.to_string(), buf))
}

pub fn ingest(
    osm: &Path,
    bbox: &str,
    out: &Path,
    classes: Option<&Path>,
    allow_u_turns: bool,
    simplify: bool,
) -> Result<(), Failure> {
    let bbox: BoundingBox = bbox.parse().invalid("bad --bbox")?;
    let doc = fs::read(osm).invalid(format!("cannot read {}", osm.display()))?;
    let classes = match classes {
        Some(p) => ClassDefaults::with_overrides(&read(p)?).invalid("road class table")?,
        None => ClassDefaults::default(),
    };
    let options = BuildOptions { allow_u_turns };
    let raw = osm_ingest::parse_osm(&doc).invalid(format!("OSM {}", osm.display()))?;
    for w in &raw.warnings {
        log::warn!("{w}");
    }
    let clipped = osm_ingest::filter_bbox(&raw, &bbox);
    let mut net = osm_ingest::build_graph(&clipped, &classes, options).invalid("building network")?;
    if simplify {
        net = osm_ingest::simplify_chains(&net);
    }
    log::info!(
        "network: {} nodes, {} links, {} movements",
        net.node_count(),
        net.link_count(),
        net.movement_count()
    );
    output::commit_file(out, net.to_json().as_bytes()).fault(format!("writing {}", out.display()))
}

pub fn run(cfg: &RunConfig, out: &Path, event_log: bool) -> Result<(), Failure> {
    let p = Prepared::load(cfg)?;
    let ctl = p.control()?;
    let options = SimOptions {
        record_events: event_log,
        record_census: false,
    };
    let res = run_simulation(&p.net, &p.trips, &ctl, cfg.horizon_s, options).fault("simulation")?;
    log::info!(
        "{} events, {} trips complete, {} incomplete",
        res.event_count,
        res.completed(),
        res.incomplete()
    );
    let summary = summarize(&res);
    let series: Vec<_> = res.links.iter().map(link_series).collect();
    let header = cfg.header("run");
    let comment = Some(header.as_str());
    let mut files = vec![
        csv_bytes("summary.csv", |w| write_summary_csv(w, &summary, comment))?,
        csv_bytes("trips.csv", |w| write_trips_csv(w, &res.trips, comment))?,
        csv_bytes("links.csv", |w| write_links_csv(w, &summary, comment))?,
        csv_bytes("state.csv", |w| write_state_csv(w, &series, comment))?,
    ];
    if event_log {
        files.push(("events.log".into(), format!("# {header}\n{}", res.event_log()).into_bytes()));
    }
    output::commit_dir(out, &files).fault(format!("writing {}", out.display()))
}

fn read_run(dir: &Path) -> Result<campusflow::metrics::NetworkSummary, Failure> {
    let summary = read(&dir.join("summary.csv"))?;
    let links = read(&dir.join("links.csv"))?;
    read_summary(&summary, &links).invalid(format!("run directory {}", dir.display()))
}

pub fn compare(baseline: &Path, variant: &Path, out: &Path) -> Result<(), Failure> {
    let report = compare_runs(&read_run(baseline)?, &read_run(variant)?);
    let mut buf = Vec::new();
    report
        .write_csv(&mut buf, Some("campusflow compare seed=none"))
        .fault("writing comparison")?;
    output::commit_file(out, &buf).fault(format!("writing {}", out.display()))
}

pub fn optimize(
    cfg: &RunConfig,
    budget: Option<usize>,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let mut opt = match config {
        Some(p) => OptimizerConfig::from_json(&read(p)?).invalid(format!("optimizer config {}", p.display()))?,
        None => OptimizerConfig::with_budget(budget.unwrap_or(50)),
    };
    if let Some(b) = budget {
        opt.budget = b;
    }
    if opt.budget == 0 {
        return Err(anyhow!("budget must be at least 1")).invalid("bad --budget");
    }
    let p = Prepared::load(cfg)?;
    let v0 = PlanVector::new(&p.signals.signals, opt.min_green_s).invalid("initial plans")?;
    let mut eval = Evaluator::new(&p.net, &p.trips, cfg.horizon_s);
    eval.crossings = &p.signals.crossings;
    eval.scenario = p.scenario.as_ref();
    if let Some(pen) = opt.incomplete_trip_penalty_s {
        eval.incomplete_penalty_s = pen;
    }
    let trace = hill_climb(&eval, &v0, &opt.step_schedule_s, opt.budget).fault("optimization")?;
    log::info!(
        "{} evaluations, objective {} -> {}",
        trace.evaluations(),
        trace.initial_objective(),
        trace.best_objective()
    );
    let header = cfg.header("optimize");
    let mut trace_csv = Vec::new();
    trace
        .write_csv(&mut trace_csv, Some(&header))
        .fault("writing trace")?;
    let best = SignalFile {
        signals: trace.best.decode().to_vec(),
        crossings: p.signals.crossings.clone(),
    };
    let files = vec![
        ("trace.csv".to_string(), trace_csv),
        ("best_plan.json".to_string(), best.to_json().into_bytes()),
    ];
    output::commit_dir(out, &files).fault(format!("writing {}", out.display()))
}

pub fn report(run: &Path, top: usize) -> Result<(), Failure> {
    let summary = read_run(run)?;
    let ranked = hotspot_ranking(&summary, top).invalid("bad --top")?;
    println!("rank,link_id,total_delay_s,max_queue,time_of_max_queue_s");
    for (i, id) in ranked.iter().enumerate() {
        let l = summary.links.iter().find(|l| l.link == *id).expect("ranked link present");
        println!(
            "{},{},{},{},{}",
            i + 1,
            id,
            fmt_g(l.total_delay_s),
            l.max_queue,
            fmt_g(l.time_of_max_queue_s)
        );
    }
    Ok(())
}
