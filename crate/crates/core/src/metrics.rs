//! Delay, queue and throughput indicators computed from a finished run.
//!
//! A vehicle counts as queued once it has spent longer on a link than the
//! link's free-flow time and has not yet left. The mesoscopic kernel keeps no
//! positions inside a link, so this is the only queue notion it supports.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::demand::VehicleId;
use crate::netgraph::LinkId;
use crate::simcore::{LinkLog, SimResult, TripRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trip {0} did not finish before the horizon; its delay is undefined")]
    IncompleteTrip(VehicleId),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("malformed summary: {0}")]
    Malformed(String),
}

/// How incomplete trips enter `mean_delay_s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IncompletePolicy {
    /// Mean over completed trips only.
    #[default]
    Exclude,
    /// Incomplete trips contribute their delay accrued up to the horizon.
    DelayAtHorizon,
}

/// Vehicles on the link at `t` that have exceeded free-flow time.
pub fn queue_length(log: &LinkLog, t: f64) -> usize {
    log.visits
        .iter()
        .filter(|v| v.entry_s + log.free_flow_s < t && v.exit_s.is_none_or(|x| x > t))
        .count()
}

/// Vehicles on the link at `t` (entered at or before `t`, not yet exited).
pub fn on_link_count(log: &LinkLog, t: f64) -> usize {
    log.visits
        .iter()
        .filter(|v| v.entry_s <= t && v.exit_s.is_none_or(|x| x > t))
        .count()
}

pub fn trip_delay(trip: &TripRecord) -> Result<f64, MetricsError> {
    trip.delay_s()
        .ok_or(MetricsError::IncompleteTrip(trip.vehicle_id))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StateSample {
    pub time_s: f64,
    pub on_link: usize,
    pub queued: usize,
}

/// Piecewise-constant occupancy of one link. Each sample holds from its time
/// until the next sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkSeries {
    pub link: LinkId,
    pub samples: Vec<StateSample>,
    /// Sum over exited vehicles of time on the link beyond free flow.
    pub total_link_delay_s: f64,
}

impl LinkSeries {
    /// Integral of the queue count over time, up to `until`.
    pub fn queue_integral(&self, until: f64) -> f64 {
        let mut area = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let end = self
                .samples
                .get(i + 1)
                .map_or(until, |n| n.time_s)
                .min(until);
            if end > s.time_s {
                area += s.queued as f64 * (end - s.time_s);
            }
        }
        area
    }

    /// Largest queue and the first instant it was reached.
    pub fn max_queue(&self) -> (usize, f64) {
        let mut best = (0, 0.0);
        for s in &self.samples {
            if s.queued > best.0 {
                best = (s.queued, s.time_s);
            }
        }
        best
    }
}

pub fn link_series(log: &LinkLog) -> LinkSeries {
    // Right-hand values at every instant where a count can change: entries,
    // exits, and the moment each vehicle runs past free-flow time.
    let mut times: Vec<f64> = Vec::with_capacity(log.visits.len() * 3);
    for v in &log.visits {
        times.push(v.entry_s);
        let due = v.entry_s + log.free_flow_s;
        if v.exit_s.is_none_or(|x| x > due) {
            times.push(due);
        }
        if let Some(x) = v.exit_s {
            times.push(x);
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let samples = times
        .into_iter()
        .map(|t| {
            let mut on_link = 0;
            let mut queued = 0;
            for v in &log.visits {
                let present = v.entry_s <= t && v.exit_s.is_none_or(|x| x > t);
                if present {
                    on_link += 1;
                    if v.entry_s + log.free_flow_s <= t {
                        queued += 1;
                    }
                }
            }
            StateSample {
                time_s: t,
                on_link,
                queued,
            }
        })
        .collect();
    LinkSeries {
        link: log.link,
        samples,
        total_link_delay_s: link_delay(log),
    }
}

fn link_delay(log: &LinkLog) -> f64 {
    log.visits
        .iter()
        .filter_map(|v| v.exit_s.map(|x| x - v.entry_s - log.free_flow_s))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkDelay {
    pub link: LinkId,
    pub total_delay_s: f64,
    pub max_queue: usize,
    pub time_of_max_queue_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkSummary {
    pub total_travel_time_s: f64,
    pub total_delay_s: f64,
    pub total_origin_wait_s: f64,
    pub completed_trips: usize,
    pub incomplete_trips: usize,
    /// `None` when no trip qualifies for the mean.
    pub mean_delay_s: Option<f64>,
    /// Link id order.
    pub links: Vec<LinkDelay>,
}

pub fn summarize(result: &SimResult) -> NetworkSummary {
    summarize_with(result, IncompletePolicy::Exclude)
}

pub fn summarize_with(result: &SimResult, policy: IncompletePolicy) -> NetworkSummary {
    let mut total_travel_time_s = 0.0;
    let mut total_delay_s = 0.0;
    let mut total_origin_wait_s = 0.0;
    let mut completed = 0;
    let mut incomplete_delay = 0.0;
    for trip in &result.trips {
        total_origin_wait_s += trip.origin_wait_s;
        match (trip.travel_time_s(), trip.delay_s()) {
            (Some(tt), Some(d)) => {
                total_travel_time_s += tt;
                total_delay_s += d;
                completed += 1;
            }
            _ => incomplete_delay += (result.horizon_s - trip.depart_s - trip.free_flow_s).max(0.0),
        }
    }
    let incomplete = result.trips.len() - completed;
    let mean_delay_s = match policy {
        IncompletePolicy::Exclude if completed > 0 => Some(total_delay_s / completed as f64),
        IncompletePolicy::DelayAtHorizon if !result.trips.is_empty() => {
            Some((total_delay_s + incomplete_delay) / result.trips.len() as f64)
        }
        _ => None,
    };
    let mut links: Vec<LinkDelay> = result
        .links
        .iter()
        .map(|log| {
            let series = link_series(log);
            let (max_queue, time_of_max_queue_s) = series.max_queue();
            LinkDelay {
                link: log.link,
                total_delay_s: series.total_link_delay_s,
                max_queue,
                time_of_max_queue_s,
            }
        })
        .collect();
    links.sort_by_key(|l| l.link);
    NetworkSummary {
        total_travel_time_s,
        total_delay_s,
        total_origin_wait_s,
        completed_trips: completed,
        incomplete_trips: incomplete,
        mean_delay_s,
        links,
    }
}

/// Top `k` links by accumulated delay, ties broken by ascending id.
pub fn hotspot_ranking(summary: &NetworkSummary, k: usize) -> Result<Vec<LinkId>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut ranked: Vec<&LinkDelay> = summary.links.iter().collect();
    ranked.sort_by(|a, b| {
        b.total_delay_s
            .total_cmp(&a.total_delay_s)
            .then(a.link.cmp(&b.link))
    });
    Ok(ranked.into_iter().take(k).map(|l| l.link).collect())
}

/// Renders `x` with six significant digits, `%g` style.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

fn writer<W: Write>(mut out: W, comment: Option<&str>) -> Result<csv::Writer<W>, MetricsError> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out))
}

pub fn write_trips_csv<W: Write>(
    out: W,
    trips: &[TripRecord],
    comment: Option<&str>,
) -> Result<(), MetricsError> {
    let mut w = writer(out, comment)?;
    w.write_record(["vehicle_id", "depart_s", "arrive_s", "origin_wait_s", "free_flow_s", "delay_s"])?;
    let mut sorted: Vec<&TripRecord> = trips.iter().collect();
    sorted.sort_by_key(|t| t.vehicle_id);
    for t in sorted {
        w.write_record([
            t.vehicle_id.to_string(),
            fmt_g(t.depart_s),
            opt(t.arrive_s),
            fmt_g(t.origin_wait_s),
            fmt_g(t.free_flow_s),
            opt(t.delay_s()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_links_csv<W: Write>(
    out: W,
    summary: &NetworkSummary,
    comment: Option<&str>,
) -> Result<(), MetricsError> {
    let mut w = writer(out, comment)?;
    w.write_record(["link_id", "total_delay_s", "max_queue", "time_of_max_queue_s"])?;
    for l in &summary.links {
        w.write_record([
            l.link.to_string(),
            fmt_g(l.total_delay_s),
            l.max_queue.to_string(),
            fmt_g(l.time_of_max_queue_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SUMMARY_HEADER: [&str; 6] = [
    "total_travel_time_s",
    "total_delay_s",
    "total_origin_wait_s",
    "completed_trips",
    "incomplete_trips",
    "mean_delay_s",
];

pub fn write_summary_csv<W: Write>(
    out: W,
    summary: &NetworkSummary,
    comment: Option<&str>,
) -> Result<(), MetricsError> {
    let mut w = writer(out, comment)?;
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        fmt_g(summary.total_travel_time_s),
        fmt_g(summary.total_delay_s),
        fmt_g(summary.total_origin_wait_s),
        summary.completed_trips.to_string(),
        summary.incomplete_trips.to_string(),
        opt(summary.mean_delay_s),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_state_csv<W: Write>(
    out: W,
    series: &[LinkSeries],
    comment: Option<&str>,
) -> Result<(), MetricsError> {
    let mut w = writer(out, comment)?;
    w.write_record(["time_s", "link_id", "on_link_count", "queue_count"])?;
    let mut rows: Vec<(LinkId, &StateSample)> = series
        .iter()
        .flat_map(|s| s.samples.iter().map(move |x| (s.link, x)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.time_s.total_cmp(&b.1.time_s)));
    for (link, s) in rows {
        w.write_record([
            fmt_g(s.time_s),
            link.to_string(),
            s.on_link.to_string(),
            s.queued.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn data_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, MetricsError> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| MetricsError::Malformed(format!("bad or missing {name}")))
}

/// Reads back `summary.csv` and `links.csv` as written by this module.
pub fn read_summary(summary_csv: &str, links_csv: &str) -> Result<NetworkSummary, MetricsError> {
    let mut r = data_reader(summary_csv);
    let header = r.headers()?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(MetricsError::Malformed("unexpected summary header".into()));
    }
    let rec = r
        .records()
        .next()
        .ok_or_else(|| MetricsError::Malformed("summary has no data row".into()))??;
    let mean = rec.get(5).unwrap_or("").trim();
    let mut summary = NetworkSummary {
        total_travel_time_s: field(&rec, 0, "total_travel_time_s")?,
        total_delay_s: field(&rec, 1, "total_delay_s")?,
        total_origin_wait_s: field(&rec, 2, "total_origin_wait_s")?,
        completed_trips: field(&rec, 3, "completed_trips")?,
        incomplete_trips: field(&rec, 4, "incomplete_trips")?,
        mean_delay_s: if mean.is_empty() {
            None
        } else {
            Some(field(&rec, 5, "mean_delay_s")?)
        },
        links: Vec::new(),
    };
    let mut r = data_reader(links_csv);
    for rec in r.records() {
        let rec = rec?;
        summary.links.push(LinkDelay {
            link: LinkId(field(&rec, 0, "link_id")?),
            total_delay_s: field(&rec, 1, "total_delay_s")?,
            max_queue: field(&rec, 2, "max_queue")?,
            time_of_max_queue_s: field(&rec, 3, "time_of_max_queue_s")?,
        });
    }
    Ok(summary)
}
