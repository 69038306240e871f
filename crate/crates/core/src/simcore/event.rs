use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use crate::demand::VehicleId;
use crate::netgraph::LinkId;
use crate::signals::SignalId;

/// Event classes, declared in processing priority order for equal timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    PhaseChange,
    HoleArrival,
    Departure,
    ExitCandidate,
    HorizonEnd,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::PhaseChange => "PhaseChange",
            EventKind::HoleArrival => "HoleArrival",
            EventKind::Departure => "Departure",
            EventKind::ExitCandidate => "ExitCandidate",
            EventKind::HorizonEnd => "HorizonEnd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Vehicle(VehicleId),
    Signal(SignalId),
    Link(LinkId),
    Clock,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Vehicle(v) => write!(f, "veh:{v}"),
            Subject::Signal(s) => write!(f, "sig:{s}"),
            Subject::Link(l) => write!(f, "link:{l}"),
            Subject::Clock => f.write_str("clock"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub subject: Subject,
    pub seq: u64,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order: time, kind priority, subject id, insertion sequence.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.kind.cmp(&other.kind))
            .then(self.subject.cmp(&other.subject))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub(crate) fn push(&mut self, time_s: f64, kind: EventKind, subject: Subject) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            time_s,
            kind,
            subject,
            seq,
        }));
    }

    pub(crate) fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }
}

/// One processed event as written to the event log.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time_s: f64,
    pub kind: EventKind,
    pub subject: Subject,
    pub detail: String,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.time_s, self.kind, self.subject, self.detail
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_breaks_time_ties() {
        let mut q = EventQueue::default();
        q.push(5.0, EventKind::ExitCandidate, Subject::Vehicle(VehicleId(2)));
        q.push(5.0, EventKind::HorizonEnd, Subject::Clock);
        q.push(5.0, EventKind::ExitCandidate, Subject::Vehicle(VehicleId(1)));
        q.push(5.0, EventKind::PhaseChange, Subject::Signal(SignalId(1)));
        q.push(5.0, EventKind::Departure, Subject::Vehicle(VehicleId(9)));
        q.push(5.0, EventKind::HoleArrival, Subject::Link(LinkId(3)));
        q.push(4.0, EventKind::HorizonEnd, Subject::Clock);
        let order: Vec<(f64, EventKind)> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time_s, e.kind))
            .collect();
        assert_eq!(
            order,
            vec![
                (4.0, EventKind::HorizonEnd),
                (5.0, EventKind::PhaseChange),
                (5.0, EventKind::HoleArrival),
                (5.0, EventKind::Departure),
                (5.0, EventKind::ExitCandidate),
                (5.0, EventKind::ExitCandidate),
                (5.0, EventKind::HorizonEnd),
            ]
        );
    }

    #[test]
    fn equal_exit_candidates_go_by_vehicle_id() {
        let mut q = EventQueue::default();
        q.push(1.0, EventKind::ExitCandidate, Subject::Vehicle(VehicleId(7)));
        q.push(1.0, EventKind::ExitCandidate, Subject::Vehicle(VehicleId(3)));
        assert_eq!(q.pop().unwrap().subject, Subject::Vehicle(VehicleId(3)));
    }

    #[test]
    fn record_is_tab_separated() {
        let r = EventRecord {
            time_s: 12.5,
            kind: EventKind::Departure,
            subject: Subject::Vehicle(VehicleId(4)),
            detail: "origin=1".into(),
        };
        assert_eq!(r.to_string(), "12.5\tDeparture\tveh:4\torigin=1");
    }
}
