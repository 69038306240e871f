//! Default parameter table.
//!
//! Every numeric default used when an input omits a value lives here so that
//! use sites never carry their own literals.

/// Jam density applied when a link omits it (vehicles per meter per lane).
pub const JAM_DENSITY_PER_LANE_VPM: f64 = 0.15;

/// Saturation flow applied when a link omits it (vehicles per second per lane).
pub const SAT_FLOW_PER_LANE_VPS: f64 = 0.5;

/// Movement capacity factor when a movement omits it.
pub const CAPACITY_FACTOR: f64 = 1.0;

/// Mean Earth radius used for great-circle lengths, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Minimum green time enforced by the plan optimizer.
pub const MIN_GREEN_S: f64 = 5.0;

/// Step schedule for the coordinate-descent plan search.
pub const STEP_SCHEDULE_S: [f64; 4] = [8.0, 4.0, 2.0, 1.0];

/// Incomplete-trip penalty, expressed as a multiple of the horizon.
pub const INCOMPLETE_PENALTY_HORIZONS: f64 = 2.0;

/// Absolute tolerance used when checking that plan times sum to the cycle.
pub const PLAN_SUM_TOLERANCE_S: f64 = 1e-6;

/// Shipped per-class defaults: (class, speed km/h, lanes per direction).
pub const CLASS_TABLE: [(&str, f64, u32); 5] = [
    ("motorway", 80.0, 3),
    ("primary", 50.0, 2),
    ("secondary", 40.0, 2),
    ("residential", 30.0, 1),
    ("service", 20.0, 1),
];
