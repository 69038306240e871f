//! Mesoscopic traffic simulation for campus road networks: network model,
//! OpenStreetMap ingestion, demand expansion, an event-driven kinematic-wave
//! kernel, fixed-time signal control, scenarios, metrics and plan search.

pub mod defaults;
pub mod demand;
pub mod metrics;
pub mod netgraph;
pub mod optimizer;
pub mod osm_ingest;
pub mod scenarios;
pub mod signals;
pub mod simcore;
