//! Shared test support: fixtures, a fixed-step reference simulator and a
//! random instance generator.
#![allow(dead_code)]

pub mod checks;
pub mod fixtures;
pub mod oracle;
pub mod random;
