//! Shared support for the integration suites: a per-byte shadow-map
//! oracle that mirrors the record table by brute force, and a seeded
//! generator of small random programs with known access expectations.

pub mod oracle;
pub mod randprog;
