//! Command-line experiment harness for data-driven moving horizon
//! estimation: configuration parsing, dataset and run CSV serialization,
//! seeded experiment orchestration, and SVG figure emission.

pub mod commands;
pub mod config;
pub mod dataio;
pub mod svg;
