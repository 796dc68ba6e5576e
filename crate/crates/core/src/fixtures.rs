//! Embedded graph fixtures.
//!
//! Two graphs ship with the library. The *open rectangle* is a thin
//! rectangular loop whose bottom side has a small opening, so points on
//! either side of the gap are a few centimeters apart in the plane but
//! almost the whole perimeter apart along the graph. Its anchor sets place
//! each benchmark's minimizer at exactly one mesh point, on the top side
//! directly above the gap region. The *synthetic telecom* network is an
//! irregular planar street grid with two long parallel corridors that are
//! connected only at their outer ends, plus a few curved streets.

use crate::error::{Error, Result};
use crate::graph::MetricGraph;

pub const OPEN_RECTANGLE: &str = include_str!("../fixtures/open_rectangle.json");
pub const SYNTHETIC_TELECOM: &str = include_str!("../fixtures/synthetic_telecom.json");

/// Names accepted by [`load`].
pub fn names() -> &'static [&'static str] {
    &["open-rectangle", "synthetic-telecom"]
}

/// Loads an embedded fixture by name.
pub fn load(name: &str) -> Result<MetricGraph> {
    match name {
        "open-rectangle" => MetricGraph::from_json_str(OPEN_RECTANGLE),
        "synthetic-telecom" => MetricGraph::from_json_str(SYNTHETIC_TELECOM),
        other => Err(Error::Config(format!(
            "unknown fixture '{other}' (available: {})",
            names().join(", ")
        ))),
    }
}

pub fn open_rectangle() -> MetricGraph {
    MetricGraph::from_json_str(OPEN_RECTANGLE).expect("embedded fixture is valid")
}

pub fn synthetic_telecom() -> MetricGraph {
    MetricGraph::from_json_str(SYNTHETIC_TELECOM).expect("embedded fixture is valid")
}
