//! The shipped 8-junction / 17-link benchmark instance.

use super::config::load_topology;
use super::NetworkTopology;

pub const BENCHMARK_CONFIG: &str = include_str!("../../assets/benchmark.toml");

/// The default benchmark network: 8 junctions, 17 links, 8 subsystems, 120 s
/// cycles, 40 km/h free speed, 1000-vehicle links. Subsystem S5 owns links
/// L10 and L11 and neighbors exactly S1 and S4.
pub fn default_benchmark() -> NetworkTopology {
    load_topology(BENCHMARK_CONFIG).expect("shipped benchmark config is valid")
}
