//! Structured text config for network topologies.
//!
//! The format is TOML with four main sections — `[[links]]`, `[[junctions]]`,
//! `[[turning]]`, `[[partition]]` — plus optional `[[offsets]]` and
//! `[[stream_capacity]]` overrides. See `assets/benchmark.toml` for a complete
//! example and `README.md` for the field-by-field schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{JunctionParams, LinkParams, NetworkTopology, Subsystem, TurningTable};

pub const DEFAULT_VEH_LENGTH_M: f64 = 7.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkConfig {
    #[serde(default)]
    pub network: NetworkMeta,
    pub links: Vec<LinkEntry>,
    pub junctions: Vec<JunctionEntry>,
    pub turning: Vec<TurningEntry>,
    pub partition: Vec<PartitionEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<OffsetEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stream_capacity: Vec<StreamCapacityEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct NetworkMeta {
    #[serde(default)]
    pub name: String,
    /// Average vehicle length applied to links that do not override it.
    pub veh_length_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkEntry {
    pub id: String,
    /// Junction the link leaves; omit for source links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    /// Junction the link enters; omit for sink links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream: Option<String>,
    pub capacity: f64,
    pub lanes: u32,
    pub free_speed_kmh: f64,
    pub sat_flow_vps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub veh_length_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JunctionEntry {
    pub id: String,
    pub cycle_s: f64,
    pub lost_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TurningEntry {
    pub from: String,
    pub to: String,
    pub fraction: f64,
    /// Optional per-control-step fractions; step k uses entry min(k, len - 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PartitionEntry {
    pub id: String,
    pub junction: String,
    pub links: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OffsetEntry {
    pub from: String,
    pub to: String,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StreamCapacityEntry {
    pub from: String,
    pub to: String,
    pub capacity: f64,
}

/// Parse and validate a topology from config text.
pub fn load_topology(config_text: &str) -> Result<NetworkTopology> {
    let config: NetworkConfig =
        toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    build(&config)
}

pub fn build(config: &NetworkConfig) -> Result<NetworkTopology> {
    let junction_index: BTreeMap<&str, usize> =
        config.junctions.iter().enumerate().map(|(i, j)| (j.id.as_str(), i)).collect();
    let link_index: BTreeMap<&str, usize> =
        config.links.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();

    let resolve_junction = |id: &str| -> Result<usize> {
        junction_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("junction {id}"), "referenced but not declared"))
    };
    let resolve_link = |id: &str| -> Result<usize> {
        link_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("link {id}"), "referenced but not declared"))
    };

    let default_len = config.network.veh_length_m.unwrap_or(DEFAULT_VEH_LENGTH_M);
    let links = config
        .links
        .iter()
        .map(|entry| {
            Ok(LinkParams {
                id: entry.id.clone(),
                upstream: entry.upstream.as_deref().map(resolve_junction).transpose()?,
                downstream: entry.downstream.as_deref().map(resolve_junction).transpose()?,
                capacity: entry.capacity,
                lanes: entry.lanes,
                free_speed_kmh: entry.free_speed_kmh,
                sat_flow_vps: entry.sat_flow_vps,
                veh_length_m: entry.veh_length_m.unwrap_or(default_len),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut junctions = config
        .junctions
        .iter()
        .map(|entry| JunctionParams {
            id: entry.id.clone(),
            cycle_s: entry.cycle_s,
            lost_time_s: entry.lost_time_s,
            offsets: BTreeMap::new(),
            incoming: Vec::new(),
            phase_streams: Vec::new(),
        })
        .collect::<Vec<_>>();
    for entry in &config.offsets {
        let a = resolve_junction(&entry.from)?;
        let b = resolve_junction(&entry.to)?;
        junctions[a].offsets.insert(b, entry.offset_s);
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); links.len()];
    let mut schedule_len = None;
    for entry in &config.turning {
        let from = resolve_link(&entry.from)?;
        let to = resolve_link(&entry.to)?;
        rows[from].push((to, entry.fraction));
        if let Some(s) = &entry.schedule {
            match schedule_len {
                None => schedule_len = Some(s.len()),
                Some(n) if n != s.len() => {
                    return Err(Error::validation(
                        format!("turning {} -> {}", entry.from, entry.to),
                        "all turning schedules must have the same length",
                    ));
                }
                _ => {}
            }
        }
    }
    let turning = match schedule_len {
        None => TurningTable::new(rows),
        Some(n) => {
            if n == 0 {
                return Err(Error::validation("turning", "empty turning schedule"));
            }
            let mut schedule = vec![vec![Vec::new(); links.len()]; n];
            for entry in &config.turning {
                let from = resolve_link(&entry.from)?;
                let to = resolve_link(&entry.to)?;
                for (k, step) in schedule.iter_mut().enumerate() {
                    let frac = entry.schedule.as_ref().map(|s| s[k]).unwrap_or(entry.fraction);
                    step[from].push((to, frac));
                }
            }
            TurningTable::with_schedule(rows, schedule)
        }
    };

    let subsystems = config
        .partition
        .iter()
        .map(|entry| {
            Ok(Subsystem {
                id: entry.id.clone(),
                junction: resolve_junction(&entry.junction)?,
                links: entry.links.iter().map(|l| resolve_link(l)).collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stream_capacity = BTreeMap::new();
    for entry in &config.stream_capacity {
        stream_capacity.insert((resolve_link(&entry.from)?, resolve_link(&entry.to)?), entry.capacity);
    }

    NetworkTopology::assemble(links, junctions, turning, subsystems, &stream_capacity)
}

/// Reconstruct the config representation of a topology. Feeding the result
/// back through [`load_topology`] yields an equal topology.
pub fn to_config(topo: &NetworkTopology) -> NetworkConfig {
    let link_id = |z: usize| topo.links[z].id.clone();
    let junction_id = |j: usize| topo.junctions[j].id.clone();
    NetworkConfig {
        network: NetworkMeta { name: String::new(), veh_length_m: None },
        links: topo
            .links
            .iter()
            .map(|l| LinkEntry {
                id: l.id.clone(),
                upstream: l.upstream.map(&junction_id),
                downstream: l.downstream.map(&junction_id),
                capacity: l.capacity,
                lanes: l.lanes,
                free_speed_kmh: l.free_speed_kmh,
                sat_flow_vps: l.sat_flow_vps,
                veh_length_m: Some(l.veh_length_m),
            })
            .collect(),
        junctions: topo
            .junctions
            .iter()
            .map(|j| JunctionEntry { id: j.id.clone(), cycle_s: j.cycle_s, lost_time_s: j.lost_time_s })
            .collect(),
        turning: topo
            .links
            .iter()
            .enumerate()
            .flat_map(|(z, _)| {
                topo.turning.constant_rows()[z].iter().map(move |&(d, beta)| (z, d, beta))
            })
            .map(|(z, d, beta)| TurningEntry {
                from: link_id(z),
                to: link_id(d),
                fraction: beta,
                schedule: None,
            })
            .collect(),
        partition: topo
            .partition
            .subsystems
            .iter()
            .map(|s| PartitionEntry {
                id: s.id.clone(),
                junction: junction_id(s.junction),
                links: s.links.iter().map(|&z| link_id(z)).collect(),
            })
            .collect(),
        offsets: topo
            .junctions
            .iter()
            .flat_map(|j| {
                j.offsets
                    .iter()
                    .map(|(&to, &offset_s)| OffsetEntry {
                        from: j.id.clone(),
                        to: junction_id(to),
                        offset_s,
                    })
                    .collect::<Vec<_>>()
            })
            .collect(),
        stream_capacity: topo
            .streams
            .iter()
            .filter(|s| s.capacity != topo.links[s.to].capacity)
            .map(|s| StreamCapacityEntry {
                from: link_id(s.from),
                to: link_id(s.to),
                capacity: s.capacity,
            })
            .collect(),
    }
}

pub fn to_config_string(topo: &NetworkTopology) -> String {
    toml::to_string(&to_config(topo)).expect("topology serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::default_benchmark;

    const MINIMAL: &str = r#"
        [[links]]
        id = "in"
        downstream = "J"
        capacity = 500.0
        lanes = 1
        free_speed_kmh = 50.0
        sat_flow_vps = 0.5

        [[links]]
        id = "out"
        upstream = "J"
        capacity = 500.0
        lanes = 1
        free_speed_kmh = 50.0
        sat_flow_vps = 0.5

        [[junctions]]
        id = "J"
        cycle_s = 60.0
        lost_time_s = 5.0

        [[turning]]
        from = "in"
        to = "out"
        fraction = 1.0

        [[partition]]
        id = "S"
        junction = "J"
        links = ["in", "out"]
    "#;

    #[test]
    fn minimal_network_loads() {
        let topo = load_topology(MINIMAL).unwrap();
        assert_eq!(topo.n_links(), 2);
        assert_eq!(topo.n_junctions(), 1);
        assert_eq!(topo.n_subsystems(), 1);
        assert_eq!(topo.n_streams(), 1);
        assert!(topo.links[0].is_source());
        assert!(topo.links[1].is_sink());
        assert_eq!(topo.links[0].veh_length_m, DEFAULT_VEH_LENGTH_M);
    }

    #[test]
    fn beta_sum_violation_names_link() {
        let broken = MINIMAL.replace("fraction = 1.0", "fraction = 0.9");
        let err = load_topology(&broken).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("link in"), "{msg}");
        assert!(msg.contains("sum"), "{msg}");
    }

    #[test]
    fn malformed_text_is_parse_error() {
        let err = load_topology("[[links]\nid=").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn round_trip_preserves_topology() {
        let topo = default_benchmark();
        let text = to_config_string(&topo);
        let reparsed = load_topology(&text).unwrap();
        assert_eq!(topo, reparsed);
    }

    #[test]
    fn round_trip_preserves_minimal() {
        let topo = load_topology(MINIMAL).unwrap();
        let reparsed = load_topology(&to_config_string(&topo)).unwrap();
        assert_eq!(topo, reparsed);
    }
}
