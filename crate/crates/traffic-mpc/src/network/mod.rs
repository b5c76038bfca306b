//! Network topology: links, junctions, turning fractions, subsystem partition.
//!
//! A topology is loaded from a structured config file (see [`config`]) or built
//! from the shipped benchmark instance, validated once, and then shared
//! read-only by the simulator and the controllers.

mod benchmark;
pub mod config;

pub use benchmark::default_benchmark;
pub use config::{load_topology, NetworkConfig};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const BETA_SUM_TOL: f64 = 1e-12;

/// Static per-link parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub id: String,
    /// Junction the link leaves from; `None` for network entry (source) links.
    pub upstream: Option<usize>,
    /// Junction the link arrives at; `None` for network exit (sink) links.
    pub downstream: Option<usize>,
    /// Storage capacity in vehicles.
    pub capacity: f64,
    pub lanes: u32,
    pub free_speed_kmh: f64,
    /// Saturated flow rate leaving the link, veh/s.
    pub sat_flow_vps: f64,
    /// Average vehicle length in meters.
    pub veh_length_m: f64,
}

impl LinkParams {
    pub fn is_source(&self) -> bool {
        self.upstream.is_none()
    }

    pub fn is_sink(&self) -> bool {
        self.downstream.is_none()
    }

    pub fn free_speed_mps(&self) -> f64 {
        self.free_speed_kmh / 3.6
    }
}

/// Static per-junction parameters. Incoming links and phase streams are
/// derived from the link set and the turning table.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionParams {
    pub id: String,
    pub cycle_s: f64,
    pub lost_time_s: f64,
    /// Cycle offsets to neighboring junctions, by junction index.
    pub offsets: BTreeMap<usize, f64>,
    /// Indices of links whose downstream junction is this one.
    pub incoming: Vec<usize>,
    /// Indices into [`NetworkTopology::streams`] controlled by this junction.
    pub phase_streams: Vec<usize>,
}

/// A signalized stream: the sub-flow of link `from` turning into link `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub from: usize,
    pub to: usize,
    pub junction: usize,
    /// Constant turning fraction; step-dependent values come from the table.
    pub beta: f64,
    /// Stream capacity C_{u,d}; defaults to the receiving link's capacity.
    pub capacity: f64,
}

/// Turning fractions beta[z][d], optionally time-varying per control step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TurningTable {
    /// Per source link: list of (destination link, fraction).
    rows: Vec<Vec<(usize, f64)>>,
    /// Optional per-step override; step k uses entry min(k, len - 1).
    schedule: Option<Vec<Vec<Vec<(usize, f64)>>>>,
}

impl TurningTable {
    pub fn new(rows: Vec<Vec<(usize, f64)>>) -> Self {
        TurningTable { rows, schedule: None }
    }

    pub fn with_schedule(rows: Vec<Vec<(usize, f64)>>, schedule: Vec<Vec<Vec<(usize, f64)>>>) -> Self {
        TurningTable { rows, schedule: Some(schedule) }
    }

    pub fn row(&self, link: usize, step: usize) -> &[(usize, f64)] {
        if let Some(schedule) = &self.schedule {
            let idx = step.min(schedule.len() - 1);
            return &schedule[idx][link];
        }
        &self.rows[link]
    }

    pub fn beta(&self, from: usize, to: usize, step: usize) -> f64 {
        self.row(from, step)
            .iter()
            .find(|(d, _)| *d == to)
            .map(|(_, b)| *b)
            .unwrap_or(0.0)
    }

    pub fn constant_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn is_time_varying(&self) -> bool {
        self.schedule.is_some()
    }
}

/// One subsystem of the partition: a center junction plus the links it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub id: String,
    pub junction: usize,
    pub links: Vec<usize>,
}

/// Subsystem partition with the derived symmetric neighbor map.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemPartition {
    pub subsystems: Vec<Subsystem>,
    /// neighbor_map[m] = sorted subsystem indices sharing a boundary stream with m.
    pub neighbor_map: Vec<Vec<usize>>,
    /// owner[link] = subsystem index, usize::MAX when unowned (invalid partitions).
    pub owner: Vec<usize>,
}

/// A validation finding: which entity broke which invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub entity: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

/// Immutable, validated network description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub links: Vec<LinkParams>,
    pub junctions: Vec<JunctionParams>,
    pub turning: TurningTable,
    pub partition: SubsystemPartition,
    pub streams: Vec<Stream>,
    /// Per link: stream indices leaving it (empty for sinks).
    pub out_streams: Vec<Vec<usize>>,
    /// Per link: stream indices feeding it.
    pub in_streams: Vec<Vec<usize>>,
    /// Junction processing order for the simulation sweep.
    pub sweep_order: Vec<usize>,
    /// Per link: upper bound on the transport delay in whole cycles.
    pub max_delay: Vec<usize>,
    link_index: BTreeMap<String, usize>,
    junction_index: BTreeMap<String, usize>,
}

impl NetworkTopology {
    /// Assemble and validate a topology from resolved parts. The turning table
    /// rows must be indexed like `links`.
    pub fn assemble(
        links: Vec<LinkParams>,
        mut junctions: Vec<JunctionParams>,
        turning: TurningTable,
        subsystems: Vec<Subsystem>,
        stream_capacity: &BTreeMap<(usize, usize), f64>,
    ) -> Result<Self> {
        let link_index: BTreeMap<String, usize> =
            links.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        let junction_index: BTreeMap<String, usize> =
            junctions.iter().enumerate().map(|(i, j)| (j.id.clone(), i)).collect();
        if link_index.len() != links.len() {
            return Err(Error::validation("links", "duplicate link id"));
        }
        if junction_index.len() != junctions.len() {
            return Err(Error::validation("junctions", "duplicate junction id"));
        }

        validate_links(&links, &junctions)?;
        validate_turning(&links, &junctions, &turning)?;

        // Streams in deterministic order: by (junction, from, to) declaration order.
        let mut streams = Vec::new();
        let mut out_streams = vec![Vec::new(); links.len()];
        let mut in_streams = vec![Vec::new(); links.len()];
        for (z, link) in links.iter().enumerate() {
            let Some(junction) = link.downstream else { continue };
            for &(d, beta) in turning.constant_rows()[z].iter() {
                let capacity =
                    stream_capacity.get(&(z, d)).copied().unwrap_or(links[d].capacity);
                let idx = streams.len();
                streams.push(Stream { from: z, to: d, junction, beta, capacity });
                out_streams[z].push(idx);
                in_streams[d].push(idx);
            }
        }

        for (j, junction) in junctions.iter_mut().enumerate() {
            junction.incoming =
                links.iter().enumerate().filter(|(_, l)| l.downstream == Some(j)).map(|(i, _)| i).collect();
            junction.phase_streams =
                streams.iter().enumerate().filter(|(_, s)| s.junction == j).map(|(i, _)| i).collect();
        }
        validate_junctions(&links, &junctions)?;

        let partition = build_partition(&links, &junctions, &streams, subsystems)?;
        let sweep_order = sweep_order(&links, &junctions);
        let max_delay = links
            .iter()
            .map(|l| {
                let c = l.downstream.map(|j| junctions[j].cycle_s).unwrap_or_else(|| {
                    l.upstream.map(|j| junctions[j].cycle_s).unwrap_or(1.0)
                });
                let tau_max = l.capacity * l.veh_length_m / (l.lanes as f64 * l.free_speed_mps());
                (tau_max / c).floor() as usize + 1
            })
            .collect();

        let topo = NetworkTopology {
            links,
            junctions,
            turning,
            partition,
            streams,
            out_streams,
            in_streams,
            sweep_order,
            max_delay,
            link_index,
            junction_index,
        };
        let diags = topo.validate_partition();
        if let Some(d) = diags.first() {
            return Err(Error::validation(d.entity.clone(), d.message.clone()));
        }
        Ok(topo)
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_junctions(&self) -> usize {
        self.junctions.len()
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn n_subsystems(&self) -> usize {
        self.partition.subsystems.len()
    }

    pub fn link_idx(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn junction_idx(&self, id: &str) -> Option<usize> {
        self.junction_index.get(id).copied()
    }

    /// Cycle time of the junction controlling link `z` (its downstream
    /// junction); sink links fall back to their upstream junction's cycle.
    pub fn link_cycle(&self, z: usize) -> f64 {
        let link = &self.links[z];
        let j = link.downstream.or(link.upstream).expect("link attached to no junction");
        self.junctions[j].cycle_s
    }

    pub fn source_links(&self) -> impl Iterator<Item = usize> + '_ {
        self.links.iter().enumerate().filter(|(_, l)| l.is_source()).map(|(i, _)| i)
    }

    pub fn sink_links(&self) -> impl Iterator<Item = usize> + '_ {
        self.links.iter().enumerate().filter(|(_, l)| l.is_sink()).map(|(i, _)| i)
    }

    /// Turning fraction for a stream at a given control step.
    pub fn stream_beta(&self, stream: usize, step: usize) -> f64 {
        let s = &self.streams[stream];
        if self.turning.is_time_varying() {
            self.turning.beta(s.from, s.to, step)
        } else {
            s.beta
        }
    }

    /// Sum of turning fractions over all streams feeding link `d` at `step`,
    /// the denominator of the downstream-supply share in the outflow limit.
    pub fn incoming_beta_sum(&self, d: usize, step: usize) -> f64 {
        self.in_streams[d].iter().map(|&s| self.stream_beta(s, step)).sum()
    }

    /// Partition-level diagnostics; empty when the partition invariants hold.
    pub fn validate_partition(&self) -> Vec<Diagnostic> {
        validate_partition_parts(&self.links, &self.junctions, &self.partition)
    }

    /// All structural diagnostics (used by `topology validate`).
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = self.validate_partition();
        for (z, link) in self.links.iter().enumerate() {
            if !link.is_sink() {
                let sum: f64 = self.turning.constant_rows()[z].iter().map(|(_, b)| b).sum();
                if (sum - 1.0).abs() > BETA_SUM_TOL {
                    diags.push(Diagnostic {
                        entity: format!("link {}", link.id),
                        message: format!("turning fractions sum to {sum}, expected 1"),
                    });
                }
            }
        }
        diags
    }
}

/// Standalone form of the partition check, mirroring the topology method.
pub fn validate_partition(topo: &NetworkTopology) -> Vec<Diagnostic> {
    topo.validate_partition()
}

fn validate_links(links: &[LinkParams], junctions: &[JunctionParams]) -> Result<()> {
    for link in links {
        let entity = format!("link {}", link.id);
        if link.capacity <= 0.0 {
            return Err(Error::validation(entity, "capacity must be > 0"));
        }
        if link.lanes < 1 {
            return Err(Error::validation(entity, "lanes must be >= 1"));
        }
        if link.free_speed_kmh <= 0.0 {
            return Err(Error::validation(entity, "free speed must be > 0"));
        }
        if link.sat_flow_vps <= 0.0 {
            return Err(Error::validation(entity, "saturation flow must be > 0"));
        }
        if link.veh_length_m <= 0.0 {
            return Err(Error::validation(entity, "vehicle length must be > 0"));
        }
        if link.upstream.is_none() && link.downstream.is_none() {
            return Err(Error::validation(entity, "link attached to no junction"));
        }
        for j in [link.upstream, link.downstream].into_iter().flatten() {
            if j >= junctions.len() {
                return Err(Error::validation(entity, "unknown junction reference"));
            }
        }
    }
    Ok(())
}

fn validate_turning(
    links: &[LinkParams],
    junctions: &[JunctionParams],
    turning: &TurningTable,
) -> Result<()> {
    if turning.constant_rows().len() != links.len() {
        return Err(Error::validation("turning", "turning table must cover every link"));
    }
    let check_rows = |rows: &[Vec<(usize, f64)>], what: &str| -> Result<()> {
        for (z, link) in links.iter().enumerate() {
            let entity = format!("link {}", link.id);
            let row = &rows[z];
            if link.is_sink() {
                if !row.is_empty() {
                    return Err(Error::validation(entity, "sink link cannot have turning fractions"));
                }
                continue;
            }
            if row.is_empty() {
                return Err(Error::validation(entity, "non-sink link needs turning fractions"));
            }
            let junction = link.downstream.expect("non-sink has downstream");
            let mut sum = 0.0;
            for &(d, beta) in row {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::validation(entity.clone(), "turning fraction outside [0, 1]"));
                }
                if links[d].upstream != Some(junction) {
                    return Err(Error::validation(
                        entity.clone(),
                        format!(
                            "turn to {} does not leave junction {}",
                            links[d].id, junctions[junction].id
                        ),
                    ));
                }
                sum += beta;
            }
            if (sum - 1.0).abs() > BETA_SUM_TOL {
                return Err(Error::validation(
                    entity,
                    format!("{what} turning fractions sum to {sum}, expected 1"),
                ));
            }
        }
        Ok(())
    };
    check_rows(turning.constant_rows(), "constant")?;
    if let Some(schedule) = &turning.schedule {
        if schedule.is_empty() {
            return Err(Error::validation("turning", "empty turning schedule"));
        }
        for (k, rows) in schedule.iter().enumerate() {
            if rows.len() != links.len() {
                return Err(Error::validation("turning", format!("schedule step {k} misses links")));
            }
            check_rows(rows, "scheduled")?;
        }
    }
    Ok(())
}

fn validate_junctions(links: &[LinkParams], junctions: &[JunctionParams]) -> Result<()> {
    for junction in junctions {
        let entity = format!("junction {}", junction.id);
        if junction.cycle_s <= 0.0 {
            return Err(Error::validation(entity, "cycle time must be > 0"));
        }
        if junction.lost_time_s < 0.0 || junction.lost_time_s >= junction.cycle_s {
            return Err(Error::validation(entity, "lost time must lie in [0, cycle)"));
        }
        for &z in &junction.incoming {
            let has_stream = !links[z].is_sink();
            if has_stream && junction.phase_streams.is_empty() {
                return Err(Error::validation(
                    entity.clone(),
                    format!("incoming link {} has no phase stream", links[z].id),
                ));
            }
        }
    }
    Ok(())
}

fn build_partition(
    links: &[LinkParams],
    junctions: &[JunctionParams],
    streams: &[Stream],
    subsystems: Vec<Subsystem>,
) -> Result<SubsystemPartition> {
    let mut owner = vec![usize::MAX; links.len()];
    for (m, sub) in subsystems.iter().enumerate() {
        if sub.junction >= junctions.len() {
            return Err(Error::validation(
                format!("subsystem {}", sub.id),
                "unknown center junction",
            ));
        }
        for &z in &sub.links {
            if owner[z] != usize::MAX {
                return Err(Error::validation(
                    format!("link {}", links[z].id),
                    "owned by more than one subsystem",
                ));
            }
            owner[z] = m;
        }
    }

    // Neighbors are subsystems connected by any boundary stream, in either
    // direction, which makes the relation symmetric by construction.
    let mut neighbor_map = vec![Vec::new(); subsystems.len()];
    for stream in streams {
        let a = owner[stream.from];
        let b = owner[stream.to];
        if a == usize::MAX || b == usize::MAX || a == b {
            continue;
        }
        if !neighbor_map[a].contains(&b) {
            neighbor_map[a].push(b);
            neighbor_map[b].push(a);
        }
    }
    for row in &mut neighbor_map {
        row.sort_unstable();
    }
    Ok(SubsystemPartition { subsystems, neighbor_map, owner })
}

fn validate_partition_parts(
    links: &[LinkParams],
    junctions: &[JunctionParams],
    partition: &SubsystemPartition,
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (z, link) in links.iter().enumerate() {
        if partition.owner.get(z).copied().unwrap_or(usize::MAX) == usize::MAX {
            diags.push(Diagnostic {
                entity: format!("link {}", link.id),
                message: "unowned link: not assigned to any subsystem".into(),
            });
        }
    }
    for (m, sub) in partition.subsystems.iter().enumerate() {
        if sub.junction >= junctions.len() {
            diags.push(Diagnostic {
                entity: format!("subsystem {}", sub.id),
                message: "center junction out of range".into(),
            });
        }
        for &n in &partition.neighbor_map[m] {
            if !partition.neighbor_map[n].contains(&m) {
                diags.push(Diagnostic {
                    entity: format!("subsystem {}", sub.id),
                    message: format!(
                        "asymmetric neighbor: {} lists {} but not vice versa",
                        sub.id, partition.subsystems[n].id
                    ),
                });
            }
        }
    }
    diags
}

/// Fixed, deterministic junction processing order: breadth-first from the
/// junctions fed by source links, ties and unreachable junctions by index.
fn sweep_order(links: &[LinkParams], junctions: &[JunctionParams]) -> Vec<usize> {
    let n = junctions.len();
    let mut depth = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for link in links {
        if link.is_source() {
            if let Some(j) = link.downstream {
                if depth[j] == usize::MAX {
                    depth[j] = 0;
                    queue.push_back(j);
                }
            }
        }
    }
    while let Some(j) = queue.pop_front() {
        for link in links {
            if link.upstream == Some(j) {
                if let Some(d) = link.downstream {
                    if depth[d] == usize::MAX {
                        depth[d] = depth[j] + 1;
                        queue.push_back(d);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (depth[j], j));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_counts_and_parameters() {
        let topo = default_benchmark();
        assert_eq!(topo.n_junctions(), 8);
        assert_eq!(topo.n_links(), 17);
        assert_eq!(topo.n_subsystems(), 8);
        for j in &topo.junctions {
            assert_eq!(j.cycle_s, 120.0);
        }
        for l in &topo.links {
            assert_eq!(l.capacity, 1000.0);
            assert_eq!(l.free_speed_kmh, 40.0);
        }
    }

    #[test]
    fn benchmark_subsystem_five_wiring() {
        let topo = default_benchmark();
        let s5 = topo
            .partition
            .subsystems
            .iter()
            .position(|s| s.id == "S5")
            .expect("subsystem S5 present");
        let owned: Vec<&str> = topo.partition.subsystems[s5]
            .links
            .iter()
            .map(|&z| topo.links[z].id.as_str())
            .collect();
        assert_eq!(owned, vec!["L10", "L11"]);

        let neighbors: Vec<&str> = topo.partition.neighbor_map[s5]
            .iter()
            .map(|&m| topo.partition.subsystems[m].id.as_str())
            .collect();
        assert_eq!(neighbors, vec!["S1", "S4"]);

        // Links 1-3 (subsystem 1) feed link 10; subsystem 4's links feed link 11.
        let l10 = topo.link_idx("L10").unwrap();
        let feeders10: Vec<&str> = topo.in_streams[l10]
            .iter()
            .map(|&s| topo.links[topo.streams[s].from].id.as_str())
            .collect();
        assert_eq!(feeders10, vec!["L1", "L2", "L3"]);
        let l11 = topo.link_idx("L11").unwrap();
        let feeders11: Vec<&str> = topo.in_streams[l11]
            .iter()
            .map(|&s| topo.links[topo.streams[s].from].id.as_str())
            .collect();
        assert_eq!(feeders11, vec!["L8", "L9"]);
    }

    #[test]
    fn benchmark_partition_is_clean() {
        let topo = default_benchmark();
        assert!(topo.validate_partition().is_empty());
        assert!(topo.validate().is_empty());
    }

    #[test]
    fn every_positive_beta_has_stream_and_capacity() {
        let topo = default_benchmark();
        for (z, row) in topo.turning.constant_rows().iter().enumerate() {
            for &(d, beta) in row {
                if beta > 0.0 {
                    let stream = topo
                        .streams
                        .iter()
                        .find(|s| s.from == z && s.to == d)
                        .expect("stream for positive turning fraction");
                    assert!(stream.capacity > 0.0);
                }
            }
        }
    }

    #[test]
    fn unowned_link_diagnostic() {
        let topo = default_benchmark();
        let mut partition = topo.partition.clone();
        let dropped = partition.subsystems[0].links.pop().unwrap();
        partition.owner[dropped] = usize::MAX;
        let diags = validate_partition_parts(&topo.links, &topo.junctions, &partition);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("unowned link"), "{}", diags[0]);
    }

    #[test]
    fn asymmetric_neighbor_diagnostic() {
        let topo = default_benchmark();
        let mut partition = topo.partition.clone();
        let n = partition.neighbor_map[0][0];
        partition.neighbor_map[n].retain(|&m| m != 0);
        let diags = validate_partition_parts(&topo.links, &topo.junctions, &partition);
        assert!(diags.iter().any(|d| d.message.contains("asymmetric neighbor")));
    }

    #[test]
    fn sweep_order_is_deterministic_and_complete() {
        let topo = default_benchmark();
        let mut seen = topo.sweep_order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..topo.n_junctions()).collect::<Vec<_>>());
        assert_eq!(topo.sweep_order, sweep_order(&topo.links, &topo.junctions));
    }
}
