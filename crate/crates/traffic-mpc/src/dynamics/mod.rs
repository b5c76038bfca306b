//! Discrete-time traffic plant: link states, per-destination queues, transport
//! delay, and the three-regime flow limits, advanced one junction cycle at a
//! time.
//!
//! The same stepping code serves as the simulation truth model (exact `min`,
//! physical clamping) and as the prediction model inside both MPCs (softmin
//! surrogate, no clamping), selected through [`StepOptions`].

pub mod clock;

pub use clock::{resample_boundary_flow, ClockSync};

use std::collections::VecDeque;

use crate::network::{LinkParams, NetworkTopology};

/// Numerical slack below which a clamp is considered float dust, not an event.
const CLAMP_EVENT_TOL: f64 = 1e-9;

/// Transport delay of inflow travelling the non-queued portion of a link,
/// split into whole cycles and a fractional remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delay {
    /// Whole-cycle delay.
    pub delta: usize,
    /// Fractional remainder in seconds, in `[0, cycle)`.
    pub gamma_s: f64,
    /// Total travel time in seconds along the free portion.
    pub travel_s: f64,
}

/// Delay of flow entering a link before it reaches the tail of the queue.
///
/// The travel time covers the non-queued portion of the link at free speed:
/// `tau = (C - q) * l_veh / (lanes * v_free)`, with `delta = floor(tau / c)`
/// whole cycles and `gamma = rem(tau, c)` seconds.
pub fn compute_delay(link: &LinkParams, queue: f64, cycle_s: f64) -> Delay {
    let free_vehicles = (link.capacity - queue).max(0.0);
    let travel_s = free_vehicles * link.veh_length_m / (link.lanes as f64 * link.free_speed_mps());
    let delta = (travel_s / cycle_s).floor() as usize;
    let gamma_s = travel_s - delta as f64 * cycle_s;
    Delay { delta, gamma_s, travel_s }
}

/// Blend of two delayed inflow samples, Eq-style:
/// `((c - gamma)/c) * f_in(k - delta) + (gamma/c) * f_in(k - delta - 1)`.
pub fn arrival_blend(f_delayed: f64, f_delayed_prev: f64, gamma_s: f64, cycle_s: f64) -> f64 {
    ((cycle_s - gamma_s) / cycle_s) * f_delayed + (gamma_s / cycle_s) * f_delayed_prev
}

/// Delayed flow rate arriving at the tail of the queue.
///
/// `same_step_inflow` supplies `f_in(k)` for the `delta = 0` case, where the
/// current-step inflow participates in its own arrival; history shortfall is
/// covered by the warm-up value the state was initialized with.
pub fn arrival_flow(state: &LinkState, delay: &Delay, cycle_s: f64, same_step_inflow: f64) -> f64 {
    let sample = |lag: usize| -> f64 {
        if lag == 0 {
            same_step_inflow
        } else {
            state.inflow_history[(lag - 1).min(state.inflow_history.len() - 1)]
        }
    };
    arrival_blend(sample(delay.delta), sample(delay.delta + 1), delay.gamma_s, cycle_s)
}

/// How the three-regime minimum is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinMode {
    /// Exact `min`, used by the plant.
    Exact,
    /// Softmin surrogate `-s ln(sum exp(-x/s))` with temperature
    /// `s = factor * sat_flow`, used inside optimization so the prediction
    /// cost stays differentiable. The surrogate error is at most `s ln 3`.
    Soft { temperature_factor: f64 },
}

impl MinMode {
    fn combine(&self, terms: &[f64], sat_flow: f64) -> f64 {
        match *self {
            MinMode::Exact => terms.iter().copied().fold(f64::INFINITY, f64::min),
            MinMode::Soft { temperature_factor } => {
                let s = temperature_factor * sat_flow;
                if s <= 0.0 {
                    return terms.iter().copied().fold(f64::INFINITY, f64::min);
                }
                let m = terms.iter().copied().fold(f64::INFINITY, f64::min);
                let sum: f64 = terms.iter().map(|&t| (-(t - m) / s).exp()).sum();
                m - s * sum.ln()
            }
        }
    }
}

/// Inputs of the per-stream outflow limit.
#[derive(Debug, Clone, Copy)]
pub struct OutflowContext {
    /// Queue of the sub-stream turning to this destination, vehicles.
    pub queue: f64,
    /// Arriving flow assigned to this destination, veh/s.
    pub f_arrive_d: f64,
    /// Turning fraction beta_{z,d} at this step.
    pub beta: f64,
    /// Saturation flow of the sending link, veh/s.
    pub sat_flow: f64,
    /// Green time of the stream this cycle, seconds.
    pub green_s: f64,
    pub cycle_s: f64,
    /// Sum of turning fractions over all streams feeding the destination.
    pub beta_sum_in: f64,
    /// Stream capacity C_{u,d} (defaults to the receiving link capacity).
    pub stream_capacity: f64,
    /// Vehicles currently in the receiving link.
    pub downstream_occupancy: f64,
}

/// Stream outflow rate: the minimum of the unsaturated (queue + arrivals),
/// saturated (green-limited), and over-saturated (downstream storage) regimes,
/// clamped at zero.
pub fn stream_outflow(ctx: &OutflowContext, mode: MinMode) -> f64 {
    let c = ctx.cycle_s;
    let demand = ctx.queue / c + ctx.f_arrive_d;
    let saturation = ctx.beta * ctx.sat_flow * ctx.green_s / c;
    let share = if ctx.beta_sum_in > 0.0 { ctx.beta / ctx.beta_sum_in } else { 0.0 };
    let storage = share * (ctx.stream_capacity - ctx.downstream_occupancy) / c;
    mode.combine(&[demand, saturation, storage], ctx.sat_flow).max(0.0)
}

/// Exit-link discharge: no signal and no downstream storage limit, so only the
/// queue/arrival regime and the saturation flow bound apply.
pub fn sink_outflow(queue: f64, f_arrive: f64, sat_flow: f64, cycle_s: f64, mode: MinMode) -> f64 {
    let demand = queue / cycle_s + f_arrive;
    mode.combine(&[demand, sat_flow], sat_flow).max(0.0)
}

/// Per-link flow quantities realized in one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowRecord {
    pub f_in: f64,
    pub f_arrive: f64,
    /// Per destination, aligned with the link's outgoing stream order.
    pub f_arrive_d: Vec<f64>,
    pub f_out_d: Vec<f64>,
    pub f_out: f64,
    pub disturbance: f64,
}

/// State of one link: vehicles, per-destination queues, last leaving flow rate
/// and the ring of past inflow rates serving the transport delay.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub x: f64,
    /// One queue per outgoing stream; a single exit queue for sink links.
    pub queues: Vec<f64>,
    /// Average leaving flow rate of the last step, veh/s.
    pub f_out: f64,
    /// Past inflow rates, most recent first: `[f_in(k-1), f_in(k-2), ...]`.
    pub inflow_history: VecDeque<f64>,
}

impl LinkState {
    pub fn queue_total(&self) -> f64 {
        self.queues.iter().sum()
    }

    /// Available storage space `S_z = C_z - x_z`.
    pub fn storage(&self, link: &LinkParams) -> f64 {
        link.capacity - self.x
    }
}

/// Clamp events of the physical plant, by kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClampCounters {
    pub state_low: u64,
    pub state_high: u64,
    pub queue_negative: u64,
    pub queue_dominance: u64,
}

impl ClampCounters {
    pub fn total(&self) -> u64 {
        self.state_low + self.state_high + self.queue_negative + self.queue_dominance
    }

    pub fn state_bound(&self) -> u64 {
        self.state_low + self.state_high
    }

    fn add(&mut self, other: &ClampCounters) {
        self.state_low += other.state_low;
        self.state_high += other.state_high;
        self.queue_negative += other.queue_negative;
        self.queue_dominance += other.queue_dominance;
    }
}

/// Stepping configuration: plant (exact, clamped) vs prediction (soft, free).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub min_mode: MinMode,
    /// Clamp x to [0, C], queues at 0, and total queue below x, counting each
    /// event. The prediction model leaves states unclamped so the optimizer
    /// sees smooth dynamics; bounds are handled by the cost penalty.
    pub clamp: bool,
}

impl StepOptions {
    pub fn plant() -> Self {
        StepOptions { min_mode: MinMode::Exact, clamp: true }
    }

    pub fn prediction(temperature_factor: f64) -> Self {
        StepOptions { min_mode: MinMode::Soft { temperature_factor }, clamp: false }
    }
}

/// Full network state plus the per-stream outflows of the previous step (used
/// as the fallback estimate when the sweep needs a same-step inflow that is
/// not resolved yet).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub links: Vec<LinkState>,
    pub stream_outflows: Vec<f64>,
}

impl NetworkState {
    /// Empty network with the inflow history warmed up to the given per-link
    /// value (normally the initial boundary demand, which avoids a spurious
    /// zero-flow transient on entry links).
    pub fn empty(topo: &NetworkTopology, warmup_inflow: &[f64]) -> Self {
        let links = topo
            .links
            .iter()
            .enumerate()
            .map(|(z, link)| {
                let n_queues = if link.is_sink() { 1 } else { topo.out_streams[z].len() };
                let depth = topo.max_delay[z] + 2;
                LinkState {
                    x: 0.0,
                    queues: vec![0.0; n_queues],
                    f_out: 0.0,
                    inflow_history: std::iter::repeat(warmup_inflow[z]).take(depth).collect(),
                }
            })
            .collect();
        NetworkState { links, stream_outflows: vec![0.0; topo.n_streams()] }
    }

    pub fn total_vehicles(&self) -> f64 {
        self.links.iter().map(|l| l.x).sum()
    }
}

/// Aggregates of one network step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepSummary {
    pub clamps: ClampCounters,
    /// Total demand entering at source links, veh/s.
    pub boundary_inflow: f64,
    /// Total flow leaving at sink links, veh/s.
    pub boundary_outflow: f64,
    pub disturbance_sum: f64,
}

/// Advance one link by one cycle given its realized flows.
pub fn step_link(
    state: &LinkState,
    flows: &FlowRecord,
    cycle_s: f64,
    link: &LinkParams,
    clamp: bool,
    counters: &mut ClampCounters,
) -> LinkState {
    let mut next = state.clone();
    step_link_into(state, flows, cycle_s, link, clamp, counters, &mut next);
    next
}

fn step_link_into(
    state: &LinkState,
    flows: &FlowRecord,
    cycle_s: f64,
    link: &LinkParams,
    clamp: bool,
    counters: &mut ClampCounters,
    next: &mut LinkState,
) {
    debug_assert_eq!(state.queues.len(), flows.f_out_d.len());
    let mut x = state.x + (flows.f_in - flows.f_out + flows.disturbance) * cycle_s;
    if clamp {
        if x < 0.0 {
            if x < -CLAMP_EVENT_TOL {
                counters.state_low += 1;
            }
            x = 0.0;
        } else if x > link.capacity {
            if x > link.capacity + CLAMP_EVENT_TOL {
                counters.state_high += 1;
            }
            x = link.capacity;
        }
    }
    next.x = x;

    next.queues.clone_from(&state.queues);
    let mut q_total = 0.0;
    for (qi, q) in next.queues.iter_mut().enumerate() {
        *q += (flows.f_arrive_d[qi] - flows.f_out_d[qi]) * cycle_s;
        if *q < 0.0 {
            if clamp && *q < -CLAMP_EVENT_TOL {
                counters.queue_negative += 1;
            }
            *q = 0.0;
        }
        q_total += *q;
    }
    // The queued vehicles are a subset of the vehicles in the link; scale the
    // queues down if phantom warm-up arrivals ever push the sum past x.
    if clamp && q_total > x {
        if q_total > x + CLAMP_EVENT_TOL {
            counters.queue_dominance += 1;
        }
        let scale = if q_total > 0.0 { x / q_total } else { 0.0 };
        for q in next.queues.iter_mut() {
            *q *= scale;
        }
    }

    next.f_out = flows.f_out;
    next.inflow_history.clone_from(&state.inflow_history);
    next.inflow_history.pop_back();
    next.inflow_history.push_front(flows.f_in);
}

/// One step of the whole network: delay -> arrival -> outflow per junction in
/// the fixed sweep order, then exact inflow assembly and per-link updates.
///
/// Pure in (state, inputs): identical inputs give bit-identical results.
pub fn step_network(
    topo: &NetworkTopology,
    state: &NetworkState,
    greens: &[f64],
    demand: &[f64],
    disturbance: &[f64],
    step: usize,
    opts: &StepOptions,
) -> (NetworkState, StepSummary) {
    let mut next = state.clone();
    let summary =
        step_network_into(topo, state, greens, demand, disturbance, step, opts, &mut next, None);
    (next, summary)
}

/// In-place variant of [`step_network`]; `next` must have the same shape as
/// `state` (it is fully overwritten). `record`, when given, receives the
/// per-link flow records of the step.
#[allow(clippy::too_many_arguments)]
pub fn step_network_into(
    topo: &NetworkTopology,
    state: &NetworkState,
    greens: &[f64],
    demand: &[f64],
    disturbance: &[f64],
    step: usize,
    opts: &StepOptions,
    next: &mut NetworkState,
    record: Option<&mut Vec<FlowRecord>>,
) -> StepSummary {
    let n_links = topo.n_links();
    debug_assert_eq!(greens.len(), topo.n_streams());
    debug_assert_eq!(demand.len(), n_links);
    debug_assert_eq!(disturbance.len(), n_links);

    let mut stream_out = vec![0.0; topo.n_streams()];
    let mut f_arrive = vec![0.0; n_links];
    let mut sink_out = vec![0.0; n_links];
    let mut swept = vec![false; topo.n_junctions()];

    // Same-step inflow estimate for the delta = 0 case: fresh outflows from
    // junctions already processed this sweep, previous-step outflows for the
    // rest. The assembly below always uses the exact same-step sums.
    let estimate_inflow = |z: usize, stream_out: &[f64], swept: &[bool]| -> f64 {
        let mut f = demand[z];
        for &s in &topo.in_streams[z] {
            let j = topo.streams[s].junction;
            f += if swept[j] { stream_out[s] } else { state.stream_outflows[s] };
        }
        f
    };

    for &j in &topo.sweep_order {
        let cycle = topo.junctions[j].cycle_s;
        for &z in &topo.junctions[j].incoming {
            let link_state = &state.links[z];
            let delay = compute_delay(&topo.links[z], link_state.queue_total(), cycle);
            let same_step = estimate_inflow(z, &stream_out, &swept);
            let arr = arrival_flow(link_state, &delay, cycle, same_step);
            f_arrive[z] = arr;
            for (qi, &s) in topo.out_streams[z].iter().enumerate() {
                let beta = topo.stream_beta(s, step);
                let to = topo.streams[s].to;
                let ctx = OutflowContext {
                    queue: link_state.queues[qi],
                    f_arrive_d: arr * beta,
                    beta,
                    sat_flow: topo.links[z].sat_flow_vps,
                    green_s: greens[s],
                    cycle_s: cycle,
                    beta_sum_in: topo.incoming_beta_sum(to, step),
                    stream_capacity: topo.streams[s].capacity,
                    downstream_occupancy: state.links[to].x,
                };
                stream_out[s] = stream_outflow(&ctx, opts.min_mode);
            }
        }
        swept[j] = true;
    }

    for z in topo.sink_links() {
        let cycle = topo.link_cycle(z);
        let link_state = &state.links[z];
        let delay = compute_delay(&topo.links[z], link_state.queue_total(), cycle);
        let same_step = estimate_inflow(z, &stream_out, &swept);
        let arr = arrival_flow(link_state, &delay, cycle, same_step);
        f_arrive[z] = arr;
        sink_out[z] =
            sink_outflow(link_state.queues[0], arr, topo.links[z].sat_flow_vps, cycle, opts.min_mode);
    }

    let mut summary = StepSummary::default();
    let mut records = record;
    if let Some(rec) = records.as_deref_mut() {
        rec.clear();
    }
    for z in 0..n_links {
        let cycle = topo.link_cycle(z);
        let link = &topo.links[z];
        let f_in: f64 =
            demand[z] + topo.in_streams[z].iter().map(|&s| stream_out[s]).sum::<f64>();
        let (f_out, f_out_d, f_arrive_d) = if link.is_sink() {
            (sink_out[z], vec![sink_out[z]], vec![f_arrive[z]])
        } else {
            let out_d: Vec<f64> = topo.out_streams[z].iter().map(|&s| stream_out[s]).collect();
            let arr_d: Vec<f64> = topo.out_streams[z]
                .iter()
                .map(|&s| f_arrive[z] * topo.stream_beta(s, step))
                .collect();
            (out_d.iter().sum(), out_d, arr_d)
        };
        let flows = FlowRecord {
            f_in,
            f_arrive: f_arrive[z],
            f_arrive_d,
            f_out_d,
            f_out,
            disturbance: disturbance[z],
        };

        if link.is_source() {
            summary.boundary_inflow += demand[z];
        }
        if link.is_sink() {
            summary.boundary_outflow += f_out;
        }
        summary.disturbance_sum += disturbance[z];

        let mut counters = ClampCounters::default();
        step_link_into(&state.links[z], &flows, cycle, link, opts.clamp, &mut counters, &mut next.links[z]);
        summary.clamps.add(&counters);
        if let Some(rec) = records.as_deref_mut() {
            rec.push(flows);
        }
    }
    next.stream_outflows.copy_from_slice(&stream_out);
    summary
}

/// Total time spent: the cumulative vehicle-time over a trajectory, where each
/// entry pairs the per-link vehicle counts at the start of a step with that
/// step's duration.
pub fn total_time_spent<'a>(steps: impl IntoIterator<Item = (&'a [f64], f64)>) -> f64 {
    steps.into_iter().map(|(xs, dt)| xs.iter().sum::<f64>() * dt).sum()
}
