//! Receding-horizon signal control: a centralized MPC over the whole network
//! and a distributed MPC where per-junction subsystems coordinate through
//! multiplier-priced interaction trajectories and neighbor-cost sensitivities.

mod centralized;
mod coordination;
mod distributed;
mod predict;
mod subsystem;

pub use centralized::solve_centralized;
pub use coordination::{
    compute_sensitivity, interaction_flows, local_augmented_cost, neighbor_cost_response,
    update_multipliers, CoordOptions, CoordinationState, PairState,
};
pub use distributed::{solve_distributed, CoordTraceRow, DmpcOutcome, DmpcState};
pub use predict::{predict_cost_centralized, roll_prediction, GlobalTrajectory};
pub use subsystem::{decompose, local_state, roll_local, Boundary, LocalInputs, LocalTrajectory, SubsystemModel};

use crate::error::{Error, Result};
use crate::network::NetworkTopology;

/// Controller weights, horizons, and bound structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon in control steps.
    pub k_p: usize,
    /// Control horizon in control steps; the plan holds its last move beyond.
    pub k_c: usize,
    /// Diagonal state weight Q.
    pub q_weight: f64,
    /// Diagonal input weight R.
    pub r_weight: f64,
    /// Desired vehicle count per link (defaults to zero).
    pub x_desired: Vec<f64>,
    /// Minimum green per stream, seconds.
    pub u_min_s: f64,
    /// Weight of the exact penalty on the state bounds 0 <= x <= C inside the
    /// prediction cost.
    pub state_penalty: f64,
    /// Softmin temperature factor for the prediction model (s = factor * mu).
    pub softmin_factor: f64,
}

impl MpcConfig {
    pub fn defaults(topo: &NetworkTopology) -> Self {
        MpcConfig {
            k_p: 7,
            k_c: 4,
            q_weight: 0.1,
            r_weight: 0.3,
            x_desired: vec![0.0; topo.n_links()],
            u_min_s: 10.0,
            state_penalty: 1e4,
            softmin_factor: 0.05,
        }
    }

    pub fn validate(&self, topo: &NetworkTopology) -> Result<()> {
        if self.k_c < 1 || self.k_c > self.k_p {
            return Err(Error::validation("mpc", "need 1 <= K_c <= K_p"));
        }
        if self.q_weight < 0.0 || self.r_weight < 0.0 {
            return Err(Error::validation("mpc", "Q and R weights must be nonnegative"));
        }
        if self.x_desired.len() != topo.n_links() {
            return Err(Error::ShapeMismatch("x_desired must cover every link".into()));
        }
        let (lo, hi) = green_bounds(topo, self);
        for (s, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l > h {
                return Err(Error::validation(
                    format!("stream #{s}"),
                    format!("green bounds empty: [{l}, {h}]"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-stream green bounds: `u_min` below, and per junction
/// `c - L - (n_streams - 1) * u_min` above, so the cycle equality always
/// stays reachable.
pub fn green_bounds(topo: &NetworkTopology, cfg: &MpcConfig) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![cfg.u_min_s; topo.n_streams()];
    let mut upper = vec![0.0; topo.n_streams()];
    for junction in &topo.junctions {
        let n = junction.phase_streams.len();
        let budget = junction.cycle_s - junction.lost_time_s;
        let hi = budget - (n.saturating_sub(1)) as f64 * cfg.u_min_s;
        for &s in &junction.phase_streams {
            lower[s] = cfg.u_min_s.min(hi);
            upper[s] = hi;
        }
    }
    (lower, upper)
}

/// Green times per stream over the control horizon, step-major; the last move
/// holds for prediction steps beyond `k_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPlan {
    pub n_streams: usize,
    pub k_c: usize,
    data: Vec<f64>,
}

impl SignalPlan {
    pub fn from_flat(n_streams: usize, k_c: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_streams * k_c);
        SignalPlan { n_streams, k_c, data }
    }

    pub fn constant(greens: &[f64], k_c: usize) -> Self {
        let mut data = Vec::with_capacity(greens.len() * k_c);
        for _ in 0..k_c {
            data.extend_from_slice(greens);
        }
        SignalPlan { n_streams: greens.len(), k_c, data }
    }

    pub fn green(&self, stream: usize, step: usize) -> f64 {
        self.data[step.min(self.k_c - 1) * self.n_streams + stream]
    }

    /// Greens applied at prediction step `step` (held beyond the horizon).
    pub fn step_greens(&self, step: usize) -> &[f64] {
        let p = step.min(self.k_c - 1);
        &self.data[p * self.n_streams..(p + 1) * self.n_streams]
    }

    pub fn first_move(&self) -> &[f64] {
        &self.data[0..self.n_streams]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Receding-horizon warm start: drop the first move, repeat the last.
    pub fn shifted(&self) -> SignalPlan {
        let mut data = Vec::with_capacity(self.data.len());
        for p in 1..self.k_c {
            data.extend_from_slice(&self.data[p * self.n_streams..(p + 1) * self.n_streams]);
        }
        data.extend_from_slice(&self.data[(self.k_c - 1) * self.n_streams..]);
        SignalPlan { n_streams: self.n_streams, k_c: self.k_c, data }
    }

    /// Worst violation of the per-junction cycle equality over all moves.
    pub fn max_cycle_violation(&self, topo: &NetworkTopology) -> f64 {
        let mut worst = 0.0f64;
        for junction in &topo.junctions {
            if junction.phase_streams.is_empty() {
                continue;
            }
            let target = junction.cycle_s - junction.lost_time_s;
            for p in 0..self.k_c {
                let sum: f64 = junction.phase_streams.iter().map(|&s| self.green(s, p)).sum();
                worst = worst.max((sum - target).abs());
            }
        }
        worst
    }

    /// Worst violation of the per-stream green bounds over all moves.
    pub fn max_bound_violation(&self, topo: &NetworkTopology, cfg: &MpcConfig) -> f64 {
        let (lo, hi) = green_bounds(topo, cfg);
        let mut worst = 0.0f64;
        for p in 0..self.k_c {
            for s in 0..self.n_streams {
                let u = self.green(s, p);
                worst = worst.max(lo[s] - u).max(u - hi[s]);
            }
        }
        worst
    }
}

/// Equal-split fixed-time plan: every stream at a junction gets the same share
/// of the usable cycle.
pub fn equal_split_plan(topo: &NetworkTopology, k_c: usize) -> SignalPlan {
    let mut greens = vec![0.0; topo.n_streams()];
    for junction in &topo.junctions {
        let n = junction.phase_streams.len();
        if n == 0 {
            continue;
        }
        let share = (junction.cycle_s - junction.lost_time_s) / n as f64;
        for &s in &junction.phase_streams {
            greens[s] = share;
        }
    }
    SignalPlan::constant(&greens, k_c)
}

/// Demand and disturbance predictions over the horizon, veh/s per link.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    /// `demand[step][link]`, nonzero only on source links.
    pub demand: Vec<Vec<f64>>,
    /// `disturbance[step][link]`.
    pub disturbance: Vec<Vec<f64>>,
}

impl Forecasts {
    pub fn zeros(n_links: usize, horizon: usize) -> Self {
        Forecasts {
            demand: vec![vec![0.0; n_links]; horizon],
            disturbance: vec![vec![0.0; n_links]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.demand.len().min(self.disturbance.len())
    }
}
