//! Common control clock across junctions with different cycle times, and
//! resampling of piecewise-constant flow trajectories between clocks.

use crate::error::{Error, Result};

/// Synchronization of per-junction simulation clocks onto a common control
/// interval `T_c = N * T_lcm`, where `T_lcm` is the least common multiple of
/// all junction cycle times.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockSync {
    pub t_lcm_s: u64,
    pub n: u64,
    pub t_c_s: u64,
    /// Whole-second cycle time per junction.
    pub cycles_s: Vec<u64>,
    /// `N_j = T_lcm / c_j` per junction.
    pub n_j: Vec<u64>,
}

impl ClockSync {
    /// Cycle times must be whole seconds so the least common multiple exists.
    pub fn new(cycles_s: &[f64], n: u64) -> Result<Self> {
        if cycles_s.is_empty() {
            return Err(Error::validation("clock", "no junction cycles"));
        }
        if n == 0 {
            return Err(Error::validation("clock", "N must be a positive integer"));
        }
        let mut whole = Vec::with_capacity(cycles_s.len());
        for (i, &c) in cycles_s.iter().enumerate() {
            let rounded = c.round();
            if c < 1.0 || (c - rounded).abs() > 1e-9 {
                return Err(Error::validation(
                    format!("junction #{i}"),
                    format!("cycle time {c} is not a whole positive number of seconds"),
                ));
            }
            whole.push(rounded as u64);
        }
        let t_lcm_s = whole.iter().copied().fold(1, lcm);
        let n_j = whole.iter().map(|&c| t_lcm_s / c).collect();
        Ok(ClockSync { t_lcm_s, n, t_c_s: n * t_lcm_s, cycles_s: whole, n_j })
    }

    /// Map a junction-local step counter onto the common control step:
    /// `k_c(k_j) = floor(k_j / (N * N_j))`.
    pub fn control_step(&self, junction: usize, k_j: u64) -> u64 {
        k_j / (self.n * self.n_j[junction])
    }

    /// True when every junction shares one cycle equal to the control interval.
    pub fn is_uniform(&self) -> bool {
        self.n == 1 && self.n_j.iter().all(|&n| n == 1)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Resample a piecewise-constant flow trajectory from an upstream cycle onto a
/// downstream cycle shifted by an offset.
///
/// Upstream sample `j` holds on `[j*c_from, (j+1)*c_from)`. Downstream sample
/// `k` is the time average of the upstream signal over
/// `[k*c_to + offset, (k+1)*c_to + offset)`, which preserves the integral of
/// the signal (vehicle counts) over any common window.
pub fn resample_boundary_flow(
    values: &[f64],
    c_from: f64,
    c_to: f64,
    offset_s: f64,
    n_out: usize,
) -> Result<Vec<f64>> {
    const EDGE_TOL: f64 = 1e-9;
    let coverage = values.len() as f64 * c_from;
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let start = k as f64 * c_to + offset_s;
        let end = start + c_to;
        if start < -EDGE_TOL || end > coverage + EDGE_TOL {
            return Err(Error::WindowNotCovered(format!(
                "downstream window [{start}, {end}) outside upstream coverage [0, {coverage})"
            )));
        }
        let j0 = (start / c_from).floor().max(0.0) as usize;
        let mut integral = 0.0;
        let mut j = j0;
        while (j as f64) * c_from < end && j < values.len() {
            let seg_start = (j as f64 * c_from).max(start);
            let seg_end = ((j + 1) as f64 * c_from).min(end);
            if seg_end > seg_start {
                integral += values[j] * (seg_end - seg_start);
            }
            j += 1;
        }
        out.push(integral / c_to);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resampling() {
        let values = [0.1, 0.4, 0.2];
        let out = resample_boundary_flow(&values, 120.0, 120.0, 0.0, 3).unwrap();
        for (a, b) in out.iter().zip(values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn downsampling_averages_halves() {
        let out = resample_boundary_flow(&[1.0, 3.0], 60.0, 120.0, 0.0, 1).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn upsampling_repeats_values() {
        let out = resample_boundary_flow(&[1.0, 3.0], 120.0, 60.0, 0.0, 4).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn uncovered_window_is_an_error() {
        let err = resample_boundary_flow(&[1.0], 60.0, 120.0, 0.0, 1).unwrap_err();
        assert!(matches!(err, Error::WindowNotCovered(_)));
    }

    proptest! {
        // The integral of the resampled signal over a common window equals
        // the integral of the original.
        #[test]
        fn resampling_conserves_vehicles(
            values in proptest::collection::vec(0.0..2.0f64, 6),
            c_from in prop_oneof![Just(30.0), Just(60.0), Just(90.0), Just(120.0)],
            c_to in prop_oneof![Just(30.0), Just(60.0), Just(90.0), Just(120.0)],
        ) {
            // Six upstream cycles; resample the longest common span.
            let window = values.len() as f64 * c_from;
            let n_out = (window / c_to).floor() as usize;
            prop_assume!(n_out > 0);
            let out = resample_boundary_flow(&values, c_from, c_to, 0.0, n_out).unwrap();
            let span = n_out as f64 * c_to;
            let original: f64 = values
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let seg = (span - j as f64 * c_from).clamp(0.0, c_from);
                    v * seg
                })
                .sum();
            let resampled: f64 = out.iter().map(|v| v * c_to).sum();
            prop_assert!((original - resampled).abs() < 1e-9);
        }
    }

    #[test]
    fn clock_sync_matches_formula() {
        let sync = ClockSync::new(&[60.0, 90.0], 2).unwrap();
        assert_eq!(sync.t_lcm_s, 180);
        assert_eq!(sync.t_c_s, 360);
        assert_eq!(sync.n_j, vec![3, 2]);
        // k_c(k_j) = floor(k_j / (N * N_j))
        assert_eq!(sync.control_step(0, 0), 0);
        assert_eq!(sync.control_step(0, 5), 0);
        assert_eq!(sync.control_step(0, 6), 1);
        assert_eq!(sync.control_step(1, 3), 0);
        assert_eq!(sync.control_step(1, 4), 1);
        assert!(!sync.is_uniform());
        assert!(ClockSync::new(&[120.0; 8], 1).unwrap().is_uniform());
    }

    #[test]
    fn clock_sync_rejects_fractional_cycles() {
        assert!(ClockSync::new(&[60.5], 1).is_err());
        assert!(ClockSync::new(&[60.0], 0).is_err());
    }
}
