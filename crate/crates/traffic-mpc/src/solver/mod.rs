//! Constrained nonlinear program solver used by both MPC modes.
//!
//! Minimizes a smooth objective over box bounds plus linear equality
//! constraints by projected gradient descent with Armijo backtracking.
//! Equality rows touching disjoint variable sets (the per-junction cycle sums)
//! are projected exactly; general constraint matrices fall back to cyclic
//! projection between the affine set and the box.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance for the cyclic projection onto the feasible set.
const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_SWEEPS: usize = 10_000;

pub type Objective<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;
pub type Gradient<'a> = dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a;

/// A box- and equality-constrained minimization problem.
pub struct NlpProblem<'a> {
    pub dim: usize,
    pub objective: Box<Objective<'a>>,
    /// Analytic gradient; central finite differences when absent.
    pub gradient: Option<Box<Gradient<'a>>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Linear equalities `A u = b`; `A` must have full row rank.
    pub equalities: Option<(DMatrix<f64>, DVector<f64>)>,
    pub start: Vec<f64>,
}

impl<'a> NlpProblem<'a> {
    pub fn new(
        objective: impl Fn(&[f64]) -> f64 + Sync + 'a,
        lower: Vec<f64>,
        upper: Vec<f64>,
        start: Vec<f64>,
    ) -> Self {
        let dim = lower.len();
        NlpProblem {
            dim,
            objective: Box::new(objective),
            gradient: None,
            lower,
            upper,
            equalities: None,
            start,
        }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[f64]) -> Vec<f64> + Sync + 'a) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.equalities = Some((a, b));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.dim || self.upper.len() != self.dim || self.start.len() != self.dim
        {
            return Err(Error::ShapeMismatch("problem vectors disagree on dimension".into()));
        }
        for i in 0..self.dim {
            if self.lower[i] > self.upper[i] {
                return Err(Error::validation(
                    format!("variable #{i}"),
                    "lower bound exceeds upper bound",
                ));
            }
        }
        if let Some((a, b)) = &self.equalities {
            if a.ncols() != self.dim || a.nrows() != b.len() {
                return Err(Error::ShapeMismatch("equality matrix shape".into()));
            }
            let rank = a.clone().svd(false, false).rank(1e-10 * a.amax().max(1.0));
            if rank < a.nrows() {
                return Err(Error::validation(
                    "equalities",
                    format!("A does not have full row rank ({rank} < {})", a.nrows()),
                ));
            }
        }
        Ok(())
    }
}

/// Solver tolerances and iteration limits.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Projected-gradient norm below which the solve counts as converged.
    pub optimality_tol: f64,
    /// Accepted violation of the equality constraints.
    pub feasibility_tol: f64,
    /// Step-norm floor; smaller accepted moves terminate the solve.
    pub step_tol: f64,
    pub max_iterations: usize,
    /// Extra solves from random feasible points; the best report wins.
    pub restarts: usize,
    pub seed: u64,
    /// Relative step of the central finite-difference fallback gradient.
    pub fd_step: f64,
    /// Write an iterate trace (iteration, objective, pg-norm, step) as CSV.
    pub trace_path: Option<std::path::PathBuf>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            optimality_tol: 1e-5,
            feasibility_tol: 1e-8,
            step_tol: 1e-12,
            max_iterations: 500,
            restarts: 0,
            seed: 0,
            fd_step: 1e-5,
            trace_path: None,
        }
    }
}

/// Outcome of a solve. `wall_time` is the only field that varies between
/// identical runs; everything else is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub wall_time: Duration,
}

/// Central finite-difference gradient with a relative step.
pub fn finite_diff_gradient(
    f: &(impl Fn(&[f64]) -> f64 + Sync + ?Sized),
    u: &[f64],
    h_rel: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; u.len()];
    let mut probe = u.to_vec();
    for i in 0..u.len() {
        let h = h_rel * u[i].abs().max(1.0);
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite differences hit a non-finite value at coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Feasible-set geometry, prepared once per problem.
enum FeasibleSet {
    BoxOnly,
    /// Every equality row touches a disjoint variable set: project each group
    /// exactly by solving the scalar shift equation.
    DisjointGroups(Vec<Group>),
    /// General case: alternate affine and box projections to tolerance.
    Cyclic { a: DMatrix<f64>, b: DVector<f64>, aat_inv: DMatrix<f64> },
}

struct Group {
    vars: Vec<usize>,
    coeffs: Vec<f64>,
    rhs: f64,
}

impl FeasibleSet {
    fn prepare(problem: &NlpProblem) -> Result<Self> {
        let Some((a, b)) = &problem.equalities else { return Ok(FeasibleSet::BoxOnly) };
        let mut groups = Vec::with_capacity(a.nrows());
        let mut seen = vec![false; problem.dim];
        let mut disjoint = true;
        'rows: for r in 0..a.nrows() {
            let mut vars = Vec::new();
            let mut coeffs = Vec::new();
            for c in 0..a.ncols() {
                let v = a[(r, c)];
                if v != 0.0 {
                    if seen[c] {
                        disjoint = false;
                        break 'rows;
                    }
                    seen[c] = true;
                    vars.push(c);
                    coeffs.push(v);
                }
            }
            groups.push(Group { vars, coeffs, rhs: b[r] });
        }
        if disjoint {
            // Reachability pre-check per group keeps infeasibility a clear error.
            for (r, g) in groups.iter().enumerate() {
                let mut lo = 0.0;
                let mut hi = 0.0;
                for (&v, &c) in g.vars.iter().zip(&g.coeffs) {
                    let (a_end, b_end) = (c * problem.lower[v], c * problem.upper[v]);
                    lo += a_end.min(b_end);
                    hi += a_end.max(b_end);
                }
                if g.rhs < lo - 1e-9 || g.rhs > hi + 1e-9 {
                    return Err(Error::Infeasible(format!(
                        "equality row {r} wants {} but the box admits [{lo}, {hi}]",
                        g.rhs
                    )));
                }
            }
            return Ok(FeasibleSet::DisjointGroups(groups));
        }
        let aat = a * a.transpose();
        let aat_inv = aat
            .try_inverse()
            .ok_or_else(|| Error::validation("equalities", "A A^T is singular"))?;
        Ok(FeasibleSet::Cyclic { a: a.clone(), b: b.clone(), aat_inv })
    }

    fn project(&self, u: &mut [f64], lower: &[f64], upper: &[f64]) -> Result<()> {
        match self {
            FeasibleSet::BoxOnly => {
                for i in 0..u.len() {
                    u[i] = u[i].clamp(lower[i], upper[i]);
                }
                Ok(())
            }
            FeasibleSet::DisjointGroups(groups) => {
                for i in 0..u.len() {
                    u[i] = u[i].clamp(lower[i], upper[i]);
                }
                for g in groups {
                    project_group(g, u, lower, upper);
                }
                Ok(())
            }
            FeasibleSet::Cyclic { a, b, aat_inv } => {
                for _ in 0..PROJECTION_MAX_SWEEPS {
                    let v = DVector::from_column_slice(u);
                    let residual = a * &v - b;
                    let correction = a.transpose() * (aat_inv * &residual);
                    let mut max_move = 0.0f64;
                    for i in 0..u.len() {
                        let affine = u[i] - correction[i];
                        let clamped = affine.clamp(lower[i], upper[i]);
                        max_move = max_move.max((clamped - u[i]).abs());
                        u[i] = clamped;
                    }
                    let v = DVector::from_column_slice(u);
                    let violation = (a * &v - b).amax();
                    if violation <= PROJECTION_TOL && max_move <= PROJECTION_TOL {
                        return Ok(());
                    }
                }
                Err(Error::Infeasible(
                    "cyclic projection onto {Au = b, box} failed to converge".into(),
                ))
            }
        }
    }

    fn max_violation(&self, u: &[f64]) -> f64 {
        match self {
            FeasibleSet::BoxOnly => 0.0,
            FeasibleSet::DisjointGroups(groups) => groups
                .iter()
                .map(|g| {
                    (g.vars.iter().zip(&g.coeffs).map(|(&v, &c)| c * u[v]).sum::<f64>() - g.rhs)
                        .abs()
                })
                .fold(0.0, f64::max),
            FeasibleSet::Cyclic { a, b, .. } => {
                let v = DVector::from_column_slice(u);
                (a * &v - b).amax()
            }
        }
    }
}

/// Exact Euclidean projection of `u` (already box-clamped) onto one group
/// `{sum c_i u_i = rhs, lower <= u <= upper}`: shift every coordinate by
/// `nu * c_i` with clamping, where the scalar `nu` solves the monotone sum
/// equation; bisection isolates the active set, then the free coordinates are
/// shifted exactly.
fn project_group(g: &Group, u: &mut [f64], lower: &[f64], upper: &[f64]) {
    let value = |nu: f64, u: &[f64]| -> f64 {
        g.vars
            .iter()
            .zip(&g.coeffs)
            .map(|(&v, &c)| c * (u[v] + nu * c).clamp(lower[v], upper[v]))
            .sum::<f64>()
    };
    let mut nu_lo = 0.0f64;
    let mut nu_hi = 0.0f64;
    let mut width = 1.0f64;
    // Expand a bracket around nu = 0.
    for _ in 0..200 {
        let lo_val = value(nu_lo, u) - g.rhs;
        let hi_val = value(nu_hi, u) - g.rhs;
        if lo_val <= 0.0 && hi_val >= 0.0 {
            break;
        }
        if lo_val > 0.0 {
            nu_lo -= width;
        }
        if hi_val < 0.0 {
            nu_hi += width;
        }
        width *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (nu_lo + nu_hi);
        if value(mid, u) - g.rhs >= 0.0 {
            nu_hi = mid;
        } else {
            nu_lo = mid;
        }
    }
    let nu = 0.5 * (nu_lo + nu_hi);
    // Identify the active set at nu and polish the free coordinates exactly.
    let mut fixed_sum = 0.0;
    let mut free_sq = 0.0;
    let mut free_base = 0.0;
    for (&v, &c) in g.vars.iter().zip(&g.coeffs) {
        let shifted = u[v] + nu * c;
        if shifted <= lower[v] {
            fixed_sum += c * lower[v];
        } else if shifted >= upper[v] {
            fixed_sum += c * upper[v];
        } else {
            free_sq += c * c;
            free_base += c * u[v];
        }
    }
    let nu_exact =
        if free_sq > 0.0 { (g.rhs - fixed_sum - free_base) / free_sq } else { nu };
    for (&v, &c) in g.vars.iter().zip(&g.coeffs) {
        u[v] = (u[v] + nu_exact * c).clamp(lower[v], upper[v]);
    }
}

/// Minimize the problem; with restarts, the best deterministic report wins.
pub fn solve(problem: &NlpProblem, opts: &SolveOptions) -> Result<SolveReport> {
    problem.validate()?;
    let set = FeasibleSet::prepare(problem)?;
    let start = Instant::now();

    let mut best: Option<SolveReport> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for attempt in 0..=opts.restarts {
        let mut u0 = if attempt == 0 {
            problem.start.clone()
        } else {
            (0..problem.dim)
                .map(|i| {
                    let (lo, hi) = (problem.lower[i], problem.upper[i]);
                    if hi > lo {
                        rng.gen_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        };
        set.project(&mut u0, &problem.lower, &problem.upper)?;
        let report = descend(problem, &set, u0, opts)?;
        let better = match &best {
            None => true,
            Some(b) => report.objective < b.objective,
        };
        if better {
            best = Some(report);
        }
    }
    let mut report = best.expect("at least one attempt");
    report.wall_time = start.elapsed();
    Ok(report)
}

fn descend(
    problem: &NlpProblem,
    set: &FeasibleSet,
    mut u: Vec<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    const ARMIJO_C: f64 = 1e-4;
    let eval = |u: &[f64]| -> Result<f64> {
        let f = (problem.objective)(u);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("objective at iterate {:?}", truncate(u))));
        }
        Ok(f)
    };
    let grad = |u: &[f64]| -> Result<Vec<f64>> {
        match &problem.gradient {
            Some(g) => Ok(g(u)),
            None => finite_diff_gradient(problem.objective.as_ref(), u, opts.fd_step),
        }
    };

    let mut trace = match &opts.trace_path {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            writeln!(file, "iteration,objective,pg_norm,step")?;
            Some(file)
        }
        None => None,
    };

    let mut f = eval(&u)?;
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let g = grad(&u)?;

        // Optimality: the projected-gradient displacement at unit step.
        let mut probe: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - gi).collect();
        set.project(&mut probe, &problem.lower, &problem.upper)?;
        let pg_norm = probe
            .iter()
            .zip(&u)
            .map(|(p, ui)| (p - ui).abs())
            .fold(0.0, f64::max);
        if let Some(file) = trace.as_mut() {
            writeln!(file, "{iter},{f:.12e},{pg_norm:.6e},{step:.6e}")?;
        }
        if pg_norm <= opts.optimality_tol {
            converged = true;
            break;
        }

        // Backtracking Armijo line search along the projected-gradient arc.
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        while step > opts.step_tol {
            let mut candidate: Vec<f64> =
                u.iter().zip(&g).map(|(ui, gi)| ui - step * gi).collect();
            set.project(&mut candidate, &problem.lower, &problem.upper)?;
            let direction: f64 =
                g.iter().zip(candidate.iter().zip(&u)).map(|(gi, (ci, ui))| gi * (ci - ui)).sum();
            let move_norm = candidate
                .iter()
                .zip(&u)
                .map(|(c, ui)| (c - ui).abs())
                .fold(0.0, f64::max);
            if move_norm == 0.0 {
                break;
            }
            let fc = eval(&candidate)?;
            if fc <= f + ARMIJO_C * direction {
                u = candidate;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = pg_norm <= opts.optimality_tol;
            break;
        }
    }

    let max_violation = set.max_violation(&u);
    Ok(SolveReport {
        solution: u,
        objective: f,
        iterations,
        converged: converged && max_violation <= opts.feasibility_tol,
        max_violation,
        wall_time: Duration::ZERO,
    })
}

fn truncate(u: &[f64]) -> Vec<f64> {
    u.iter().copied().take(8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_to(center: Vec<f64>) -> impl Fn(&[f64]) -> f64 + Sync {
        move |u: &[f64]| u.iter().zip(&center).map(|(ui, ci)| (ui - ci).powi(2)).sum()
    }

    #[test]
    fn unconstrained_quadratic_recovers_center() {
        let problem = NlpProblem::new(
            quadratic_to(vec![0.3, -0.2, 0.7]),
            vec![-1.0; 3],
            vec![1.0; 3],
            vec![0.0; 3],
        );
        let report = solve(&problem, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        for (got, want) in report.solution.iter().zip(&[0.3, -0.2, 0.7]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn symmetric_equality_qp() {
        // min u1^2 + u2^2 s.t. u1 + u2 = 2, u in [0, 2]^2  ->  (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let problem = NlpProblem::new(
            |u: &[f64]| u.iter().map(|x| x * x).sum(),
            vec![0.0; 2],
            vec![2.0; 2],
            vec![0.1, 1.7],
        )
        .with_equalities(a, b);
        let report = solve(&problem, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        assert!((report.solution[0] - 1.0).abs() < 1e-6);
        assert!((report.solution[1] - 1.0).abs() < 1e-6);
        assert!(report.max_violation < 1e-9);
    }

    #[test]
    fn iterates_stay_feasible() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.5, 2.0]);
        let problem = NlpProblem::new(
            |u: &[f64]| {
                (u[0] - 2.0).powi(2) + (u[1] + 1.0).powi(2) + (u[2] - 0.3).powi(2) + u[3].powi(2)
            },
            vec![0.0; 4],
            vec![2.0; 4],
            vec![0.5; 4],
        )
        .with_equalities(a, b);
        let report = solve(&problem, &SolveOptions::default()).unwrap();
        assert!(report.max_violation <= 1e-8);
        for (i, v) in report.solution.iter().enumerate() {
            assert!((0.0..=2.0).contains(v), "u[{i}] = {v}");
        }
    }

    #[test]
    fn finite_diff_matches_analytic() {
        let f = |u: &[f64]| u.iter().map(|x| x * x).sum::<f64>();
        let g = finite_diff_gradient(&f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);

        let constant = |_: &[f64]| 3.5;
        let g = finite_diff_gradient(&constant, &[1.0, -4.0, 0.0], 1e-5).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let problem = NlpProblem::new(
            |u: &[f64]| if u[0] > 0.5 { f64::NAN } else { u[0] },
            vec![0.0],
            vec![1.0],
            vec![0.9],
        );
        let err = solve(&problem, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn infeasible_group_is_an_error() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![10.0]);
        let problem = NlpProblem::new(
            |u: &[f64]| u[0] + u[1],
            vec![0.0; 2],
            vec![1.0; 2],
            vec![0.0; 2],
        )
        .with_equalities(a, b);
        assert!(matches!(solve(&problem, &SolveOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn rank_deficient_rows_are_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let problem = NlpProblem::new(
            |u: &[f64]| u[0] * u[0] + u[1] * u[1],
            vec![0.0; 2],
            vec![1.0; 2],
            vec![0.0; 2],
        )
        .with_equalities(a, b);
        assert!(solve(&problem, &SolveOptions::default()).is_err());
    }

    #[test]
    fn reports_are_deterministic() {
        let make = || {
            NlpProblem::new(
                |u: &[f64]| {
                    u.iter().enumerate().map(|(i, x)| (x - 0.1 * i as f64).powi(2)).sum::<f64>()
                        + (u[0] * u[1]).sin() * 0.01
                },
                vec![-1.0; 4],
                vec![1.0; 4],
                vec![0.4; 4],
            )
        };
        let opts = SolveOptions { restarts: 3, seed: 11, ..SolveOptions::default() };
        let a = solve(&make(), &opts).unwrap();
        let b = solve(&make(), &opts).unwrap();
        assert_eq!(a.solution, b.solution);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn objective_non_increasing_along_accepted_iterates() {
        // Reconstructed from the iterate trace.
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("trace.csv");
        let problem = NlpProblem::new(
            |u: &[f64]| (u[0] - 0.7).powi(4) + (u[1] + 0.3).powi(2) + 0.5 * (u[0] * u[1]).powi(2),
            vec![-2.0; 2],
            vec![2.0; 2],
            vec![-1.5, 1.9],
        );
        let opts = SolveOptions { trace_path: Some(trace.clone()), ..SolveOptions::default() };
        solve(&problem, &opts).unwrap();
        let content = std::fs::read_to_string(trace).unwrap();
        let objectives: Vec<f64> = content
            .lines()
            .skip(1)
            .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(objectives.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
