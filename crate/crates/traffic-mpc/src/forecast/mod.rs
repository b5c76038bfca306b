//! Space-time ARIMA forecaster for demand and disturbance series.
//!
//! The model couples temporal lags with spatial lags over the link graph:
//! the differenced series is regressed on `W_k y(t - i)` terms (autoregressive)
//! and `W_k e(t - i)` terms (moving average), with one scalar coefficient per
//! (temporal lag, spatial order) pair shared across links. Fitting is a
//! two-stage Hannan-Rissanen procedure: a long pure-AR least squares pass
//! estimates the innovations, then a second least squares pass regresses on
//! both lagged values and lagged innovations.

pub mod io;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::NetworkTopology;

/// Row-normalized hop-distance weight matrices; `mats[k]` connects links that
/// are exactly `k` hops apart in the undirected link adjacency graph, with
/// `mats[0]` the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    pub mats: Vec<DMatrix<f64>>,
}

impl SpatialWeights {
    pub fn max_order(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn n_series(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn apply(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        &self.mats[k] * v
    }
}

/// Build weights from the link graph of a topology; two links are adjacent
/// when they meet at a junction.
pub fn build_weights(topo: &NetworkTopology, max_order: usize) -> SpatialWeights {
    let n = topo.n_links();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (&topo.links[i], &topo.links[j]);
            let shares_junction = [a.upstream, a.downstream]
                .into_iter()
                .flatten()
                .any(|ja| [b.upstream, b.downstream].into_iter().flatten().any(|jb| ja == jb));
            if shares_junction {
                neighbors[i].push(j);
            }
        }
    }
    build_weights_from_adjacency(&neighbors, max_order)
}

/// Build hop-distance weights on an arbitrary undirected adjacency list.
pub fn build_weights_from_adjacency(neighbors: &[Vec<usize>], max_order: usize) -> SpatialWeights {
    let n = neighbors.len();
    let mut mats = Vec::with_capacity(max_order + 1);
    mats.push(DMatrix::identity(n, n));
    if max_order == 0 {
        return SpatialWeights { mats };
    }
    // BFS hop distances from every node.
    let mut dist = vec![vec![usize::MAX; n]; n];
    for (start, row) in dist.iter_mut().enumerate() {
        row[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    for k in 1..=max_order {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let peers: Vec<usize> = (0..n).filter(|&j| dist[i][j] == k).collect();
            if peers.is_empty() {
                continue; // isolated at this order: all-zero row
            }
            let share = 1.0 / peers.len() as f64;
            for j in peers {
                w[(i, j)] = share;
            }
        }
        mats.push(w);
    }
    SpatialWeights { mats }
}

/// Model orders: temporal lags `p` (AR), `q` (MA), differencing degree `d`,
/// and per-lag spatial orders `m` (AR) and `n` (MA).
#[derive(Debug, Clone, PartialEq)]
pub struct StarimaOrders {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
}

impl StarimaOrders {
    /// Uniform spatial order for every temporal lag.
    pub fn uniform(p: usize, d: usize, q: usize, spatial: usize) -> Self {
        StarimaOrders { p, d, q, m: vec![spatial; p], n: vec![spatial; q] }
    }

    pub fn max_spatial(&self) -> usize {
        self.m.iter().chain(self.n.iter()).copied().max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.m.len() != self.p || self.n.len() != self.q {
            return Err(Error::ShapeMismatch(format!(
                "spatial order lists (m: {}, n: {}) must match temporal lags (p: {}, q: {})",
                self.m.len(),
                self.n.len(),
                self.p,
                self.q
            )));
        }
        Ok(())
    }
}

/// Fitted STARIMA model. Coefficients are scalars per (lag, spatial order),
/// shared across links.
#[derive(Debug, Clone, PartialEq)]
pub struct StarimaModel {
    pub orders: StarimaOrders,
    /// `phi[i][k]`: AR coefficient of lag i+1, spatial order k.
    pub phi: Vec<Vec<f64>>,
    /// `theta[i][k]`: MA coefficient of lag i+1, spatial order k.
    pub theta: Vec<Vec<f64>>,
    pub weights: SpatialWeights,
    /// In-sample one-step residual variance per link.
    pub residual_variance: Vec<f64>,
}

/// Temporal differencing along the time axis: returns an n x (T - d) matrix.
pub fn difference(series: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = series.clone();
    for _ in 0..d {
        let t = out.ncols();
        let mut next = DMatrix::zeros(out.nrows(), t - 1);
        for c in 1..t {
            for r in 0..out.nrows() {
                next[(r, c - 1)] = out[(r, c)] - out[(r, c - 1)];
            }
        }
        out = next;
    }
    out
}

/// Integrate `d`-times-differenced forecasts back to levels, anchored at the
/// tail of the original history.
pub fn inverse_difference(
    forecasts: &DMatrix<f64>,
    history: &DMatrix<f64>,
    d: usize,
) -> DMatrix<f64> {
    let n = history.nrows();
    let h = forecasts.ncols();
    // tails[j] = last sample of the j-times differenced history.
    let mut tails: Vec<DVector<f64>> = Vec::with_capacity(d + 1);
    let mut level = history.clone();
    tails.push(level.column(level.ncols() - 1).into());
    for _ in 0..d {
        level = difference(&level, 1);
        tails.push(level.column(level.ncols() - 1).into());
    }
    let mut out = DMatrix::zeros(n, h);
    for step in 0..h {
        for r in 0..n {
            let mut value = forecasts[(r, step)];
            for j in (0..d).rev() {
                value += tails[j][r];
                tails[j][r] = value;
            }
            out[(r, step)] = value;
        }
    }
    out
}

struct RegressorPlan {
    labels: Vec<String>,
    /// (temporal lag, spatial order) for each AR regressor.
    ar: Vec<(usize, usize)>,
    /// (temporal lag, spatial order) for each MA regressor.
    ma: Vec<(usize, usize)>,
}

impl RegressorPlan {
    fn new(orders: &StarimaOrders) -> Self {
        let mut labels = Vec::new();
        let mut ar = Vec::new();
        let mut ma = Vec::new();
        for i in 1..=orders.p {
            for k in 0..=orders.m[i - 1] {
                ar.push((i, k));
                labels.push(format!("ar(lag={i},k={k})"));
            }
        }
        for i in 1..=orders.q {
            for k in 0..=orders.n[i - 1] {
                ma.push((i, k));
                labels.push(format!("ma(lag={i},k={k})"));
            }
        }
        RegressorPlan { labels, ar, ma }
    }

    fn len(&self) -> usize {
        self.ar.len() + self.ma.len()
    }
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[String]) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 1e-12 {
        // Identically zero regressors (e.g. a differenced constant series):
        // the minimum-norm solution is all-zero coefficients.
        return Ok(DVector::zeros(x.ncols()));
    }
    let tol = 1e-10 * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < x.ncols() {
        // Name the regressors spanning the null space.
        let vt = svd.v_t.as_ref().expect("svd computed v_t");
        let mut offenders = Vec::new();
        for (idx, &s) in svd.singular_values.iter().enumerate() {
            if s <= tol {
                for c in 0..x.ncols() {
                    if vt[(idx, c)].abs() > 1e-6 && !offenders.contains(&labels[c]) {
                        offenders.push(labels[c].clone());
                    }
                }
            }
        }
        return Err(Error::RankDeficient(offenders.join(", ")));
    }
    svd.solve(y, tol).map_err(|e| Error::Parse(e.to_string()))
}

/// Fit a STARIMA model by the two-stage procedure. History is links x time.
pub fn fit(
    history: &DMatrix<f64>,
    orders: &StarimaOrders,
    weights: &SpatialWeights,
) -> Result<StarimaModel> {
    orders.validate()?;
    if weights.max_order() < orders.max_spatial() {
        return Err(Error::ShapeMismatch(format!(
            "weights cover spatial order {} but orders ask for {}",
            weights.max_order(),
            orders.max_spatial()
        )));
    }
    if history.nrows() != weights.n_series() {
        return Err(Error::ShapeMismatch(format!(
            "history has {} series, weights expect {}",
            history.nrows(),
            weights.n_series()
        )));
    }
    let t_total = history.ncols();
    let needed = (10 * (orders.p + orders.q) * (orders.max_spatial() + 1)).max(orders.d + 2);
    if t_total < needed {
        return Err(Error::InsufficientHistory { needed, have: t_total });
    }
    if !history.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("history contains non-finite samples".into()));
    }

    let y = difference(history, orders.d);
    let n = y.nrows();
    let t = y.ncols();
    let cols: Vec<DVector<f64>> = (0..t).map(|c| y.column(c).into()).collect();

    // Stage 1: long-AR innovations estimate (skipped for pure AR models).
    let p_long = if orders.q == 0 {
        0
    } else {
        (2 * (orders.p + orders.q)).max(orders.p + orders.q + 2).min((t.saturating_sub(2)) / 3)
    };
    let mut innovations: Vec<DVector<f64>> = vec![DVector::zeros(n); t];
    if orders.q > 0 {
        let k_long = orders.max_spatial();
        let long_orders = StarimaOrders::uniform(p_long, 0, 0, k_long);
        let long_plan = RegressorPlan::new(&long_orders);
        let (x, target) = stack_regression(&cols, &long_plan, &innovations, p_long, weights);
        let coef = least_squares(&x, &target, &long_plan.labels)?;
        for ti in p_long..t {
            let mut pred = DVector::zeros(n);
            for (ri, &(lag, k)) in long_plan.ar.iter().enumerate() {
                pred += coef[ri] * weights.apply(k, &cols[ti - lag]);
            }
            innovations[ti] = &cols[ti] - pred;
        }
    }

    // Stage 2: AR + lagged-innovation regression.
    let plan = RegressorPlan::new(orders);
    let t0 = orders.p.max(p_long + orders.q);
    if t <= t0 + plan.len() {
        return Err(Error::InsufficientHistory { needed: t0 + plan.len() + 1, have: t });
    }
    let (x, target) = stack_regression(&cols, &plan, &innovations, t0, weights);
    let coef = least_squares(&x, &target, &plan.labels)?;

    let mut phi = vec![Vec::new(); orders.p];
    let mut theta = vec![Vec::new(); orders.q];
    for (ri, &(lag, _)) in plan.ar.iter().enumerate() {
        phi[lag - 1].push(coef[ri]);
    }
    for (ri, &(lag, _)) in plan.ma.iter().enumerate() {
        // Model convention subtracts the MA sum, so the regression
        // coefficient carries the opposite sign of theta.
        theta[lag - 1].push(-coef[plan.ar.len() + ri]);
    }

    let mut model = StarimaModel {
        orders: orders.clone(),
        phi,
        theta,
        weights: weights.clone(),
        residual_variance: vec![0.0; n],
    };

    // In-sample residual variance from the final model's own filter.
    let residuals = filter_innovations(&model, &cols);
    let start = orders.p.max(orders.q);
    let count = (t - start).max(1) as f64;
    for r in 0..n {
        let mut ss = 0.0;
        for col in residuals.iter().skip(start) {
            ss += col[r] * col[r];
        }
        model.residual_variance[r] = ss / count;
    }
    Ok(model)
}

fn stack_regression(
    cols: &[DVector<f64>],
    plan: &RegressorPlan,
    innovations: &[DVector<f64>],
    t0: usize,
    weights: &SpatialWeights,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = cols[0].len();
    let t = cols.len();
    let samples = (t - t0) * n;
    let mut x = DMatrix::zeros(samples, plan.len());
    let mut y = DVector::zeros(samples);
    let mut row = 0;
    for ti in t0..t {
        for (ri, &(lag, k)) in plan.ar.iter().enumerate() {
            let reg = weights.apply(k, &cols[ti - lag]);
            for link in 0..n {
                x[(row + link, ri)] = reg[link];
            }
        }
        for (ri, &(lag, k)) in plan.ma.iter().enumerate() {
            let reg = weights.apply(k, &innovations[ti - lag]);
            for link in 0..n {
                x[(row + link, plan.ar.len() + ri)] = reg[link];
            }
        }
        for link in 0..n {
            y[row + link] = cols[ti][link];
        }
        row += n;
    }
    (x, y)
}

/// One-step conditional mean of the differenced series at time `t`, given the
/// preceding values and innovations.
fn one_step_mean(
    model: &StarimaModel,
    values: &[DVector<f64>],
    innovations: &[DVector<f64>],
    t: usize,
) -> DVector<f64> {
    let n = model.weights.n_series();
    let mut pred = DVector::zeros(n);
    for (i, row) in model.phi.iter().enumerate() {
        let lag = i + 1;
        if t < lag {
            continue;
        }
        for (k, &coef) in row.iter().enumerate() {
            pred += coef * model.weights.apply(k, &values[t - lag]);
        }
    }
    for (i, row) in model.theta.iter().enumerate() {
        let lag = i + 1;
        if t < lag {
            continue;
        }
        for (k, &coef) in row.iter().enumerate() {
            pred -= coef * model.weights.apply(k, &innovations[t - lag]);
        }
    }
    pred
}

/// Recover in-sample innovations of a differenced series by filtering it
/// through the model; leading lags get zero innovations.
fn filter_innovations(model: &StarimaModel, cols: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = model.weights.n_series();
    let mut innovations: Vec<DVector<f64>> = Vec::with_capacity(cols.len());
    for t in 0..cols.len() {
        if t < model.orders.p {
            innovations.push(DVector::zeros(n));
            continue;
        }
        let pred = one_step_mean(model, cols, &innovations, t);
        innovations.push(&cols[t] - pred);
    }
    innovations
}

/// Iterated multi-step forecast: future innovations are zero, future values
/// are replaced by their forecasts, and the differencing is inverted at the
/// end. Returns links x horizon.
pub fn predict(
    model: &StarimaModel,
    history: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    let needed = model.orders.p.max(model.orders.q) + model.orders.d;
    if history.ncols() < needed.max(model.orders.d + 1) {
        return Err(Error::InsufficientHistory {
            needed: needed.max(model.orders.d + 1),
            have: history.ncols(),
        });
    }
    if history.nrows() != model.weights.n_series() {
        return Err(Error::ShapeMismatch(format!(
            "history has {} series, model expects {}",
            history.nrows(),
            model.weights.n_series()
        )));
    }
    let y = difference(history, model.orders.d);
    let t = y.ncols();
    let mut cols: Vec<DVector<f64>> = (0..t).map(|c| y.column(c).into()).collect();
    let mut innovations = filter_innovations(model, &cols);

    let n = model.weights.n_series();
    let mut diff_forecasts = DMatrix::zeros(n, horizon);
    for h in 0..horizon {
        let pred = one_step_mean(model, &cols, &innovations, t + h);
        diff_forecasts.set_column(h, &pred);
        cols.push(pred);
        innovations.push(DVector::zeros(n));
    }
    Ok(inverse_difference(&diff_forecasts, history, model.orders.d))
}

/// [`predict`] with the result floored at zero, for rate series that cannot
/// go negative (demand); the floor is applied after inverse differencing.
pub fn predict_nonnegative(
    model: &StarimaModel,
    history: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    Ok(predict(model, history, horizon)?.map(|v| v.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::default_benchmark;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring_adjacency(n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect()
    }

    pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller from two uniforms.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Simulate y(t) = phi0 y(t-1) + phi1 W1 y(t-1) + e(t).
    pub(crate) fn star1_series(
        weights: &SpatialWeights,
        phi0: f64,
        phi1: f64,
        t_len: usize,
        sigma: f64,
        seed: u64,
    ) -> DMatrix<f64> {
        let n = weights.n_series();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let burn = 100;
        let mut prev = DVector::zeros(n);
        let mut out = DMatrix::zeros(n, t_len);
        for t in 0..burn + t_len {
            let mut next = phi0 * &prev + phi1 * weights.apply(1, &prev);
            for r in 0..n {
                next[r] += sigma * normal(&mut rng);
            }
            if t >= burn {
                out.set_column(t - burn, &next);
            }
            prev = next;
        }
        out
    }

    #[test]
    fn weights_order_zero_is_identity() {
        let w = build_weights(&default_benchmark(), 0);
        assert_eq!(w.mats.len(), 1);
        assert_eq!(w.mats[0], DMatrix::identity(17, 17));
    }

    #[test]
    fn weights_two_link_chain() {
        let w = build_weights_from_adjacency(&[vec![1], vec![0]], 1);
        assert_eq!(w.mats[1][(0, 1)], 1.0);
        assert_eq!(w.mats[1][(1, 0)], 1.0);
        assert_eq!(w.mats[1][(0, 0)], 0.0);
    }

    #[test]
    fn benchmark_weight_rows_normalized() {
        let topo = default_benchmark();
        let w = build_weights(&topo, 1);
        for i in 0..topo.n_links() {
            let sum: f64 = w.mats[1].row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn persistence_model_repeats_last_value() {
        let weights = build_weights_from_adjacency(&ring_adjacency(4), 0);
        let model = StarimaModel {
            orders: StarimaOrders::uniform(1, 0, 0, 0),
            phi: vec![vec![1.0]],
            theta: vec![],
            weights,
            residual_variance: vec![0.0; 4],
        };
        let history = DMatrix::from_row_slice(4, 3, &[
            1.0, 2.0, 3.0, //
            0.5, 0.4, 0.3, //
            9.0, 9.0, 9.0, //
            -1.0, 0.0, 1.0,
        ]);
        let fc = predict(&model, &history, 4).unwrap();
        for h in 0..4 {
            assert_eq!(fc[(0, h)], 3.0);
            assert_eq!(fc[(1, h)], 0.3);
            assert_eq!(fc[(2, h)], 9.0);
            assert_eq!(fc[(3, h)], 1.0);
        }
    }

    #[test]
    fn zero_coefficients_forecast_zero() {
        let weights = build_weights_from_adjacency(&ring_adjacency(3), 1);
        let model = StarimaModel {
            orders: StarimaOrders::uniform(2, 0, 1, 1),
            phi: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            theta: vec![vec![0.0, 0.0]],
            weights,
            residual_variance: vec![0.0; 3],
        };
        let history = DMatrix::from_fn(3, 10, |r, c| (r + c) as f64);
        let fc = predict(&model, &history, 3).unwrap();
        assert!(fc.iter().all(|&v| v == 0.0));
    }

    // Hand-iterated oracle for a 3-step forecast of the STAR(1) recursion.
    #[test]
    fn predict_matches_hand_iteration() {
        let weights = build_weights_from_adjacency(&ring_adjacency(5), 1);
        let history = star1_series(&weights, 0.6, 0.2, 50, 1.0, 7);
        let model = StarimaModel {
            orders: StarimaOrders::uniform(1, 0, 0, 1),
            phi: vec![vec![0.55, 0.25]],
            theta: vec![],
            weights: weights.clone(),
            residual_variance: vec![1.0; 5],
        };
        let fc = predict(&model, &history, 3).unwrap();

        let mut prev: DVector<f64> = history.column(history.ncols() - 1).into();
        for h in 0..3 {
            let expected = 0.55 * &prev + 0.25 * weights.apply(1, &prev);
            for r in 0..5 {
                assert!(
                    (fc[(r, h)] - expected[r]).abs() < 1e-9,
                    "h={h} r={r}: {} vs {}",
                    fc[(r, h)],
                    expected[r]
                );
            }
            prev = expected;
        }
    }

    #[test]
    fn star1_recovery_within_tolerance() {
        let weights = build_weights_from_adjacency(&ring_adjacency(10), 1);
        let history = star1_series(&weights, 0.6, 0.2, 2000, 1.0, 42);
        let model = fit(&history, &StarimaOrders::uniform(1, 0, 0, 1), &weights).unwrap();
        assert!((model.phi[0][0] - 0.6).abs() < 0.1, "phi_10 = {}", model.phi[0][0]);
        assert!((model.phi[0][1] - 0.2).abs() < 0.1, "phi_11 = {}", model.phi[0][1]);

        // Stationary synthetic process: in-sample residual mean near zero.
        let y = difference(&history, 0);
        let cols: Vec<DVector<f64>> = (0..y.ncols()).map(|c| y.column(c).into()).collect();
        let residuals = filter_innovations(&model, &cols);
        let count = ((cols.len() - 1) * 10) as f64;
        let mean: f64 =
            residuals.iter().skip(1).map(|r| r.iter().sum::<f64>()).sum::<f64>() / count;
        assert!(mean.abs() < 3.0 / count.sqrt(), "residual mean {mean}");
    }

    #[test]
    fn constant_series_with_differencing_fits_to_zero() {
        let weights = build_weights_from_adjacency(&ring_adjacency(3), 1);
        let history = DMatrix::from_element(3, 120, 5.0);
        let model = fit(&history, &StarimaOrders::uniform(1, 1, 1, 1), &weights).unwrap();
        for row in model.phi.iter().chain(model.theta.iter()) {
            for &c in row {
                assert!(c.abs() < 1e-6, "coefficient {c}");
            }
        }
        assert!(model.residual_variance.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn short_history_is_rejected() {
        let weights = build_weights_from_adjacency(&ring_adjacency(3), 1);
        let history = DMatrix::from_element(3, 20, 1.0);
        let err = fit(&history, &StarimaOrders::uniform(2, 0, 1, 1), &weights).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { .. }));
    }

    #[test]
    fn rank_deficiency_names_regressors() {
        // A two-node graph where W1 swaps the two identical series makes the
        // k=0 and k=1 regressors collinear.
        let weights = build_weights_from_adjacency(&[vec![1], vec![0]], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut history = DMatrix::zeros(2, 120);
        let mut prev = 0.0;
        for c in 0..120 {
            prev = 0.5 * prev + normal(&mut rng);
            history[(0, c)] = prev;
            history[(1, c)] = prev;
        }
        let err = fit(&history, &StarimaOrders::uniform(1, 0, 0, 1), &weights).unwrap_err();
        match err {
            Error::RankDeficient(msg) => {
                assert!(msg.contains("ar(lag=1"), "{msg}");
            }
            other => panic!("expected rank deficiency, got {other}"),
        }
    }

    #[test]
    fn coefficients_shrink_on_white_noise() {
        let weights = build_weights_from_adjacency(&ring_adjacency(6), 1);
        let orders = StarimaOrders::uniform(1, 0, 0, 1);
        let magnitude = |t_len: usize, seed: u64| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let history =
                DMatrix::from_fn(6, t_len, |_, _| normal(&mut rng));
            let model = fit(&history, &orders, &weights).unwrap();
            model.phi[0].iter().map(|c| c.abs()).sum()
        };
        let short: f64 = (0..20).map(|s| magnitude(200, s)).sum::<f64>() / 20.0;
        let long: f64 = (0..20).map(|s| magnitude(5000, 100 + s)).sum::<f64>() / 20.0;
        assert!(long < short, "long {long} vs short {short}");
    }

    proptest! {
        // predict is linear in the history for fixed coefficients and d = 0.
        #[test]
        fn predict_linear_in_history(
            seed1 in 0u64..1000,
            seed2 in 0u64..1000,
            a in -2.0..2.0f64,
            b in -2.0..2.0f64,
        ) {
            let weights = build_weights_from_adjacency(&ring_adjacency(4), 1);
            let model = StarimaModel {
                orders: StarimaOrders::uniform(2, 0, 1, 1),
                phi: vec![vec![0.4, 0.1], vec![0.2, 0.05]],
                theta: vec![vec![0.3, -0.1]],
                weights: weights.clone(),
                residual_variance: vec![1.0; 4],
            };
            let mut rng1 = ChaCha8Rng::seed_from_u64(seed1);
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed2);
            let h1 = DMatrix::from_fn(4, 30, |_, _| rng1.gen_range(-1.0..1.0));
            let h2 = DMatrix::from_fn(4, 30, |_, _| rng2.gen_range(-1.0..1.0));
            let combined = a * &h1 + b * &h2;

            let fc = predict(&model, &combined, 4).unwrap();
            let fc1 = predict(&model, &h1, 4).unwrap();
            let fc2 = predict(&model, &h2, 4).unwrap();
            let expect = a * fc1 + b * fc2;
            for (got, want) in fc.iter().zip(expect.iter()) {
                prop_assert!((got - want).abs() < 1e-9);
            }
        }

        // Differencing then integrating recovers the series exactly on
        // integer-valued data (all operations stay representable).
        #[test]
        fn differencing_round_trip(
            raw in proptest::collection::vec(-1000i64..1000, 12..30),
            d in 1usize..4,
        ) {
            prop_assume!(raw.len() > d + 1);
            let series = DMatrix::from_fn(1, raw.len(), |_, c| raw[c] as f64);
            let head = series.columns(0, d + 1).into_owned();
            let diffs = difference(&series, d);
            // Replay the differenced tail as "forecasts" anchored on the head.
            let tail_forecasts = diffs.columns(1, diffs.ncols() - 1).into_owned();
            let rebuilt = inverse_difference(&tail_forecasts, &head, d);
            for (i, col) in (d + 1..raw.len()).enumerate() {
                prop_assert_eq!(rebuilt[(0, i)], series[(0, col)]);
            }
        }
    }
}
