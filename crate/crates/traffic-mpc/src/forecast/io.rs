//! Model coefficient serialization and history ingestion from trajectory logs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{SpatialWeights, StarimaModel, StarimaOrders};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    p: usize,
    d: usize,
    q: usize,
    m: Vec<usize>,
    n: Vec<usize>,
    phi: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    residual_variance: Vec<f64>,
    /// Row-major weight matrices, order 0..=K.
    weights: Vec<Vec<Vec<f64>>>,
}

pub fn model_to_string(model: &StarimaModel) -> String {
    let file = ModelFile {
        p: model.orders.p,
        d: model.orders.d,
        q: model.orders.q,
        m: model.orders.m.clone(),
        n: model.orders.n.clone(),
        phi: model.phi.clone(),
        theta: model.theta.clone(),
        residual_variance: model.residual_variance.clone(),
        weights: model
            .weights
            .mats
            .iter()
            .map(|w| (0..w.nrows()).map(|r| w.row(r).iter().copied().collect()).collect())
            .collect(),
    };
    toml::to_string(&file).expect("model serializes")
}

pub fn model_from_string(text: &str) -> Result<StarimaModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mats = file
        .weights
        .iter()
        .map(|rows| {
            let n = rows.len();
            DMatrix::from_fn(n, n, |r, c| rows[r][c])
        })
        .collect();
    Ok(StarimaModel {
        orders: StarimaOrders { p: file.p, d: file.d, q: file.q, m: file.m, n: file.n },
        phi: file.phi,
        theta: file.theta,
        weights: SpatialWeights { mats },
        residual_variance: file.residual_variance,
    })
}

/// Extract a links x time history matrix from a trajectory CSV produced by the
/// harness, sampling one value per control step (rows at cycle boundaries).
/// `column` is one of the log's numeric column names, e.g. "f_in" or
/// "disturbance".
pub fn history_from_trajectory_csv(
    text: &str,
    column: &str,
    cycle_s: f64,
) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory csv".into()))?;
    let names: Vec<&str> = header.split(',').collect();
    let col = names
        .iter()
        .position(|&n| n == column)
        .ok_or_else(|| Error::Parse(format!("column {column} not in trajectory header")))?;
    let time_col = names
        .iter()
        .position(|&n| n == "time_s")
        .ok_or_else(|| Error::Parse("column time_s not in trajectory header".into()))?;
    let link_col = names
        .iter()
        .position(|&n| n == "link")
        .ok_or_else(|| Error::Parse("column link not in trajectory header".into()))?;

    let mut links: Vec<String> = Vec::new();
    let mut samples: Vec<Vec<f64>> = Vec::new(); // per link
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let t: f64 = fields[time_col].parse().map_err(|_| Error::Parse(format!("bad time in {line}")))?;
        if (t / cycle_s).fract().abs() > 1e-9 {
            continue; // sub-sampled row inside a cycle
        }
        let link = fields[link_col];
        let value: f64 =
            fields[col].parse().map_err(|_| Error::Parse(format!("bad value in {line}")))?;
        let idx = match links.iter().position(|l| l == link) {
            Some(i) => i,
            None => {
                links.push(link.to_string());
                samples.push(Vec::new());
                links.len() - 1
            }
        };
        samples[idx].push(value);
    }
    if links.is_empty() {
        return Err(Error::Parse("trajectory csv holds no rows".into()));
    }
    let t_len = samples.iter().map(Vec::len).min().unwrap_or(0);
    let matrix = DMatrix::from_fn(links.len(), t_len, |r, c| samples[r][c]);
    Ok((links, matrix))
}
