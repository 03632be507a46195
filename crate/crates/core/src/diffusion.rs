//! Random walk with restart accumulation and PPMI features.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwrConfig {
    /// Probability of continuing the walk at each step (`alpha`).
    pub restart_keep: f64,
    pub steps: usize,
}

impl Default for RwrConfig {
    fn default() -> Self {
        RwrConfig {
            restart_keep: 0.98,
            steps: 3,
        }
    }
}

impl RwrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.restart_keep) {
            return Err(Error::InvalidArgument(format!(
                "restart_keep must be in [0, 1), got {}",
                self.restart_keep
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("RWR steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// RWR and PPMI matrices derived from one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureSet {
    pub rwr: Array2<f64>,
    pub ppmi: Array2<f64>,
}

pub fn row_normalize(adjacency: &Array2<u8>) -> Result<Array2<f64>> {
    let mut out = adjacency.mapv(f64::from);
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let sum = row.sum();
        if sum == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "adjacency row {i} is empty; isolated nodes need a self-loop"
            )));
        }
        row /= sum;
    }
    Ok(out)
}

/// Every iterate `p^(t)` for `t = 0..=K`, one row per start node.
pub fn rwr_trajectory(adjacency: &Array2<u8>, cfg: &RwrConfig) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    if adjacency.nrows() != adjacency.ncols() {
        return Err(Error::Shape(format!(
            "adjacency is {}x{}",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let transition = row_normalize(adjacency)?;
    let n = adjacency.nrows();
    let restart = Array2::<f64>::eye(n) * (1.0 - cfg.restart_keep);
    let mut states = Vec::with_capacity(cfg.steps + 1);
    states.push(Array2::eye(n));
    for _ in 0..cfg.steps {
        let prev = states.last().unwrap();
        let next = prev.dot(&transition) * cfg.restart_keep + &restart;
        states.push(next);
    }
    Ok(states)
}

/// `V = sum_{t=1..K} p^(t)`; each row sums to `K`.
pub fn rwr_accumulate(adjacency: &Array2<u8>, cfg: &RwrConfig) -> Result<Array2<f64>> {
    let states = rwr_trajectory(adjacency, cfg)?;
    let n = adjacency.nrows();
    Ok(states
        .iter()
        .skip(1)
        .fold(Array2::zeros((n, n)), |acc, p| acc + p))
}

/// `P[i][j] = max(0, ln(n V[i][j] / sum_q V[q][j]))`, zero where `V` or the
/// column mass is zero.
pub fn ppmi(v: &Array2<f64>) -> Array2<f64> {
    let n = v.nrows() as f64;
    let col_sums = v.sum_axis(Axis(0));
    Array2::from_shape_fn(v.raw_dim(), |(i, j)| {
        let (x, col) = (v[[i, j]], col_sums[j]);
        if x <= 0.0 || col <= 0.0 {
            0.0
        } else {
            (n * x / col).ln().max(0.0)
        }
    })
}

pub fn node_features(adjacency: &Array2<u8>, cfg: &RwrConfig) -> Result<NodeFeatureSet> {
    let rwr = rwr_accumulate(adjacency, cfg)?;
    let ppmi = ppmi(&rwr);
    Ok(NodeFeatureSet { rwr, ppmi })
}
