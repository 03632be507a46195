//! Lagged mutual-information matrices and the validated lead-lag graph.

use std::fmt;
use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::infotheory::{
    discretize_equal_frequency, mutual_information_bits, DiscreteSeries, MiTestConfig,
    SignificanceTest,
};
use crate::{Error, Result};

/// A sampling period (minutes) and a forward lag (in sampling periods).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LagSpec {
    pub period_minutes: u32,
    pub lag: usize,
}

impl LagSpec {
    pub fn new(period_minutes: u32, lag: usize) -> Self {
        LagSpec {
            period_minutes,
            lag,
        }
    }

    /// Directory-safe label, e.g. `d1_T0`.
    pub fn label(&self) -> String {
        format!("d{}_T{}", self.period_minutes, self.lag)
    }
}

impl fmt::Display for LagSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d={}m, T={})", self.period_minutes, self.lag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadLagGraph {
    pub spec: LagSpec,
    pub window_end: i64,
    pub assets: Vec<String>,
    /// Symmetrized validated MI weights, zero diagonal.
    pub weights: Array2<f64>,
    /// Binary adjacency; isolated nodes carry a self-loop.
    pub adjacency: Array2<u8>,
    /// Directed links that passed the test, before symmetrization.
    pub validated_link_count: usize,
}

/// Split a return block into the leading rows (last `lag` dropped) and the
/// lagged rows (first `lag` dropped).
pub fn shift_split(
    returns: ArrayView2<'_, f64>,
    lag: usize,
) -> Result<(ArrayView2<'_, f64>, ArrayView2<'_, f64>)> {
    let rows = returns.nrows();
    if lag >= rows {
        return Err(Error::LagTooLarge { lag, rows });
    }
    Ok((
        returns.slice_move(s![..rows - lag, ..]),
        returns.slice_move(s![lag.., ..]),
    ))
}

fn discretize_columns(block: ArrayView2<'_, f64>, states: usize) -> Result<Vec<DiscreteSeries>> {
    block
        .columns()
        .into_iter()
        .map(|col| discretize_equal_frequency(col.iter().copied(), states))
        .collect()
}

/// Entry `(m, q)` is the MI between leading column `m` and lagged column `q`;
/// each column of each block is discretized on its own.
pub fn lagged_mi_matrix(
    returns: ArrayView2<'_, f64>,
    lag: usize,
    states: usize,
) -> Result<Array2<f64>> {
    let (lead, lagged) = shift_split(returns, lag)?;
    if lead.nrows() < states {
        return Err(Error::InvalidArgument(format!(
            "{} rows after shifting by {lag} is fewer than {states} states",
            lead.nrows()
        )));
    }
    let a = discretize_columns(lead, states)?;
    let b = discretize_columns(lagged, states)?;
    let n = a.len();
    let mut c = Array2::zeros((n, n));
    for (m, am) in a.iter().enumerate() {
        for (q, bq) in b.iter().enumerate() {
            c[[m, q]] = mutual_information_bits(am, bq)?;
        }
    }
    Ok(c)
}

/// Keep significant off-diagonal entries, zero the rest and the diagonal.
pub fn filter_significant(c: &Array2<f64>, test: &SignificanceTest) -> Array2<f64> {
    Array2::from_shape_fn(c.raw_dim(), |(i, j)| {
        let v = c[[i, j]];
        if i != j && test.is_significant(v) {
            v
        } else {
            0.0
        }
    })
}

pub fn symmetrize(directed: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(directed.raw_dim(), |(i, j)| {
        (directed[[i, j]] + directed[[j, i]]) / 2.0
    })
}

pub fn validate_and_symmetrize(c: &Array2<f64>, cfg: &MiTestConfig) -> Result<Array2<f64>> {
    check_square(c)?;
    let test = SignificanceTest::new(*cfg)?;
    Ok(symmetrize(&filter_significant(c, &test)))
}

/// Off-diagonal `weight > 0` becomes 1; rows with no edge get a self-loop.
pub fn binarize(weights: &Array2<f64>) -> Array2<u8> {
    let n = weights.nrows();
    let mut adj = weights.mapv(|w| u8::from(w > 0.0));
    for i in 0..n {
        adj[[i, i]] = 0;
        if adj.row(i).iter().all(|&v| v == 0) {
            adj[[i, i]] = 1;
        }
    }
    adj
}

pub fn count_validated_links(directed: &Array2<f64>) -> usize {
    directed
        .indexed_iter()
        .filter(|&((i, j), &v)| i != j && v > 0.0)
        .count()
}

fn check_square(c: &Array2<f64>) -> Result<()> {
    if c.nrows() != c.ncols() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// Full construction for one window: MI matrix, Bonferroni test with
/// `m = n^2` and `N = rows - lag`, symmetrization and binarization.
pub fn build_graph(
    window: ArrayView2<'_, f64>,
    assets: &[String],
    spec: LagSpec,
    window_end: i64,
    states: usize,
    uncorrected_p: f64,
) -> Result<LeadLagGraph> {
    let n = window.ncols();
    if assets.len() != n {
        return Err(Error::Shape(format!(
            "{} asset names for {n} columns",
            assets.len()
        )));
    }
    let c = lagged_mi_matrix(window, spec.lag, states)?;
    let cfg = MiTestConfig {
        states_x: states,
        states_y: states,
        sample_size: window.nrows() - spec.lag,
        uncorrected_p,
        num_tests: n * n,
    };
    let test = SignificanceTest::new(cfg)?;
    let directed = filter_significant(&c, &test);
    let weights = symmetrize(&directed);
    Ok(LeadLagGraph {
        spec,
        window_end,
        assets: assets.to_vec(),
        adjacency: binarize(&weights),
        validated_link_count: count_validated_links(&directed),
        weights,
    })
}

/// JSON sidecar written next to each edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub spec: LagSpec,
    pub window_end: i64,
    pub n: usize,
    pub validated_link_count: usize,
    pub assets: Vec<String>,
}

impl LeadLagGraph {
    pub fn sidecar(&self) -> GraphSidecar {
        GraphSidecar {
            spec: self.spec,
            window_end: self.window_end,
            n: self.assets.len(),
            validated_link_count: self.validated_link_count,
            assets: self.assets.clone(),
        }
    }

    /// Edge list `source,target,weight`, one row per undirected edge
    /// (upper triangle).
    pub fn write_edges<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "target", "weight"])?;
        let n = self.assets.len();
        for i in 0..n {
            for j in i + 1..n {
                let v = self.weights[[i, j]];
                if v > 0.0 {
                    w.write_record([&self.assets[i], &self.assets[j], &v.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<edge list>", e))?;
        Ok(())
    }

    /// Rebuild a graph from an edge list and its sidecar.
    pub fn read_edges<R: Read>(reader: R, sidecar: GraphSidecar) -> Result<LeadLagGraph> {
        let n = sidecar.assets.len();
        if n != sidecar.n {
            return Err(Error::Shape(format!(
                "sidecar declares n={} but lists {n} assets",
                sidecar.n
            )));
        }
        let index = |name: &str| {
            sidecar
                .assets
                .iter()
                .position(|a| a == name)
                .ok_or_else(|| Error::Unknown {
                    kind: "asset",
                    name: name.to_string(),
                })
        };
        let mut weights = Array2::zeros((n, n));
        let mut r = csv::Reader::from_reader(reader);
        for rec in r.records() {
            let rec = rec?;
            let (i, j) = (index(&rec[0])?, index(&rec[1])?);
            let v: f64 = rec[2].parse().map_err(|_| Error::Parse {
                path: "<edge list>".into(),
                message: format!("bad weight `{}`", &rec[2]),
            })?;
            weights[[i, j]] = v;
            weights[[j, i]] = v;
        }
        Ok(LeadLagGraph {
            spec: sidecar.spec,
            window_end: sidecar.window_end,
            adjacency: binarize(&weights),
            weights,
            validated_link_count: sidecar.validated_link_count,
            assets: sidecar.assets,
        })
    }
}
