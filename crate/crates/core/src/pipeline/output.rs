//! Files written into a run directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use super::{
    ConstantSeries, GraphStage, LinkCountSummary, PcaProjection, SimilaritySeries, SkippedDate,
};
use crate::leadlag::{GraphSidecar, LagSpec, LeadLagGraph};
use crate::{Error, Result};

/// `YYYY-MM-DDTHHMMZ` for an epoch-ms timestamp; safe in file names.
pub fn date_label(ms: i64) -> String {
    DateTime::from_timestamp_millis(ms)
        .map(|t| t.format("%Y-%m-%dT%H%MZ").to_string())
        .unwrap_or_else(|| ms.to_string())
}

/// `graphs/index.json`: everything about the graph stage except the graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphIndex {
    pub assets: Vec<String>,
    pub specs: Vec<LagSpec>,
    pub window_ends: Vec<i64>,
    pub skipped: Vec<SkippedDate>,
    pub constant_series: Vec<ConstantSeries>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn graph_paths(dir: &Path, graph_spec: LagSpec, window_end: i64) -> (PathBuf, PathBuf) {
    let base = dir.join(graph_spec.label()).join(date_label(window_end));
    (base.with_extension("csv"), base.with_extension("json"))
}

/// Write every graph as an edge list plus sidecar under `dir`, and the
/// stage index as `dir/index.json`. Returns the files written.
pub fn write_graph_stage(dir: &Path, stage: &GraphStage) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for graph in stage.graphs.iter().flatten() {
        let (csv_path, json_path) = graph_paths(dir, graph.spec, graph.window_end);
        let mut w = create(&csv_path)?;
        graph.write_edges(&mut w)?;
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        write_json(&json_path, &graph.sidecar())?;
        written.push(csv_path);
        written.push(json_path);
    }
    let index = GraphIndex {
        assets: stage.assets.clone(),
        specs: stage.specs.clone(),
        window_ends: stage.window_ends.clone(),
        skipped: stage.skipped.clone(),
        constant_series: stage.constant_series.clone(),
    };
    let index_path = dir.join("index.json");
    write_json(&index_path, &index)?;
    written.push(index_path);
    Ok(written)
}

pub fn read_graph_stage(dir: &Path) -> Result<GraphStage> {
    let index_path = dir.join("index.json");
    let index: GraphIndex = serde_json::from_reader(open(&index_path)?)?;
    let graphs = index
        .window_ends
        .iter()
        .map(|&end| {
            index
                .specs
                .iter()
                .map(|&spec| {
                    let (csv_path, json_path) = graph_paths(dir, spec, end);
                    let sidecar: GraphSidecar = serde_json::from_reader(open(&json_path)?)?;
                    if sidecar.assets != index.assets {
                        return Err(Error::Parse {
                            path: json_path.clone(),
                            message: "asset list differs from the graph index".into(),
                        });
                    }
                    LeadLagGraph::read_edges(open(&csv_path)?, sidecar)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphStage {
        assets: index.assets,
        specs: index.specs,
        window_ends: index.window_ends,
        graphs,
        skipped: index.skipped,
        constant_series: index.constant_series,
    })
}

/// CSV `spec,period_minutes,lag,windows,min,q25,median,q75,max`.
pub fn write_link_counts(path: &Path, summaries: &[LinkCountSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "spec",
        "period_minutes",
        "lag",
        "windows",
        "min",
        "q25",
        "median",
        "q75",
        "max",
    ])?;
    for s in summaries {
        w.write_record([
            s.spec.label(),
            s.spec.period_minutes.to_string(),
            s.spec.lag.to_string(),
            s.windows.to_string(),
            s.min.to_string(),
            s.q25.to_string(),
            s.median.to_string(),
            s.q75.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pca(path: &Path, projection: &PcaProjection) -> Result<()> {
    let mut w = create(path)?;
    projection.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One `<first>__<second>.csv` per series under `dir`.
pub fn write_similarity_series(dir: &Path, series: &[SimilaritySeries]) -> Result<Vec<PathBuf>> {
    series
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}__{}.csv", s.first, s.second));
            let mut w = create(&path)?;
            s.write_csv(&mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
