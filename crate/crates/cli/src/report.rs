//! `report.json`: effective configuration plus one section per stage.
//! Contains no wall-clock values, so reruns with unchanged inputs produce
//! the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use leadlag_fuse::config::{RunConfig, Seeds};
use leadlag_fuse::fusion::TrainReport;
use leadlag_fuse::pipeline::{ConstantSeries, LinkCountSummary, SkippedDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REPORT_FILE: &str = "report.json";

/// Stage order; rerunning a stage drops the sections of the stages after it.
pub const STAGES: [&str; 5] = ["synth", "ingest", "graphs", "fuse", "postprocess"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub assets: Vec<String>,
    pub prices_per_asset: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSection {
    pub assets: Vec<String>,
    pub rows: usize,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
    pub period_minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphsSection {
    pub window_ends: Vec<i64>,
    pub graph_count: usize,
    pub skipped: Vec<SkippedDate>,
    pub constant_series: Vec<ConstantSeries>,
    pub link_counts: Vec<LinkCountSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSection {
    pub samples: usize,
    pub param_count: usize,
    pub training: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessSection {
    pub pairs: Vec<[String; 2]>,
    pub pca_explained_variance: Vec<f64>,
    pub pca_explained_variance_ratio: Vec<f64>,
    pub pca_warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Option<RunConfig>,
    pub seeds: Option<Seeds>,
    pub synth: Option<SynthSection>,
    pub ingest: Option<IngestSection>,
    pub graphs: Option<GraphsSection>,
    pub fuse: Option<FuseSection>,
    pub postprocess: Option<PostprocessSection>,
    /// Files written by each stage, relative to the run directory.
    pub outputs: BTreeMap<String, Vec<String>>,
}

impl RunReport {
    pub fn load_or_default(out: &Path) -> RunReport {
        let path = out.join(REPORT_FILE);
        let Ok(text) = fs::read_to_string(&path) else {
            return RunReport::default();
        };
        serde_json::from_str(&text).unwrap_or_else(|e| {
            warn!("ignoring unreadable {}: {e}", path.display());
            RunReport::default()
        })
    }

    /// Record that `stage` ran with `config`, dropping later stages.
    pub fn begin(&mut self, stage: &str, config: &RunConfig) {
        self.config = Some(config.clone());
        self.seeds = Some(config.seeds);
        let pos = STAGES
            .iter()
            .position(|s| *s == stage)
            .expect("known stage");
        for later in &STAGES[pos + 1..] {
            self.outputs.remove(*later);
            match *later {
                "ingest" => self.ingest = None,
                "graphs" => self.graphs = None,
                "fuse" => self.fuse = None,
                "postprocess" => self.postprocess = None,
                _ => {}
            }
        }
    }

    pub fn set_outputs(&mut self, stage: &str, out: &Path, files: &[impl AsRef<Path>]) {
        let mut rel: Vec<String> = files
            .iter()
            .map(|f| {
                let f = f.as_ref();
                f.strip_prefix(out)
                    .unwrap_or(f)
                    .to_string_lossy()
                    .replace('\\', "/")
            })
            .collect();
        rel.sort();
        self.outputs.insert(stage.to_string(), rel);
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        let path = out.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Other(format!("serializing report: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerunning_a_stage_drops_later_sections() {
        let mut r = RunReport::default();
        let c = RunConfig::default();
        r.outputs
            .insert("graphs".into(), vec!["graphs/index.json".into()]);
        r.outputs
            .insert("fuse".into(), vec!["embeddings.csv".into()]);
        r.postprocess = Some(PostprocessSection {
            pairs: vec![],
            pca_explained_variance: vec![],
            pca_explained_variance_ratio: vec![],
            pca_warnings: vec![],
        });
        r.begin("graphs", &c);
        assert!(r.outputs.contains_key("graphs"));
        assert!(!r.outputs.contains_key("fuse"));
        assert!(r.postprocess.is_none());
        assert_eq!(r.seeds, Some(c.seeds));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunReport::default();
        r.begin("ingest", &RunConfig::default());
        r.set_outputs("ingest", dir.path(), &[dir.path().join("panel.csv")]);
        r.save(dir.path()).unwrap();
        let back = RunReport::load_or_default(dir.path());
        assert_eq!(back, r);
        assert_eq!(back.outputs["ingest"], vec!["panel.csv".to_string()]);
    }
}
