//! End-to-end stages: windowed graph construction over a price panel,
//! PPMI feature assembly, fusion training and embedding extraction.

mod output;
mod pca;
mod similarity;
mod summary;

pub use output::{
    date_label, read_graph_stage, write_graph_stage, write_link_counts, write_pca,
    write_similarity_series, GraphIndex,
};
pub use pca::{pca_fit, pca_project, Pca, PcaProjection};
pub use similarity::{
    cosine_similarity, similarity_matrix, similarity_series, SimilarityMatrix, SimilaritySeries,
};
pub use summary::{summarize_link_counts, LinkCountSummary};

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diffusion::node_features;
use crate::fusion::{
    extract_embeddings, train, EmbeddingFrame, FusionModel, TrainReport, TrainingSample,
};
use crate::leadlag::{build_graph, LagSpec, LeadLagGraph};
use crate::market_data::{log_returns, resample, PricePanel, ReturnMatrix};
use crate::{Error, Result};

pub const MS_PER_DAY: i64 = 86_400_000;

/// A candidate window end that produced no graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDate {
    pub window_end: i64,
    pub reason: String,
}

/// An asset whose returns were constant inside one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantSeries {
    pub window_end: i64,
    pub spec: LagSpec,
    pub asset: String,
}

/// Graphs for every usable window end: `graphs[date][spec]`, specs in
/// configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStage {
    pub assets: Vec<String>,
    pub specs: Vec<LagSpec>,
    pub window_ends: Vec<i64>,
    pub graphs: Vec<Vec<LeadLagGraph>>,
    pub skipped: Vec<SkippedDate>,
    pub constant_series: Vec<ConstantSeries>,
}

impl GraphStage {
    pub fn graphs_for(&self, spec: LagSpec) -> impl Iterator<Item = &LeadLagGraph> + '_ {
        let k = self.specs.iter().position(|s| *s == spec);
        self.graphs
            .iter()
            .filter_map(move |per_date| k.map(|k| &per_date[k]))
    }
}

/// Explicit ends from the config, or every UTC midnight strictly after the
/// first price and no later than the last.
pub fn candidate_window_ends(config: &RunConfig, panel: &PricePanel) -> Vec<i64> {
    if !config.graphs.window_ends.is_empty() {
        return config.graphs.window_ends.clone();
    }
    let (Some(&first), Some(&last)) = (panel.timestamps.first(), panel.timestamps.last()) else {
        return Vec::new();
    };
    let mut t = first.div_euclid(MS_PER_DAY) * MS_PER_DAY + MS_PER_DAY;
    let mut out = Vec::new();
    while t <= last {
        out.push(t);
        t += MS_PER_DAY;
    }
    out
}

pub fn returns_by_period(
    config: &RunConfig,
    panel: &PricePanel,
) -> Result<BTreeMap<u32, ReturnMatrix>> {
    config
        .graphs
        .periods()
        .into_iter()
        .map(|d| Ok((d, log_returns(&resample(panel, d)?))))
        .collect()
}

/// Build one graph per (usable window end, spec). Window ends for which any
/// spec lacks a full window are skipped and recorded.
pub fn build_graph_stage(config: &RunConfig, panel: &PricePanel) -> Result<GraphStage> {
    config.validate()?;
    let returns = returns_by_period(config, panel)?;
    let g = &config.graphs;
    let specs = g.specs.clone();
    let mut window_ends = Vec::new();
    let mut skipped = Vec::new();
    for end in candidate_window_ends(config, panel) {
        let missing: Vec<String> = specs
            .iter()
            .filter_map(|spec| {
                let rows = g.window_rows_for(spec.period_minutes).ok()?;
                returns[&spec.period_minutes]
                    .window(end, rows)
                    .is_none()
                    .then(|| format!("{spec} needs {rows} rows"))
            })
            .collect();
        if missing.is_empty() {
            window_ends.push(end);
        } else {
            let reason = format!("incomplete window: {}", missing.join("; "));
            warn!("skipping window ending {}: {reason}", date_label(end));
            skipped.push(SkippedDate {
                window_end: end,
                reason,
            });
        }
    }
    if window_ends.is_empty() {
        return Err(Error::NoUsableDates {
            skipped: skipped.len(),
        });
    }

    let tasks: Vec<(usize, usize)> = (0..window_ends.len())
        .flat_map(|d| (0..specs.len()).map(move |k| (d, k)))
        .collect();
    let built: Vec<(LeadLagGraph, Vec<String>)> = tasks
        .par_iter()
        .map(|&(d, k)| {
            let spec = specs[k];
            let r = &returns[&spec.period_minutes];
            let rows = g.window_rows_for(spec.period_minutes)?;
            let window = r
                .window(window_ends[d], rows)
                .expect("window checked above");
            let constant = window
                .columns()
                .into_iter()
                .zip(&r.assets)
                .filter(|(c, _)| c.iter().all(|&v| v == c[0]))
                .map(|(_, a)| a.clone())
                .collect();
            let graph = build_graph(window, &r.assets, spec, window_ends[d], g.states, g.p_value)?;
            debug!(
                "{} {}: {} validated links",
                spec,
                date_label(window_ends[d]),
                graph.validated_link_count
            );
            Ok((graph, constant))
        })
        .collect::<Result<_>>()?;

    let mut graphs: Vec<Vec<LeadLagGraph>> = Vec::with_capacity(window_ends.len());
    let mut constant_series = Vec::new();
    for (idx, (graph, constant)) in built.into_iter().enumerate() {
        if idx % specs.len() == 0 {
            graphs.push(Vec::with_capacity(specs.len()));
        }
        for asset in constant {
            warn!(
                "{asset} has constant returns in the {} window ending {}",
                graph.spec,
                date_label(graph.window_end)
            );
            constant_series.push(ConstantSeries {
                window_end: graph.window_end,
                spec: graph.spec,
                asset,
            });
        }
        graphs.last_mut().unwrap().push(graph);
    }
    info!(
        "built {} graphs over {} window ends ({} skipped)",
        window_ends.len() * specs.len(),
        window_ends.len(),
        skipped.len()
    );
    Ok(GraphStage {
        assets: panel.assets.clone(),
        specs,
        window_ends,
        graphs,
        skipped,
        constant_series,
    })
}

/// One sample per (window end, asset): the asset's PPMI row in each graph.
pub fn build_samples(stage: &GraphStage, config: &RunConfig) -> Result<Vec<TrainingSample>> {
    let per_date: Vec<Vec<TrainingSample>> = stage
        .graphs
        .par_iter()
        .enumerate()
        .map(|(date, graphs)| {
            let features = graphs
                .iter()
                .map(|g| node_features(&g.adjacency, &config.rwr).map(|f| f.ppmi))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..stage.assets.len())
                .map(|asset| TrainingSample {
                    asset,
                    date,
                    rows: features.iter().map(|p| p.row(asset).to_owned()).collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_date.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct FuseStage {
    pub model: FusionModel,
    pub report: TrainReport,
    pub embeddings: EmbeddingFrame,
}

/// Train one fusion model over all samples and embed every sample.
pub fn fuse(stage: &GraphStage, config: &RunConfig) -> Result<FuseStage> {
    config.validate()?;
    let samples = build_samples(stage, config)?;
    let arch = config
        .model
        .architecture(stage.specs.len(), stage.assets.len());
    let mut model = FusionModel::init(arch, config.seeds.init)?;
    info!(
        "training on {} samples, {} parameters",
        samples.len(),
        model.param_count()
    );
    let report = train(
        &mut model,
        &samples,
        &config.model.train_options(config.seeds.split),
    )?;
    info!(
        "stopped at epoch {} ({:?}); best validation loss {:?} at epoch {}",
        report.stop_epoch, report.stop_reason, report.best_validation_loss, report.best_epoch
    );
    let embeddings = extract_embeddings(&model, &samples, &stage.assets, &stage.window_ends)?;
    Ok(FuseStage {
        model,
        report,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, UniverseSpec};
    use ndarray::Array2;

    fn panel_from_synth(spec: &UniverseSpec, seed: u64) -> PricePanel {
        let assets = generate_synthetic(spec, seed).unwrap();
        let n = assets.len();
        let t = assets[0].timestamps.len();
        PricePanel {
            period_minutes: spec.base_period_minutes,
            timestamps: assets[0].timestamps.clone(),
            assets: assets.iter().map(|a| a.name.clone()).collect(),
            prices: Array2::from_shape_fn((t, n), |(r, c)| assets[c].prices[r]),
        }
    }

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.synth.n_assets = 4;
        c.synth.days = 3;
        c.graphs.specs = vec![LagSpec::new(1, 0), LagSpec::new(1, 1)];
        c
    }

    #[test]
    fn daily_window_ends_cover_each_full_day() {
        let c = small_config();
        let panel = panel_from_synth(&c.synth, 1);
        let ends = candidate_window_ends(&c, &panel);
        let start = c.synth.start_ms;
        assert_eq!(
            ends,
            vec![
                start + MS_PER_DAY,
                start + 2 * MS_PER_DAY,
                start + 3 * MS_PER_DAY
            ]
        );
    }

    #[test]
    fn incomplete_windows_are_skipped() {
        let mut c = small_config();
        let start = c.synth.start_ms;
        // the first end has only 720 one-minute returns behind it
        c.graphs.window_ends = vec![start + MS_PER_DAY / 2, start + MS_PER_DAY];
        let panel = panel_from_synth(&c.synth, 1);
        let stage = build_graph_stage(&c, &panel).unwrap();
        assert_eq!(stage.window_ends, vec![start + MS_PER_DAY]);
        assert_eq!(stage.skipped.len(), 1);
        assert_eq!(stage.graphs.len(), 1);
        assert_eq!(stage.graphs[0].len(), 2);
        assert_eq!(stage.graphs[0][1].spec, LagSpec::new(1, 1));

        c.graphs.window_ends = vec![start + 1000];
        assert!(matches!(
            build_graph_stage(&c, &panel),
            Err(Error::NoUsableDates { skipped: 1 })
        ));
    }

    #[test]
    fn planted_link_appears_at_its_lag() {
        let c = small_config();
        let panel = panel_from_synth(&c.synth, 2);
        let stage = build_graph_stage(&c, &panel).unwrap();
        for g in stage.graphs_for(LagSpec::new(1, 1)) {
            assert!(g.weights[[0, 1]] > 0.0);
            assert_eq!(g.adjacency[[0, 1]], 1);
        }
    }

    #[test]
    fn samples_are_date_major_with_one_row_per_graph() {
        let c = small_config();
        let panel = panel_from_synth(&c.synth, 3);
        let stage = build_graph_stage(&c, &panel).unwrap();
        let samples = build_samples(&stage, &c).unwrap();
        assert_eq!(samples.len(), 3 * 4);
        assert_eq!((samples[5].date, samples[5].asset), (1, 1));
        assert!(samples
            .iter()
            .all(|s| s.rows.len() == 2 && s.rows[0].len() == 4));
    }

    #[test]
    fn constant_columns_are_flagged() {
        let mut c = small_config();
        c.synth.days = 1;
        let mut panel = panel_from_synth(&c.synth, 4);
        panel.prices.column_mut(3).fill(50.0);
        let stage = build_graph_stage(&c, &panel).unwrap();
        assert_eq!(stage.constant_series.len(), 2);
        assert!(stage.constant_series.iter().all(|s| s.asset == "A03"));
    }
}
