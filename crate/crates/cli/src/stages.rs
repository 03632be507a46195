//! One function per subcommand. Each stage reads its inputs from the run
//! directory, writes its outputs there and updates `report.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use leadlag_fuse::config::RunConfig;
use leadlag_fuse::fusion::EmbeddingFrame;
use leadlag_fuse::market_data::{load_prices, price_files_in, LoadOptions, PricePanel};
use leadlag_fuse::pipeline::{
    build_graph_stage, fuse, pca_project, read_graph_stage, similarity_series,
    summarize_link_counts, write_graph_stage, write_link_counts, write_pca,
    write_similarity_series,
};
use leadlag_fuse::synth::{generate_synthetic, write_price_files};
use log::info;
use rayon::prelude::*;

use crate::error::CliError;
use crate::report::{
    FuseSection, GraphsSection, IngestSection, PostprocessSection, RunReport, SynthSection,
};

pub const PANEL_FILE: &str = "panel.csv";
pub const GRAPHS_DIR: &str = "graphs";
pub const LINK_COUNTS_FILE: &str = "link_counts.csv";
pub const MODEL_FILE: &str = "model.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const SIMILARITY_DIR: &str = "similarity";
pub const PCA_FILE: &str = "pca.csv";

pub struct Context {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out: PathBuf,
}

impl Context {
    pub fn prices_dir(&self) -> PathBuf {
        if self.config.data.prices_dir.is_empty() {
            self.out.join("prices")
        } else {
            self.base_dir.join(&self.config.data.prices_dir)
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!(
            "{} not found ({hint})",
            path.display()
        )))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn flush(w: &mut impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Remove a stage-owned output directory so no stale files survive a rerun.
fn reset_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

fn finish(
    ctx: &Context,
    report: &mut RunReport,
    stage: &str,
    files: &[PathBuf],
) -> Result<(), CliError> {
    report.set_outputs(stage, &ctx.out, files);
    report.save(&ctx.out)
}

pub fn synth(ctx: &Context) -> Result<(), CliError> {
    let mut report = RunReport::load_or_default(&ctx.out);
    report.begin("synth", &ctx.config);
    let spec = &ctx.config.synth;
    let assets = generate_synthetic(spec, ctx.config.seeds.data)?;
    let dir = ctx.prices_dir();
    let files = write_price_files(&dir, &assets)?;
    info!(
        "wrote {} synthetic price files to {}",
        files.len(),
        dir.display()
    );
    report.synth = Some(SynthSection {
        assets: assets.iter().map(|a| a.name.clone()).collect(),
        prices_per_asset: assets[0].prices.len(),
        seed: ctx.config.seeds.data,
    });
    finish(ctx, &mut report, "synth", &files)
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let mut report = RunReport::load_or_default(&ctx.out);
    report.begin("ingest", &ctx.config);
    let dir = ctx.prices_dir();
    require(&dir, "set data.prices_dir or run `synth`")?;
    let files = price_files_in(&dir)?;
    if files.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no price CSVs in {}",
            dir.display()
        )));
    }
    let base = ctx.config.data.base_period_minutes;
    let opts = LoadOptions {
        min_overlap_rows: (ctx.config.graphs.window_minutes / base) as usize + 1,
        ..LoadOptions::new(base)
    };
    let panel = load_prices(&files, &opts)?;
    let path = ctx.path(PANEL_FILE);
    let mut w = create(&path)?;
    panel.write_csv(&mut w)?;
    flush(&mut w, &path)?;
    info!(
        "ingested {} assets x {} rows into {}",
        panel.assets.len(),
        panel.timestamps.len(),
        path.display()
    );
    report.ingest = Some(IngestSection {
        assets: panel.assets.clone(),
        rows: panel.timestamps.len(),
        first_timestamp: panel.timestamps[0],
        last_timestamp: *panel.timestamps.last().unwrap(),
        period_minutes: panel.period_minutes,
    });
    finish(ctx, &mut report, "ingest", &[path])
}

pub fn graphs(ctx: &Context) -> Result<(), CliError> {
    let mut report = RunReport::load_or_default(&ctx.out);
    report.begin("graphs", &ctx.config);
    let panel_path = ctx.path(PANEL_FILE);
    require(&panel_path, "run `ingest` first")?;
    let panel = PricePanel::read_csv(open(&panel_path)?, ctx.config.data.base_period_minutes)?;
    let stage = build_graph_stage(&ctx.config, &panel)?;
    let dir = ctx.path(GRAPHS_DIR);
    reset_dir(&dir)?;
    let mut files = write_graph_stage(&dir, &stage)?;
    let link_counts = summarize_link_counts(&stage);
    let lc_path = ctx.path(LINK_COUNTS_FILE);
    write_link_counts(&lc_path, &link_counts)?;
    files.push(lc_path);
    for s in &link_counts {
        info!(
            "{}: validated links min {} / median {} / max {} over {} windows",
            s.spec, s.min, s.median, s.max, s.windows
        );
    }
    report.graphs = Some(GraphsSection {
        window_ends: stage.window_ends.clone(),
        graph_count: stage.graphs.iter().map(Vec::len).sum(),
        skipped: stage.skipped.clone(),
        constant_series: stage.constant_series.clone(),
        link_counts,
    });
    finish(ctx, &mut report, "graphs", &files)
}

pub fn fuse_stage(ctx: &Context) -> Result<(), CliError> {
    let mut report = RunReport::load_or_default(&ctx.out);
    report.begin("fuse", &ctx.config);
    let dir = ctx.path(GRAPHS_DIR);
    require(&dir.join("index.json"), "run `graphs` first")?;
    let stage = read_graph_stage(&dir)?;
    let fused = fuse(&stage, &ctx.config)?;

    let model_path = ctx.path(MODEL_FILE);
    let mut w = create(&model_path)?;
    serde_json::to_writer_pretty(&mut w, &fused.model.to_checkpoint())
        .map_err(|e| CliError::Other(format!("serializing model: {e}")))?;
    writeln!(w).map_err(|e| CliError::Io(model_path.clone(), e))?;
    flush(&mut w, &model_path)?;

    let emb_path = ctx.path(EMBEDDINGS_FILE);
    let mut w = create(&emb_path)?;
    fused.embeddings.write_csv(&mut w)?;
    flush(&mut w, &emb_path)?;

    report.fuse = Some(FuseSection {
        samples: fused.embeddings.rows.len(),
        param_count: fused.model.param_count(),
        training: fused.report,
    });
    finish(ctx, &mut report, "fuse", &[model_path, emb_path])
}

/// Configured pairs, or every unordered pair of distinct assets.
fn tracked_pairs(config: &RunConfig, assets: &[String]) -> Vec<[String; 2]> {
    if !config.postprocess.pairs.is_empty() {
        return config.postprocess.pairs.clone();
    }
    assets
        .iter()
        .enumerate()
        .flat_map(|(i, a)| assets[i + 1..].iter().map(move |b| [a.clone(), b.clone()]))
        .collect()
}

pub fn postprocess(ctx: &Context) -> Result<(), CliError> {
    let mut report = RunReport::load_or_default(&ctx.out);
    report.begin("postprocess", &ctx.config);
    let emb_path = ctx.path(EMBEDDINGS_FILE);
    require(&emb_path, "run `fuse` first")?;
    let frame = EmbeddingFrame::read_csv(open(&emb_path)?)?;
    let pairs = tracked_pairs(&ctx.config, &frame.assets());
    let series = pairs
        .par_iter()
        .map(|[a, b]| similarity_series(&frame, a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let sim_dir = ctx.path(SIMILARITY_DIR);
    reset_dir(&sim_dir)?;
    let mut files = write_similarity_series(&sim_dir, &series)?;

    let projection = pca_project(&frame, ctx.config.postprocess.pca_components)?;
    for w in &projection.pca.warnings {
        log::warn!("PCA: {w}");
    }
    let pca_path = ctx.path(PCA_FILE);
    write_pca(&pca_path, &projection)?;
    files.push(pca_path);

    report.postprocess = Some(PostprocessSection {
        pairs,
        pca_explained_variance: projection.pca.explained_variance.clone(),
        pca_explained_variance_ratio: projection.pca.explained_variance_ratio(),
        pca_warnings: projection.pca.warnings.clone(),
    });
    finish(ctx, &mut report, "postprocess", &files)
}

pub fn run_all(ctx: &Context) -> Result<(), CliError> {
    ingest(ctx)?;
    graphs(ctx)?;
    fuse_stage(ctx)?;
    postprocess(ctx)
}
