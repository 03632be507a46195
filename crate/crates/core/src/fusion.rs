//! Multimodal autoencoder that fuses several per-graph PPMI views of each
//! node into one embedding.
//!
//! Each graph `l` has its own encoder `n -> ... -> h`; the `N` codes are
//! concatenated and compressed by a shared encoder to the embedding. The
//! shared decoder mirrors it back to `N * h`, the result is split into `N`
//! chunks and each chunk is decoded to a length-`n` reconstruction of its
//! graph's PPMI row. Training minimizes the mean over graphs of the
//! per-graph MSE.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{
    mse, mse_grad, Activation, AdamConfig, AdamState, Mlp, MlpCheckpoint, MlpGrads, MlpShape, Trace,
};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionArchitecture {
    pub graph_count: usize,
    pub input_dim: usize,
    /// Latent dims of each per-graph encoder after the input, e.g. `[25, 10]`.
    pub graph_encoder_dims: Vec<usize>,
    /// Latent dims of the shared encoder after the concatenation, e.g.
    /// `[30, 15]`; the last one is the embedding size.
    pub shared_encoder_dims: Vec<usize>,
}

impl FusionArchitecture {
    pub fn new(graph_count: usize, input_dim: usize) -> Self {
        FusionArchitecture {
            graph_count,
            input_dim,
            graph_encoder_dims: vec![25, 10],
            shared_encoder_dims: vec![30, 15],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph_count == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument(
                "fusion needs at least one graph and one node".into(),
            ));
        }
        if self.graph_encoder_dims.is_empty() || self.shared_encoder_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "encoder dims must not be empty".into(),
            ));
        }
        Ok(())
    }

    pub fn graph_code_dim(&self) -> usize {
        *self.graph_encoder_dims.last().unwrap()
    }

    pub fn embedding_dim(&self) -> usize {
        *self.shared_encoder_dims.last().unwrap()
    }

    pub fn graph_encoder(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.graph_encoder_dims.iter().copied())
            .collect()
    }

    pub fn shared_encoder(&self) -> Vec<usize> {
        std::iter::once(self.graph_count * self.graph_code_dim())
            .chain(self.shared_encoder_dims.iter().copied())
            .collect()
    }

    pub fn shared_decoder(&self) -> Vec<usize> {
        let mut d = self.shared_encoder();
        d.reverse();
        d
    }

    pub fn graph_decoder(&self) -> Vec<usize> {
        let mut d = self.graph_encoder();
        d.reverse();
        d
    }
}

fn relu_then(last: Activation, layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; layers];
    *acts.last_mut().unwrap() = last;
    acts
}

/// One node at one date: its PPMI row in each of the `N` graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub asset: usize,
    pub date: usize,
    pub rows: Vec<Array1<f64>>,
}

/// Per-graph input matrices (batch x n), one per graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBatch {
    pub views: Vec<Array2<f64>>,
}

impl FusionBatch {
    pub fn from_samples<'a, I>(samples: I, graph_count: usize, input_dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TrainingSample>,
    {
        let samples: Vec<&TrainingSample> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut views = vec![Array2::zeros((samples.len(), input_dim)); graph_count];
        for (b, sample) in samples.iter().enumerate() {
            if sample.rows.len() != graph_count {
                return Err(Error::Shape(format!(
                    "sample has {} graph rows, model expects {graph_count}",
                    sample.rows.len()
                )));
            }
            for (view, row) in views.iter_mut().zip(&sample.rows) {
                if row.len() != input_dim {
                    return Err(Error::Shape(format!(
                        "row of length {} for input dim {input_dim}",
                        row.len()
                    )));
                }
                view.row_mut(b).assign(row);
            }
        }
        Ok(FusionBatch { views })
    }

    pub fn len(&self) -> usize {
        self.views.first().map_or(0, |v| v.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    arch: FusionArchitecture,
    graph_encoders: Vec<Mlp>,
    shared_encoder: Mlp,
    shared_decoder: Mlp,
    graph_decoders: Vec<Mlp>,
}

struct FusionTrace {
    graph_encoders: Vec<Trace>,
    shared_encoder: Trace,
    shared_decoder: Trace,
    graph_decoders: Vec<Trace>,
}

/// Gradients in the same order as [`FusionModel::param_slices_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub parts: Vec<MlpGrads>,
}

impl FusionGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.parts.iter().flat_map(MlpGrads::slices).collect()
    }
}

impl FusionModel {
    pub fn init(arch: FusionArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ge = arch.graph_encoder();
        let se = arch.shared_encoder();
        let sd = arch.shared_decoder();
        let gd = arch.graph_decoder();
        let graph_encoders = (0..arch.graph_count)
            .map(|_| {
                Mlp::init(
                    &ge,
                    &vec![Activation::Relu; ge.len() - 1],
                    MlpShape::Encoder,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let shared_encoder = Mlp::init(
            &se,
            &relu_then(Activation::Identity, se.len() - 1),
            MlpShape::Encoder,
            &mut rng,
        )?;
        let shared_decoder = Mlp::init(
            &sd,
            &vec![Activation::Relu; sd.len() - 1],
            MlpShape::Decoder,
            &mut rng,
        )?;
        let graph_decoders = (0..arch.graph_count)
            .map(|_| {
                Mlp::init(
                    &gd,
                    &relu_then(Activation::Identity, gd.len() - 1),
                    MlpShape::Decoder,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FusionModel {
            arch,
            graph_encoders,
            shared_encoder,
            shared_decoder,
            graph_decoders,
        })
    }

    /// Assemble a model from explicit parts (checked against `arch`).
    pub fn from_parts(
        arch: FusionArchitecture,
        graph_encoders: Vec<Mlp>,
        shared_encoder: Mlp,
        shared_decoder: Mlp,
        graph_decoders: Vec<Mlp>,
    ) -> Result<Self> {
        arch.validate()?;
        let n = arch.graph_count;
        if graph_encoders.len() != n || graph_decoders.len() != n {
            return Err(Error::Shape(format!(
                "{} encoders / {} decoders for {n} graphs",
                graph_encoders.len(),
                graph_decoders.len()
            )));
        }
        let mismatch = |what: &str, got: Vec<usize>, want: Vec<usize>| {
            Error::Shape(format!("{what} dims {got:?}, architecture says {want:?}"))
        };
        for m in &graph_encoders {
            if m.dims() != arch.graph_encoder() {
                return Err(mismatch("graph encoder", m.dims(), arch.graph_encoder()));
            }
        }
        for m in &graph_decoders {
            if m.dims() != arch.graph_decoder() {
                return Err(mismatch("graph decoder", m.dims(), arch.graph_decoder()));
            }
        }
        if shared_encoder.dims() != arch.shared_encoder() {
            return Err(mismatch(
                "shared encoder",
                shared_encoder.dims(),
                arch.shared_encoder(),
            ));
        }
        if shared_decoder.dims() != arch.shared_decoder() {
            return Err(mismatch(
                "shared decoder",
                shared_decoder.dims(),
                arch.shared_decoder(),
            ));
        }
        Ok(FusionModel {
            arch,
            graph_encoders,
            shared_encoder,
            shared_decoder,
            graph_decoders,
        })
    }

    pub fn architecture(&self) -> &FusionArchitecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.mlps().map(Mlp::param_count).sum()
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        self.graph_encoders
            .iter()
            .chain(std::iter::once(&self.shared_encoder))
            .chain(std::iter::once(&self.shared_decoder))
            .chain(self.graph_decoders.iter())
    }

    pub fn param_lengths(&self) -> Vec<usize> {
        self.mlps().flat_map(Mlp::param_lengths).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.graph_encoders
            .iter_mut()
            .chain(std::iter::once(&mut self.shared_encoder))
            .chain(std::iter::once(&mut self.shared_decoder))
            .chain(self.graph_decoders.iter_mut())
            .flat_map(Mlp::param_slices_mut)
            .collect()
    }

    fn check_batch(&self, batch: &FusionBatch) -> Result<()> {
        if batch.views.len() != self.arch.graph_count {
            return Err(Error::Shape(format!(
                "batch has {} views, model expects {}",
                batch.views.len(),
                self.arch.graph_count
            )));
        }
        let rows = batch.len();
        for v in &batch.views {
            if v.nrows() != rows || v.ncols() != self.arch.input_dim {
                return Err(Error::Shape(format!(
                    "view {:?}, expected ({rows}, {})",
                    v.dim(),
                    self.arch.input_dim
                )));
            }
        }
        Ok(())
    }

    fn forward(&self, batch: &FusionBatch) -> Result<FusionTrace> {
        self.check_batch(batch)?;
        let graph_encoders = self
            .graph_encoders
            .iter()
            .zip(&batch.views)
            .map(|(enc, v)| enc.forward(v.view()))
            .collect::<Result<Vec<_>>>()?;
        let codes: Vec<ArrayView2<'_, f64>> =
            graph_encoders.iter().map(|t| t.output.view()).collect();
        let joined = concatenate(Axis(1), &codes).map_err(|e| Error::Shape(e.to_string()))?;
        let shared_encoder = self.shared_encoder.forward(joined.view())?;
        let shared_decoder = self.shared_decoder.forward(shared_encoder.output.view())?;
        let h = self.arch.graph_code_dim();
        let graph_decoders = self
            .graph_decoders
            .iter()
            .enumerate()
            .map(|(l, dec)| dec.forward(shared_decoder.output.slice(s![.., l * h..(l + 1) * h])))
            .collect::<Result<Vec<_>>>()?;
        Ok(FusionTrace {
            graph_encoders,
            shared_encoder,
            shared_decoder,
            graph_decoders,
        })
    }

    /// Embeddings for a batch, one row per sample.
    pub fn encode_batch(&self, batch: &FusionBatch) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let codes = self
            .graph_encoders
            .iter()
            .zip(&batch.views)
            .map(|(enc, v)| enc.predict(v.view()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
        let joined = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        self.shared_encoder.predict(joined.view())
    }

    pub fn encode(&self, sample: &TrainingSample) -> Result<Array1<f64>> {
        let batch =
            FusionBatch::from_samples([sample], self.arch.graph_count, self.arch.input_dim)?;
        Ok(self.encode_batch(&batch)?.row(0).to_owned())
    }

    /// Per-graph reconstructions for a batch of embeddings.
    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if z.ncols() != self.arch.embedding_dim() {
            return Err(Error::Shape(format!(
                "embedding width {} but model uses {}",
                z.ncols(),
                self.arch.embedding_dim()
            )));
        }
        let expanded = self.shared_decoder.predict(z)?;
        let h = self.arch.graph_code_dim();
        self.graph_decoders
            .iter()
            .enumerate()
            .map(|(l, dec)| dec.predict(expanded.slice(s![.., l * h..(l + 1) * h])))
            .collect()
    }

    pub fn decode(&self, z: &Array1<f64>) -> Result<Vec<Array1<f64>>> {
        let z = z.view().insert_axis(Axis(0));
        Ok(self
            .decode_batch(z)?
            .into_iter()
            .map(|m| m.row(0).to_owned())
            .collect())
    }

    pub fn reconstruct(&self, batch: &FusionBatch) -> Result<Vec<Array2<f64>>> {
        let trace = self.forward(batch)?;
        Ok(trace.graph_decoders.into_iter().map(|t| t.output).collect())
    }

    /// Mean over graphs of the per-graph MSE.
    pub fn reconstruction_loss(&self, batch: &FusionBatch) -> Result<f64> {
        let recon = self.reconstruct(batch)?;
        graph_mean_mse(&recon, &batch.views)
    }

    pub fn loss_and_grads(&self, batch: &FusionBatch) -> Result<(f64, FusionGrads)> {
        let trace = self.forward(batch)?;
        let n_graphs = self.arch.graph_count as f64;
        let mut loss = 0.0;
        let mut dec_grads = Vec::with_capacity(self.arch.graph_count);
        let mut chunk_grads = Vec::with_capacity(self.arch.graph_count);
        for (l, (dec, tr)) in self
            .graph_decoders
            .iter()
            .zip(&trace.graph_decoders)
            .enumerate()
        {
            let target = batch.views[l].view();
            loss += mse(tr.output.view(), target)?;
            let g = mse_grad(tr.output.view(), target)? / n_graphs;
            let (grads, input_grad) = dec.backward(tr, g.view())?;
            dec_grads.push(grads);
            chunk_grads.push(input_grad);
        }
        loss /= n_graphs;

        let views: Vec<_> = chunk_grads.iter().map(|g| g.view()).collect();
        let expanded_grad =
            concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let (sd_grads, z_grad) = self
            .shared_decoder
            .backward(&trace.shared_decoder, expanded_grad.view())?;
        let (se_grads, joined_grad) = self
            .shared_encoder
            .backward(&trace.shared_encoder, z_grad.view())?;
        let h = self.arch.graph_code_dim();
        let enc_grads = self
            .graph_encoders
            .iter()
            .zip(&trace.graph_encoders)
            .enumerate()
            .map(|(l, (enc, tr))| {
                enc.backward(tr, joined_grad.slice(s![.., l * h..(l + 1) * h]))
                    .map(|(g, _)| g)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut parts = enc_grads;
        parts.push(se_grads);
        parts.push(sd_grads);
        parts.extend(dec_grads);
        Ok((loss, FusionGrads { parts }))
    }

    pub fn to_checkpoint(&self) -> FusionCheckpoint {
        FusionCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.arch.clone(),
            graph_encoders: self.graph_encoders.iter().map(Mlp::to_checkpoint).collect(),
            shared_encoder: self.shared_encoder.to_checkpoint(),
            shared_decoder: self.shared_decoder.to_checkpoint(),
            graph_decoders: self.graph_decoders.iter().map(Mlp::to_checkpoint).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &FusionCheckpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format version {}",
                ckpt.format_version
            )));
        }
        let load = |list: &[MlpCheckpoint]| {
            list.iter()
                .map(Mlp::from_checkpoint)
                .collect::<Result<Vec<_>>>()
        };
        FusionModel::from_parts(
            ckpt.architecture.clone(),
            load(&ckpt.graph_encoders)?,
            Mlp::from_checkpoint(&ckpt.shared_encoder)?,
            Mlp::from_checkpoint(&ckpt.shared_decoder)?,
            load(&ckpt.graph_decoders)?,
        )
    }
}

fn graph_mean_mse(recon: &[Array2<f64>], targets: &[Array2<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (r, t) in recon.iter().zip(targets) {
        total += mse(r.view(), t.view())?;
    }
    Ok(total / recon.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionCheckpoint {
    pub format_version: u32,
    pub architecture: FusionArchitecture,
    pub graph_encoders: Vec<MlpCheckpoint>,
    pub shared_encoder: MlpCheckpoint,
    pub shared_decoder: MlpCheckpoint,
    pub graph_decoders: Vec<MlpCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub train_fraction: f64,
    /// Stop after this many epochs without a validation improvement of at
    /// least `min_delta`; `None` disables early stopping.
    pub patience: Option<usize>,
    pub min_delta: f64,
    pub split_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 500,
            adam: AdamConfig::default(),
            train_fraction: 0.7,
            patience: Some(20),
            min_delta: 1e-6,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

/// Loss history and outcome of one training run. Index 0 of each loss vector
/// is the loss before the first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: Option<f64>,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub split_seed: u64,
    pub options: TrainOptions,
    pub architecture: FusionArchitecture,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        *self.train_losses.last().unwrap()
    }
}

/// Shuffle with `split_seed` and cut into train/validation index sets.
pub fn split_indices(
    count: usize,
    train_fraction: f64,
    split_seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = ((count as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, count.saturating_sub(1).max(1));
    let validation = idx.split_off(n_train);
    (idx, validation)
}

/// Train with a shuffled train/validation split and patience-based early
/// stopping. The model ends at its best-validation parameters.
pub fn train(
    model: &mut FusionModel,
    samples: &[TrainingSample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} outside (0, 1)",
            opts.train_fraction
        )));
    }
    let (train_idx, val_idx) = split_indices(samples.len(), opts.train_fraction, opts.split_seed);
    let arch = model.architecture().clone();
    let batch = |idx: &[usize]| {
        FusionBatch::from_samples(
            idx.iter().map(|&i| &samples[i]),
            arch.graph_count,
            arch.input_dim,
        )
    };
    run_training(model, &batch(&train_idx)?, Some(&batch(&val_idx)?), opts)
}

/// Train on every sample with no validation set, for a fixed number of
/// epochs.
pub fn fit(
    model: &mut FusionModel,
    samples: &[TrainingSample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let arch = model.architecture().clone();
    let batch = FusionBatch::from_samples(samples, arch.graph_count, arch.input_dim)?;
    run_training(model, &batch, None, opts)
}

fn run_training(
    model: &mut FusionModel,
    train_batch: &FusionBatch,
    val_batch: Option<&FusionBatch>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let mut adam = AdamState::new(opts.adam, &model.param_lengths());
    let check = |loss: f64, what: &str, epoch: usize, history: &[f64]| -> Result<f64> {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite(format!(
                "{what} loss at epoch {epoch} (last finite losses: {:?})",
                &history[history.len().saturating_sub(3)..]
            )))
        }
    };

    let mut train_losses = vec![check(
        model.reconstruction_loss(train_batch)?,
        "train",
        0,
        &[],
    )?];
    let mut validation_losses = Vec::new();
    if let Some(vb) = val_batch {
        validation_losses.push(check(model.reconstruction_loss(vb)?, "validation", 0, &[])?);
    }

    let mut best: Option<(f64, usize, FusionModel)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut stop_epoch = 0;

    for epoch in 1..=opts.max_epochs {
        let (_, grads) = model.loss_and_grads(train_batch)?;
        let grads: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam.step(&mut model.param_slices_mut(), &grad_refs)?;
        stop_epoch = epoch;

        let tl = check(
            model.reconstruction_loss(train_batch)?,
            "train",
            epoch,
            &train_losses,
        )?;
        train_losses.push(tl);
        let Some(vb) = val_batch else { continue };
        let vl = check(
            model.reconstruction_loss(vb)?,
            "validation",
            epoch,
            &validation_losses,
        )?;
        validation_losses.push(vl);

        let improved = match &best {
            None => true,
            Some((b, _, _)) => vl < b - opts.min_delta,
        };
        if improved {
            best = Some((vl, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if opts.patience.is_some_and(|p| since_best >= p) {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    let (best_validation_loss, best_epoch) = match best {
        Some((loss, epoch, snapshot)) => {
            *model = snapshot;
            (Some(loss), epoch)
        }
        None => (None, stop_epoch),
    };
    Ok(TrainReport {
        train_losses,
        validation_losses,
        best_epoch,
        best_validation_loss,
        stop_epoch,
        stop_reason,
        train_samples: train_batch.len(),
        validation_samples: val_batch.map_or(0, FusionBatch::len),
        split_seed: opts.split_seed,
        options: opts.clone(),
        architecture: model.architecture().clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub asset: String,
    pub window_end: i64,
    pub z: Vec<f64>,
}

/// Fused embeddings keyed by (asset, window end).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFrame {
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingFrame {
    pub fn assets(&self) -> Vec<String> {
        let mut a: Vec<String> = self.rows.iter().map(|r| r.asset.clone()).collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn window_ends(&self) -> Vec<i64> {
        let mut d: Vec<i64> = self.rows.iter().map(|r| r.window_end).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn get(&self, asset: &str, window_end: i64) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r.asset == asset && r.window_end == window_end)
            .map(|r| r.z.as_slice())
    }

    /// CSV with header `asset,window_end,z0,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["asset".to_string(), "window_end".to_string()];
        header.extend((0..self.dim).map(|k| format!("z{k}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.asset.clone(), row.window_end.to_string()];
            rec.extend(row.z.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<embeddings>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let bad = |message: String| Error::Parse {
            path: "<embeddings>".into(),
            message,
        };
        if headers.len() < 3 || &headers[0] != "asset" || &headers[1] != "window_end" {
            return Err(bad("expected header `asset,window_end,z0,...`".into()));
        }
        let dim = headers.len() - 2;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let window_end = rec[1]
                .parse()
                .map_err(|_| bad(format!("bad window_end `{}`", &rec[1])))?;
            let z = rec
                .iter()
                .skip(2)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| bad(format!("bad value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(EmbeddingRow {
                asset: rec[0].to_string(),
                window_end,
                z,
            });
        }
        Ok(EmbeddingFrame { dim, rows })
    }
}

/// Encode every sample; `assets[i]` and `window_ends[d]` resolve the
/// sample's indices.
pub fn extract_embeddings(
    model: &FusionModel,
    samples: &[TrainingSample],
    assets: &[String],
    window_ends: &[i64],
) -> Result<EmbeddingFrame> {
    let dim = model.architecture().embedding_dim();
    if samples.is_empty() {
        return Ok(EmbeddingFrame {
            dim,
            rows: Vec::new(),
        });
    }
    let arch = model.architecture();
    let batch = FusionBatch::from_samples(samples, arch.graph_count, arch.input_dim)?;
    let z = model.encode_batch(&batch)?;
    let rows = samples
        .iter()
        .zip(z.rows())
        .map(|(s, z)| {
            let asset = assets.get(s.asset).ok_or_else(|| Error::Unknown {
                kind: "asset index",
                name: s.asset.to_string(),
            })?;
            let window_end = *window_ends.get(s.date).ok_or_else(|| Error::Unknown {
                kind: "date index",
                name: s.date.to_string(),
            })?;
            Ok(EmbeddingRow {
                asset: asset.clone(),
                window_end,
                z: z.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingFrame { dim, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::DenseLayer;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_arch() -> FusionArchitecture {
        FusionArchitecture {
            graph_count: 2,
            input_dim: 5,
            graph_encoder_dims: vec![4, 2],
            shared_encoder_dims: vec![4, 3],
        }
    }

    fn random_samples(count: usize, arch: &FusionArchitecture, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| TrainingSample {
                asset: i,
                date: 0,
                rows: (0..arch.graph_count)
                    .map(|_| Array1::from_shape_fn(arch.input_dim, |_| rng.random_range(0.0..2.0)))
                    .collect(),
            })
            .collect()
    }

    fn layer(weight: Array2<f64>, activation: Activation) -> DenseLayer {
        let out = weight.nrows();
        DenseLayer {
            weight,
            bias: Array1::zeros(out),
            activation,
        }
    }

    /// N=2, n=3, graph encoders 3 -> 2, shared encoder 4 -> 2, mirrored
    /// decoders, all weights hand-set.
    fn hand_model() -> FusionModel {
        let arch = FusionArchitecture {
            graph_count: 2,
            input_dim: 3,
            graph_encoder_dims: vec![2],
            shared_encoder_dims: vec![2],
        };
        let e1 = Mlp::from_layers(vec![layer(
            array![[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]],
            Activation::Relu,
        )])
        .unwrap();
        let e2 = Mlp::from_layers(vec![layer(
            array![[1.0, -1.0, 0.0], [0.5, 0.5, 0.5]],
            Activation::Relu,
        )])
        .unwrap();
        let se = Mlp::from_layers(vec![layer(
            array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]],
            Activation::Identity,
        )])
        .unwrap();
        let sd = Mlp::from_layers(vec![layer(
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]],
            Activation::Relu,
        )])
        .unwrap();
        let d1 = Mlp::from_layers(vec![layer(
            array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            Activation::Identity,
        )])
        .unwrap();
        let d2 = Mlp::from_layers(vec![layer(
            array![[2.0, 0.0], [0.0, 0.0], [0.0, 3.0]],
            Activation::Identity,
        )])
        .unwrap();
        FusionModel::from_parts(arch, vec![e1, e2], se, sd, vec![d1, d2]).unwrap()
    }

    #[test]
    fn hand_set_encode_and_decode() {
        let model = hand_model();
        let sample = TrainingSample {
            asset: 0,
            date: 0,
            rows: vec![array![1.0, 2.0, 3.0], array![4.0, 1.0, 1.0]],
        };
        // e1: (1+3, 4) = (4, 4); e2: relu(3, 3) = (3, 3)
        // concat (4, 4, 3, 3) -> z = (8, 0)
        let z = model.encode(&sample).unwrap();
        assert_eq!(z, array![8.0, 0.0]);
        // sd: relu(8, 0, 8, -8) = (8, 0, 8, 0)
        // d1((8, 0)) = (8, 0, 8); d2((8, 0)) = (16, 0, 0)
        let recon = model.decode(&z).unwrap();
        assert_eq!(recon, vec![array![8.0, 0.0, 8.0], array![16.0, 0.0, 0.0]]);
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let model = FusionModel::init(FusionArchitecture::new(3, 6), 1).unwrap();
        let sample = TrainingSample {
            asset: 0,
            date: 0,
            rows: vec![Array1::zeros(6); 3],
        };
        let z = model.encode(&sample).unwrap();
        assert_eq!(z.len(), 15);
        assert!(z.iter().all(|&v| v == 0.0));
        let recon = model.decode(&Array1::zeros(15)).unwrap();
        assert!(recon
            .iter()
            .all(|r| r.len() == 6 && r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn encode_decode_shape_contract() {
        let arch = FusionArchitecture::new(6, 10);
        let model = FusionModel::init(arch.clone(), 7).unwrap();
        let s = &random_samples(1, &arch, 3)[0];
        let recon = model.decode(&model.encode(s).unwrap()).unwrap();
        assert_eq!(recon.len(), 6);
        assert!(recon.iter().all(|r| r.len() == 10));
        assert!(model.decode(&Array1::zeros(4)).is_err());
        let bad = TrainingSample {
            rows: vec![Array1::zeros(10); 5],
            ..s.clone()
        };
        assert!(model.encode(&bad).is_err());
    }

    #[test]
    fn permuting_graphs_needs_matching_shared_weights() {
        let model = hand_model();
        let sample = TrainingSample {
            asset: 0,
            date: 0,
            rows: vec![array![1.0, 2.0, 3.0], array![4.0, 1.0, 1.0]],
        };
        let swapped_sample = TrainingSample {
            rows: vec![sample.rows[1].clone(), sample.rows[0].clone()],
            ..sample.clone()
        };
        let swap = |m: &FusionModel, permute_shared: bool| {
            let enc = vec![m.graph_encoders[1].clone(), m.graph_encoders[0].clone()];
            let mut w = m.shared_encoder.layers()[0].weight.clone();
            if permute_shared {
                let cols = [2, 3, 0, 1];
                w = Array2::from_shape_fn(w.dim(), |(i, j)| {
                    m.shared_encoder.layers()[0].weight[[i, cols[j]]]
                });
            }
            let se = Mlp::from_layers(vec![layer(w, Activation::Identity)]).unwrap();
            FusionModel::from_parts(
                m.arch.clone(),
                enc,
                se,
                m.shared_decoder.clone(),
                m.graph_decoders.clone(),
            )
            .unwrap()
        };
        let z = model.encode(&sample).unwrap();
        assert_eq!(swap(&model, true).encode(&swapped_sample).unwrap(), z);
        assert_ne!(swap(&model, false).encode(&swapped_sample).unwrap(), z);
    }

    #[test]
    fn loss_is_mean_of_graph_mses() {
        let arch = tiny_arch();
        let model = FusionModel::init(arch.clone(), 2).unwrap();
        let samples = random_samples(4, &arch, 9);
        let batch = FusionBatch::from_samples(&samples, 2, 5).unwrap();
        let recon = model.reconstruct(&batch).unwrap();
        let mut total = 0.0;
        for (r, t) in recon.iter().zip(&batch.views) {
            let mut sq = 0.0;
            for (a, b) in r.iter().zip(t.iter()) {
                sq += (a - b) * (a - b);
            }
            total += sq / r.len() as f64;
        }
        let loss = model.reconstruction_loss(&batch).unwrap();
        assert!((loss - total / 2.0).abs() < 1e-12);
        assert_eq!(
            graph_mean_mse(
                &[array![[2.0]], array![[-2.0]]],
                &[array![[0.0]], array![[0.0]]]
            )
            .unwrap(),
            4.0
        );
        assert_eq!(
            graph_mean_mse(
                &[array![[1.0, 1.0]], array![[2.0, 2.0]]],
                &[array![[0.0, 0.0]], array![[0.0, 0.0]]]
            )
            .unwrap(),
            2.5
        );
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let model = hand_model();
        let batch = FusionBatch {
            views: vec![array![[1.0, 2.0, 3.0]], array![[4.0, 1.0, 1.0]]],
        };
        let recon = model.reconstruct(&batch).unwrap();
        assert_eq!(graph_mean_mse(&recon, &recon).unwrap(), 0.0);
        assert!(model.reconstruction_loss(&batch).unwrap() > 0.0);
    }

    #[test]
    fn split_is_seeded_seventy_thirty() {
        let (a, b) = split_indices(100, 0.7, 4);
        assert_eq!((a.len(), b.len()), (70, 30));
        assert_eq!(split_indices(100, 0.7, 4), (a.clone(), b.clone()));
        assert_ne!(split_indices(100, 0.7, 5).0, a);
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let arch = FusionArchitecture::new(2, 6);
        let samples = random_samples(30, &arch, 5);
        let opts = TrainOptions {
            max_epochs: 60,
            split_seed: 11,
            ..TrainOptions::default()
        };
        let mut m1 = FusionModel::init(arch.clone(), 3).unwrap();
        let r1 = train(&mut m1, &samples, &opts).unwrap();
        assert!(r1.final_train_loss() < r1.train_losses[0]);
        assert!(r1.train_losses.iter().all(|l| l.is_finite()));
        assert!(r1.best_validation_loss.unwrap() <= r1.validation_losses[1]);
        assert!(r1.stop_epoch <= opts.max_epochs);
        assert_eq!((r1.train_samples, r1.validation_samples), (21, 9));

        let mut m2 = FusionModel::init(arch, 3).unwrap();
        let r2 = train(&mut m2, &samples, &opts).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn early_stopping_restores_best() {
        let arch = tiny_arch();
        let samples = random_samples(12, &arch, 8);
        let opts = TrainOptions {
            max_epochs: 3000,
            patience: Some(3),
            min_delta: 1e-3,
            adam: AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            ..TrainOptions::default()
        };
        let mut model = FusionModel::init(arch, 1).unwrap();
        let report = train(&mut model, &samples, &opts).unwrap();
        assert_eq!(report.stop_reason, StopReason::EarlyStopping);
        assert!(report.stop_epoch < 3000);
        let (_, val) = split_indices(12, 0.7, 0);
        let vb = FusionBatch::from_samples(val.iter().map(|&i| &samples[i]), 2, 5).unwrap();
        let restored = model.reconstruction_loss(&vb).unwrap();
        assert_eq!(Some(restored), report.best_validation_loss);
    }

    #[test]
    fn train_rejects_small_sets() {
        let arch = tiny_arch();
        let mut model = FusionModel::init(arch.clone(), 1).unwrap();
        assert!(train(
            &mut model,
            &random_samples(9, &arch, 1),
            &TrainOptions::default()
        )
        .is_err());
    }

    #[test]
    fn embeddings_are_extracted_per_sample() {
        let arch = FusionArchitecture::new(2, 4);
        let model = FusionModel::init(arch.clone(), 1).unwrap();
        let mut samples = random_samples(3, &arch, 2);
        samples[2] = TrainingSample {
            asset: 2,
            date: 1,
            rows: samples[0].rows.clone(),
        };
        let assets: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let frame = extract_embeddings(&model, &samples, &assets, &[10, 20]).unwrap();
        assert_eq!(frame.rows.len(), 3);
        assert_eq!(frame.dim, 15);
        assert_eq!(frame.rows[0].z, frame.rows[2].z);
        assert_eq!(frame.rows[2].asset, "C");
        assert_eq!(frame.rows[2].window_end, 20);
        assert_eq!(frame.get("C", 20).unwrap(), frame.rows[0].z.as_slice());

        let mut buf = Vec::new();
        frame.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("asset,window_end,z0,z1,"));
        assert!(text.lines().next().unwrap().ends_with(",z14"));
        assert_eq!(EmbeddingFrame::read_csv(buf.as_slice()).unwrap(), frame);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = FusionModel::init(tiny_arch(), 4).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let ckpt: FusionCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(FusionModel::from_checkpoint(&ckpt).unwrap(), model);
        let mut bad = ckpt;
        bad.format_version = 99;
        assert!(FusionModel::from_checkpoint(&bad).is_err());
    }

    proptest! {
        #[test]
        fn architecture_dims_chain(n_graphs in 1usize..=6, n in 3usize..=20) {
            let arch = FusionArchitecture::new(n_graphs, n);
            let ge = arch.graph_encoder();
            let se = arch.shared_encoder();
            let sd = arch.shared_decoder();
            let gd = arch.graph_decoder();
            prop_assert_eq!(ge[0], n);
            prop_assert_eq!(n_graphs * ge.last().unwrap(), se[0]);
            prop_assert_eq!(*se.last().unwrap(), arch.embedding_dim());
            prop_assert_eq!(sd[0], arch.embedding_dim());
            prop_assert_eq!(*sd.last().unwrap(), n_graphs * gd[0]);
            prop_assert_eq!(*gd.last().unwrap(), n);
            let model = FusionModel::init(arch, 0).unwrap();
            prop_assert_eq!(model.decode(&Array1::zeros(15)).unwrap().len(), n_graphs);
        }
    }
}
