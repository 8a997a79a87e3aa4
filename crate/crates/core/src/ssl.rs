//! Contrastive pretext training.
//!
//! A batch holds `2N` views: slots `0..N` are the sampled images and slot
//! `i + N` is an augmented view of slot `i`. The loss for anchor `i` with
//! positive `j` is
//!
//! ```text
//! L(i, j) = -log( exp(f_i·f_j / τ) / Σ_{k≠i} exp(f_i·f_k / τ) )
//! ```
//!
//! and the batch loss is the mean over all `2N` ordered positive pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::autodiff::{CustomOp, Tape};
use crate::data::PixelImage;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::trace_projection;
use crate::optim::{sgd_step, OptimizerState, SgdParams};
use crate::rng::{self, VALIDATION_STREAM};
use crate::snapshot::ModelSnapshot;
use crate::stopping::{EarlyStopping, Verdict};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    /// Images per half batch (`N`); a batch holds `2N` views.
    pub batch_half: usize,
    pub temperature: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// L2-normalize features before the loss (cosine similarity).
    pub normalize: bool,
    pub execution: Execution,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            batch_half: 8,
            temperature: 0.1,
            lr: 0.01,
            weight_decay: 1e-5,
            momentum: 0.9,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            normalize: true,
            execution: Execution::default(),
        }
    }
}

impl SslConfig {
    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_half == 0 {
            return Err(Error::config("batch_half", "must be at least 1"));
        }
        check_temperature(self.temperature)?;
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        self.sgd().validate()
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config("temperature", format!("must be positive, got {tau}")));
    }
    Ok(())
}

/// `2N` views ordered so that `i` and `i + N` form a positive pair.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    views: Vec<Tensor>,
}

impl ContrastiveBatch {
    pub fn half(&self) -> usize {
        self.views.len() / 2
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn partner(&self, i: usize) -> usize {
        partner(i, self.half())
    }
}

#[inline]
fn partner(i: usize, half: usize) -> usize {
    if i < half {
        i + half
    } else {
        i - half
    }
}

/// Originals followed by one augmented view each. Draws one seed per image
/// from `rng`, so augmentation can fan out without changing the result.
pub fn build_pair_batch<R: Rng + ?Sized>(
    images: &[&PixelImage],
    augment_config: &AugmentConfig,
    rng: &mut R,
    execution: Execution,
) -> Result<ContrastiveBatch> {
    if images.is_empty() {
        return Err(Error::contract("pair batch needs at least one image"));
    }
    let seeds: Vec<u64> = images.iter().map(|_| rng.random()).collect();
    let originals: Vec<Tensor> = images.iter().map(|im| im.to_tensor()).collect();
    let augmented = execution.map(&originals, |i, img| {
        augment(img, augment_config, &mut ChaCha8Rng::seed_from_u64(seeds[i]))
    });
    let mut views = originals;
    views.extend(augmented);
    Ok(ContrastiveBatch { views })
}

fn feature_rows(features: &Tensor) -> Result<(usize, usize)> {
    if features.rank() != 2 {
        return Err(Error::Dimension {
            op: "ntxent",
            lhs: features.shape().to_vec(),
            rhs: vec![2],
        });
    }
    Ok((features.shape()[0], features.shape()[1]))
}

/// Scaled similarities of anchor `i` against every row.
fn similarity_row(f: &[f64], rows: usize, d: usize, i: usize, tau: f64) -> Vec<f64> {
    let fi = &f[i * d..(i + 1) * d];
    (0..rows)
        .map(|k| fi.iter().zip(&f[k * d..(k + 1) * d]).map(|(a, b)| a * b).sum::<f64>() / tau)
        .collect()
}

/// `log Σ_{k≠i} exp(s_k)` with max subtraction.
fn log_denominator(sims: &[f64], i: usize) -> f64 {
    let max = sims
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = sims
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &s)| (s - max).exp())
        .sum();
    max + sum.ln()
}

/// Loss of anchor `i` against positive `j`.
pub fn ntxent_pair_loss(features: &Tensor, i: usize, j: usize, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    let (rows, d) = feature_rows(features)?;
    if i == j {
        return Err(Error::contract("anchor and positive must differ"));
    }
    if i >= rows || j >= rows {
        return Err(Error::contract(format!("pair ({i}, {j}) outside {rows} rows")));
    }
    let sims = similarity_row(features.data(), rows, d, i, tau);
    Ok(log_denominator(&sims, i) - sims[j])
}

/// Mean of `L(i, partner(i))` over all `2N` anchors.
pub fn ntxent_batch_loss(features: &Tensor, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    let (rows, _) = feature_rows(features)?;
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::contract(format!("batch needs an even number of rows, got {rows}")));
    }
    let half = rows / 2;
    let mut total = 0.0;
    for i in 0..rows {
        total += ntxent_pair_loss(features, i, partner(i, half), tau)?;
    }
    Ok(total / rows as f64)
}

/// Gradient of [`ntxent_batch_loss`] w.r.t. the feature matrix, scaled by `upstream`.
fn ntxent_batch_grad(features: &Tensor, tau: f64, upstream: f64) -> Tensor {
    let (rows, d) = (features.shape()[0], features.shape()[1]);
    let half = rows / 2;
    let f = features.data();
    let mut g = vec![0.0; rows * d];
    let coef = upstream / rows as f64;
    for i in 0..rows {
        let j = partner(i, half);
        let sims = similarity_row(f, rows, d, i, tau);
        let lse = log_denominator(&sims, i);
        for k in (0..rows).filter(|&k| k != i) {
            let p = (sims[k] - lse).exp();
            let dl_ds = coef * (p - if k == j { 1.0 } else { 0.0 }) / tau;
            for t in 0..d {
                g[i * d + t] += dl_ds * f[k * d + t];
                g[k * d + t] += dl_ds * f[i * d + t];
            }
        }
    }
    Tensor::new(features.shape().to_vec(), g).expect("same shape")
}

/// Tape node for the batch loss; input is the `[2N, d]` feature matrix.
pub struct NtXent {
    pub tau: f64,
}

impl CustomOp for NtXent {
    fn name(&self) -> &'static str {
        "ntxent"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(ntxent_batch_loss(inputs[0], self.tau)?))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        vec![ntxent_batch_grad(inputs[0], self.tau, grad.item())]
    }
}

/// Per-view forward passes; returns the tapes, their feature vars and the stacked features.
fn trace_views(
    model: &ModelSnapshot,
    views: &[Tensor],
    config: &SslConfig,
) -> Result<(Vec<(Tape, crate::autodiff::Var)>, Tensor)> {
    let traced: Vec<Result<(Tape, crate::autodiff::Var)>> = config.execution.map(views, |_, view| {
        let mut tape = Tape::new();
        let mut f = trace_projection(&mut tape, model, view)?;
        if config.normalize {
            f = tape.l2_normalize(f);
        }
        Ok((tape, f))
    });
    let traced: Vec<(Tape, crate::autodiff::Var)> = traced.into_iter().collect::<Result<_>>()?;
    let d = traced[0].0.value(traced[0].1).len();
    let mut rows = Vec::with_capacity(views.len() * d);
    for (tape, f) in &traced {
        rows.extend_from_slice(tape.value(*f).data());
    }
    let features = Tensor::new(vec![views.len(), d], rows)?;
    Ok((traced, features))
}

/// Batch loss only.
pub fn contrastive_loss(model: &ModelSnapshot, views: &[Tensor], config: &SslConfig) -> Result<f64> {
    let (_, features) = trace_views(model, views, config)?;
    ntxent_batch_loss(&features, config.temperature)
}

/// Batch loss and its gradient for every model parameter, in snapshot order.
/// Per-view gradients are summed in view order.
pub fn contrastive_gradients(
    model: &ModelSnapshot,
    views: &[Tensor],
    config: &SslConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let (traced, features) = trace_views(model, views, config)?;
    let mut loss_tape = Tape::new();
    let fvar = loss_tape.param(0, features);
    let loss_var = loss_tape.custom(Box::new(NtXent { tau: config.temperature }), &[fvar])?;
    let loss = loss_tape.value(loss_var).item();
    let feature_grad = loss_tape.backward(loss_var)?.into_map().remove(&0).expect("feature grad");
    let d = feature_grad.shape()[1];

    let per_view = config.execution.map(&traced, |row, (tape, f)| {
        let seed = Tensor::vector(feature_grad.data()[row * d..(row + 1) * d].to_vec());
        tape.backward_from(*f, seed)
    });
    let mut grads: Vec<Tensor> = model.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    for g in per_view {
        let g = g?;
        for (id, acc) in grads.iter_mut().enumerate() {
            if let Some(t) = g.get(id) {
                acc.add_assign(t)?;
            }
        }
    }
    Ok((loss, grads))
}

/// A model together with its optimizer state.
#[derive(Clone, Debug)]
pub struct SslLearner {
    pub model: ModelSnapshot,
    pub optimizer: OptimizerState,
}

impl SslLearner {
    pub fn new(model: ModelSnapshot, config: &SslConfig) -> Self {
        let optimizer = OptimizerState::new(config.sgd(), model.tensors());
        Self { model, optimizer }
    }

    /// One pass over `images`. The shuffle and augmentation stream is keyed by
    /// `(config.seed, stream, epoch)`; returns the mean batch loss.
    pub fn train_epoch(
        &mut self,
        images: &[PixelImage],
        config: &SslConfig,
        augment_config: &AugmentConfig,
        stream: u64,
        epoch: u64,
    ) -> Result<f64> {
        let n = config.batch_half;
        if n > images.len() {
            return Err(Error::config(
                "batch_half",
                format!("N = {n} exceeds the {} available images", images.len()),
            ));
        }
        let mut rng = rng::stream(config.seed, stream, epoch);
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(n) {
            let picked: Vec<&PixelImage> = chunk.iter().map(|&i| &images[i]).collect();
            let batch = build_pair_batch(&picked, augment_config, &mut rng, config.execution)?;
            let (loss, grads) = contrastive_gradients(&self.model, batch.views(), config)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss {loss} at epoch {epoch}")));
            }
            let mut params: Vec<&mut Tensor> = self.model.tensors_mut().collect();
            sgd_step(&mut params, &grads, &mut self.optimizer)?;
            total += loss;
            batches += 1;
        }
        Ok(total / batches as f64)
    }
}

/// Sum of batch losses and batch count over a validation pool.
///
/// Batches are consecutive runs of `N` images in pool order (all images when
/// the pool is smaller than `N`), augmented from a fixed stream so that
/// repeated evaluations are comparable.
pub fn validation_loss_parts(
    model: &ModelSnapshot,
    images: &[PixelImage],
    config: &SslConfig,
    augment_config: &AugmentConfig,
) -> Result<(f64, usize)> {
    if images.is_empty() {
        return Err(Error::config("valid", "validation set is empty"));
    }
    let n = config.batch_half.min(images.len());
    let mut rng = rng::stream(config.seed, VALIDATION_STREAM, 0);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in images.chunks_exact(n) {
        let picked: Vec<&PixelImage> = chunk.iter().collect();
        let batch = build_pair_batch(&picked, augment_config, &mut rng, config.execution)?;
        total += contrastive_loss(model, batch.views(), config)?;
        batches += 1;
    }
    Ok((total, batches))
}

pub fn validation_loss(
    model: &ModelSnapshot,
    images: &[PixelImage],
    config: &SslConfig,
    augment_config: &AugmentConfig,
) -> Result<f64> {
    let (total, batches) = validation_loss_parts(model, images, config, augment_config)?;
    Ok(total / batches as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    #[serde(rename = "stopped_flag")]
    pub stopped: u8,
}

#[derive(Clone, Debug)]
pub struct SslOutcome {
    /// Snapshot with the lowest validation loss.
    pub best: ModelSnapshot,
    pub best_epoch: usize,
    /// Model after the last epoch that ran.
    pub last: ModelSnapshot,
    pub history: Vec<EpochRecord>,
}

/// Epoch loop with early stopping on the validation loss.
pub fn ssl_train(
    model: ModelSnapshot,
    train: &[PixelImage],
    valid: &[PixelImage],
    config: &SslConfig,
    augment_config: &AugmentConfig,
) -> Result<SslOutcome> {
    config.validate()?;
    augment_config.validate()?;
    if valid.is_empty() {
        return Err(Error::config("valid", "validation set is empty"));
    }
    let mut learner = SslLearner::new(model, config);
    let mut stopper = EarlyStopping::new(config.patience)?;
    let mut best = learner.model.clone();
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let train_loss = learner.train_epoch(train, config, augment_config, 0, (epoch - 1) as u64)?;
        let valid_loss = validation_loss(&learner.model, valid, config, augment_config)?;
        let verdict = stopper.observe(epoch, valid_loss)?;
        log::debug!("ssl epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} {verdict:?}");
        if verdict == Verdict::Improved {
            best = learner.model.clone();
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            stopped: (verdict == Verdict::Stop) as u8,
        });
        if verdict == Verdict::Stop {
            break;
        }
    }
    Ok(SslOutcome {
        best,
        best_epoch: stopper.best().map_or(0, |(e, _)| e),
        last: learner.model,
        history,
    })
}

/// One centralized epoch (stream 0) for `learner`.
pub fn ssl_train_epoch(
    learner: &mut SslLearner,
    images: &[PixelImage],
    config: &SslConfig,
    augment_config: &AugmentConfig,
    epoch: u64,
) -> Result<f64> {
    learner.train_epoch(images, config, augment_config, 0, epoch)
}

pub fn write_history_csv<W: std::io::Write>(records: &[EpochRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
