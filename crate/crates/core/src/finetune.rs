//! Supervised fine-tuning of a classifier with class-weighted binary
//! cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape};
use crate::data::{class_weights, ClassWeights, Label, PixelImage};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{build_encoder, forward_classifier, swap_head, trace_probability, BackboneConfig};
use crate::optim::{sgd_step, OptimizerState, SgdParams};
use crate::rng;
use crate::snapshot::{ModelSnapshot, Role};
use crate::stopping::{EarlyStopping, Verdict};
use crate::tensor::Tensor;

pub const LOG_CLAMP: f64 = 1e-12;

const SHUFFLE_STREAM: u64 = 0x4654_554E;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 1e-6,
            // kept as published; 0.9 may have been intended
            momentum: 0.09,
            max_epochs: 50,
            batch_size: 4,
            patience: 5,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        self.sgd().validate()
    }
}

/// Where the classifier's encoder weights come from.
#[derive(Clone, Debug)]
pub enum Init {
    Random(BackboneConfig),
    Pretrained(ModelSnapshot),
}

impl Init {
    /// Classifier ready for training: the SSL head is swapped for a fresh
    /// sigmoid unit seeded by `seed`.
    pub fn classifier(&self, seed: u64) -> Result<ModelSnapshot> {
        match self {
            Init::Random(backbone) => swap_head(&build_encoder(backbone)?, seed),
            Init::Pretrained(snapshot) => swap_head(snapshot, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub sample_id: String,
    pub image: PixelImage,
    pub label: Label,
}

/// `-(1/B) Σ w_b [y_b log p_b + (1 - y_b) log(1 - p_b)]` with log arguments
/// clamped below at [`LOG_CLAMP`].
pub fn weighted_bce(probs: &[f64], targets: &[f64], weights: &ClassWeights) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::Dimension {
            op: "weighted_bce",
            lhs: vec![probs.len()],
            rhs: vec![targets.len()],
        });
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let w = weights.for_target(y);
            w * (y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln())
        })
        .sum();
    Ok(-total / probs.len() as f64)
}

/// [`weighted_bce`] as a tape operation on a `[B]` probability vector.
pub struct WeightedBce {
    pub targets: Vec<f64>,
    pub weights: ClassWeights,
}

impl CustomOp for WeightedBce {
    fn name(&self) -> &'static str {
        "weighted_bce"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(weighted_bce(inputs[0].data(), &self.targets, &self.weights)?))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let probs = inputs[0];
        let scale = grad.item() / probs.len() as f64;
        let data = probs
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&p, &y)| {
                let w = self.weights.for_target(y);
                let pos = if p > LOG_CLAMP { y / p } else { 0.0 };
                let neg = if 1.0 - p > LOG_CLAMP { (1.0 - y) / (1.0 - p) } else { 0.0 };
                -scale * w * (pos - neg)
            })
            .collect();
        vec![Tensor::new(probs.shape().to_vec(), data).expect("same shape")]
    }
}

/// Batch loss and per-parameter gradients, per-image gradients summed in batch order.
pub fn bce_gradients(
    model: &ModelSnapshot,
    images: &[Tensor],
    targets: &[f64],
    weights: &ClassWeights,
    execution: Execution,
) -> Result<(f64, Vec<Tensor>)> {
    let traced = execution.map(images, |_, image| {
        let mut tape = Tape::new();
        let p = trace_probability(&mut tape, model, image)?;
        Ok((tape, p))
    });
    let traced: Vec<(Tape, crate::autodiff::Var)> = traced.into_iter().collect::<Result<_>>()?;
    let probs = Tensor::vector(traced.iter().map(|(t, p)| t.value(*p).item()).collect());

    let mut loss_tape = Tape::new();
    let pvar = loss_tape.param(0, probs);
    let op = WeightedBce {
        targets: targets.to_vec(),
        weights: *weights,
    };
    let loss_var = loss_tape.custom(Box::new(op), &[pvar])?;
    let loss = loss_tape.value(loss_var).item();
    let prob_grad = loss_tape.backward(loss_var)?.into_map().remove(&0).expect("prob grad");

    let per_image = execution.map(&traced, |b, (tape, p)| tape.backward_from(*p, Tensor::vector(vec![prob_grad.data()[b]])));
    let mut grads: Vec<Tensor> = model.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    for g in per_image {
        let g = g?;
        for (id, acc) in grads.iter_mut().enumerate() {
            if let Some(t) = g.get(id) {
                acc.add_assign(t)?;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    #[serde(rename = "stopped_flag")]
    pub stopped: u8,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Classifier with the lowest validation loss.
    pub model: ModelSnapshot,
    pub best_epoch: usize,
    pub history: Vec<FinetuneRecord>,
    pub class_weights: ClassWeights,
    /// Weighted loss over the whole training split before the first update.
    pub initial_train_loss: f64,
    /// The same quantity for the returned model.
    pub final_train_loss: f64,
    /// Unlabeled samples dropped from the inputs.
    pub excluded: usize,
}

fn labeled_tensors(samples: &[LabeledImage]) -> (Vec<Tensor>, Vec<f64>, usize) {
    let mut images = Vec::new();
    let mut targets = Vec::new();
    let mut excluded = 0;
    for s in samples {
        match s.label.target() {
            Some(t) => {
                images.push(s.image.to_tensor());
                targets.push(t);
            }
            None => excluded += 1,
        }
    }
    (images, targets, excluded)
}

/// Mean weighted loss over a labeled set, evaluated in consecutive batches.
pub fn dataset_loss(
    model: &ModelSnapshot,
    images: &[Tensor],
    targets: &[f64],
    weights: &ClassWeights,
    batch_size: usize,
    execution: Execution,
) -> Result<f64> {
    let probs = predict_tensors(model, images, execution)?;
    let mut total = 0.0;
    let mut batches = 0;
    for (p, y) in probs.chunks(batch_size).zip(targets.chunks(batch_size)) {
        total += weighted_bce(p, y, weights)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Full fine-tune of every parameter with early stopping on the validation loss.
///
/// `initial` must be a classifier (see [`Init::classifier`]). Class weights
/// come from the training labels and stay fixed.
pub fn finetune(
    initial: ModelSnapshot,
    train: &[LabeledImage],
    valid: &[LabeledImage],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if initial.role() != Role::Classifier {
        return Err(Error::contract("finetune expects a classifier; apply the head swap first"));
    }
    let (train_x, train_y, excluded_train) = labeled_tensors(train);
    let (valid_x, valid_y, excluded_valid) = labeled_tensors(valid);
    let excluded = excluded_train + excluded_valid;
    if excluded > 0 {
        log::info!("finetune: excluded {excluded} unlabeled samples");
    }
    if train_x.is_empty() {
        return Err(Error::config("train", "no labeled training images"));
    }
    if valid_x.is_empty() {
        return Err(Error::config("valid", "no labeled validation images"));
    }
    let weights = class_weights(&train_y)?;
    let bs = config.batch_size;
    let exec = config.execution;
    let initial_train_loss = dataset_loss(&initial, &train_x, &train_y, &weights, bs, exec)?;

    let mut model = initial;
    let mut optimizer = OptimizerState::new(config.sgd(), model.tensors());
    let mut stopper = EarlyStopping::new(config.patience)?;
    let mut best = model.clone();
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let mut rng = rng::stream(config.seed, SHUFFLE_STREAM, epoch as u64 - 1);
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let images: Vec<Tensor> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = bce_gradients(&model, &images, &targets, &weights, exec)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("finetune loss {loss} at epoch {epoch}")));
            }
            let mut params: Vec<&mut Tensor> = model.tensors_mut().collect();
            sgd_step(&mut params, &grads, &mut optimizer)?;
            total += loss;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let valid_loss = dataset_loss(&model, &valid_x, &valid_y, &weights, bs, exec)?;
        let verdict = stopper.observe(epoch, valid_loss)?;
        log::debug!("finetune epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} {verdict:?}");
        if verdict == Verdict::Improved {
            best = model.clone();
        }
        history.push(FinetuneRecord {
            epoch,
            train_loss,
            valid_loss,
            stopped: (verdict == Verdict::Stop) as u8,
        });
        if verdict == Verdict::Stop {
            break;
        }
    }
    let final_train_loss = dataset_loss(&best, &train_x, &train_y, &weights, bs, exec)?;
    Ok(FinetuneOutcome {
        model: best,
        best_epoch: stopper.best().map_or(0, |(e, _)| e),
        history,
        class_weights: weights,
        initial_train_loss,
        final_train_loss,
        excluded,
    })
}

fn predict_tensors(model: &ModelSnapshot, images: &[Tensor], execution: Execution) -> Result<Vec<f64>> {
    let per_image = execution.map(images, |_, image| forward_classifier(model, std::slice::from_ref(image)));
    let mut out = Vec::with_capacity(images.len());
    for p in per_image {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub sample_id: String,
    pub label: Label,
    pub probability: f64,
}

/// Case probabilities for the labeled samples, input order.
pub fn predict(model: &ModelSnapshot, samples: &[LabeledImage], execution: Execution) -> Result<Vec<Prediction>> {
    if model.role() != Role::Classifier {
        return Err(Error::contract("predict expects a classifier"));
    }
    let labeled: Vec<&LabeledImage> = samples.iter().filter(|s| s.label != Label::Unlabeled).collect();
    let images: Vec<Tensor> = labeled.iter().map(|s| s.image.to_tensor()).collect();
    let probs = predict_tensors(model, &images, execution)?;
    Ok(labeled
        .into_iter()
        .zip(probs)
        .map(|(s, probability)| Prediction {
            sample_id: s.sample_id.clone(),
            label: s.label,
            probability,
        })
        .collect())
}

pub fn write_predictions_csv(predictions: &[Prediction], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in predictions {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
