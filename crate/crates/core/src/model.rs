//! Convolutional encoder with an SSL projection head or a single-logit
//! classifier head.
//!
//! Each block is conv3×3 → ReLU → 2×2 average pool. After the last block
//! the feature map is globally averaged; the SSL head is a dense layer with
//! ReLU, the classifier head a single sigmoid unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::snapshot::{ModelSnapshot, NamedTensor, Role, HEAD_BIAS, HEAD_WEIGHT, PROJ_BIAS, PROJ_WEIGHT};
use crate::tensor::Tensor;

pub const PROJECTION_DIMS: [usize; 3] = [64, 128, 256];

const HEAD_STREAM: u64 = 0x4845_4144;

/// Standard deviation of the fresh classifier weights. Small, so that early
/// fine-tuning steps rather than the draw decide the head direction.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Subtracted from every input intensity before the first convolution.
pub const INPUT_CENTER: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub projection_dim: usize,
    /// Accept a projection width outside [`PROJECTION_DIMS`].
    pub allow_any_projection_dim: bool,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            in_channels: 3,
            channels: vec![8, 16, 32],
            projection_dim: 64,
            allow_any_projection_dim: false,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("channels", "need at least one block, all widths positive"));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels", "must be positive"));
        }
        let stride = 1usize << self.channels.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(stride) {
            return Err(Error::config(
                "image_size",
                format!("{} is not divisible by 2^{}", self.image_size, self.channels.len()),
            ));
        }
        if self.projection_dim == 0
            || (!self.allow_any_projection_dim && !PROJECTION_DIMS.contains(&self.projection_dim))
        {
            return Err(Error::config(
                "projection_dim",
                format!("{} not in {PROJECTION_DIMS:?}", self.projection_dim),
            ));
        }
        Ok(())
    }

    pub fn pooled_dim(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// Closed-form scalar parameter count of the SSL model.
    pub fn ssl_param_count(&self) -> usize {
        let mut c_in = self.in_channels;
        let mut total = 0;
        for &c in &self.channels {
            total += c * c_in * 9 + c;
            c_in = c;
        }
        total + c_in * self.projection_dim + self.projection_dim
    }
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

fn named(name: impl Into<String>, tensor: Tensor) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        tensor,
    }
}

pub fn conv_weight_name(block: usize) -> String {
    format!("conv{block}.weight")
}

pub fn conv_bias_name(block: usize) -> String {
    format!("conv{block}.bias")
}

/// He-initialized SSL model; biases start at zero.
pub fn build_encoder(config: &BackboneConfig) -> Result<ModelSnapshot> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Vec::new();
    let mut c_in = config.in_channels;
    for (b, &c_out) in config.channels.iter().enumerate() {
        params.push(named(conv_weight_name(b), he_normal(&[c_out, c_in, 3, 3], c_in * 9, &mut rng)));
        params.push(named(conv_bias_name(b), Tensor::zeros(&[c_out])));
        c_in = c_out;
    }
    params.push(named(PROJ_WEIGHT, he_normal(&[c_in, config.projection_dim], c_in, &mut rng)));
    params.push(named(PROJ_BIAS, Tensor::zeros(&[config.projection_dim])));
    ModelSnapshot::new(Role::Ssl, params)
}

/// Replaces the projection layer with a freshly initialized single-output
/// layer (weights `N(0, HEAD_INIT_STD²)`, bias zero).
pub fn swap_head(model: &ModelSnapshot, seed: u64) -> Result<ModelSnapshot> {
    expect_role(model, Role::Ssl)?;
    let mut params: Vec<NamedTensor> = model
        .params()
        .iter()
        .filter(|p| p.name != PROJ_WEIGHT && p.name != PROJ_BIAS)
        .cloned()
        .collect();
    let pooled = model.get(PROJ_WEIGHT).expect("ssl role").shape()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, HEAD_STREAM, 0));
    params.push(named(HEAD_WEIGHT, normal(&[pooled, 1], HEAD_INIT_STD, &mut rng)));
    params.push(named(HEAD_BIAS, Tensor::zeros(&[1])));
    ModelSnapshot::new(Role::Classifier, params)
}

fn expect_role(model: &ModelSnapshot, role: Role) -> Result<()> {
    if model.role() != role {
        return Err(Error::contract(format!(
            "expected a {role:?} model, got {:?}",
            model.role()
        )));
    }
    Ok(())
}

fn block_count(model: &ModelSnapshot) -> usize {
    (0..).take_while(|&b| model.get(&conv_weight_name(b)).is_some()).count()
}

/// Registers every parameter on the tape (id = position in the snapshot).
fn register(tape: &mut Tape, model: &ModelSnapshot) -> Vec<Var> {
    model
        .tensors()
        .enumerate()
        .map(|(id, t)| tape.param(id, t.clone()))
        .collect()
}

fn trace_backbone(tape: &mut Tape, model: &ModelSnapshot, vars: &[Var], image: &Tensor) -> Result<Var> {
    let blocks = block_count(model);
    if image.rank() != 3 {
        return Err(Error::Dimension {
            op: "encoder input",
            lhs: image.shape().to_vec(),
            rhs: vec![3],
        });
    }
    let stride = 1usize << blocks;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if h % stride != 0 || w % stride != 0 {
        return Err(Error::Dimension {
            op: "encoder input size",
            lhs: image.shape().to_vec(),
            rhs: vec![stride, stride],
        });
    }
    let centered = Tensor::new(image.shape().to_vec(), image.data().iter().map(|v| v - INPUT_CENTER).collect())?;
    let mut x = tape.leaf(centered);
    for b in 0..blocks {
        let c = tape.conv2d(x, vars[2 * b], vars[2 * b + 1])?;
        let r = tape.relu(c);
        x = tape.avg_pool2(r)?;
    }
    tape.global_avg_pool(x)
}

fn trace_dense(tape: &mut Tape, input: Var, weight: Var, bias: Var) -> Result<Var> {
    let n = tape.value(input).len();
    let row = tape.reshape(input, &[1, n])?;
    let prod = tape.matmul(row, weight)?;
    let out_dim = tape.value(prod).shape()[1];
    let flat = tape.reshape(prod, &[out_dim])?;
    tape.add(flat, bias)
}

/// Traces one image through an SSL model; returns the (unnormalized) representation.
pub fn trace_projection(tape: &mut Tape, model: &ModelSnapshot, image: &Tensor) -> Result<Var> {
    expect_role(model, Role::Ssl)?;
    let vars = register(tape, model);
    let pooled = trace_backbone(tape, model, &vars, image)?;
    let n = vars.len();
    let dense = trace_dense(tape, pooled, vars[n - 2], vars[n - 1])?;
    Ok(tape.relu(dense))
}

/// Traces one image through a classifier; returns the case probability, shape `[1]`.
pub fn trace_probability(tape: &mut Tape, model: &ModelSnapshot, image: &Tensor) -> Result<Var> {
    expect_role(model, Role::Classifier)?;
    let vars = register(tape, model);
    let pooled = trace_backbone(tape, model, &vars, image)?;
    let n = vars.len();
    let logit = trace_dense(tape, pooled, vars[n - 2], vars[n - 1])?;
    Ok(tape.sigmoid(logit))
}

/// Representation vectors for a batch of `[c, h, w]` images, one row per image.
pub fn forward_projection(model: &ModelSnapshot, batch: &[Tensor]) -> Result<Tensor> {
    expect_role(model, Role::Ssl)?;
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut rows = Vec::new();
    let mut dim = 0;
    for image in batch {
        let mut tape = Tape::new();
        let f = trace_projection(&mut tape, model, image)?;
        dim = tape.value(f).len();
        rows.extend_from_slice(tape.value(f).data());
    }
    Tensor::new(vec![batch.len(), dim], rows)
}

/// Globally pooled encoder features (the head input), one row per image.
pub fn forward_pooled(model: &ModelSnapshot, batch: &[Tensor]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut rows = Vec::new();
    let mut dim = 0;
    for image in batch {
        let mut tape = Tape::new();
        let vars = register(&mut tape, model);
        let f = trace_backbone(&mut tape, model, &vars, image)?;
        dim = tape.value(f).len();
        rows.extend_from_slice(tape.value(f).data());
    }
    Tensor::new(vec![batch.len(), dim], rows)
}

pub fn forward_classifier(model: &ModelSnapshot, batch: &[Tensor]) -> Result<Vec<f64>> {
    expect_role(model, Role::Classifier)?;
    batch
        .iter()
        .map(|image| {
            let mut tape = Tape::new();
            let p = trace_probability(&mut tape, model, image)?;
            Ok(tape.value(p).item())
        })
        .collect()
}
