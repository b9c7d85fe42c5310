//! SGD training loop, outlier-exposure fine-tuning, distillation, and
//! checkpoint persistence.
//!
//! A run is fully determined by (model spec, config, datasets): model init,
//! batch order and every kernel are seeded and evaluated in a fixed order, so
//! re-running a config reproduces the checkpoint bitwise.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_batches, BatchPlan, DatasetRole, LabeledDataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::softmax_rows;
use crate::nn::{self, insert_params, ModelSpec, ParamNodes, Parameters};
use crate::soft_targets::{
    distillation_node, label_smoothing_node, one_hot_matrix, outlier_exposure_node, OEConfig,
};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SLOD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer and schedule settings for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 128,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Usage(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Usage(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Usage(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss used by [`train_model`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainLoss {
    Hard,
    LabelSmoothing { alpha: f64 },
}

/// Summary of the loss actually used, recorded in provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossDescriptor {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl LossDescriptor {
    fn hard() -> Self {
        LossDescriptor {
            kind: "hard".into(),
            alpha: None,
            lambda: None,
            temperature: None,
        }
    }
}

/// Where a checkpoint came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: TrainConfig,
    pub loss: LossDescriptor,
    pub datasets: Vec<String>,
    pub epochs_completed: usize,
    pub worker_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_hash: Option<String>,
}

/// Model parameters plus the full training provenance chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Parameters<f32>,
    pub provenance: Provenance,
}

/// Per-parameter velocity buffers for SGD with momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocities: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &Parameters<f32>) -> Self {
        OptimizerState {
            velocities: params.tensors().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// One SGD step: v <- momentum*v + grad + weight_decay*w; w <- w - lr*v.
pub fn sgd_step(
    params: &mut Parameters<f32>,
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    if grads.len() != params.len() || state.velocities.len() != params.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} parameter tensors, {} gradient buffers, {} velocity buffers",
                params.len(),
                grads.len(),
                state.velocities.len()
            ),
        ));
    }
    for ((tensor, grad), velocity) in params.tensors_mut().zip(grads).zip(&mut state.velocities) {
        if grad.len() != tensor.numel() || velocity.len() != tensor.numel() {
            return Err(Error::shape(
                "sgd_step",
                format!(
                    "parameter has {} elements, gradient {}, velocity {}",
                    tensor.numel(),
                    grad.len(),
                    velocity.len()
                ),
            ));
        }
        for ((w, &g), v) in tensor.data_mut().iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = momentum * *v + g + weight_decay * *w;
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Cosine decay: lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f32) -> f32 {
    debug_assert!(total_steps >= 1 && step <= total_steps);
    let t = step as f64 / total_steps as f64;
    (lr0 as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

/// A finished run: the checkpoint plus measurements the pipelines report on.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Per-step loss values in step order.
    pub loss_history: Vec<f32>,
    /// How many out-of-distribution batches the run consumed.
    pub ood_batches_drawn: u64,
}

impl TrainOutcome {
    /// Mean of the first and last `window` losses; the smoothed trend the
    /// reports quote.
    pub fn smoothed_loss_endpoints(&self, window: usize) -> Option<(f32, f32)> {
        if self.loss_history.is_empty() {
            return None;
        }
        let w = window.min(self.loss_history.len()).max(1);
        let head: f32 = self.loss_history[..w].iter().sum::<f32>() / w as f32;
        let tail: f32 =
            self.loss_history[self.loss_history.len() - w..].iter().sum::<f32>() / w as f32;
        Some((head, tail))
    }
}

/// Independent cycling order for the outlier batches during OE fine-tuning.
/// Reshuffles with its own epoch counter whenever the pool is exhausted.
struct OodCycler<'a> {
    ds: &'a LabeledDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl<'a> OodCycler<'a> {
    fn new(ds: &'a LabeledDataset, batch_size: usize, seed: u64) -> Self {
        OodCycler {
            ds,
            batch_size,
            seed,
            epoch: 0,
            queue: std::collections::VecDeque::new(),
        }
    }

    fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            let plan = BatchPlan {
                batch_size: self.batch_size,
                // offset the stream so the outlier order is independent of
                // the in-distribution order under the same seed
                seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
                shuffle: true,
                epoch: self.epoch,
            };
            self.queue = make_batches(self.ds, &plan)?.into();
            self.epoch += 1;
        }
        Ok(self.queue.pop_front().expect("nonempty dataset"))
    }
}

/// The shared epoch/batch loop. `build_loss` receives the graph, the
/// parameter nodes, the in-distribution log-probs node, the raw batch images
/// and the batch labels, and returns the scalar loss node.
fn run_sgd<F>(
    spec: &ModelSpec,
    params: &mut Parameters<f32>,
    config: &TrainConfig,
    lr0: f32,
    epochs: usize,
    id_train: &LabeledDataset,
    mut build_loss: F,
) -> Result<Vec<f32>>
where
    F: FnMut(&mut Graph<f32>, &ParamNodes, NodeId, &Tensor<f32>, &[usize]) -> Result<NodeId>,
{
    config.validate()?;
    if id_train.is_empty() {
        return Err(Error::Usage("empty training dataset".into()));
    }
    let batches_per_epoch = id_train.len().div_ceil(config.batch_size);
    let total_steps = (epochs * batches_per_epoch).max(1);
    let mut state = OptimizerState::new(params);
    let mut history = Vec::with_capacity(epochs * batches_per_epoch);
    let mut step = 0usize;
    for epoch in 0..epochs {
        let plan = BatchPlan {
            batch_size: config.batch_size,
            seed: config.seed,
            shuffle: true,
            epoch: epoch as u64,
        };
        for (batch_index, indices) in make_batches(id_train, &plan)?.into_iter().enumerate() {
            let lr = cosine_lr(step, total_steps, lr0);
            let images = id_train.gather_images(&indices);
            let labels = id_train.gather_labels(&indices)?;
            let mut graph = Graph::new();
            let nodes = insert_params(&mut graph, params, true)?;
            let batch = graph.constant(images.clone());
            let logits = nn::forward(&mut graph, &nodes, spec, batch)?;
            let log_probs = graph.log_softmax(logits)?;
            let loss = build_loss(&mut graph, &nodes, log_probs, &images, &labels)?;
            let loss_value = graph.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss_value} at epoch {epoch}, batch {batch_index}"
                )));
            }
            graph.backward(loss)?;
            let grads: Vec<Vec<f32>> = nodes
                .in_order()
                .iter()
                .map(|&id| graph.grad(id).expect("param grad").to_vec())
                .collect();
            sgd_step(params, &grads, &mut state, lr, config.momentum, config.weight_decay)?;
            history.push(loss_value);
            step += 1;
        }
    }
    Ok(history)
}

/// Train a fresh model with the hard or label-smoothing loss.
pub fn train_model(
    spec: &ModelSpec,
    config: &TrainConfig,
    loss: TrainLoss,
    id_train: &LabeledDataset,
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    let mut params = nn::init_model(spec, config.seed)?;
    let descriptor = match loss {
        TrainLoss::Hard => LossDescriptor::hard(),
        TrainLoss::LabelSmoothing { alpha } => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
            }
            LossDescriptor {
                kind: "label_smoothing".into(),
                alpha: Some(alpha),
                lambda: None,
                temperature: None,
            }
        }
    };
    let num_classes = spec.num_classes;
    let history = run_sgd(
        spec,
        &mut params,
        config,
        config.lr0,
        config.epochs,
        id_train,
        |graph, _nodes, log_probs, _images, labels| match loss {
            TrainLoss::Hard => {
                let targets = one_hot_matrix::<f32>(labels, num_classes)?;
                graph.soft_cross_entropy(log_probs, targets)
            }
            TrainLoss::LabelSmoothing { alpha } => {
                label_smoothing_node(graph, log_probs, labels, alpha)
            }
        },
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            spec: spec.clone(),
            params,
            provenance: Provenance {
                config: config.clone(),
                loss: descriptor,
                datasets: vec![id_train.name().to_string()],
                epochs_completed: config.epochs,
                worker_count: rayon::current_num_threads(),
                parent_hash: None,
            },
        },
        loss_history: history,
        ood_batches_drawn: 0,
    })
}

/// Continue training a checkpoint with the outlier-exposure loss: each step
/// pairs one in-distribution batch with one outlier batch (the outlier order
/// cycles independently). Runs at lr0/10 with a freshly initialized optimizer
/// and schedule, inheriting the rest of the parent's config.
pub fn finetune_oe(
    teacher: &Checkpoint,
    id_train: &LabeledDataset,
    ood_train: &LabeledDataset,
    oe: &OEConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    oe.validate()?;
    if ood_train.role() != DatasetRole::OutOfDistribution {
        return Err(Error::Usage(format!(
            "outlier exposure needs an out-of-distribution outlier set, {} is in-distribution",
            ood_train.name()
        )));
    }
    if ood_train.is_empty() {
        return Err(Error::Usage(
            "outlier exposure needs a nonempty outlier set".into(),
        ));
    }
    let spec = teacher.spec.clone();
    let config = teacher.provenance.config.clone();
    let mut params = teacher.params.clone();
    let parent_hash = checkpoint_hash(teacher)?;
    let mut cycler = OodCycler::new(ood_train, config.batch_size, config.seed);
    let mut ood_drawn = 0u64;
    let lambda = oe.lambda;
    let spec_for_loss = spec.clone();
    let history = run_sgd(
        &spec,
        &mut params,
        &config,
        config.lr0 / 10.0,
        epochs,
        id_train,
        |graph, nodes, log_probs_id, _images, labels| {
            let ood_node = if lambda > 0.0 {
                let indices = cycler.next_batch()?;
                ood_drawn += 1;
                let images = ood_train.gather_images(&indices);
                let batch = graph.constant(images);
                let logits = nn::forward(graph, nodes, &spec_for_loss, batch)?;
                Some(graph.log_softmax(logits)?)
            } else {
                None
            };
            outlier_exposure_node(graph, log_probs_id, labels, ood_node, lambda)
        },
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            spec,
            params,
            provenance: Provenance {
                config,
                loss: LossDescriptor {
                    kind: "outlier_exposure".into(),
                    alpha: None,
                    lambda: Some(lambda),
                    temperature: None,
                },
                datasets: vec![id_train.name().to_string(), ood_train.name().to_string()],
                epochs_completed: epochs,
                worker_count: rayon::current_num_threads(),
                parent_hash: Some(parent_hash),
            },
        },
        loss_history: history,
        ood_batches_drawn: ood_drawn,
    })
}

/// Train a freshly initialized student against a frozen teacher on
/// in-distribution data only. Teacher probabilities are computed per batch by
/// a forward pass of the frozen teacher on the exact training batch.
pub fn distill(
    teacher: &Checkpoint,
    id_train: &LabeledDataset,
    alpha: f64,
    temperature: f64,
    config: &TrainConfig,
    student_spec: Option<ModelSpec>,
) -> Result<TrainOutcome> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must be in [0,1], got {alpha}")));
    }
    if temperature <= 0.0 {
        return Err(Error::Usage(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let spec = student_spec.unwrap_or_else(|| teacher.spec.clone());
    if spec.num_classes != teacher.spec.num_classes {
        return Err(Error::Usage(format!(
            "student has {} classes but teacher has {}",
            spec.num_classes, teacher.spec.num_classes
        )));
    }
    spec.validate()?;
    config.validate()?;
    let parent_hash = checkpoint_hash(teacher)?;
    let mut params = nn::init_model(&spec, config.seed)?;
    let teacher_params = teacher.params.clone();
    let teacher_spec = teacher.spec.clone();
    let batch_size = config.batch_size;
    let history = run_sgd(
        &spec,
        &mut params,
        config,
        config.lr0,
        config.epochs,
        id_train,
        |graph, _nodes, log_probs_student, images, labels| {
            let teacher_logits =
                nn::eval_logits(&teacher_params, &teacher_spec, images, batch_size)?;
            let teacher_probs = softmax_rows(&teacher_logits)?;
            distillation_node(
                graph,
                log_probs_student,
                labels,
                &teacher_probs,
                alpha,
                temperature,
            )
        },
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            spec,
            params,
            provenance: Provenance {
                config: config.clone(),
                loss: LossDescriptor {
                    kind: "distill".into(),
                    alpha: Some(alpha),
                    lambda: None,
                    temperature: Some(temperature),
                },
                datasets: vec![id_train.name().to_string()],
                epochs_completed: config.epochs,
                worker_count: rayon::current_num_threads(),
                parent_hash: Some(parent_hash),
            },
        },
        loss_history: history,
        ood_batches_drawn: 0,
    })
}

/// Stable content hash of a checkpoint (sha256 of its serialized container).
pub fn checkpoint_hash(ckpt: &Checkpoint) -> Result<String> {
    let bytes = checkpoint_to_bytes(ckpt)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_spec: ModelSpec,
    provenance: Provenance,
    manifest: Vec<ManifestEntry>,
}

/// Serialize to the container format: magic `SLOD`, version u32 LE, header
/// length u64 LE, UTF-8 JSON header, then the parameter arrays as IEEE-754
/// f32 little-endian in manifest order.
pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(ckpt.params.len());
    let mut offset = 0u64;
    for (name, tensor) in ckpt.params.iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.numel() as u64,
        });
        offset += 4 * tensor.numel() as u64;
    }
    let header = Header {
        model_spec: ckpt.spec.clone(),
        provenance: ckpt.provenance.clone(),
        manifest,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + offset as usize);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in ckpt.params.tensors() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "checkpoint too short: {} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic: expected {:02x?}, got {:02x?}",
            CHECKPOINT_MAGIC,
            &bytes[..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.saturating_add(header_len);
    if bytes.len() < payload_start {
        return Err(Error::Format(format!(
            "checkpoint truncated inside header: header wants {header_len} bytes"
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];
    let expected: u64 = header.manifest.iter().map(|m| 4 * m.len).sum();
    if payload.len() as u64 != expected {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, manifest wants {expected}",
            payload.len()
        )));
    }
    let mut entries = Vec::with_capacity(header.manifest.len());
    for m in &header.manifest {
        let numel: usize = m.shape.iter().product();
        if numel as u64 != m.len {
            return Err(Error::Format(format!(
                "manifest entry {} shape {:?} disagrees with len {}",
                m.name, m.shape, m.len
            )));
        }
        let start = m.offset as usize;
        let end = start + 4 * numel;
        if end > payload.len() {
            return Err(Error::Format(format!(
                "manifest entry {} overruns the payload",
                m.name
            )));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((m.name.clone(), Tensor::new(&m.shape, data)?));
    }
    Ok(Checkpoint {
        spec: header.model_spec,
        params: Parameters::new(entries)?,
        provenance: header.provenance,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<std::path::Path>) -> Result<()> {
    let bytes = checkpoint_to_bytes(ckpt)?;
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::glyphs::{synth_glyphs, GlyphFamily};
    use crate::data::Normalization;

    #[test]
    fn sgd_hand_cases() {
        let mk_params = |w: f32| {
            Parameters::new(vec![("w".into(), Tensor::new(&[1], vec![w]).unwrap())]).unwrap()
        };

        // w=1.0, g=0.5, lr=0.1, momentum=0, wd=0 -> w'=0.95
        let mut params = mk_params(1.0);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &[vec![0.5]], &mut state, 0.1, 0.0, 0.0).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.95).abs() < 1e-7);

        // lr = 0 leaves parameters unchanged
        let mut params = mk_params(1.0);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &[vec![123.0]], &mut state, 0.0, 0.9, 0.0).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], 1.0);

        // momentum 0.9, two steps with g=1, lr=0.1, wd=0, w0=0:
        // v1=1, w1=-0.1; v2=1.9, w2=-0.29
        let mut params = mk_params(0.0);
        let mut state = OptimizerState::new(&params);
        sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.9, 0.0).unwrap();
        assert!((params.get("w").unwrap().data()[0] + 0.1).abs() < 1e-7);
        sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.9, 0.0).unwrap();
        assert!((params.get("w").unwrap().data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn sgd_rejects_shape_mismatch() {
        let mut params =
            Parameters::new(vec![("w".into(), Tensor::new(&[2], vec![0.0, 0.0]).unwrap())])
                .unwrap();
        let mut state = OptimizerState::new(&params);
        assert!(sgd_step(&mut params, &[vec![1.0]], &mut state, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1), 0.1);
        assert!(cosine_lr(100, 100, 0.1).abs() < 1e-9);
        assert!((cosine_lr(50, 100, 0.1) - 0.05).abs() < 1e-7);
    }

    fn tiny_dataset(n: usize, seed: u64) -> LabeledDataset {
        let raw = synth_glyphs(GlyphFamily::Digits, n, seed).unwrap();
        let norm = raw.statistics();
        raw.normalize(norm).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialized_checkpoint() {
        let spec = ModelSpec::default();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let ds = tiny_dataset(8, 3);
        let outcome = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        assert_eq!(
            outcome.checkpoint.params,
            nn::init_model(&spec, config.seed).unwrap()
        );
        assert!(outcome.loss_history.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let spec = ModelSpec::default();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let ds = tiny_dataset(24, 5);
        let a = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        let b = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(
            checkpoint_to_bytes(&a.checkpoint).unwrap(),
            checkpoint_to_bytes(&b.checkpoint).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let spec = ModelSpec::default();
        let ckpt = Checkpoint {
            spec: spec.clone(),
            params: nn::init_model(&spec, 9).unwrap(),
            provenance: Provenance {
                config: TrainConfig::default(),
                loss: LossDescriptor::hard(),
                datasets: vec!["digits-syn".into()],
                epochs_completed: 0,
                worker_count: 1,
                parent_hash: None,
            },
        };
        let bytes = checkpoint_to_bytes(&ckpt).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let spec = ModelSpec::default();
        let ckpt = Checkpoint {
            spec: spec.clone(),
            params: nn::init_model(&spec, 9).unwrap(),
            provenance: Provenance {
                config: TrainConfig::default(),
                loss: LossDescriptor::hard(),
                datasets: vec![],
                epochs_completed: 0,
                worker_count: 1,
                parent_hash: None,
            },
        };
        let mut bytes = checkpoint_to_bytes(&ckpt).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes).unwrap_err(),
            Error::Format(_)
        ));
        let bytes = checkpoint_to_bytes(&ckpt).unwrap();
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 5]).unwrap_err(),
            Error::Format(_)
        ));
    }

    #[test]
    fn checkpoint_header_is_plain_json() {
        let spec = ModelSpec::default();
        let ckpt = Checkpoint {
            spec: spec.clone(),
            params: nn::init_model(&spec, 2).unwrap(),
            provenance: Provenance {
                config: TrainConfig::default(),
                loss: LossDescriptor::hard(),
                datasets: vec![],
                epochs_completed: 0,
                worker_count: 1,
                parent_hash: None,
            },
        };
        let bytes = checkpoint_to_bytes(&ckpt).unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
        assert!(value.get("model_spec").is_some());
        assert!(value.get("provenance").is_some());
        assert!(value.get("manifest").unwrap().as_array().unwrap().len() == 8);
    }

    #[test]
    fn overfit_small_subset() {
        // 32 samples, 200 steps at batch 8 -> training accuracy reaches 100%
        let spec = ModelSpec::default();
        let ds = tiny_dataset(32, 11);
        let config = TrainConfig {
            epochs: 50, // 4 batches/epoch -> 200 steps
            batch_size: 8,
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 4,
        };
        let outcome = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        let logits =
            nn::eval_logits(&outcome.checkpoint.params, &spec, ds.images(), 32).unwrap();
        let labels = ds.labels().unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let row = &logits.data()[i * 10..(i + 1) * 10];
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                argmax == labels[i] as usize
            })
            .count();
        assert_eq!(correct, ds.len(), "failed to overfit 32 samples");
        let (head, tail) = outcome.smoothed_loss_endpoints(50).unwrap();
        assert!(tail < head);
    }

    #[test]
    fn finetune_oe_lambda_zero_matches_manual_continuation() {
        let spec = ModelSpec::default();
        let ds = tiny_dataset(32, 13);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let base = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();

        let ood_raw = synth_glyphs(GlyphFamily::Letters, 16, 1).unwrap();
        let ood = ood_raw
            .normalize(Normalization { mean: 0.5, std: 0.5 })
            .unwrap();
        let ft = finetune_oe(&base.checkpoint, &ds, &ood, &OEConfig { lambda: 0.0 }, 1).unwrap();
        assert_eq!(ft.ood_batches_drawn, 0);

        // independent control: hand-rolled continuation loop with the same
        // schedule, built from the public graph/nn primitives
        let mut params = base.checkpoint.params.clone();
        let mut state = OptimizerState::new(&params);
        let total_steps = ds.len().div_ceil(config.batch_size);
        let plan = BatchPlan {
            batch_size: config.batch_size,
            seed: config.seed,
            shuffle: true,
            epoch: 0,
        };
        for (step, indices) in make_batches(&ds, &plan).unwrap().into_iter().enumerate() {
            let lr = cosine_lr(step, total_steps, config.lr0 / 10.0);
            let mut graph = Graph::new();
            let nodes = insert_params(&mut graph, &params, true).unwrap();
            let batch = graph.constant(ds.gather_images(&indices));
            let logits = nn::forward(&mut graph, &nodes, &spec, batch).unwrap();
            let log_probs = graph.log_softmax(logits).unwrap();
            let labels = ds.gather_labels(&indices).unwrap();
            let targets = one_hot_matrix::<f32>(&labels, 10).unwrap();
            let loss = graph.soft_cross_entropy(log_probs, targets).unwrap();
            graph.backward(loss).unwrap();
            let grads: Vec<Vec<f32>> = nodes
                .in_order()
                .iter()
                .map(|&id| graph.grad(id).unwrap().to_vec())
                .collect();
            sgd_step(&mut params, &grads, &mut state, lr, config.momentum, config.weight_decay)
                .unwrap();
        }
        for (expected, actual) in params.tensors().zip(ft.checkpoint.params.tensors()) {
            for (&e, &a) in expected.data().iter().zip(actual.data()) {
                assert!((e - a).abs() < 1e-6, "{e} vs {a}");
            }
        }
    }

    #[test]
    fn finetune_oe_records_parent_and_validates_role() {
        let spec = ModelSpec::default();
        let ds = tiny_dataset(16, 17);
        let config = TrainConfig {
            epochs: 0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let base = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        let parent = checkpoint_hash(&base.checkpoint).unwrap();

        let ood = synth_glyphs(GlyphFamily::Letters, 16, 1)
            .unwrap()
            .normalize(Normalization { mean: 0.5, std: 0.5 })
            .unwrap();
        let ft = finetune_oe(&base.checkpoint, &ds, &ood, &OEConfig::default(), 1).unwrap();
        assert_eq!(ft.checkpoint.provenance.parent_hash.as_deref(), Some(parent.as_str()));
        assert!(ft.ood_batches_drawn > 0);

        // an in-distribution dataset is rejected as the outlier set
        let err = finetune_oe(&base.checkpoint, &ds, &ds, &OEConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn distill_alpha_zero_matches_hard_training() {
        let spec = ModelSpec::default();
        let ds = tiny_dataset(24, 19);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let teacher = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        let teacher_bytes = checkpoint_to_bytes(&teacher.checkpoint).unwrap();

        let student = distill(&teacher.checkpoint, &ds, 0.0, 1.0, &config, None).unwrap();
        let hard = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        for (a, b) in student
            .checkpoint
            .params
            .tensors()
            .zip(hard.checkpoint.params.tensors())
        {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(student.ood_batches_drawn, 0);

        // the teacher is untouched
        assert_eq!(checkpoint_to_bytes(&teacher.checkpoint).unwrap(), teacher_bytes);
    }

    #[test]
    fn distill_rejects_class_mismatch() {
        let spec = ModelSpec::default();
        let ds = tiny_dataset(8, 23);
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let teacher = train_model(&spec, &config, TrainLoss::Hard, &ds).unwrap();
        let student_spec = ModelSpec {
            num_classes: 7,
            ..spec
        };
        assert!(matches!(
            distill(&teacher.checkpoint, &ds, 0.5, 1.0, &config, Some(student_spec)).unwrap_err(),
            Error::Usage(_)
        ));
    }
}
