//! The desk-scale CNN classifier and its parameter set.
//!
//! Pipeline: conv(C->w0)-relu-pool-conv(w0->w1)-relu-pool-flatten-fc(->fc)-relu-fc(->K).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Scalar, Tensor};

/// Architecture description; the parameter count is a pure function of this.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_side: usize,
    pub num_classes: usize,
    pub conv_widths: [usize; 2],
    pub fc_width: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_channels: 1,
            input_side: 28,
            num_classes: 10,
            conv_widths: [16, 32],
            fc_width: 128,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Usage(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.input_side < 4 || self.input_side % 4 != 0 {
            return Err(Error::Usage(format!(
                "input_side must be a positive multiple of 4 (two 2x2 pools), got {}",
                self.input_side
            )));
        }
        if self.input_channels == 0 || self.conv_widths.iter().any(|&w| w == 0) || self.fc_width == 0
        {
            return Err(Error::Usage("zero-width layer in model spec".into()));
        }
        Ok(())
    }

    /// Flattened feature dimension after the two conv/pool stages.
    pub fn flat_dim(&self) -> usize {
        let side = self.input_side / 4;
        self.conv_widths[1] * side * side
    }

    pub fn parameter_count(&self) -> usize {
        let [w0, w1] = self.conv_widths;
        (w0 * self.input_channels * 9 + w0)
            + (w1 * w0 * 9 + w1)
            + (self.flat_dim() * self.fc_width + self.fc_width)
            + (self.fc_width * self.num_classes + self.num_classes)
    }

    fn layer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [w0, w1] = self.conv_widths;
        vec![
            ("conv1.weight", vec![w0, self.input_channels, 3, 3]),
            ("conv1.bias", vec![w0]),
            ("conv2.weight", vec![w1, w0, 3, 3]),
            ("conv2.bias", vec![w1]),
            ("fc1.weight", vec![self.flat_dim(), self.fc_width]),
            ("fc1.bias", vec![self.fc_width]),
            ("fc2.weight", vec![self.fc_width, self.num_classes]),
            ("fc2.bias", vec![self.num_classes]),
        ]
    }
}

/// Ordered, named parameter tensors. Order is fixed by the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T: Scalar = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Parameters<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.clone()) {
                return Err(Error::Usage(format!("duplicate parameter name {name}")));
            }
        }
        Ok(Parameters { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<U>()))
                .collect(),
        }
    }
}

/// Kaiming-uniform (fan-in) initialization for weights, zeros for biases.
/// Deterministic in `seed`; draw order follows the architecture order.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Parameters<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, shape) in spec.layer_shapes() {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            // conv weight [F,C,3,3]: fan_in = C*9; fc weight [in,out]: fan_in = in.
            // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)): without normalization
            // layers the relu-gain bound runs too hot for the lr0=0.1 default.
            let fan_in = if shape.len() == 4 { shape[1] * 9 } else { shape[0] };
            let bound = 1.0 / (fan_in as f32).sqrt();
            Tensor::from_fn(&shape, |_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
        };
        entries.push((name.to_string(), tensor));
    }
    Parameters::new(entries)
}

/// Node ids of the model parameters inside a graph, in architecture order.
#[derive(Clone, Copy, Debug)]
pub struct ParamNodes {
    pub conv1_w: NodeId,
    pub conv1_b: NodeId,
    pub conv2_w: NodeId,
    pub conv2_b: NodeId,
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

impl ParamNodes {
    pub fn in_order(&self) -> [NodeId; 8] {
        [
            self.conv1_w,
            self.conv1_b,
            self.conv2_w,
            self.conv2_b,
            self.fc1_w,
            self.fc1_b,
            self.fc2_w,
            self.fc2_b,
        ]
    }
}

/// Insert the parameters into a graph as leaves.
pub fn insert_params<T: Scalar>(
    graph: &mut Graph<T>,
    params: &Parameters<T>,
    requires_grad: bool,
) -> Result<ParamNodes> {
    if params.len() != 8 {
        return Err(Error::Usage(format!(
            "expected 8 parameter tensors, got {}",
            params.len()
        )));
    }
    let ids: Vec<NodeId> = params
        .tensors()
        .map(|t| graph.leaf(t.clone(), requires_grad))
        .collect();
    Ok(ParamNodes {
        conv1_w: ids[0],
        conv1_b: ids[1],
        conv2_w: ids[2],
        conv2_b: ids[3],
        fc1_w: ids[4],
        fc1_b: ids[5],
        fc2_w: ids[6],
        fc2_b: ids[7],
    })
}

/// Forward pass from an NCHW batch node to NxK logits.
pub fn forward<T: Scalar>(
    graph: &mut Graph<T>,
    params: &ParamNodes,
    spec: &ModelSpec,
    batch: NodeId,
) -> Result<NodeId> {
    let v = graph.value(batch);
    if v.ndim() != 4
        || v.dim(1) != spec.input_channels
        || v.dim(2) != spec.input_side
        || v.dim(3) != spec.input_side
    {
        return Err(Error::shape(
            "nn::forward",
            format!(
                "batch {:?} does not match spec (C={}, side={})",
                v.shape(),
                spec.input_channels,
                spec.input_side
            ),
        ));
    }
    let c1 = graph.conv2d(batch, params.conv1_w)?;
    let c1 = graph.channel_bias(c1, params.conv1_b)?;
    let c1 = graph.relu(c1);
    let p1 = graph.max_pool2(c1)?;
    let c2 = graph.conv2d(p1, params.conv2_w)?;
    let c2 = graph.channel_bias(c2, params.conv2_b)?;
    let c2 = graph.relu(c2);
    let p2 = graph.max_pool2(c2)?;
    let flat = graph.flatten(p2)?;
    let h = graph.matmul(flat, params.fc1_w)?;
    let h = graph.row_bias(h, params.fc1_b)?;
    let h = graph.relu(h);
    let logits = graph.matmul(h, params.fc2_w)?;
    graph.row_bias(logits, params.fc2_b)
}

/// Gradient-free forward pass over a whole dataset tensor, chunked to bound
/// the working set. Returns NxK logits.
pub fn eval_logits(
    params: &Parameters<f32>,
    spec: &ModelSpec,
    images: &Tensor<f32>,
    chunk: usize,
) -> Result<Tensor<f32>> {
    let n = images.dim(0);
    let k = spec.num_classes;
    let row = images.numel() / n;
    let mut out = Vec::with_capacity(n * k);
    let mut start = 0;
    while start < n {
        let count = chunk.min(n - start);
        let slice = images.data()[start * row..(start + count) * row].to_vec();
        let batch = Tensor::new(
            &[count, spec.input_channels, spec.input_side, spec.input_side],
            slice,
        )?;
        let mut graph = Graph::new();
        let nodes = insert_params(&mut graph, params, false)?;
        let b = graph.constant(batch);
        let logits = forward(&mut graph, &nodes, spec, b)?;
        out.extend_from_slice(graph.value(logits).data());
        start += count;
    }
    Tensor::new(&[n, k], out)
}
