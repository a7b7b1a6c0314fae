//! Layer graph: the compiled form of a network.
//!
//! Nodes are appended in topological order by [`GraphBuilder`], which infers
//! every output shape as it goes. The same graph drives cost accounting
//! ([`crate::analysis`]) and execution ([`LayerGraph::execute`]).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, Activation, BatchNormParams};
use crate::tensor::{Dims, Tensor};

pub type NodeId = usize;

/// Which sub-network a node belongs to, for per-module cost breakdowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Backbone,
    Body,
    Head,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Input,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    ConvTranspose2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    Activation {
        function: Activation,
    },
    Add,
    Concat,
    UpsampleNearest {
        factor: usize,
    },
    GlobalAvgPool,
    /// `inputs[0]` scaled per channel by the `(n, c, 1, 1)` gate in `inputs[1]`.
    ScaleChannels,
    Dense {
        out_features: usize,
        bias: bool,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm => "batch_norm",
            Op::Activation { .. } => "activation",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::UpsampleNearest { .. } => "upsample_nearest",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::ScaleChannels => "scale_channels",
            Op::Dense { .. } => "dense",
        }
    }

    /// Shapes of the learned tensors: (weight dims, bias length).
    pub fn param_shapes(&self, inputs: &[Dims]) -> Option<(Dims, usize)> {
        match *self {
            Op::Conv2d {
                out_channels,
                kernel,
                groups,
                bias,
                ..
            } => Some((
                [out_channels, inputs[0][1] / groups, kernel, kernel],
                if bias { out_channels } else { 0 },
            )),
            Op::ConvTranspose2d {
                out_channels,
                kernel,
                ..
            } => Some(([inputs[0][1], out_channels, kernel, kernel], 0)),
            Op::Dense { out_features, bias } => Some((
                [out_features, inputs[0][1], 1, 1],
                if bias { out_features } else { 0 },
            )),
            _ => None,
        }
    }
}

/// Output shape of `op` applied to `inputs`, or a description of the mismatch.
pub fn infer_shape(op: &Op, inputs: &[Dims]) -> std::result::Result<Dims, String> {
    let arity = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(format!("expected {n} inputs, got {}", inputs.len()))
        }
    };
    match *op {
        Op::Input => Err("input nodes have no producers".into()),
        Op::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            ..
        } => {
            arity(1)?;
            let [n, c, h, w] = inputs[0];
            if groups == 0 || c % groups != 0 || out_channels % groups != 0 {
                return Err(format!(
                    "groups {groups} must divide in {c} and out {out_channels} channels"
                ));
            }
            let oh = kernels::conv_output_len(h, kernel, stride, padding);
            let ow = kernels::conv_output_len(w, kernel, stride, padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok([n, out_channels, oh, ow]),
                _ => Err(format!("kernel {kernel}/stride {stride} does not fit {h}x{w}")),
            }
        }
        Op::ConvTranspose2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            arity(1)?;
            let [n, _, h, w] = inputs[0];
            let oh = kernels::conv_transposed_output_len(h, kernel, stride, padding);
            let ow = kernels::conv_transposed_output_len(w, kernel, stride, padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok([n, out_channels, oh, ow]),
                _ => Err(format!("padding {padding} too large for {h}x{w}")),
            }
        }
        Op::BatchNorm | Op::Activation { .. } => {
            arity(1)?;
            Ok(inputs[0])
        }
        Op::Add => {
            if inputs.len() < 2 {
                return Err("add needs at least 2 inputs".into());
            }
            if let Some(bad) = inputs.iter().find(|d| **d != inputs[0]) {
                return Err(format!("add operands {:?} and {:?} differ", inputs[0], bad));
            }
            Ok(inputs[0])
        }
        Op::Concat => {
            let first = *inputs.first().ok_or("concat needs inputs")?;
            let mut c = 0;
            for d in inputs {
                if (d[0], d[2], d[3]) != (first[0], first[2], first[3]) {
                    return Err(format!("concat operands {first:?} and {d:?} differ spatially"));
                }
                c += d[1];
            }
            Ok([first[0], c, first[2], first[3]])
        }
        Op::UpsampleNearest { factor } => {
            arity(1)?;
            if factor == 0 {
                return Err("upsample factor 0".into());
            }
            let [n, c, h, w] = inputs[0];
            Ok([n, c, h * factor, w * factor])
        }
        Op::GlobalAvgPool => {
            arity(1)?;
            Ok([inputs[0][0], inputs[0][1], 1, 1])
        }
        Op::ScaleChannels => {
            arity(2)?;
            let [n, c, _, _] = inputs[0];
            if inputs[1] != [n, c, 1, 1] {
                return Err(format!("gate {:?} does not match {:?}", inputs[1], inputs[0]));
            }
            Ok(inputs[0])
        }
        Op::Dense { out_features, .. } => {
            arity(1)?;
            let [n, _, h, w] = inputs[0];
            if (h, w) != (1, 1) {
                return Err(format!("dense needs (n, c, 1, 1) input, got {:?}", inputs[0]));
            }
            Ok([n, out_features, 1, 1])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub module: Module,
    pub inputs: Vec<NodeId>,
    pub input_shapes: Vec<Dims>,
    pub output_shape: Dims,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub name: String,
    pub phi: i32,
    pub input_resolution: usize,
    pub nodes: Vec<Node>,
    pub inputs: Vec<NodeId>,
    /// Named graph outputs, in order.
    pub outputs: Vec<(String, NodeId)>,
}

impl LayerGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&Node> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| &self.nodes[id])
    }

    pub fn output_shapes(&self) -> Vec<Dims> {
        self.outputs
            .iter()
            .map(|&(_, id)| self.nodes[id].output_shape)
            .collect()
    }

    /// Re-checks every edge: producers precede consumers, recorded input
    /// shapes equal producer outputs, and recorded outputs equal inference.
    pub fn validate(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            let bad = |reason: String| Error::Graph {
                node: node.name.clone(),
                reason,
            };
            if node.op == Op::Input {
                continue;
            }
            if node.inputs.len() != node.input_shapes.len() {
                return Err(bad("input and input-shape counts differ".into()));
            }
            for (&src, &shape) in node.inputs.iter().zip(&node.input_shapes) {
                if src >= id {
                    return Err(bad(format!("edge from node {src} is not topological")));
                }
                let produced = self.nodes[src].output_shape;
                if produced != shape {
                    return Err(bad(format!(
                        "edge from `{}` produces {produced:?}, consumer expects {shape:?}",
                        self.nodes[src].name
                    )));
                }
            }
            let inferred = infer_shape(&node.op, &node.input_shapes).map_err(bad)?;
            if inferred != node.output_shape {
                return Err(bad(format!(
                    "recorded output {:?} but inference gives {inferred:?}",
                    node.output_shape
                )));
            }
        }
        Ok(())
    }

    /// Runs the graph on `inputs` (one tensor per graph input, in order) and
    /// returns the named outputs in order.
    pub fn execute(&self, inputs: &[Tensor], weights: &WeightStore) -> Result<Vec<Tensor>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::config(format!(
                "graph `{}` takes {} inputs, got {}",
                self.name,
                self.inputs.len(),
                inputs.len()
            )));
        }
        let mut remaining_uses = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                remaining_uses[i] += 1;
            }
        }
        for &(_, id) in &self.outputs {
            remaining_uses[id] += 1;
        }

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (&id, t) in self.inputs.iter().zip(inputs) {
            let node = &self.nodes[id];
            if t.dims() != node.output_shape {
                return Err(Error::Shape {
                    edge: format!("input `{}`", node.name),
                    expected: node.output_shape,
                    actual: t.dims(),
                });
            }
            values[id] = Some(t.clone());
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.op == Op::Input {
                continue;
            }
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().expect("producer evaluated before consumer"))
                .collect();
            for (arg, (&src, &expected)) in args.iter().zip(node.inputs.iter().zip(&node.input_shapes)) {
                if arg.dims() != expected {
                    return Err(Error::Shape {
                        edge: format!("{} -> {}", self.nodes[src].name, node.name),
                        expected,
                        actual: arg.dims(),
                    });
                }
            }
            let out = eval_node(node, &args, weights)?;
            drop(args);
            for &i in &node.inputs {
                remaining_uses[i] -= 1;
                if remaining_uses[i] == 0 {
                    values[i] = None;
                }
            }
            values[id] = Some(out);
        }

        Ok(self
            .outputs
            .iter()
            .map(|&(_, id)| values[id].clone().expect("outputs are retained"))
            .collect())
    }
}

fn eval_node(node: &Node, args: &[&Tensor], weights: &WeightStore) -> Result<Tensor> {
    match node.op {
        Op::Input => unreachable!("inputs are seeded before evaluation"),
        Op::Conv2d {
            stride,
            padding,
            groups,
            ..
        } => {
            let (w, b) = weights.layer_params(node);
            kernels::conv2d(args[0], &w, b.as_deref(), stride, padding, groups)
        }
        Op::ConvTranspose2d { stride, padding, .. } => {
            let (w, _) = weights.layer_params(node);
            kernels::conv2d_transposed(args[0], &w, stride, padding)
        }
        Op::Dense { .. } => {
            let (w, b) = weights.layer_params(node);
            kernels::dense(args[0], &w, b.as_deref())
        }
        Op::BatchNorm => {
            kernels::batchnorm_inference(args[0], &weights.batchnorm(&node.name, node.output_shape[1]))
        }
        Op::Activation { function } => Ok(kernels::activation(args[0], function)),
        Op::Add => {
            let mut acc = args[0].clone();
            for a in &args[1..] {
                acc = kernels::elementwise_add(&acc, a)?;
            }
            Ok(acc)
        }
        Op::Concat => kernels::concat_channels(args),
        Op::UpsampleNearest { factor } => kernels::upsample_nearest(args[0], factor),
        Op::GlobalAvgPool => Ok(kernels::global_avg_pool(args[0])),
        Op::ScaleChannels => kernels::scale_channels(args[0], args[1]),
    }
}

/// Source of layer parameters during execution.
///
/// Parameters are derived from the layer *name*, so a sub-network run on its
/// own sees the same weights as when it is embedded in the full model.
#[derive(Clone, Debug)]
pub struct WeightStore {
    init: WeightInit,
    overrides: HashMap<String, (Tensor, Option<Vec<f32>>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// Uniform in `[-0.05, 0.05]` for weights and biases; identity batchnorm.
    Seeded(u64),
    /// Every weight is `weight`, every bias `bias`; batchnorm is identity
    /// except for a shift of `bn_beta`.
    Constant { weight: f32, bias: f32, bn_beta: f32 },
}

pub const INIT_RANGE: f32 = 0.05;
const BN_EPSILON: f32 = 1e-5;

impl WeightStore {
    pub fn seeded(seed: u64) -> Self {
        Self::new(WeightInit::Seeded(seed))
    }

    pub fn constant(weight: f32, bias: f32, bn_beta: f32) -> Self {
        Self::new(WeightInit::Constant {
            weight,
            bias,
            bn_beta,
        })
    }

    pub fn new(init: WeightInit) -> Self {
        Self {
            init,
            overrides: HashMap::new(),
        }
    }

    /// Pins explicit parameters for the layer called `name`.
    pub fn set(&mut self, name: impl Into<String>, weight: Tensor, bias: Option<Vec<f32>>) {
        self.overrides.insert(name.into(), (weight, bias));
    }

    fn layer_params(&self, node: &Node) -> (Tensor, Option<Vec<f32>>) {
        if let Some((w, b)) = self.overrides.get(&node.name) {
            return (w.clone(), b.clone());
        }
        let (dims, bias_len) = node
            .op
            .param_shapes(&node.input_shapes)
            .expect("parametric op");
        let bias_len = (bias_len > 0).then_some(bias_len);
        match self.init {
            WeightInit::Seeded(seed) => {
                let mut rng = layer_rng(seed, &node.name);
                let w = Tensor::random_uniform(dims, &mut rng, -INIT_RANGE, INIT_RANGE);
                let b = bias_len.map(|n| {
                    (0..n)
                        .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
                        .collect()
                });
                (w, b)
            }
            WeightInit::Constant { weight, bias, .. } => {
                (Tensor::filled(dims, weight), bias_len.map(|n| vec![bias; n]))
            }
        }
    }

    fn batchnorm(&self, _name: &str, channels: usize) -> BatchNormParams {
        let mut p = BatchNormParams::identity(channels);
        p.epsilon = BN_EPSILON;
        if let WeightInit::Constant { bn_beta, .. } = self.init {
            p.beta = vec![bn_beta; channels];
        }
        p
    }
}

fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the layer name keeps per-layer streams independent of
    // construction order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Appends nodes with shape inference. Layer names must be unique.
pub struct GraphBuilder {
    graph: LayerGraph,
    module: Module,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, phi: i32, input_resolution: usize) -> Self {
        Self {
            graph: LayerGraph {
                name: name.into(),
                phi,
                input_resolution,
                nodes: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
            module: Module::Backbone,
        }
    }

    pub fn set_module(&mut self, module: Module) {
        self.module = module;
    }

    pub fn shape(&self, id: NodeId) -> Dims {
        self.graph.nodes[id].output_shape
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.shape(id)[1]
    }

    pub fn input(&mut self, name: impl Into<String>, dims: Dims) -> NodeId {
        let id = self.graph.nodes.len();
        self.graph.nodes.push(Node {
            name: name.into(),
            op: Op::Input,
            module: self.module,
            inputs: Vec::new(),
            input_shapes: Vec::new(),
            output_shape: dims,
        });
        self.graph.inputs.push(id);
        id
    }

    pub fn push(&mut self, name: impl Into<String>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        let input_shapes: Vec<Dims> = inputs.iter().map(|&i| self.shape(i)).collect();
        let output_shape = infer_shape(&op, &input_shapes).map_err(|reason| Error::Graph {
            node: name.clone(),
            reason,
        })?;
        let id = self.graph.nodes.len();
        self.graph.nodes.push(Node {
            name,
            op,
            module: self.module,
            inputs: inputs.to_vec(),
            input_shapes,
            output_shape,
        });
        Ok(id)
    }

    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<NodeId> {
        self.push(
            name,
            Op::Conv2d {
                out_channels,
                kernel,
                stride,
                padding: kernel / 2,
                groups,
                bias,
            },
            &[x],
        )
    }

    /// Convolution without bias, batchnorm, then an optional activation.
    pub fn conv_bn(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: Option<Activation>,
    ) -> Result<NodeId> {
        let c = self.conv(&format!("{name}.conv"), x, out_channels, kernel, stride, groups, false)?;
        let b = self.push(format!("{name}.bn"), Op::BatchNorm, &[c])?;
        match act {
            Some(a) => self.activation(&format!("{name}.act"), b, a),
            None => Ok(b),
        }
    }

    pub fn activation(&mut self, name: &str, x: NodeId, function: Activation) -> Result<NodeId> {
        self.push(name, Op::Activation { function }, &[x])
    }

    pub fn add(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        self.push(name, Op::Add, xs)
    }

    pub fn mark_output(&mut self, name: impl Into<String>, id: NodeId) {
        self.graph.outputs.push((name.into(), id));
    }

    pub fn finish(self) -> LayerGraph {
        self.graph
    }
}
