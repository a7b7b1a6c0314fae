//! Heatmap prediction network.
//!
//! A 1×1 head on branch 1 predicts 17 heatmaps and 17 tag maps at 1/4
//! resolution (heatmaps first). Its output is concatenated with the branch 1
//! features, upsampled 2× by a transposed convolution, refined by two residual
//! blocks, and a second 1×1 head predicts 17 heatmaps at 1/2 resolution.

use serde::{Deserialize, Serialize};

use crate::body::{emit_residual, ResidualKind};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerGraph, Module, NodeId, Op, WeightStore};
use crate::kernels::Activation;
use crate::scaling::{ScaleConfig, JOINT_COUNT};
use crate::tensor::{Dims, Tensor};

/// Heatmap plus tag channels of the first head.
pub const FIRST_HEAD_CHANNELS: usize = 2 * JOINT_COUNT;
pub const REFINE_BLOCKS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_width: usize,
    pub first_head_channels: usize,
    pub deconv: DeconvSpec,
    pub refine_blocks: usize,
    pub refine_residual: ResidualKind,
    pub second_head_channels: usize,
    pub joint_count: usize,
    pub tag_size: usize,
    pub heatmap_size: usize,
}

pub fn build_head(config: &ScaleConfig) -> HeadSpec {
    let w1 = config.branch_widths[0];
    HeadSpec {
        input_width: w1,
        first_head_channels: FIRST_HEAD_CHANNELS,
        deconv: DeconvSpec {
            in_channels: FIRST_HEAD_CHANNELS + w1,
            out_channels: w1,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        refine_blocks: REFINE_BLOCKS,
        refine_residual: ResidualKind::Bottleneck,
        second_head_channels: JOINT_COUNT,
        joint_count: JOINT_COUNT,
        tag_size: config.tag_size,
        heatmap_size: config.heatmap_size,
    }
}

impl HeadSpec {
    pub fn input_shape(&self) -> Dims {
        [1, self.input_width, self.tag_size, self.tag_size]
    }

    pub fn output_shapes(&self) -> (Dims, Dims) {
        (
            [1, self.first_head_channels, self.tag_size, self.tag_size],
            [1, self.second_head_channels, self.heatmap_size, self.heatmap_size],
        )
    }

    /// Returns `(tags_and_heatmaps, refined_heatmaps)` node ids.
    pub fn emit(&self, g: &mut GraphBuilder, branch1: NodeId) -> Result<(NodeId, NodeId)> {
        g.set_module(Module::Head);
        if g.shape(branch1) != self.input_shape() {
            return Err(Error::Shape {
                edge: "branch1 -> head.first".into(),
                expected: self.input_shape(),
                actual: g.shape(branch1),
            });
        }
        let first = g.conv("head.first", branch1, self.first_head_channels, 1, 1, 1, true)?;
        let cat = g.push("head.concat", Op::Concat, &[first, branch1])?;
        let d = self.deconv;
        let up = g.push(
            "head.deconv.conv",
            Op::ConvTranspose2d {
                out_channels: d.out_channels,
                kernel: d.kernel,
                stride: d.stride,
                padding: d.padding,
            },
            &[cat],
        )?;
        let up = g.push("head.deconv.bn", Op::BatchNorm, &[up])?;
        let mut x = g.activation("head.deconv.relu", up, Activation::Relu)?;
        for i in 0..self.refine_blocks {
            x = emit_residual(g, &format!("head.refine{i}"), x, self.refine_residual)?;
        }
        let second = g.conv("head.second", x, self.second_head_channels, 1, 1, 1, true)?;
        Ok((first, second))
    }

    pub fn graph(&self, phi: i32) -> Result<LayerGraph> {
        let mut g = GraphBuilder::new(format!("head H{phi}"), phi, self.tag_size * 4);
        g.set_module(Module::Head);
        let x = g.input("branch1", self.input_shape());
        let (a, b) = self.emit(&mut g, x)?;
        g.mark_output("tags_and_heatmaps", a);
        g.mark_output("refined_heatmaps", b);
        Ok(g.finish())
    }
}

pub fn forward_head(
    spec: &HeadSpec,
    branch1_features: &Tensor,
    weights: &WeightStore,
) -> Result<(Tensor, Tensor)> {
    if branch1_features.dims() != spec.input_shape() {
        return Err(Error::Shape {
            edge: "branch1 -> head.first".into(),
            expected: spec.input_shape(),
            actual: branch1_features.dims(),
        });
    }
    let mut outs = spec
        .graph(0)?
        .execute(std::slice::from_ref(branch1_features), weights)?
        .into_iter();
    Ok((outs.next().expect("first head"), outs.next().expect("second head")))
}

/// Splits a first-head output into `(heatmaps, tags)`, 17 channels each.
pub fn split_first_head(first: &Tensor) -> Result<(Tensor, Tensor)> {
    if first.channels() != FIRST_HEAD_CHANNELS {
        return Err(Error::Shape {
            edge: "split_first_head".into(),
            expected: [first.batch(), FIRST_HEAD_CHANNELS, first.height(), first.width()],
            actual: first.dims(),
        });
    }
    Ok((
        first.channel_slice(0, JOINT_COUNT)?,
        first.channel_slice(JOINT_COUNT, JOINT_COUNT)?,
    ))
}
