//! The assembled model: backbone, high-resolution body and heatmap head in a
//! single layer graph.

use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_tap_channels, build_backbone_with, BackboneOptions, BackboneSpec};
use crate::body::{build_body_with, BodyOptions, BodySpec, ResidualKind};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerGraph, WeightStore};
use crate::head::{build_head, HeadSpec};
use crate::scaling::ScaleConfig;
use crate::tensor::{Dims, Tensor};

pub const FIRST_HEAD_OUTPUT: &str = "tags_and_heatmaps";
pub const REFINED_OUTPUT: &str = "refined_heatmaps";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkOptions {
    pub lite: bool,
    pub fusion: bool,
    pub body_residual: ResidualKind,
    /// Also expose the four body branches as graph outputs.
    pub expose_branches: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        let body = BodyOptions::default();
        NetworkOptions {
            lite: false,
            fusion: body.fusion,
            body_residual: body.residual,
            expose_branches: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub config: ScaleConfig,
    pub backbone: BackboneSpec,
    pub body: BodySpec,
    pub head: HeadSpec,
    pub expose_branches: bool,
}

pub fn build_network(config: &ScaleConfig) -> Result<NetworkSpec> {
    build_network_with(config, NetworkOptions::default())
}

pub fn build_network_with(config: &ScaleConfig, options: NetworkOptions) -> Result<NetworkSpec> {
    let backbone = build_backbone_with(
        config.backbone,
        config.input_resolution,
        BackboneOptions {
            lite: options.lite,
            classifier: None,
        },
    )?;
    let body = build_body_with(
        config,
        backbone_tap_channels(&backbone),
        BodyOptions {
            fusion: options.fusion,
            residual: options.body_residual,
        },
    )?;
    Ok(NetworkSpec {
        config: config.clone(),
        backbone,
        body,
        head: build_head(config),
        expose_branches: options.expose_branches,
    })
}

impl NetworkSpec {
    pub fn input_shape(&self) -> Dims {
        let r = self.config.input_resolution;
        [1, 3, r, r]
    }

    pub fn graph(&self) -> Result<LayerGraph> {
        let r = self.config.input_resolution;
        let mut g = GraphBuilder::new(self.config.model_name(), self.config.phi, r);
        let image = g.input("image", self.input_shape());
        let taps = self.backbone.emit(&mut g, image)?.taps;
        let branches = self.body.emit(&mut g, taps)?;
        let (first, second) = self.head.emit(&mut g, branches[0])?;
        g.mark_output(FIRST_HEAD_OUTPUT, first);
        g.mark_output(REFINED_OUTPUT, second);
        if self.expose_branches {
            for (i, b) in branches.iter().enumerate() {
                g.mark_output(format!("branch{}", i + 1), *b);
            }
        }
        Ok(g.finish())
    }

    pub fn forward(&self, image: &Tensor, weights: &WeightStore) -> Result<NetworkOutput> {
        if image.dims() != self.input_shape() {
            return Err(Error::Shape {
                edge: "image -> backbone.stem".into(),
                expected: self.input_shape(),
                actual: image.dims(),
            });
        }
        let mut outs = self.graph()?.execute(std::slice::from_ref(image), weights)?.into_iter();
        let first_head = outs.next().expect("first head output");
        let refined_heatmaps = outs.next().expect("refined output");
        let branches: Vec<Tensor> = outs.collect();
        Ok(NetworkOutput {
            first_head,
            refined_heatmaps,
            branches,
        })
    }
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `(1, 34, R/4, R/4)`: heatmaps then tags.
    pub first_head: Tensor,
    /// `(1, 17, R/2, R/2)`.
    pub refined_heatmaps: Tensor,
    /// Body branch features, when exposed.
    pub branches: Vec<Tensor>,
}

/// End-to-end forward pass with seeded weights.
pub fn infer(config: &ScaleConfig, image: &Tensor, seed: u64) -> Result<(Tensor, Tensor)> {
    let out = build_network(config)?.forward(image, &WeightStore::seeded(seed))?;
    Ok((out.first_head, out.refined_heatmaps))
}
