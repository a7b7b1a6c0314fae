//! Compact EfficientNet backbone, scaled above or below B0.
//!
//! Emits four feature taps at strides 4, 8, 16 and 32. An optional
//! classification head exists only to compare parameter totals with the
//! standalone classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerGraph, Module, NodeId, Op};
use crate::kernels::Activation;
use crate::scaling::{check_resolution, BackboneCoefficients};
use crate::tensor::Dims;

const CHANNEL_DIVISOR: usize = 8;
const STEM_CHANNELS: usize = 32;
const HEAD_CHANNELS: usize = 1280;
const SE_RATIO: f64 = 0.25;

/// B0 stage table: (expansion, kernel, out channels, repeats, stride).
const B0_STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 3, 16, 1, 1),
    (6, 3, 24, 2, 2),
    (6, 5, 40, 2, 2),
    (6, 3, 80, 3, 2),
    (6, 5, 112, 3, 1),
    (6, 5, 192, 4, 2),
    (6, 3, 320, 1, 1),
];

/// Stage indices whose outputs are tapped (the last stage at each stride).
const TAP_STAGES: [usize; 4] = [1, 2, 4, 6];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbConvStage {
    pub expansion: usize,
    pub kernel: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub squeeze_excite: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub stage: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub head_channels: usize,
    pub class_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub coefficients: BackboneCoefficients,
    pub input_resolution: usize,
    /// Lite variants drop squeeze-excite and use ReLU instead of swish.
    pub lite: bool,
    pub stem_channels: usize,
    pub stages: Vec<MbConvStage>,
    pub taps: [Tap; 4],
    pub classifier: Option<ClassifierSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackboneOptions {
    pub lite: bool,
    /// Class count of the optional classification head.
    pub classifier: Option<usize>,
}

/// Nearest multiple of 8 (at least 8), bumped one step if rounding lost more
/// than 10% of the scaled width.
pub fn round_channels(channels: usize, width_mult: f64) -> usize {
    let scaled = channels as f64 * width_mult;
    let d = CHANNEL_DIVISOR as f64;
    let mut rounded = (((scaled + d / 2.0) / d).floor() as usize * CHANNEL_DIVISOR).max(CHANNEL_DIVISOR);
    if (rounded as f64) < 0.9 * scaled {
        rounded += CHANNEL_DIVISOR;
    }
    rounded
}

/// `max(1, round(d * repeats))`; rounding rather than ceil so that `d < 1`
/// actually removes layers.
pub fn round_repeats(repeats: usize, depth_mult: f64) -> usize {
    ((repeats as f64 * depth_mult).round() as usize).max(1)
}

pub fn build_backbone(
    coeff: BackboneCoefficients,
    input_resolution: usize,
    with_classifier: bool,
    class_count: usize,
) -> Result<BackboneSpec> {
    build_backbone_with(
        coeff,
        input_resolution,
        BackboneOptions {
            lite: false,
            classifier: with_classifier.then_some(class_count),
        },
    )
}

pub fn build_backbone_with(
    coeff: BackboneCoefficients,
    input_resolution: usize,
    options: BackboneOptions,
) -> Result<BackboneSpec> {
    // Classification resolutions need not divide evenly; feature taps do.
    match options.classifier {
        None => check_resolution(input_resolution)?,
        Some(_) if input_resolution < 32 => {
            return Err(Error::config(format!("input resolution {input_resolution} is below 32")))
        }
        Some(_) => {}
    }
    if options.classifier == Some(0) {
        return Err(Error::config("classifier needs at least one class"));
    }
    let stages: Vec<MbConvStage> = B0_STAGES
        .iter()
        .map(|&(expansion, kernel, out, repeats, stride)| MbConvStage {
            expansion,
            kernel,
            out_channels: round_channels(out, coeff.width_mult),
            repeats: round_repeats(repeats, coeff.depth_mult),
            stride,
            squeeze_excite: !options.lite,
        })
        .collect();

    let mut stride = 2;
    let mut strides = Vec::with_capacity(stages.len());
    for s in &stages {
        stride *= s.stride;
        strides.push(stride);
    }
    let taps = TAP_STAGES.map(|i| Tap {
        stage: i,
        stride: strides[i],
        channels: stages[i].out_channels,
    });

    Ok(BackboneSpec {
        coefficients: coeff,
        input_resolution,
        lite: options.lite,
        stem_channels: round_channels(STEM_CHANNELS, coeff.width_mult),
        stages,
        taps,
        classifier: options.classifier.map(|class_count| ClassifierSpec {
            head_channels: round_channels(HEAD_CHANNELS, coeff.width_mult),
            class_count,
        }),
    })
}

pub fn backbone_tap_channels(spec: &BackboneSpec) -> [usize; 4] {
    spec.taps.map(|t| t.channels)
}

pub struct BackboneOutputs {
    pub taps: [NodeId; 4],
    pub logits: Option<NodeId>,
}

impl BackboneSpec {
    fn activation(&self) -> Activation {
        if self.lite {
            Activation::Relu
        } else {
            Activation::Swish
        }
    }

    pub fn tap_shapes(&self) -> [Dims; 4] {
        // Every stride-2 layer maps n to ceil(n / 2).
        self.taps.map(|t| {
            let s = self.input_resolution.div_ceil(t.stride);
            [1, t.channels, s, s]
        })
    }

    /// Appends the backbone to `g`, reading the image from `image`.
    pub fn emit(&self, g: &mut GraphBuilder, image: NodeId) -> Result<BackboneOutputs> {
        let act = self.activation();
        g.set_module(Module::Backbone);
        let mut x = g.conv_bn("backbone.stem", image, self.stem_channels, 3, 2, 1, Some(act))?;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter().enumerate() {
            for r in 0..stage.repeats {
                let stride = if r == 0 { stage.stride } else { 1 };
                x = self.mbconv(g, &format!("backbone.stage{si}.block{r}"), x, stage, stride)?;
            }
            stage_outputs.push(x);
        }
        let taps = self.taps.map(|t| stage_outputs[t.stage]);

        let logits = match self.classifier {
            Some(c) => {
                g.set_module(Module::Classifier);
                let h = g.conv_bn("classifier.head", x, c.head_channels, 1, 1, 1, Some(act))?;
                let p = g.push("classifier.pool", Op::GlobalAvgPool, &[h])?;
                Some(g.push(
                    "classifier.fc",
                    Op::Dense {
                        out_features: c.class_count,
                        bias: true,
                    },
                    &[p],
                )?)
            }
            None => None,
        };
        Ok(BackboneOutputs { taps, logits })
    }

    fn mbconv(
        &self,
        g: &mut GraphBuilder,
        name: &str,
        x: NodeId,
        stage: &MbConvStage,
        stride: usize,
    ) -> Result<NodeId> {
        let act = self.activation();
        let in_ch = g.channels(x);
        let expanded = in_ch * stage.expansion;
        let mut h = x;
        if stage.expansion != 1 {
            h = g.conv_bn(&format!("{name}.expand"), h, expanded, 1, 1, 1, Some(act))?;
        }
        h = g.conv_bn(&format!("{name}.depthwise"), h, expanded, stage.kernel, stride, expanded, Some(act))?;
        if stage.squeeze_excite {
            let squeezed = ((in_ch as f64 * SE_RATIO) as usize).max(1);
            let p = g.push(format!("{name}.se.pool"), Op::GlobalAvgPool, &[h])?;
            let r = g.conv(&format!("{name}.se.reduce"), p, squeezed, 1, 1, 1, true)?;
            let r = g.activation(&format!("{name}.se.act"), r, act)?;
            let e = g.conv(&format!("{name}.se.expand"), r, expanded, 1, 1, 1, true)?;
            let gate = g.activation(&format!("{name}.se.gate"), e, Activation::Sigmoid)?;
            h = g.push(format!("{name}.se.scale"), Op::ScaleChannels, &[h, gate])?;
        }
        h = g.conv_bn(&format!("{name}.project"), h, stage.out_channels, 1, 1, 1, None)?;
        if stride == 1 && in_ch == stage.out_channels {
            h = g.add(&format!("{name}.residual"), &[x, h])?;
        }
        Ok(h)
    }

    /// Standalone graph: image in, the four taps (and logits) out.
    pub fn graph(&self) -> Result<LayerGraph> {
        let r = self.input_resolution;
        let mut g = GraphBuilder::new(format!("B{}", self.coefficients.phi), self.coefficients.phi, r);
        let image = g.input("image", [1, 3, r, r]);
        let out = self.emit(&mut g, image)?;
        for (i, t) in out.taps.iter().enumerate() {
            g.mark_output(format!("tap{}", i + 1), *t);
        }
        if let Some(l) = out.logits {
            g.mark_output("logits", l);
        }
        Ok(g.finish())
    }
}
