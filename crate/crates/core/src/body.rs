//! High-resolution body: up to four parallel branches at fixed resolutions
//! `R / 2^(n+1)`, three stages of residual blocks, and a full multi-scale
//! fusion after each stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerGraph, Module, NodeId, Op, WeightStore};
use crate::kernels::Activation;
use crate::scaling::ScaleConfig;
use crate::tensor::{Dims, Tensor};

/// Residual blocks per body block.
pub const RESIDUALS_PER_BLOCK: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// Three 3×3 convolutions at the branch width.
    Triple3x3,
    /// 1×1 → 3×3 → 1×1 at the branch width.
    Bottleneck,
}

impl ResidualKind {
    fn kernels(self) -> [usize; 3] {
        match self {
            ResidualKind::Triple3x3 => [3, 3, 3],
            ResidualKind::Bottleneck => [1, 3, 1],
        }
    }
}

/// Appends one residual block: three conv+BN layers (ReLU between), an
/// identity skip, then ReLU. Input and output widths are equal.
pub(crate) fn emit_residual(
    g: &mut GraphBuilder,
    name: &str,
    x: NodeId,
    kind: ResidualKind,
) -> Result<NodeId> {
    let width = g.channels(x);
    let ks = kind.kernels();
    let mut h = x;
    for (i, &k) in ks.iter().enumerate() {
        let act = (i + 1 < ks.len()).then_some(Activation::Relu);
        h = g.conv_bn(&format!("{name}.conv{}", i + 1), h, width, k, 1, 1, act)?;
    }
    let s = g.add(&format!("{name}.skip"), &[x, h])?;
    g.activation(&format!("{name}.relu"), s, Activation::Relu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub width: usize,
    pub resolution: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub branch_count: usize,
    /// Blocks per branch; each block holds [`RESIDUALS_PER_BLOCK`] residual blocks.
    pub blocks: usize,
}

/// How branch `src` contributes to branch `dst` in a fusion unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionTransform {
    Identity,
    /// Chain of stride-2 3×3 convs, one per octave, `(in, out)` channels each.
    Down { convs: Vec<(usize, usize)> },
    /// 1×1 conv then nearest upsampling.
    Up {
        in_channels: usize,
        out_channels: usize,
        factor: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionUnit {
    pub stage: usize,
    /// `matrix[dst][src]`.
    pub matrix: Vec<Vec<FusionTransform>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub input_resolution: usize,
    pub branches: [BranchSpec; 4],
    pub stages: [StageSpec; 3],
    pub residual: ResidualKind,
    /// Empty when fusion is disabled.
    pub fusion_units: Vec<FusionUnit>,
    pub transitions: [TransitionSpec; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BodyOptions {
    pub fusion: bool,
    pub residual: ResidualKind,
}

impl Default for BodyOptions {
    fn default() -> Self {
        Self {
            fusion: true,
            residual: ResidualKind::Triple3x3,
        }
    }
}

pub fn build_body(config: &ScaleConfig, tap_channels: [usize; 4]) -> Result<BodySpec> {
    build_body_with(config, tap_channels, BodyOptions::default())
}

pub fn build_body_with(
    config: &ScaleConfig,
    tap_channels: [usize; 4],
    options: BodyOptions,
) -> Result<BodySpec> {
    let r = config.input_resolution;
    let mut branches = [BranchSpec { width: 0, resolution: 0 }; 4];
    for (i, b) in branches.iter_mut().enumerate() {
        let denom = 1usize << (i + 2);
        if r % denom != 0 {
            return Err(Error::config(format!(
                "branch {} resolution {r}/{denom} is not integral",
                i + 1
            )));
        }
        *b = BranchSpec {
            width: config.branch_widths[i],
            resolution: r / denom,
        };
    }
    let stages = [0, 1, 2].map(|s| StageSpec {
        branch_count: s + 2,
        blocks: config.stage_repeats[s],
    });
    let transitions = [0, 1, 2, 3].map(|i| TransitionSpec {
        in_channels: tap_channels[i],
        out_channels: branches[i].width,
    });
    let fusion_units = if options.fusion {
        stages
            .iter()
            .enumerate()
            .map(|(s, st)| fusion_unit(s, &branches[..st.branch_count]))
            .collect()
    } else {
        Vec::new()
    };
    Ok(BodySpec {
        input_resolution: r,
        branches,
        stages,
        residual: options.residual,
        fusion_units,
        transitions,
    })
}

fn fusion_unit(stage: usize, branches: &[BranchSpec]) -> FusionUnit {
    let matrix = (0..branches.len())
        .map(|dst| {
            (0..branches.len())
                .map(|src| {
                    let (ws, wd) = (branches[src].width, branches[dst].width);
                    match src.cmp(&dst) {
                        std::cmp::Ordering::Equal => FusionTransform::Identity,
                        std::cmp::Ordering::Less => {
                            let steps = dst - src;
                            let convs = (0..steps)
                                .map(|i| (ws, if i + 1 == steps { wd } else { ws }))
                                .collect();
                            FusionTransform::Down { convs }
                        }
                        std::cmp::Ordering::Greater => FusionTransform::Up {
                            in_channels: ws,
                            out_channels: wd,
                            factor: 1 << (src - dst),
                        },
                    }
                })
                .collect()
        })
        .collect();
    FusionUnit { stage, matrix }
}

impl BodySpec {
    /// `(1, W_n, R/2^(n+1), R/2^(n+1))` for each branch.
    pub fn branch_shapes(&self) -> [Dims; 4] {
        self.branches.map(|b| [1, b.width, b.resolution, b.resolution])
    }

    /// Expected tap shapes: tap `n` arrives at branch `n`'s resolution.
    pub fn tap_shapes(&self) -> [Dims; 4] {
        let mut out = self.branch_shapes();
        for (d, t) in out.iter_mut().zip(&self.transitions) {
            d[1] = t.in_channels;
        }
        out
    }

    pub fn emit(&self, g: &mut GraphBuilder, taps: [NodeId; 4]) -> Result<[NodeId; 4]> {
        g.set_module(Module::Body);
        for (i, (&t, expected)) in taps.iter().zip(self.tap_shapes()).enumerate() {
            if g.shape(t) != expected {
                return Err(Error::Shape {
                    edge: format!("tap{} -> body.transition{}", i + 1, i + 1),
                    expected,
                    actual: g.shape(t),
                });
            }
        }
        let mut transitioned = [0; 4];
        for i in 0..4 {
            transitioned[i] = g.conv_bn(
                &format!("body.transition{}", i + 1),
                taps[i],
                self.transitions[i].out_channels,
                3,
                1,
                1,
                Some(Activation::Relu),
            )?;
        }

        let mut current: Vec<NodeId> = Vec::with_capacity(4);
        for (s, stage) in self.stages.iter().enumerate() {
            while current.len() < stage.branch_count {
                current.push(transitioned[current.len()]);
            }
            for (b, x) in current.iter_mut().enumerate() {
                for m in 0..stage.blocks {
                    for r in 0..RESIDUALS_PER_BLOCK {
                        let name = format!("body.stage{}.branch{}.block{m}.res{r}", s + 1, b + 1);
                        *x = emit_residual(g, &name, *x, self.residual)?;
                    }
                }
            }
            if let Some(unit) = self.fusion_units.get(s) {
                current = emit_fusion(g, unit, &current)?;
            }
        }
        Ok([current[0], current[1], current[2], current[3]])
    }

    /// Standalone graph: four taps in, four branch features out.
    pub fn graph(&self, phi: i32) -> Result<LayerGraph> {
        let mut g = GraphBuilder::new(format!("body H{phi}"), phi, self.input_resolution);
        g.set_module(Module::Body);
        let shapes = self.tap_shapes();
        let taps = [0, 1, 2, 3].map(|i| g.input(format!("tap{}", i + 1), shapes[i]));
        let outs = self.emit(&mut g, taps)?;
        for (i, o) in outs.iter().enumerate() {
            g.mark_output(format!("branch{}", i + 1), *o);
        }
        Ok(g.finish())
    }
}

fn emit_fusion(g: &mut GraphBuilder, unit: &FusionUnit, xs: &[NodeId]) -> Result<Vec<NodeId>> {
    let stage = unit.stage + 1;
    let mut out = Vec::with_capacity(xs.len());
    for (dst, row) in unit.matrix.iter().enumerate() {
        let mut terms = Vec::with_capacity(row.len());
        for (src, t) in row.iter().enumerate() {
            let name = format!("body.stage{stage}.fuse.{}from{}", dst + 1, src + 1);
            let y = match t {
                FusionTransform::Identity => xs[src],
                FusionTransform::Down { convs } => {
                    let mut h = xs[src];
                    for (i, &(_, c_out)) in convs.iter().enumerate() {
                        let last = i + 1 == convs.len();
                        let act = (!last).then_some(Activation::Relu);
                        h = g.conv_bn(&format!("{name}.down{i}"), h, c_out, 3, 2, 1, act)?;
                    }
                    h
                }
                FusionTransform::Up {
                    out_channels,
                    factor,
                    ..
                } => {
                    let h = g.conv_bn(&format!("{name}.reduce"), xs[src], *out_channels, 1, 1, 1, None)?;
                    g.push(format!("{name}.upsample"), Op::UpsampleNearest { factor: *factor }, &[h])?
                }
            };
            terms.push(y);
        }
        let sum = g.add(&format!("body.stage{stage}.fuse.{}.sum", dst + 1), &terms)?;
        out.push(g.activation(&format!("body.stage{stage}.fuse.{}.relu", dst + 1), sum, Activation::Relu)?);
    }
    Ok(out)
}

/// Runs the body alone on four backbone taps.
pub fn forward_body(spec: &BodySpec, taps: &[Tensor; 4], weights: &WeightStore) -> Result<[Tensor; 4]> {
    let graph = spec.graph(0)?;
    let outs = graph.execute(taps, weights)?;
    let mut it = outs.into_iter();
    Ok([0; 4].map(|_| it.next().expect("four branch outputs")))
}
