//! Parameter and operation accounting over layer graphs, the scaling-table
//! report, and the accuracy-times-efficiency metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backbone::build_backbone;
use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Module, Node, Op};
use crate::network::build_network;
use crate::scaling::{backbone_coefficients, classification_resolution, config_for_phi, supported_phis};
use crate::tensor::Dims;

pub const PARAM_TOLERANCE: f64 = 0.15;
pub const FLOP_TOLERANCE: f64 = 0.20;
pub const IMAGENET_CLASSES: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCost {
    pub params: u64,
    pub macs: u64,
    /// Activations, adds, upsampling, pooling and gating: 1 op per element.
    pub elementwise_ops: u64,
}

impl std::ops::AddAssign for NodeCost {
    fn add_assign(&mut self, o: NodeCost) {
        self.params += o.params;
        self.macs += o.macs;
        self.elementwise_ops += o.elementwise_ops;
    }
}

fn elements(d: Dims) -> u64 {
    d.iter().map(|&x| x as u64).product()
}

pub fn node_cost(node: &Node) -> NodeCost {
    let out = node.output_shape;
    let out_elems = elements(out);
    let input = |i: usize| node.input_shapes[i];
    match node.op {
        Op::Input | Op::Concat => NodeCost::default(),
        Op::Conv2d {
            out_channels,
            kernel,
            groups,
            bias,
            ..
        } => {
            let weights = (out_channels * input(0)[1] / groups * kernel * kernel) as u64;
            NodeCost {
                params: weights + if bias { out_channels as u64 } else { 0 },
                macs: weights * (out[0] * out[2] * out[3]) as u64,
                elementwise_ops: 0,
            }
        }
        Op::ConvTranspose2d {
            out_channels, kernel, ..
        } => {
            let [n, c_in, h, w] = input(0);
            let weights = (c_in * out_channels * kernel * kernel) as u64;
            NodeCost {
                params: weights,
                macs: weights * (n * h * w) as u64,
                elementwise_ops: 0,
            }
        }
        Op::BatchNorm => NodeCost {
            params: 4 * out[1] as u64,
            macs: 2 * out_elems,
            elementwise_ops: 0,
        },
        Op::Dense { out_features, bias } => {
            let weights = (input(0)[1] * out_features) as u64;
            NodeCost {
                params: weights + if bias { out_features as u64 } else { 0 },
                macs: weights * out[0] as u64,
                elementwise_ops: 0,
            }
        }
        Op::Add => NodeCost {
            elementwise_ops: out_elems * (node.inputs.len().saturating_sub(1)) as u64,
            ..Default::default()
        },
        Op::GlobalAvgPool => NodeCost {
            elementwise_ops: elements(input(0)),
            ..Default::default()
        },
        Op::Activation { .. } | Op::UpsampleNearest { .. } | Op::ScaleChannels => NodeCost {
            elementwise_ops: out_elems,
            ..Default::default()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleCost {
    pub module: Module,
    pub params: u64,
    pub macs: u64,
    pub elementwise_ops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model_name: String,
    pub phi: i32,
    pub input_resolution: usize,
    pub params: u64,
    pub macs: u64,
    pub flops_2x: u64,
    pub elementwise_ops: u64,
    pub per_module: Vec<ModuleCost>,
}

const MODULE_ORDER: [Module; 4] = [Module::Backbone, Module::Body, Module::Head, Module::Classifier];

pub fn count_costs(graph: &LayerGraph) -> Result<CostReport> {
    graph.validate()?;
    let mut total = NodeCost::default();
    let mut modules = [NodeCost::default(); 4];
    let mut seen = [false; 4];
    for node in &graph.nodes {
        let c = node_cost(node);
        let m = MODULE_ORDER.iter().position(|&m| m == node.module).expect("known module");
        modules[m] += c;
        seen[m] |= node.op != Op::Input;
        total += c;
    }
    let per_module = MODULE_ORDER
        .iter()
        .zip(modules)
        .zip(seen)
        .filter(|(_, s)| *s)
        .map(|((&module, c), _)| ModuleCost {
            module,
            params: c.params,
            macs: c.macs,
            elementwise_ops: c.elementwise_ops,
        })
        .collect();
    Ok(CostReport {
        model_name: graph.name.clone(),
        phi: graph.phi,
        input_resolution: graph.input_resolution,
        params: total.params,
        macs: total.macs,
        flops_2x: 2 * total.macs,
        elementwise_ops: total.elementwise_ops,
        per_module,
    })
}

pub fn model_costs(phi: i32) -> Result<CostReport> {
    count_costs(&build_network(&config_for_phi(phi)?)?.graph()?)
}

/// One report per supported phi, largest model first.
pub fn scaling_table() -> Result<Vec<CostReport>> {
    supported_phis().map(model_costs).collect()
}

/// Standalone backbone with a classification head at the classification
/// resolution for `phi`.
pub fn classifier_costs(phi: i32) -> Result<CostReport> {
    let spec = build_backbone(
        backbone_coefficients(phi),
        classification_resolution(phi)?,
        true,
        IMAGENET_CLASSES,
    )?;
    count_costs(&spec.graph()?)
}

/// Published parameter and FLOP totals for one scaled model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedCost {
    pub phi: i32,
    pub params: f64,
    pub flops: f64,
}

// COCO val comparison, single-scale models of the scaled family.
pub const PUBLISHED_COSTS: [PublishedCost; 5] = [
    PublishedCost { phi: 0, params: 23.3e6, flops: 25.6e9 },
    PublishedCost { phi: -1, params: 16.0e6, flops: 14.2e9 },
    PublishedCost { phi: -2, params: 10.3e6, flops: 7.7e9 },
    PublishedCost { phi: -3, params: 6.9e6, flops: 4.2e9 },
    PublishedCost { phi: -4, params: 3.7e6, flops: 2.1e9 },
];

// Classifier-equipped backbones from the compact EfficientNet comparison.
pub const PUBLISHED_BACKBONE_PARAMS: [(i32, f64, f64); 2] = [(0, 5.3e6, 0.10), (-4, 1.3e6, 0.15)];

pub fn published_cost(phi: i32) -> Option<PublishedCost> {
    PUBLISHED_COSTS.iter().copied().find(|p| p.phi == phi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    Macs,
    TwiceMacs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostCheck {
    pub model_name: String,
    pub params_rel_err: f64,
    pub macs_rel_err: f64,
    pub flops_2x_rel_err: f64,
    pub params_ok: bool,
    /// The convention that lands within tolerance, preferring MACs.
    pub flop_convention: Option<FlopConvention>,
}

impl CostCheck {
    pub fn passed(&self) -> bool {
        self.params_ok && self.flop_convention.is_some()
    }
}

pub fn relative_error(actual: f64, target: f64) -> f64 {
    (actual - target) / target
}

pub fn check_report(report: &CostReport, target: &PublishedCost) -> CostCheck {
    let params_rel_err = relative_error(report.params as f64, target.params);
    let macs_rel_err = relative_error(report.macs as f64, target.flops);
    let flops_2x_rel_err = relative_error(report.flops_2x as f64, target.flops);
    let flop_convention = if macs_rel_err.abs() <= FLOP_TOLERANCE {
        Some(FlopConvention::Macs)
    } else if flops_2x_rel_err.abs() <= FLOP_TOLERANCE {
        Some(FlopConvention::TwiceMacs)
    } else {
        None
    };
    CostCheck {
        model_name: report.model_name.clone(),
        params_rel_err,
        macs_rel_err,
        flops_2x_rel_err,
        params_ok: params_rel_err.abs() <= PARAM_TOLERANCE,
        flop_convention,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AEScore {
    pub accuracy_ap: f64,
    pub fps: f64,
    pub watts: f64,
    pub efficiency: f64,
    pub ae: f64,
}

impl AEScore {
    /// AP times the efficiency rounded to three decimals, the way the
    /// published comparison tabulates it.
    pub fn tabulated_ae(&self) -> f64 {
        self.accuracy_ap * round_to(self.efficiency, 3)
    }
}

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

pub fn ae_score(accuracy_ap: f64, fps: f64, watts: f64) -> Result<AEScore> {
    if !(watts > 0.0) {
        return Err(Error::Domain(format!("power must be positive, got {watts} W")));
    }
    let efficiency = fps / watts;
    Ok(AEScore {
        accuracy_ap,
        fps,
        watts,
        efficiency,
        ae: accuracy_ap * efficiency,
    })
}

fn millions(x: u64) -> String {
    format!("{:.2}M", x as f64 / 1e6)
}

fn billions(x: u64) -> String {
    format!("{:.2}B", x as f64 / 1e9)
}

/// Aligned plain-text table, one row per report.
pub fn format_table(reports: &[CostReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "model", "input", "params", "MACs", "2xMACs", "elemwise", "backbone", "body", "head"
    );
    for r in reports {
        let module = |m: Module| {
            r.per_module
                .iter()
                .find(|c| c.module == m)
                .map_or_else(|| "-".to_string(), |c| millions(c.params))
        };
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            r.model_name,
            r.input_resolution,
            millions(r.params),
            billions(r.macs),
            billions(r.flops_2x),
            billions(r.elementwise_ops),
            module(Module::Backbone),
            module(Module::Body),
            module(Module::Head),
        );
    }
    s
}

/// One JSON object per line.
pub fn format_records<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub module: Module,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub input_shapes: Vec<Dims>,
    pub output_shape: Dims,
    #[serde(flatten)]
    pub cost: NodeCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub name: String,
    pub phi: i32,
    pub input_resolution: usize,
    pub nodes: Vec<NodeRecord>,
    pub outputs: Vec<(String, usize)>,
    pub totals: NodeCost,
}

pub fn graph_document(graph: &LayerGraph) -> Result<GraphDocument> {
    graph.validate()?;
    let mut totals = NodeCost::default();
    let nodes = graph
        .nodes
        .iter()
        .map(|n| {
            let cost = node_cost(n);
            totals += cost;
            NodeRecord {
                name: n.name.clone(),
                module: n.module,
                op: n.op.clone(),
                inputs: n.inputs.clone(),
                input_shapes: n.input_shapes.clone(),
                output_shape: n.output_shape,
                cost,
            }
        })
        .collect();
    Ok(GraphDocument {
        name: graph.name.clone(),
        phi: graph.phi,
        input_resolution: graph.input_resolution,
        nodes,
        outputs: graph.outputs.clone(),
        totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::network::{build_network_with, NetworkOptions};
    use crate::scaling::ScaleConfig;

    #[test]
    fn one_by_one_conv_params() {
        let mut g = GraphBuilder::new("t", 0, 512);
        let x = g.input("x", [1, 32, 128, 128]);
        let y = g.conv("c", x, 34, 1, 1, 1, true).unwrap();
        g.mark_output("y", y);
        let r = count_costs(&g.finish()).unwrap();
        assert_eq!(r.params, 1122);
        assert_eq!(r.macs, 34 * 32 * 128 * 128);
        assert_eq!(r.flops_2x, 2 * r.macs);
    }

    #[test]
    fn deconv_and_bn_and_dense_costs() {
        let mut g = GraphBuilder::new("t", 0, 64);
        let x = g.input("x", [1, 66, 16, 16]);
        let d = g
            .push("d", Op::ConvTranspose2d { out_channels: 32, kernel: 4, stride: 2, padding: 1 }, &[x])
            .unwrap();
        let b = g.push("b", Op::BatchNorm, &[d]).unwrap();
        let p = g.push("p", Op::GlobalAvgPool, &[b]).unwrap();
        let f = g.push("f", Op::Dense { out_features: 10, bias: true }, &[p]).unwrap();
        g.mark_output("f", f);
        let graph = g.finish();
        let costs: Vec<_> = graph.nodes.iter().map(node_cost).collect();
        assert_eq!(costs[1].params, 66 * 32 * 16);
        assert_eq!(costs[1].macs, 66 * 32 * 16 * 16 * 16);
        assert_eq!(costs[2].params, 128);
        assert_eq!(costs[2].macs, 2 * 32 * 32 * 32);
        assert_eq!(costs[3].elementwise_ops, 32 * 32 * 32);
        assert_eq!(costs[4].params, 330);
    }

    /// Recount parameters straight from the learned-tensor shapes.
    fn recount_params(graph: &LayerGraph) -> u64 {
        let mut p = 0;
        for n in &graph.nodes {
            if let Some((w, b)) = n.op.param_shapes(&n.input_shapes) {
                p += w.iter().product::<usize>() as u64 + b as u64;
            }
            if n.op == Op::BatchNorm {
                p += 4 * n.output_shape[1] as u64;
            }
        }
        p
    }

    #[test]
    fn totals_match_independent_recount() {
        for phi in [0, -4] {
            let g = build_network(&config_for_phi(phi).unwrap()).unwrap().graph().unwrap();
            let r = count_costs(&g).unwrap();
            assert_eq!(r.params, recount_params(&g));
            assert_eq!(r.per_module.iter().map(|m| m.params).sum::<u64>(), r.params);
            assert_eq!(r.per_module.iter().map(|m| m.macs).sum::<u64>(), r.macs);
            let doc = graph_document(&g).unwrap();
            assert_eq!((doc.totals.params, doc.totals.macs), (r.params, r.macs));
        }
    }

    #[test]
    fn doubling_resolution_quadruples_conv_macs() {
        let base: ScaleConfig = config_for_phi(-3).unwrap().with_resolution(128).unwrap();
        let big = base.with_resolution(256).unwrap();
        let conv_macs = |cfg: &ScaleConfig| -> (u64, u64) {
            let g = build_network_with(cfg, NetworkOptions::default()).unwrap().graph().unwrap();
            let mut macs = 0;
            // Squeeze-excite convs see pooled 1x1 maps and do not scale.
            for n in &g.nodes {
                let spatial = n.input_shapes.first().is_some_and(|d| d[2] > 1);
                if spatial && matches!(n.op, Op::Conv2d { .. } | Op::ConvTranspose2d { .. }) {
                    macs += node_cost(n).macs;
                }
            }
            (count_costs(&g).unwrap().params, macs)
        };
        let (p1, m1) = conv_macs(&base);
        let (p2, m2) = conv_macs(&big);
        assert_eq!(p1, p2);
        assert_eq!(m2, 4 * m1);
    }

    #[test]
    fn scaling_table_is_ordered_and_shrinks() {
        let t = scaling_table().unwrap();
        assert_eq!(t.iter().map(|r| r.phi).collect::<Vec<_>>(), vec![0, -1, -2, -3, -4]);
        assert_eq!(t[1].input_resolution, 480);
        assert!(t.windows(2).all(|w| w[0].params > w[1].params && w[0].macs > w[1].macs));
        assert!(t[4].params as f64 <= 0.20 * t[0].params as f64);
        assert_eq!(t, scaling_table().unwrap());
    }

    #[test]
    fn inconsistent_graph_names_node() {
        let mut g = build_network(&config_for_phi(-4).unwrap()).unwrap().graph().unwrap();
        let id = g.nodes.iter().position(|n| n.name == "head.first").unwrap();
        g.nodes[id].input_shapes[0][1] += 1;
        match count_costs(&g).unwrap_err() {
            Error::Graph { node, .. } => assert_eq!(node, "head.first"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ae_rows() {
        let h0 = ae_score(64.8, 22.95, 15.0).unwrap();
        assert_eq!(round_to(h0.efficiency, 3), 1.530);
        assert_eq!(round_to(h0.ae, 3), 99.144);
        assert_eq!(round_to(ae_score(35.7, 50.96, 15.0).unwrap().tabulated_ae(), 3), 121.273);
        assert_eq!(ae_score(50.0, 0.0, 15.0).unwrap().ae, 0.0);
        assert!(ae_score(50.0, 10.0, 0.0).is_err());
        assert!(ae_score(50.0, 10.0, -3.0).is_err());
    }

    #[test]
    fn check_picks_convention() {
        let r = CostReport {
            model_name: "x".into(),
            phi: 0,
            input_resolution: 512,
            params: 23_000_000,
            macs: 12_800_000_000,
            flops_2x: 25_600_000_000,
            elementwise_ops: 0,
            per_module: vec![],
        };
        let c = check_report(&r, &PUBLISHED_COSTS[0]);
        assert!(c.passed());
        assert_eq!(c.flop_convention, Some(FlopConvention::TwiceMacs));
    }

    #[test]
    fn text_formats() {
        let t = scaling_table().unwrap();
        let table = format_table(&t);
        assert_eq!(table.lines().count(), 6);
        assert!(table.contains("H-4"));
        let recs = format_records(&t);
        let back: Vec<CostReport> = recs.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, t);
    }
}
