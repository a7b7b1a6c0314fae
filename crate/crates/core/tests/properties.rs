//! Cross-module properties exercised through the public API.

use effhrnet::analysis::{count_costs, model_costs};
use effhrnet::decoder::{aggregate_scales, decode, group_by_tags, DecodeParams, Keypoint, PoseSet};
use effhrnet::graph::Op;
use effhrnet::kernels::{self, Activation, BatchNormParams};
use effhrnet::network::build_network;
use effhrnet::reference;
use effhrnet::scaling::{config_for_phi, supported_phis};
use effhrnet::synthetic::random_scene;
use effhrnet::training::{heatmap_loss, make_targets, DEFAULT_SIGMA};
use effhrnet::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_loops(
        cin in 1usize..5, cout in 1usize..5, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, h in 5usize..9, w in 5usize..9, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = Tensor::random_uniform([1, cin, h, w], &mut r, -1.0, 1.0);
        let wt = Tensor::random_uniform([cout, cin, k, k], &mut r, -1.0, 1.0);
        let bias: Vec<f32> = (0..cout).map(|i| i as f32 * 0.1).collect();
        let fast = kernels::conv2d(&x, &wt, Some(&bias), stride, k / 2, 1).unwrap();
        let slow = reference::conv2d(&x, &wt, Some(&bias), stride, k / 2, 1);
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-5);
    }

    #[test]
    fn transposed_conv_inverts_conv_shape(
        h in 1usize..9, k in 1usize..6, stride in 1usize..4, padding in 0usize..3, seed in any::<u64>(),
    ) {
        let Some(n) = kernels::conv_transposed_output_len(h, k, stride, padding) else { return Ok(()) };
        prop_assert_eq!(kernels::conv_output_len(n, k, stride, padding), Some(h));
        let mut r = rng(seed);
        let x = Tensor::random_uniform([1, 2, h, h], &mut r, -1.0, 1.0);
        let wt = Tensor::random_uniform([2, 3, k, k], &mut r, -1.0, 1.0);
        if let Ok(y) = kernels::conv2d_transposed(&x, &wt, stride, padding) {
            prop_assert_eq!(y.dims(), [1, 3, n, n]);
        }
    }

    #[test]
    fn elementwise_kernels_keep_dims_and_are_deterministic(
        dims in [1usize..3, 1..5, 1..7, 1..7], seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = Tensor::random_uniform(dims, &mut r, -3.0, 3.0);
        for kind in [Activation::Relu, Activation::Swish, Activation::Sigmoid] {
            let a = kernels::activation(&x, kind);
            prop_assert_eq!(a.dims(), dims);
            prop_assert!(a.bit_eq(&kernels::activation(&x, kind)));
        }
        let mut p = BatchNormParams::identity(dims[1]);
        p.variance = (0..dims[1]).map(|c| 0.5 + c as f32).collect();
        let b = kernels::batchnorm_inference(&x, &p).unwrap();
        prop_assert_eq!(b.dims(), dims);
        prop_assert!(b.bit_eq(&kernels::batchnorm_inference(&x, &p).unwrap()));
    }

    #[test]
    fn heatmap_loss_vanishes_only_at_targets(seed in 0u64..1000, idx in any::<prop::sample::Index>()) {
        let cfg = config_for_phi(-4).unwrap().with_resolution(64).unwrap();
        let scene = random_scene(&cfg, 1, 4.0, 5.0, &mut rng(seed));
        let t = make_targets(&scene.persons, &cfg, DEFAULT_SIGMA).unwrap();
        let exact = heatmap_loss(&t.gt_heatmaps_quarter, &t.gt_heatmaps_half, &t).unwrap();
        prop_assert_eq!(exact, 0.0);
        let mut off = t.gt_heatmaps_half.clone();
        let i = idx.index(off.len());
        off.data_mut()[i] += 0.5;
        prop_assert!(heatmap_loss(&t.gt_heatmaps_quarter, &off, &t).unwrap() > 0.0);
    }

    #[test]
    fn tag_offset_does_not_change_decoding(seed in 0u64..500, persons in 1usize..4, shift in -50.0f32..50.0) {
        let cfg = config_for_phi(-4).unwrap().with_resolution(128).unwrap();
        let scene = random_scene(&cfg, persons, 20.0, 5.0, &mut rng(seed));
        let (first, refined) = scene.render().unwrap();
        let mut shifted = first.clone();
        let plane = first.plane_len();
        for v in &mut shifted.data_mut()[17 * plane..] {
            *v += shift;
        }
        let params = DecodeParams::default();
        let a = decode(&first, &refined, &cfg, &params).unwrap();
        let b = decode(&shifted, &refined, &cfg, &params).unwrap();
        prop_assert_eq!(layout(&a), layout(&b));
    }

    #[test]
    fn grouping_ignores_order_of_equal_scores(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let keypoints: Vec<Keypoint> = (0..n)
            .map(|i| Keypoint {
                joint_id: i % 3,
                x: (i * 7) as f32,
                y: (i * 3) as f32,
                score: 0.5,
                tag: vec![(i % 4) as f32 * 0.6],
            })
            .collect();
        let base = layout(&group_by_tags(&keypoints, 1.0).unwrap());
        let mut shuffled = keypoints.clone();
        shuffled.shuffle(&mut r);
        prop_assert_eq!(layout(&group_by_tags(&shuffled, 1.0).unwrap()), base);
    }

    #[test]
    fn aggregating_copies_is_identity(k in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let heat = Tensor::random_uniform([1, 17, 8, 8], &mut r, 0.0, 1.0);
        let tags = Tensor::random_uniform([1, 17, 8, 8], &mut r, -2.0, 2.0);
        let agg = aggregate_scales(&vec![heat.clone(); k], &vec![tags.clone(); k], 8).unwrap();
        prop_assert!(agg.heatmaps.max_abs_diff(&heat) <= 1e-6);
        prop_assert_eq!(agg.scale_count(), k);
        for s in 0..k {
            for j in 0..17 {
                prop_assert_eq!(agg.tags.plane(s, j), tags.plane(0, j));
            }
        }
    }
}

/// Persons as sorted lists of (joint, x, y), order independent.
fn layout(poses: &PoseSet) -> Vec<Vec<(usize, u32, u32)>> {
    let mut v: Vec<Vec<(usize, u32, u32)>> = poses
        .persons
        .iter()
        .map(|p| p.keypoints.iter().map(|k| (k.joint_id, k.x.to_bits(), k.y.to_bits())).collect())
        .collect();
    v.sort();
    v
}

#[test]
fn configs_shrink_with_phi() {
    let configs: Vec<_> = supported_phis().map(|p| config_for_phi(p).unwrap()).collect();
    for pair in configs.windows(2) {
        let (big, small) = (&pair[0], &pair[1]);
        assert!(small.input_resolution <= big.input_resolution);
        assert!(small.branch_widths.iter().zip(big.branch_widths).all(|(a, b)| *a <= b));
        assert!(small.stage_repeats.iter().zip(big.stage_repeats).all(|(a, b)| *a <= b));
    }
    for c in &configs {
        assert_eq!(c.tag_size * 2, c.heatmap_size);
        assert_eq!(c.input_resolution % 32, 0);
    }
}

#[test]
fn cost_totals_match_independent_recount() {
    for phi in supported_phis() {
        let graph = build_network(&config_for_phi(phi).unwrap()).unwrap().graph().unwrap();
        let report = count_costs(&graph).unwrap();
        let (mut params, mut macs) = (0u64, 0u64);
        for node in &graph.nodes {
            let spatial = |d: [usize; 4]| (d[0] * d[2] * d[3]) as u64;
            if let Some((w, bias)) = node.op.param_shapes(&node.input_shapes) {
                let weights: u64 = w.iter().map(|&x| x as u64).product();
                params += weights + bias as u64;
                macs += weights
                    * match node.op {
                        Op::ConvTranspose2d { .. } => spatial(node.input_shapes[0]),
                        Op::Dense { .. } => node.output_shape[0] as u64,
                        _ => spatial(node.output_shape),
                    };
            }
            if node.op == Op::BatchNorm {
                let d = node.output_shape;
                params += 4 * d[1] as u64;
                macs += 2 * (d[1] as u64) * spatial(d);
            }
        }
        assert_eq!(report.params, params, "phi {phi}");
        assert_eq!(report.macs, macs, "phi {phi}");
        assert_eq!(report.flops_2x, 2 * report.macs);
        assert_eq!(report.per_module.iter().map(|m| m.params).sum::<u64>(), report.params);
        assert_eq!(model_costs(phi).unwrap(), report);
    }
}

#[test]
fn params_fall_with_phi() {
    let params: Vec<u64> = supported_phis().map(|p| model_costs(p).unwrap().params).collect();
    assert!(params.windows(2).all(|w| w[1] < w[0]), "{params:?}");
}
