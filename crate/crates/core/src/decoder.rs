//! Bottom-up decoding: heatmap peaks, greedy grouping by tag distance, and
//! multi-scale aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::FIRST_HEAD_CHANNELS;
use crate::kernels::{maxpool_window, upsample_nearest};
use crate::par::map_collect;
use crate::scaling::{ScaleConfig, JOINT_COUNT};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub joint_id: usize,
    /// Input-image pixels.
    pub x: f32,
    pub y: f32,
    pub score: f32,
    /// One entry per aggregated scale.
    pub tag: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Person {
    /// Mean keypoint score.
    pub score: f32,
    /// Sorted by joint id, at most one per joint.
    pub keypoints: Vec<Keypoint>,
}

impl Person {
    pub fn joint(&self, joint_id: usize) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.joint_id == joint_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub persons: Vec<Person>,
}

impl PoseSet {
    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub nms_window: usize,
    pub top_k: usize,
    pub threshold: f32,
    pub tag_threshold: f32,
    /// Quarter-pixel shift toward the higher horizontal/vertical neighbour.
    pub refine: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            nms_window: 5,
            top_k: 30,
            threshold: 0.1,
            tag_threshold: 1.0,
            refine: true,
        }
    }
}

/// A local maximum in map coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub joint_id: usize,
    pub row: usize,
    pub col: usize,
    pub value: f32,
}

/// Per joint: cells equal to their window maximum and at least `threshold`,
/// highest first, ties by (row, col), at most `top_k`.
pub fn extract_peaks(heatmaps: &Tensor, nms_window: usize, top_k: usize, threshold: f32) -> Result<Vec<Vec<Peak>>> {
    if heatmaps.batch() != 1 {
        return Err(Error::Shape {
            edge: "extract_peaks".into(),
            expected: [1, heatmaps.channels(), heatmaps.height(), heatmaps.width()],
            actual: heatmaps.dims(),
        });
    }
    let pooled = maxpool_window(heatmaps, nms_window)?;
    let w = heatmaps.width();
    let joints: Vec<usize> = (0..heatmaps.channels()).collect();
    Ok(map_collect(&joints, |&j| {
        let mut peaks: Vec<Peak> = heatmaps
            .plane(0, j)
            .iter()
            .zip(pooled.plane(0, j))
            .enumerate()
            .filter(|(_, (&v, &m))| v == m && v >= threshold)
            .map(|(i, (&v, _))| Peak {
                joint_id: j,
                row: i / w,
                col: i % w,
                value: v,
            })
            .collect();
        peaks.sort_by(|a, b| b.value.total_cmp(&a.value).then((a.row, a.col).cmp(&(b.row, b.col))));
        peaks.truncate(top_k);
        peaks
    }))
}

fn l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

struct Building {
    keypoints: Vec<Keypoint>,
    tag_sum: Vec<f32>,
}

impl Building {
    fn mean_tag(&self) -> Vec<f32> {
        let n = self.keypoints.len() as f32;
        self.tag_sum.iter().map(|s| s / n).collect()
    }

    fn has(&self, joint: usize) -> bool {
        self.keypoints.iter().any(|k| k.joint_id == joint)
    }

    fn push(&mut self, k: Keypoint) {
        for (s, t) in self.tag_sum.iter_mut().zip(&k.tag) {
            *s += t;
        }
        self.keypoints.push(k);
    }
}

/// Greedy grouping. Joints are visited in id order, and within a joint the
/// keypoints by descending score (ties by position). Each keypoint joins the
/// nearest person (by running mean tag) that lacks its joint, if within
/// `tag_threshold`; otherwise it starts a new person.
pub fn group_by_tags(keypoints: &[Keypoint], tag_threshold: f32) -> Result<PoseSet> {
    let dim = keypoints.first().map_or(0, |k| k.tag.len());
    if let Some(k) = keypoints.iter().find(|k| k.tag.len() != dim) {
        return Err(Error::Domain(format!(
            "tag length {} for joint {} differs from {dim}",
            k.tag.len(),
            k.joint_id
        )));
    }
    let mut order: Vec<&Keypoint> = keypoints.iter().collect();
    order.sort_by(|a, b| {
        a.joint_id
            .cmp(&b.joint_id)
            .then(b.score.total_cmp(&a.score))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });

    let mut persons: Vec<Building> = Vec::new();
    for k in order {
        let best = persons
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.has(k.joint_id))
            .map(|(i, p)| (i, l2(&p.mean_tag(), &k.tag)))
            .fold(None, |best: Option<(usize, f32)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        match best {
            Some((i, d)) if d <= tag_threshold => persons[i].push(k.clone()),
            _ => persons.push(Building {
                keypoints: vec![k.clone()],
                tag_sum: k.tag.clone(),
            }),
        }
    }

    let persons = persons
        .into_iter()
        .map(|mut p| {
            p.keypoints.sort_by_key(|k| k.joint_id);
            let score = p.keypoints.iter().map(|k| k.score).sum::<f32>() / p.keypoints.len() as f32;
            Person {
                score,
                keypoints: p.keypoints,
            }
        })
        .collect();
    Ok(PoseSet { persons })
}

/// Averaged heatmaps `(1, 17, T, T)` and per-scale tags stacked along the
/// batch axis, `(K, 17, T, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleAggregate {
    pub heatmaps: Tensor,
    pub tags: Tensor,
}

impl ScaleAggregate {
    pub fn scale_count(&self) -> usize {
        self.tags.batch()
    }

    pub fn tag_at(&self, joint: usize, y: usize, x: usize) -> Vec<f32> {
        (0..self.scale_count()).map(|s| self.tags.get(s, joint, y, x)).collect()
    }
}

fn resize_to(t: &Tensor, target: usize, what: &str) -> Result<Tensor> {
    let [n, c, h, w] = t.dims();
    if n != 1 || h != w || h == 0 || target % h != 0 {
        return Err(Error::Shape {
            edge: format!("{what} -> aggregate_scales"),
            expected: [1, c, target, target],
            actual: t.dims(),
        });
    }
    upsample_nearest(t, target / h)
}

pub fn aggregate_scales(heatmaps_per_scale: &[Tensor], tags_per_scale: &[Tensor], target_size: usize) -> Result<ScaleAggregate> {
    if heatmaps_per_scale.is_empty() || heatmaps_per_scale.len() != tags_per_scale.len() {
        return Err(Error::Domain(format!(
            "need matching non-empty scale lists, got {} heatmaps and {} tags",
            heatmaps_per_scale.len(),
            tags_per_scale.len()
        )));
    }
    let k = heatmaps_per_scale.len();
    let mut sum: Option<Tensor> = None;
    let mut tags = Tensor::zeros([k, JOINT_COUNT, target_size, target_size]);
    let plane = target_size * target_size * JOINT_COUNT;
    for (s, (hm, tg)) in heatmaps_per_scale.iter().zip(tags_per_scale).enumerate() {
        let hm = resize_to(hm, target_size, "heatmaps")?;
        let tg = resize_to(tg, target_size, "tags")?;
        if hm.channels() != JOINT_COUNT || tg.channels() != JOINT_COUNT {
            return Err(Error::Shape {
                edge: "aggregate_scales channels".into(),
                expected: [1, JOINT_COUNT, target_size, target_size],
                actual: if hm.channels() != JOINT_COUNT { hm.dims() } else { tg.dims() },
            });
        }
        tags.data_mut()[s * plane..(s + 1) * plane].copy_from_slice(tg.data());
        sum = Some(match sum {
            None => hm,
            Some(mut acc) => {
                acc.data_mut().iter_mut().zip(hm.data()).for_each(|(a, b)| *a += b);
                acc
            }
        });
    }
    let mut heatmaps = sum.expect("at least one scale");
    if k > 1 {
        let inv = k as f32;
        heatmaps.data_mut().iter_mut().for_each(|v| *v /= inv);
    }
    Ok(ScaleAggregate { heatmaps, tags })
}

fn refine_offset(plane: &[f32], w: usize, h: usize, row: usize, col: usize) -> (f32, f32) {
    let at = |y: usize, x: usize| plane[y * w + x];
    let step = |lo: Option<f32>, hi: Option<f32>| match (lo, hi) {
        (Some(l), Some(r)) if r > l => 0.25,
        (Some(l), Some(r)) if l > r => -0.25,
        _ => 0.0,
    };
    let dx = step(
        col.checked_sub(1).map(|x| at(row, x)),
        (col + 1 < w).then(|| at(row, col + 1)),
    );
    let dy = step(
        row.checked_sub(1).map(|y| at(y, col)),
        (row + 1 < h).then(|| at(row + 1, col)),
    );
    (dx, dy)
}

/// Converts peaks on `heatmaps` into keypoints in input pixels, reading tags
/// through `tag_of(joint, row, col)`.
fn peaks_to_keypoints(
    heatmaps: &Tensor,
    input_resolution: usize,
    params: &DecodeParams,
    tag_of: impl Fn(usize, usize, usize) -> Vec<f32>,
) -> Result<Vec<Keypoint>> {
    let (h, w) = (heatmaps.height(), heatmaps.width());
    let scale = input_resolution as f32 / w as f32;
    let limit = input_resolution as f32 - 1.0;
    let peaks = extract_peaks(heatmaps, params.nms_window, params.top_k, params.threshold)?;
    let mut out = Vec::new();
    for p in peaks.into_iter().flatten() {
        let (dx, dy) = if params.refine {
            refine_offset(heatmaps.plane(0, p.joint_id), w, h, p.row, p.col)
        } else {
            (0.0, 0.0)
        };
        out.push(Keypoint {
            joint_id: p.joint_id,
            x: ((p.col as f32 + dx) * scale).clamp(0.0, limit),
            y: ((p.row as f32 + dy) * scale).clamp(0.0, limit),
            score: p.value.clamp(0.0, 1.0),
            tag: tag_of(p.joint_id, p.row, p.col),
        });
    }
    Ok(out)
}

/// Single-scale decode from the refined half-resolution heatmaps, with tags
/// read from the first head at the halved peak location.
pub fn decode(first_head_output: &Tensor, refined_heatmaps: &Tensor, config: &ScaleConfig, params: &DecodeParams) -> Result<PoseSet> {
    let first_expected = [1, FIRST_HEAD_CHANNELS, config.tag_size, config.tag_size];
    if first_head_output.dims() != first_expected {
        return Err(Error::Shape {
            edge: "first head -> decode".into(),
            expected: first_expected,
            actual: first_head_output.dims(),
        });
    }
    let hm_expected = [1, JOINT_COUNT, config.heatmap_size, config.heatmap_size];
    if refined_heatmaps.dims() != hm_expected {
        return Err(Error::Shape {
            edge: "second head -> decode".into(),
            expected: hm_expected,
            actual: refined_heatmaps.dims(),
        });
    }
    let keypoints = peaks_to_keypoints(refined_heatmaps, config.input_resolution, params, |j, r, c| {
        vec![first_head_output.get(0, JOINT_COUNT + j, r / 2, c / 2)]
    })?;
    group_by_tags(&keypoints, params.tag_threshold)
}

/// One scale's network outputs.
#[derive(Clone, Debug)]
pub struct ScaleOutput {
    pub first_head: Tensor,
    pub refined_heatmaps: Tensor,
}

/// Multi-scale decode: refined heatmaps are averaged and tags stacked at the
/// configured heatmap size; peaks come from the averaged map.
pub fn decode_multiscale(scales: &[ScaleOutput], config: &ScaleConfig, params: &DecodeParams) -> Result<PoseSet> {
    let mut heatmaps = Vec::with_capacity(scales.len());
    let mut tags = Vec::with_capacity(scales.len());
    for s in scales {
        if s.first_head.channels() != FIRST_HEAD_CHANNELS {
            return Err(Error::Shape {
                edge: "first head -> decode_multiscale".into(),
                expected: [1, FIRST_HEAD_CHANNELS, s.first_head.height(), s.first_head.width()],
                actual: s.first_head.dims(),
            });
        }
        heatmaps.push(s.refined_heatmaps.clone());
        tags.push(s.first_head.channel_slice(JOINT_COUNT, JOINT_COUNT)?);
    }
    let agg = aggregate_scales(&heatmaps, &tags, config.heatmap_size)?;
    let keypoints = peaks_to_keypoints(&agg.heatmaps, config.input_resolution, params, |j, r, c| agg.tag_at(j, r, c))?;
    group_by_tags(&keypoints, params.tag_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::config_for_phi;
    use proptest::prelude::*;

    fn kp(joint_id: usize, x: f32, y: f32, score: f32, tag: f32) -> Keypoint {
        Keypoint {
            joint_id,
            x,
            y,
            score,
            tag: vec![tag],
        }
    }

    fn brute_peaks(t: &Tensor, window: usize, threshold: f32) -> Vec<(usize, usize, f32)> {
        let (h, w) = (t.height() as isize, t.width() as isize);
        let r = (window / 2) as isize;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = t.get(0, 0, y as usize, x as usize);
                let mut is_max = true;
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        if t.get(0, 0, yy as usize, xx as usize) > v {
                            is_max = false;
                        }
                    }
                }
                if is_max && v >= threshold {
                    out.push((y as usize, x as usize, v));
                }
            }
        }
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        out
    }

    #[test]
    fn single_peak_and_empty_map() {
        let t = Tensor::from_fn([1, 1, 9, 9], |[_, _, y, x]| {
            (-(((y as f32 - 3.0).powi(2) + (x as f32 - 6.0).powi(2)) / 8.0)).exp()
        });
        let p = extract_peaks(&t, 5, 30, 0.1).unwrap();
        assert_eq!(p[0].len(), 1);
        assert_eq!((p[0][0].row, p[0][0].col, p[0][0].value), (3, 6, 1.0));
        assert!(extract_peaks(&Tensor::zeros([1, 17, 8, 8]), 5, 30, 0.1).unwrap().iter().all(Vec::is_empty));
        assert!(extract_peaks(&t, 4, 30, 0.1).is_err());
    }

    #[test]
    fn equal_peaks_tie_break_by_position() {
        let mut t = Tensor::zeros([1, 1, 12, 12]);
        t.set(0, 0, 9, 2, 0.8);
        t.set(0, 0, 1, 10, 0.8);
        t.set(0, 0, 1, 3, 0.8);
        let p = extract_peaks(&t, 5, 30, 0.1).unwrap();
        let got: Vec<_> = p[0].iter().map(|p| (p.row, p.col, p.value)).collect();
        assert_eq!(got, brute_peaks(&t, 5, 0.1));
        assert_eq!(got.iter().map(|g| (g.0, g.1)).collect::<Vec<_>>(), vec![(1, 3), (1, 10), (9, 2)]);
        assert_eq!(extract_peaks(&t, 5, 2, 0.1).unwrap()[0].len(), 2);
    }

    proptest! {
        #[test]
        fn peaks_match_brute_force(
            vals in proptest::collection::vec(0u8..6, 100),
            window in prop_oneof![Just(1usize), Just(3), Just(5)],
        ) {
            let t = Tensor::new([1, 1, 10, 10], vals.iter().map(|&v| v as f32 / 5.0).collect()).unwrap();
            let got: Vec<_> = extract_peaks(&t, window, 1000, 0.1).unwrap()[0]
                .iter().map(|p| (p.row, p.col, p.value)).collect();
            prop_assert_eq!(got, brute_peaks(&t, window, 0.1));
        }
    }

    /// Exhaustive optimum: label every keypoint with a person id so no
    /// person repeats a joint, minimising the summed distance of tags to
    /// their person mean plus `penalty` per person.
    fn optimal_partition(kps: &[Keypoint], penalty: f32) -> Vec<Vec<usize>> {
        let n = kps.len();
        let mut best = (f32::INFINITY, Vec::new());
        let mut labels = vec![0usize; n];
        fn rec(i: usize, used: usize, labels: &mut Vec<usize>, kps: &[Keypoint], penalty: f32, best: &mut (f32, Vec<Vec<usize>>)) {
            if i == kps.len() {
                let mut groups = vec![Vec::new(); used];
                for (k, &l) in labels.iter().enumerate() {
                    groups[l].push(k);
                }
                let mut cost = penalty * used as f32;
                for g in &groups {
                    let mean = g.iter().map(|&k| kps[k].tag[0]).sum::<f32>() / g.len() as f32;
                    cost += g.iter().map(|&k| (kps[k].tag[0] - mean).abs()).sum::<f32>();
                }
                if cost < best.0 {
                    *best = (cost, groups);
                }
                return;
            }
            for l in 0..=used {
                if labels[..i].iter().zip(kps).any(|(&ll, k)| ll == l && k.joint_id == kps[i].joint_id) {
                    continue;
                }
                labels[i] = l;
                rec(i + 1, used.max(l + 1), labels, kps, penalty, best);
            }
        }
        rec(0, 0, &mut labels, kps, penalty, &mut best);
        best.1
    }

    fn membership(set: &PoseSet, kps: &[Keypoint]) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = set
            .persons
            .iter()
            .map(|p| {
                let mut g: Vec<usize> = p
                    .keypoints
                    .iter()
                    .map(|k| kps.iter().position(|o| o == k).unwrap())
                    .collect();
                g.sort();
                g
            })
            .collect();
        groups.sort();
        groups
    }

    #[test]
    fn two_clusters_match_oracle() {
        let kps = vec![
            kp(0, 10.0, 10.0, 0.9, 0.1),
            kp(0, 50.0, 10.0, 0.8, 5.1),
            kp(1, 12.0, 20.0, 0.7, -0.2),
            kp(1, 52.0, 20.0, 0.95, 4.9),
            kp(2, 14.0, 30.0, 0.6, 0.05),
            kp(3, 54.0, 30.0, 0.5, 5.0),
        ];
        let set = group_by_tags(&kps, 1.0).unwrap();
        assert_eq!(set.len(), 2);
        let mut oracle = optimal_partition(&kps, 1.0);
        oracle.iter_mut().for_each(|g| g.sort());
        oracle.sort();
        assert_eq!(membership(&set, &kps), oracle);
        for p in &set.persons {
            let mean = p.keypoints.iter().map(|k| k.score).sum::<f32>() / p.keypoints.len() as f32;
            assert_eq!(p.score, mean);
        }
    }

    #[test]
    fn identical_tags_one_person_and_empty() {
        let kps: Vec<_> = (0..17).map(|j| kp(j, j as f32, 1.0, 0.5, 2.0)).collect();
        let set = group_by_tags(&kps, 1.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.persons[0].keypoints.len(), 17);
        assert!(group_by_tags(&[], 1.0).unwrap().is_empty());
    }

    #[test]
    fn same_joint_never_shares_person() {
        let kps = vec![kp(4, 1.0, 1.0, 0.9, 0.0), kp(4, 30.0, 1.0, 0.9, 0.0)];
        assert_eq!(group_by_tags(&kps, 1.0).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn grouping_matches_oracle_when_separated(
            persons in proptest::collection::vec(
                (proptest::collection::vec(any::<bool>(), 3), -0.3f32..0.3), 1..4),
            shuffle in any::<u64>(),
        ) {
            let mut kps = Vec::new();
            for (p, (present, jitter)) in persons.iter().enumerate() {
                for (j, &on) in present.iter().enumerate() {
                    if on {
                        let t = 5.0 * p as f32 + jitter * (j as f32 / 3.0);
                        kps.push(kp(j, 10.0 * p as f32, j as f32, 0.5 + 0.1 * j as f32, t));
                    }
                }
            }
            let mut shuffled = kps.clone();
            let len = shuffled.len();
            if len > 1 {
                shuffled.rotate_left((shuffle % len as u64) as usize);
            }
            let set = group_by_tags(&shuffled, 1.0).unwrap();
            let mut oracle = optimal_partition(&kps, 1.0);
            oracle.iter_mut().for_each(|g| g.sort());
            oracle.sort();
            prop_assert_eq!(membership(&set, &kps), oracle);
        }

        #[test]
        fn grouping_shift_invariant(tags in proptest::collection::vec(-10.0f32..10.0, 8), shift in -100.0f32..100.0) {
            let shift = shift.round();
            let kps: Vec<_> = tags.iter().enumerate().map(|(i, &t)| kp(i % 4, i as f32, 0.0, 0.5, t.round())).collect();
            let moved: Vec<_> = kps.iter().map(|k| Keypoint { tag: vec![k.tag[0] + shift], ..k.clone() }).collect();
            prop_assert_eq!(membership(&group_by_tags(&kps, 1.0).unwrap(), &kps),
                            membership(&group_by_tags(&moved, 1.0).unwrap(), &moved));
        }
    }

    #[test]
    fn aggregate_cases() {
        let a = Tensor::from_fn([1, 17, 4, 4], |[_, c, y, x]| (c + y + x) as f32);
        let b = Tensor::from_fn([1, 17, 4, 4], |[_, c, y, x]| (c * y) as f32 - x as f32);
        let one = aggregate_scales(&[a.clone()], &[b.clone()], 4).unwrap();
        assert_eq!(one.heatmaps, a);
        assert_eq!(one.scale_count(), 1);
        assert_eq!(one.tag_at(3, 2, 1), vec![b.get(0, 3, 2, 1)]);

        let two = aggregate_scales(&[a.clone(), a.clone()], &[b.clone(), b.clone()], 4).unwrap();
        assert_eq!(two.heatmaps, a);
        assert_eq!(two.tag_at(5, 1, 1), vec![b.get(0, 5, 1, 1); 2]);

        let mixed = aggregate_scales(&[a.clone(), b.clone()], &[a.clone(), b.clone()], 4).unwrap();
        for (i, v) in mixed.heatmaps.data().iter().enumerate() {
            assert_eq!(*v, (a.data()[i] + b.data()[i]) / 2.0);
        }

        let small = Tensor::from_fn([1, 17, 2, 2], |[_, c, y, x]| (c * 4 + y * 2 + x) as f32);
        let up = aggregate_scales(&[small.clone()], &[small.clone()], 4).unwrap();
        assert_eq!(up.heatmaps.get(0, 2, 3, 3), small.get(0, 2, 1, 1));

        assert!(aggregate_scales(&[], &[], 4).is_err());
        assert!(aggregate_scales(&[Tensor::zeros([1, 17, 3, 3])], &[Tensor::zeros([1, 17, 3, 3])], 4).is_err());
    }

    #[test]
    fn decode_zero_and_shape_errors() {
        let cfg = config_for_phi(-4).unwrap().with_resolution(64).unwrap();
        let first = Tensor::zeros([1, 34, 16, 16]);
        let hm = Tensor::zeros([1, 17, 32, 32]);
        assert!(decode(&first, &hm, &cfg, &DecodeParams::default()).unwrap().is_empty());
        assert!(decode(&hm, &hm, &cfg, &DecodeParams::default()).is_err());
        assert!(decode(&first, &first, &cfg, &DecodeParams::default()).is_err());
    }

    #[test]
    fn refinement_moves_toward_higher_neighbour() {
        let mut plane = vec![0.0; 9];
        plane[4] = 1.0;
        plane[5] = 0.5;
        plane[1] = 0.3;
        assert_eq!(refine_offset(&plane, 3, 3, 1, 1), (0.25, -0.25));
        assert_eq!(refine_offset(&plane, 3, 3, 0, 0), (0.0, 0.0));
    }
}
