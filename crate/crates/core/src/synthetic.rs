//! Ideal network outputs for planted poses: Gaussian heatmaps from
//! [`make_targets`] and a constant tag per person.

use rand::Rng;

use crate::decoder::PoseSet;
use crate::error::Result;
use crate::head::FIRST_HEAD_CHANNELS;
use crate::scaling::{ScaleConfig, JOINT_COUNT};
use crate::tensor::Tensor;
use crate::training::{make_targets, PersonKeypoints, DEFAULT_SIGMA};

/// Distance from the image border for planted keypoints, in pixels.
const MARGIN: f32 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub config: ScaleConfig,
    pub persons: Vec<PersonKeypoints>,
    /// One tag value per person.
    pub tags: Vec<f32>,
}

impl SyntheticScene {
    /// `(first_head, refined_heatmaps)` as the network would ideally emit.
    pub fn render(&self) -> Result<(Tensor, Tensor)> {
        let targets = make_targets(&self.persons, &self.config, DEFAULT_SIGMA)?;
        let t = self.config.tag_size;
        let mut first = Tensor::zeros([1, FIRST_HEAD_CHANNELS, t, t]);
        let plane = t * t;
        first.data_mut()[..JOINT_COUNT * plane].copy_from_slice(targets.gt_heatmaps_quarter.data());
        // Paint a 3x3 patch of each tag, then rewrite the exact cells so a
        // close neighbour's patch never hides them.
        for pass in [1usize, 0] {
            for (p, indices) in targets.keypoint_index_lists.iter().enumerate() {
                for (j, idx) in indices.iter().enumerate() {
                    let Some(idx) = *idx else { continue };
                    let (cy, cx) = (idx / t, idx % t);
                    let tags = first.plane_mut(0, JOINT_COUNT + j);
                    for y in cy.saturating_sub(pass)..(cy + pass + 1).min(t) {
                        for x in cx.saturating_sub(pass)..(cx + pass + 1).min(t) {
                            tags[y * t + x] = self.tags[p];
                        }
                    }
                }
            }
        }
        Ok((first, targets.gt_heatmaps_half))
    }

    pub fn planted_count(&self) -> usize {
        self.persons.iter().map(|p| p.iter().flatten().count()).sum()
    }
}

/// Random scene with `person_count` persons. Keypoints of the same joint
/// are more than `min_separation` pixels apart; person tags are `spacing`
/// apart starting at a random offset.
pub fn random_scene<R: Rng + ?Sized>(
    config: &ScaleConfig,
    person_count: usize,
    min_separation: f32,
    tag_spacing: f32,
    rng: &mut R,
) -> SyntheticScene {
    let hi = config.input_resolution as f32 - MARGIN;
    let mut persons: Vec<PersonKeypoints> = Vec::with_capacity(person_count);
    for _ in 0..person_count {
        let mut person = [None; JOINT_COUNT];
        for (j, slot) in person.iter_mut().enumerate() {
            *slot = loop {
                // Whole pixels keep the rendered peaks symmetric.
                let x = rng.gen_range(MARGIN..hi).floor();
                let y = rng.gen_range(MARGIN..hi).floor();
                let clear = persons.iter().all(|other: &PersonKeypoints| {
                    other[j].map_or(true, |(ox, oy)| ((ox - x).powi(2) + (oy - y).powi(2)).sqrt() > min_separation)
                });
                if clear {
                    break Some((x, y));
                }
            };
        }
        persons.push(person);
    }
    let offset = rng.gen_range(-10.0..10.0f32);
    let tags = (0..person_count).map(|p| offset + tag_spacing * p as f32).collect();
    SyntheticScene {
        config: config.clone(),
        persons,
        tags,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchReport {
    pub planted_persons: usize,
    pub decoded_persons: usize,
    pub planted_joints: usize,
    /// Planted joints found within tolerance in the decoded person whose tag
    /// is nearest the planted person's tag.
    pub recovered_joints: usize,
}

impl MatchReport {
    pub fn joint_recall(&self) -> f64 {
        if self.planted_joints == 0 {
            1.0
        } else {
            self.recovered_joints as f64 / self.planted_joints as f64
        }
    }
}

pub fn match_poses(scene: &SyntheticScene, poses: &PoseSet, tolerance: f32) -> MatchReport {
    let mut recovered = 0;
    for (p, planted) in scene.persons.iter().enumerate() {
        let tag = scene.tags[p];
        let decoded = poses.persons.iter().min_by(|a, b| {
            let d = |q: &crate::decoder::Person| {
                let t: f32 = q.keypoints.iter().map(|k| k.tag[0]).sum::<f32>() / q.keypoints.len() as f32;
                (t - tag).abs()
            };
            d(a).total_cmp(&d(b))
        });
        let Some(decoded) = decoded else { continue };
        for (j, kp) in planted.iter().enumerate() {
            let Some((x, y)) = *kp else { continue };
            if let Some(k) = decoded.joint(j) {
                if ((k.x - x).powi(2) + (k.y - y).powi(2)).sqrt() <= tolerance {
                    recovered += 1;
                }
            }
        }
    }
    MatchReport {
        planted_persons: scene.persons.len(),
        decoded_persons: poses.len(),
        planted_joints: scene.planted_count(),
        recovered_joints: recovered,
    }
}
