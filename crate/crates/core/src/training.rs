//! Ground-truth rendering and the training objective: multi-resolution
//! heatmap MSE plus an associative-embedding grouping loss on the
//! quarter-resolution tag maps.

use crate::error::{Error, Result};
use crate::scaling::{ScaleConfig, JOINT_COUNT};
use crate::tensor::Tensor;

/// One person's annotated keypoints in input-pixel coordinates.
pub type PersonKeypoints = [Option<(f32, f32)>; JOINT_COUNT];

/// Gaussian std (quarter-resolution pixels); the half-resolution map uses twice this.
pub const DEFAULT_SIGMA: f32 = 2.0;
pub const HEATMAP_LOSS_WEIGHT: f64 = 1.0;
pub const GROUPING_LOSS_WEIGHT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTargets {
    /// `(1, 17, R/4, R/4)`.
    pub gt_heatmaps_quarter: Tensor,
    /// `(1, 17, R/2, R/2)`.
    pub gt_heatmaps_half: Tensor,
    /// Per person, per joint: flat `y * W + x` index into the quarter map.
    pub keypoint_index_lists: Vec<[Option<usize>; JOINT_COUNT]>,
}

/// Renders unnormalized Gaussians (peak 1.0) at every visible keypoint, on
/// the cell `floor(coord / stride)` of each map. Overlaps take the maximum.
pub fn make_targets(persons: &[PersonKeypoints], config: &ScaleConfig, sigma: f32) -> Result<TrainingTargets> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let r = config.input_resolution;
    let quarter = r / 4;
    let half = r / 2;
    let mut hq = Tensor::zeros([1, JOINT_COUNT, quarter, quarter]);
    let mut hh = Tensor::zeros([1, JOINT_COUNT, half, half]);
    let mut index_lists = Vec::with_capacity(persons.len());

    for (p, person) in persons.iter().enumerate() {
        let mut indices = [None; JOINT_COUNT];
        for (j, kp) in person.iter().enumerate() {
            let Some((x, y)) = *kp else { continue };
            let inside = |v: f32| v >= 0.0 && v < r as f32;
            if !inside(x) || !inside(y) {
                return Err(Error::KeypointOutOfBounds {
                    person: p,
                    joint: j,
                    x,
                    y,
                    bound: r,
                });
            }
            let (qx, qy) = ((x / 4.0) as usize, (y / 4.0) as usize);
            draw_gaussian(hq.plane_mut(0, j), quarter, qx, qy, sigma);
            draw_gaussian(hh.plane_mut(0, j), half, (x / 2.0) as usize, (y / 2.0) as usize, 2.0 * sigma);
            indices[j] = Some(qy * quarter + qx);
        }
        index_lists.push(indices);
    }
    Ok(TrainingTargets {
        gt_heatmaps_quarter: hq,
        gt_heatmaps_half: hh,
        keypoint_index_lists: index_lists,
    })
}

fn draw_gaussian(plane: &mut [f32], size: usize, cx: usize, cy: usize, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as usize;
    let two_var = 2.0 * sigma * sigma;
    for y in cy.saturating_sub(radius)..(cy + radius + 1).min(size) {
        for x in cx.saturating_sub(radius)..(cx + radius + 1).min(size) {
            let dx = x as f32 - cx as f32;
            let dy = y as f32 - cy as f32;
            let v = (-(dx * dx + dy * dy) / two_var).exp();
            let cell = &mut plane[y * size + x];
            *cell = cell.max(v);
        }
    }
}

fn mse(pred: &Tensor, target: &Tensor, edge: &str) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape {
            edge: edge.into(),
            expected: target.dims(),
            actual: pred.dims(),
        });
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Sum over both resolutions of the per-resolution mean squared error.
pub fn heatmap_loss(pred_quarter: &Tensor, pred_half: &Tensor, targets: &TrainingTargets) -> Result<f64> {
    Ok(mse(pred_quarter, &targets.gt_heatmaps_quarter, "heatmap_loss quarter")?
        + mse(pred_half, &targets.gt_heatmaps_half, "heatmap_loss half")?)
}

/// Pull: mean over persons of the mean squared deviation of their keypoint
/// tags from the person's mean tag. Push: mean over person pairs of
/// `exp(-(mu_i - mu_j)^2 / 2)`. Persons without keypoints are skipped.
pub fn grouping_loss(tags: &Tensor, keypoint_index_lists: &[[Option<usize>; JOINT_COUNT]]) -> Result<f64> {
    let [_, c, h, w] = tags.dims();
    if tags.batch() != 1 || c != JOINT_COUNT {
        return Err(Error::Shape {
            edge: "grouping_loss tags".into(),
            expected: [1, JOINT_COUNT, h, w],
            actual: tags.dims(),
        });
    }
    let mut means = Vec::with_capacity(keypoint_index_lists.len());
    let mut pull = 0.0;
    for (p, person) in keypoint_index_lists.iter().enumerate() {
        let mut values = Vec::new();
        for (j, idx) in person.iter().enumerate() {
            if let Some(i) = *idx {
                let plane = tags.plane(0, j);
                let v = *plane.get(i).ok_or_else(|| {
                    Error::Domain(format!("person {p} joint {j}: index {i} outside {h}x{w} tag map"))
                })?;
                values.push(v as f64);
            }
        }
        if values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        pull += values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        means.push(mean);
    }
    if means.is_empty() {
        return Ok(0.0);
    }
    pull /= means.len() as f64;

    let mut push = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            push += (-(means[i] - means[j]).powi(2) / 2.0).exp();
            pairs += 1;
        }
    }
    if pairs > 0 {
        push /= pairs as f64;
    }
    Ok(pull + push)
}

pub fn total_loss(heatmap_loss: f64, grouping_loss: f64) -> f64 {
    HEATMAP_LOSS_WEIGHT * heatmap_loss + GROUPING_LOSS_WEIGHT * grouping_loss
}
