//! Compound scaling: maps the coefficient `phi` to the full model configuration.
//!
//! The published family covers `phi` in `-4..=0`. Those rows are stored as
//! constants because no single rounding rule reproduces every published width
//! (branch 4 at `phi = -1` is 206 while `ceil(256 * 0.8)` is 205). The closed
//! forms are exposed separately for extrapolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PHI: i32 = -4;
pub const MAX_PHI: i32 = 0;

/// Number of keypoint types predicted by the heads.
pub const JOINT_COUNT: usize = 17;

const BASE_RESOLUTION: i32 = 512;
const RESOLUTION_STEP: i32 = 32;
const BASE_BRANCH_WIDTHS: [usize; 4] = [32, 64, 128, 256];
const BRANCH_WIDTH_FACTOR: f64 = 1.25;

struct Row {
    phi: i32,
    input_resolution: usize,
    branch_widths: [usize; 4],
    stage_repeats: [usize; 3],
    classification_resolution: usize,
}

const TABLE: [Row; 5] = [
    Row { phi: 0, input_resolution: 512, branch_widths: [32, 64, 128, 256], stage_repeats: [1, 4, 3], classification_resolution: 224 },
    Row { phi: -1, input_resolution: 480, branch_widths: [26, 52, 103, 206], stage_repeats: [1, 3, 3], classification_resolution: 195 },
    Row { phi: -2, input_resolution: 448, branch_widths: [21, 42, 83, 166], stage_repeats: [1, 2, 3], classification_resolution: 170 },
    Row { phi: -3, input_resolution: 416, branch_widths: [17, 34, 67, 133], stage_repeats: [1, 1, 3], classification_resolution: 145 },
    Row { phi: -4, input_resolution: 384, branch_widths: [14, 27, 54, 107], stage_repeats: [1, 1, 2], classification_resolution: 128 },
];

fn row(phi: i32) -> Result<&'static Row> {
    TABLE.iter().find(|r| r.phi == phi).ok_or_else(|| Error::UnsupportedPhi {
        phi,
        reason: format!("valid range is {MIN_PHI}..={MAX_PHI}"),
    })
}

/// EfficientNet-style multipliers for the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneCoefficients {
    pub depth_mult: f64,
    pub width_mult: f64,
    pub resolution_mult: f64,
    pub phi: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub phi: i32,
    pub input_resolution: usize,
    pub branch_widths: [usize; 4],
    pub stage_repeats: [usize; 3],
    pub backbone: BackboneCoefficients,
    pub tag_size: usize,
    pub heatmap_size: usize,
}

impl ScaleConfig {
    pub fn model_name(&self) -> String {
        format!("H{}", self.phi)
    }

    /// Spatial size of branch `n` (1-based): `R / 2^(n+1)`.
    pub fn branch_resolution(&self, n: usize) -> usize {
        self.input_resolution >> (n + 1)
    }

    /// Same widths and depths at a different input size. Used to run the
    /// largest models at desk scale; head sizes follow the new resolution.
    pub fn with_resolution(&self, input_resolution: usize) -> Result<ScaleConfig> {
        check_resolution(input_resolution)?;
        Ok(ScaleConfig {
            input_resolution,
            tag_size: input_resolution / 4,
            heatmap_size: input_resolution / 2,
            ..self.clone()
        })
    }

    fn validate(&self) -> Result<()> {
        check_resolution(self.input_resolution)?;
        if !self.branch_widths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(format!(
                "branch widths {:?} must be strictly increasing",
                self.branch_widths
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_resolution(r: usize) -> Result<()> {
    if r == 0 || r % 32 != 0 {
        return Err(Error::config(format!(
            "input resolution {r} must be a positive multiple of 32"
        )));
    }
    Ok(())
}

/// The published configuration for `phi` in `-4..=0`.
pub fn config_for_phi(phi: i32) -> Result<ScaleConfig> {
    let r = row(phi)?;
    let cfg = ScaleConfig {
        phi,
        input_resolution: r.input_resolution,
        branch_widths: r.branch_widths,
        stage_repeats: r.stage_repeats,
        backbone: backbone_coefficients(phi),
        tag_size: r.input_resolution / 4,
        heatmap_size: r.input_resolution / 2,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Best-effort configuration from the closed-form rules, for any `phi` whose
/// input resolution stays at least 32. Table rows win inside `-4..=0`.
pub fn extrapolated_config(phi: i32) -> Result<ScaleConfig> {
    if (MIN_PHI..=MAX_PHI).contains(&phi) {
        return config_for_phi(phi);
    }
    let input_resolution = input_resolution(phi)?;
    let mut branch_widths = [0; 4];
    for (n, w) in branch_widths.iter_mut().enumerate() {
        *w = branch_width_formula(n + 1, phi);
    }
    let cfg = ScaleConfig {
        phi,
        input_resolution,
        branch_widths,
        stage_repeats: extrapolated_repeats(phi),
        backbone: backbone_coefficients(phi),
        tag_size: input_resolution / 4,
        heatmap_size: input_resolution / 2,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Continues the published schedule: the middle stage shrinks first, then the
/// last one, never below one block. Above the baseline the middle stage grows.
fn extrapolated_repeats(phi: i32) -> [usize; 3] {
    if phi > 0 {
        return [1, 4 + phi as usize, 3];
    }
    let mut repeats = [1i32, 4, 3];
    let mut remaining = -phi;
    for slot in [1, 2] {
        let step = remaining.min(repeats[slot] - 1);
        repeats[slot] -= step;
        remaining -= step;
    }
    repeats.map(|r| r as usize)
}

/// `512 + 32 * phi`, rejected when it falls below 32.
pub fn input_resolution(phi: i32) -> Result<usize> {
    let r = BASE_RESOLUTION + RESOLUTION_STEP * phi;
    if r < RESOLUTION_STEP {
        return Err(Error::UnsupportedPhi {
            phi,
            reason: format!("input resolution {r} is below {RESOLUTION_STEP}"),
        });
    }
    Ok(r as usize)
}

/// `ceil(base_n * 1.25^phi)` with base widths `(32, 64, 128, 256)`.
///
/// # Panics
/// If `n` is not in `1..=4`.
pub fn branch_width_formula(n: usize, phi: i32) -> usize {
    assert!((1..=4).contains(&n), "branch index {n} outside 1..=4");
    let scaled = BASE_BRANCH_WIDTHS[n - 1] as f64 * BRANCH_WIDTH_FACTOR.powi(phi);
    (scaled.ceil() as usize).max(1)
}

pub fn backbone_coefficients(phi: i32) -> BackboneCoefficients {
    BackboneCoefficients {
        depth_mult: 1.2f64.powi(phi),
        width_mult: 1.1f64.powi(phi),
        resolution_mult: 1.15f64.powi(phi),
        phi,
    }
}

pub fn stage_repeats(phi: i32) -> Result<[usize; 3]> {
    Ok(row(phi)?.stage_repeats)
}

/// Input size of the classification backbone (the compact EfficientNet
/// models). Stored, since rounding `224 * 1.15^phi` does not give 145 at -3.
pub fn classification_resolution(phi: i32) -> Result<usize> {
    Ok(row(phi)?.classification_resolution)
}

pub fn supported_phis() -> impl DoubleEndedIterator<Item = i32> {
    (MIN_PHI..=MAX_PHI).rev()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let c = config_for_phi(0).unwrap();
        assert_eq!((c.input_resolution, c.branch_widths, c.stage_repeats), (512, [32, 64, 128, 256], [1, 4, 3]));
        let c = config_for_phi(-3).unwrap();
        assert_eq!((c.input_resolution, c.branch_widths, c.stage_repeats), (416, [17, 34, 67, 133], [1, 1, 3]));
        let c = config_for_phi(-4).unwrap();
        assert_eq!(
            (c.input_resolution, c.branch_widths, c.stage_repeats, c.tag_size, c.heatmap_size),
            (384, [14, 27, 54, 107], [1, 1, 2], 96, 192)
        );
    }

    #[test]
    fn out_of_range_phi_is_rejected() {
        for phi in [1, -5, -100] {
            let err = config_for_phi(phi).unwrap_err();
            assert!(matches!(err, Error::UnsupportedPhi { .. }));
            assert!(err.to_string().contains("-4..=0"));
            assert!(stage_repeats(phi).is_err());
        }
    }

    #[test]
    fn resolution_formula() {
        assert_eq!(input_resolution(0).unwrap(), 512);
        assert_eq!(input_resolution(-2).unwrap(), 448);
        assert_eq!(input_resolution(-15).unwrap(), 32);
        assert!(input_resolution(-16).is_err());
    }

    #[test]
    fn width_formula() {
        assert_eq!(branch_width_formula(1, 0), 32);
        assert_eq!(branch_width_formula(3, -1), 103);
        // Published width is 206; the table overrides the formula.
        assert_eq!(branch_width_formula(4, -1), 205);
        assert_eq!(config_for_phi(-1).unwrap().branch_widths[3], 206);
        assert_eq!((1..=4).map(|n| branch_width_formula(n, 0)).collect::<Vec<_>>(), BASE_BRANCH_WIDTHS);
    }

    #[test]
    fn backbone_multipliers() {
        let c = backbone_coefficients(0);
        assert_eq!((c.depth_mult, c.width_mult, c.resolution_mult), (1.0, 1.0, 1.0));
        let c = backbone_coefficients(-1);
        assert!((c.resolution_mult - 0.869_565).abs() < 1e-6);
        // 1/1.15 rounded to two places, as in the worked example.
        assert_eq!((224.0 * 0.87f64).ceil() as usize, 195);
        assert_eq!(classification_resolution(-1).unwrap(), 195);
        assert_eq!(classification_resolution(-2).unwrap(), 170);
        assert_eq!(c.depth_mult, 1.0 / 1.2);
    }

    #[test]
    fn repeats_schedule() {
        assert_eq!(stage_repeats(0).unwrap(), [1, 4, 3]);
        assert_eq!(stage_repeats(-1).unwrap(), [1, 3, 3]);
        assert_eq!(stage_repeats(-4).unwrap(), [1, 1, 2]);
        // The closed-form schedule reproduces every published row.
        for phi in supported_phis() {
            assert_eq!(extrapolated_repeats(phi), stage_repeats(phi).unwrap());
        }
        assert_eq!(extrapolated_repeats(-6), [1, 1, 1]);
    }

    #[test]
    fn invariants_hold_for_every_row() {
        let configs: Vec<_> = supported_phis().map(|p| config_for_phi(p).unwrap()).collect();
        for c in &configs {
            assert_eq!(c.input_resolution, (512 + 32 * c.phi) as usize);
            assert_eq!(c.input_resolution % 32, 0);
            assert_eq!(c.tag_size * 2, c.heatmap_size);
            assert_eq!(c.tag_size, c.input_resolution / 4);
        }
        for pair in configs.windows(2) {
            let (big, small) = (&pair[0], &pair[1]);
            assert!(small.input_resolution <= big.input_resolution);
            for i in 0..4 {
                assert!(small.branch_widths[i] <= big.branch_widths[i]);
            }
            for i in 0..3 {
                assert!(small.stage_repeats[i] <= big.stage_repeats[i]);
            }
        }
    }

    #[test]
    fn extrapolation() {
        let c = extrapolated_config(-5).unwrap();
        assert_eq!(c.input_resolution, 352);
        assert_eq!(c.stage_repeats, [1, 1, 1]);
        assert!(c.branch_widths.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(extrapolated_config(-2).unwrap(), config_for_phi(-2).unwrap());
        assert!(extrapolated_config(-16).is_err());
    }

    #[test]
    fn config_serializes_with_field_names() {
        let json = serde_json::to_value(config_for_phi(-3).unwrap()).unwrap();
        for key in ["phi", "input_resolution", "branch_widths", "stage_repeats", "backbone", "tag_size", "heatmap_size"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["backbone"]["width_mult"], serde_json::json!(1.1f64.powi(-3)));
    }
}
