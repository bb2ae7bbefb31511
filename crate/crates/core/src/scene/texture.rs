use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::body::{AtlasChart, PoseParams};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureSpec {
    /// Albedo per atlas chart; charts past the end reuse the list cyclically.
    pub base_colors: Vec<[f64; 3]>,
    /// Checker cycles across a chart.
    pub stripe_frequency: f64,
    /// Darkening of the dark checker cells, in `[0,1]`.
    pub stripe_contrast: f64,
    /// Wrinkle darkening per radian of bend of the chart's adjacent joint.
    pub wrinkle_gain: f64,
    /// Wrinkle bands along a chart.
    pub wrinkle_frequency: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            base_colors: vec![
                [0.85, 0.35, 0.25],
                [0.95, 0.8, 0.65],
                [0.25, 0.5, 0.85],
                [0.3, 0.75, 0.45],
                [0.8, 0.65, 0.2],
                [0.6, 0.35, 0.75],
            ],
            stripe_frequency: 4.0,
            stripe_contrast: 0.35,
            wrinkle_gain: 0.6,
            wrinkle_frequency: 9.0,
        }
    }
}

impl TextureSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_colors.is_empty() {
            return Err("texture needs at least one base color".into());
        }
        if self
            .base_colors
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err("base colors must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.stripe_contrast) {
            return Err("stripe_contrast must lie in [0,1]".into());
        }
        if !(self.wrinkle_gain >= 0.0) || !self.stripe_frequency.is_finite() || !self.wrinkle_frequency.is_finite() {
            return Err("wrinkle_gain must be non-negative and frequencies finite".into());
        }
        Ok(())
    }

    pub fn base_color(&self, chart: usize) -> [f64; 3] {
        self.base_colors[chart % self.base_colors.len()]
    }
}

/// Bend angle of a joint: the norm of its axis-angle rotation.
pub fn bend_angle(pose: &PoseParams, joint: usize) -> f64 {
    pose.joint_rotations
        .get(joint)
        .map_or(0.0, |r| Vec3::from(*r).norm())
}

/// Strength of the wrinkle darkening for a bend angle, in `[0, 0.9]`.
pub fn wrinkle_amplitude(gain: f64, bend: f64) -> f64 {
    (gain * bend).min(0.9)
}

/// Albedo at texel `(u, v)` of `chart`: a checkered base color darkened by
/// wrinkle bands whose strength follows the bend of the chart's joint.
pub fn procedural_texture(
    u: f64,
    v: f64,
    chart_id: usize,
    chart: &AtlasChart,
    pose: &PoseParams,
    spec: &TextureSpec,
) -> [f64; 3] {
    let (lu, lv) = chart.local(u, v);
    let base = spec.base_color(chart_id);
    let checker = (TAU * spec.stripe_frequency * lu).sin() * (TAU * spec.stripe_frequency * lv).sin();
    let stripes = 1.0 - spec.stripe_contrast * 0.5 * (1.0 + checker);
    let amplitude = wrinkle_amplitude(spec.wrinkle_gain, bend_angle(pose, chart.adjacent_joint));
    let band = 0.5 * (1.0 + (TAU * spec.wrinkle_frequency * lv).cos());
    let wrinkle = 1.0 - amplitude * band;
    [
        (base[0] * stripes * wrinkle).clamp(0.0, 1.0),
        (base[1] * stripes * wrinkle).clamp(0.0, 1.0),
        (base[2] * stripes * wrinkle).clamp(0.0, 1.0),
    ]
}
