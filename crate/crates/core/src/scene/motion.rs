use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{PoseParams, ToyBodySpec};
use crate::geometry::Vec3;
use crate::render::{Camera, RenderError};

/// Sinusoidal joint trajectories. Training frames stay inside
/// `center +- amplitude` for every driven joint; each novel frame pushes one
/// bend joint past the training maximum by at least `novel_margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSpec {
    pub frames: usize,
    /// Fraction of frames used for training (the rest are novel poses).
    pub train_fraction: f64,
    /// Radians.
    pub novel_margin: f64,
    /// Extra bend added on top of the margin, spread over the novel frames.
    pub novel_extra: f64,
    pub cycles: f64,
    /// Elbow and knee flexion range.
    pub bend_center: f64,
    pub bend_amplitude: f64,
    /// Shoulder and hip swing amplitude.
    pub swing_amplitude: f64,
    /// Chest twist and neck nod amplitude.
    pub spine_amplitude: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            frames: 30,
            train_fraction: 0.8,
            novel_margin: 0.2,
            novel_extra: 0.2,
            cycles: 1.0,
            bend_center: 0.45,
            bend_amplitude: 0.45,
            swing_amplitude: 0.35,
            spine_amplitude: 0.15,
        }
    }
}

impl MotionSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.frames == 0 {
            return Err("motion needs at least one frame".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err("train_fraction must lie in (0, 1]".into());
        }
        if !(self.novel_margin >= 0.0 && self.novel_extra >= 0.0) {
            return Err("novel_margin and novel_extra must be non-negative".into());
        }
        Ok(())
    }

    pub fn train_frame_count(&self) -> usize {
        ((self.frames as f64 * self.train_fraction).round() as usize).clamp(1, self.frames)
    }
}

/// Joints driven by the script with their rotation axes. Bend joints come
/// last so novel poses can index them.
struct Drive {
    joint: usize,
    axis: Vec3,
    kind: DriveKind,
}

#[derive(Clone, Copy, PartialEq)]
enum DriveKind {
    Spine,
    Swing,
    Bend,
}

fn drives(body: &ToyBodySpec) -> Vec<Drive> {
    let mut out = vec![
        Drive {
            joint: 1,
            axis: Vec3::z(),
            kind: DriveKind::Spine,
        },
        Drive {
            joint: 2,
            axis: Vec3::x(),
            kind: DriveKind::Spine,
        },
    ];
    for limb in 0..body.limbs.len() {
        out.push(Drive {
            joint: body.limb_joint(limb),
            axis: Vec3::x(),
            kind: DriveKind::Swing,
        });
    }
    for limb in 0..body.limbs.len() {
        out.push(Drive {
            joint: body.limb_joint(limb) + 1,
            axis: Vec3::x(),
            kind: DriveKind::Bend,
        });
    }
    out
}

/// Frame poses: the training frames first, then the novel frames.
pub fn motion_script(body: &ToyBodySpec, motion: &MotionSpec, seed: u64) -> Vec<PoseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drives = drives(body);
    let phases: Vec<f64> = drives.iter().map(|_| rng.gen_range(0.0..TAU)).collect();
    let train = motion.train_frame_count();
    let angle = |d: &Drive, s: f64| match d.kind {
        DriveKind::Spine => motion.spine_amplitude * s,
        DriveKind::Swing => motion.swing_amplitude * s,
        DriveKind::Bend => motion.bend_center + motion.bend_amplitude * s,
    };
    let bend_drives: Vec<usize> = drives
        .iter()
        .enumerate()
        .filter(|(_, d)| d.kind == DriveKind::Bend)
        .map(|(i, _)| i)
        .collect();
    let novel_count = motion.frames - train;
    (0..motion.frames)
        .map(|t| {
            let mut pose = PoseParams::zero(body.joint_count());
            let clock = TAU * motion.cycles * t as f64 / train as f64;
            for (d, phase) in drives.iter().zip(&phases) {
                let a = angle(d, (clock + phase).sin());
                pose.joint_rotations[d.joint] = (d.axis * a).into();
            }
            if t >= train && !bend_drives.is_empty() {
                let n = t - train;
                let d = &drives[bend_drives[n % bend_drives.len()]];
                let extra = if novel_count > 1 {
                    motion.novel_extra * n as f64 / (novel_count - 1) as f64
                } else {
                    motion.novel_extra
                };
                let a = motion.bend_center + motion.bend_amplitude + motion.novel_margin + extra;
                pose.joint_rotations[d.joint] = (d.axis * a).into();
            }
            pose
        })
        .collect()
}

/// Largest component-wise joint-angle difference between two poses.
pub fn pose_distance(a: &PoseParams, b: &PoseParams) -> f64 {
    a.joint_rotations
        .iter()
        .flatten()
        .zip(b.joint_rotations.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Cameras evenly spaced on a horizontal circle, all facing `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSpec {
    pub cameras: usize,
    pub train_cameras: usize,
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    /// Focal length in units of the image width.
    pub focal: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            cameras: 8,
            train_cameras: 4,
            radius: 3.0,
            height: 1.0,
            target: [0.0, 0.0, 0.9],
            focal: 1.3,
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.cameras == 0 {
            return Err("rig needs at least one camera".into());
        }
        if self.train_cameras == 0 || self.train_cameras > self.cameras {
            return Err(format!(
                "train_cameras must lie in 1..={}, got {}",
                self.cameras, self.train_cameras
            ));
        }
        if !(self.radius > 0.0 && self.focal > 0.0) {
            return Err("radius and focal must be positive".into());
        }
        Ok(())
    }

    /// Training cameras spread uniformly around the circle.
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.train_cameras)
            .map(|i| i * self.cameras / self.train_cameras)
            .collect()
    }

    pub fn cameras(&self, width: u32, height: u32) -> Result<Vec<Camera>, RenderError> {
        (0..self.cameras)
            .map(|k| self.orbit_camera(TAU * k as f64 / self.cameras as f64, width, height))
            .collect()
    }

    pub fn orbit_camera(&self, azimuth: f64, width: u32, height: u32) -> Result<Camera, RenderError> {
        let target = Vec3::from(self.target);
        let eye = Vec3::new(
            target.x + self.radius * azimuth.cos(),
            target.y + self.radius * azimuth.sin(),
            self.height,
        );
        let f = self.focal * width as f64;
        Camera::look_at(
            eye,
            target,
            Vec3::z(),
            [f, f, width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn novel_poses_leave_the_training_range() {
        let body = ToyBodySpec::default();
        let motion = MotionSpec::default();
        let poses = motion_script(&body, &motion, 7);
        let train = motion.train_frame_count();
        assert_eq!((poses.len(), train), (30, 24));
        for novel in &poses[train..] {
            for seen in &poses[..train] {
                assert!(pose_distance(novel, seen) >= motion.novel_margin - 1e-12);
            }
        }
    }

    #[test]
    fn script_is_seeded() {
        let body = ToyBodySpec::default();
        let motion = MotionSpec::default();
        assert_eq!(motion_script(&body, &motion, 3), motion_script(&body, &motion, 3));
        assert_ne!(motion_script(&body, &motion, 3), motion_script(&body, &motion, 4));
    }

    #[test]
    fn training_bends_stay_within_range() {
        let body = ToyBodySpec::default();
        let motion = MotionSpec::default();
        let poses = motion_script(&body, &motion, 1);
        let hi = motion.bend_center + motion.bend_amplitude;
        for p in &poses[..motion.train_frame_count()] {
            for limb in 0..body.limbs.len() {
                let a = p.joint_rotations[body.limb_joint(limb) + 1][0];
                assert!((-1e-12..=hi + 1e-12).contains(&a));
            }
        }
    }

    #[test]
    fn rig_uses_every_other_camera_for_training() {
        let rig = RigSpec::default();
        assert_eq!(rig.train_indices(), vec![0, 2, 4, 6]);
        let cams = rig.cameras(64, 64).unwrap();
        assert_eq!(cams.len(), 8);
        for c in &cams {
            let p = c.project(&Vec3::from(rig.target)).unwrap();
            assert!((p[0] - 32.0).abs() < 1e-9 && (p[1] - 32.0).abs() < 1e-9);
            assert!((c.center() - Vec3::from(rig.target)).xy().norm() - rig.radius < 1e-9);
        }
    }
}
