//! Synthetic road scenes with known scale, for tests and the `synth` command.
//!
//! The camera drives over the plane `y = camera_height` (y down) with yaw-only
//! motion. Each frame samples fresh features in its own camera frame: ground
//! points, static clutter on side walls or floating in free space, and
//! "moving" points whose depths are scaled by a per-frame factor so they are
//! geometrically inconsistent. Depths and translations are divided by the
//! scale factor, so the true scale of every frame is that factor.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Feature, FeatureFrame};
use crate::geometry::{rotation_y, Intrinsics, Pose};
use crate::metrics::Trajectory;

/// KITTI odometry grayscale camera.
pub const KITTI_FX: f64 = 718.856;
pub const KITTI_CX: f64 = 607.1928;
pub const KITTI_CY: f64 = 185.2157;
pub const IMAGE_WIDTH: f64 = 1241.0;
pub const IMAGE_HEIGHT: f64 = 376.0;

const MAX_RANGE: f64 = 40.0;
const CURVE_AMPLITUDE: f64 = 0.02;
const CURVE_PERIOD: f64 = 100.0;
const FRAME_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Straight,
    Loop,
    Curves,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(Self::Straight),
            "loop" => Ok(Self::Loop),
            "curves" => Ok(Self::Curves),
            other => Err(format!("unknown preset '{other}'")),
        }
    }
}

impl Preset {
    /// Yaw of the motion into frame `t` (t >= 1) for a run of `frames` frames.
    fn yaw(self, t: usize, frames: usize) -> f64 {
        match self {
            Preset::Straight => 0.0,
            Preset::Loop => 2.0 * PI / (frames.max(2) - 1) as f64,
            Preset::Curves => CURVE_AMPLITUDE * (2.0 * PI * t as f64 / CURVE_PERIOD).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Ground,
    Wall,
    Floating,
    Moving,
}

impl PointLabel {
    pub fn is_ground(self) -> bool {
        self == PointLabel::Ground
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Metric distance from the camera down to the ground.
    pub camera_height: f64,
    pub intrinsics: Intrinsics,
    pub features_per_frame: usize,
    /// Fraction of features on static non-ground structure.
    pub clutter_fraction: f64,
    /// Fraction of features with inconsistent depths.
    pub moving_fraction: f64,
    /// Standard deviation of pixel noise.
    pub pixel_noise: f64,
    /// Relative standard deviation of depth noise.
    pub depth_noise: f64,
    /// Metric relative motions `T_{t,t-1}`; the first entry is the identity.
    pub script: Vec<Pose>,
    /// Translations and depths are divided by this.
    pub scale: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn from_preset(preset: Preset, frames: usize, scale: f64, seed: u64) -> Self {
        Self {
            camera_height: 1.7,
            intrinsics: kitti_intrinsics(),
            features_per_frame: 400,
            clutter_fraction: 0.0,
            moving_fraction: 0.0,
            pixel_noise: 0.0,
            depth_noise: 0.0,
            script: motion_script(preset, frames, 1.0),
            scale,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(SynthError::InvalidScene("scale factor must be positive"));
        }
        if !(self.camera_height > 0.0) {
            return Err(SynthError::InvalidScene("camera height must be positive"));
        }
        let outliers = self.clutter_fraction + self.moving_fraction;
        if !(self.clutter_fraction >= 0.0 && self.moving_fraction >= 0.0 && outliers < 1.0) {
            return Err(SynthError::InvalidScene(
                "clutter fraction must be in [0, 1)",
            ));
        }
        if !(self.pixel_noise >= 0.0 && self.depth_noise >= 0.0) {
            return Err(SynthError::InvalidScene("noise must be non-negative"));
        }
        Ok(())
    }
}

pub fn kitti_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: KITTI_FX,
        fy: KITTI_FX,
        cx: KITTI_CX,
        cy: KITTI_CY,
    }
}

/// Relative motions for a preset: each step turns by the preset yaw and
/// moves `step` meters along the bisector of the old and new headings.
pub fn motion_script(preset: Preset, frames: usize, step: f64) -> Vec<Pose> {
    (0..frames)
        .map(|t| {
            if t == 0 {
                return Pose::identity();
            }
            let yaw = preset.yaw(t, frames);
            let turn = rotation_y(yaw);
            let center = Vector3::new((yaw / 2.0).sin(), 0.0, (yaw / 2.0).cos()) * step;
            let rotation = turn.transpose();
            Pose::new(rotation, -(rotation * center)).expect("yaw rotation is orthonormal")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    /// Up-to-scale frames as a front-end would deliver them.
    pub frames: Vec<FeatureFrame>,
    /// Metric camera-to-global poses.
    pub truth: Trajectory,
    pub true_scales: Vec<f64>,
    /// One label per feature, aligned with `frames[i].features`.
    pub labels: Vec<Vec<PointLabel>>,
}

pub fn generate_scene(scene: &SyntheticScene) -> Result<SyntheticSequence, SynthError> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let pixel_noise = Normal::new(0.0, scene.pixel_noise).expect("validated noise");
    let depth_noise = Normal::new(0.0, scene.depth_noise).expect("validated noise");

    let n = scene.features_per_frame;
    let n_clutter = (n as f64 * scene.clutter_fraction).round() as usize;
    let n_moving = (n as f64 * scene.moving_fraction).round() as usize;
    let n_ground = n.saturating_sub(n_clutter + n_moving);

    let mut frames = Vec::with_capacity(scene.script.len());
    let mut labels = Vec::with_capacity(scene.script.len());
    for (t, motion) in scene.script.iter().enumerate() {
        let mut pts: Vec<(Point3<f64>, f64, PointLabel)> = Vec::with_capacity(n);
        for _ in 0..n_ground {
            let p = sample_ground(&mut rng, scene);
            pts.push((p, 1.0, PointLabel::Ground));
        }
        for i in 0..n_clutter {
            let p = if i % 2 == 0 {
                sample_wall(&mut rng, scene)
            } else {
                sample_floating(&mut rng, scene)
            };
            let label = if i % 2 == 0 {
                PointLabel::Wall
            } else {
                PointLabel::Floating
            };
            pts.push((p, 1.0, label));
        }
        let k = if rng.random_bool(0.5) {
            rng.random_range(0.75..0.9)
        } else {
            rng.random_range(1.1..1.25)
        };
        for _ in 0..n_moving {
            let p = sample_moving(&mut rng, scene);
            pts.push((p, k, PointLabel::Moving));
        }
        pts.shuffle(&mut rng);

        let mut features = Vec::with_capacity(pts.len());
        let mut frame_labels = Vec::with_capacity(pts.len());
        for (p, depth_factor, label) in pts {
            let px = scene.intrinsics.project(&p);
            let u = px.x + pixel_noise.sample(&mut rng);
            let v = px.y + pixel_noise.sample(&mut rng);
            let z = p.z * depth_factor * (1.0 + depth_noise.sample(&mut rng));
            features.push(Feature::new(u, v, z.max(1e-3) / scene.scale));
            frame_labels.push(label);
        }
        frames.push(FeatureFrame {
            id: t as u64,
            timestamp: t as f64 * FRAME_INTERVAL,
            intrinsics: scene.intrinsics,
            relative_pose: motion.with_scaled_translation(1.0 / scene.scale),
            features,
        });
        labels.push(frame_labels);
    }

    Ok(SyntheticSequence {
        frames,
        truth: Trajectory::from_relative(&scene.script),
        true_scales: vec![scene.scale; scene.script.len()],
        labels,
    })
}

fn in_image(scene: &SyntheticScene, p: &Point3<f64>) -> bool {
    let px = scene.intrinsics.project(p);
    p.z > 0.0 && (0.0..IMAGE_WIDTH).contains(&px.x) && (0.0..IMAGE_HEIGHT).contains(&px.y)
}

/// Uniform pixel below the horizon band, at the depth where its ray meets
/// the ground.
fn sample_ground(rng: &mut ChaCha8Rng, scene: &SyntheticScene) -> Point3<f64> {
    let k = &scene.intrinsics;
    let h = scene.camera_height;
    let v_min = k.cy + h * k.fy / MAX_RANGE;
    let u = rng.random_range(0.0..IMAGE_WIDTH);
    let v = rng.random_range(v_min..IMAGE_HEIGHT);
    let z = h * k.fy / (v - k.cy);
    Point3::new(z * (u - k.cx) / k.fx, h, z)
}

fn sample_visible(
    rng: &mut ChaCha8Rng,
    scene: &SyntheticScene,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Point3<f64>,
) -> Point3<f64> {
    loop {
        let p = draw(rng);
        if in_image(scene, &p) {
            return p;
        }
    }
}

fn sample_wall(rng: &mut ChaCha8Rng, scene: &SyntheticScene) -> Point3<f64> {
    let h = scene.camera_height;
    sample_visible(rng, scene, |r| {
        let side = if r.random_bool(0.5) { 6.0 } else { -6.0 };
        Point3::new(
            side,
            r.random_range(h - 3.0..h - 0.3),
            r.random_range(5.0..MAX_RANGE),
        )
    })
}

fn sample_floating(rng: &mut ChaCha8Rng, scene: &SyntheticScene) -> Point3<f64> {
    let h = scene.camera_height;
    sample_visible(rng, scene, |r| {
        Point3::new(
            r.random_range(-10.0..10.0),
            r.random_range(h - 4.0..h - 0.3),
            r.random_range(5.0..MAX_RANGE),
        )
    })
}

fn sample_moving(rng: &mut ChaCha8Rng, scene: &SyntheticScene) -> Point3<f64> {
    let h = scene.camera_height;
    sample_visible(rng, scene, |r| {
        Point3::new(
            r.random_range(-4.0..4.0),
            r.random_range(h - 2.0..h - 0.5),
            r.random_range(8.0..30.0),
        )
    })
}
