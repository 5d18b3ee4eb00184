//! Trajectories, length metrics and the evaluation report.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ground-truth length must be positive, got {0}")]
    ZeroGroundTruthLength(f64),
    #[error("trajectories differ in length: {est} vs {gt}")]
    LengthMismatch { est: usize, gt: usize },
}

/// Absolute camera-to-global poses in one fixed frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self { poses }
    }

    /// Chains relative poses `T_{t,t-1}` starting from the identity.
    ///
    /// The first relative pose is ignored since the first frame defines the
    /// global frame.
    pub fn from_relative<'a>(relatives: impl IntoIterator<Item = &'a Pose>) -> Self {
        let mut poses: Vec<Pose> = Vec::new();
        for rel in relatives {
            let next = match poses.last() {
                None => Pose::identity(),
                Some(prev) => prev.compose(&rel.inverse()),
            };
            poses.push(next);
        }
        Self { poses }
    }

    /// Relative poses `T_{t,t-1}` between consecutive entries.
    pub fn relatives(&self) -> Vec<Pose> {
        self.poses
            .windows(2)
            .map(|w| w[1].inverse().compose(&w[0]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn centers(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.poses.iter().map(|p| Point3::from(*p.translation()))
    }
}

/// Sum of distances between consecutive camera centers.
pub fn trajectory_length(traj: &Trajectory) -> f64 {
    traj.poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .sum()
}

/// Relative length error in percent.
pub fn rle(gt_length: f64, est_length: f64) -> Result<f64, MetricError> {
    if !(gt_length > 0.0) {
        return Err(MetricError::ZeroGroundTruthLength(gt_length));
    }
    Ok(100.0 * (gt_length - est_length).abs() / gt_length)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Some(Self {
            mean: s.iter().sum::<f64>() / n as f64,
            median,
            max: s[n - 1],
        })
    }
}

/// Percent error of each estimated scale against its true value.
pub fn scale_errors(estimated: &[f64], truth: &[f64]) -> Result<Vec<f64>, MetricError> {
    if estimated.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            est: estimated.len(),
            gt: truth.len(),
        });
    }
    Ok(estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| 100.0 * (e - t).abs() / t)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    /// Median per-frame wall time of each stage in milliseconds.
    pub gpe_ms: f64,
    pub gpa_ms: f64,
    pub total_ms: f64,
    pub frames_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub fresh_frames: usize,
    pub carried_frames: usize,
    pub recovered_length: f64,
    pub true_length: Option<f64>,
    /// Percent.
    pub rle: Option<f64>,
    /// Percent error of the applied scale per frame.
    pub scale_error: Option<ErrorStats>,
    pub timings: StageTimings,
}

impl EvalReport {
    /// Copy with wall-clock fields zeroed, for determinism checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: StageTimings::default(),
            ..self.clone()
        }
    }
}
