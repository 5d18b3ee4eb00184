//! Per-frame orchestration: ground extraction, window aggregation, scale
//! filtering, and recomposition of the rescaled trajectory.

use std::borrow::Borrow;
use std::time::{Duration, Instant};

use nalgebra::Point3;
use thiserror::Error;

use crate::frame::FeatureFrame;
use crate::geometry::Pose;
use crate::gpa::{aggregate, GpaConfig, GpaError, WindowBuffer};
use crate::gpe::{extract_ground, GpeConfig, GpeError};
use crate::metrics::{
    rle, scale_errors, trajectory_length, ErrorStats, EvalReport, StageTimings, Trajectory,
};
use crate::scale_filter::{FilterConfig, ScaleError, ScaleEstimate, ScaleFilter, ScaleStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no frame produced ground points")]
    NoGroundEver,
    #[error("frame {0} has no ground and no earlier scale to carry over")]
    NoPriorScale(u64),
    #[error("frame {got} arrived after frame {last}")]
    OutOfOrderFrame { last: u64, got: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub gpe: GpeConfig,
    pub gpa: GpaConfig,
    pub filter: FilterConfig,
    /// Base RANSAC seed; frame `id` uses `seed + id`.
    pub seed: u64,
    /// Give frames before the first ground detection the first fresh scale.
    /// When off, such frames fail with `NoPriorScale`.
    pub backfill: bool,
}

impl PipelineConfig {
    pub fn new(true_height: f64) -> Self {
        Self {
            gpe: GpeConfig::default(),
            gpa: GpaConfig::default(),
            filter: FilterConfig {
                true_height,
                window: 5,
            },
            seed: 0,
            backfill: true,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |e: &dyn std::fmt::Display| PipelineError::InvalidConfig(e.to_string());
        self.gpe.validate().map_err(|e| bad(&e))?;
        self.filter.validate().map_err(|e| bad(&e))?;
        WindowBuffer::new(self.gpa.window).map_err(|e| bad(&e))?;
        if !(self.gpa.inlier_threshold > 0.0) {
            return Err(PipelineError::InvalidConfig(
                "GPA threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Why a frame got no fresh scale.
#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    Extraction(GpeError),
    Aggregation(GpaError),
    Heights(ScaleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiagnostics {
    pub frame_id: u64,
    /// Ground points kept by extraction in this frame.
    pub ground_points: usize,
    pub skip: Option<Skip>,
    pub gpe_time: Duration,
    pub gpa_time: Duration,
    pub total_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub trajectory: Trajectory,
    pub scales: Vec<ScaleEstimate>,
    pub diagnostics: Vec<FrameDiagnostics>,
    pub timings: StageTimings,
}

/// Streaming driver. Feed frames in id order, then call [`Pipeline::finish`].
#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    window: WindowBuffer,
    filter: ScaleFilter,
    pose: Pose,
    relatives: Vec<Pose>,
    /// `None` while waiting for the first fresh scale.
    scales: Vec<Option<ScaleEstimate>>,
    frame_ids: Vec<u64>,
    diagnostics: Vec<FrameDiagnostics>,
    started: Option<Instant>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            window: WindowBuffer::new(cfg.gpa.window).expect("validated"),
            filter: ScaleFilter::new(cfg.filter).expect("validated"),
            cfg,
            pose: Pose::identity(),
            relatives: Vec::new(),
            scales: Vec::new(),
            frame_ids: Vec::new(),
            diagnostics: Vec::new(),
            started: None,
        })
    }

    pub fn push(&mut self, frame: &FeatureFrame) -> Result<&FrameDiagnostics, PipelineError> {
        if let Some(&last) = self.frame_ids.last() {
            if frame.id <= last {
                return Err(PipelineError::OutOfOrderFrame {
                    last,
                    got: frame.id,
                });
            }
        }
        let start = Instant::now();
        self.started.get_or_insert(start);

        // The first frame anchors the global frame whatever its pose says.
        if !self.relatives.is_empty() {
            self.pose = self.pose.compose(&frame.relative_pose.inverse());
        }
        self.relatives.push(frame.relative_pose);
        self.frame_ids.push(frame.id);

        let seed = self.cfg.seed.wrapping_add(frame.id);
        let ground = extract_ground(frame, &self.cfg.gpe, seed);
        let gpe_time = start.elapsed();

        let mut gpa_time = Duration::ZERO;
        let mut ground_points = 0;
        let fresh = match ground {
            Err(e) => Err(Skip::Extraction(e)),
            Ok(set) => {
                ground_points = set.points.len();
                self.window
                    .push_frame(frame.id, self.pose, set)
                    .expect("ids checked above");
                let t = Instant::now();
                let center = Point3::from(*self.pose.translation());
                let fit = aggregate(&self.window, &center, &self.cfg.gpa);
                gpa_time = t.elapsed();
                match fit {
                    Err(e) => Err(Skip::Aggregation(e)),
                    Ok(r) => self
                        .filter
                        .push_heights(frame.id, r.heights)
                        .map_err(Skip::Heights),
                }
            }
        };

        let (estimate, skip) = match fresh {
            Ok(est) => (Some(est), None),
            Err(skip) => match self.filter.push_missing(frame.id) {
                Ok(est) => (Some(est), Some(skip)),
                Err(_) if self.cfg.backfill => (None, Some(skip)),
                Err(_) => return Err(PipelineError::NoPriorScale(frame.id)),
            },
        };
        self.scales.push(estimate);
        self.diagnostics.push(FrameDiagnostics {
            frame_id: frame.id,
            ground_points,
            skip,
            gpe_time,
            gpa_time,
            total_time: start.elapsed(),
        });
        Ok(self.diagnostics.last().expect("just pushed"))
    }

    pub fn finish(self) -> Result<PipelineOutput, PipelineError> {
        let n = self.frame_ids.len();
        if n < 2 {
            return Err(PipelineError::TooFewFrames(n));
        }
        let elapsed = self.started.map(|s| s.elapsed()).unwrap_or_default();
        let first = self
            .scales
            .iter()
            .flatten()
            .find(|e| e.status == ScaleStatus::Fresh)
            .ok_or(PipelineError::NoGroundEver)?
            .smoothed_scale;
        let scales: Vec<ScaleEstimate> = self
            .scales
            .into_iter()
            .zip(&self.frame_ids)
            .map(|(e, &id)| {
                e.unwrap_or(ScaleEstimate {
                    frame_id: id,
                    heights: Vec::new(),
                    median_height: None,
                    raw_scale: None,
                    smoothed_scale: first,
                    status: ScaleStatus::CarriedOver,
                })
            })
            .collect();

        let scaled: Vec<Pose> = self
            .relatives
            .iter()
            .zip(&scales)
            .map(|(rel, s)| rel.with_scaled_translation(s.smoothed_scale))
            .collect();
        let ms = |f: fn(&FrameDiagnostics) -> Duration| {
            let v: Vec<f64> = self
                .diagnostics
                .iter()
                .map(|d| f(d).as_secs_f64() * 1e3)
                .collect();
            ErrorStats::from_values(&v).map_or(0.0, |s| s.median)
        };
        let timings = StageTimings {
            gpe_ms: ms(|d| d.gpe_time),
            gpa_ms: ms(|d| d.gpa_time),
            total_ms: ms(|d| d.total_time),
            frames_per_second: n as f64 / elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
        };
        Ok(PipelineOutput {
            trajectory: Trajectory::from_relative(&scaled),
            scales,
            diagnostics: self.diagnostics,
            timings,
        })
    }
}

/// Runs the whole stream. Frames are only read, never modified.
pub fn run_pipeline<I>(frames: I, cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError>
where
    I: IntoIterator,
    I::Item: Borrow<FeatureFrame>,
{
    let mut p = Pipeline::new(*cfg)?;
    for f in frames {
        p.push(f.borrow())?;
    }
    p.finish()
}

/// Builds the report, comparing against ground truth when available.
pub fn evaluate(
    out: &PipelineOutput,
    truth: Option<&Trajectory>,
    true_scales: Option<&[f64]>,
) -> EvalReport {
    let recovered_length = trajectory_length(&out.trajectory);
    let true_length = truth.map(trajectory_length);
    let applied: Vec<f64> = out.scales.iter().map(|s| s.smoothed_scale).collect();
    let fresh_frames = out
        .scales
        .iter()
        .filter(|s| s.status == ScaleStatus::Fresh)
        .count();
    EvalReport {
        frames: out.scales.len(),
        fresh_frames,
        carried_frames: out.scales.len() - fresh_frames,
        recovered_length,
        true_length,
        rle: true_length.and_then(|gt| rle(gt, recovered_length).ok()),
        scale_error: true_scales
            .and_then(|t| scale_errors(&applied, t).ok())
            .and_then(|e| ErrorStats::from_values(&e)),
        timings: out.timings,
    }
}
