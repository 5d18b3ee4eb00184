//! Per-frame scale from the median camera height, causal moving-average
//! smoothing, and carry-over for frames without ground.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("no camera heights to take a median of")]
    EmptyHeights,
    #[error("camera height {0} is not positive")]
    NonPositiveHeight(f64),
    #[error("no earlier scale to carry over")]
    NoPriorScale,
    #[error("invalid filter config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleStatus {
    Fresh,
    CarriedOver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    pub frame_id: u64,
    /// Empty for carried-over frames.
    pub heights: Vec<f64>,
    /// `None` for carried-over frames.
    pub median_height: Option<f64>,
    pub raw_scale: Option<f64>,
    pub smoothed_scale: f64,
    pub status: ScaleStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Known metric camera height.
    pub true_height: f64,
    /// Moving-average length; odd and at least one.
    pub window: usize,
}

impl FilterConfig {
    pub fn new(true_height: f64, window: usize) -> Result<Self, ScaleError> {
        let cfg = Self {
            true_height,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScaleError> {
        if !(self.true_height > 0.0 && self.true_height.is_finite()) {
            return Err(ScaleError::InvalidConfig("true height must be positive"));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(ScaleError::InvalidConfig("smoothing window must be odd"));
        }
        Ok(())
    }
}

/// Median of `heights` and the scale `h* / median`.
pub fn frame_scale(heights: &[f64], true_height: f64) -> Result<(f64, f64), ScaleError> {
    if heights.is_empty() {
        return Err(ScaleError::EmptyHeights);
    }
    if let Some(&bad) = heights.iter().find(|h| !(**h > 0.0)) {
        return Err(ScaleError::NonPositiveHeight(bad));
    }
    let mut sorted = heights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok((median, true_height / median))
}

/// Causal moving average: `out[t]` is the mean of the last `min(t+1, W)` inputs.
pub fn smooth(scales: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..scales.len())
        .map(|t| {
            let tail = &scales[(t + 1).saturating_sub(window)..=t];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect()
}

pub fn apply_scale(t_rel: &Vector3<f64>, scale: f64) -> Vector3<f64> {
    t_rel * scale
}

/// Reuses the previous smoothed scale for a frame without ground.
pub fn carry_over(
    prev: Option<&ScaleEstimate>,
    frame_id: u64,
) -> Result<ScaleEstimate, ScaleError> {
    let prev = prev.ok_or(ScaleError::NoPriorScale)?;
    Ok(ScaleEstimate {
        frame_id,
        heights: Vec::new(),
        median_height: None,
        raw_scale: None,
        smoothed_scale: prev.smoothed_scale,
        status: ScaleStatus::CarriedOver,
    })
}

/// Streaming form of the filter. Only fresh scales enter the window.
#[derive(Debug, Clone)]
pub struct ScaleFilter {
    cfg: FilterConfig,
    window: VecDeque<f64>,
    last: Option<ScaleEstimate>,
}

impl ScaleFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self, ScaleError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            window: VecDeque::with_capacity(cfg.window),
            last: None,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    /// Fresh scales currently averaged, oldest first.
    pub fn window(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    pub fn last(&self) -> Option<&ScaleEstimate> {
        self.last.as_ref()
    }

    pub fn push_heights(
        &mut self,
        frame_id: u64,
        heights: Vec<f64>,
    ) -> Result<ScaleEstimate, ScaleError> {
        let (median, scale) = frame_scale(&heights, self.cfg.true_height)?;
        self.window.push_back(scale);
        if self.window.len() > self.cfg.window {
            self.window.pop_front();
        }
        let smoothed = self.window.iter().sum::<f64>() / self.window.len() as f64;
        let est = ScaleEstimate {
            frame_id,
            heights,
            median_height: Some(median),
            raw_scale: Some(scale),
            smoothed_scale: smoothed,
            status: ScaleStatus::Fresh,
        };
        self.last = Some(est.clone());
        Ok(est)
    }

    pub fn push_missing(&mut self, frame_id: u64) -> Result<ScaleEstimate, ScaleError> {
        let est = carry_over(self.last.as_ref(), frame_id)?;
        self.last = Some(est.clone());
        Ok(est)
    }
}
