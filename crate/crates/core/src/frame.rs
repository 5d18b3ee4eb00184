use nalgebra::Point2;

use crate::geometry::{back_project, GeometryError, Intrinsics, Pose};

/// A tracked feature with the up-to-scale depth of its map point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub pixel: Point2<f64>,
    pub depth: f64,
}

impl Feature {
    pub fn new(u: f64, v: f64, depth: f64) -> Self {
        Self {
            pixel: Point2::new(u, v),
            depth,
        }
    }
}

/// One image frame as delivered by the visual-odometry front-end.
///
/// `relative_pose` is `T_{t,t-1}`: it maps frame `t-1` coordinates into
/// frame `t`, with an up-to-scale translation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub id: u64,
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub relative_pose: Pose,
    pub features: Vec<Feature>,
}

impl FeatureFrame {
    pub fn pixels(&self) -> Vec<Point2<f64>> {
        self.features.iter().map(|f| f.pixel).collect()
    }

    pub fn back_project(&self, index: usize) -> Result<nalgebra::Point3<f64>, GeometryError> {
        let f = &self.features[index];
        back_project(&f.pixel, f.depth, &self.intrinsics)
    }
}
