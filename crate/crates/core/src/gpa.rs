//! Ground point aggregation over a sliding window of frames.
//!
//! Ground points from the most recent frames are moved into the global
//! frame and fitted jointly. The plane is the smallest-eigenvalue direction
//! of the weighted 4x4 scatter `Q = P W P^T` of homogeneous points, refined
//! by repeatedly dropping points far from the current fit. Camera heights
//! follow by projecting the current camera center onto the plane.

use std::collections::VecDeque;

use nalgebra::{Matrix4, Point3, SymmetricEigen, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{transform_to_global, PlaneFrame, PlaneHypothesis, Pose};
use crate::gpe::GroundPointSet;

/// Lower bound on the normalized depth deviation used for weighting.
pub const SIGMA_FLOOR: f64 = 0.1;

/// Prune cutoff as a fraction of the largest residual while it is still
/// above the inlier threshold.
const PRUNE_SHRINK: f64 = 0.5;

/// Relative eigenvalue below which the cloud is treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpaError {
    #[error("frame {got} pushed after frame {last}")]
    OutOfOrderFrame { last: u64, got: u64 },
    #[error("point cloud does not span a plane")]
    DegenerateCloud,
    #[error("only {survivors} points survived pruning")]
    CollapsedCloud { survivors: usize },
    #[error("cloud has {points} points but {weights} weights")]
    WeightMismatch { points: usize, weights: usize },
    #[error("weights must be positive and finite")]
    InvalidWeights,
    #[error("window capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpaConfig {
    pub window: usize,
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub sigma_floor: f64,
}

impl Default for GpaConfig {
    fn default() -> Self {
        Self {
            window: 4,
            max_iterations: 200,
            inlier_threshold: 0.01,
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

/// A buffered frame with its points already in the global frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub frame_id: u64,
    pub pose: Pose,
    pub ground: GroundPointSet,
    pub global_points: Vec<Point3<f64>>,
    /// Forward depth of each point in its own camera frame.
    pub depths: Vec<f64>,
}

/// Fixed-capacity FIFO of recent frames' poses and ground points.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBuffer {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl WindowBuffer {
    pub fn new(capacity: usize) -> Result<Self, GpaError> {
        if capacity == 0 {
            return Err(GpaError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    pub fn frame_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.frame_id).collect()
    }

    pub fn point_count(&self) -> usize {
        self.entries.iter().map(|e| e.global_points.len()).sum()
    }

    /// Appends a frame, evicting the oldest once the capacity is exceeded.
    pub fn push_frame(
        &mut self,
        frame_id: u64,
        pose: Pose,
        ground: GroundPointSet,
    ) -> Result<(), GpaError> {
        if let Some(last) = self.entries.back() {
            if frame_id <= last.frame_id {
                return Err(GpaError::OutOfOrderFrame {
                    last: last.frame_id,
                    got: frame_id,
                });
            }
        }
        let global_points = ground
            .points
            .iter()
            .map(|x| transform_to_global(x, &pose))
            .collect();
        let depths = ground.points.iter().map(|x| x.z).collect();
        self.entries.push_back(WindowEntry {
            frame_id,
            pose,
            ground,
            global_points,
            depths,
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Pools every buffered point with depth-based weights.
    pub fn cloud(&self, sigma_floor: f64) -> WeightedCloud {
        let mut points = Vec::with_capacity(self.point_count());
        let mut depths = Vec::with_capacity(self.point_count());
        let mut provenance = Vec::with_capacity(self.point_count());
        for e in &self.entries {
            points.extend_from_slice(&e.global_points);
            depths.extend_from_slice(&e.depths);
            provenance.extend(e.ground.indices.iter().map(|&i| (e.frame_id, i)));
        }
        let weights = build_weights(&depths, sigma_floor);
        WeightedCloud {
            points,
            weights,
            provenance,
        }
    }
}

/// Global-frame points with one positive weight each.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    pub points: Vec<Point3<f64>>,
    pub weights: Vec<f64>,
    /// `(frame id, feature index)` of each point.
    pub provenance: Vec<(u64, usize)>,
}

impl WeightedCloud {
    pub fn new(
        points: Vec<Point3<f64>>,
        weights: Vec<f64>,
        provenance: Vec<(u64, usize)>,
    ) -> Result<Self, GpaError> {
        if weights.len() != points.len() || provenance.len() != points.len() {
            return Err(GpaError::WeightMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        if !weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(GpaError::InvalidWeights);
        }
        Ok(Self {
            points,
            weights,
            provenance,
        })
    }

    pub fn uniform(points: Vec<Point3<f64>>) -> Self {
        let n = points.len();
        Self {
            points,
            weights: vec![1.0; n],
            provenance: (0..n).map(|i| (0, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
            provenance: keep.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    /// `Q = P W P^T` over raw homogeneous points `[x, y, z, 1]`.
    pub fn scatter(&self) -> Matrix4<f64> {
        scatter_of(
            self.points
                .iter()
                .zip(&self.weights)
                .map(|(p, &w)| (Vector4::new(p.x, p.y, p.z, 1.0), w)),
        )
    }

    /// Fit residual `v^T Q v` for the homogeneous plane `v = [n, -h]`,
    /// summed as `sum w_i (n . p_i - h)^2` to avoid cancellation in the 4x4 form.
    pub fn residual(&self, plane: &PlaneHypothesis) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * plane.signed_distance(p).powi(2))
            .sum()
    }
}

fn scatter_of(columns: impl Iterator<Item = (Vector4<f64>, f64)>) -> Matrix4<f64> {
    let mut q = Matrix4::zeros();
    for (p, w) in columns {
        q += (p * w) * p.transpose();
    }
    q
}

/// Per-point weights `w_i = max(|z_i - mean| / std, floor)^-2`.
///
/// Falls back to uniform weights when there are fewer than two depths or
/// they have no spread.
pub fn build_weights(depths: &[f64], sigma_floor: f64) -> Vec<f64> {
    let n = depths.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let mean = depths.iter().sum::<f64>() / n as f64;
    let var = depths.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return vec![1.0; n];
    }
    depths
        .iter()
        .map(|z| {
            let sigma = ((z - mean).abs() / std).max(sigma_floor);
            sigma.powi(-2)
        })
        .collect()
}

/// Weighted least-squares plane through the cloud.
///
/// The homogeneous points are conditioned first (translated to the weighted
/// centroid and scaled to RMS radius `sqrt(3)`); the smallest-eigenvalue
/// eigenvector of the conditioned scatter is mapped back, scaled so that
/// `|n| = 1`, and its sign chosen so that `h > 0`.
pub fn svd_plane_fit(cloud: &WeightedCloud) -> Result<PlaneHypothesis, GpaError> {
    if cloud.len() < 3 {
        return Err(GpaError::DegenerateCloud);
    }
    let total: f64 = cloud.weights.iter().sum();
    let centroid = cloud
        .points
        .iter()
        .zip(&cloud.weights)
        .fold(Vector3::zeros(), |acc, (p, &w)| acc + p.coords * w)
        / total;
    let spread = cloud
        .points
        .iter()
        .zip(&cloud.weights)
        .map(|(p, &w)| w * (p.coords - centroid).norm_squared())
        .sum::<f64>()
        / total;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(GpaError::DegenerateCloud);
    }
    let scale = (3.0 / spread).sqrt();

    let q = scatter_of(cloud.points.iter().zip(&cloud.weights).map(|(p, &w)| {
        let c = (p.coords - centroid) * scale;
        (Vector4::new(c.x, c.y, c.z, 1.0), w)
    }));
    let eig = SymmetricEigen::new(q);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[3]];
    if eig.eigenvalues[order[1]] <= RANK_TOLERANCE * largest {
        return Err(GpaError::DegenerateCloud);
    }
    let coeffs = eig.eigenvectors.column(order[0]);

    // n' . s (p - c) + d' = 0  =>  (s n') . p + (d' - s n' . c) = 0
    let n = Vector3::new(coeffs[0], coeffs[1], coeffs[2]) * scale;
    let d = coeffs[3] - n.dot(&centroid);
    let norm = n.norm();
    if !(norm > 0.0) {
        return Err(GpaError::DegenerateCloud);
    }
    let (mut normal, mut offset) = (n / norm, -d / norm);
    if offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    Ok(PlaneHypothesis {
        normal,
        offset,
        frame: PlaneFrame::Global,
    })
}

/// Outcome of the prune-and-refit loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRefit {
    pub plane: PlaneHypothesis,
    /// Indices into the input cloud of the reserved points.
    pub reserved: Vec<usize>,
    pub reserved_points: Vec<Point3<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits, drops points beyond the cutoff, refits, until nothing is dropped.
///
/// While the worst residual exceeds the inlier threshold the cutoff is the
/// larger of the threshold and half that residual, so gross outliers go
/// first and a single skewed initial fit cannot wipe out the inliers. The
/// loop ends when an iteration removes nothing, which means every reserved
/// point is within `inlier_threshold` of the final plane.
pub fn ransac_prune_refit(
    cloud: &WeightedCloud,
    max_iterations: usize,
    inlier_threshold: f64,
) -> Result<PlaneRefit, GpaError> {
    let mut active: Vec<usize> = (0..cloud.len()).collect();
    let mut plane = svd_plane_fit(cloud)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iterations {
        iterations += 1;
        if iterations > 1 {
            plane =
                svd_plane_fit(&cloud.subset(&active)).map_err(|_| GpaError::CollapsedCloud {
                    survivors: active.len(),
                })?;
        }
        let worst = active
            .iter()
            .map(|&i| plane.distance(&cloud.points[i]))
            .fold(0.0, f64::max);
        let cutoff = inlier_threshold.max(PRUNE_SHRINK * worst);
        let keep: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| plane.distance(&cloud.points[i]) <= cutoff)
            .collect();
        if keep.len() == active.len() {
            converged = true;
            break;
        }
        if keep.len() < 3 {
            return Err(GpaError::CollapsedCloud {
                survivors: keep.len(),
            });
        }
        active = keep;
    }

    if !converged {
        active.retain(|&i| plane.distance(&cloud.points[i]) <= inlier_threshold);
        if active.len() < 3 {
            return Err(GpaError::CollapsedCloud {
                survivors: active.len(),
            });
        }
    }
    let reserved_points = active.iter().map(|&i| cloud.points[i]).collect();
    Ok(PlaneRefit {
        plane,
        reserved: active,
        reserved_points,
        iterations,
        converged,
    })
}

/// `h_j = n . (p_c - p_j)` for every reserved point.
pub fn camera_heights(
    normal: &Vector3<f64>,
    reserved: &[Point3<f64>],
    camera_center: &Point3<f64>,
) -> Vec<f64> {
    reserved
        .iter()
        .map(|p| normal.dot(&(camera_center - p)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpaResult {
    /// Global-frame plane with `h > 0`.
    pub plane: PlaneHypothesis,
    pub reserved_points: Vec<Point3<f64>>,
    pub provenance: Vec<(u64, usize)>,
    pub heights: Vec<f64>,
}

/// Fits the window and measures camera heights from `camera_center`.
///
/// The height normal is the fitted normal oriented from the plane towards
/// the camera.
pub fn aggregate(
    window: &WindowBuffer,
    camera_center: &Point3<f64>,
    cfg: &GpaConfig,
) -> Result<GpaResult, GpaError> {
    let cloud = window.cloud(cfg.sigma_floor);
    let refit = ransac_prune_refit(&cloud, cfg.max_iterations, cfg.inlier_threshold)?;
    let plane = refit.plane;
    let towards_camera = if plane.signed_distance(camera_center) >= 0.0 {
        plane.normal
    } else {
        -plane.normal
    };
    let heights = camera_heights(&towards_camera, &refit.reserved_points, camera_center);
    let provenance = refit
        .reserved
        .iter()
        .map(|&i| cloud.provenance[i])
        .collect();
    Ok(GpaResult {
        plane,
        reserved_points: refit.reserved_points,
        provenance,
        heights,
    })
}
