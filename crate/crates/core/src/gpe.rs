//! Ground point extraction for a single frame.
//!
//! Triangles from the image-space Delaunay mesh are back-projected into the
//! camera frame and kept when their plane looks like road surface: the
//! normal points down the camera `y` axis, the camera sits on the positive
//! side, the normal is orthogonal to the direction of travel and the frame
//! has no pitch. Vertices of the surviving triangles are then refined with a
//! three-point RANSAC plane fit.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::delaunay::{triangulate, DelaunayError, Triangulation};
use crate::frame::FeatureFrame;
use crate::geometry::{
    pitch_angle, plane_offset, triangle_normal, PlaneFrame, PlaneHypothesis, Pose, Triangle3,
};

const MIN_TRANSLATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpeError {
    #[error("relative translation is zero; the orthogonality gate is undefined")]
    ZeroTranslation,
    #[error("only {found} candidate ground points, need {required}")]
    TooFewCandidates { found: usize, required: usize },
    #[error("no RANSAC sample produced a valid ground hypothesis")]
    NoValidHypothesis,
    #[error("invalid GPE configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Triangulation(#[from] DelaunayError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpeConfig {
    /// Maximum absolute pitch of the relative rotation (radians).
    pub pitch_tolerance: f64,
    /// Maximum deviation from 90 degrees between a triangle normal and the
    /// translation direction (radians).
    pub orthogonality_tolerance: f64,
    pub ransac_iterations: usize,
    /// RANSAC inlier distance, in the units of the candidate points.
    pub inlier_threshold: f64,
    pub min_candidates: usize,
}

impl Default for GpeConfig {
    fn default() -> Self {
        Self {
            pitch_tolerance: 5f64.to_radians(),
            orthogonality_tolerance: 5f64.to_radians(),
            ransac_iterations: 200,
            inlier_threshold: 0.01,
            min_candidates: 5,
        }
    }
}

impl GpeConfig {
    pub fn validate(&self) -> Result<(), GpeError> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.pitch_tolerance > 0.0 && self.pitch_tolerance < half_pi) {
            return Err(GpeError::InvalidConfig(
                "pitch tolerance must be in (0, pi/2)",
            ));
        }
        if !(self.orthogonality_tolerance > 0.0 && self.orthogonality_tolerance < half_pi) {
            return Err(GpeError::InvalidConfig(
                "orthogonality tolerance must be in (0, pi/2)",
            ));
        }
        if self.ransac_iterations == 0 {
            return Err(GpeError::InvalidConfig(
                "RANSAC iterations must be positive",
            ));
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(GpeError::InvalidConfig("inlier threshold must be positive"));
        }
        if self.min_candidates < 3 {
            return Err(GpeError::InvalidConfig(
                "need at least 3 candidates for a plane",
            ));
        }
        Ok(())
    }
}

/// A candidate ground point and the feature it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub point: Point3<f64>,
}

/// Refined on-plane points of one frame, in that frame's camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPointSet {
    pub points: Vec<Point3<f64>>,
    /// Feature index of each point.
    pub indices: Vec<usize>,
    pub plane: PlaneHypothesis,
    pub inlier_count: usize,
}

/// One RANSAC draw, recorded when tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample: [usize; 3],
    /// `None` for degenerate or wrongly oriented samples.
    pub plane: Option<PlaneHypothesis>,
    pub inliers: usize,
}

/// Orients a plane so the normal has a positive `y` component, then checks
/// that the camera lies on the positive side.
fn ground_oriented(normal: Vector3<f64>, anchor: &Point3<f64>) -> Option<(Vector3<f64>, f64)> {
    let n = if normal.y < 0.0 { -normal } else { normal };
    let h = plane_offset(&n, anchor);
    (n.y > 0.0 && h > 0.0).then_some((n, h))
}

/// Frame-level pitch gate on the relative rotation.
pub fn pitch_gate(pose: &Pose, cfg: &GpeConfig) -> bool {
    pitch_angle(pose.rotation()).is_ok_and(|p| p.abs() < cfg.pitch_tolerance)
}

/// Per-triangle ground test against a unit travel direction. Returns the
/// oriented normal and offset when the triangle passes.
pub fn gate_triangle(
    tri: &Triangle3,
    travel: &Vector3<f64>,
    cfg: &GpeConfig,
) -> Option<(Vector3<f64>, f64)> {
    let [x1, x2, x3] = &tri.vertices;
    let normal = triangle_normal(x1, x2, x3).ok()?;
    let (n, h) = ground_oriented(normal, x1)?;
    // |90 deg - angle(n, t)| < tol  <=>  |n . t| < sin(tol)
    (n.dot(travel).abs() < cfg.orthogonality_tolerance.sin()).then_some((n, h))
}

/// Back-projects every triangle of the mesh into the frame's camera coordinates.
pub fn back_project_triangles(tri: &Triangulation, frame: &FeatureFrame) -> Vec<Triangle3> {
    tri.triangles
        .iter()
        .filter_map(|idx| {
            let a = frame.back_project(idx[0]).ok()?;
            let b = frame.back_project(idx[1]).ok()?;
            let c = frame.back_project(idx[2]).ok()?;
            Some(Triangle3 {
                vertices: [a, b, c],
                indices: *idx,
            })
        })
        .collect()
}

/// Applies the ground gates to already back-projected triangles.
pub fn gate_triangle_set(
    triangles: &[Triangle3],
    relative_pose: &Pose,
    cfg: &GpeConfig,
) -> Result<Vec<Triangle3>, GpeError> {
    let t = relative_pose.translation();
    let norm = t.norm();
    if !(norm >= MIN_TRANSLATION) {
        return Err(GpeError::ZeroTranslation);
    }
    if !pitch_gate(relative_pose, cfg) {
        return Ok(Vec::new());
    }
    let travel = t / norm;
    Ok(triangles
        .iter()
        .filter(|tri| gate_triangle(tri, &travel, cfg).is_some())
        .cloned()
        .collect())
}

/// Ground triangles of a frame's Delaunay mesh.
pub fn gate_triangles(
    tri: &Triangulation,
    frame: &FeatureFrame,
    cfg: &GpeConfig,
) -> Result<Vec<Triangle3>, GpeError> {
    if frame.relative_pose.translation().norm() < MIN_TRANSLATION {
        return Err(GpeError::ZeroTranslation);
    }
    if !pitch_gate(&frame.relative_pose, cfg) {
        return Ok(Vec::new());
    }
    gate_triangle_set(
        &back_project_triangles(tri, frame),
        &frame.relative_pose,
        cfg,
    )
}

/// Union of triangle vertices, one entry per source feature, in order of
/// first appearance.
pub fn collect_candidates(triangles: &[Triangle3]) -> Vec<Candidate> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for tri in triangles {
        for (point, &index) in tri.vertices.iter().zip(&tri.indices) {
            if seen.insert(index) {
                out.push(Candidate {
                    index,
                    point: *point,
                });
            }
        }
    }
    out
}

/// Three-point RANSAC over the candidates, keeping the hypothesis with the
/// most points closer than the inlier threshold (first one wins ties).
///
/// The returned plane is tagged `PlaneFrame::Camera(0)`; [`extract_ground`]
/// retags it with the frame id.
pub fn ransac_refine(
    candidates: &[Candidate],
    cfg: &GpeConfig,
    seed: u64,
) -> Result<GroundPointSet, GpeError> {
    run_ransac(candidates, cfg, seed, None)
}

/// [`ransac_refine`] that also records every draw.
pub fn ransac_refine_traced(
    candidates: &[Candidate],
    cfg: &GpeConfig,
    seed: u64,
    trace: &mut Vec<SampleRecord>,
) -> Result<GroundPointSet, GpeError> {
    run_ransac(candidates, cfg, seed, Some(trace))
}

fn count_inliers(candidates: &[Candidate], n: &Vector3<f64>, h: f64, thresh: f64) -> usize {
    candidates
        .iter()
        .filter(|c| (n.dot(&c.point.coords) - h).abs() < thresh)
        .count()
}

fn run_ransac(
    candidates: &[Candidate],
    cfg: &GpeConfig,
    seed: u64,
    mut trace: Option<&mut Vec<SampleRecord>>,
) -> Result<GroundPointSet, GpeError> {
    if candidates.len() < cfg.min_candidates.max(3) {
        return Err(GpeError::TooFewCandidates {
            found: candidates.len(),
            required: cfg.min_candidates.max(3),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;

    for _ in 0..cfg.ransac_iterations {
        let draw = rand::seq::index::sample(&mut rng, candidates.len(), 3);
        let sample = [draw.index(0), draw.index(1), draw.index(2)];
        let [a, b, c] = sample.map(|i| &candidates[i].point);
        let hypothesis = triangle_normal(a, b, c)
            .ok()
            .and_then(|normal| ground_oriented(normal, a));
        let Some((n, h)) = hypothesis else {
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(SampleRecord {
                    sample,
                    plane: None,
                    inliers: 0,
                });
            }
            continue;
        };
        let inliers = count_inliers(candidates, &n, h, cfg.inlier_threshold);
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(SampleRecord {
                sample,
                plane: Some(PlaneHypothesis {
                    normal: n,
                    offset: h,
                    frame: PlaneFrame::Camera(0),
                }),
                inliers,
            });
        }
        if best.is_none_or(|(_, _, count)| inliers > count) {
            best = Some((n, h, inliers));
        }
    }

    let (normal, offset, inlier_count) = best.ok_or(GpeError::NoValidHypothesis)?;
    let (points, indices) = candidates
        .iter()
        .filter(|c| (normal.dot(&c.point.coords) - offset).abs() < cfg.inlier_threshold)
        .map(|c| (c.point, c.index))
        .unzip();
    Ok(GroundPointSet {
        points,
        indices,
        plane: PlaneHypothesis {
            normal,
            offset,
            frame: PlaneFrame::Camera(0),
        },
        inlier_count,
    })
}

/// Triangulate, gate, collect and refine: the full per-frame extraction.
pub fn extract_ground(
    frame: &FeatureFrame,
    cfg: &GpeConfig,
    seed: u64,
) -> Result<GroundPointSet, GpeError> {
    let mesh = triangulate(&frame.pixels())?;
    let ground = gate_triangles(&mesh, frame, cfg)?;
    let candidates = collect_candidates(&ground);
    let mut set = ransac_refine(&candidates, cfg, seed)?;
    set.plane.frame = PlaneFrame::Camera(frame.id);
    Ok(set)
}
