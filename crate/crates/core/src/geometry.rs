//! Geometric primitives shared by ground point extraction and aggregation.
//!
//! Camera frames follow the usual pinhole convention: `x` right, `y` down,
//! `z` forward. A ground plane below the camera therefore has a normal close
//! to `+y` and a positive offset.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

/// Collinearity threshold on `|(x1 - x2) x (x1 - x3)|` (squared scene units).
pub const AREA_EPSILON: f64 = 1e-10;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

const PITCH_SINGULARITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("triangle vertices are collinear")]
    DegenerateTriangle,
    #[error("pitch undefined: |R33| = {0:e} is below 1e-12")]
    SingularPitch(f64),
    #[error("matrix is not a proper rotation (orthogonality error {orthogonality:e}, det {det})")]
    InvalidRotation { orthogonality: f64, det: f64 },
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Projects a camera-frame point onto the image plane.
    pub fn project(&self, x: &Point3<f64>) -> Point2<f64> {
        Point2::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform `x_target = R * x_source + t`.
///
/// Absolute poses map camera coordinates into the global frame, so the
/// translation is the camera center. Relative poses `T_{t,t-1}` map frame
/// `t-1` coordinates into frame `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("pose"));
        }
        let orthogonality = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if orthogonality > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation { orthogonality, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, x: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * x.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Same rotation, translation multiplied by `s`.
    pub fn with_scaled_translation(&self, s: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }
}

/// Which frame a plane's parameters are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneFrame {
    Camera(u64),
    Global,
}

/// Plane `n . x - h = 0` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHypothesis {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub frame: PlaneFrame,
}

impl PlaneHypothesis {
    /// Signed distance `n . x - h`.
    pub fn signed_distance(&self, x: &Point3<f64>) -> f64 {
        self.normal.dot(&x.coords) - self.offset
    }

    pub fn distance(&self, x: &Point3<f64>) -> f64 {
        self.signed_distance(x).abs()
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
            frame: self.frame,
        }
    }

    /// Homogeneous form `[n, -h]`.
    pub fn homogeneous(&self) -> nalgebra::Vector4<f64> {
        nalgebra::Vector4::new(self.normal.x, self.normal.y, self.normal.z, -self.offset)
    }

    /// Angle between the normals of two planes, ignoring orientation.
    pub fn normal_angle(&self, other: &PlaneHypothesis) -> f64 {
        self.normal.dot(&other.normal).abs().min(1.0).acos()
    }
}

/// Back-projected triangle in a camera frame, remembering which features
/// its vertices came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle3 {
    pub vertices: [Point3<f64>; 3],
    pub indices: [usize; 3],
}

/// `depth * K^-1 * [u, v, 1]`.
pub fn back_project(
    u: &Point2<f64>,
    depth: f64,
    k: &Intrinsics,
) -> Result<Point3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Point3::new(
        depth * (u.x - k.cx) / k.fx,
        depth * (u.y - k.cy) / k.fy,
        depth,
    ))
}

/// Unit normal of a triangle from the cross product of its edges.
///
/// The vertices are rotated so the lexicographically smallest comes first
/// before evaluating, which keeps the output bit-identical under cyclic
/// permutation. The sign follows the cross product; no orientation is imposed.
pub fn triangle_normal(
    x1: &Point3<f64>,
    x2: &Point3<f64>,
    x3: &Point3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let verts = [x1, x2, x3];
    let first = (0..3)
        .min_by(|&a, &b| lex_cmp(verts[a], verts[b]))
        .unwrap_or(0);
    let (a, b, c) = (verts[first], verts[(first + 1) % 3], verts[(first + 2) % 3]);
    let cross = (a - b).cross(&(a - c));
    let norm = cross.norm();
    if !(norm >= AREA_EPSILON) {
        return Err(GeometryError::DegenerateTriangle);
    }
    Ok(cross / norm)
}

fn lex_cmp(a: &Point3<f64>, b: &Point3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Offset `h = n . x` of the plane through `x` with normal `n`.
pub fn plane_offset(n: &Vector3<f64>, x: &Point3<f64>) -> f64 {
    n.dot(&x.coords)
}

pub fn transform_to_global(x: &Point3<f64>, pose: &Pose) -> Point3<f64> {
    pose.transform_point(x)
}

/// `atan(-R32 / R33)`.
pub fn pitch_angle(r: &Matrix3<f64>) -> Result<f64, GeometryError> {
    let r33 = r[(2, 2)];
    if r33.abs() < PITCH_SINGULARITY {
        return Err(GeometryError::SingularPitch(r33));
    }
    Ok((-r[(2, 1)] / r33).atan())
}

/// Rotation about the camera `x` axis.
pub fn rotation_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the camera `y` axis (yaw for a forward-looking camera).
pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}
