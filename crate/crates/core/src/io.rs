//! File formats: JSON-lines frame streams, KITTI-style trajectories, the
//! per-frame scale CSV, label sidecars and the JSON report.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Feature, FeatureFrame};
use crate::geometry::{GeometryError, Intrinsics, Pose};
use crate::metrics::{EvalReport, Trajectory};
use crate::scale_filter::{ScaleEstimate, ScaleStatus};
use crate::synth::PointLabel;

/// Largest rotation defect repaired on read. Text trajectories often carry
/// only six or so significant digits.
const REPAIRABLE_ROTATION_ERROR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: frame id {found} does not follow {previous}")]
    NonMonotonicFrameIds {
        line: usize,
        previous: u64,
        found: u64,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            IoError::Parse { .. } | IoError::NonMonotonicFrameIds { .. }
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    id: u64,
    #[serde(default)]
    timestamp: f64,
    #[serde(rename = "K")]
    k: [f64; 4],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    features: Vec<[f64; 3]>,
}

impl FrameRecord {
    fn from_frame(f: &FeatureFrame) -> Self {
        let k = &f.intrinsics;
        let r = f.relative_pose.rotation();
        let t = f.relative_pose.translation();
        Self {
            id: f.id,
            timestamp: f.timestamp,
            k: [k.fx, k.fy, k.cx, k.cy],
            r: row_major(r),
            t: [t.x, t.y, t.z],
            features: f
                .features
                .iter()
                .map(|x| [x.pixel.x, x.pixel.y, x.depth])
                .collect(),
        }
    }

    fn into_frame(self) -> Result<FeatureFrame, String> {
        let [fx, fy, cx, cy] = self.k;
        let intrinsics = Intrinsics::new(fx, fy, cx, cy).map_err(|e| e.to_string())?;
        let relative_pose = pose_from_parts(&self.r, &self.t).map_err(|e| e.to_string())?;
        let mut features = Vec::with_capacity(self.features.len());
        for (i, [u, v, d]) in self.features.into_iter().enumerate() {
            if !(u.is_finite() && v.is_finite()) {
                return Err(format!("feature {i} has a non-finite pixel"));
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(format!("feature {i} has depth {d}"));
            }
            features.push(Feature::new(u, v, d));
        }
        Ok(FeatureFrame {
            id: self.id,
            timestamp: self.timestamp,
            intrinsics,
            relative_pose,
            features,
        })
    }
}

#[rustfmt::skip]
fn row_major(r: &Matrix3<f64>) -> [f64; 9] {
    [
        r[(0, 0)], r[(0, 1)], r[(0, 2)],
        r[(1, 0)], r[(1, 1)], r[(1, 2)],
        r[(2, 0)], r[(2, 1)], r[(2, 2)],
    ]
}

/// Builds a pose, snapping slightly non-orthonormal rotations to the
/// nearest rotation.
fn pose_from_parts(r: &[f64; 9], t: &[f64; 3]) -> Result<Pose, GeometryError> {
    let m = Matrix3::from_row_slice(r);
    let t = Vector3::from_row_slice(t);
    match Pose::new(m, t) {
        Err(GeometryError::InvalidRotation { orthogonality, det })
            if orthogonality < REPAIRABLE_ROTATION_ERROR
                && (det - 1.0).abs() < REPAIRABLE_ROTATION_ERROR =>
        {
            Pose::new(nearest_rotation(&m), t)
        }
        other => other,
    }
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (mut u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    if (u * v_t).determinant() < 0.0 {
        let c = -u.column(2);
        u.set_column(2, &c);
    }
    u * v_t
}

/// Streaming reader over JSON-lines frame records. Blank lines are skipped.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    previous: Option<u64>,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            previous: None,
        }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FeatureFrame, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let parsed = serde_json::from_str::<FrameRecord>(&text)
                .map_err(|e| e.to_string())
                .and_then(FrameRecord::into_frame)
                .map_err(|reason| IoError::Parse { line, reason });
            return Some(parsed.and_then(|frame| {
                if let Some(previous) = self.previous {
                    if frame.id <= previous {
                        return Err(IoError::NonMonotonicFrameIds {
                            line,
                            previous,
                            found: frame.id,
                        });
                    }
                }
                self.previous = Some(frame.id);
                Ok(frame)
            }));
        }
    }
}

pub fn load_frames(path: impl AsRef<Path>) -> Result<FrameReader<BufReader<File>>, IoError> {
    Ok(FrameReader::new(BufReader::new(File::open(path)?)))
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<FeatureFrame>, IoError> {
    load_frames(path)?.collect()
}

pub fn write_frame(mut w: impl Write, frame: &FeatureFrame) -> Result<(), IoError> {
    serde_json::to_writer(&mut w, &FrameRecord::from_frame(frame))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn save_frames<'a>(
    path: impl AsRef<Path>,
    frames: impl IntoIterator<Item = &'a FeatureFrame>,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        write_frame(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

/// One `[R | t]` per line, twelve numbers, row-major.
pub fn write_trajectory(mut w: impl Write, traj: &Trajectory) -> Result<(), IoError> {
    for p in &traj.poses {
        let r = p.rotation();
        let t = p.translation();
        let mut vals = Vec::with_capacity(12);
        for i in 0..3 {
            vals.extend([r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]]);
        }
        let line: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(&mut w, traj)?;
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(r: impl BufRead) -> Result<Trajectory, IoError> {
    let mut poses = Vec::new();
    for (i, text) in r.lines().enumerate() {
        let text = text?;
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::Parse {
                line,
                reason: format!("{e}"),
            })?;
        if vals.len() != 12 {
            return Err(IoError::Parse {
                line,
                reason: format!("expected 12 values, found {}", vals.len()),
            });
        }
        let r = [
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        ];
        let pose =
            pose_from_parts(&r, &[vals[3], vals[7], vals[11]]).map_err(|e| IoError::Parse {
                line,
                reason: e.to_string(),
            })?;
        poses.push(pose);
    }
    Ok(Trajectory::new(poses))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, IoError> {
    read_trajectory(BufReader::new(File::open(path)?))
}

/// `frame_id,raw_scale,smoothed_scale,n_ground_points`; `raw_scale` is empty
/// for carried-over frames.
pub fn write_scales(mut w: impl Write, scales: &[ScaleEstimate]) -> Result<(), IoError> {
    writeln!(w, "frame_id,raw_scale,smoothed_scale,n_ground_points")?;
    for s in scales {
        let raw = match (s.status, s.raw_scale) {
            (ScaleStatus::Fresh, Some(r)) => r.to_string(),
            _ => String::new(),
        };
        writeln!(
            w,
            "{},{},{},{}",
            s.frame_id,
            raw,
            s.smoothed_scale,
            s.heights.len()
        )?;
    }
    Ok(())
}

pub fn save_scales(path: impl AsRef<Path>, scales: &[ScaleEstimate]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scales(&mut w, scales)?;
    w.flush()?;
    Ok(())
}

pub fn save_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Ground-truth annotations of one synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub id: u64,
    pub true_scale: f64,
    pub labels: Vec<PointLabel>,
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[FrameLabels]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<FrameLabels>, IoError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, text) in r.lines().enumerate() {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&text).map_err(|e| IoError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_y;
    use crate::synth::{generate_scene, Preset, SyntheticScene};
    use std::io::Cursor;

    fn parse(text: &str) -> Vec<Result<FeatureFrame, IoError>> {
        FrameReader::new(Cursor::new(text)).collect()
    }

    const ONE: &str = r#"{"id":3,"timestamp":0.5,"K":[700,710,600,180],"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,-1],"features":[[10.5,200,4.25],[300,250,9]]}"#;

    #[test]
    fn empty_input() {
        assert!(parse("").is_empty());
        assert!(parse("\n  \n").is_empty());
    }

    #[test]
    fn single_frame_fields() {
        let f = parse(ONE).pop().unwrap().unwrap();
        assert_eq!(f.id, 3);
        assert_eq!(f.timestamp, 0.5);
        assert_eq!(
            (
                f.intrinsics.fx,
                f.intrinsics.fy,
                f.intrinsics.cx,
                f.intrinsics.cy
            ),
            (700.0, 710.0, 600.0, 180.0)
        );
        assert_eq!(*f.relative_pose.translation(), Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(
            f.features,
            vec![
                Feature::new(10.5, 200.0, 4.25),
                Feature::new(300.0, 250.0, 9.0)
            ]
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{ONE}\n\nnot json\n");
        let out = parse(&text);
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(IoError::Parse { line: 3, .. })));

        let bad_depth = ONE.replace("4.25", "-1");
        assert!(matches!(
            parse(&bad_depth)[0],
            Err(IoError::Parse { line: 1, .. })
        ));
        let bad_rot = ONE.replace("[1,0,0,0,1,0,0,0,1]", "[2,0,0,0,1,0,0,0,1]");
        assert!(matches!(
            parse(&bad_rot)[0],
            Err(IoError::Parse { line: 1, .. })
        ));

        let repeat = format!("{ONE}\n{ONE}\n");
        let out = parse(&repeat);
        assert!(matches!(
            out[1],
            Err(IoError::NonMonotonicFrameIds {
                line: 2,
                previous: 3,
                found: 3
            })
        ));
    }

    #[test]
    fn frames_round_trip_bit_exact() {
        let mut scene = SyntheticScene::from_preset(Preset::Curves, 5, 2.3, 4);
        scene.pixel_noise = 0.7;
        scene.clutter_fraction = 0.2;
        let frames = generate_scene(&scene).unwrap().frames;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        save_frames(&path, &frames).unwrap();
        assert_eq!(read_frames(&path).unwrap(), frames);
    }

    #[test]
    fn trajectory_round_trip() {
        let rels: Vec<Pose> = (0..40)
            .map(|i| {
                Pose::new(
                    rotation_y(0.1 * i as f64),
                    Vector3::new(0.3, 0.0, -1.0 / 3.0),
                )
                .unwrap()
            })
            .collect();
        let traj = Trajectory::from_relative(&rels);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.split_whitespace().count() == 12));
        assert_eq!(read_trajectory(Cursor::new(buf)).unwrap(), traj);
    }

    #[test]
    fn low_precision_rotations_are_repaired() {
        let r = rotation_y(0.7);
        let mut line = String::new();
        for i in 0..3 {
            line += &format!(
                "{:.6} {:.6} {:.6} {:.6} ",
                r[(i, 0)],
                r[(i, 1)],
                r[(i, 2)],
                i as f64
            );
        }
        let traj = read_trajectory(Cursor::new(line)).unwrap();
        let got = traj.poses[0].rotation();
        assert!((got - r).amax() < 1e-6);
        assert!((got * got.transpose() - Matrix3::identity()).amax() < 1e-12);
        assert!(read_trajectory(Cursor::new("1 0 0")).is_err());
    }

    #[test]
    fn scales_csv_layout() {
        let s = vec![
            ScaleEstimate {
                frame_id: 0,
                heights: vec![],
                median_height: None,
                raw_scale: None,
                smoothed_scale: 2.0,
                status: ScaleStatus::CarriedOver,
            },
            ScaleEstimate {
                frame_id: 1,
                heights: vec![0.85, 0.85],
                median_height: Some(0.85),
                raw_scale: Some(2.0),
                smoothed_scale: 2.0,
                status: ScaleStatus::Fresh,
            },
        ];
        let mut buf = Vec::new();
        write_scales(&mut buf, &s).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frame_id,raw_scale,smoothed_scale,n_ground_points\n0,,2,0\n1,2,2,2\n"
        );
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let l = vec![FrameLabels {
            id: 0,
            true_scale: 2.0,
            labels: vec![PointLabel::Ground, PointLabel::Moving],
        }];
        save_labels(&path, &l).unwrap();
        assert_eq!(load_labels(&path).unwrap(), l);
    }
}
