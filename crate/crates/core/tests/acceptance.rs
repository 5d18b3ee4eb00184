//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::time::Instant;

use groundscale::delaunay::triangulate;
use groundscale::geometry::{plane_offset, triangle_normal};
use groundscale::gpa::{svd_plane_fit, WeightedCloud};
use groundscale::gpe::{collect_candidates, gate_triangles, ransac_refine, Candidate, GpeConfig};
use groundscale::metrics::rle;
use groundscale::scale_filter::{frame_scale, smooth, FilterConfig, ScaleFilter, ScaleStatus};
use groundscale::synth::{generate_scene, Preset, SyntheticScene};
use groundscale::{evaluate, run_pipeline, PipelineConfig};
use nalgebra::{Point2, Point3, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEIGHT: f64 = 1.7;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn clean_scale_recovery() -> Outcome {
    let start = Instant::now();
    let seq = generate_scene(&SyntheticScene::from_preset(Preset::Straight, 200, 2.0, 1)).unwrap();
    let out = match run_pipeline(&seq.frames, &PipelineConfig::new(HEIGHT)) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let worst = out
        .scales
        .iter()
        .filter(|s| s.status == ScaleStatus::Fresh)
        .map(|s| (s.raw_scale.unwrap() - 2.0).abs())
        .fold(0.0, f64::max);
    let fresh = out
        .scales
        .iter()
        .filter(|s| s.status == ScaleStatus::Fresh)
        .count();
    let report = evaluate(&out, Some(&seq.truth), Some(&seq.true_scales));
    let rle = report.rle.unwrap();
    outcome(
        fresh > 0 && worst <= 1e-6 && rle < 0.01 && elapsed < 5.0,
        format!(
            "{fresh} fresh frames, max |raw scale - 2| = {worst:.2e} (<= 1e-6), \
             RLE {rle:.2e}% (< 0.01%), runtime {elapsed:.2} s (< 5 s)"
        ),
    )
}

fn noisy_scale_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in [Preset::Straight, Preset::Loop, Preset::Curves] {
        let mut scene = SyntheticScene::from_preset(preset, 200, 2.0, 11);
        scene.pixel_noise = 0.5;
        scene.clutter_fraction = 0.2;
        scene.moving_fraction = 0.1;
        let seq = generate_scene(&scene).unwrap();
        let out = match run_pipeline(&seq.frames, &PipelineConfig::new(HEIGHT)) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("{preset:?}: pipeline failed: {e}")),
        };
        let r = evaluate(&out, Some(&seq.truth), Some(&seq.true_scales));
        let median = r.scale_error.unwrap().median;
        let rle = r.rle.unwrap();
        pass &= median < 2.0 && rle < 2.8;
        parts.push(format!(
            "{preset:?}: median scale err {median:.3}%, RLE {rle:.3}%"
        ));
    }
    outcome(pass, format!("{} (limits 2% / 2.8%)", parts.join("; ")))
}

fn gpe_selectivity() -> Outcome {
    let cfg = GpeConfig::default();
    let (mut kept, mut kept_ground, mut all_ground) = (0usize, 0usize, 0usize);
    let (mut min_ground_tris, mut min_other_tris) = (usize::MAX, usize::MAX);
    for trial in 0..100u64 {
        let mut scene = SyntheticScene::from_preset(Preset::Curves, 2, 1.0, 1000 + trial);
        scene.clutter_fraction = 0.2;
        scene.moving_fraction = 0.1;
        let seq = generate_scene(&scene).unwrap();
        let (frame, labels) = (&seq.frames[1], &seq.labels[1]);

        let mesh = triangulate(&frame.pixels()).unwrap();
        let ground_tris = mesh
            .triangles
            .iter()
            .filter(|t| t.iter().all(|&i| labels[i].is_ground()))
            .count();
        min_ground_tris = min_ground_tris.min(ground_tris);
        min_other_tris = min_other_tris.min(mesh.triangles.len() - ground_tris);

        let gated = gate_triangles(&mesh, frame, &cfg).unwrap();
        let refined = match ransac_refine(&collect_candidates(&gated), &cfg, trial) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("trial {trial}: {e}")),
        };
        kept += refined.indices.len();
        kept_ground += refined
            .indices
            .iter()
            .filter(|&&i| labels[i].is_ground())
            .count();
        all_ground += labels.iter().filter(|l| l.is_ground()).count();
    }
    let precision = kept_ground as f64 / kept as f64;
    let recall = kept_ground as f64 / all_ground as f64;
    outcome(
        precision >= 0.99 && recall >= 0.90 && min_ground_tris >= 50 && min_other_tris >= 50,
        format!(
            "precision {precision:.4} (>= 0.99), recall {recall:.4} (>= 0.90); \
             per frame at least {min_ground_tris} ground / {min_other_tris} other triangles"
        ),
    )
}

fn ransac_robustness() -> Outcome {
    let cfg = GpeConfig::default();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let tilt = Vector3::new(
            rng.random_range(-0.15..0.15),
            1.0,
            rng.random_range(-0.15..0.15),
        );
        let n = tilt.normalize();
        let (u, w) = {
            let u = n.cross(&Vector3::z()).normalize();
            (u, n.cross(&u))
        };
        let mut points: Vec<Point3<f64>> = (0..60)
            .map(|_| {
                let p =
                    n * HEIGHT + u * rng.random_range(-8.0..8.0) + w * rng.random_range(-8.0..8.0);
                Point3::from(p + n * rng.random_range(-0.003..0.003))
            })
            .collect();
        for _ in 0..40 {
            points.push(Point3::new(
                rng.random_range(-8.0..8.0),
                rng.random_range(-2.0..HEIGHT - 0.1),
                rng.random_range(3.0..30.0),
            ));
        }
        let candidates: Vec<Candidate> = points
            .into_iter()
            .enumerate()
            .map(|(index, point)| Candidate { index, point })
            .collect();
        if let Ok(set) = ransac_refine(&candidates, &cfg, run) {
            let angle = set.plane.normal.angle(&n).to_degrees();
            worst = worst.max(angle);
            if angle <= 1.0 {
                good += 1;
            }
        }
    }
    outcome(
        good >= 99,
        format!("{good}/100 runs within 1 deg (>= 99), worst {worst:.3} deg"),
    )
}

fn circumcircle_contains(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, p: Point2<f64>) -> bool {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let sq = |q: Point2<f64>| q.x * q.x + q.y * q.y;
    let ux = (sq(a) * (b.y - c.y) + sq(b) * (c.y - a.y) + sq(c) * (a.y - b.y)) / d;
    let uy = (sq(a) * (c.x - b.x) + sq(b) * (a.x - c.x) + sq(c) * (b.x - a.x)) / d;
    let center = Point2::new(ux, uy);
    let r = (a - center).norm();
    (p - center).norm() < r * (1.0 - 1e-9)
}

/// Hull vertex count by Andrew's monotone chain, dropping collinear points.
fn hull_size(points: &[Point2<f64>]) -> usize {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let cross = |o: Point2<f64>, a: Point2<f64>, b: Point2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Point2<f64>> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull.len()
}

fn delaunay_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0usize;
    for set in 0..1000 {
        let n = rng.random_range(3..=12);
        let points: Vec<Point2<f64>> = (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..1241.0), rng.random_range(0.0..376.0)))
            .collect();
        let tri = match triangulate(&points) {
            Ok(t) => t,
            Err(e) => return outcome(false, format!("set {set}: {e}")),
        };
        for t in &tri.triangles {
            let [a, b, c] = t.map(|i| points[i]);
            for (j, &p) in points.iter().enumerate() {
                if !t.contains(&j) && circumcircle_contains(a, b, c, p) {
                    return outcome(
                        false,
                        format!("set {set}: point {j} inside circumcircle of {t:?}"),
                    );
                }
            }
            checked += 1;
        }
        let expected = 2 * n - 2 - hull_size(&points);
        if tri.triangles.len() != expected {
            return outcome(
                false,
                format!(
                    "set {set}: {} triangles, expected {expected}",
                    tri.triangles.len()
                ),
            );
        }
    }
    outcome(
        true,
        format!("1000 sets, {checked} triangles pass empty-circumcircle and 2n-2-h count"),
    )
}

fn weighted_fit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_residual, mut worst_three, mut worst_rescale) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = Vector3::new(
            rng.random_range(-0.3..0.3),
            1.0,
            rng.random_range(-0.3..0.3),
        )
        .normalize();
        let h = rng.random_range(0.5..3.0);
        let u = n.cross(&Vector3::x()).normalize();
        let w = n.cross(&u);
        let count = rng.random_range(10..200);
        let points: Vec<Point3<f64>> = (0..count)
            .map(|_| {
                Point3::from(
                    n * h + u * rng.random_range(-20.0..20.0) + w * rng.random_range(-20.0..20.0),
                )
            })
            .collect();
        let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..10.0)).collect();
        let prov: Vec<(u64, usize)> = (0..count).map(|i| (0, i)).collect();
        let cloud = WeightedCloud::new(points.clone(), weights.clone(), prov.clone()).unwrap();
        let plane = svd_plane_fit(&cloud).unwrap();
        let v = plane.homogeneous();
        let q = cloud.scatter();
        worst_residual = worst_residual.max((v.transpose() * q * v)[(0, 0)] / q.trace());

        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = weights.iter().map(|x| x * c).collect();
        let p2 = svd_plane_fit(&WeightedCloud::new(points.clone(), scaled, prov).unwrap()).unwrap();
        worst_rescale = worst_rescale
            .max((p2.normal - plane.normal).amax())
            .max((p2.offset - plane.offset).abs());

        let three = &points[..3];
        if let Ok(mut tn) = triangle_normal(&three[0], &three[1], &three[2]) {
            let mut th = plane_offset(&tn, &three[0]);
            if th < 0.0 {
                tn = -tn;
                th = -th;
            }
            let p3 = svd_plane_fit(&WeightedCloud::uniform(three.to_vec())).unwrap();
            worst_three = worst_three
                .max((p3.normal - tn).amax())
                .max((p3.offset - th).abs());
        }
    }
    outcome(
        worst_residual < 1e-15 && worst_three < 1e-9 && worst_rescale < 1e-12,
        format!(
            "max residual/trace {worst_residual:.2e} (< 1e-15), 3-point gap {worst_three:.2e} (< 1e-9), \
             rescale drift {worst_rescale:.2e} (< 1e-12)"
        ),
    )
}

fn metric_reproduction() -> Outcome {
    let a = rle(3645.213, 3724.419).unwrap();
    let b = rle(391.861, 393.645).unwrap();
    outcome(
        (a - 2.173).abs() <= 1e-3 && (b - 0.455).abs() <= 1e-3,
        format!("rle = {a:.4}% (2.173), {b:.4}% (0.455)"),
    )
}

fn throughput() -> Outcome {
    let mut scene = SyntheticScene::from_preset(Preset::Curves, 60, 2.0, 3);
    scene.features_per_frame = 2000;
    scene.pixel_noise = 0.5;
    scene.clutter_fraction = 0.2;
    scene.moving_fraction = 0.1;
    let seq = generate_scene(&scene).unwrap();
    let out = match run_pipeline(&seq.frames, &PipelineConfig::new(HEIGHT)) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let mut per_frame: Vec<f64> = out
        .diagnostics
        .iter()
        .map(|d| (d.gpe_time + d.gpa_time).as_secs_f64() * 1e3)
        .collect();
    per_frame.sort_by(f64::total_cmp);
    let median = per_frame[per_frame.len() / 2];
    let fps = out.timings.frames_per_second;
    outcome(
        median <= 10.0 && fps >= 20.0,
        format!(
            "median GPE+GPA {median:.2} ms (<= 10 ms) at 2000 features, {fps:.1} frames/s (>= 20)"
        ),
    )
}

fn cases(n: u32) -> Config {
    Config {
        failure_persistence: None,
        ..Config::with_cases(n)
    }
}

fn filter_properties() -> Outcome {
    let run = |name: &str, result: Result<(), String>| match result {
        Ok(()) => format!("{name} ok"),
        Err(e) => format!("{name} FAILED: {e}"),
    };
    let mut runner = TestRunner::new(cases(1000));
    let robustness = runner
        .run(
            &(
                prop::collection::vec(0.05f64..5.0, 3..80),
                2.0f64..1e6,
                any::<bool>(),
            ),
            |(mut h, factor, inflate)| {
                let before = frame_scale(&h, HEIGHT).unwrap();
                let mut sorted = h.clone();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                prop_assume!(sorted[n - 1] > sorted[n / 2] && sorted[0] < sorted[(n - 1) / 2]);
                let pick = if inflate {
                    (0..n).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap()
                } else {
                    (0..n).min_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap()
                };
                h[pick] = if inflate {
                    h[pick] * factor
                } else {
                    h[pick] / factor
                };
                prop_assert_eq!(frame_scale(&h, HEIGHT).unwrap(), before);
                Ok(())
            },
        )
        .map_err(|e| e.to_string());

    let mut runner = TestRunner::new(cases(1000));
    let convexity = runner
        .run(
            &(prop::collection::vec(0.01f64..100.0, 1..100), 0usize..6),
            |(x, half)| {
                let w = 2 * half + 1;
                let out = smooth(&x, w);
                for t in 0..x.len() {
                    let tail = &x[(t + 1).saturating_sub(w)..=t];
                    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(out[t] >= lo * (1.0 - 1e-12) && out[t] <= hi * (1.0 + 1e-12));
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string());

    let mut runner = TestRunner::new(cases(1000));
    let continuity = runner
        .run(
            &prop::collection::vec(prop::option::weighted(0.6, 0.2f64..3.0), 2..100),
            |pattern| {
                let mut f = ScaleFilter::new(FilterConfig::new(HEIGHT, 5).unwrap()).unwrap();
                let mut prev: Option<f64> = None;
                for (id, p) in pattern.iter().enumerate() {
                    match (p, prev) {
                        (Some(h), _) => {
                            prev = Some(f.push_heights(id as u64, vec![*h]).unwrap().smoothed_scale)
                        }
                        (None, Some(s)) => {
                            let e = f.push_missing(id as u64).unwrap();
                            prop_assert_eq!(e.status, ScaleStatus::CarriedOver);
                            prop_assert_eq!(e.smoothed_scale, s);
                        }
                        (None, None) => prop_assert!(f.push_missing(id as u64).is_err()),
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string());

    let pass = robustness.is_ok() && convexity.is_ok() && continuity.is_ok();
    outcome(
        pass,
        format!(
            "1000 cases each: {}, {}, {}",
            run("median robustness", robustness),
            run("smoothing convexity", convexity),
            run("carry-over continuity", continuity)
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("clean scale recovery", clean_scale_recovery),
        ("noisy scale recovery", noisy_scale_recovery),
        ("ground extraction selectivity", gpe_selectivity),
        ("RANSAC plane robustness", ransac_robustness),
        ("Delaunay correctness", delaunay_correctness),
        ("weighted plane fit", weighted_fit),
        ("RLE metric reproduction", metric_reproduction),
        ("throughput", throughput),
        ("scale filter properties", filter_properties),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
