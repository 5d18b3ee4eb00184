//! Shared fixtures for the benchmarks.

use groundscale::gpa::WindowBuffer;
use groundscale::gpe::{extract_ground, GpeConfig};
use groundscale::metrics::Trajectory;
use groundscale::synth::{generate_scene, Preset, SyntheticScene, SyntheticSequence};

/// Noisy, cluttered curves sequence with `features` features per frame.
pub fn scene(frames: usize, features: usize) -> SyntheticSequence {
    let mut s = SyntheticScene::from_preset(Preset::Curves, frames, 2.0, 17);
    s.features_per_frame = features;
    s.pixel_noise = 0.5;
    s.clutter_fraction = 0.2;
    s.moving_fraction = 0.1;
    generate_scene(&s).expect("valid scene")
}

/// Window filled with the ground of frames `1..=capacity`, plus the
/// unscaled pose of the last one.
pub fn full_window(seq: &SyntheticSequence, capacity: usize) -> WindowBuffer {
    let cfg = GpeConfig::default();
    let poses = Trajectory::from_relative(seq.frames.iter().map(|f| &f.relative_pose)).poses;
    let mut w = WindowBuffer::new(capacity).expect("positive capacity");
    for f in &seq.frames[1..=capacity] {
        let g = extract_ground(f, &cfg, f.id).expect("synthetic frames have ground");
        w.push_frame(f.id, poses[f.id as usize], g)
            .expect("ordered ids");
    }
    w
}
