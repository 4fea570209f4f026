//! Parametric motion corpus for the twelve activity classes.
//!
//! Each class is a caricature built from a standing rest pose: arm reaches,
//! trunk bends and rolls, and whole-body translations, all defined in absolute
//! time so any window of a longer sequence resembles a shorter one. Subjects
//! differ in body scale, cameras in yaw, samples in amplitude, phase, onset
//! and sensor noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::joint::*;
use super::{ActivityClass, SkeletonFrame, SkeletonSequence, JOINT_COUNT};

type Pose = [[f64; 3]; JOINT_COUNT];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub samples_per_class: usize,
    pub seed: u64,
    pub classes: Vec<ActivityClass>,
    pub duration: f64,
    pub fps: f64,
    pub subjects: u32,
    pub cameras: u32,
    /// Half-width of uniform per-joint, per-frame noise in meters.
    pub noise: f64,
}

impl SynthOptions {
    pub fn new(samples_per_class: usize, seed: u64) -> Self {
        Self {
            samples_per_class,
            seed,
            classes: ActivityClass::ALL.to_vec(),
            duration: 2.0,
            fps: 24.0,
            subjects: 10,
            cameras: 3,
            noise: 0.003,
        }
    }

    /// Sequences ordered by class, then sample index.
    pub fn generate(&self) -> Vec<SkeletonSequence> {
        self.classes
            .iter()
            .flat_map(|&c| (0..self.samples_per_class).map(move |j| generate_sequence(c, j, self)))
            .collect()
    }
}

/// Twelve classes, 2 s at 24 fps, ten subjects and three cameras assigned
/// round-robin within each class.
pub fn generate_synthetic_corpus(samples_per_class: usize, seed: u64) -> Vec<SkeletonSequence> {
    SynthOptions::new(samples_per_class.max(1), seed).generate()
}

/// Per-sample variation drawn once per sequence.
#[derive(Debug, Clone, Copy)]
struct Style {
    amp: f64,
    phase: f64,
    onset: f64,
    tempo: f64,
    offset_x: f64,
    depth: f64,
}

/// The `index`-th sample of `class`. Subject `index % subjects + 1`, camera
/// `index % cameras + 1`; camera 1 faces the subject, cameras 2 and 3 sit at
/// +30 and -30 degrees of yaw.
pub fn generate_sequence(class: ActivityClass, index: usize, opts: &SynthOptions) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(((class.index() as u64) << 32) | index as u64);
    let subject = (index as u32) % opts.subjects.max(1) + 1;
    let camera = (index as u32) % opts.cameras.max(1) + 1;
    let style = Style {
        amp: rng.random_range(0.85..1.15),
        phase: rng.random_range(0.0..2.0 * PI),
        onset: rng.random_range(0.05..0.3),
        tempo: rng.random_range(0.9..1.1),
        offset_x: rng.random_range(-0.2..0.2),
        depth: rng.random_range(2.6..3.4),
    };
    // body size is a property of the subject, not the sample
    let scale = 0.88 + 0.24 * (((subject * 7) % 10) as f64 / 9.0);
    let yaw = match camera % 3 {
        1 => 0.0,
        2 => PI / 6.0,
        _ => -PI / 6.0,
    };
    let n = (opts.duration * opts.fps).round().max(1.0) as usize;
    let frames = (0..n)
        .map(|k| {
            let t = k as f64 / opts.fps;
            let mut pose = class_pose(class, t, &style);
            for p in pose.iter_mut() {
                for v in p.iter_mut() {
                    *v *= scale;
                }
                p[0] += style.offset_x;
                let (x, z) = (p[0], p[2]);
                p[0] = x * yaw.cos() + z * yaw.sin();
                p[2] = -x * yaw.sin() + z * yaw.cos() + style.depth;
                if opts.noise > 0.0 {
                    for v in p.iter_mut() {
                        *v += rng.random_range(-opts.noise..opts.noise);
                    }
                }
            }
            SkeletonFrame::new(t, pose)
        })
        .collect();
    SkeletonSequence {
        frames,
        source_fps: opts.fps,
        subject_id: subject,
        camera_id: camera,
        label: Some(class),
    }
}

const LEFT: [usize; 6] = [SHOULDER_LEFT, ELBOW_LEFT, WRIST_LEFT, HAND_LEFT, HAND_TIP_LEFT, THUMB_LEFT];
const RIGHT: [usize; 6] = [SHOULDER_RIGHT, ELBOW_RIGHT, WRIST_RIGHT, HAND_RIGHT, HAND_TIP_RIGHT, THUMB_RIGHT];
const LOWER_BODY: [usize; 9] = [
    SPINE_BASE, HIP_LEFT, KNEE_LEFT, ANKLE_LEFT, FOOT_LEFT, HIP_RIGHT, KNEE_RIGHT, ANKLE_RIGHT, FOOT_RIGHT,
];

fn rest_pose() -> Pose {
    let mut p = [[0.0; 3]; JOINT_COUNT];
    p[SPINE_BASE] = [0.0, 0.95, 0.0];
    p[SPINE_MID] = [0.0, 1.2, 0.0];
    p[SPINE_SHOULDER] = [0.0, 1.42, 0.0];
    p[NECK] = [0.0, 1.5, 0.0];
    p[HEAD] = [0.0, 1.65, 0.0];
    for (side, arm, hip, leg) in [
        (-1.0, LEFT, HIP_LEFT, [KNEE_LEFT, ANKLE_LEFT, FOOT_LEFT]),
        (1.0, RIGHT, HIP_RIGHT, [KNEE_RIGHT, ANKLE_RIGHT, FOOT_RIGHT]),
    ] {
        p[arm[0]] = [0.18 * side, 1.42, 0.0];
        p[hip] = [0.1 * side, 0.92, 0.0];
        p[leg[0]] = [0.11 * side, 0.5, 0.0];
        p[leg[1]] = [0.12 * side, 0.08, 0.0];
        p[leg[2]] = [0.12 * side, 0.02, -0.1];
        let hand = [0.25 * side, 0.85, 0.0];
        place_arm(&mut p, arm, side, hand, 0.0);
    }
    p
}

fn lerp3(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Positions elbow, wrist, hand and fingers for a hand location. `bulge`
/// pushes the elbow outward, as when the hand is lifted toward the face.
fn place_arm(p: &mut Pose, arm: [usize; 6], side: f64, hand: [f64; 3], bulge: f64) {
    let shoulder = p[arm[0]];
    let mid = lerp3(shoulder, hand, 0.5);
    let elbow = [mid[0] + side * (0.03 + 0.15 * bulge), mid[1] - 0.1 * bulge, mid[2] + 0.05 * bulge];
    let wrist = lerp3(elbow, hand, 0.85);
    let dir = [hand[0] - wrist[0], hand[1] - wrist[1], hand[2] - wrist[2]];
    p[arm[1]] = elbow;
    p[arm[2]] = wrist;
    p[arm[3]] = hand;
    p[arm[4]] = [hand[0] + dir[0], hand[1] + dir[1], hand[2] + dir[2]];
    p[arm[5]] = [hand[0] - side * 0.03, hand[1] + dir[1] * 0.5, hand[2] - 0.02];
}

/// Moves a hand from rest toward `target` by fraction `s`.
fn reach(p: &mut Pose, right: bool, target: [f64; 3], s: f64) {
    let (arm, side) = if right { (RIGHT, 1.0) } else { (LEFT, -1.0) };
    let hand = lerp3(p[arm[3]], target, s);
    place_arm(p, arm, side, hand, s);
}

/// Rotates every joint except `fixed` about `pivot` in the plane of axes `a`, `b`.
fn rotate(p: &mut Pose, pivot: [f64; 3], axes: (usize, usize), angle: f64, fixed: &[usize]) {
    let (c, s) = (angle.cos(), angle.sin());
    for (j, q) in p.iter_mut().enumerate() {
        if fixed.contains(&j) {
            continue;
        }
        let (ra, rb) = (q[axes.0] - pivot[axes.0], q[axes.1] - pivot[axes.1]);
        q[axes.0] = pivot[axes.0] + ra * c - rb * s;
        q[axes.1] = pivot[axes.1] + ra * s + rb * c;
    }
}

/// Trunk flexion toward the camera (negative z) about the spine base.
fn bend_forward(p: &mut Pose, angle: f64) {
    let pivot = p[SPINE_BASE];
    rotate(p, pivot, (2, 1), angle, &LOWER_BODY);
}

/// Whole-body lean in the image plane about the spine base.
fn roll(p: &mut Pose, angle: f64) {
    let pivot = p[SPINE_BASE];
    rotate(p, pivot, (0, 1), angle, &[]);
}

fn tilt_head(p: &mut Pose, angle: f64) {
    let pivot = p[NECK];
    let others: Vec<usize> = (0..JOINT_COUNT).filter(|&j| j != HEAD).collect();
    rotate(p, pivot, (0, 1), angle, &others);
}

fn translate(p: &mut Pose, d: [f64; 3]) {
    for q in p.iter_mut() {
        for a in 0..3 {
            q[a] += d[a];
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Gaussian bump centered at `c` with width `w`.
fn pulse(t: f64, c: f64, w: f64) -> f64 {
    (-((t - c) / w).powi(2)).exp()
}

fn class_pose(class: ActivityClass, t: f64, st: &Style) -> Pose {
    let mut p = rest_pose();
    let a = st.amp;
    let ramp = smoothstep((t - st.onset) / 0.5);
    let wave = |hz: f64| (2.0 * PI * hz * st.tempo * t + st.phase).sin();
    match class {
        ActivityClass::A41 => {
            // hand to mouth, then sharp forward jerks of the trunk
            reach(&mut p, true, [0.06, 1.57, -0.12], ramp);
            let period = 0.8 / st.tempo;
            let local = (t - st.onset).rem_euclid(period);
            bend_forward(&mut p, a * 0.45 * pulse(local, 0.5 * period, 0.08));
        }
        ActivityClass::A42 => {
            // lateral stagger with a compensating lean
            let x = a * 0.28 * wave(0.7);
            translate(&mut p, [x, 0.0, 0.0]);
            roll(&mut p, -a * 0.18 * wave(0.7));
            reach(&mut p, true, [0.45, 1.15, 0.0], 0.6);
            reach(&mut p, false, [-0.45, 1.15, 0.0], 0.6);
        }
        ActivityClass::A43 => {
            // steady collapse toward the floor
            translate(&mut p, [0.0, -a * 0.4 * t, 0.0]);
        }
        ActivityClass::A44 => {
            reach(&mut p, true, [0.1, 1.68, -0.04], ramp);
            reach(&mut p, false, [-0.1, 1.68, -0.04], ramp);
            tilt_head(&mut p, a * 0.12 * wave(0.5));
        }
        ActivityClass::A45 => {
            reach(&mut p, true, [0.04, 1.3, -0.12], ramp);
            reach(&mut p, false, [-0.06, 1.26, -0.12], ramp);
            bend_forward(&mut p, a * 0.3 * ramp);
        }
        ActivityClass::A46 => {
            reach(&mut p, true, [0.14, 1.0, 0.14], ramp);
            reach(&mut p, false, [-0.14, 1.0, 0.14], ramp);
            roll(&mut p, a * 0.12 * ramp * (1.0 + 0.3 * wave(0.5)));
        }
        ActivityClass::A47 => {
            reach(&mut p, true, [0.05, 1.53, 0.08], ramp);
            tilt_head(&mut p, -a * 0.35 * ramp);
        }
        ActivityClass::A48 => {
            // deep bend with heaving
            reach(&mut p, true, [0.05, 1.55, -0.12], ramp);
            bend_forward(&mut p, ramp * a * (0.95 + 0.15 * wave(1.0)));
        }
        ActivityClass::A49 => {
            let x = 0.2 + a * 0.12 * wave(1.5);
            reach(&mut p, true, [x, 1.6, -0.15], ramp);
        }
        ActivityClass::A103 => {
            reach(&mut p, true, [0.05, 1.58, -0.12], ramp);
            reach(&mut p, false, [-0.6, 1.45, 0.0], ramp * a);
            tilt_head(&mut p, 0.1 * ramp * wave(0.4));
        }
        ActivityClass::A104 => {
            let up = smoothstep((t - st.onset) / 0.8);
            reach(&mut p, true, [0.12, 2.0 + 0.08 * a, 0.0], up);
            reach(&mut p, false, [-0.12, 2.0 + 0.08 * a, 0.0], up);
            translate(&mut p, [0.0, 0.04 * up, 0.0]);
        }
        ActivityClass::A105 => {
            let y = 1.6 + a * 0.025 * wave(2.0);
            reach(&mut p, true, [0.03, y, -0.14], ramp);
            reach(&mut p, false, [-0.03, y, -0.14], ramp);
        }
    }
    p
}
