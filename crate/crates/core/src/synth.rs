//! Procedural side-view walkers with paired skeletons and silhouettes.
//!
//! A figure is a stick model with sinusoidal hip, knee, shoulder and elbow
//! angles. Joints come from forward kinematics; the silhouette is the union
//! of capsules along the limbs plus a head disc, drawn on the same canvas the
//! heat-skeleton uses so both modalities are pixel-aligned.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::heat::{joint, normalize_frame, point_segment_distance, Canvas, Keypoint, Normalization, SkeletonFrame, SkeletonSequence, NUM_JOINTS};
use crate::tensor::{Shape, Tensor};

/// Body proportions in world units (roughly pixels of a 200 px tall figure).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbLengths {
    pub torso: f64,
    pub neck: f64,
    pub head_radius: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub hip_width: f64,
    pub shoulder_width: f64,
}

impl LimbLengths {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.torso,
            self.neck,
            self.head_radius,
            self.upper_arm,
            self.forearm,
            self.thigh,
            self.shin,
            self.hip_width,
            self.shoulder_width,
        ]
    }
}

/// Identity-level appearance and motion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureSpec {
    pub limb_lengths: LimbLengths,
    /// Cycles per frame; always the reciprocal of an integer period.
    pub gait_frequency: f64,
    /// Peak hip swing in radians.
    pub stride_amplitude: f64,
    pub knee_amplitude: f64,
    pub arm_amplitude: f64,
    pub torso_lean: f64,
    /// Limb capsule diameter in world units.
    pub limb_thickness: f64,
    pub torso_thickness: f64,
    pub seed: u64,
}

pub const MIN_PERIOD: u32 = 16;
pub const MAX_PERIOD: u32 = 30;

impl FigureSpec {
    pub fn period(&self) -> usize {
        (1.0 / self.gait_frequency).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.limb_lengths.to_array().iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid!("limb lengths must be positive"));
        }
        if !(self.gait_frequency > 0.0 && self.gait_frequency < 0.5) {
            return Err(invalid!("gait frequency {} outside (0, 0.5)", self.gait_frequency));
        }
        if !(self.limb_thickness > 0.0 && self.torso_thickness > 0.0) {
            return Err(invalid!("thickness must be positive"));
        }
        Ok(())
    }
}

/// Deterministic figure drawn from `seed`.
pub fn generate_identity(seed: u64) -> FigureSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d_0000_0000);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let limb_lengths = LimbLengths {
        torso: u(52.0, 68.0),
        neck: u(6.0, 12.0),
        head_radius: u(10.0, 14.0),
        upper_arm: u(30.0, 40.0),
        forearm: u(26.0, 36.0),
        thigh: u(42.0, 54.0),
        shin: u(40.0, 52.0),
        hip_width: u(4.0, 12.0),
        shoulder_width: u(4.0, 14.0),
    };
    let period = rng.gen_range(MIN_PERIOD..=MAX_PERIOD);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    FigureSpec {
        limb_lengths,
        gait_frequency: 1.0 / period as f64,
        stride_amplitude: u(0.25, 0.5),
        knee_amplitude: u(0.4, 0.9),
        arm_amplitude: u(0.2, 0.6),
        torso_lean: u(-0.05, 0.2),
        limb_thickness: u(10.0, 16.0),
        torso_thickness: u(22.0, 34.0),
        seed,
    }
}

/// Per-sequence variation of one identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceStyle {
    /// Starting gait phase in radians.
    pub phase: f64,
    /// Multiplier on every swing amplitude.
    pub amplitude_scale: f64,
    /// Confidences are drawn from `[1 - noise, 1]`; zero keeps them at 1.
    pub confidence_noise: f64,
    pub seed: u64,
}

impl Default for SequenceStyle {
    fn default() -> Self {
        Self { phase: 0.0, amplitude_scale: 1.0, confidence_noise: 0.0, seed: 0 }
    }
}

/// Deterministic style for sequence `index` of `spec`.
pub fn sequence_style(spec: &FigureSpec, index: u64) -> SequenceStyle {
    let seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_add(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SequenceStyle { phase: rng.gen_range(0.0..2.0 * PI), amplitude_scale: rng.gen_range(0.92..1.08), confidence_noise: 0.0, seed }
}

/// Raw joint positions (y down, figure facing +x) at gait phase `phi`.
fn pose(spec: &FigureSpec, style: &SequenceStyle, phi: f64) -> [(f64, f64); NUM_JOINTS] {
    let l = &spec.limb_lengths;
    let k = style.amplitude_scale;
    let dir = |a: f64| (a.sin(), a.cos());
    let mut j = [(0.0, 0.0); NUM_JOINTS];

    let lean = spec.torso_lean;
    let hip = (0.0, 0.0);
    let neck_base = (hip.0 + l.torso * lean.sin(), hip.1 - l.torso * lean.cos());
    for (side, hip_idx, knee_idx, ankle_idx, offset) in [
        (0.0, joint::LEFT_HIP, joint::LEFT_KNEE, joint::LEFT_ANKLE, -0.5),
        (PI, joint::RIGHT_HIP, joint::RIGHT_KNEE, joint::RIGHT_ANKLE, 0.5),
    ] {
        let p = phi + side;
        let thigh_angle = k * spec.stride_amplitude * p.sin();
        let knee_flex = k * spec.knee_amplitude * 0.5 * (1.0 - (p + 0.6).cos());
        let h = (hip.0 + offset * l.hip_width, hip.1);
        let (sx, sy) = dir(thigh_angle);
        let knee = (h.0 + l.thigh * sx, h.1 + l.thigh * sy);
        let (ax, ay) = dir(thigh_angle - knee_flex);
        j[hip_idx] = h;
        j[knee_idx] = knee;
        j[ankle_idx] = (knee.0 + l.shin * ax, knee.1 + l.shin * ay);
    }
    for (side, sh_idx, el_idx, wr_idx, offset) in [
        (PI, joint::LEFT_SHOULDER, joint::LEFT_ELBOW, joint::LEFT_WRIST, -0.5),
        (0.0, joint::RIGHT_SHOULDER, joint::RIGHT_ELBOW, joint::RIGHT_WRIST, 0.5),
    ] {
        let p = phi + side;
        let arm_angle = k * spec.arm_amplitude * p.sin();
        let elbow_flex = 0.2 + k * spec.arm_amplitude * 0.5 * (1.0 + p.sin());
        let s = (neck_base.0 + offset * l.shoulder_width, neck_base.1);
        let (ux, uy) = dir(arm_angle);
        let elbow = (s.0 + l.upper_arm * ux, s.1 + l.upper_arm * uy);
        let (fx, fy) = dir(arm_angle + elbow_flex);
        j[sh_idx] = s;
        j[el_idx] = elbow;
        j[wr_idx] = (elbow.0 + l.forearm * fx, elbow.1 + l.forearm * fy);
    }
    let r = l.head_radius;
    let head = head_center(spec, neck_base);
    j[joint::NOSE] = (head.0 + 0.6 * r, head.1 + 0.1 * r);
    j[joint::LEFT_EYE] = (head.0 + 0.4 * r - 0.1 * r, head.1 - 0.3 * r);
    j[joint::RIGHT_EYE] = (head.0 + 0.4 * r + 0.1 * r, head.1 - 0.3 * r);
    j[joint::LEFT_EAR] = (head.0 - 0.15 * r, head.1 - 0.1 * r);
    j[joint::RIGHT_EAR] = (head.0 + 0.05 * r, head.1 - 0.1 * r);
    j
}

fn head_center(spec: &FigureSpec, neck_base: (f64, f64)) -> (f64, f64) {
    let l = &spec.limb_lengths;
    let lean = spec.torso_lean;
    let reach = l.neck + l.head_radius;
    (neck_base.0 + reach * lean.sin(), neck_base.1 - reach * lean.cos())
}

fn midpoint(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0)
}

/// Segment endpoints and radius, in canvas pixels.
pub type Capsule = ((f64, f64), (f64, f64), f64);

/// Binary union of capsules `(a, b, radius)` on the canvas.
pub fn rasterize_capsules(capsules: &[Capsule], canvas: Canvas) -> Tensor<f32> {
    let mut sil = Tensor::zeros(Shape::new(1, canvas.h, canvas.w));
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let p = (x as f64, y as f64);
            if capsules.iter().any(|&(a, b, r)| point_segment_distance(p, a, b) <= r) {
                *sil.at_mut(0, y, x) = 1.0;
            }
        }
    }
    sil
}

/// One rendered sequence: raw skeletons and canvas-aligned silhouettes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSequence {
    pub skeletons: SkeletonSequence,
    /// `[1, h, w]` binary masks.
    pub silhouettes: Vec<Tensor<f32>>,
}

pub fn render_sequence(spec: &FigureSpec, n_frames: usize) -> Result<RenderedSequence> {
    render_sequence_with(spec, &SequenceStyle::default(), n_frames, Canvas::DEFAULT)
}

pub fn render_sequence_with(spec: &FigureSpec, style: &SequenceStyle, n_frames: usize, canvas: Canvas) -> Result<RenderedSequence> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(invalid!("n_frames must be at least 1"));
    }
    if !(0.0..1.0).contains(&style.confidence_noise) {
        return Err(invalid!("confidence noise {} outside [0, 1)", style.confidence_noise));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(style.seed);
    let period = spec.period();
    let mut skeletons = Vec::with_capacity(n_frames);
    let mut silhouettes = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let phi = style.phase + 2.0 * PI * (i % period) as f64 / period as f64;
        let raw = pose(spec, style, phi);
        let mut kps = [Keypoint::default(); NUM_JOINTS];
        for (k, &(x, y)) in kps.iter_mut().zip(&raw) {
            let c = if style.confidence_noise > 0.0 { 1.0 - rng.gen_range(0.0..style.confidence_noise) } else { 1.0 };
            *k = Keypoint::new(x, y, c);
        }
        let frame = SkeletonFrame::new(kps)?;
        let norm = Normalization::fit(&frame, canvas)?;
        let placed = normalize_frame(&frame, canvas)?;
        let at = |idx: usize| (placed.joints()[idx].x, placed.joints()[idx].y);
        let l = &spec.limb_lengths;
        let limb_r = 0.5 * spec.limb_thickness * norm.scale;
        let torso_r = 0.5 * spec.torso_thickness * norm.scale;
        let head_r = l.head_radius * norm.scale;
        let hips = midpoint(at(joint::LEFT_HIP), at(joint::RIGHT_HIP));
        let shoulders = midpoint(at(joint::LEFT_SHOULDER), at(joint::RIGHT_SHOULDER));
        let neck_base_raw = midpoint(raw[joint::LEFT_SHOULDER], raw[joint::RIGHT_SHOULDER]);
        let head_raw = head_center(spec, neck_base_raw);
        let head = norm.apply(head_raw.0, head_raw.1);
        let mut capsules = Vec::with_capacity(16);
        for (a, b) in [
            (joint::LEFT_HIP, joint::LEFT_KNEE),
            (joint::LEFT_KNEE, joint::LEFT_ANKLE),
            (joint::RIGHT_HIP, joint::RIGHT_KNEE),
            (joint::RIGHT_KNEE, joint::RIGHT_ANKLE),
            (joint::LEFT_SHOULDER, joint::LEFT_ELBOW),
            (joint::LEFT_ELBOW, joint::LEFT_WRIST),
            (joint::RIGHT_SHOULDER, joint::RIGHT_ELBOW),
            (joint::RIGHT_ELBOW, joint::RIGHT_WRIST),
            (joint::LEFT_HIP, joint::RIGHT_HIP),
            (joint::LEFT_SHOULDER, joint::RIGHT_SHOULDER),
        ] {
            capsules.push((at(a), at(b), limb_r));
        }
        capsules.push((hips, shoulders, torso_r));
        capsules.push((shoulders, head, limb_r));
        capsules.push((head, head, head_r));
        silhouettes.push(rasterize_capsules(&capsules, canvas));
        skeletons.push(frame);
    }
    Ok(RenderedSequence { skeletons, silhouettes })
}
