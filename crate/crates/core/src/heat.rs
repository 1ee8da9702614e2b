//! Heat-skeleton rendering: COCO-17 keypoints to a two-channel
//! `[joint, limb]` Gaussian heatmap aligned with the silhouette canvas.

use alloc::format;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const NUM_JOINTS: usize = 17;

/// Default Gaussian width in canvas pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// COCO-17 joint order.
pub mod joint {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;

    /// Index of the mirror-image joint (left <-> right).
    pub const FLIP: [usize; super::NUM_JOINTS] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15];
}

/// The canonical 19-edge COCO skeleton.
pub const COCO_LIMBS: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub h: usize,
    pub w: usize,
}

impl Canvas {
    pub const DEFAULT: Canvas = Canvas { h: 64, w: 44 };
}

impl Default for Canvas {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, c: f64) -> Self {
        Self { x, y, c }
    }

    pub fn visible(&self) -> bool {
        self.c > 0.0
    }
}

/// One frame of 17 COCO keypoints in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonFrame {
    joints: [Keypoint; NUM_JOINTS],
}

impl SkeletonFrame {
    pub fn new(joints: [Keypoint; NUM_JOINTS]) -> Result<Self> {
        for (k, j) in joints.iter().enumerate() {
            if !(j.x.is_finite() && j.y.is_finite()) {
                return Err(invalid!("joint {k} has non-finite coordinates"));
            }
            if !(0.0..=1.0).contains(&j.c) {
                return Err(invalid!("joint {k} confidence {} outside [0, 1]", j.c));
            }
        }
        Ok(Self { joints })
    }

    pub fn from_slice(joints: &[Keypoint]) -> Result<Self> {
        let arr: [Keypoint; NUM_JOINTS] = joints
            .try_into()
            .map_err(|_| invalid!("expected {NUM_JOINTS} joints, got {}", joints.len()))?;
        Self::new(arr)
    }

    pub fn joints(&self) -> &[Keypoint; NUM_JOINTS] {
        &self.joints
    }

    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.visible()).count()
    }

    /// Reflect about the vertical line `x = axis` and swap left/right labels.
    pub fn mirrored(&self, axis: f64) -> Self {
        let mut joints = self.joints;
        for (k, j) in joints.iter_mut().enumerate() {
            let src = self.joints[joint::FLIP[k]];
            *j = Keypoint::new(2.0 * axis - src.x, src.y, src.c);
        }
        Self { joints }
    }
}

/// Frames of one walking sequence.
pub type SkeletonSequence = Vec<SkeletonFrame>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimbTable {
    edges: Vec<(usize, usize)>,
}

impl LimbTable {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        for (i, &(a, b)) in edges.iter().enumerate() {
            if a >= NUM_JOINTS || b >= NUM_JOINTS {
                return Err(invalid!("limb ({a}, {b}) references a joint outside [0, {NUM_JOINTS})"));
            }
            if a == b {
                return Err(invalid!("limb ({a}, {b}) is a self-loop"));
            }
            let dup = edges[..i].iter().any(|&(c, d)| (c, d) == (a, b) || (c, d) == (b, a));
            if dup {
                return Err(invalid!("duplicate limb ({a}, {b})"));
            }
        }
        Ok(Self { edges })
    }

    pub fn coco() -> Self {
        Self { edges: COCO_LIMBS.to_vec() }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

impl Default for LimbTable {
    fn default() -> Self {
        Self::coco()
    }
}

/// Two-channel `[joint, limb]` heatmap with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSkeleton {
    pub grid: Tensor<f64>,
}

impl HeatSkeleton {
    pub fn shape(&self) -> Shape {
        self.grid.shape
    }

    pub fn from_tensor(grid: Tensor<f64>) -> Result<Self> {
        if grid.shape.c != 2 {
            return Err(crate::error::shape_err!("heat skeleton needs 2 channels, got {}", grid.shape.c));
        }
        Ok(Self { grid })
    }

    pub fn as_tensor<T: Real>(&self) -> Tensor<T> {
        self.grid.cast()
    }
}

/// Affine map taking a raw frame onto the canvas, before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center_x: f64,
    pub ymin: f64,
    pub scale: f64,
    pub canvas: Canvas,
}

impl Normalization {
    /// Center the hip midpoint horizontally and scale the vertical extent of
    /// the visible joints to 90% of the canvas height.
    ///
    /// Pixel centers sit at integer coordinates, so the horizontal center is
    /// `(w - 1) / 2`; this makes the mapping commute with left-right mirroring.
    pub fn fit(frame: &SkeletonFrame, canvas: Canvas) -> Result<Self> {
        let visible: Vec<&Keypoint> = frame.joints.iter().filter(|j| j.visible()).collect();
        if visible.len() < 2 {
            return Err(Error::DegenerateSkeleton(format!("{} visible joints, need at least 2", visible.len())));
        }
        let (ymin, ymax) = visible
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| (lo.min(j.y), hi.max(j.y)));
        let extent = ymax - ymin;
        if extent <= 1e-9 {
            return Err(Error::DegenerateSkeleton("visible joints have no vertical extent".into()));
        }
        let scale = 0.9 * canvas.h as f64 / extent;
        let hips = [frame.joints[joint::LEFT_HIP], frame.joints[joint::RIGHT_HIP]];
        let visible_hips: Vec<&Keypoint> = hips.iter().filter(|j| j.visible()).collect();
        let center_x = if visible_hips.is_empty() {
            visible.iter().map(|j| j.x).sum::<f64>() / visible.len() as f64
        } else {
            visible_hips.iter().map(|j| j.x).sum::<f64>() / visible_hips.len() as f64
        };
        Ok(Self { center_x, ymin, scale, canvas })
    }

    /// Canvas position of a raw point, not clamped.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (h, w) = (self.canvas.h as f64, self.canvas.w as f64);
        let top = ((h - 1.0) - 0.9 * h) / 2.0;
        ((x - self.center_x) * self.scale + (w - 1.0) / 2.0, (y - self.ymin) * self.scale + top)
    }
}

/// Normalize a frame onto the canvas; see [`Normalization::fit`].
/// Coordinates are clamped into the canvas.
pub fn normalize_frame(frame: &SkeletonFrame, canvas: Canvas) -> Result<SkeletonFrame> {
    let n = Normalization::fit(frame, canvas)?;
    let (h, w) = (canvas.h as f64, canvas.w as f64);
    let mut joints = frame.joints;
    for j in &mut joints {
        let (x, y) = n.apply(j.x, j.y);
        j.x = x.clamp(0.0, w - 1.0);
        j.y = y.clamp(0.0, h - 1.0);
    }
    Ok(SkeletonFrame { joints })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid!("sigma must be positive and finite, got {sigma}"));
    }
    Ok(())
}

/// Per-pixel maximum over joints of `exp(-d^2 / 2 sigma^2) * c`.
///
/// The kernel is separable, so each joint contributes an outer product of a
/// row profile and a column profile.
pub fn render_joint_map(frame: &SkeletonFrame, sigma: f64, canvas: Canvas) -> Result<Tensor<f64>> {
    check_sigma(sigma)?;
    let Canvas { h, w } = canvas;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut map: Tensor<f64> = Tensor::zeros(Shape::new(1, h, w));
    let mut col = Vec::with_capacity(w);
    let mut row = Vec::with_capacity(h);
    for j in frame.joints.iter().filter(|j| j.visible()) {
        col.clear();
        col.extend((0..w).map(|x| {
            let d = x as f64 - j.x;
            (-d * d * inv).exp()
        }));
        row.clear();
        row.extend((0..h).map(|y| {
            let d = y as f64 - j.y;
            (-d * d * inv).exp() * j.c
        }));
        for (y, &ry) in row.iter().enumerate() {
            let out = &mut map.data[y * w..(y + 1) * w];
            for (o, &cx) in out.iter_mut().zip(&col) {
                *o = o.max(ry * cx);
            }
        }
    }
    Ok(map)
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 <= f64::EPSILON {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx) * (p.0 - cx) + (p.1 - cy) * (p.1 - cy)).sqrt()
}

/// Per-pixel maximum over limbs of `exp(-D^2 / 2 sigma^2) * min(c_a, c_b)`;
/// limbs with a missing endpoint are skipped.
pub fn render_limb_map(frame: &SkeletonFrame, limbs: &LimbTable, sigma: f64, canvas: Canvas) -> Result<Tensor<f64>> {
    check_sigma(sigma)?;
    let Canvas { h, w } = canvas;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut map: Tensor<f64> = Tensor::zeros(Shape::new(1, h, w));
    for &(a, b) in limbs.edges() {
        let (ja, jb) = (frame.joints[a], frame.joints[b]);
        if !(ja.visible() && jb.visible()) {
            continue;
        }
        let c = ja.c.min(jb.c);
        for y in 0..h {
            for x in 0..w {
                let d = point_segment_distance((x as f64, y as f64), (ja.x, ja.y), (jb.x, jb.y));
                let v = (-d * d * inv).exp() * c;
                let o = &mut map.data[y * w + x];
                *o = o.max(v);
            }
        }
    }
    Ok(map)
}

/// Normalize onto `canvas` and stack the joint and limb maps.
pub fn make_heat_skeleton_on(
    frame: &SkeletonFrame,
    limbs: &LimbTable,
    sigma: f64,
    canvas: Canvas,
) -> Result<HeatSkeleton> {
    let norm = normalize_frame(frame, canvas)?;
    let joints = render_joint_map(&norm, sigma, canvas)?;
    let limb_map = render_limb_map(&norm, limbs, sigma, canvas)?;
    let grid = Tensor::concat_channels(&joints, &limb_map);
    Ok(HeatSkeleton { grid })
}

/// [`make_heat_skeleton_on`] at the default 64x44 canvas.
pub fn make_heat_skeleton(frame: &SkeletonFrame, limbs: &LimbTable, sigma: f64) -> Result<HeatSkeleton> {
    make_heat_skeleton_on(frame, limbs, sigma, Canvas::DEFAULT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame_with(points: &[(usize, f64, f64, f64)]) -> SkeletonFrame {
        let mut joints = [Keypoint::default(); NUM_JOINTS];
        for &(k, x, y, c) in points {
            joints[k] = Keypoint::new(x, y, c);
        }
        SkeletonFrame::new(joints).unwrap()
    }

    fn standing() -> SkeletonFrame {
        frame_with(&[
            (joint::NOSE, 50.0, 0.0, 1.0),
            (joint::LEFT_SHOULDER, 40.0, 40.0, 0.9),
            (joint::RIGHT_SHOULDER, 60.0, 40.0, 0.9),
            (joint::LEFT_HIP, 44.0, 100.0, 1.0),
            (joint::RIGHT_HIP, 56.0, 100.0, 1.0),
            (joint::LEFT_ANKLE, 42.0, 200.0, 0.8),
            (joint::RIGHT_ANKLE, 58.0, 200.0, 0.7),
        ])
    }

    #[test]
    fn normalization_fills_ninety_percent_of_height() {
        let n = normalize_frame(&standing(), Canvas::DEFAULT).unwrap();
        let ys: Vec<f64> = n.joints().iter().filter(|j| j.visible()).map(|j| j.y).collect();
        let extent = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
        assert!((extent - 57.6).abs() < 1e-9);
        let hip_x = (n.joints()[joint::LEFT_HIP].x + n.joints()[joint::RIGHT_HIP].x) / 2.0;
        assert!((hip_x - 21.5).abs() < 1e-9);
        for (a, b) in standing().joints().iter().zip(n.joints()) {
            assert_eq!(a.c, b.c);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize_frame(&standing(), Canvas::DEFAULT).unwrap();
        let twice = normalize_frame(&once, Canvas::DEFAULT).unwrap();
        for (a, b) in once.joints().iter().zip(twice.joints()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_visible_joint_is_degenerate() {
        let f = frame_with(&[(0, 5.0, 5.0, 1.0)]);
        assert!(matches!(normalize_frame(&f, Canvas::DEFAULT), Err(Error::DegenerateSkeleton(_))));
        let empty = frame_with(&[]);
        assert!(matches!(
            make_heat_skeleton(&empty, &LimbTable::coco(), DEFAULT_SIGMA),
            Err(Error::DegenerateSkeleton(_))
        ));
    }

    #[test]
    fn joint_peak_is_confidence_and_half_max_radius() {
        let f = frame_with(&[(0, 10.0, 10.0, 1.0)]);
        let m = render_joint_map(&f, 2.0, Canvas::DEFAULT).unwrap();
        assert_eq!(m.at(0, 10, 10), 1.0);

        // Pixel (10, 14) sits at distance 4; choose sigma so that 4 is the
        // half-maximum radius sigma * sqrt(2 ln 2).
        let sigma = 4.0 / (2.0 * core::f64::consts::LN_2).sqrt();
        let f = frame_with(&[(0, 10.0, 10.0, 0.5)]);
        let m = render_joint_map(&f, sigma, Canvas::DEFAULT).unwrap();
        assert!((m.at(0, 14, 10) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_sigma_is_rejected() {
        let f = standing();
        assert!(matches!(render_joint_map(&f, 0.0, Canvas::DEFAULT), Err(Error::InvalidParameter(_))));
        assert!(matches!(
            render_limb_map(&f, &LimbTable::coco(), -1.0, Canvas::DEFAULT),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn limb_on_segment_takes_min_confidence() {
        let f = frame_with(&[(joint::LEFT_HIP, 10.0, 20.0, 0.8), (joint::LEFT_KNEE, 10.0, 30.0, 0.6)]);
        let m = render_limb_map(&f, &LimbTable::coco(), 2.0, Canvas::DEFAULT).unwrap();
        assert!((m.at(0, 25, 10) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn collapsed_limb_equals_joint_kernel() {
        let f = frame_with(&[(joint::LEFT_HIP, 12.3, 20.7, 1.0), (joint::LEFT_KNEE, 12.3, 20.7, 1.0)]);
        let limbs = LimbTable::new(vec![(joint::LEFT_HIP, joint::LEFT_KNEE)]).unwrap();
        let l = render_limb_map(&f, &limbs, 2.0, Canvas::DEFAULT).unwrap();
        let single = frame_with(&[(joint::LEFT_HIP, 12.3, 20.7, 1.0)]);
        let j = render_joint_map(&single, 2.0, Canvas::DEFAULT).unwrap();
        for (a, b) in l.data.iter().zip(&j.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn limb_table_validation() {
        assert!(LimbTable::new(vec![(0, 0)]).is_err());
        assert!(LimbTable::new(vec![(0, 17)]).is_err());
        assert!(LimbTable::new(vec![(0, 1), (1, 0)]).is_err());
        assert_eq!(LimbTable::coco().edges().len(), 19);
    }

    #[test]
    fn frame_validation() {
        let mut joints = [Keypoint::default(); NUM_JOINTS];
        joints[3].c = 1.5;
        assert!(SkeletonFrame::new(joints).is_err());
        joints[3] = Keypoint::new(f64::NAN, 0.0, 1.0);
        assert!(SkeletonFrame::new(joints).is_err());
        assert!(SkeletonFrame::from_slice(&joints[..16]).is_err());
    }

    #[test]
    fn heat_skeleton_shape_and_range() {
        let hs = make_heat_skeleton(&standing(), &LimbTable::coco(), DEFAULT_SIGMA).unwrap();
        assert_eq!(hs.shape(), Shape::new(2, 64, 44));
        assert!(hs.grid.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mirrored_frame_gives_flipped_heatmap() {
        let f = standing();
        let a = make_heat_skeleton(&f, &LimbTable::coco(), DEFAULT_SIGMA).unwrap();
        let b = make_heat_skeleton(&f.mirrored(50.0), &LimbTable::coco(), DEFAULT_SIGMA).unwrap();
        let flipped = a.grid.flip_horizontal();
        for (x, y) in flipped.data.iter().zip(&b.grid.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
