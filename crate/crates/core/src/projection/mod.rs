//! Multi-view orthographic depth rendering, background detection and
//! background color compositing.
//!
//! World space is z-up. A view at azimuth `a` and elevation `e` looks at the
//! origin from direction `(cos e cos a, cos e sin a, sin e)`. Image rows run
//! top to bottom along the camera's up vector, columns left to right along
//! its right vector.

mod netpbm;

pub use netpbm::{export_depth, export_enhanced, read_pgm, read_ppm, to_byte};

use std::f64::consts::PI;
use std::rc::Rc;

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::pointset::PointCloud;

/// Fixed camera elevation, radians (20°).
pub const DEFAULT_ELEVATION: f64 = 20.0 * PI / 180.0;
pub const DEFAULT_DISTANCE: f64 = 2.0;
/// Side of the 9×9 background window is `2 * BACKGROUND_RADIUS + 1`.
pub const BACKGROUND_RADIUS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewTransform {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl ViewTransform {
    /// Unit vector from the origin toward the camera.
    pub fn toward_camera(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }

    pub fn right(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        [-sa, ca, 0.0]
    }

    pub fn up(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [-se * ca, -se * sa, ce]
    }
}

/// `V` views uniformly spaced in azimuth at the fixed elevation.
pub fn camera_views(v: usize) -> Result<Vec<ViewTransform>> {
    if v == 0 {
        return Err(Error::invalid("view count must be at least 1"));
    }
    Ok((0..v)
        .map(|k| ViewTransform {
            azimuth: 2.0 * PI * k as f64 / v as f64,
            elevation: DEFAULT_ELEVATION,
            distance: DEFAULT_DISTANCE,
        })
        .collect())
}

/// Single-channel depth image; `1.0` is empty background.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub pixels: Vec<f64>,
    pub view: ViewTransform,
}

impl DepthMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn white(height: usize, width: usize, view: ViewTransform) -> Self {
        Self { height, width, pixels: vec![1.0; height * width], view }
    }
}

/// Largest value an occupied pixel may take; keeps `1.0` reserved for background.
const MAX_OCCUPIED: f64 = 1.0 - f64::EPSILON;

pub(crate) struct Projected {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Pixel center and normalized depth of one point.
pub(crate) fn project_point(p: &[f64; 3], view: &ViewTransform, h: usize, w: usize) -> Projected {
    let dot = |a: [f64; 3]| a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
    let u = dot(view.right());
    let v = dot(view.up());
    let depth = view.distance - dot(view.toward_camera());
    let value = ((depth - (view.distance - 1.0)) / 2.0).clamp(0.0, MAX_OCCUPIED);
    let col = (((u + 1.0) / 2.0 * w as f64).floor().max(0.0) as usize).min(w - 1);
    let row = (((1.0 - v) / 2.0 * h as f64).floor().max(0.0) as usize).min(h - 1);
    Projected { row, col, value }
}

/// Pixel offsets covered by a square splat of side `splat` around its center.
pub(crate) fn splat_range(center: usize, splat: usize, limit: usize) -> std::ops::Range<usize> {
    let lo = center.saturating_sub((splat - 1) / 2);
    let hi = (center + splat / 2 + 1).min(limit);
    lo..hi
}

/// Orthographic z-buffer render. Near points are dark; the buffer keeps the
/// smallest normalized depth per pixel.
pub fn render_depth(pc: &PointCloud, view: &ViewTransform, h: usize, w: usize, splat: usize) -> Result<DepthMap> {
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!("image must be at least 16x16, got {h}x{w}")));
    }
    if splat == 0 {
        return Err(Error::invalid("splat side must be at least 1"));
    }
    if !(view.distance > 1.0) {
        return Err(Error::invalid("camera distance must exceed 1"));
    }
    let max_norm = pc.max_norm();
    if !pc.is_finite() || max_norm > 1.01 {
        return Err(Error::invalid(format!(
            "cloud must be normalized to the unit sphere (max norm {max_norm})"
        )));
    }
    let mut map = DepthMap::white(h, w, *view);
    for p in &pc.points {
        let pr = project_point(p, view, h, w);
        for r in splat_range(pr.row, splat, h) {
            for c in splat_range(pr.col, splat, w) {
                let px = &mut map.pixels[r * w + c];
                if pr.value < *px {
                    *px = pr.value;
                }
            }
        }
    }
    Ok(map)
}

/// Renders one depth map per view, in view order.
pub fn render_views(pc: &PointCloud, views: &[ViewTransform], h: usize, w: usize, splat: usize) -> Result<Vec<DepthMap>> {
    views.iter().map(|v| render_depth(pc, v, h, w, splat)).collect()
}

/// White pixels and the kernel-certified background inside them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackgroundMasks {
    pub height: usize,
    pub width: usize,
    pub white: Vec<bool>,
    pub background: Vec<bool>,
}

/// Marks a pixel as background when every pixel of the 9×9 window around it
/// is white. Out-of-frame window cells count as white.
pub fn detect_background(depth: &DepthMap) -> BackgroundMasks {
    let (h, w) = (depth.height, depth.width);
    let white: Vec<bool> = depth.pixels.iter().map(|&v| v == 1.0).collect();
    // summed-area table of non-white pixels
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut run = 0u32;
        for c in 0..w {
            run += u32::from(!white[r * w + c]);
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + run;
        }
    }
    let k = BACKGROUND_RADIUS;
    let mut background = vec![false; h * w];
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(k), (r + k + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(k), (c + k + 1).min(w));
            let dark = sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0]
                - sat[r0 * (w + 1) + c1]
                - sat[r1 * (w + 1) + c0];
            background[r * w + c] = dark == 0;
        }
    }
    BackgroundMasks { height: h, width: w, white, background }
}

/// Three-channel image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl EnhancedImage {
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Grayscale replication of a depth map (no background fill).
    pub fn from_depth(depth: &DepthMap) -> Self {
        let pixels = depth.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Self { height: depth.height, width: depth.width, pixels }
    }

    /// The image as an `H × 3W` matrix, the layout used on the tape.
    pub fn to_mat(&self) -> Mat {
        Mat::from_shape_vec((self.height, self.width * 3), self.pixels.clone()).expect("pixel count matches")
    }

    pub fn from_mat(m: &Mat) -> Self {
        Self { height: m.nrows(), width: m.ncols() / 3, pixels: m.iter().copied().collect() }
    }
}

fn check_color(c: [f64; 3]) -> Result<()> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::invalid(format!("color {c:?} must lie in [0,1]^3")))
    }
}

fn check_masks(depth: &DepthMap, masks: &BackgroundMasks) -> Result<()> {
    if (masks.height, masks.width) != (depth.height, depth.width) {
        return Err(Error::invalid("mask and depth dimensions differ"));
    }
    Ok(())
}

/// Fills the certified background with `c`; everything else is the depth
/// value replicated over three channels.
pub fn compose_enhanced(depth: &DepthMap, masks: &BackgroundMasks, c: [f64; 3]) -> Result<EnhancedImage> {
    check_color(c)?;
    check_masks(depth, masks)?;
    let mut pixels = Vec::with_capacity(depth.pixels.len() * 3);
    for (i, &v) in depth.pixels.iter().enumerate() {
        if masks.background[i] {
            pixels.extend_from_slice(&c);
        } else {
            pixels.extend_from_slice(&[v, v, v]);
        }
    }
    Ok(EnhancedImage { height: depth.height, width: depth.width, pixels })
}

/// Linear decomposition `I^E(c) = base + Σ_k c_k · basis_k` of the compositing.
#[derive(Clone, Debug)]
pub struct EnhanceBasis {
    pub base: Rc<Mat>,
    pub basis: Rc<Vec<Mat>>,
}

impl EnhanceBasis {
    pub fn new(depth: &DepthMap, masks: &BackgroundMasks) -> Result<Self> {
        check_masks(depth, masks)?;
        let (h, w) = (depth.height, depth.width);
        let mut base = Mat::zeros((h, w * 3));
        let mut basis = vec![Mat::zeros((h, w * 3)); 3];
        for r in 0..h {
            for col in 0..w {
                let i = r * w + col;
                for ch in 0..3 {
                    if masks.background[i] {
                        basis[ch][[r, col * 3 + ch]] = 1.0;
                    } else {
                        base[[r, col * 3 + ch]] = depth.pixels[i];
                    }
                }
            }
        }
        Ok(Self { base: Rc::new(base), basis: Rc::new(basis) })
    }

    /// Records the compositing for a `1×3` color variable; returns the `H × 3W` image.
    pub fn compose(&self, tape: &mut Tape, color: Var) -> Var {
        let fill = tape.linear_combine(color, Rc::clone(&self.basis));
        let base = tape.leaf_rc(Rc::clone(&self.base), false);
        tape.add(base, fill)
    }
}
