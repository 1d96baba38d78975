use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PointCloud, Point3, MIN_POINTS};
use crate::error::{Error, Result};

/// The ten parametric surface families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    Helix,
    Cross,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 10] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Pyramid,
        ShapeKind::Ellipsoid,
        ShapeKind::Helix,
        ShapeKind::Cross,
        ShapeKind::Ring,
    ];

    /// Kinds whose surface is symmetric under `p -> -p`. These are sampled
    /// in antipodal pairs so the sample centroid is exactly the origin.
    pub fn is_centrally_symmetric(self) -> bool {
        !matches!(self, ShapeKind::Cone | ShapeKind::Pyramid | ShapeKind::Helix)
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Helix => "helix",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape kind '{s}'")))
    }
}

// Surface dimensions. Every family fits inside the unit ball before jitter.
pub(crate) const CUBE_HALF: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)
pub(crate) const CYL_RADIUS: f64 = 0.45;
pub(crate) const CYL_HALF_HEIGHT: f64 = 0.85;
pub(crate) const CONE_RADIUS: f64 = 0.7;
pub(crate) const CONE_APEX_Z: f64 = 0.6;
pub(crate) const CONE_BASE_Z: f64 = -0.6;
const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.25;
const PYRAMID_HALF: f64 = 0.65;
const PYRAMID_BASE_Z: f64 = -0.3;
const PYRAMID_APEX_Z: f64 = 0.35;
const ELLIPSOID_AXES: Point3 = [1.0, 0.6, 0.35];
const HELIX_RADIUS: f64 = 0.6;
const HELIX_TUBE: f64 = 0.08;
const HELIX_TURNS: f64 = 3.0;
const HELIX_HALF_HEIGHT: f64 = 0.7;
const CROSS_HALF_LEN: f64 = 0.9;
const CROSS_HALF_WIDTH: f64 = 0.15;
const RING_RADIUS: f64 = 0.8;
const RING_HALF_HEIGHT: f64 = 0.08;

/// Samples `n_points` on the surface of `kind`, perturbed by isotropic
/// Gaussian noise of standard deviation `jitter`. The noise vector is
/// truncated to norm `3·jitter`, so every point stays within that distance
/// of the surface. The cloud is not normalized.
pub fn generate_shape(kind: ShapeKind, n_points: usize, seed: u64, jitter: f64) -> Result<PointCloud> {
    generate_variant(kind, [1.0, 1.0, 1.0], n_points, seed, jitter)
}

/// Like [`generate_shape`], with the surface stretched per axis before jitter.
pub fn generate_variant(
    kind: ShapeKind,
    stretch: Point3,
    n_points: usize,
    seed: u64,
    jitter: f64,
) -> Result<PointCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::invalid(format!(
            "n_points must be at least {MIN_POINTS}, got {n_points}"
        )));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::invalid(format!("jitter must be finite and >= 0, got {jitter}")));
    }
    if stretch.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("stretch factors must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        if i % 2 == 1 && kind.is_centrally_symmetric() {
            let prev: Point3 = points[i - 1];
            points.push(prev.map(|v| -v));
            continue;
        }
        let p = sample_surface(kind, &mut rng);
        let mut p = [p[0] * stretch[0], p[1] * stretch[1], p[2] * stretch[2]];
        if jitter > 0.0 {
            let mut d: Point3 = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let len = super::norm(&d);
            if len > 3.0 {
                d = d.map(|v| v * 3.0 / len);
            }
            for k in 0..3 {
                p[k] += jitter * d[k];
            }
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, kind.name(), format!("{}-{seed}", kind.name())))
}

fn sample_surface<R: Rng>(kind: ShapeKind, rng: &mut R) -> Point3 {
    match kind {
        ShapeKind::Sphere => unit_direction(rng),
        ShapeKind::Cube => box_surface(rng, [CUBE_HALF; 3]),
        ShapeKind::Cylinder => cylinder_surface(rng, CYL_RADIUS, CYL_HALF_HEIGHT, true),
        ShapeKind::Cone => cone_surface(rng),
        ShapeKind::Torus => {
            let u = rng.gen_range(0.0..2.0 * PI);
            let v = rng.gen_range(0.0..2.0 * PI);
            let r = TORUS_MAJOR + TORUS_MINOR * v.cos();
            [r * u.cos(), r * u.sin(), TORUS_MINOR * v.sin()]
        }
        ShapeKind::Pyramid => pyramid_surface(rng),
        ShapeKind::Ellipsoid => {
            let d = unit_direction(rng);
            [d[0] * ELLIPSOID_AXES[0], d[1] * ELLIPSOID_AXES[1], d[2] * ELLIPSOID_AXES[2]]
        }
        ShapeKind::Helix => helix_surface(rng),
        ShapeKind::Cross => cross_surface(rng),
        ShapeKind::Ring => cylinder_surface(rng, RING_RADIUS, RING_HALF_HEIGHT, false),
    }
}

fn unit_direction<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let d: Point3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = super::norm(&d);
        if n > 1e-9 {
            return d.map(|v| v / n);
        }
    }
}

/// Uniform over the surface of an axis-aligned box centered at the origin.
fn box_surface<R: Rng>(rng: &mut R, half: Point3) -> Point3 {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut axis = 2;
    for (k, a) in areas.iter().enumerate() {
        if pick < *a {
            axis = k;
            break;
        }
        pick -= a;
    }
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = if k == axis {
            sign * half[k]
        } else {
            rng.gen_range(-half[k]..=half[k])
        };
    }
    p
}

fn disk_point<R: Rng>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
    let t = rng.gen_range(0.0..2.0 * PI);
    (r * t.cos(), r * t.sin())
}

fn cylinder_surface<R: Rng>(rng: &mut R, radius: f64, half_h: f64, caps: bool) -> Point3 {
    let side = 2.0 * PI * radius * 2.0 * half_h;
    let cap = if caps { PI * radius * radius } else { 0.0 };
    let pick = rng.gen_range(0.0..side + 2.0 * cap);
    if pick < side {
        let t = rng.gen_range(0.0..2.0 * PI);
        [radius * t.cos(), radius * t.sin(), rng.gen_range(-half_h..=half_h)]
    } else {
        let (x, y) = disk_point(rng, radius);
        let z = if pick < side + cap { half_h } else { -half_h };
        [x, y, z]
    }
}

fn cone_surface<R: Rng>(rng: &mut R) -> Point3 {
    let h = CONE_APEX_Z - CONE_BASE_Z;
    let slant = (h * h + CONE_RADIUS * CONE_RADIUS).sqrt();
    let lateral = PI * CONE_RADIUS * slant;
    let base = PI * CONE_RADIUS * CONE_RADIUS;
    if rng.gen_range(0.0..lateral + base) < lateral {
        // radius fraction s has density proportional to s
        let s = rng.gen_range(0.0f64..1.0).sqrt();
        let t = rng.gen_range(0.0..2.0 * PI);
        let r = s * CONE_RADIUS;
        [r * t.cos(), r * t.sin(), CONE_APEX_Z - s * h]
    } else {
        let (x, y) = disk_point(rng, CONE_RADIUS);
        [x, y, CONE_BASE_Z]
    }
}

fn pyramid_surface<R: Rng>(rng: &mut R) -> Point3 {
    let a = PYRAMID_HALF;
    let h = PYRAMID_APEX_Z - PYRAMID_BASE_Z;
    let face_height = (h * h + a * a).sqrt();
    let face = a * face_height; // triangle: base 2a, height face_height
    let base = 4.0 * a * a;
    let pick = rng.gen_range(0.0..4.0 * face + base);
    if pick >= 4.0 * face {
        return [rng.gen_range(-a..=a), rng.gen_range(-a..=a), PYRAMID_BASE_Z];
    }
    let which = (pick / face) as usize;
    // uniform point in the triangle (apex, c0, c1) via folded barycentrics
    let (mut u, mut v): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let corners = [[a, a], [-a, a], [-a, -a], [a, -a]];
    let c0 = corners[which.min(3)];
    let c1 = corners[(which.min(3) + 1) % 4];
    let apex = [0.0, 0.0, PYRAMID_APEX_Z];
    let p0 = [c0[0], c0[1], PYRAMID_BASE_Z];
    let p1 = [c1[0], c1[1], PYRAMID_BASE_Z];
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = apex[k] + u * (p0[k] - apex[k]) + v * (p1[k] - apex[k]);
    }
    p
}

fn helix_surface<R: Rng>(rng: &mut R) -> Point3 {
    let s = rng.gen_range(0.0..1.0);
    let theta = 2.0 * PI * HELIX_TURNS * s;
    let center = [
        HELIX_RADIUS * theta.cos(),
        HELIX_RADIUS * theta.sin(),
        -HELIX_HALF_HEIGHT + 2.0 * HELIX_HALF_HEIGHT * s,
    ];
    // orthonormal frame around the tangent
    let dz = 2.0 * HELIX_HALF_HEIGHT / (2.0 * PI * HELIX_TURNS);
    let tangent = normalize([-HELIX_RADIUS * theta.sin(), HELIX_RADIUS * theta.cos(), dz]);
    let radial = [theta.cos(), theta.sin(), 0.0];
    let binormal = cross(tangent, radial);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let mut p = center;
    for k in 0..3 {
        p[k] += HELIX_TUBE * (phi.cos() * radial[k] + phi.sin() * binormal[k]);
    }
    p
}

fn cross_surface<R: Rng>(rng: &mut R) -> Point3 {
    // two orthogonal bars in the xy-plane; points buried inside the other bar are rejected
    let bar_x = [CROSS_HALF_LEN, CROSS_HALF_WIDTH, CROSS_HALF_WIDTH];
    let bar_y = [CROSS_HALF_WIDTH, CROSS_HALF_LEN, CROSS_HALF_WIDTH];
    loop {
        let along_x = rng.gen_bool(0.5);
        let (half, other) = if along_x { (bar_x, bar_y) } else { (bar_y, bar_x) };
        let p = box_surface(rng, half);
        let inside_other = (0..3).all(|k| p[k].abs() < other[k] - 1e-12);
        if !inside_other {
            return p;
        }
    }
}

fn normalize(v: Point3) -> Point3 {
    let n = super::norm(&v);
    v.map(|x| x / n)
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
