//! Synthetic point clouds, normalization, persistence and the incremental
//! task schedule.

mod dataset;
mod exemplars;
mod schedule;
mod shapes;
mod xyz;

pub use dataset::{generate_dataset, load_dataset, save_dataset, ClassSpec, Dataset, DatasetConfig};
pub use exemplars::ExemplarStore;
pub use schedule::{build_schedule, IncrementalSchedule, ScheduleConfig, Task};
pub use shapes::{generate_shape, generate_variant, ShapeKind};
pub use xyz::{load_xyz, parse_xyz, save_xyz, write_xyz};

use rand::Rng;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Minimum point count for generated and encoded clouds.
pub const MIN_POINTS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Class name. Doubles as the class description used for prototype lookup.
    pub label: String,
    pub id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, label: impl Into<String>, id: impl Into<String>) -> Self {
        Self {
            points,
            label: label.into(),
            id: id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Applies `a·p + b` to every point.
    pub fn affine(&self, a: f64, b: Point3) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| [a * p[0] + b[0], a * p[1] + b[1], a * p[2] + b[2]])
            .collect();
        Self::new(points, self.label.clone(), self.id.clone())
    }
}

/// A random rotation about the vertical axis, a per-axis scale in
/// `1 ± scale_jitter` and per-point Gaussian noise of scale `jitter`,
/// renormalized. Label and id are kept.
pub fn augment<R: Rng>(pc: &PointCloud, scale_jitter: f64, jitter: f64, rng: &mut R) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&scale_jitter) {
        return Err(Error::invalid(format!("scale jitter must lie in [0, 1), got {scale_jitter}")));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::invalid(format!("jitter must be finite and >= 0, got {jitter}")));
    }
    let (s, c) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
    let k: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.gen_range(-scale_jitter..=scale_jitter));
    let points = pc
        .points
        .iter()
        .map(|p| {
            let n: [f64; 3] = std::array::from_fn(|_| jitter * rng.sample::<f64, _>(rand_distr::StandardNormal));
            [k[0] * (c * p[0] - s * p[1]) + n[0], k[1] * (s * p[0] + c * p[1]) + n[1], k[2] * p[2] + n[2]]
        })
        .collect();
    let mut out = normalize_unit_sphere(&PointCloud::new(points, "", ""))?;
    out.label = pc.label.clone();
    out.id = pc.id.clone();
    Ok(out)
}

pub(crate) fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Centers the cloud at the origin and scales its farthest point to norm 1.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::invalid("cannot normalize an empty cloud"));
    }
    if !pc.is_finite() {
        return Err(Error::invalid("cloud contains non-finite coordinates"));
    }
    let c = pc.centroid();
    let centered: Vec<Point3> = pc
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let scale = centered.iter().map(norm).fold(0.0, f64::max);
    if scale < 1e-12 {
        return Err(Error::DegenerateInput(
            "all points coincide; cannot scale to the unit sphere".into(),
        ));
    }
    let points = centered.iter().map(|p| p.map(|v| v / scale)).collect();
    Ok(PointCloud::new(points, pc.label.clone(), pc.id.clone()))
}
