//! Synthetic class catalog and the on-disk `data/<class>/<sample_id>.xyz` layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shapes::{generate_variant, ShapeKind};
use super::xyz::{load_xyz, save_xyz};
use super::{normalize_unit_sphere, PointCloud, Point3};
use crate::error::{Error, Result};

/// A named class: a surface family plus a fixed per-axis stretch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub kind: ShapeKind,
    pub stretch: Point3,
}

impl ClassSpec {
    fn new(name: &str, kind: ShapeKind, stretch: Point3) -> Self {
        Self { name: name.to_string(), kind, stretch }
    }

    /// Sixteen classes: the ten base families followed by stretched variants.
    pub fn catalog() -> Vec<ClassSpec> {
        use ShapeKind::*;
        let mut v: Vec<ClassSpec> = ShapeKind::ALL.iter().map(|k| Self::new(k.name(), *k, [1.0; 3])).collect();
        v.extend([
            Self::new("slab", Cube, [1.3, 1.3, 0.3]),
            Self::new("rod", Cylinder, [0.25, 0.25, 1.5]),
            Self::new("disk", Cylinder, [1.4, 1.4, 0.15]),
            Self::new("spindle", Ellipsoid, [0.3, 0.5, 2.5]),
            Self::new("spire", Pyramid, [0.4, 0.4, 1.4]),
            Self::new("funnel", Cone, [1.3, 1.3, 0.4]),
        ]);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub classes: Vec<ClassSpec>,
    pub per_class: usize,
    pub n_points: usize,
    pub jitter: f64,
    /// Per-axis random scale factor range `1 ± scale_jitter` applied per sample.
    pub scale_jitter: f64,
    /// Random rotation about the vertical axis per sample.
    pub rotate: bool,
    pub seed: u64,
}

impl DatasetConfig {
    /// The first `n_classes` catalog entries.
    pub fn with_classes(n_classes: usize, per_class: usize, seed: u64) -> Result<Self> {
        let catalog = ClassSpec::catalog();
        if n_classes == 0 || n_classes > catalog.len() {
            return Err(Error::invalid(format!(
                "class count must be in 1..={}, got {n_classes}",
                catalog.len()
            )));
        }
        Ok(Self {
            classes: catalog[..n_classes].to_vec(),
            per_class,
            n_points: 256,
            jitter: 0.01,
            scale_jitter: 0.1,
            rotate: true,
            seed,
        })
    }
}

/// Normalized clouds grouped by class, in class order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub classes: Vec<(String, Vec<PointCloud>)>,
    index: HashMap<String, (usize, usize)>,
}

impl Dataset {
    pub fn new(classes: Vec<(String, Vec<PointCloud>)>) -> Self {
        let mut index = HashMap::new();
        for (ci, (_, samples)) in classes.iter().enumerate() {
            for (si, s) in samples.iter().enumerate() {
                index.insert(s.id.clone(), (ci, si));
            }
        }
        Self { classes, index }
    }

    pub fn get(&self, id: &str) -> Option<&PointCloud> {
        self.index.get(id).map(|&(c, s)| &self.classes[c].1[s])
    }

    pub fn require(&self, id: &str) -> Result<&PointCloud> {
        self.get(id).ok_or_else(|| Error::invalid(format!("unknown sample id '{id}'")))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `(class, ids)` listing suitable for [`super::build_schedule`].
    pub fn class_ids(&self) -> Vec<(String, Vec<String>)> {
        self.classes
            .iter()
            .map(|(c, s)| (c.clone(), s.iter().map(|p| p.id.clone()).collect()))
            .collect()
    }
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut classes = Vec::with_capacity(cfg.classes.len());
    for spec in &cfg.classes {
        let mut samples = Vec::with_capacity(cfg.per_class);
        for i in 0..cfg.per_class {
            let mut stretch = spec.stretch;
            for s in &mut stretch {
                *s *= 1.0 + rng.gen_range(-cfg.scale_jitter..=cfg.scale_jitter);
            }
            let seed = rng.gen::<u64>();
            let mut pc = generate_variant(spec.kind, stretch, cfg.n_points, seed, cfg.jitter)?;
            if cfg.rotate {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let (s, c) = angle.sin_cos();
                for p in &mut pc.points {
                    *p = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
                }
            }
            let mut pc = normalize_unit_sphere(&pc)?;
            pc.label = spec.name.clone();
            pc.id = format!("{}_{i:04}", spec.name);
            samples.push(pc);
        }
        classes.push((spec.name.clone(), samples));
    }
    Ok(Dataset::new(classes))
}

pub fn save_dataset(data: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for (class, samples) in &data.classes {
        let dir = root.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in samples {
            save_xyz(s, dir.join(format!("{}.xyz", s.id)))?;
        }
    }
    Ok(())
}

/// Reads every `<class>/<id>.xyz` under `root`, classes and ids sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    class_dirs.sort_by_key(|e| e.file_name());
    let mut classes = Vec::new();
    for entry in class_dirs {
        let dir = entry.path();
        let class = entry.file_name().to_string_lossy().to_string();
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
            .collect();
        files.sort();
        let samples = files.iter().map(load_xyz).collect::<Result<Vec<_>>>()?;
        classes.push((class, samples));
    }
    Ok(Dataset::new(classes))
}
