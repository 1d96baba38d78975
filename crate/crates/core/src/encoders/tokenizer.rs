//! Farthest-point grouping and the learnable per-group embedding.

use std::cmp::Ordering;
use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, Linear, ParamStore};
use crate::pointset::{Point3, PointCloud};

/// Centers and relative neighborhoods of one cloud. Independent of weights,
/// so it can be computed once per sample and reused.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGroups {
    /// `tokens × 3`.
    pub centers: Rc<Mat>,
    /// `(tokens·k) × 3`, neighbor minus center, grouped by token.
    pub relative: Rc<Mat>,
    pub group_size: usize,
}

fn lex(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

fn d2(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Neighborhood size for `tokens` groups over `n` points.
pub fn group_size(n: usize, tokens: usize) -> usize {
    n.min(8.max((2 * n).div_ceil(tokens)))
}

/// Farthest-point sampling. Starts from the point of largest norm; ties
/// are broken by lexicographic coordinate order, which makes the result
/// independent of the input order.
pub fn farthest_point_sample(points: &[Point3], count: usize) -> Vec<usize> {
    let origin = [0.0; 3];
    let better = |i: usize, j: usize, key: &dyn Fn(usize) -> f64| match key(i).total_cmp(&key(j)) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lex(&points[i], &points[j]) == Ordering::Less,
    };
    let norm = |i: usize| d2(&points[i], &origin);
    let mut first = 0;
    for i in 1..points.len() {
        if better(i, first, &norm) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| d2(p, &points[first])).collect();
    while chosen.len() < count {
        let key = |i: usize| nearest[i];
        let mut next = 0;
        for i in 1..points.len() {
            if better(i, next, &key) {
                next = i;
            }
        }
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(d2(p, &points[next]));
        }
    }
    chosen
}

/// Samples `tokens` centers and gathers each center's k nearest neighbors.
pub fn group_points(pc: &PointCloud, tokens: usize) -> Result<PointGroups> {
    let n = pc.len();
    if tokens == 0 {
        return Err(Error::invalid("token count must be positive"));
    }
    if tokens > n {
        return Err(Error::invalid(format!("{tokens} tokens requested from {n} points")));
    }
    if !pc.is_finite() {
        return Err(Error::invalid(format!("cloud {} has non-finite coordinates", pc.id)));
    }
    let pts = &pc.points;
    let k = group_size(n, tokens);
    let centers_idx = farthest_point_sample(pts, tokens);
    let mut centers = Mat::zeros((tokens, 3));
    let mut relative = Mat::zeros((tokens * k, 3));
    let mut order: Vec<usize> = (0..n).collect();
    for (t, &ci) in centers_idx.iter().enumerate() {
        let c = pts[ci];
        for j in 0..3 {
            centers[[t, j]] = c[j];
        }
        order.sort_by(|&a, &b| d2(&pts[a], &c).total_cmp(&d2(&pts[b], &c)).then(lex(&pts[a], &pts[b])));
        for (r, &pi) in order[..k].iter().enumerate() {
            for j in 0..3 {
                relative[[t * k + r, j]] = pts[pi][j] - c[j];
            }
        }
    }
    Ok(PointGroups { centers: Rc::new(centers), relative: Rc::new(relative), group_size: k })
}

/// Two-layer perceptron over relative neighborhoods, max-pooled per group,
/// plus a linear embedding of the center.
#[derive(Clone, Copy, Debug)]
pub struct Tokenizer {
    pub hidden: Linear,
    pub out: Linear,
    pub center: Linear,
}

impl Tokenizer {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let half = (dim / 2).max(1);
        Self {
            hidden: Linear::new(store, "point.tokenizer.hidden", 3, half, rng),
            out: Linear::new(store, "point.tokenizer.out", half, dim, rng),
            center: Linear::new(store, "point.tokenizer.center", 3, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, groups: &PointGroups) -> Var {
        let rel = tape.leaf_rc(Rc::clone(&groups.relative), false);
        let h = self.hidden.forward(tape, p, rel);
        let h = tape.gelu(h);
        let h = self.out.forward(tape, p, h);
        let pooled = tape.group_max(h, groups.group_size);
        let centers = tape.leaf_rc(Rc::clone(&groups.centers), false);
        let pos = self.center.forward(tape, p, centers);
        tape.add(pooled, pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::{generate_shape, normalize_unit_sphere, ShapeKind};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn min_pairwise(points: &[Point3], idx: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                best = best.min(d2(&points[i], &points[j]));
            }
        }
        best
    }

    #[test]
    fn fps_spreads_better_than_random_subsets() {
        for seed in 0..20 {
            let kind = ShapeKind::ALL[seed as usize % ShapeKind::ALL.len()];
            let pc = normalize_unit_sphere(&generate_shape(kind, 256, seed, 0.01).unwrap()).unwrap();
            let fps = farthest_point_sample(&pc.points, 32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let mut all: Vec<usize> = (0..256).collect();
            all.shuffle(&mut rng);
            assert!(min_pairwise(&pc.points, &fps) >= min_pairwise(&pc.points, &all[..32]), "seed {seed}");
        }
    }

    #[test]
    fn grouping_is_order_invariant() {
        let pc = generate_shape(ShapeKind::Torus, 128, 3, 0.01).unwrap();
        let mut shuffled = pc.clone();
        shuffled.points.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(group_points(&pc, 16).unwrap(), group_points(&shuffled, 16).unwrap());
    }

    #[test]
    fn single_token_covers_the_cloud() {
        let pc = generate_shape(ShapeKind::Cube, 64, 1, 0.0).unwrap();
        let g = group_points(&pc, 1).unwrap();
        assert_eq!(g.group_size, 64);
        assert_eq!(g.relative.nrows(), 64);
        assert!(group_points(&pc, 65).is_err());
        assert!(group_points(&pc, 0).is_err());
    }
}
