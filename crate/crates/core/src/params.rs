//! Named parameter storage, tape binding, Adam and checksums.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autograd::{Grads, Mat, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Rc<Mat>,
}

/// An ordered registry of named matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// The tape handles of every parameter of a store for one forward pass.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value: Rc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    /// Gaussian init with the given standard deviation.
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
        let value = Mat::from_shape_fn(shape, |_| normal.sample(rng));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Mat) -> Result<()> {
        let cur = self.get(id);
        if cur.dim() != value.dim() {
            return Err(Error::invalid(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                self.name(id),
                cur.dim(),
                value.dim()
            )));
        }
        self.params[id.0].value = Rc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Registers every parameter on the tape. Frozen stores bind as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf_rc(Rc::clone(&p.value), trainable))
            .collect();
        Binding { vars }
    }

    /// Pulls this store's gradients out of a backward pass.
    pub fn collect_grads(&self, binding: &Binding, grads: &mut Grads) -> Vec<Option<Mat>> {
        binding.vars.iter().map(|&v| grads.take(v)).collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update((p.value.nrows() as u64).to_le_bytes());
            h.update((p.value.ncols() as u64).to_le_bytes());
            for v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A dense affine map `x·W + b` for row-major token matrices.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Xavier-style normal init with zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Self::with_std(store, name, fan_in, fan_out, std, rng)
    }

    pub fn with_std<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add_normal(format!("{name}.weight"), (fan_in, fan_out), std, rng);
        let b = store.add(format!("{name}.bias"), Mat::zeros((1, fan_out)));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        let y = tape.matmul(x, p.var(self.w));
        tape.add_row(y, p.var(self.b))
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = |s: &ParamStore| s.params.iter().map(|p| Mat::zeros(p.value.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let param = Rc::make_mut(&mut store.params[i].value);
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            ndarray::Zip::from(param)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Mat::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(&store, 0.0);
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, true);
            let sq = tape.square(b.var(x));
            let loss = tape.sum(sq);
            let mut grads = tape.backward(loss);
            let g = store.collect_grads(&b, &mut grads);
            opt.step(&mut store, &g, 0.05);
        }
        assert!(store.get(x).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let x = store.add("x", Mat::from_elem((1, 1), 1.0));
        let mut opt = Adam::new(&store, 0.0);
        opt.step(&mut store, &[Some(Mat::from_elem((1, 1), 0.3))], 1e-3);
        assert!((store.get(x)[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new();
        let lin = Linear::new(&mut a, "fc", 3, 2, &mut rng);
        let before = a.checksum();
        assert_eq!(before, a.clone().checksum());
        a.get_mut(lin.b)[[0, 1]] = 0.5;
        assert_ne!(before, a.checksum());
    }
}
