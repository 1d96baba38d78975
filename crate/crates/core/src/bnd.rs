//! Base/novel discriminator: a small binary classifier over point features
//! that routes each test sample to the frozen base network or to the
//! network that keeps learning.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Adam, Binding, Linear, ParamStore};
use crate::pointset::ExemplarStore;

const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Route {
    Base,
    Novel,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::Base => "base",
            Route::Novel => "novel",
        })
    }
}

/// Base iff `score > h`; a score equal to the threshold goes to novel.
pub fn route(score: f64, h: f64) -> Route {
    if score > h {
        Route::Base
    } else {
        Route::Novel
    }
}

/// Base classes map to 1, novel classes to 0.
pub fn relabel_binary(labels: &[String], base: &[String], novel: &[String]) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            if base.contains(l) {
                Ok(1.0)
            } else if novel.contains(l) {
                Ok(0.0)
            } else {
                Err(Error::invalid(format!("label '{l}' belongs to no task")))
            }
        })
        .collect()
}

/// Mean binary cross-entropy of `B×1` probabilities.
pub fn bce_var(tape: &mut Tape, scores: Var, targets: &[f64]) -> Var {
    let n = targets.len();
    let y = tape.constant(Mat::from_shape_vec((n, 1), targets.to_vec()).expect("one target per row"));
    let one_minus_y = tape.constant(Mat::from_shape_fn((n, 1), |(i, _)| 1.0 - targets[i]));
    let clamped = tape.affine(scores, 1.0 - 2.0 * BCE_EPS, BCE_EPS);
    let log_p = tape.log(clamped);
    let rest = tape.affine(clamped, -1.0, 1.0);
    let log_q = tape.log(rest);
    let a = tape.mul(y, log_p);
    let b = tape.mul(one_minus_y, log_q);
    let s = tape.add(a, b);
    let m = tape.mean(s);
    tape.scale(m, -1.0)
}

pub fn bnd_loss(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::invalid("scores and labels must be non-empty and of equal length"));
    }
    if let Some(s) = scores.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::invalid(format!("score {s} is outside (0, 1)")));
    }
    let mut tape = Tape::new();
    let s = tape.constant(Mat::from_shape_vec((scores.len(), 1), scores.to_vec()).expect("column"));
    let l = bce_var(&mut tape, s, targets);
    Ok(tape.scalar(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BndConfig {
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Every balanced class side is replicated up to this many samples per epoch.
    pub samples_per_side: usize,
    /// Size of the augmented pool each side is drawn from before replication.
    pub augment: usize,
}

impl Default for BndConfig {
    fn default() -> Self {
        Self { threshold: 0.1, epochs: 10, lr: 1e-3, batch: 4, samples_per_side: 2048, augment: 512 }
    }
}

/// Two-layer perceptron `d → d/2 → 1` with a sigmoid output. Owns its
/// parameters, so training it can never touch the main networks.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub store: ParamStore,
    hidden: Linear,
    out: Linear,
    /// Input standardization `(x − shift) ⊙ gain`, fixed from the training features.
    shift: Mat,
    gain: Mat,
}

impl Discriminator {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hidden = Linear::new(&mut store, "bnd.hidden", dim, (dim / 2).max(1), &mut rng);
        let out = Linear::new(&mut store, "bnd.out", (dim / 2).max(1), 1, &mut rng);
        Self { store, hidden, out, shift: Mat::zeros((1, dim)), gain: Mat::ones((1, dim)) }
    }

    /// Per-dimension mean and inverse standard deviation of `rows`.
    fn fit_standardization(&mut self, rows: &[&[f64]]) {
        let n = rows.len() as f64;
        for j in 0..self.dim() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            self.shift[[0, j]] = mean;
            self.gain[[0, j]] = 1.0 / var.sqrt().max(1e-6);
        }
    }

    pub fn dim(&self) -> usize {
        self.store.get(self.hidden.w).nrows()
    }

    /// `B×d` features to `B×1` probabilities.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Var {
        let shift = tape.constant(-&self.shift);
        let gain = tape.constant(self.gain.clone());
        let x = tape.add_row(x, shift);
        let x = tape.mul_row(x, gain);
        let h = self.hidden.forward(tape, p, x);
        let h = tape.relu(h);
        let z = self.out.forward(tape, p, h);
        tape.sigmoid(z)
    }

    pub fn score(&self, feature: &[f64]) -> f64 {
        self.scores(&[feature.to_vec()])[0]
    }

    pub fn scores(&self, features: &[Vec<f64>]) -> Vec<f64> {
        if features.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let x = tape.constant(stack(features));
        let y = self.forward(&mut tape, &p, x);
        tape.value(y).iter().copied().collect()
    }

    /// Trains on base features (label 1) against novel features (label 0).
    /// Each side is cycled up to `samples_per_side` samples per epoch so the
    /// classes stay balanced. Inputs are standardized with statistics of
    /// both sides. Returns the mean loss of every epoch.
    pub fn train(&mut self, base: &[Vec<f64>], novel: &[Vec<f64>], cfg: &BndConfig, seed: u64) -> Result<Vec<f64>> {
        if base.is_empty() || novel.is_empty() {
            return Err(Error::invalid("discriminator training needs base and novel samples"));
        }
        let side = cfg.samples_per_side.max(base.len()).max(novel.len());
        let mut items: Vec<(&[f64], f64)> = Vec::with_capacity(2 * side);
        for i in 0..side {
            items.push((&base[i % base.len()], 1.0));
            items.push((&novel[i % novel.len()], 0.0));
        }
        if base.iter().chain(novel).any(|f| f.len() != self.dim()) {
            return Err(Error::invalid(format!("discriminator expects {}-dim features", self.dim())));
        }
        let rows: Vec<&[f64]> = base.iter().chain(novel).map(Vec::as_slice).collect();
        self.fit_standardization(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(&self.store, 0.0);
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            items.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in items.chunks(cfg.batch.max(1)) {
                let mut tape = Tape::new();
                let p = self.store.bind(&mut tape, true);
                let feats: Vec<Vec<f64>> = chunk.iter().map(|(f, _)| f.to_vec()).collect();
                let x = tape.constant(stack(&feats));
                let targets: Vec<f64> = chunk.iter().map(|(_, y)| *y).collect();
                let s = self.forward(&mut tape, &p, x);
                let loss = bce_var(&mut tape, s, &targets);
                total += tape.scalar(loss) * chunk.len() as f64;
                let mut grads = tape.backward(loss);
                let g = self.store.collect_grads(&p, &mut grads);
                opt.step(&mut self.store, &g, cfg.lr);
            }
            history.push(total / items.len() as f64);
        }
        Ok(history)
    }
}

pub(crate) fn stack(rows: &[Vec<f64>]) -> Mat {
    let d = rows[0].len();
    Mat::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// Per class, the `k` samples whose features are nearest the class mean
/// (ties broken by id).
pub fn select_exemplars(classes: &[(String, Vec<(String, Vec<f64>)>)], k: usize) -> Result<ExemplarStore> {
    let mut store = ExemplarStore::new(k);
    for (class, samples) in classes {
        if samples.len() < k || samples.is_empty() {
            return Err(Error::invalid(format!("class '{class}' has {} samples, needs {k}", samples.len())));
        }
        let d = samples[0].1.len();
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|(_, f)| f[j]).sum::<f64>() / n).collect();
        let mut ranked: Vec<(f64, &str)> = samples
            .iter()
            .map(|(id, f)| (f.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum(), id.as_str()))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        store.insert(class, ranked[..k].iter().map(|(_, id)| id.to_string()).collect())?;
    }
    Ok(store)
}

/// Decile histogram of scores in `[0, 1]` as `bin,count` CSV.
pub fn histogram_csv(scores: &[f64], bins: usize) -> String {
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut out = String::from("bin,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

/// Fraction of scores falling into the lowest and highest decile.
pub fn outer_decile_mass(scores: &[f64]) -> f64 {
    let outer = scores.iter().filter(|&&s| !(0.1..0.9).contains(&s)).count();
    outer as f64 / scores.len().max(1) as f64
}

/// Routing accuracy: fraction of samples whose route matches their binary label.
pub fn routing_accuracy(scores: &[f64], targets: &[f64], h: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(targets)
        .filter(|(&s, &y)| (route(s, h) == Route::Base) == (y == 1.0))
        .count();
    hits as f64 / scores.len().max(1) as f64
}
