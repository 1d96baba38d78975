//! Base training, per-task updates, discriminator side-training and routed evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode};
use super::model::{prepare, Frozen, LossWeights, Net, Prepared};
use super::cosine_lr;
use crate::autograd::Tape;
use crate::bnd::{route, select_exemplars, Discriminator, Route};
use crate::encoders::PrototypeMatrix;
use crate::error::{Error, Result};
use crate::params::{hex_digest, Adam};
use crate::pointset::{
    augment, build_schedule, generate_dataset, ClassSpec, Dataset, DatasetConfig, ExemplarStore, IncrementalSchedule,
    PointCloud, ScheduleConfig,
};

/// One scored test sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub label: String,
    pub predicted: String,
    /// Routing decision and discriminator score, when routing was used.
    pub route: Option<(Route, f64)>,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

/// Result of one evaluation over the cumulative test pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub task: usize,
    pub num_classes: usize,
    /// Micro-accuracy in percent.
    pub acc: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Micro-accuracy in percent of a prediction log.
pub fn micro_accuracy(predictions: &[PredictionRecord]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let hits = predictions.iter().filter(|p| p.correct()).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Builds the synthetic dataset named by the config: every class of the
/// schedule, looked up in the catalog.
pub fn experiment_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let catalog = ClassSpec::catalog();
    let classes = cfg
        .class_order()
        .iter()
        .map(|name| {
            catalog
                .iter()
                .find(|c| &c.name == name)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("unknown class '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    generate_dataset(&DatasetConfig {
        classes,
        per_class: cfg.data.per_class,
        n_points: cfg.data.points,
        jitter: cfg.data.jitter,
        scale_jitter: cfg.data.scale_jitter,
        rotate: true,
        seed: cfg.seed,
    })
}

/// Task split of a dataset in config class order.
pub fn experiment_schedule(cfg: &ExperimentConfig, data: &Dataset) -> Result<IncrementalSchedule> {
    let ids: BTreeMap<String, Vec<String>> = data.class_ids().into_iter().collect();
    let listing = cfg
        .class_order()
        .into_iter()
        .map(|c| {
            let v = ids.get(&c).cloned().ok_or_else(|| Error::invalid(format!("dataset lacks class '{c}'")))?;
            Ok((c, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = cfg.data.tasks.iter().map(Vec::len).collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::invalid("every incremental task must have the same number of classes"));
    }
    build_schedule(
        &listing,
        &ScheduleConfig {
            base_count: cfg.data.base.len(),
            tasks: cfg.data.tasks.len(),
            shots: cfg.data.shots,
            novel_per_task: sizes.first().copied(),
            test_per_class: cfg.data.test_per_class,
        },
        cfg.seed,
    )
}

fn task_rng(seed: u64, task: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The full learner state: trainable network, frozen snapshot, discriminator,
/// exemplars and the accuracy log.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: ExperimentConfig,
    pub schedule: IncrementalSchedule,
    pub frozen: Frozen,
    pub net: Net,
    pub net_b: Option<Net>,
    pub disc: Option<Discriminator>,
    pub exemplars: ExemplarStore,
    samples: BTreeMap<String, Rc<Prepared>>,
    /// Raw training clouds, kept for discriminator augmentation.
    clouds: BTreeMap<String, PointCloud>,
    base_features: BTreeMap<String, Rc<Vec<f64>>>,
    next_task: usize,
    bnd_task: Option<usize>,
    pub evaluations: Vec<Evaluation>,
    /// Mean training loss of every epoch, per task.
    pub losses: Vec<Vec<f64>>,
    pub bnd_losses: Vec<Vec<f64>>,
}

impl Learner {
    /// Prepares every sample of the schedule and initializes the network.
    pub fn new(cfg: ExperimentConfig, data: &Dataset, schedule: IncrementalSchedule) -> Result<Self> {
        cfg.validate()?;
        let frozen = Frozen::new(&cfg)?;
        let net = Net::new(&cfg, cfg.seed)?;
        let mut samples = BTreeMap::new();
        let mut clouds = BTreeMap::new();
        for task in &schedule.tasks {
            for split in &task.splits {
                for id in split.train.iter().chain(&split.test) {
                    let pc = data.require(id)?;
                    samples.insert(id.clone(), Rc::new(prepare(pc, &net.encoder, &frozen, &cfg)?));
                }
                for id in &split.train {
                    clouds.insert(id.clone(), data.require(id)?.clone());
                }
            }
        }
        Ok(Self {
            exemplars: ExemplarStore::new(cfg.exemplars_per_class),
            cfg,
            schedule,
            frozen,
            net,
            net_b: None,
            disc: None,
            samples,
            clouds,
            base_features: BTreeMap::new(),
            next_task: 0,
            bnd_task: None,
            evaluations: Vec::new(),
            losses: Vec::new(),
            bnd_losses: Vec::new(),
        })
    }

    /// Generates data and schedule from the config.
    pub fn from_config(cfg: ExperimentConfig) -> Result<Self> {
        let data = experiment_dataset(&cfg)?;
        let schedule = experiment_schedule(&cfg, &data)?;
        Self::new(cfg, &data, schedule)
    }

    /// Index of the next task to train.
    pub fn next_task(&self) -> usize {
        self.next_task
    }

    pub fn acc(&self) -> Vec<f64> {
        self.evaluations.iter().map(|e| e.acc).collect()
    }

    pub fn sample(&self, id: &str) -> Result<&Prepared> {
        self.samples
            .get(id)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::invalid(format!("unknown sample id '{id}'")))
    }

    /// Switches the learner to another mode, e.g. to branch a fine-tune
    /// ablation off a trained base.
    pub fn set_mode(&mut self, mode: Mode) {
        self.cfg.mode = mode;
    }

    fn protos(&self, classes: &[String]) -> Result<PrototypeMatrix> {
        self.frozen.prototypes.subset(classes)
    }

    /// Novel classes of tasks `1..=upto`.
    fn novel_upto(&self, upto: usize) -> Vec<String> {
        self.schedule.tasks[1..=upto].iter().flat_map(|t| t.classes().map(str::to_string)).collect()
    }

    /// Runs `epochs` epochs of cosine-annealed training over `items`.
    fn fit(&mut self, task: usize, items: Vec<String>, classes: &[String], weights: LossWeights, epochs: usize) -> Result<Vec<f64>> {
        let protos = self.protos(classes)?;
        let mut opt = Adam::new(&self.net.store, self.cfg.train.weight_decay);
        let mut rng = task_rng(self.cfg.seed, task, 0x5EED);
        let mut order = items;
        let mut history = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let lr = cosine_lr(e, (epochs - 1).max(1), self.cfg.train.lr_start, self.cfg.train.lr_end)?;
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.cfg.train.batch) {
                let owned: Vec<Rc<Prepared>> = chunk
                    .iter()
                    .map(|id| self.training_view(id, &mut rng))
                    .collect::<Result<_>>()?;
                let batch: Vec<&Prepared> = owned.iter().map(Rc::as_ref).collect();
                let mut tape = Tape::new();
                let p = self.net.store.bind(&mut tape, true);
                let loss = self.net.batch_loss(&mut tape, &p, &self.frozen, &batch, &protos, weights, &self.cfg)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::state(format!("training loss diverged in task {task}, epoch {e}")));
                }
                total += value * chunk.len() as f64;
                let mut grads = tape.backward(loss);
                let g = self.net.store.collect_grads(&p, &mut grads);
                opt.step(&mut self.net.store, &g, lr);
            }
            if !self.net.store.all_finite() {
                return Err(Error::state(format!("non-finite parameters after task {task}, epoch {e}")));
            }
            history.push(total / order.len() as f64);
        }
        Ok(history)
    }

    /// The cached sample, or a freshly augmented copy when training augmentation is on.
    fn training_view(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<Rc<Prepared>> {
        let cached = self.samples.get(id).ok_or_else(|| Error::invalid(format!("unknown sample id '{id}'")))?;
        if !self.cfg.train.augment {
            return Ok(Rc::clone(cached));
        }
        let pc = self.clouds.get(id).ok_or_else(|| Error::invalid(format!("'{id}' is not a training sample")))?;
        let aug = augment(pc, self.cfg.data.scale_jitter, self.cfg.data.jitter, rng)?;
        Ok(Rc::new(prepare(&aug, &self.net.encoder, &self.frozen, &self.cfg)?))
    }

    fn base_feature(&mut self, id: &str) -> Result<Rc<Vec<f64>>> {
        if let Some(f) = self.base_features.get(id) {
            return Ok(Rc::clone(f));
        }
        let net_b = self.net_b.as_ref().ok_or_else(|| Error::state("the frozen base network does not exist yet"))?;
        let sample = self.samples.get(id).ok_or_else(|| Error::invalid(format!("unknown sample id '{id}'")))?;
        let f = Rc::new(net_b.point_feature(sample, &self.cfg)?);
        self.base_features.insert(id.to_string(), Rc::clone(&f));
        Ok(f)
    }

    /// `F^P` of a sample under the frozen base network.
    pub fn frozen_feature(&mut self, id: &str) -> Result<Vec<f64>> {
        Ok(self.base_feature(id)?.as_ref().clone())
    }

    fn add_exemplars(&mut self, task: usize) -> Result<()> {
        let splits = self.schedule.tasks[task].splits.clone();
        let mut classes = Vec::with_capacity(splits.len());
        for s in &splits {
            let feats = s
                .train
                .iter()
                .map(|id| Ok((id.clone(), self.base_feature(id)?.as_ref().clone())))
                .collect::<Result<Vec<_>>>()?;
            classes.push((s.class.clone(), feats));
        }
        let picked = select_exemplars(&classes, self.cfg.exemplars_per_class)?;
        for class in picked.classes() {
            let ids = picked.get(class).unwrap_or_default().to_vec();
            self.exemplars.insert(class, ids)?;
        }
        Ok(())
    }

    /// Trains on the base task, freezes the snapshot and picks exemplars.
    pub fn train_base(&mut self) -> Result<&Evaluation> {
        if self.next_task != 0 {
            return Err(Error::state("the base task has already been trained"));
        }
        let base = &self.schedule.tasks[0];
        if base.train_len() == 0 {
            return Err(Error::invalid("the base task has no training samples"));
        }
        let items: Vec<String> = base.splits.iter().flat_map(|s| s.train.iter().cloned()).collect();
        let classes = self.schedule.base_classes();
        let weights = LossWeights { alpha_mc: self.cfg.alpha_mc, beta_c: self.cfg.beta_c };
        let history = self.fit(0, items, &classes, weights, self.cfg.train.base_epochs)?;
        self.losses.push(history);
        self.net_b = Some(self.net.clone());
        self.add_exemplars(0)?;
        self.next_task = 1;
        self.evaluate(0)?;
        Ok(self.evaluations.last().expect("just evaluated"))
    }

    /// Frozen features of every id in `groups`, topped up to `size` with
    /// augmented copies drawn round-robin over the groups.
    fn augmented_pool(&mut self, groups: &[Vec<String>], size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let mut out = groups
            .iter()
            .flatten()
            .map(|id| Ok(self.base_feature(id)?.as_ref().clone()))
            .collect::<Result<Vec<_>>>()?;
        let net_b = self.net_b.as_ref().ok_or_else(|| Error::state("the frozen base network does not exist yet"))?;
        let mut i = 0;
        while out.len() < size {
            let g = &groups[i % groups.len()];
            let id = &g[(i / groups.len()) % g.len()];
            i += 1;
            let pc = self.clouds.get(id).ok_or_else(|| Error::invalid(format!("'{id}' is not a training sample")))?;
            let aug = augment(pc, self.cfg.data.scale_jitter, self.cfg.data.jitter, rng)?;
            let sample = prepare(&aug, &net_b.encoder, &self.frozen, &self.cfg)?;
            out.push(net_b.point_feature(&sample, &self.cfg)?);
        }
        Ok(out)
    }

    /// Base exemplars against the novel training data of `task` plus earlier
    /// novel exemplars. Each side is augmented up to `bnd.augment` features
    /// with every class equally represented.
    pub fn bnd_training_sets(&mut self, task: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let base_classes = self.schedule.base_classes();
        let mut base = Vec::new();
        let mut novel = Vec::new();
        for class in self.exemplars.classes() {
            let ids = self.exemplars.get(class).unwrap_or_default().to_vec();
            if base_classes.iter().any(|c| c == class) {
                base.push(ids);
            } else {
                novel.push(ids);
            }
        }
        novel.extend(self.schedule.tasks[task].splits.iter().map(|s| s.train.clone()));
        base.retain(|g| !g.is_empty());
        novel.retain(|g| !g.is_empty());
        if base.is_empty() || novel.is_empty() {
            return Err(Error::state("discriminator needs base exemplars and novel samples"));
        }
        let mut rng = task_rng(self.cfg.seed, task, 0xA06E);
        let size = self.cfg.bnd.augment;
        let base = self.augmented_pool(&base, size, &mut rng)?;
        let novel = self.augmented_pool(&novel, size, &mut rng)?;
        Ok((base, novel))
    }

    /// Trains a fresh discriminator ahead of incremental task `task`.
    pub fn train_bnd(&mut self, task: usize) -> Result<()> {
        if task == 0 || task != self.next_task || task >= self.schedule.num_tasks() {
            return Err(Error::state(format!("discriminator for task {task} is out of order (next task is {})", self.next_task)));
        }
        let (base, novel) = self.bnd_training_sets(task)?;
        let seed = self.cfg.seed ^ 0xB0D0 ^ task as u64;
        let mut disc = Discriminator::new(self.cfg.encoder.dim, seed);
        let history = disc.train(&base, &novel, &self.cfg.bnd, seed)?;
        self.bnd_losses.push(history);
        self.disc = Some(disc);
        self.bnd_task = Some(task);
        Ok(())
    }

    /// Learns incremental task `task`; the discriminator must already be trained for it in full mode.
    pub fn train_incremental(&mut self, task: usize) -> Result<&Evaluation> {
        if task == 0 || task != self.next_task || task >= self.schedule.num_tasks() {
            return Err(Error::state(format!("task {task} is out of order (next task is {})", self.next_task)));
        }
        let full = self.cfg.mode == Mode::Full;
        if full && self.bnd_task != Some(task) {
            return Err(Error::state(format!("discriminator has not been trained for task {task}")));
        }
        let novel: Vec<String> = self.schedule.tasks[task].splits.iter().flat_map(|s| s.train.iter().cloned()).collect();
        let mut items = novel.clone();
        if full && self.cfg.train.replay {
            let stored: Vec<String> = self.exemplars.iter().map(|(_, id)| id.to_string()).collect();
            if !stored.is_empty() {
                items.extend((0..novel.len()).map(|i| stored[i % stored.len()].clone()));
            }
        }
        let classes = self.schedule.classes_upto(task);
        let beta = if self.cfg.tam.lc_incremental { self.cfg.beta_c } else { 0.0 };
        let weights = LossWeights { alpha_mc: self.cfg.alpha_mc, beta_c: beta };
        let history = self.fit(task, items, &classes, weights, self.cfg.train.inc_epochs)?;
        self.losses.push(history);
        if full {
            self.add_exemplars(task)?;
        }
        self.next_task = task + 1;
        self.evaluate(task)?;
        Ok(self.evaluations.last().expect("just evaluated"))
    }

    /// Scores one sample: routed in full mode once a discriminator exists,
    /// otherwise by the current network over every class seen so far.
    pub fn predict(&mut self, id: &str, upto: usize) -> Result<PredictionRecord> {
        let sample = Rc::clone(self.samples.get(id).ok_or_else(|| Error::invalid(format!("unknown sample id '{id}'")))?);
        let (predicted, routed) = match (self.cfg.mode, upto) {
            (Mode::Full, 0) => {
                let net_b = self.net_b.as_ref().ok_or_else(|| Error::state("the frozen base network does not exist yet"))?;
                let protos = self.protos(&self.schedule.base_classes())?;
                (net_b.logits(&self.frozen, &sample, &protos, &self.cfg)?.predicted().to_string(), None)
            }
            (Mode::Full, _) => {
                let feature = self.base_feature(id)?;
                let disc = self.disc.as_ref().ok_or_else(|| Error::state("no discriminator has been trained"))?;
                let score = disc.score(&feature);
                let r = route(score, self.cfg.bnd.threshold);
                let bundle = match r {
                    Route::Base => {
                        let protos = self.protos(&self.schedule.base_classes())?;
                        let net_b = self.net_b.as_ref().ok_or_else(|| Error::state("the frozen base network does not exist yet"))?;
                        net_b.logits(&self.frozen, &sample, &protos, &self.cfg)?
                    }
                    Route::Novel => {
                        let protos = self.protos(&self.novel_upto(upto))?;
                        self.net.logits(&self.frozen, &sample, &protos, &self.cfg)?
                    }
                };
                (bundle.predicted().to_string(), Some((r, score)))
            }
            (Mode::FineTune, _) => {
                let protos = self.protos(&self.schedule.classes_upto(upto))?;
                (self.net.logits(&self.frozen, &sample, &protos, &self.cfg)?.predicted().to_string(), None)
            }
        };
        Ok(PredictionRecord { id: sample.id.clone(), label: sample.label.clone(), predicted, route: routed })
    }

    /// Test ids of every class in tasks `0..=upto`.
    pub fn test_pool(&self, upto: usize) -> Result<Vec<String>> {
        if upto >= self.schedule.num_tasks() {
            return Err(Error::invalid(format!("task {upto} does not exist")));
        }
        let mut ids = Vec::new();
        for t in &self.schedule.tasks[..=upto] {
            for s in &t.splits {
                if s.test.is_empty() {
                    return Err(Error::invalid(format!("class '{}' has no test split", s.class)));
                }
                ids.extend(s.test.iter().cloned());
            }
        }
        Ok(ids)
    }

    /// Scores the cumulative test pool of tasks `0..=upto` without recording it.
    pub fn score_pool(&mut self, upto: usize) -> Result<Evaluation> {
        if upto >= self.next_task {
            return Err(Error::state(format!("task {upto} has not been trained yet")));
        }
        let ids = self.test_pool(upto)?;
        let predictions = ids.iter().map(|id| self.predict(id, upto)).collect::<Result<Vec<_>>>()?;
        Ok(Evaluation {
            task: upto,
            num_classes: self.schedule.classes_upto(upto).len(),
            acc: micro_accuracy(&predictions)?,
            predictions,
        })
    }

    /// Scores the pool and appends `Acc_upto` to the log.
    pub fn evaluate(&mut self, upto: usize) -> Result<f64> {
        let e = self.score_pool(upto)?;
        let acc = e.acc;
        self.evaluations.push(e);
        Ok(acc)
    }

    /// Trains every remaining task in order.
    pub fn run_all(&mut self) -> Result<Vec<f64>> {
        if self.next_task == 0 {
            self.train_base()?;
        }
        for t in self.next_task..self.schedule.num_tasks() {
            if self.cfg.mode == Mode::Full {
                self.train_bnd(t)?;
            }
            self.train_incremental(t)?;
        }
        Ok(self.acc())
    }

    /// Checksums of the components that must never change after base training.
    pub fn frozen_checksums(&self) -> FrozenChecksums {
        FrozenChecksums {
            net_b: self.net_b.as_ref().map(|n| n.store.checksum()),
            depth: self.frozen.depth.checksum(),
            prototypes: self.frozen.prototypes.checksum(),
        }
    }

    /// Structured text: config echo, checksums and the accuracy log.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str("# run manifest\n");
        out.push_str(&self.cfg.to_flat().to_text());
        let c = self.frozen_checksums();
        let _ = writeln!(out, "run.seed = {}", self.cfg.seed);
        let _ = writeln!(out, "run.mode = {}", self.cfg.mode);
        let _ = writeln!(out, "run.tasks_completed = {}", self.next_task);
        let _ = writeln!(out, "checksum.net = {}", self.net.store.checksum());
        let _ = writeln!(out, "checksum.net_b = {}", c.net_b.as_deref().unwrap_or("none"));
        let _ = writeln!(out, "checksum.depth_stub = {}", c.depth);
        let _ = writeln!(out, "checksum.prototypes = {}", c.prototypes);
        for e in &self.evaluations {
            let _ = writeln!(out, "acc.{} = {:.17e} # {} classes", e.task, e.acc, e.num_classes);
        }
        out
    }

    pub fn manifest_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest().as_bytes());
        hex_digest(h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenChecksums {
    pub net_b: Option<String>,
    pub depth: String,
    pub prototypes: String,
}
