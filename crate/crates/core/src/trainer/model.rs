//! The trainable network, the frozen components and per-sample caches.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::autograd::{Mat, Tape, Var};
use crate::encoders::{text_prototypes, zero_shot_var, DepthEncoder, PointEncoder, PointGroups, PrototypeMatrix};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::pointset::PointCloud;
use crate::projection::{camera_views, detect_background, render_views, BackgroundMasks, DepthMap, EnhanceBasis};
use crate::sagr::{mc_loss_var, CrossViewAggregator, DepthSource, RectifyHead};
use crate::tam::{alignment_loss_var, ColorGenerator, LogitsBundle};

/// Components that never change after construction.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub depth: DepthEncoder,
    /// One row per class of the whole schedule.
    pub prototypes: PrototypeMatrix,
}

impl Frozen {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let depth = DepthEncoder::new(&cfg.encoder, cfg.render.size, cfg.render.size)?;
        let prototypes = text_prototypes(&cfg.class_order(), cfg.encoder.seed, cfg.encoder.dim)?;
        Ok(Self { depth, prototypes })
    }
}

/// Everything about one sample that does not depend on trainable weights.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub label: String,
    pub groups: PointGroups,
    pub views: Rc<Vec<(DepthMap, BackgroundMasks)>>,
    /// `F^{D_i}` for every layer.
    pub depth_layers: Rc<Vec<Rc<Mat>>>,
    /// `F^D` as a `1×d` row.
    pub depth_final: Rc<Mat>,
}

pub fn prepare(pc: &PointCloud, encoder: &PointEncoder, frozen: &Frozen, cfg: &ExperimentConfig) -> Result<Prepared> {
    let groups = encoder.group(pc)?;
    let cams = camera_views(cfg.render.views)?;
    let maps = render_views(pc, &cams, cfg.render.size, cfg.render.size, cfg.render.splat)?;
    let feats = frozen.depth.encode_depth(&maps)?;
    let views = maps.into_iter().map(|m| {
        let masks = detect_background(&m);
        (m, masks)
    });
    let d = feats.final_.len();
    Ok(Prepared {
        id: pc.id.clone(),
        label: pc.label.clone(),
        groups,
        views: Rc::new(views.collect()),
        depth_layers: Rc::new(feats.intermediates.into_iter().map(Rc::new).collect()),
        depth_final: Rc::new(Mat::from_shape_vec((1, d), feats.final_).expect("row")),
    })
}

/// The network that learns: point encoder, rectification head, cross-view
/// aggregation and color generator, all in one parameter store.
#[derive(Clone, Debug)]
pub struct Net {
    pub store: ParamStore,
    pub encoder: PointEncoder,
    pub head: RectifyHead,
    pub aggregator: CrossViewAggregator,
    pub color: ColorGenerator,
}

impl Net {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = &cfg.encoder;
        let encoder = PointEncoder::new(&mut store, e, &cfg.sagr.layers, &mut rng)?;
        let head = RectifyHead::new(&mut store, cfg.sagr.n_sa, e.dim, e.heads, e.ffn_hidden, &mut rng);
        let aggregator = CrossViewAggregator::new(&mut store, e.dim, cfg.sagr.w_init, cfg.sagr.lambda_init, &mut rng);
        let hidden = ((e.dim as f64 * cfg.tam.hidden_ratio).round() as usize).max(1);
        let color = ColorGenerator::new(&mut store, e.dim, hidden, &mut rng);
        Ok(Self { store, encoder, head, aggregator, color })
    }
}

/// Tape handles of one sample's forward pass.
pub struct SampleForward {
    /// `1×C` logits over the requested classes.
    pub logits: Var,
    pub geometric: Var,
    pub visual: Option<Var>,
    /// `F^P`.
    pub point: Var,
    pub unmasked: Var,
    pub masked: Option<Var>,
    /// `V×d` features of the color-enhanced views, when the visual term is on.
    pub views: Option<Var>,
    pub color: Option<Var>,
}

/// Which loss terms to build.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub alpha_mc: f64,
    pub beta_c: f64,
}

impl Net {
    /// Full forward pass of one sample. `protos` is the `C×d` prototype
    /// constant of the classes to score.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        frozen: &Frozen,
        fz: &Binding,
        sample: &Prepared,
        protos: Var,
        cfg: &ExperimentConfig,
    ) -> Result<SampleForward> {
        let depth: Vec<Var> = sample.depth_layers.iter().map(|m| tape.leaf_rc(Rc::clone(m), false)).collect();
        let mut hook = DepthSource { layers: &cfg.sagr.layers, depth: Some(&depth) };
        let f = self.encoder.forward(tape, p, &sample.groups, &mut hook)?;
        let head = self.head.forward(tape, p, f.last, &cfg.sagr);
        let fd = tape.leaf_rc(Rc::clone(&sample.depth_final), false);
        let fhat = self.aggregator.forward(tape, p, f.pooled, head.unmasked, fd);
        let geometric = tape.matmul_t(fhat, protos);
        let mut logits = geometric;
        let (mut views, mut color, mut visual) = (None, None, None);
        if cfg.tam.visual {
            let c = self.color.forward(tape, p, f.pooled);
            let mut feats = Vec::with_capacity(sample.views.len());
            for (map, masks) in sample.views.iter() {
                let basis = EnhanceBasis::new(map, masks)?;
                let img = basis.compose(tape, c);
                feats.push(frozen.depth.forward(tape, fz, img).pooled);
            }
            let v = tape.concat_rows(&feats);
            let vis = zero_shot_var(tape, v, protos, cfg.tam.temperature);
            logits = tape.add(logits, vis);
            views = Some(v);
            color = Some(c);
            visual = Some(vis);
        }
        Ok(SampleForward { logits, geometric, visual, point: f.pooled, unmasked: head.unmasked, masked: head.masked, views, color })
    }

    /// Batch loss `L_ce + α·L_mc + β·L_c`. `targets` index into `classes`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &Binding,
        frozen: &Frozen,
        batch: &[&Prepared],
        classes: &PrototypeMatrix,
        weights: LossWeights,
        cfg: &ExperimentConfig,
    ) -> Result<Var> {
        let fz = frozen.depth.bind(tape);
        let protos = tape.constant(classes.rows.clone());
        let mut logits = Vec::with_capacity(batch.len());
        let mut unmasked = Vec::with_capacity(batch.len());
        let mut masked = Vec::with_capacity(batch.len());
        let mut align = Vec::new();
        let mut targets = Vec::with_capacity(batch.len());
        for s in batch {
            let t = classes
                .index_of(&s.label)
                .ok_or_else(|| Error::invalid(format!("class '{}' is not active", s.label)))?;
            targets.push(t);
            let out = self.forward(tape, p, frozen, &fz, s, protos, cfg)?;
            logits.push(out.logits);
            unmasked.push(out.unmasked);
            if let Some(m) = out.masked {
                masked.push(m);
            }
            if let (Some(v), true) = (out.views, weights.beta_c != 0.0) {
                let proto = tape.slice_rows(protos, t, 1);
                align.push(alignment_loss_var(tape, v, proto));
            }
        }
        let all = tape.concat_rows(&logits);
        let mut loss = tape.cross_entropy(all, &targets);
        if weights.alpha_mc != 0.0 && masked.len() == batch.len() {
            let u = tape.concat_rows(&unmasked);
            let mu = tape.concat_rows(&masked);
            let mc = mc_loss_var(tape, u, mu);
            let mc = tape.scale(mc, weights.alpha_mc);
            loss = tape.add(loss, mc);
        }
        if !align.is_empty() {
            let a = tape.concat_rows(&align);
            let a = tape.mean(a);
            let a = tape.scale(a, weights.beta_c);
            loss = tape.add(loss, a);
        }
        Ok(loss)
    }

    /// `F^P` of a sample, without gradients.
    pub fn point_feature(&self, sample: &Prepared, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let depth: Vec<Var> = sample.depth_layers.iter().map(|m| tape.leaf_rc(Rc::clone(m), false)).collect();
        let mut hook = DepthSource { layers: &cfg.sagr.layers, depth: Some(&depth) };
        let f = self.encoder.forward(&mut tape, &p, &sample.groups, &mut hook)?;
        Ok(tape.value(f.pooled).iter().copied().collect())
    }

    /// Logits of a sample over `classes`, without gradients.
    pub fn logits(
        &self,
        frozen: &Frozen,
        sample: &Prepared,
        classes: &PrototypeMatrix,
        cfg: &ExperimentConfig,
    ) -> Result<LogitsBundle> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let fz = frozen.depth.bind(&mut tape);
        let protos = tape.constant(classes.rows.clone());
        let out = self.forward(&mut tape, &p, frozen, &fz, sample, protos, cfg)?;
        let geometric: Vec<f64> = tape.value(out.geometric).iter().copied().collect();
        let visual = match out.visual {
            Some(v) => tape.value(v).iter().copied().collect(),
            None => vec![0.0; geometric.len()],
        };
        LogitsBundle::new(geometric, visual, classes.names.clone())
    }
}
