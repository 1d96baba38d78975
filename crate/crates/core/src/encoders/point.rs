//! The trainable point encoder with per-layer taps.

use std::collections::BTreeSet;

use rand::Rng;

use super::block::TransformerBlock;
use super::tokenizer::{group_points, PointGroups, Tokenizer};
use super::EncoderConfig;
use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, Linear, ParamStore};
use crate::pointset::PointCloud;

/// Per-layer intervention points used by the rectification module.
pub trait LayerHook {
    /// Tokens for layer `layer` to attend to instead of its own input.
    fn source(&mut self, _tape: &mut Tape, _layer: usize) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Transform applied to the output of layer `layer` before the next one.
    fn after(&mut self, _tape: &mut Tape, _layer: usize, tokens: Var) -> Var {
        tokens
    }
}

/// The hook that changes nothing.
pub struct NoHook;

impl LayerHook for NoHook {}

/// Tape handles of one forward pass.
pub struct PointForward {
    /// Input of every layer, `F^{P_0} … F^{P_{N_l−1}}`.
    pub intermediates: Vec<Var>,
    /// Output of the last layer.
    pub last: Var,
    /// Pooled and projected feature `F^P` (`1×d`).
    pub pooled: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointFeatureSet {
    pub intermediates: Vec<Mat>,
    pub last: Mat,
    pub final_: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PointEncoder {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub blocks: Vec<TransformerBlock>,
    pub projection: Linear,
}

impl PointEncoder {
    /// Registers the encoder's parameters. Layers in `cross_layers` get
    /// extra key/value projections for attending to depth tokens.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        cross_layers: &BTreeSet<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(&l) = cross_layers.iter().next_back() {
            if l >= config.layers {
                return Err(Error::invalid(format!("cross layer {l} exceeds layer count {}", config.layers)));
            }
        }
        let tokenizer = Tokenizer::new(store, config.dim, rng);
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("point.block{i}"),
                    config.dim,
                    config.heads,
                    config.ffn_hidden,
                    cross_layers.contains(&i),
                    rng,
                )
            })
            .collect();
        let projection = Linear::new(store, "point.projection", config.dim, config.dim, rng);
        Ok(Self { config: config.clone(), tokenizer, blocks, projection })
    }

    /// Errors unless `store` holds this encoder's parameters.
    pub fn check(&self, store: &ParamStore) -> Result<()> {
        let ok = store.find("point.projection.weight") == Some(self.projection.w)
            && store.get(self.projection.w).dim() == (self.config.dim, self.config.dim);
        if ok {
            Ok(())
        } else {
            Err(Error::state("parameter store does not hold an initialized point encoder"))
        }
    }

    pub fn group(&self, pc: &PointCloud) -> Result<PointGroups> {
        group_points(pc, self.config.tokens)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        groups: &PointGroups,
        hook: &mut dyn LayerHook,
    ) -> Result<PointForward> {
        let mut x = self.tokenizer.forward(tape, p, groups);
        let mut intermediates = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            intermediates.push(x);
            let source = hook.source(tape, i)?;
            if source.is_some() && block.cross.is_none() {
                return Err(Error::state(format!("layer {i} has no cross projections")));
            }
            x = block.forward(tape, p, x, source, None).tokens;
            x = hook.after(tape, i, x);
        }
        let mean = tape.mean_rows(x);
        let normed = tape.layer_norm_rows(mean);
        let pooled = self.projection.forward(tape, p, normed);
        Ok(PointForward { intermediates, last: x, pooled })
    }

    /// Token matrix entering the first layer.
    pub fn tokenize_points(&self, store: &ParamStore, pc: &PointCloud) -> Result<Mat> {
        self.check(store)?;
        let groups = self.group(pc)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let t = self.tokenizer.forward(&mut tape, &p, &groups);
        Ok(tape.value(t).clone())
    }

    pub fn encode_points(&self, store: &ParamStore, pc: &PointCloud, hook: &mut dyn LayerHook) -> Result<PointFeatureSet> {
        self.check(store)?;
        let groups = self.group(pc)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let f = self.forward(&mut tape, &p, &groups, hook)?;
        Ok(PointFeatureSet {
            intermediates: f.intermediates.iter().map(|&v| tape.value(v).clone()).collect(),
            last: tape.value(f.last).clone(),
            final_: tape.value(f.pooled).iter().copied().collect(),
        })
    }
}
