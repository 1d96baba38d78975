//! Frozen image encoder stub: patch tokens through seeded transformer blocks.
//!
//! It encodes plain depth renderings (replicated to three channels) for the
//! rectification taps and color-enhanced renderings for zero-shot scoring.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::TransformerBlock;
use super::EncoderConfig;
use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, Linear, ParamId, ParamStore};
use crate::projection::{DepthMap, EnhancedImage};

#[derive(Clone, Debug, PartialEq)]
pub struct DepthFeatureSet {
    /// `F^{D_i}`: input of layer `i`, averaged over views.
    pub intermediates: Vec<Mat>,
    /// `F^D`: mean of the per-view finals.
    pub final_: Vec<f64>,
    /// Pooled output of every view.
    pub per_view: Vec<Vec<f64>>,
}

pub struct ImageForward {
    pub intermediates: Vec<Var>,
    /// `1×d` pooled feature.
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct DepthEncoder {
    pub config: EncoderConfig,
    pub height: usize,
    pub width: usize,
    pub store: ParamStore,
    embed: Linear,
    position: ParamId,
    blocks: Vec<TransformerBlock>,
    patch_index: Rc<Vec<usize>>,
}

impl DepthEncoder {
    /// Builds the stub for `height × width` images. Weights depend only on
    /// the config (including its seed) and the resolution.
    pub fn new(config: &EncoderConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let p = config.patch;
        if !height.is_multiple_of(p) || !width.is_multiple_of(p) || height == 0 || width == 0 {
            return Err(Error::invalid(format!("{height}x{width} images do not tile into {p}x{p} patches")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD3E7_4A11);
        let mut store = ParamStore::new();
        let tokens = (height / p) * (width / p);
        let embed = Linear::new(&mut store, "depth.embed", p * p * 3, config.dim, &mut rng);
        let position = store.add_normal("depth.position", (tokens, config.dim), 0.5, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    &mut store,
                    &format!("depth.block{i}"),
                    config.dim,
                    config.heads,
                    config.ffn_hidden,
                    false,
                    &mut rng,
                )
            })
            .collect();
        let stride = width * 3;
        let mut idx = Vec::with_capacity(tokens * p * p * 3);
        for pr in 0..height / p {
            for pc in 0..width / p {
                for dy in 0..p {
                    for dx in 0..p {
                        for ch in 0..3 {
                            idx.push((pr * p + dy) * stride + (pc * p + dx) * 3 + ch);
                        }
                    }
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            height,
            width,
            store,
            embed,
            position,
            blocks,
            patch_index: Rc::new(idx),
        })
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.config.patch) * (self.width / self.config.patch)
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.store.bind(tape, false)
    }

    /// Encodes one `H × 3W` interleaved RGB image on the tape.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, image: Var) -> ImageForward {
        let pp = self.config.patch * self.config.patch * 3;
        let patches = tape.gather(image, Rc::clone(&self.patch_index), (self.tokens(), pp));
        let centered = tape.affine(patches, 2.0, -1.0);
        let x = self.embed.forward(tape, p, centered);
        let mut x = tape.add(x, p.var(self.position));
        let mut intermediates = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            intermediates.push(x);
            x = block.forward(tape, p, x, None, None).tokens;
        }
        let normed = tape.layer_norm_rows(x);
        let pooled = tape.mean_rows(normed);
        ImageForward { intermediates, pooled }
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) == (self.height, self.width) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "image is {h}x{w} but the encoder was built for {}x{}",
                self.height, self.width
            )))
        }
    }

    /// Pooled features of enhanced images.
    pub fn encode_images(&self, images: &[EnhancedImage]) -> Result<Vec<Vec<f64>>> {
        images
            .iter()
            .map(|img| {
                self.check_size(img.height, img.width)?;
                let mut tape = Tape::new();
                let p = self.bind(&mut tape);
                let x = tape.constant(img.to_mat());
                let f = self.forward(&mut tape, &p, x);
                Ok(tape.value(f.pooled).iter().copied().collect())
            })
            .collect()
    }

    /// Encodes every view and averages the per-layer tokens across views.
    pub fn encode_depth(&self, maps: &[DepthMap]) -> Result<DepthFeatureSet> {
        let first = maps.first().ok_or_else(|| Error::invalid("at least one view is required"))?;
        if maps.iter().any(|m| (m.height, m.width) != (first.height, first.width)) {
            return Err(Error::invalid("views have mismatched resolutions"));
        }
        self.check_size(first.height, first.width)?;
        let mut sums: Vec<Mat> = Vec::new();
        let mut per_view = Vec::with_capacity(maps.len());
        for map in maps {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape);
            let x = tape.constant(EnhancedImage::from_depth(map).to_mat());
            let f = self.forward(&mut tape, &p, x);
            if sums.is_empty() {
                sums = f.intermediates.iter().map(|&v| tape.value(v).clone()).collect();
            } else {
                for (s, &v) in sums.iter_mut().zip(&f.intermediates) {
                    *s += tape.value(v);
                }
            }
            per_view.push(tape.value(f.pooled).iter().copied().collect::<Vec<f64>>());
        }
        let v = maps.len() as f64;
        let intermediates = sums.into_iter().map(|s| s / v).collect();
        let d = self.config.dim;
        let final_ = (0..d).map(|j| per_view.iter().map(|f| f[j]).sum::<f64>() / v).collect();
        Ok(DepthFeatureSet { intermediates, final_, per_view })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::{generate_shape, normalize_unit_sphere, ShapeKind};
    use crate::projection::{camera_views, render_depth};

    fn stub() -> DepthEncoder {
        let cfg = EncoderConfig { layers: 3, dim: 16, heads: 2, tokens: 8, ffn_hidden: 32, ..EncoderConfig::default() };
        DepthEncoder::new(&cfg, 32, 32).unwrap()
    }

    fn render(kind: ShapeKind, view: usize) -> DepthMap {
        let pc = normalize_unit_sphere(&generate_shape(kind, 256, 0, 0.0).unwrap()).unwrap();
        render_depth(&pc, &camera_views(4).unwrap()[view], 32, 32, 2).unwrap()
    }

    #[test]
    fn duplicate_views_average_to_single_view() {
        let enc = stub();
        let m = render(ShapeKind::Cube, 1);
        let one = enc.encode_depth(std::slice::from_ref(&m)).unwrap();
        let two = enc.encode_depth(&[m.clone(), m]).unwrap();
        assert_eq!(one.intermediates, two.intermediates);
        assert_eq!(one.final_, two.final_);
        assert_eq!(two.per_view.len(), 2);
    }

    #[test]
    fn frozen_and_deterministic() {
        let m = render(ShapeKind::Torus, 0);
        let a = stub().encode_depth(std::slice::from_ref(&m)).unwrap();
        let b = stub().encode_depth(std::slice::from_ref(&m)).unwrap();
        assert_eq!(a, b);
        assert_eq!(stub().checksum(), stub().checksum());
    }

    #[test]
    fn distinguishes_objects_from_blank_images() {
        let enc = stub();
        let m = render(ShapeKind::Cone, 0);
        let white = DepthMap::white(32, 32, m.view);
        let a = enc.encode_depth(&[m]).unwrap().final_;
        let b = enc.encode_depth(&[white]).unwrap().final_;
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) < 0.99);
    }

    #[test]
    fn rejects_mixed_resolutions() {
        let enc = stub();
        let m = render(ShapeKind::Sphere, 0);
        let other = DepthMap::white(16, 16, m.view);
        assert!(enc.encode_depth(&[m, other]).is_err());
        assert!(enc.encode_depth(&[]).is_err());
    }
}
