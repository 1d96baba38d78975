//! Encodes one cloud with the rectified point encoder, synthesizes its
//! background color and scores it against the class prototypes.

use cmgr::pointset::{generate_shape, ShapeKind};
use cmgr::tam::synth_color;
use cmgr::trainer::{prepare, ExperimentConfig, Frozen, Net};

fn main() -> cmgr::Result<()> {
    let cfg = ExperimentConfig::desk(0);
    let frozen = Frozen::new(&cfg)?;
    let net = Net::new(&cfg, cfg.seed)?;
    let mut pc = generate_shape(ShapeKind::Cone, cfg.data.points, 11, cfg.data.jitter)?;
    pc.label = "cone".into();

    let sample = prepare(&pc, &net.encoder, &frozen, &cfg)?;
    println!("{} views, depth features from {} layers", sample.views.len(), sample.depth_layers.len());

    let fp = net.point_feature(&sample, &cfg)?;
    let norm = fp.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("F^P: dim {}, norm {norm:.3}", fp.len());
    println!("background color {:.3?}", synth_color(&net.store, &net.color, &fp)?);

    let classes = frozen.prototypes.subset(&cfg.data.base)?;
    let logits = net.logits(&frozen, &sample, &classes, &cfg)?;
    println!("untrained prediction: {}", logits.predicted());
    Ok(())
}
