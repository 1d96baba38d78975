//! Renders a torus from four cameras, marks the background and fills it
//! with a color before writing PGM and PPM files.

use cmgr::pointset::{generate_shape, ShapeKind};
use cmgr::projection::{camera_views, compose_enhanced, detect_background, export_depth, export_enhanced, render_views};

fn main() -> cmgr::Result<()> {
    let pc = generate_shape(ShapeKind::Torus, 2048, 3, 0.0)?;
    let views = camera_views(4)?;
    let maps = render_views(&pc, &views, 64, 64, 3)?;
    let out = std::env::temp_dir().join("cmgr_views");
    std::fs::create_dir_all(&out).expect("create output dir");
    for (v, map) in maps.iter().enumerate() {
        let masks = detect_background(map);
        let white = masks.white.iter().filter(|&&b| b).count();
        let background = masks.background.iter().filter(|&&b| b).count();
        println!("view {v}: {white} white px, {background} of them background");
        export_depth(map, out.join(format!("view_{v}.pgm")))?;
        export_enhanced(&compose_enhanced(map, &masks, [0.9, 0.4, 0.1])?, out.join(format!("view_{v}.ppm")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
