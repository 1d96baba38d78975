//! Plain-text point files: a `label <name>` header, then one `x y z` line per point.

use std::fs;
use std::path::Path;

use super::{PointCloud, Point3};
use crate::error::{Error, Result};

pub fn write_xyz(pc: &PointCloud) -> String {
    let mut out = format!("label {}\n", pc.label);
    for p in &pc.points {
        // `{}` on f64 prints the shortest representation that round-trips exactly
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn save_xyz(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_xyz(pc)).map_err(|e| Error::io(path, e))
}

/// Parses file contents. Blank lines are skipped; line numbers are 1-based.
pub fn parse_xyz(text: &str, id: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let label = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, message: "missing 'label' header".into() }),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => {
                let mut parts = l.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some("label"), Some(name), None) => break name.to_string(),
                    _ => {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("expected 'label <name>', found '{l}'"),
                        })
                    }
                }
            }
        }
    };
    let mut points = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p: Point3 = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("invalid coordinate '{f}'"),
            })?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::DegenerateInput(format!("point file '{id}' has no points")));
    }
    Ok(PointCloud::new(points, label, id))
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    parse_xyz(&text, &id)
}
