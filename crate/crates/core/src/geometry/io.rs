//! Whitespace-separated ASCII point files.
//!
//! One point per line: `x y z`, `x y z nx ny nz` or `x y z nx ny nz label`.
//! Lines starting with `#` and blank lines are skipped. The column count is taken
//! from the first data line and must stay constant.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{normalize, PointCloud};
use crate::error::{Error, Result};

pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut columns = None;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let cols = *columns.get_or_insert(fields.len());
        if !matches!(cols, 3 | 6 | 7) {
            return Err(err(lineno, format!("expected 3, 6 or 7 columns, found {cols}")));
        }
        if fields.len() != cols {
            return Err(err(lineno, format!("expected {cols} columns, found {}", fields.len())));
        }
        let mut vals = [0.0f64; 6];
        for (v, f) in vals.iter_mut().zip(fields.iter().take(6)) {
            *v = f
                .parse()
                .map_err(|_| err(lineno, format!("invalid number {f:?}")))?;
        }
        points.push([vals[0], vals[1], vals[2]]);
        if cols >= 6 {
            // normals in files are re-normalized so small print rounding is tolerated
            normals.push(normalize(&[vals[3], vals[4], vals[5]]));
        }
        if cols == 7 {
            let label: u8 = fields[6]
                .parse()
                .map_err(|_| err(lineno, format!("invalid label {:?}", fields[6])))?;
            labels.push(label);
        }
    }
    let cols = columns.unwrap_or(3);
    PointCloud::from_parts(
        points,
        (cols >= 6).then_some(normals),
        (cols == 7).then_some(labels),
    )
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_cloud(&text, path)
}

/// Serializes with shortest round-trip float formatting, so loading returns
/// bitwise-identical coordinates.
pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    let normals = cloud.normals();
    let labels = cloud.labels();
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        match (normals, labels) {
            (Some(n), lab) => {
                let n = n[i];
                let _ = write!(out, " {} {} {}", n[0], n[1], n[2]);
                if let Some(l) = lab {
                    let _ = write!(out, " {}", l[i]);
                }
            }
            (None, Some(l)) => {
                // the format has no label-only layout; emit a placeholder normal
                let _ = write!(out, " 0 0 1 {}", l[i]);
            }
            (None, None) => {}
        }
        out.push('\n');
    }
    out
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, format_cloud(cloud))?;
    Ok(())
}

/// All `*.xyz` / `*.txt` / `*.pts` files in `dir`, sorted by name.
pub fn list_cloud_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("xyz") | Some("txt") | Some("pts")
                )
        })
        .collect();
    files.sort();
    Ok(files)
}
