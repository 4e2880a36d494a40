//! 16-bit binary PGM maps with a TOML sidecar recording the value scale.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};

const MAX: f64 = 65535.0;

/// Maps gray level 0 to `min` and 65535 to `max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmScale {
    pub quantity: String,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

fn quantize(v: f64, min: f64, max: f64) -> u16 {
    if max > min {
        (((v - min) / (max - min)).clamp(0.0, 1.0) * MAX).round() as u16
    } else {
        0
    }
}

/// Writes `values` (row-major) as a 16-bit PGM plus its scale sidecar.
pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize, min: f64, max: f64, quantity: &str) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!("{} values for a {width}x{height} map", values.len())));
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values {
        bytes.extend_from_slice(&quantize(v, min, max).to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let scale = PgmScale {
        quantity: quantity.to_string(),
        width,
        height,
        min,
        max,
    };
    let text = toml::to_string(&scale).map_err(|e| Error::Config(e.to_string()))?;
    let side = sidecar(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

/// Raw gray levels of a 16-bit binary PGM.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Load(format!("{}: {m}", path.display()));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 65535 {
        return Err(bad("only 16-bit maps are supported"));
    }
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * w * h {
        return Err(bad("payload size does not match the header"));
    }
    Ok((w, h, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

/// Values of a map written by [`write_pgm`], rescaled through its sidecar.
pub fn read_map(path: &Path) -> Result<(PgmScale, Vec<f64>)> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let scale: PgmScale = toml::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", side.display())))?;
    let (w, h, levels) = read_pgm(path)?;
    if (w, h) != (scale.width, scale.height) {
        return Err(Error::Load(format!("{} disagrees with its sidecar", path.display())));
    }
    let values = levels
        .iter()
        .map(|&l| scale.min + (scale.max - scale.min) * l as f64 / MAX)
        .collect();
    Ok((scale, values))
}

/// `<stem>_magnitude.pgm` (min-max scaled) and `<stem>_phase.pgm` (`[-pi, pi]`).
pub fn export_image(grid: &ComplexGrid, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = grid.dims();
    let mag: Vec<f64> = grid.data().iter().map(|z| z.norm()).collect();
    let (lo, hi) = mag
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let phase: Vec<f64> = grid.data().iter().map(|z| z.arg()).collect();
    let mpath = dir.join(format!("{stem}_magnitude.pgm"));
    let ppath = dir.join(format!("{stem}_phase.pgm"));
    write_pgm(&mpath, &mag, w, h, lo, hi, "magnitude")?;
    write_pgm(&ppath, &phase, w, h, -PI, PI, "phase")?;
    Ok([mpath, ppath])
}
