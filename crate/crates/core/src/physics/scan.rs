use std::collections::HashSet;

use crate::error::{Error, Result};

/// Top-left pixel offset of one probe position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub row: usize,
    pub col: usize,
}

/// Ordered probe positions over a `height x width` image, each covering a
/// `side x side` patch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrid {
    height: usize,
    width: usize,
    side: usize,
    locations: Vec<Location>,
    /// `(N, L)` when built by [`make_scan_grid`].
    pattern: Option<(usize, usize)>,
}

impl ScanGrid {
    /// Arbitrary positions; every patch must fit and positions must be distinct.
    pub fn from_locations(height: usize, width: usize, side: usize, locations: Vec<Location>) -> Result<Self> {
        if side == 0 {
            return Err(Error::Geometry("patch side must be positive".into()));
        }
        let mut seen = HashSet::new();
        for loc in &locations {
            if loc.row + side > height || loc.col + side > width {
                return Err(Error::Geometry(format!(
                    "patch of side {side} at ({}, {}) leaves the {height}x{width} image",
                    loc.row, loc.col
                )));
            }
            if !seen.insert(*loc) {
                return Err(Error::Geometry(format!(
                    "duplicate scan location ({}, {})",
                    loc.row, loc.col
                )));
            }
        }
        Ok(Self {
            height,
            width,
            side,
            locations,
            pattern: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn location(&self, i: usize) -> Result<Location> {
        self.locations.get(i).copied().ok_or(Error::Index {
            index: i,
            len: self.locations.len(),
        })
    }

    pub fn pattern(&self) -> Option<(usize, usize)> {
        self.pattern
    }

    /// Patch centers normalized to `[0, 1]^2` as `(row, col)`.
    pub fn normalized_centers(&self) -> Vec<[f64; 2]> {
        let half = self.side as f64 / 2.0;
        self.locations
            .iter()
            .map(|l| {
                [
                    (l.row as f64 + half) / self.height as f64,
                    (l.col as f64 + half) / self.width as f64,
                ]
            })
            .collect()
    }

    /// Same grid with its positions reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut locs = Vec::with_capacity(perm.len());
        for &p in perm {
            locs.push(self.location(p)?);
        }
        let mut g = Self::from_locations(self.height, self.width, self.side, locs)?;
        g.pattern = self.pattern;
        Ok(g)
    }
}

/// A centered `sqrt(N) x sqrt(N)` raster with `spacing` pixels between
/// neighbouring positions, patch side `side`, on a square image.
pub fn make_scan_grid(image_side: usize, side: usize, n: usize, spacing: usize) -> Result<ScanGrid> {
    let per_axis = (n as f64).sqrt().round() as usize;
    if n == 0 || per_axis * per_axis != n {
        return Err(Error::Geometry(format!("N = {n} is not a positive perfect square")));
    }
    let extent = (per_axis - 1) * spacing + side;
    if extent > image_side {
        return Err(Error::Geometry(format!(
            "pattern {n}:{spacing} with patch side {side} spans {extent} px, image is {image_side} px"
        )));
    }
    let offset = (image_side - extent) / 2;
    let mut locations = Vec::with_capacity(n);
    for r in 0..per_axis {
        for c in 0..per_axis {
            locations.push(Location {
                row: offset + r * spacing,
                col: offset + c * spacing,
            });
        }
    }
    let mut g = ScanGrid::from_locations(image_side, image_side, side, locations)?;
    g.pattern = Some((n, spacing));
    Ok(g)
}
