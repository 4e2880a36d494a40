use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ProbeKind {
    /// Hard-edged circular aperture with a quadratic phase.
    A,
    /// Annular aperture with a linear plus quadratic phase.
    B,
    Custom(String),
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeKind::A => f.write_str("A"),
            ProbeKind::B => f.write_str("B"),
            ProbeKind::Custom(s) => f.write_str(s),
        }
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "A" | "a" => ProbeKind::A,
            "B" | "b" => ProbeKind::B,
            other => ProbeKind::Custom(other.to_string()),
        })
    }
}

/// Known complex illumination applied elementwise to each patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    grid: ComplexGrid,
    kind: ProbeKind,
}

impl Probe {
    pub fn new(grid: ComplexGrid, kind: ProbeKind) -> Result<Self> {
        if grid.height() != grid.width() {
            return Err(Error::Dimension(format!("probe must be square, got {:?}", grid.dims())));
        }
        if !grid.is_finite() || !(grid.max_abs2_reduce() > 0.0) {
            return Err(Error::Contract("probe must be finite and not identically zero".into()));
        }
        Ok(Self { grid, kind })
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    pub fn side(&self) -> usize {
        self.grid.height()
    }

    pub fn kind(&self) -> &ProbeKind {
        &self.kind
    }

    /// `|P|^kappa` as a `[s, s]` plane.
    pub fn magnitude_pow(&self, kappa: f64) -> crate::RealTensor {
        self.grid.magnitude().map(|m| {
            if kappa == 0.0 {
                1.0
            } else {
                m.powf(kappa)
            }
        })
    }
}

/// Raised-cosine edge: 1 well inside `[inner, outer]`, 0 outside.
fn band(r: f64, inner: f64, outer: f64, taper: f64) -> f64 {
    let ramp = |d: f64| {
        if d <= 0.0 {
            0.0
        } else if d >= taper {
            1.0
        } else {
            (FRAC_PI_2 * d / taper).sin().powi(2)
        }
    };
    if r >= outer || r < inner {
        return 0.0;
    }
    let inner_edge = if inner > 0.0 { ramp(r - inner) } else { 1.0 };
    inner_edge * ramp(outer - r)
}

/// Deterministic synthetic probe of side `s`. `seed` jitters the phase
/// coefficients by up to 10%.
pub fn make_probe(kind: ProbeKind, s: usize, seed: u64) -> Result<Probe> {
    if s < 4 {
        return Err(Error::Contract(format!("probe side must be >= 4, got {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || 1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0);
    let sf = s as f64;
    let center = (sf - 1.0) / 2.0;
    let grid = match &kind {
        ProbeKind::A => {
            let radius = 0.35 * sf;
            let quad = 0.5 * PI * jitter();
            ComplexGrid::from_fn(s, s, |r, c| {
                let (dy, dx) = (r as f64 - center, c as f64 - center);
                let rho = (dx * dx + dy * dy).sqrt();
                let mag = if rho < radius { 1.0 } else { 0.0 };
                Complex64::from_polar(mag, quad * (rho / radius).powi(2))
            })
        }
        ProbeKind::B => {
            let (inner, outer) = (0.15 * sf, 0.4 * sf);
            let (lin, quad) = (0.75 * PI * jitter(), 1.25 * PI * jitter());
            ComplexGrid::from_fn(s, s, |r, c| {
                let (dy, dx) = (r as f64 - center, c as f64 - center);
                let rho = (dx * dx + dy * dy).sqrt();
                let mag = band(rho, inner, outer, 0.25 * (outer - inner));
                let phase = lin * (dx + 0.5 * dy) / outer + quad * (rho / outer).powi(2);
                Complex64::from_polar(mag, phase)
            })
        }
        ProbeKind::Custom(name) => {
            return Err(Error::Contract(format!(
                "custom probe '{name}' must be built with Probe::new"
            )))
        }
    };
    Probe::new(grid, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_a_vanishes_outside_aperture() {
        for s in [8, 16, 33] {
            let p = make_probe(ProbeKind::A, s, 0).unwrap();
            let center = (s as f64 - 1.0) / 2.0;
            for r in 0..s {
                for c in 0..s {
                    let rho = ((r as f64 - center).powi(2) + (c as f64 - center).powi(2)).sqrt();
                    if rho >= 0.35 * s as f64 {
                        assert_eq!(p.grid().get(r, c).norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn probes_a_and_b_differ() {
        for s in [8, 16, 64] {
            let a = make_probe(ProbeKind::A, s, 1).unwrap();
            let b = make_probe(ProbeKind::B, s, 1).unwrap();
            let rel = a.grid().sub(b.grid()).unwrap().norm() / a.grid().norm();
            assert!(rel > 0.5, "s={s}: {rel}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = make_probe(ProbeKind::B, 16, 9).unwrap();
        let b = make_probe(ProbeKind::B, 16, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_probe(ProbeKind::B, 16, 10).unwrap());
    }

    #[test]
    fn too_small_rejected() {
        assert!(make_probe(ProbeKind::A, 3, 0).is_err());
        assert!(Probe::new(ComplexGrid::zeros(4, 4), ProbeKind::A).is_err());
    }
}
