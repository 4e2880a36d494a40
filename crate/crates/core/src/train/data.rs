use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};
use crate::fft::ifft2;
use crate::physics::{
    detect_poisson, forward_amplitudes, make_scan_grid, DiffractionSet, GroundTruthSample, MaxScope, Probe, ScanGrid,
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A raster sampling pattern `N:L`: `N` positions with spacing `L` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    pub n: usize,
    pub spacing: usize,
}

impl Pattern {
    pub fn grid(&self, image: usize, side: usize) -> Result<ScanGrid> {
        make_scan_grid(image, side, self.n, self.spacing)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.spacing)
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("pattern '{s}' is not of the form N:L"));
        let (n, l) = s.split_once(':').ok_or_else(bad)?;
        Ok(Pattern {
            n: n.trim().parse().map_err(|_| bad())?,
            spacing: l.trim().parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Smooth real field: white Gaussian spectrum under a Gaussian low-pass.
fn low_pass_field(side: usize, rng: &mut ChaCha8Rng) -> Result<ComplexGrid> {
    let cutoff = (side as f64 / 10.0).max(1.0);
    let freq = |i: usize| if i < side / 2 { i as f64 } else { i as f64 - side as f64 };
    let spectrum = ComplexGrid::from_fn(side, side, |r, c| {
        let k2 = freq(r).powi(2) + freq(c).powi(2);
        let w = (-k2 / (cutoff * cutoff)).exp();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im) * w
    });
    ifft2(&spectrum)
}

fn rescale(values: impl Iterator<Item = f64> + Clone, lo: f64, hi: f64) -> Vec<f64> {
    let (min, max) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = max - min;
    values
        .map(|v| if span > 0.0 { lo + (hi - lo) * (v - min) / span } else { 0.5 * (lo + hi) })
        .collect()
}

/// One synthetic object: magnitude in `[0.5, 1]`, phase in `[-pi/2, pi/2]`,
/// both smooth. Determined by `(seed, index)` alone.
pub fn gen_sample(side: usize, seed: u64, index: u64) -> Result<GroundTruthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let field = low_pass_field(side, &mut rng)?;
    let mag = rescale(field.data().iter().map(|z| z.re), 0.5, 1.0);
    let phase = rescale(field.data().iter().map(|z| z.im), -FRAC_PI_2, FRAC_PI_2);
    let data = mag.iter().zip(&phase).map(|(&m, &p)| Complex64::from_polar(m, p)).collect();
    Ok(GroundTruthSample {
        image: ComplexGrid::new(side, side, data)?,
        seed,
        index,
    })
}

pub fn gen_dataset(count: usize, side: usize, seed: u64) -> Result<Vec<GroundTruthSample>> {
    if count == 0 {
        return Err(Error::Contract("dataset size must be >= 1".into()));
    }
    (0..count as u64).map(|i| gen_sample(side, seed, i)).collect()
}

/// Noise-free amplitudes, or Poisson detection at `peak_rate` photons.
pub fn simulate(
    image: &ComplexGrid,
    probe: &Probe,
    grid: &ScanGrid,
    peak_rate: Option<f64>,
    seed: u64,
) -> Result<DiffractionSet> {
    let amplitudes = forward_amplitudes(image, probe, grid)?;
    match peak_rate {
        None => DiffractionSet::noise_free(amplitudes, grid),
        Some(r) => detect_poisson(amplitudes, grid, r, seed, MaxScope::Global),
    }
}
