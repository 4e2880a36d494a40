use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{dim_err, Error, Result};
use crate::tensor::RealTensor;

use super::scan::ScanGrid;

/// Scope of the intensity maximum used to normalize Poisson means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxScope {
    /// One maximum over every pattern of the sample.
    #[default]
    Global,
    PerPattern,
}

/// How a [`DiffractionSet`] was detected.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseRecord {
    None,
    Poisson {
        peak_rate: f64,
        seed: u64,
        scope: MaxScope,
        /// `I_max / r_p` per pattern: counts times this give intensities.
        rescale: Vec<f64>,
    },
}

/// Measured amplitudes `y_i` with normalized scan centers.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffractionSet {
    amplitudes: Vec<RealTensor>,
    coords: Vec<[f64; 2]>,
    noise: NoiseRecord,
}

impl DiffractionSet {
    pub fn new(amplitudes: Vec<RealTensor>, coords: Vec<[f64; 2]>, noise: NoiseRecord) -> Result<Self> {
        if amplitudes.len() != coords.len() {
            return Err(dim_err!("{} patterns but {} coordinates", amplitudes.len(), coords.len()));
        }
        if let Some(first) = amplitudes.first() {
            for y in &amplitudes {
                y.same_shape(first)?;
                if y.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Contract("amplitudes must be finite and nonnegative".into()));
                }
            }
        }
        if coords.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("scan coordinates must lie in [0, 1]".into()));
        }
        Ok(Self {
            amplitudes,
            coords,
            noise,
        })
    }

    pub fn noise_free(amplitudes: Vec<RealTensor>, grid: &ScanGrid) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(dim_err!("{} patterns for {} scan positions", amplitudes.len(), grid.len()));
        }
        Self::new(amplitudes, grid.normalized_centers(), NoiseRecord::None)
    }

    pub fn amplitudes(&self) -> &[RealTensor] {
        &self.amplitudes
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn noise(&self) -> &NoiseRecord {
        &self.noise
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Same patterns in the order `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut amps = Vec::with_capacity(perm.len());
        let mut coords = Vec::with_capacity(perm.len());
        for &p in perm {
            amps.push(self.amplitudes.get(p).cloned().ok_or(Error::Index { index: p, len: self.len() })?);
            coords.push(self.coords[p]);
        }
        Self::new(amps, coords, self.noise.clone())
    }
}

/// Poisson detector: counts `k ~ Pois(I * r_p / I_max)` per pixel, stored
/// back in amplitude units as `sqrt(k * I_max / r_p)`.
///
/// `peak_rate = f64::INFINITY` means noise-free detection.
pub fn detect_poisson(
    amplitudes: Vec<RealTensor>,
    grid: &ScanGrid,
    peak_rate: f64,
    seed: u64,
    scope: MaxScope,
) -> Result<DiffractionSet> {
    if peak_rate.is_nan() || peak_rate <= 0.0 {
        return Err(Error::Contract(format!("peak photon rate must be > 0, got {peak_rate}")));
    }
    if peak_rate.is_infinite() {
        return DiffractionSet::noise_free(amplitudes, grid);
    }
    if amplitudes.len() != grid.len() {
        return Err(dim_err!("{} patterns for {} scan positions", amplitudes.len(), grid.len()));
    }
    let pattern_max: Vec<f64> = amplitudes
        .iter()
        .map(|y| y.data().iter().fold(0.0f64, |m, a| m.max(a * a)))
        .collect();
    let global_max = pattern_max.iter().cloned().fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rescale = Vec::with_capacity(amplitudes.len());
    let mut detected = Vec::with_capacity(amplitudes.len());
    for (y, &local_max) in amplitudes.iter().zip(&pattern_max) {
        let i_max = match scope {
            MaxScope::Global => global_max,
            MaxScope::PerPattern => local_max,
        };
        let factor = i_max / peak_rate;
        rescale.push(factor);
        let mut out = y.clone();
        for a in out.data_mut() {
            let intensity = *a * *a;
            let mean = if i_max > 0.0 { intensity * peak_rate / i_max } else { 0.0 };
            let counts = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Contract(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            *a = (counts * factor).sqrt();
        }
        detected.push(out);
    }
    DiffractionSet::new(
        detected,
        grid.normalized_centers(),
        NoiseRecord::Poisson {
            peak_rate,
            seed,
            scope,
            rescale,
        },
    )
}
