//! Simulated test sets, in memory and on disk.
//!
//! ```text
//! <dir>/manifest.toml
//! <dir>/probe_<kind>.ptyt
//! <dir>/truth/<sample>.ptyt
//! <dir>/<kind>/<N>-<L>/scan.ptyt           scan locations, [N, 2]
//! <dir>/<kind>/<N>-<L>/<sample>/y_<i>.ptyt amplitudes, [s, s]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};
use crate::harness::config::DataConfig;
use crate::harness::tensorfile::{load_grid, load_real, save_grid, save_real};
use crate::physics::{
    detect_poisson, forward_amplitudes, make_probe, DiffractionSet, MaxScope, NoiseRecord, Probe, ProbeKind, ScanGrid,
};
use crate::tensor::RealTensor;
use crate::train::{derive_seed, gen_sample, Pattern};

pub const MANIFEST: &str = "manifest.toml";
const FORMAT: u32 = 1;
const TEST_DATA: u64 = 101;
const TEST_NOISE: u64 = 102;

/// One measured test example.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub probe_kind: ProbeKind,
    pub pattern: Pattern,
    pub sample: usize,
    pub truth: ComplexGrid,
    pub probe: Probe,
    pub grid: ScanGrid,
    pub data: DiffractionSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeEntry {
    pub kind: ProbeKind,
    pub seed: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub probe: ProbeKind,
    pub pattern: Pattern,
    pub sample: usize,
    pub truth: String,
    pub scan: String,
    /// Noise seed of the Poisson draw as 16 hex digits; absent for
    /// noise-free data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<String>,
    /// Per-pattern `I_max / r_p`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rescale: Vec<f64>,
    pub amplitude_shape: Vec<usize>,
    pub amplitudes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: u32,
    pub config_hash: String,
    pub seed: u64,
    pub image: usize,
    pub patch: usize,
    pub count: usize,
    pub peak_rate: f64,
    pub max_scope: MaxScope,
    pub probes: Vec<ProbeEntry>,
    pub cases: Vec<CaseEntry>,
}

fn pattern_dir(pattern: Pattern) -> String {
    format!("{}-{}", pattern.n, pattern.spacing)
}

/// Every `(probe, pattern, sample)` combination of the test set, probes
/// outermost. Deterministic in `(data, seed)`.
pub fn build_cases(data: &DataConfig, seed: u64) -> Result<Vec<Case>> {
    let truth_seed = derive_seed(seed, TEST_DATA);
    let truths: Vec<ComplexGrid> = (0..data.count as u64)
        .map(|i| gen_sample(data.image, truth_seed, i).map(|s| s.image))
        .collect::<Result<_>>()?;
    let noise_base = derive_seed(seed, TEST_NOISE);
    let mut cases = Vec::with_capacity(data.probes.len() * data.patterns.len() * data.count);
    for (pi, kind) in data.probes.iter().enumerate() {
        let probe = make_probe(kind.clone(), data.patch, data.probe_seed)?;
        for (gi, &pattern) in data.patterns.iter().enumerate() {
            let grid = pattern.grid(data.image, data.patch)?;
            for (sample, truth) in truths.iter().enumerate() {
                let noise_seed = derive_seed(derive_seed(derive_seed(noise_base, pi as u64), gi as u64), sample as u64);
                let amps = forward_amplitudes(truth, &probe, &grid)?;
                let measured = detect_poisson(amps, &grid, data.peak_rate, noise_seed, data.max_scope)?;
                cases.push(Case {
                    probe_kind: kind.clone(),
                    pattern,
                    sample,
                    truth: truth.clone(),
                    probe: probe.clone(),
                    grid: grid.clone(),
                    data: measured,
                });
            }
        }
    }
    Ok(cases)
}

fn locations_tensor(grid: &ScanGrid) -> Result<RealTensor> {
    let flat = grid
        .locations()
        .iter()
        .flat_map(|l| [l.row as f64, l.col as f64])
        .collect();
    RealTensor::new(&[grid.len(), 2], flat)
}

fn write(path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    f(path)
}

/// Writes `cases` (as produced by [`build_cases`]) under `dir`.
pub fn write_dataset(dir: &Path, data: &DataConfig, seed: u64, config_hash: &str, cases: &[Case]) -> Result<DatasetManifest> {
    let mut probes: Vec<ProbeEntry> = Vec::new();
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let kind = case.probe_kind.to_string();
        if !probes.iter().any(|p| p.kind == case.probe_kind) {
            let file = format!("probe_{kind}.ptyt");
            write(&dir.join(&file), |p| save_grid(p, case.probe.grid()))?;
            probes.push(ProbeEntry {
                kind: case.probe_kind.clone(),
                seed: data.probe_seed,
                file,
            });
        }
        let truth = format!("truth/{:04}.ptyt", case.sample);
        write(&dir.join(&truth), |p| save_grid(p, &case.truth))?;
        let base = format!("{kind}/{}", pattern_dir(case.pattern));
        let scan = format!("{base}/scan.ptyt");
        write(&dir.join(&scan), |p| save_real(p, &locations_tensor(&case.grid)?))?;
        let mut amplitudes = Vec::with_capacity(case.data.len());
        for (i, y) in case.data.amplitudes().iter().enumerate() {
            let file = format!("{base}/{:04}/y_{i:03}.ptyt", case.sample);
            write(&dir.join(&file), |p| save_real(p, y))?;
            amplitudes.push(file);
        }
        let (noise_seed, rescale) = match case.data.noise() {
            NoiseRecord::None => (None, Vec::new()),
            NoiseRecord::Poisson { seed, rescale, .. } => (Some(format!("{seed:016x}")), rescale.clone()),
        };
        entries.push(CaseEntry {
            probe: case.probe_kind.clone(),
            pattern: case.pattern,
            sample: case.sample,
            truth,
            scan,
            noise_seed,
            rescale,
            amplitude_shape: vec![data.patch, data.patch],
            amplitudes,
        });
    }
    let manifest = DatasetManifest {
        format: FORMAT,
        config_hash: config_hash.to_string(),
        seed,
        image: data.image,
        patch: data.patch,
        count: data.count,
        peak_rate: data.peak_rate,
        max_scope: data.max_scope,
        probes,
        cases: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST);
    write(&path, |p| fs::write(p, text).map_err(|e| Error::io(p, e)))?;
    Ok(manifest)
}

/// A dataset directory opened for reading.
pub struct Dataset {
    dir: PathBuf,
    pub manifest: DatasetManifest,
    probes: BTreeMap<String, Probe>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT {
            return Err(Error::Load(format!("dataset format {} is not supported", manifest.format)));
        }
        let mut probes = BTreeMap::new();
        for p in &manifest.probes {
            let grid = load_grid(&dir.join(&p.file))?;
            probes.insert(p.kind.to_string(), Probe::new(grid, p.kind.clone())?);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            probes,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.cases.is_empty()
    }

    pub fn case(&self, index: usize) -> Result<Case> {
        let m = &self.manifest;
        let e = m.cases.get(index).ok_or(Error::Index {
            index,
            len: m.cases.len(),
        })?;
        let probe = self
            .probes
            .get(&e.probe.to_string())
            .ok_or_else(|| Error::Load(format!("case {index} uses unlisted probe {}", e.probe)))?
            .clone();
        let grid = e.pattern.grid(m.image, m.patch)?;
        if load_real(&self.dir.join(&e.scan))? != locations_tensor(&grid)? {
            return Err(Error::Load(format!("{} does not match pattern {}", e.scan, e.pattern)));
        }
        let amps = e
            .amplitudes
            .iter()
            .map(|f| load_real(&self.dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        if amps.len() != grid.len() || amps.iter().any(|a| a.shape() != e.amplitude_shape.as_slice()) {
            return Err(Error::Load(format!("case {index}: amplitudes do not match pattern {}", e.pattern)));
        }
        let noise = match &e.noise_seed {
            None => NoiseRecord::None,
            Some(hex) => NoiseRecord::Poisson {
                peak_rate: m.peak_rate,
                seed: u64::from_str_radix(hex, 16)
                    .map_err(|_| Error::Load(format!("case {index}: bad noise seed '{hex}'")))?,
                scope: m.max_scope,
                rescale: e.rescale.clone(),
            },
        };
        let data = DiffractionSet::new(amps, grid.normalized_centers(), noise)?;
        Ok(Case {
            probe_kind: e.probe.clone(),
            pattern: e.pattern,
            sample: e.sample,
            truth: load_grid(&self.dir.join(&e.truth))?,
            probe,
            grid,
            data,
        })
    }

    pub fn cases(&self) -> Result<Vec<Case>> {
        (0..self.len()).map(|i| self.case(i)).collect()
    }
}
