use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::{MaxScope, ProbeKind};
use crate::solvers::{Algorithm, SolverConfig};
use crate::train::{Pattern, Preset, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Simulate,
    Reconstruct,
    Train,
    Evaluate,
    InitializerStudy,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Simulate => "simulate",
            Scenario::Reconstruct => "reconstruct",
            Scenario::Train => "train",
            Scenario::Evaluate => "evaluate",
            Scenario::InitializerStudy => "initializer-study",
        })
    }
}

/// A reconstruction method as named in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "wf")]
    Wf,
    #[serde(rename = "awf")]
    Awf,
    #[serde(rename = "pmace")]
    Pmace,
    /// Stitched transformer output without unrolling.
    #[serde(rename = "vit")]
    Vit,
    #[serde(rename = "ptychodv")]
    PtychoDV,
    /// PMACE warm-started from the network output.
    #[serde(rename = "ptychodv+pmace")]
    PtychoDVPmace,
}

impl Method {
    pub fn needs_model(self) -> bool {
        matches!(self, Method::Vit | Method::PtychoDV | Method::PtychoDVPmace)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Wf => "wf",
            Method::Awf => "awf",
            Method::Pmace => "pmace",
            Method::Vit => "vit",
            Method::PtychoDV => "ptychodv",
            Method::PtychoDVPmace => "ptychodv+pmace",
        }
    }

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Method::Wf => Some(Algorithm::Wf),
            Method::Awf => Some(Algorithm::Awf),
            Method::Pmace | Method::PtychoDVPmace => Some(Algorithm::Pmace),
            Method::Vit | Method::PtychoDV => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The simulated test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; `<out>/data` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub image: usize,
    pub patch: usize,
    /// Ground-truth objects; each is measured under every probe and pattern.
    pub count: usize,
    pub patterns: Vec<Pattern>,
    pub probes: Vec<ProbeKind>,
    pub probe_seed: u64,
    /// Peak photon rate; `inf` means noise-free.
    pub peak_rate: f64,
    pub max_scope: MaxScope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// PMACE iterations for both initializations.
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Sample index reconstructed for every probe and pattern.
    pub sample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out: PathBuf,
    /// Trained model directory; `<out>/train/checkpoint` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    /// Iteration count and parameters shared by WF, AWF and PMACE.
    pub solver: SolverConfig,
    pub reconstruct: ReconstructConfig,
    pub study: StudyConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, scenario: Scenario) -> Self {
        let train = TrainConfig::preset(preset);
        let mut solver = SolverConfig::new(Algorithm::Pmace, 100);
        solver.trace = false;
        let data = match preset {
            Preset::Desk => DataConfig {
                dir: None,
                image: 32,
                patch: 8,
                count: 16,
                patterns: train.patterns.clone(),
                probes: vec![ProbeKind::A, ProbeKind::B],
                probe_seed: train.probe_seed,
                peak_rate: 1e5,
                max_scope: MaxScope::Global,
            },
            Preset::Paper => DataConfig {
                dir: None,
                image: 800,
                patch: 256,
                count: 100,
                patterns: train.patterns.clone(),
                probes: vec![ProbeKind::A, ProbeKind::B],
                probe_seed: train.probe_seed,
                peak_rate: 1e5,
                max_scope: MaxScope::Global,
            },
        };
        Self {
            scenario,
            seed: 0,
            out: PathBuf::from(match preset {
                Preset::Desk => "runs/desk",
                Preset::Paper => "runs/paper",
            }),
            checkpoint: None,
            methods: vec![
                Method::Wf,
                Method::Awf,
                Method::Pmace,
                Method::Vit,
                Method::PtychoDV,
                Method::PtychoDVPmace,
            ],
            data,
            solver,
            reconstruct: ReconstructConfig { sample: 0 },
            study: StudyConfig { iterations: 10 },
            train,
        }
    }

    /// Parses a TOML file layered over `preset`. Keys absent from the file
    /// keep their preset values; unknown keys are rejected by name.
    pub fn from_toml(text: &str, preset: Preset, scenario: Scenario) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let base = toml::Table::try_from(Self::preset(preset, scenario)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, overlay);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.scenario != scenario {
            return Err(Error::Config(format!(
                "config is for scenario '{}', not '{}'",
                cfg.scenario, scenario
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset, scenario: Scenario) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text, preset, scenario)?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Explicitly configured input paths must exist.
    pub fn check_paths(&self) -> Result<()> {
        let mut inputs: Vec<&Path> = Vec::new();
        if self.scenario != Scenario::Simulate {
            inputs.extend(self.data.dir.as_deref());
        }
        if self.scenario != Scenario::Train {
            inputs.extend(self.checkpoint.as_deref());
        }
        match inputs.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("referenced path {} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.count == 0 || d.patterns.is_empty() || d.probes.is_empty() {
            return Err(Error::Contract("data needs at least one sample, pattern and probe".into()));
        }
        if !(d.peak_rate > 0.0) {
            return Err(Error::Contract(format!("peak rate must be > 0, got {}", d.peak_rate)));
        }
        for p in &d.patterns {
            p.grid(d.image, d.patch)?;
        }
        Ok(())
    }

    /// Sets the master seed for data and training alike.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("train").join("checkpoint"))
    }
}

fn merge(mut base: toml::Table, overlay: toml::Table) -> toml::Table {
    for (k, v) in overlay {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for preset in [Preset::Desk, Preset::Paper] {
            let c = ExperimentConfig::preset(preset, Scenario::Evaluate);
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap(), Preset::Desk, Scenario::Evaluate).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn overlay_keeps_unset_values() {
        let c = ExperimentConfig::from_toml(
            "seed = 5\n[solver]\niterations = 7\n[train.model.vit]\ndepth = 1\n",
            Preset::Desk,
            Scenario::Train,
        )
        .unwrap();
        let base = ExperimentConfig::preset(Preset::Desk, Scenario::Train);
        assert_eq!((c.seed, c.solver.iterations, c.train.model.vit.depth), (5, 7, 1));
        assert_eq!(c.solver.rho, base.solver.rho);
        assert_eq!(c.train.model.vit.dim, base.train.model.vit.dim);
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in ["bogus_key = 1", "[solver]\nbogus_key = 1", "[train.model]\nbogus_key = 1"] {
            let err = ExperimentConfig::from_toml(text, Preset::Desk, Scenario::Train).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
            assert!(err.to_string().contains("bogus_key"), "{err}");
        }
    }

    #[test]
    fn scenario_mismatch_and_missing_paths() {
        assert!(ExperimentConfig::from_toml("scenario = \"train\"", Preset::Desk, Scenario::Evaluate).is_err());
        let mut c = ExperimentConfig::preset(Preset::Desk, Scenario::Evaluate);
        c.checkpoint = Some(PathBuf::from("/definitely/not/here"));
        assert!(matches!(c.check_paths(), Err(Error::Config(_))));
        c.scenario = Scenario::Train;
        c.check_paths().unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset(Preset::Desk, Scenario::Evaluate);
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        assert_ne!(a.hash().unwrap(), a.with_seed(1).hash().unwrap());
    }

    #[test]
    fn method_names() {
        #[derive(Deserialize)]
        struct M {
            m: Vec<Method>,
        }
        let m: M = toml::from_str("m = [\"ptychodv+pmace\", \"vit\"]").unwrap();
        assert_eq!(m.m, [Method::PtychoDVPmace, Method::Vit]);
        assert_eq!(Method::PtychoDVPmace.to_string(), "ptychodv+pmace");
    }
}
