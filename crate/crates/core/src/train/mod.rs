//! Synthetic data, Adam, the end-to-end training loop and checkpoints.

mod adam;
mod checkpoint;
mod data;

pub use adam::{adam_step, named_gradients, AdamState, NamedGrads};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry, MANIFEST,
};
pub use data::{derive_seed, gen_dataset, gen_sample, simulate, Pattern};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::nrmse_masked;
use crate::net::{loss, model_forward, ModelConfig, PtychoDVModel, ViTConfig};
use crate::physics::{illumination_mask, make_probe, DiffractionSet, GroundTruthSample, Probe, ProbeKind, ScanGrid};

/// Named hyperparameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small enough to train on a laptop CPU in minutes.
    Desk,
    /// The full-scale protocol: 800 px objects, 256 px probes, 60 000 samples.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }
}

/// Stream indices under the master seed.
mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const VAL_DATA: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const TRAIN_NOISE: u64 = 5;
    pub const VAL_NOISE: u64 = 6;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub train_size: usize,
    pub val_size: usize,
    pub image: usize,
    /// Sampling patterns, assigned to samples round-robin by index.
    pub patterns: Vec<Pattern>,
    pub probe: ProbeKind,
    /// Seed of the probe's phase jitter; shared with the test data.
    pub probe_seed: u64,
    /// Peak photon rate; `inf` means noise-free measurements.
    pub peak_rate: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Patch side and unroll depth live here.
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                train_size: 512,
                val_size: 16,
                image: 32,
                patterns: vec![Pattern { n: 16, spacing: 4 }, Pattern { n: 9, spacing: 8 }],
                probe: ProbeKind::A,
                probe_seed: 0,
                peak_rate: 1e5,
                lambda: 1.0,
                lr: 1e-3,
                epochs: 20,
                seed: 0,
                model: ModelConfig {
                    vit: ViTConfig {
                        dim: 32,
                        depth: 2,
                        heads: 4,
                        mlp_ratio: 2,
                        bands: 10,
                        patch: 8,
                    },
                    unroll: 2,
                    cnn_width: 32,
                    shared_refiner: true,
                    eps: 1e-12,
                },
            },
            Preset::Paper => Self {
                train_size: 60_000,
                val_size: 100,
                image: 800,
                patterns: [(256, 5), (121, 8), (64, 11), (25, 19), (16, 27)]
                    .into_iter()
                    .map(|(n, spacing)| Pattern { n, spacing })
                    .collect(),
                probe: ProbeKind::A,
                probe_seed: 0,
                peak_rate: 1e5,
                lambda: 1.0,
                lr: 1e-5,
                epochs: 30,
                seed: 0,
                model: ModelConfig {
                    vit: ViTConfig {
                        patch: 256,
                        ..ViTConfig::default()
                    },
                    unroll: 3,
                    ..ModelConfig::default()
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train_size == 0 || self.val_size == 0 {
            return Err(Error::Contract("train and validation sizes must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Contract(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.peak_rate > 0.0) {
            return Err(Error::Contract(format!("peak rate must be > 0, got {}", self.peak_rate)));
        }
        if self.patterns.is_empty() {
            return Err(Error::Contract("at least one sampling pattern is required".into()));
        }
        for p in &self.patterns {
            p.grid(self.image, self.model.vit.patch)?;
        }
        Ok(())
    }

    pub fn make_probe(&self) -> Result<Probe> {
        make_probe(self.probe.clone(), self.model.vit.patch, self.probe_seed)
    }

    fn noise(&self) -> Option<f64> {
        self.peak_rate.is_finite().then_some(self.peak_rate)
    }
}

/// One measured example.
#[derive(Clone, Debug)]
pub struct Example {
    pub truth: GroundTruthSample,
    pub grid: ScanGrid,
    pub data: DiffractionSet,
    pub noise_seed: u64,
}

/// Synthetic train or validation split with on-the-fly measurements.
pub struct Split<'a> {
    cfg: &'a TrainConfig,
    probe: &'a Probe,
    data_seed: u64,
    noise_seed: u64,
    size: usize,
}

impl<'a> Split<'a> {
    pub fn train(cfg: &'a TrainConfig, probe: &'a Probe) -> Self {
        Self {
            cfg,
            probe,
            data_seed: derive_seed(cfg.seed, stream::TRAIN_DATA),
            noise_seed: derive_seed(cfg.seed, stream::TRAIN_NOISE),
            size: cfg.train_size,
        }
    }

    pub fn validation(cfg: &'a TrainConfig, probe: &'a Probe) -> Self {
        Self {
            cfg,
            probe,
            data_seed: derive_seed(cfg.seed, stream::VAL_DATA),
            noise_seed: derive_seed(cfg.seed, stream::VAL_NOISE),
            size: cfg.val_size,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn example(&self, index: usize) -> Result<Example> {
        if index >= self.size {
            return Err(Error::Index { index, len: self.size });
        }
        let truth = gen_sample(self.cfg.image, self.data_seed, index as u64)?;
        let pattern = self.cfg.patterns[index % self.cfg.patterns.len()];
        let grid = pattern.grid(self.cfg.image, self.cfg.model.vit.patch)?;
        let noise_seed = derive_seed(self.noise_seed, index as u64);
        let data = simulate(&truth.image, self.probe, &grid, self.cfg.noise(), noise_seed)?;
        Ok(Example {
            truth,
            grid,
            data,
            noise_seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nrmse: f64,
    pub seconds: f64,
}

pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_nrmse,seconds\n");
    for r in records {
        let _ = writeln!(out, "{},{:e},{:e},{:.3}", r.epoch, r.train_loss, r.val_nrmse, r.seconds);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PtychoDVModel,
    pub log: Vec<EpochRecord>,
    /// Loss of every sample visit, in visiting order.
    pub step_losses: Vec<f64>,
}

/// Mean masked NRMSE of `model` over the validation split.
pub fn validate_model(model: &PtychoDVModel, cfg: &TrainConfig, probe: &Probe) -> Result<f64> {
    let split = Split::validation(cfg, probe);
    let mut total = 0.0;
    for i in 0..split.len() {
        let ex = split.example(i)?;
        let est = model.infer(&ex.data, probe, &ex.grid)?;
        let mask = illumination_mask(probe, &ex.grid)?;
        total += nrmse_masked(&est, &ex.truth.image, Some(&mask))?;
    }
    Ok(total / split.len() as f64)
}

fn info(cfg: &TrainConfig, epoch: usize, adam_step: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("seed".to_string(), cfg.seed.to_string()),
        ("epoch".to_string(), epoch.to_string()),
        ("adam_step".to_string(), adam_step.to_string()),
        ("lr".to_string(), format!("{:e}", cfg.lr)),
        ("lambda".to_string(), format!("{:e}", cfg.lambda)),
        ("peak_rate".to_string(), format!("{:e}", cfg.peak_rate)),
        ("probe".to_string(), cfg.probe.to_string()),
        ("probe_seed".to_string(), cfg.probe_seed.to_string()),
        (
            "patterns".to_string(),
            cfg.patterns.iter().map(Pattern::to_string).collect::<Vec<_>>().join(","),
        ),
    ])
}

/// Trains from a seeded initialization with batch size one. With `out`, the
/// checkpoint (`out/checkpoint`) and `out/train_log.csv` are rewritten after
/// every epoch. `progress` sees each finished epoch.
pub fn train(cfg: &TrainConfig, out: Option<&Path>, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let probe = cfg.make_probe()?;
    let split = Split::train(cfg, &probe);
    let mut model = PtychoDVModel::new(cfg.model.clone(), derive_seed(cfg.seed, stream::INIT))?;
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * split.len());
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, stream::SHUFFLE), epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &index in &order {
            let ex = split.example(index)?;
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let fwd = model_forward(&mut tape, &model, &bound, &ex.data, &probe, &ex.grid)?;
            let l = loss(&mut tape, fwd.image, fwd.patches, &ex.truth.image, &ex.grid, cfg.lambda)?;
            let value = tape.value(l).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    index,
                    sample_seed: ex.noise_seed,
                });
            }
            let grads = named_gradients(&bound, &tape.backward(l)?)?;
            adam_step(&mut adam, &mut model.params, &grads, cfg.lr)?;
            step_losses.push(value);
            sum += value;
        }
        if !model.params.is_finite() {
            return Err(Error::Contract(format!("a parameter became non-finite during epoch {epoch}")));
        }
        let val_nrmse = validate_model(&model, cfg, &probe)?;
        let record = EpochRecord {
            epoch,
            train_loss: sum / split.len() as f64,
            val_nrmse,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.push(record);
        if let Some(dir) = out {
            save_checkpoint(&dir.join("checkpoint"), &model, &info(cfg, epoch + 1, adam.step))?;
            let path = dir.join("train_log.csv");
            fs::write(&path, log_csv(&log)).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        step_losses,
    })
}
