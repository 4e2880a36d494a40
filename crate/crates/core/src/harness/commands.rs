//! The experiment runners behind each CLI subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::complex::ComplexGrid;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method, Scenario};
use crate::harness::dataset::{build_cases, write_dataset, Case, Dataset, DatasetManifest};
use crate::harness::pgm::export_image;
use crate::harness::tensorfile::save_grid;
use crate::metrics::{nrmse_masked, report_csv, table_csv, MetricReport};
use crate::net::PtychoDVModel;
use crate::physics::illumination_mask;
use crate::solvers::{init_image, reconstruct as run_solver, run_pmace, Algorithm, ReconTrace, Reference, SolverConfig};
use crate::train::{load_checkpoint_for, EpochRecord, TrainOutcome};

/// Score of one method on one test case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    /// Report label, such as `pmace-A` or `PMACE-B-10 w/ PtychoDV`.
    pub label: String,
    pub pattern: String,
    pub sample: usize,
    pub nrmse: f64,
    pub seconds: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn record_config(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let hash = cfg.hash()?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    Ok(hash)
}

fn load_model(cfg: &ExperimentConfig) -> Result<PtychoDVModel> {
    let dir = cfg.checkpoint_dir();
    load_checkpoint_for(&dir, &cfg.train.model).map_err(|e| match e {
        Error::Io { path, .. } => Error::Load(format!("no checkpoint at {}", path.display())),
        other => other,
    })
}

fn reference(case: &Case) -> Result<Reference> {
    Ok(Reference {
        image: case.truth.clone(),
        mask: Some(illumination_mask(&case.probe, &case.grid)?),
    })
}

fn solver_for(base: &SolverConfig, algorithm: Algorithm, iterations: usize, trace: bool) -> SolverConfig {
    SolverConfig {
        algorithm,
        iterations,
        trace,
        ..base.clone()
    }
}

/// Runs one method on one case. Timing covers initialization and inference.
pub fn run_method(
    method: Method,
    case: &Case,
    model: Option<&PtychoDVModel>,
    solver: &SolverConfig,
    reference: Option<&Reference>,
) -> Result<(ComplexGrid, Option<ReconTrace>, f64)> {
    let need = || model.ok_or_else(|| Error::Contract(format!("method {method} needs a trained model")));
    let start = Instant::now();
    let (image, trace) = match method {
        Method::Wf | Method::Awf | Method::Pmace => {
            let cfg = solver_for(solver, method.algorithm().expect("classical"), solver.iterations, solver.trace);
            let init = init_image(&case.data, &case.probe, &case.grid)?;
            let (x, t) = run_solver(&init, &case.data, &case.probe, &case.grid, &cfg, reference)?;
            (x, Some(t))
        }
        Method::Vit => (need()?.infer_stitched(&case.data, &case.grid)?, None),
        Method::PtychoDV => (need()?.infer(&case.data, &case.probe, &case.grid)?, None),
        Method::PtychoDVPmace => {
            let init = need()?.infer(&case.data, &case.probe, &case.grid)?;
            let cfg = solver_for(solver, Algorithm::Pmace, solver.iterations, solver.trace);
            let (x, t) = run_pmace(&init, &case.data, &case.probe, &case.grid, &cfg, reference)?;
            (x, Some(t))
        }
    };
    Ok((image, trace, start.elapsed().as_secs_f64()))
}

fn score(case: &Case, est: &ComplexGrid) -> Result<f64> {
    let mask = illumination_mask(&case.probe, &case.grid)?;
    nrmse_masked(est, &case.truth, Some(&mask))
}

/// Every method on every case, in case-major order.
pub fn evaluate_cases(
    cases: &[Case],
    methods: &[Method],
    model: Option<&PtychoDVModel>,
    solver: &SolverConfig,
) -> Result<Vec<CaseResult>> {
    let solver = SolverConfig {
        trace: false,
        ..solver.clone()
    };
    let mut out = Vec::with_capacity(cases.len() * methods.len());
    for case in cases {
        for &m in methods {
            let (x, _, seconds) = run_method(m, case, model, &solver, None)?;
            out.push(CaseResult {
                label: format!("{m}-{}", case.probe_kind),
                pattern: case.pattern.to_string(),
                sample: case.sample,
                nrmse: score(case, &x)?,
                seconds,
            });
        }
    }
    Ok(out)
}

/// PMACE with `iterations` steps from the baseline and from the network
/// output, on every case.
pub fn study_cases(
    cases: &[Case],
    model: &PtychoDVModel,
    solver: &SolverConfig,
    iterations: usize,
) -> Result<Vec<CaseResult>> {
    let cfg = solver_for(solver, Algorithm::Pmace, iterations, false);
    let mut out = Vec::with_capacity(2 * cases.len());
    for case in cases {
        let tag = format!("PMACE-{}-{iterations}", case.probe_kind);
        let start = Instant::now();
        let init = init_image(&case.data, &case.probe, &case.grid)?;
        let (x, _) = run_pmace(&init, &case.data, &case.probe, &case.grid, &cfg, None)?;
        let base_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let init = model.infer(&case.data, &case.probe, &case.grid)?;
        let (y, _) = run_pmace(&init, &case.data, &case.probe, &case.grid, &cfg, None)?;
        let warm_seconds = start.elapsed().as_secs_f64();
        for (label, est, seconds) in [(tag.clone(), &x, base_seconds), (format!("{tag} w/ PtychoDV"), &y, warm_seconds)] {
            out.push(CaseResult {
                label,
                pattern: case.pattern.to_string(),
                sample: case.sample,
                nrmse: score(case, est)?,
                seconds,
            });
        }
    }
    Ok(out)
}

/// Groups results by `(label, pattern)` in first-seen order and adds an
/// `all` row per label pooling every pattern.
pub fn summarize(results: &[CaseResult]) -> Result<Vec<MetricReport>> {
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for r in results {
        let k = (r.label.clone(), r.pattern.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
        if !labels.contains(&r.label) {
            labels.push(r.label.clone());
        }
    }
    let patterns: Vec<&String> = keys.iter().map(|(_, p)| p).collect();
    let pooled = patterns.iter().any(|p| *p != patterns[0]);
    let mut rows = Vec::new();
    let collect = |label: &str, pattern: Option<&str>| {
        let chosen: Vec<&CaseResult> = results
            .iter()
            .filter(|r| r.label == label && pattern.is_none_or(|p| r.pattern == p))
            .collect();
        let nrmse: Vec<f64> = chosen.iter().map(|r| r.nrmse).collect();
        let seconds: Vec<f64> = chosen.iter().map(|r| r.seconds).collect();
        MetricReport::new(label, pattern.unwrap_or("all"), nrmse, &seconds)
    };
    for label in &labels {
        for (l, p) in &keys {
            if l == label {
                rows.push(collect(label, Some(p))?);
            }
        }
        if pooled {
            rows.push(collect(label, None)?);
        }
    }
    Ok(rows)
}

/// One row per case and method, timing excluded.
pub fn cases_csv(results: &[CaseResult]) -> String {
    let mut out = String::from("method,pattern,sample,nrmse\n");
    for r in results {
        let _ = writeln!(out, "{},{},{},{:.12e}", r.label, r.pattern, r.sample, r.nrmse);
    }
    out
}

/// Writes `report.csv` (timing-free, reproducible), `table.csv` and `cases.csv`.
fn write_reports(dir: &Path, results: &[CaseResult], hash: &str) -> Result<Vec<MetricReport>> {
    let rows = summarize(results)?;
    write_text(&dir.join("report.csv"), &report_csv(&rows, hash)?)?;
    write_text(&dir.join("table.csv"), &table_csv(&rows, hash)?)?;
    write_text(&dir.join("cases.csv"), &cases_csv(results))?;
    Ok(rows)
}

fn open_cases(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let dir = cfg.data_dir();
    if !dir.exists() {
        return Err(Error::Load(format!(
            "no dataset at {}; run simulate first",
            dir.display()
        )));
    }
    Dataset::open(&dir)?.cases()
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    let hash = record_config(cfg, &dir)?;
    let cases = build_cases(&cfg.data, cfg.seed)?;
    write_dataset(&dir, &cfg.data, cfg.seed, &hash, &cases)
}

pub fn train(cfg: &ExperimentConfig, progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.out.join(Scenario::Train.to_string());
    record_config(cfg, &dir)?;
    crate::train::train(&cfg.train, Some(&dir), progress)
}

/// Reconstructs one sample per probe and pattern with every method, writing
/// images, traces, grayscale maps and a report.
pub fn reconstruct(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let dir = cfg.out.join(Scenario::Reconstruct.to_string());
    let hash = record_config(cfg, &dir)?;
    let model = match cfg.methods.iter().any(|m| m.needs_model()) {
        true => Some(load_model(cfg)?),
        false => None,
    };
    let cases: Vec<Case> = open_cases(cfg)?
        .into_iter()
        .filter(|c| c.sample == cfg.reconstruct.sample)
        .collect();
    if cases.is_empty() {
        return Err(Error::Contract(format!("dataset has no sample {}", cfg.reconstruct.sample)));
    }
    let solver = SolverConfig {
        trace: true,
        ..cfg.solver.clone()
    };
    let mut results = Vec::new();
    for case in &cases {
        let r = reference(case)?;
        let case_dir = dir.join(format!("{}_{}-{}", case.probe_kind, case.pattern.n, case.pattern.spacing));
        for &m in &cfg.methods {
            let (x, trace, seconds) = run_method(m, case, model.as_ref(), &solver, Some(&r))?;
            let mdir = case_dir.join(m.name());
            fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
            save_grid(&mdir.join("image.ptyt"), &x)?;
            export_image(&x, &mdir, "image")?;
            if let Some(t) = trace {
                write_text(&mdir.join("trace.csv"), &t.to_csv())?;
            }
            results.push(CaseResult {
                label: format!("{m}-{}", case.probe_kind),
                pattern: case.pattern.to_string(),
                sample: case.sample,
                nrmse: r.nrmse(&x)?,
                seconds,
            });
        }
        export_image(&case.truth, &case_dir, "truth")?;
    }
    write_reports(&dir, &results, &hash)
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let dir = cfg.out.join(Scenario::Evaluate.to_string());
    let hash = record_config(cfg, &dir)?;
    let model = match cfg.methods.iter().any(|m| m.needs_model()) {
        true => Some(load_model(cfg)?),
        false => None,
    };
    let cases = open_cases(cfg)?;
    let results = evaluate_cases(&cases, &cfg.methods, model.as_ref(), &cfg.solver)?;
    write_reports(&dir, &results, &hash)
}

pub fn initializer_study(cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    let dir = cfg.out.join(Scenario::InitializerStudy.to_string());
    let hash = record_config(cfg, &dir)?;
    let model = load_model(cfg)?;
    let cases = open_cases(cfg)?;
    let results = study_cases(&cases, &model, &cfg.solver, cfg.study.iterations)?;
    write_reports(&dir, &results, &hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tests::tiny_config;
    use crate::train::{save_checkpoint, Preset};

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(Preset::Desk, Scenario::Evaluate);
        cfg.out = out.to_path_buf();
        cfg.data.image = 16;
        cfg.data.count = 1;
        cfg.data.patterns = vec!["4:2".parse().unwrap(), "4:6".parse().unwrap()];
        cfg.solver.iterations = 5;
        cfg.train.image = 16;
        cfg.train.patterns = cfg.data.patterns.clone();
        cfg.train.model = tiny_config(1);
        cfg
    }

    fn with_model(cfg: &ExperimentConfig) {
        let model = PtychoDVModel::new(cfg.train.model.clone(), 1).unwrap();
        save_checkpoint(&cfg.checkpoint_dir(), &model, &Default::default()).unwrap();
    }

    fn snapshot(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn simulate_is_byte_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        simulate(&cfg).unwrap();
        let first = snapshot(tmp.path());
        fs::remove_dir_all(tmp.path().join("data")).unwrap();
        simulate(&cfg).unwrap();
        assert_eq!(first, snapshot(tmp.path()));
        assert_eq!(first.len(), 2 + 2 + 1 + 4 + 16);
    }

    #[test]
    fn evaluate_reports_reproduce() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        simulate(&cfg).unwrap();
        with_model(&cfg);
        let rows = evaluate(&cfg).unwrap();
        let first = fs::read(tmp.path().join("evaluate/report.csv")).unwrap();
        evaluate(&cfg).unwrap();
        assert_eq!(first, fs::read(tmp.path().join("evaluate/report.csv")).unwrap());
        // A single sample per pattern has zero spread.
        let row = rows.iter().find(|r| r.pattern == "4:2").unwrap();
        assert_eq!(row.std, 0.0);
        assert!(rows.iter().any(|r| r.method == "ptychodv+pmace-B" && r.pattern == "all"));
    }

    #[test]
    fn reconstruct_writes_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny(tmp.path());
        cfg.scenario = Scenario::Reconstruct;
        simulate(&cfg).unwrap();
        with_model(&cfg);
        reconstruct(&cfg).unwrap();
        let d = tmp.path().join("reconstruct/A_4-2");
        for f in ["pmace/image.ptyt", "pmace/trace.csv", "pmace/image_phase.pgm", "vit/image_magnitude.toml"] {
            assert!(d.join(f).exists(), "{f}");
        }
        let report = fs::read_to_string(tmp.path().join("reconstruct/report.csv")).unwrap();
        assert!(report.contains(&cfg.hash().unwrap()));
    }

    #[test]
    fn k0_model_matches_vit_method() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let case = &build_cases(&cfg.data, 0).unwrap()[0];
        let model = PtychoDVModel::new(tiny_config(0), 2).unwrap();
        let (a, ..) = run_method(Method::PtychoDV, case, Some(&model), &cfg.solver, None).unwrap();
        let (b, ..) = run_method(Method::Vit, case, Some(&model), &cfg.solver, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_checkpoint_is_a_load_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny(tmp.path());
        simulate(&cfg).unwrap();
        with_model(&cfg);
        cfg.train.model.vit.dim = 32;
        assert!(matches!(evaluate(&cfg), Err(Error::Load(_))));
        assert!(matches!(initializer_study(&cfg), Err(Error::Load(_))));
    }

    #[test]
    fn study_pairs_each_case() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny(tmp.path());
        cfg.scenario = Scenario::InitializerStudy;
        simulate(&cfg).unwrap();
        with_model(&cfg);
        let rows = initializer_study(&cfg).unwrap();
        let labels: Vec<&str> = rows.iter().filter(|r| r.pattern == "all").map(|r| r.method.as_str()).collect();
        assert_eq!(
            labels,
            ["PMACE-A-10", "PMACE-A-10 w/ PtychoDV", "PMACE-B-10", "PMACE-B-10 w/ PtychoDV"]
        );
        let again = study_cases(&open_cases(&cfg).unwrap(), &load_model(&cfg).unwrap(), &cfg.solver, 10).unwrap();
        let first: Vec<f64> = summarize(&again).unwrap().iter().map(|r| r.mean).collect();
        assert_eq!(first, rows.iter().map(|r| r.mean).collect::<Vec<_>>());
    }
}
