//! The `synth`, `run`, `resume` and `report` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use bridgefit_core::likelihood::{FlatLikelihood, LevelLikelihood, LogLikelihood, ObservationSet};
use bridgefit_core::predict::{field_summary, predictive_sample, sigma_components};
use bridgefit_core::smc::{continue_hierarchy, BridgeRecord, Ensemble, SmcError};
use bridgefit_core::solvers::make_synthetic_from_grid;
use bridgefit_core::{Prior, SensorLayout, SolverLevel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{sha256_hex, LoadedConfig, SensorSpec};
use crate::error::CliError;
use crate::exec::RayonExecutor;
use crate::io::{
    read_archive, write_archive, write_bridge_csv, write_cost_csv, write_field_summary, write_k_histogram,
    write_manifest, write_predictive_csv, ArchiveHeader, CostRow, ObservationFile, Provenance, SigmaReport,
    ARCHIVE_FORMAT, OBSERVATION_FORMAT,
};

pub const VERSION: &str = env!("BRIDGEFIT_VERSION");

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    /// Replaces the configured output directory.
    pub output: Option<PathBuf>,
}

impl RunOptions {
    fn executor(&self) -> Result<RayonExecutor, CliError> {
        let workers = self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        RayonExecutor::new(workers)
    }

    fn output_dir(&self, cfg: &LoadedConfig) -> PathBuf {
        self.output.clone().unwrap_or_else(|| cfg.output_dir())
    }
}

fn level_dir(out: &Path, level: usize, resolution: usize) -> PathBuf {
    out.join(format!("level{level}_r{resolution}"))
}

fn solver_levels(cfg: &LoadedConfig) -> Vec<SolverLevel> {
    let c = &cfg.config;
    c.levels
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut s = SolverLevel::new(c.problem, r, c.boundary()).with_cost_weight(c.cost_weight(i));
            s.cg = c.cg();
            s
        })
        .collect()
}

fn hyperparams_hash(cfg: &LoadedConfig) -> String {
    sha256_hex(&serde_json::to_vec(&cfg.config.hyperparams).expect("serializable"))
}

/// Generates noisy observations from the configured truth and writes them to `data`.
pub fn synth(cfg: &LoadedConfig) -> Result<ObservationFile, CliError> {
    let c = &cfg.config;
    let truth = c.truth.as_ref().ok_or_else(|| CliError::Config("`truth` is required for synth".into()))?;
    truth.check_problem(c.problem)?;
    let resolution = c.synth.resolution.unwrap_or(*c.levels.last().expect("validated"));
    let sensors = cfg.sensors()?;
    let grid = truth.grid(c.problem.domain(), resolution, c.upscale)?;
    let mut model = SolverLevel::new(c.problem, resolution, c.boundary());
    model.cg = c.cg();
    let mut rng = ChaCha8Rng::seed_from_u64(c.synth.seed);
    let data = make_synthetic_from_grid(&grid, &model, &sensors, c.synth.noise_frac, &mut rng)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let file = ObservationFile {
        format: OBSERVATION_FORMAT.into(),
        problem: c.problem,
        sensors: sensors.locations.clone(),
        values: data.observations.values,
        provenance: Some(Provenance {
            truth: truth.clone(),
            noise_frac: c.synth.noise_frac,
            noise_std: data.noise_std,
            mu_a: data.mu_a,
            seed: c.synth.seed,
            resolution,
            upscale: c.upscale,
            flux: c.flux,
            clean: data.clean.values,
        }),
    };
    let path = cfg.data_path()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    file.write(&path)?;
    Ok(file)
}

struct Inputs {
    obs: ObservationSet,
    data_hash: String,
}

fn load_inputs(cfg: &LoadedConfig) -> Result<Inputs, CliError> {
    let path = cfg.data_path()?;
    let bytes = fs::read(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file = ObservationFile::read(&path)?;
    if file.problem != cfg.config.problem {
        return Err(CliError::Config(format!("{} holds {:?} data", path.display(), file.problem)));
    }
    let obs = file.observations();
    obs.sensors.validate(cfg.config.problem.domain()).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Inputs { obs, data_hash: sha256_hex(&bytes) })
}

/// Field summaries, model-error posterior and kernel-count histogram of one ensemble.
fn emit_summaries(
    dir: &Path,
    cfg: &LoadedConfig,
    ensemble: &Ensemble,
    level: &LevelLikelihood<'_>,
) -> Result<SigmaReport, CliError> {
    fs::create_dir_all(dir)?;
    let c = &cfg.config;
    let resolution = c.report.resolution.unwrap_or(level.model.resolution());
    let summary = field_summary(ensemble, c.problem.domain(), resolution, &c.report.quantiles, c.report.scale)
        .ok_or_else(|| CliError::Degenerate("cannot summarize a degenerate ensemble".into()))?;
    write_field_summary(dir, "field", &summary)?;
    write_k_histogram(&dir.join("k_histogram.csv"), ensemble)?;
    let components = sigma_components(ensemble, level).map_err(|e| CliError::Solver(e.to_string()))?;
    let report = SigmaReport::new(ensemble.level, level.model.resolution(), level.obs.mean_abs(), components);
    report.write(&dir.join("sigma.json"))?;
    Ok(report)
}

struct LevelWriter<'a> {
    cfg: &'a LoadedConfig,
    out: PathBuf,
    inputs: &'a Inputs,
    /// Global index of `likelihoods[0]`.
    first_level: usize,
    likelihoods: &'a [LevelLikelihood<'a>],
    error: Option<CliError>,
}

impl LevelWriter<'_> {
    fn resolution(&self, level: usize) -> usize {
        self.likelihoods[level - self.first_level].model.resolution()
    }

    fn header(&self, ensemble: &Ensemble) -> ArchiveHeader {
        ArchiveHeader {
            format: ARCHIVE_FORMAT.into(),
            problem: self.cfg.config.problem,
            level: ensemble.level,
            resolution: self.resolution(ensemble.level),
            gamma: ensemble.gamma,
            iteration: ensemble.iteration,
            n_particles: ensemble.len(),
            seed: self.cfg.config.smc.seed,
            hyperparams_hash: hyperparams_hash(self.cfg),
            data_hash: self.inputs.data_hash.clone(),
            upscale: self.cfg.config.upscale,
            steps: ensemble.steps,
        }
    }

    fn level_done(&mut self, ensemble: &Ensemble, record: &BridgeRecord) {
        if self.error.is_some() {
            return;
        }
        let result = (|| {
            let dir = level_dir(&self.out, record.level, self.resolution(record.level));
            fs::create_dir_all(&dir)?;
            write_archive(&dir.join("archive.jsonl"), &self.header(ensemble), ensemble)?;
            write_bridge_csv(&dir.join("bridge.csv"), record)?;
            let level = &self.likelihoods[record.level - self.first_level];
            emit_summaries(&dir, self.cfg, ensemble, level)?;
            eprintln!(
                "level {} (resolution {}): {} iterations, {} fine-level calls, mean k {:.2}",
                record.level,
                level.model.resolution(),
                record.iterations(),
                record.calls_fine(),
                ensemble.mean_k().unwrap_or(f64::NAN)
            );
            Ok(())
        })();
        if let Err(e) = result {
            self.error = Some(e);
        }
    }
}

/// Solver calls per level: as the fine side of its own bridge plus as the
/// coarse side of the next one.
fn cost_rows(records: &[BridgeRecord], first_level: usize, likelihoods: &[LevelLikelihood<'_>]) -> Vec<CostRow> {
    let mut rows: Vec<CostRow> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let model = likelihoods[r.level - first_level].model;
        let mut calls = r.calls_fine();
        if let Some(next) = records.get(i + 1) {
            calls += next.calls_coarse();
        }
        rows.push(CostRow { level: r.level, resolution: model.resolution(), calls, cost_weight: model.cost_weight() });
    }
    // A bridge that starts from an archived level also charges that level.
    if let Some(first) = records.first() {
        if first.level > first_level && first.calls_coarse() > 0 {
            let model = likelihoods[first.level - 1 - first_level].model;
            rows.insert(
                0,
                CostRow {
                    level: first.level - 1,
                    resolution: model.resolution(),
                    calls: first.calls_coarse(),
                    cost_weight: model.cost_weight(),
                },
            );
        }
    }
    rows
}

/// What a `run` or `resume` produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub ensemble: Ensemble,
    pub records: Vec<BridgeRecord>,
    pub costs: Vec<CostRow>,
    pub output: PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn drive(
    command: &str,
    cfg: &LoadedConfig,
    opts: &RunOptions,
    inputs: &Inputs,
    start: Ensemble,
    first_level: usize,
    solvers: &[SolverLevel],
    previous_is_prior: bool,
) -> Result<RunOutcome, CliError> {
    let c = &cfg.config;
    let exec = opts.executor()?;
    let out = opts.output_dir(cfg);
    fs::create_dir_all(&out)?;
    let prior = Prior::new(c.hyperparams.clone(), c.problem.domain());
    let likelihoods: Vec<LevelLikelihood<'_>> = solvers
        .iter()
        .map(|s| LevelLikelihood::new(s, &inputs.obs, c.hyperparams.clone(), c.upscale))
        .collect();
    let refs: Vec<&dyn LogLikelihood> = likelihoods.iter().map(|l| l as &dyn LogLikelihood).collect();
    let (previous, todo): (&dyn LogLikelihood, &[&dyn LogLikelihood]) =
        if previous_is_prior { (&FlatLikelihood, &refs) } else { (refs[0], &refs[1..]) };
    let mut writer = LevelWriter { cfg, out: out.clone(), inputs, first_level, likelihoods: &likelihoods, error: None };
    if !previous_is_prior {
        let dir = level_dir(&out, start.level, solvers[0].resolution);
        emit_summaries(&dir, cfg, &start, &likelihoods[0])?;
    }
    let result = continue_hierarchy(start, &prior, previous, todo, &c.smc, &exec, &mut |e, r| writer.level_done(e, r));
    if let Some(e) = writer.error.take() {
        return Err(e);
    }
    let records = match &result {
        Ok((_, records)) => records.clone(),
        Err(e) => e.records().to_vec(),
    };
    let costs = cost_rows(&records, first_level, &likelihoods);
    write_cost_csv(&out.join("cost.csv"), &costs)?;
    let levels: Vec<_> = records
        .iter()
        .map(|r| {
            json!({
                "level": r.level,
                "resolution": likelihoods[r.level - first_level].model.resolution(),
                "iterations": r.iterations(),
                "final_gamma": r.final_gamma(),
                "calls_fine": r.calls_fine(),
                "calls_coarse": r.calls_coarse(),
            })
        })
        .collect();
    let status = match &result {
        Ok(_) => "complete".to_string(),
        Err(e) => e.to_string(),
    };
    let manifest = json!({
        "version": VERSION,
        "command": command,
        "config_hash": cfg.hash,
        "config": c,
        "seed": c.smc.seed,
        "data_hash": inputs.data_hash,
        "hyperparams_hash": hyperparams_hash(cfg),
        "levels": levels,
        "status": status,
    });
    write_manifest(&out.join("manifest.json"), &manifest)?;

    match result {
        Ok((ensemble, records)) => Ok(RunOutcome { ensemble, records, costs, output: out }),
        Err(e) => {
            if let SmcError::Degenerate { records, .. } = &e {
                // Write the partial bridge so the failure can be inspected.
                if let Some(last) = records.last() {
                    let dir = level_dir(&out, last.level, likelihoods[last.level - first_level].model.resolution());
                    fs::create_dir_all(&dir)?;
                    write_bridge_csv(&dir.join("bridge.csv"), last)?;
                    let failed = &likelihoods[last.level - first_level];
                    if failed.failures() >= c.smc.n_particles as u64 {
                        return Err(CliError::Solver(format!("{e} ({} solver failures)", failed.failures())));
                    }
                }
            }
            Err(CliError::Degenerate(e.to_string()))
        }
    }
}

/// Prior to finest level through every configured level.
pub fn run(cfg: &LoadedConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let inputs = load_inputs(cfg)?;
    let solvers = solver_levels(cfg);
    let prior = Prior::new(cfg.config.hyperparams.clone(), cfg.config.problem.domain());
    let start = Ensemble::from_prior(&prior, &cfg.config.smc);
    drive("run", cfg, opts, &inputs, start, 1, &solvers, true)
}

/// Continues from an archived ensemble; the first configured level must be
/// the archived one.
pub fn resume(cfg: &LoadedConfig, archive: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let c = &cfg.config;
    let inputs = load_inputs(cfg)?;
    let (header, ensemble) = read_archive(archive)?;
    check_archive(cfg, &header, &inputs)?;
    let first = c.levels[0];
    if first != header.resolution {
        let why = if first < header.resolution { "is coarser than" } else { "does not match" };
        return Err(CliError::Config(format!(
            "first configured level {first} {why} the archived resolution {}",
            header.resolution
        )));
    }
    if header.gamma != 1.0 {
        return Err(CliError::Config("archive holds an unfinished level".into()));
    }
    let solvers = solver_levels(cfg);
    drive("resume", cfg, opts, &inputs, ensemble, header.level, &solvers, false)
}

fn check_archive(cfg: &LoadedConfig, header: &ArchiveHeader, inputs: &Inputs) -> Result<(), CliError> {
    let c = &cfg.config;
    if header.problem != c.problem {
        return Err(CliError::Config(format!("archive is for {:?}", header.problem)));
    }
    if header.hyperparams_hash != hyperparams_hash(cfg) {
        return Err(CliError::Config("archive was produced with different hyperparameters".into()));
    }
    if header.data_hash != inputs.data_hash {
        return Err(CliError::Config("archive was produced from different observations".into()));
    }
    if header.upscale != c.upscale {
        return Err(CliError::Config("archive was produced with a different upscaling rule".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    pub output: Option<PathBuf>,
    /// Sensors for predictive sampling.
    pub predict_sensors: Option<SensorSpec>,
    pub draws: usize,
    pub seed: u64,
    /// Exceedance threshold for the predictive summary.
    pub threshold: Option<f64>,
}

/// Recomputes the summaries of an archived ensemble, optionally with
/// predictive draws at new sensors.
pub fn report(cfg: &LoadedConfig, archive: &Path, opts: &ReportOptions) -> Result<SigmaReport, CliError> {
    let c = &cfg.config;
    let inputs = load_inputs(cfg)?;
    let (header, ensemble) = read_archive(archive)?;
    check_archive(cfg, &header, &inputs)?;
    let mut solver = SolverLevel::new(c.problem, header.resolution, c.boundary());
    solver.cg = c.cg();
    let level = LevelLikelihood::new(&solver, &inputs.obs, c.hyperparams.clone(), c.upscale);
    let dir = opts.output.clone().unwrap_or_else(|| level_dir(&cfg.output_dir(), header.level, header.resolution));
    let sigma = emit_summaries(&dir, cfg, &ensemble, &level)?;
    if let Some(spec) = &opts.predict_sensors {
        let sensors: SensorLayout = spec.layout(&cfg.base_dir)?;
        sensors.validate(c.problem.domain()).map_err(|e| CliError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let samples = predictive_sample(&ensemble, &level, &sensors, opts.draws.max(1), &mut rng)
            .map_err(|e| CliError::Solver(e.to_string()))?;
        write_predictive_csv(&dir.join("predictive.csv"), &samples)?;
        let summary = json!({
            "sensors": sensors.locations,
            "draws": samples.draws.len(),
            "mean": samples.mean(),
            "variance": samples.variance(),
            "threshold": opts.threshold,
            "exceedance": opts.threshold.map(|t| samples.exceedance(t)),
        });
        write_manifest(&dir.join("predictive.json"), &summary)?;
    }
    Ok(sigma)
}
