//! On-disk formats: observation JSON, particle archives (JSON lines), and the
//! CSV/JSON report artifacts.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use bridgefit_core::field::{GridField, KernelTerm, ThetaState};
use bridgefit_core::likelihood::{sigma_mixture_quantile, SigmaPosterior};
use bridgefit_core::predict::{FieldSummary, PredictiveSamples};
use bridgefit_core::rjmcmc::{ChainState, MoveKind, StepSizes};
use bridgefit_core::smc::{BridgeRecord, Ensemble, Particle};
use bridgefit_core::{ObservationSet, Problem, SensorLayout, Upscale};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::truth::TruthSpec;

/// JSON numbers cannot hold infinities; these are written as strings.
mod ext_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("malformed {}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub truth: TruthSpec,
    pub noise_frac: f64,
    pub noise_std: f64,
    /// Mean absolute noiseless response.
    pub mu_a: f64,
    pub seed: u64,
    pub resolution: usize,
    pub upscale: Upscale,
    pub flux: f64,
    pub clean: Vec<f64>,
}

pub const OBSERVATION_FORMAT: &str = "bridgefit-observations/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub format: String,
    pub problem: Problem,
    pub sensors: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl ObservationFile {
    pub fn observations(&self) -> ObservationSet {
        ObservationSet { sensors: SensorLayout::new(self.sensors.clone()), values: self.values.clone() }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file: Self = read_json(path)?;
        if file.format != OBSERVATION_FORMAT {
            return Err(CliError::Config(format!("{}: unsupported format {}", path.display(), file.format)));
        }
        if file.sensors.len() != file.values.len() || file.values.is_empty() {
            return Err(CliError::Config(format!("{}: sensors and values disagree", path.display())));
        }
        Ok(file)
    }
}

/// Per-cell values, one grid row per line (increasing `y`), preceded by a
/// comment line with the grid metadata.
pub fn write_grid_csv(path: &Path, grid: &GridField) -> Result<(), CliError> {
    let mut out = String::new();
    let scale = match grid.scale {
        bridgefit_core::field::FieldScale::Log => "log",
        bridgefit_core::field::FieldScale::Physical => "physical",
    };
    writeln!(out, "# dim={} resolution={} scale={}", grid.dim, grid.resolution, scale).unwrap();
    let rows = if grid.dim == 2 { grid.resolution } else { 1 };
    for iy in 0..rows {
        let row: Vec<String> = (0..grid.resolution).map(|ix| grid.get(ix, iy).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub const ARCHIVE_FORMAT: &str = "bridgefit-archive/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveHeader {
    pub format: String,
    pub problem: Problem,
    /// Index in the hierarchy; 0 is the prior.
    pub level: usize,
    pub resolution: usize,
    #[serde(with = "ext_f64")]
    pub gamma: f64,
    pub iteration: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub hyperparams_hash: String,
    pub data_hash: String,
    pub upscale: Upscale,
    pub steps: StepSizes,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveTerm {
    amplitude: f64,
    precision: f64,
    center: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveParticle {
    stream: u64,
    #[serde(with = "ext_f64")]
    log_weight: f64,
    #[serde(with = "ext_f64")]
    log_prior: f64,
    #[serde(with = "ext_f64")]
    loglik_coarse: f64,
    #[serde(with = "ext_f64")]
    loglik_fine: f64,
    a0: f64,
    terms: Vec<ArchiveTerm>,
}

impl From<&Particle> for ArchiveParticle {
    fn from(p: &Particle) -> Self {
        let s = &p.state;
        Self {
            stream: p.stream,
            log_weight: p.log_weight,
            log_prior: s.log_prior,
            loglik_coarse: s.loglik_coarse,
            loglik_fine: s.loglik_fine,
            a0: s.theta.a0,
            terms: s
                .theta
                .terms
                .iter()
                .map(|t| ArchiveTerm { amplitude: t.amplitude, precision: t.precision, center: t.center })
                .collect(),
        }
    }
}

impl From<ArchiveParticle> for Particle {
    fn from(p: ArchiveParticle) -> Self {
        let terms = p.terms.into_iter().map(|t| KernelTerm::new(t.amplitude, t.precision, t.center)).collect();
        Particle {
            state: ChainState {
                theta: ThetaState { a0: p.a0, terms },
                log_prior: p.log_prior,
                loglik_coarse: p.loglik_coarse,
                loglik_fine: p.loglik_fine,
            },
            log_weight: p.log_weight,
            stream: p.stream,
        }
    }
}

/// Header line followed by one particle per line.
pub fn write_archive(path: &Path, header: &ArchiveHeader, ensemble: &Ensemble) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header).expect("serializable");
    w.write_all(b"\n")?;
    for p in &ensemble.particles {
        serde_json::to_writer(&mut w, &ArchiveParticle::from(p)).expect("serializable");
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<(ArchiveHeader, Ensemble), CliError> {
    let malformed = |line: usize, e: &dyn std::fmt::Display| {
        CliError::Config(format!("{}:{}: malformed archive: {e}", path.display(), line + 1))
    };
    let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| malformed(0, &"empty file"))??;
    let header: ArchiveHeader = serde_json::from_str(&first).map_err(|e| malformed(0, &e))?;
    if header.format != ARCHIVE_FORMAT {
        return Err(CliError::Config(format!("{}: unsupported format {}", path.display(), header.format)));
    }
    let mut particles = Vec::with_capacity(header.n_particles);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ArchiveParticle = serde_json::from_str(&line).map_err(|e| malformed(i + 1, &e))?;
        particles.push(Particle::from(p));
    }
    if particles.len() != header.n_particles {
        return Err(malformed(0, &format!("expected {} particles, found {}", header.n_particles, particles.len())));
    }
    let ensemble = Ensemble {
        particles,
        gamma: header.gamma,
        level: header.level,
        iteration: header.iteration,
        steps: header.steps,
    };
    Ok((header, ensemble))
}

/// One row per bridging iteration: the reciprocal-temperature path and its diagnostics.
pub fn write_bridge_csv(path: &Path, record: &BridgeRecord) -> Result<(), CliError> {
    let mut out = String::from("level,iteration,gamma,ess_prev,ess,resampled,calls_coarse,calls_fine,mean_k");
    for kind in MoveKind::ALL {
        write!(out, ",accept_{}", kind.name().replace('-', "_")).unwrap();
    }
    out.push_str(",step_amplitude,step_log_scale,step_location,step_birth_amplitude\n");
    for s in &record.steps {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            record.level,
            s.iteration,
            s.gamma,
            s.ess_prev,
            s.ess,
            s.resampled as u8,
            s.calls_coarse,
            s.calls_fine,
            s.mean_k
        )
        .unwrap();
        for kind in MoveKind::ALL {
            match s.acceptance.rate(kind) {
                Some(r) => write!(out, ",{r}").unwrap(),
                None => out.push(','),
            }
        }
        writeln!(
            out,
            ",{},{},{},{}",
            s.steps.amplitude, s.steps.log_scale, s.steps.location, s.steps.birth_amplitude
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub level: usize,
    pub resolution: usize,
    /// Mean absolute observed response, the normalizer for the relative figures.
    pub mu_a: f64,
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub relative_mean: f64,
    pub relative_q05: f64,
    pub relative_q50: f64,
    pub relative_q95: f64,
    /// Weighted Gamma posteriors of the error precision, one per particle.
    pub components: Vec<(f64, SigmaPosterior)>,
}

impl SigmaReport {
    pub fn new(level: usize, resolution: usize, mu_a: f64, components: Vec<(f64, SigmaPosterior)>) -> Self {
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        let mean = components.iter().map(|(w, c)| w * c.mean_sigma()).sum::<f64>() / total;
        let q = |p| sigma_mixture_quantile(&components, p);
        let (q05, q50, q95) = (q(0.05), q(0.5), q(0.95));
        Self {
            level,
            resolution,
            mu_a,
            mean,
            q05,
            q50,
            q95,
            relative_mean: mean / mu_a,
            relative_q05: q05 / mu_a,
            relative_q50: q50 / mu_a,
            relative_q95: q95 / mu_a,
            components,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}

/// Weighted posterior probability of each kernel count.
pub fn k_histogram(ensemble: &Ensemble) -> Vec<(usize, f64)> {
    let w = ensemble.weights().unwrap_or_default();
    let max_k = ensemble.particles.iter().map(|p| p.state.theta.k()).max().unwrap_or(0);
    let mut mass = vec![0.0; max_k + 1];
    for (p, w) in ensemble.particles.iter().zip(w) {
        mass[p.state.theta.k()] += w;
    }
    mass.into_iter().enumerate().collect()
}

pub fn write_k_histogram(path: &Path, ensemble: &Ensemble) -> Result<(), CliError> {
    let mut out = String::from("k,probability\n");
    for (k, p) in k_histogram(ensemble) {
        writeln!(out, "{k},{p}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub level: usize,
    pub resolution: usize,
    pub calls: u64,
    pub cost_weight: f64,
}

impl CostRow {
    pub fn weighted(&self) -> f64 {
        self.calls as f64 * self.cost_weight
    }
}

/// Solver calls per level and their weighted total on the last line.
pub fn write_cost_csv(path: &Path, rows: &[CostRow]) -> Result<(), CliError> {
    let mut out = String::from("level,resolution,calls,cost_weight,weighted_cost\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.level, r.resolution, r.calls, r.cost_weight, r.weighted()).unwrap();
    }
    let calls: u64 = rows.iter().map(|r| r.calls).sum();
    let weighted: f64 = rows.iter().map(CostRow::weighted).sum();
    writeln!(out, "total,,{calls},,{weighted}").unwrap();
    fs::write(path, out)?;
    Ok(())
}

/// Writes every grid of a summary as `<prefix>_<stat>.csv` plus a JSON index.
pub fn write_field_summary(dir: &Path, prefix: &str, summary: &FieldSummary) -> Result<(), CliError> {
    let mut files = vec![];
    let mut emit = |name: String, grid: &GridField| -> Result<(), CliError> {
        let file = format!("{prefix}_{name}.csv");
        write_grid_csv(&dir.join(&file), grid)?;
        files.push((name, file));
        Ok(())
    };
    emit("mean".into(), &summary.mean)?;
    emit("variance".into(), &summary.variance)?;
    for (q, grid) in &summary.quantiles {
        emit(format!("q{:02}", (q * 100.0).round() as u32), grid)?;
    }
    let index = serde_json::json!({
        "resolution": summary.resolution,
        "scale": summary.scale,
        "quantiles": summary.quantiles.iter().map(|(q, _)| q).collect::<Vec<_>>(),
        "files": files.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_json(&dir.join(format!("{prefix}.json")), &index)
}

/// One row per draw, one column per sensor.
pub fn write_predictive_csv(path: &Path, samples: &PredictiveSamples) -> Result<(), CliError> {
    let mut out = String::new();
    let header: Vec<String> = (0..samples.sensors.len()).map(|i| format!("s{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for d in &samples.draws {
        let row: Vec<String> = d.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &serde_json::Value) -> Result<(), CliError> {
    write_json(path, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bridgefit_core::rjmcmc::StepSizes;

    fn sample_ensemble() -> Ensemble {
        let particles = (0..3)
            .map(|i| Particle {
                state: ChainState {
                    theta: ThetaState {
                        a0: 0.1 * i as f64 + 1.0 / 3.0,
                        terms: vec![KernelTerm::new(-0.7 / 3.0, 1e4 / 7.0, [0.1, std::f64::consts::PI / 10.0])],
                    },
                    log_prior: -12.345678901234567,
                    loglik_coarse: if i == 0 { f64::NEG_INFINITY } else { 1e-300 },
                    loglik_fine: 123.456e100,
                },
                log_weight: if i == 2 { f64::NEG_INFINITY } else { -0.1 * i as f64 },
                stream: i,
            })
            .collect();
        Ensemble { particles, gamma: 1.0, level: 2, iteration: 7, steps: StepSizes::default() }
    }

    fn header() -> ArchiveHeader {
        ArchiveHeader {
            format: ARCHIVE_FORMAT.into(),
            problem: Problem::Conduct2d,
            level: 2,
            resolution: 16,
            gamma: 1.0,
            iteration: 7,
            n_particles: 3,
            seed: 5,
            hyperparams_hash: "h".into(),
            data_hash: "d".into(),
            upscale: Upscale::LogMean,
            steps: StepSizes::default(),
        }
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let e = sample_ensemble();
        write_archive(&path, &header(), &e).unwrap();
        let (h, back) = read_archive(&path).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, e);
        let path2 = dir.path().join("b.jsonl");
        write_archive(&path2, &h, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        write_archive(&path, &header(), &sample_ensemble()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        fs::write(&path, cut.join("\n")).unwrap();
        assert!(matches!(read_archive(&path), Err(CliError::Config(_))));
    }

    #[test]
    fn grid_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = GridField {
            dim: 2,
            resolution: 2,
            scale: bridgefit_core::field::FieldScale::Physical,
            values: vec![1.0, 2.0, 3.0, 4.5],
        };
        write_grid_csv(&path, &g).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "# dim=2 resolution=2 scale=physical\n1,2\n3,4.5\n");
    }

    #[test]
    fn cost_rows_sum_to_total() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let rows = vec![
            CostRow { level: 1, resolution: 8, calls: 100, cost_weight: 1.0 },
            CostRow { level: 2, resolution: 16, calls: 30, cost_weight: 4.0 },
        ];
        write_cost_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().last().unwrap(), "total,,130,,220");
    }
}
