//! Run configuration: one TOML (or JSON) file per experiment.
//!
//! Only `problem` and `levels` are required; everything else defaults to the
//! values used in the reference experiments. Relative paths are resolved
//! against the directory holding the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use bridgefit_core::field::{FieldScale, Point};
use bridgefit_core::solvers::{Boundary, CgSettings, SensorLayout};
use bridgefit_core::{Hyperparams, Problem, SmcConfig, Upscale};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::truth::TruthSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    /// Solver resolutions, coarsest first.
    pub levels: Vec<usize>,
    /// Observation file; written by `synth`, read by `run`, `resume` and `report`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub sensors: Option<SensorSpec>,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub upscale: Upscale,
    /// Heat flux entering through the `x = 1` boundary.
    #[serde(default = "default_flux")]
    pub flux: f64,
    /// Relative cost of one solve at each level, for the cost table.
    #[serde(default)]
    pub cost_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub synth: SynthSettings,
    #[serde(default)]
    pub report: ReportSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_flux() -> f64 {
    Boundary::default().flux
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let cg = CgSettings::default();
        Self { cg_tolerance: cg.tolerance, cg_max_iterations: cg.max_iterations }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// Noise standard deviation as a fraction of the mean absolute response.
    pub noise_frac: f64,
    pub seed: u64,
    /// Generating solver resolution; defaults to the finest level.
    pub resolution: Option<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { noise_frac: 0.05, seed: 0, resolution: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// Output grid for field summaries; defaults to each level's resolution.
    pub resolution: Option<usize>,
    pub quantiles: Vec<f64>,
    pub scale: FieldScale,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { resolution: None, quantiles: vec![0.05, 0.95], scale: FieldScale::Physical }
    }
}

/// Sensor placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SensorSpec {
    /// `x = i / count`, `i = 1..=count` on the rod.
    Uniform { count: usize },
    /// `x = i / nx` (`i = 1..=nx`), `y = j / (ny - 1)` (`j = 0..ny`) on the square.
    Grid { nx: usize, ny: usize },
    Points { points: Vec<Vec<f64>> },
    /// JSON array of points.
    File { path: PathBuf },
}

fn to_point(p: &[f64]) -> Result<Point, CliError> {
    match p {
        [x] => Ok([*x, 0.0]),
        [x, y] => Ok([*x, *y]),
        _ => Err(CliError::Config(format!("sensor point must have 1 or 2 coordinates, got {}", p.len()))),
    }
}

impl SensorSpec {
    pub fn default_for(problem: Problem) -> Self {
        match problem {
            Problem::Rod1d => SensorSpec::Uniform { count: 16 },
            Problem::Conduct2d => SensorSpec::Grid { nx: 8, ny: 9 },
        }
    }

    pub fn layout(&self, base: &Path) -> Result<SensorLayout, CliError> {
        let locations = match self {
            SensorSpec::Uniform { count } => (1..=*count).map(|i| [i as f64 / *count as f64, 0.0]).collect(),
            SensorSpec::Grid { nx, ny } => {
                if *ny < 2 {
                    return Err(CliError::Config("sensor grid needs ny >= 2".into()));
                }
                let mut pts = Vec::with_capacity(nx * ny);
                for i in 1..=*nx {
                    for j in 0..*ny {
                        pts.push([i as f64 / *nx as f64, j as f64 / (*ny - 1) as f64]);
                    }
                }
                pts
            }
            SensorSpec::Points { points } => points.iter().map(|p| to_point(p)).collect::<Result<_, _>>()?,
            SensorSpec::File { path } => {
                let path = base.join(path);
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read sensor file {}: {e}", path.display())))?;
                let points: Vec<Vec<f64>> = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("bad sensor file {}: {e}", path.display())))?;
                points.iter().map(|p| to_point(p)).collect::<Result<_, _>>()?
            }
        };
        Ok(SensorLayout::new(locations))
    }
}

/// A parsed configuration plus where it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    /// SHA-256 of the canonical JSON form of `config`.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        let cfg: RunConfig = if json {
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.levels.is_empty() {
            return bad("`levels` must list at least one resolution".into());
        }
        if self.levels.contains(&0) {
            return bad("level resolutions must be positive".into());
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("`levels` must be strictly increasing".into());
        }
        self.hyperparams.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.smc.n_particles < 2 {
            return bad("`smc.n_particles` must be at least 2".into());
        }
        if let Some(w) = &self.cost_weights {
            if w.len() != self.levels.len() || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("`cost_weights` needs one nonnegative weight per level".into());
            }
        }
        if !(self.flux.is_finite() && self.flux != 0.0) {
            return bad("`flux` must be finite and nonzero".into());
        }
        if !(self.synth.noise_frac >= 0.0 && self.synth.noise_frac.is_finite()) {
            return bad("`synth.noise_frac` must be nonnegative".into());
        }
        if self.report.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("report quantiles must lie in [0, 1]".into());
        }
        if self.solver.cg_max_iterations == 0 || !(self.solver.cg_tolerance > 0.0) {
            return bad("solver settings must be positive".into());
        }
        Ok(())
    }

    pub fn sensor_spec(&self) -> SensorSpec {
        self.sensors.clone().unwrap_or_else(|| SensorSpec::default_for(self.problem))
    }

    pub fn cost_weight(&self, index: usize) -> f64 {
        self.cost_weights.as_ref().map_or(1.0, |w| w[index])
    }

    pub fn cg(&self) -> CgSettings {
        CgSettings { tolerance: self.solver.cg_tolerance, max_iterations: self.solver.cg_max_iterations }
    }

    pub fn boundary(&self) -> Boundary {
        Boundary { flux: self.flux }
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config = RunConfig::parse(&text, json)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(config, base_dir))
    }

    pub fn new(config: RunConfig, base_dir: PathBuf) -> Self {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        Self { hash: sha256_hex(&canonical), config, base_dir }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn data_path(&self) -> Result<PathBuf, CliError> {
        self.config
            .data
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config("`data` (observation file) is not set".into()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }

    pub fn sensors(&self) -> Result<SensorLayout, CliError> {
        let layout = self.config.sensor_spec().layout(&self.base_dir)?;
        layout.validate(self.config.problem.domain()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("problem = \"conduct2d\"\nlevels = [8, 16, 32]\ndata = \"obs.json\"\n", false).unwrap();
        assert_eq!(cfg.hyperparams, Hyperparams::default());
        assert_eq!(cfg.smc.n_particles, 100);
        assert_eq!(cfg.smc.n_sweeps, 5);
        assert_eq!(cfg.upscale, Upscale::LogMean);
        assert_eq!(cfg.sensor_spec().layout(Path::new(".")).unwrap().len(), 72);
    }

    #[test]
    fn json_is_accepted() {
        let cfg = RunConfig::parse(r#"{"problem": "rod1d", "levels": [8], "hyperparams": {"s": 0.5}}"#, true).unwrap();
        assert_eq!(cfg.hyperparams.s, 0.5);
        assert_eq!(cfg.hyperparams.a_mu, 1e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("problem = \"rod1d\"\nlevels = [8]\nparticles = 5\n", false).is_err());
        assert!(RunConfig::parse("problem = \"rod1d\"\nlevels = [8]\n[hyperparams]\nzeta2 = 1\n", false).is_err());
        assert!(RunConfig::parse("problem = \"rod1d\"\nlevels = [8]\n[smc]\nparticles = 5\n", false).is_err());
    }

    #[test]
    fn levels_must_increase() {
        assert!(RunConfig::parse("problem = \"rod1d\"\nlevels = [16, 8]\n", false).is_err());
        assert!(RunConfig::parse("problem = \"rod1d\"\nlevels = []\n", false).is_err());
    }

    #[test]
    fn sensor_layouts() {
        let base = Path::new(".");
        let rod = SensorSpec::Uniform { count: 4 }.layout(base).unwrap();
        assert_eq!(rod.locations, vec![[0.25, 0.0], [0.5, 0.0], [0.75, 0.0], [1.0, 0.0]]);
        let grid = SensorSpec::Grid { nx: 2, ny: 3 }.layout(base).unwrap();
        assert_eq!(grid.locations[0], [0.5, 0.0]);
        assert_eq!(grid.locations[5], [1.0, 1.0]);
        let pts = SensorSpec::Points { points: vec![vec![0.3], vec![0.1, 0.2]] }.layout(base).unwrap();
        assert_eq!(pts.locations, vec![[0.3, 0.0], [0.1, 0.2]]);
    }
}
