//! Run configuration, read from a TOML file.
//!
//! Only `[potential]` is required. Defaults:
//!
//! | key | default |
//! |---|---|
//! | `seed` | 0 |
//! | `output_dir` | `"out"` |
//! | `methods` | dobrushin-limit, cluster-expansion, disagreement-percolation |
//! | `beta.min`, `beta.max`, `beta.count`, `beta.spacing` | 0.01, 3.0, 60, `"linear"` |
//! | `meshes.values` | `[0.5, 0.35, 0.2, 0.1] * alpha / sqrt(d)` |
//! | `meshes.beta` | 1.0 |
//! | `meshes.modes` | `["upper", "lower"]` |
//! | `tolerances.quadrature` | 1e-9 |
//! | `tolerances.activity` | 1e-6 |
//! | `tolerances.regularity` | 1e-3 |
//! | `sampler.activity`, `sampler.beta` | 0.2, 1.0 |
//! | `sampler.window` | 5.0 |
//! | `sampler.steps`, `sampler.burn_in` | 200000, 10% of steps |
//! | `sampler.record_every` | 100 |
//! | `sampler.center_fraction` | 0.5 |
//! | `sampler.boundary` | `"empty"` |
//! | `sampler.move_mix` | birth 0.4, death 0.4, translate 0.2 |
//! | `sampler.probe_windows` | `[3.0, 5.0, 7.0]` |

use std::path::{Path, PathBuf};

use gibbs_uniqueness::criteria::Method;
use gibbs_uniqueness::dobrushin_grid::SumMode;
use gibbs_uniqueness::potentials::PairPotential;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKindSpec {
    HardSphere,
    HardCoreStep,
    Strauss,
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKindSpec,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Hard-core radius `alpha`.
    pub radius: Option<f64>,
    pub height: Option<f64>,
    pub range: Option<f64>,
}

fn default_dimension() -> usize {
    2
}

impl PotentialSpec {
    pub fn build(&self) -> Result<PairPotential<f64>, CliError> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| CliError::Config(format!("potential.{key} is required for {:?}", self.kind)))
        };
        let forbid = |v: Option<f64>, key: &str| match v {
            Some(_) => Err(CliError::Config(format!("potential.{key} does not apply to {:?}", self.kind))),
            None => Ok(()),
        };
        let d = self.dimension;
        let p = match self.kind {
            PotentialKindSpec::HardSphere => {
                forbid(self.height, "height")?;
                forbid(self.range, "range")?;
                PairPotential::hard_sphere(need(self.radius, "radius")?, d)
            }
            PotentialKindSpec::HardCoreStep => PairPotential::hard_core_step(
                need(self.radius, "radius")?,
                need(self.height, "height")?,
                need(self.range, "range")?,
                d,
            ),
            PotentialKindSpec::Strauss => {
                forbid(self.radius, "radius")?;
                PairPotential::strauss(need(self.height, "height")?, need(self.range, "range")?, d)
            }
            PotentialKindSpec::Ideal => {
                forbid(self.radius, "radius")?;
                forbid(self.height, "height")?;
                forbid(self.range, "range")?;
                PairPotential::ideal(d)
            }
        };
        p.map_err(|e| CliError::Config(format!("potential: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self { min: 0.01, max: 3.0, count: 60, spacing: Spacing::Linear }
    }
}

impl BetaGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                let t = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.min + (self.max - self.min) * t,
                    Spacing::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSettings {
    /// Absolute mesh sizes; `None` picks fractions of `alpha / sqrt(d)`.
    pub values: Option<Vec<f64>>,
    pub beta: f64,
    pub modes: Vec<String>,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self { values: None, beta: 1.0, modes: vec!["upper".into(), "lower".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub quadrature: f64,
    /// Bisection width for `z_bar(a)`.
    pub activity: f64,
    /// Gap below which (A3) is reported as converged.
    pub regularity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { quadrature: 1e-9, activity: 1e-6, regularity: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySpec {
    #[default]
    Empty,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveMixSpec {
    pub birth: f64,
    pub death: f64,
    pub translate: f64,
}

impl Default for MoveMixSpec {
    fn default() -> Self {
        Self { birth: 0.4, death: 0.4, translate: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub activity: f64,
    pub beta: f64,
    /// Side of the cubic window.
    pub window: f64,
    pub steps: usize,
    pub burn_in: Option<usize>,
    pub record_every: usize,
    pub center_fraction: f64,
    pub boundary: BoundarySpec,
    pub move_mix: MoveMixSpec,
    pub probe_windows: Vec<f64>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            activity: 0.2,
            beta: 1.0,
            window: 5.0,
            steps: 200_000,
            burn_in: None,
            record_every: 100,
            center_fraction: 0.5,
            boundary: BoundarySpec::Empty,
            move_mix: MoveMixSpec::default(),
            probe_windows: vec![3.0, 5.0, 7.0],
        }
    }
}

impl SamplerSettings {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }
}

fn default_methods() -> Vec<String> {
    ["dobrushin-limit", "cluster-expansion", "disagreement-percolation"].map(String::from).to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub beta: BetaGrid,
    #[serde(default)]
    pub meshes: MeshSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn invalid(msg: String) -> CliError {
    CliError::Config(msg)
}

fn positive(value: f64, path: &str) -> Result<(), CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{path} must be positive and finite, got {value}")))
    }
}

/// Absolute tolerances below this cannot be met in double precision.
pub const MIN_TOLERANCE: f64 = 1e-14;

fn tolerance(value: f64, path: &str) -> Result<(), CliError> {
    positive(value, path)?;
    if value < MIN_TOLERANCE {
        return Err(invalid(format!("{path} ({value:e}) is below the attainable floor {MIN_TOLERANCE:e}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>, CliError> {
        self.methods
            .iter()
            .enumerate()
            .map(|(k, m)| m.parse().map_err(|_| invalid(format!("methods[{k}]: unknown method `{m}`"))))
            .collect()
    }

    pub fn parsed_modes(&self) -> Result<Vec<SumMode>, CliError> {
        self.meshes
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| m.parse().map_err(|_| invalid(format!("meshes.modes[{k}]: unknown mode `{m}`"))))
            .collect()
    }

    /// Mesh list, coarsest first.
    pub fn mesh_values(&self) -> Result<Vec<f64>, CliError> {
        let mut values = match &self.meshes.values {
            Some(v) => v.clone(),
            None => {
                let alpha = self.potential.build()?.hard_core_radius();
                if !(alpha > 0.0) {
                    return Err(invalid("meshes.values has no default without a hard core; set it explicitly".into()));
                }
                let unit = alpha / (self.potential.dimension as f64).sqrt();
                [0.5, 0.35, 0.2, 0.1].iter().map(|f| f * unit).collect()
            }
        };
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite meshes"));
        Ok(values)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.potential.build()?;
        if self.methods.is_empty() {
            return Err(invalid("methods must not be empty".into()));
        }
        self.parsed_methods()?;

        let b = &self.beta;
        positive(b.min, "beta.min")?;
        positive(b.max, "beta.max")?;
        if b.min > b.max {
            return Err(invalid(format!("beta.min ({}) must not exceed beta.max ({})", b.min, b.max)));
        }
        if b.count == 0 {
            return Err(invalid("beta.count must be at least 1".into()));
        }

        if let Some(values) = &self.meshes.values {
            if values.is_empty() {
                return Err(invalid("meshes.values must not be empty".into()));
            }
            for (k, &a) in values.iter().enumerate() {
                positive(a, &format!("meshes.values[{k}]"))?;
            }
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("meshes.values must be distinct".into()));
            }
        }
        positive(self.meshes.beta, "meshes.beta")?;
        if self.meshes.modes.is_empty() {
            return Err(invalid("meshes.modes must not be empty".into()));
        }
        self.parsed_modes()?;

        let t = &self.tolerances;
        tolerance(t.quadrature, "tolerances.quadrature")?;
        tolerance(t.activity, "tolerances.activity")?;
        tolerance(t.regularity, "tolerances.regularity")?;

        let s = &self.sampler;
        if !(s.activity >= 0.0 && s.activity.is_finite()) {
            return Err(invalid(format!("sampler.activity must be non-negative, got {}", s.activity)));
        }
        positive(s.beta, "sampler.beta")?;
        positive(s.window, "sampler.window")?;
        if s.steps <= s.burn_in() {
            return Err(invalid(format!("sampler.steps ({}) must exceed sampler.burn_in ({})", s.steps, s.burn_in())));
        }
        if s.record_every == 0 {
            return Err(invalid("sampler.record_every must be at least 1".into()));
        }
        if !(s.center_fraction > 0.0 && s.center_fraction <= 1.0) {
            return Err(invalid(format!("sampler.center_fraction must lie in (0, 1], got {}", s.center_fraction)));
        }
        let m = &s.move_mix;
        for (v, key) in [(m.birth, "birth"), (m.death, "death"), (m.translate, "translate")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("sampler.move_mix.{key} must be non-negative, got {v}")));
            }
        }
        if ((m.birth + m.death + m.translate) - 1.0).abs() > 1e-9 {
            return Err(invalid("sampler.move_mix probabilities must sum to 1".into()));
        }
        if s.probe_windows.is_empty() {
            return Err(invalid("sampler.probe_windows must not be empty".into()));
        }
        for (k, &w) in s.probe_windows.iter().enumerate() {
            positive(w, &format!("sampler.probe_windows[{k}]"))?;
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir must not be empty".into()));
        }
        Ok(())
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}
