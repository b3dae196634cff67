//! Run configuration: JSON with unknown keys rejected, embedded presets, and
//! command-line overrides applied last.

use std::path::{Path, PathBuf};

use benchsim_core::liesym::InversionConfig;
use benchsim_core::mlmc::MlmcConfig;
use benchsim_core::pricing::{McConfig, PayoffKind, PayoffSpec};
use benchsim_core::processes::MmmParams;
use benchsim_core::wishart::{BivariateMmmParams, WishartParams};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

const PRESETS: [(&str, &str); 3] = [
    ("stylized", include_str!("../presets/stylized.json")),
    ("bivariate", include_str!("../presets/bivariate.json")),
    ("wishart", include_str!("../presets/wishart.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub payoff: PayoffSpec,
    /// Estimator; absent means the natural one for the payoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodName>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub mlmc: MlmcConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Mmm(MmmParams),
    Bivariate(BivariateMmmParams),
    Wishart(WishartConfig),
}

impl ModelConfig {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Mmm(_) => ModelFamily::Mmm,
            Self::Bivariate(_) => ModelFamily::Bivariate,
            Self::Wishart(_) => ModelFamily::Wishart,
        }
    }

    fn stylized(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Mmm => Self::Mmm(MmmParams::stylized()),
            ModelFamily::Bivariate => Self::Bivariate(BivariateMmmParams::stylized()),
            ModelFamily::Wishart => Self::Wishart(WishartConfig::squared_brownian(4.0, 2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Mmm,
    Bivariate,
    Wishart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WishartScheme {
    /// Exact: matrix-Brownian squaring when `a = I, b = 0`, OU squares
    /// otherwise; needs an integer `alpha`. Falls back to Euler if not.
    #[default]
    Auto,
    Euler,
}

/// Wishart parameters as plain nested arrays. Given only `d`, the process
/// is the squared Brownian motion started at `I_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WishartConfig {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub scheme: WishartScheme,
    #[serde(default = "default_substeps")]
    pub euler_substeps: usize,
}

fn default_substeps() -> usize {
    20
}

impl WishartConfig {
    pub fn squared_brownian(alpha: f64, d: usize) -> Self {
        Self { alpha, d: Some(d), a: None, b: None, x0: None, scheme: WishartScheme::Auto, euler_substeps: default_substeps() }
    }

    pub fn dim(&self) -> Result<usize, CliError> {
        let from_mats = [&self.x0, &self.a, &self.b].into_iter().flatten().map(|m| m.len()).next();
        match (self.d, from_mats) {
            (Some(d), Some(m)) if d != m => Err(CliError::config(format!("model.d = {d} disagrees with matrix dimension {m}"))),
            (Some(d), _) | (None, Some(d)) if d > 0 => Ok(d),
            _ => Err(CliError::config("wishart model needs d or matrices a, b, x0")),
        }
    }

    pub fn params(&self) -> Result<WishartParams, CliError> {
        let d = self.dim()?;
        let mat = |m: &Option<Vec<Vec<f64>>>, name: &str, default: DMatrix<f64>| -> Result<DMatrix<f64>, CliError> {
            match m {
                None => Ok(default),
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(CliError::config(format!("model.{name} must be {d}x{d}")));
                    }
                    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
                }
            }
        };
        let a = mat(&self.a, "a", DMatrix::identity(d, d))?;
        let b = mat(&self.b, "b", DMatrix::zeros(d, d))?;
        let x0 = mat(&self.x0, "x0", DMatrix::identity(d, d))?;
        Ok(WishartParams::new(self.alpha, a, b, x0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Mc,
    Quadrature,
    Mlmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Time steps of simulated paths.
    pub steps: usize,
    /// Density grid sizes in `y` and `v`.
    pub ny: usize,
    pub nv: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { steps: 50, ny: 121, nv: 121 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
    /// Paths written to the path file; summaries use every path.
    pub max_paths_written: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), format: Format::Csv, max_paths_written: 1000 }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|p| p.1)
            .ok_or_else(|| CliError::config(format!("unknown preset `{name}`; available: {}", preset_names().join(", "))))?;
        Self::parse(text, &format!("preset {name}"))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses JSON, reporting the key path and line/column of the first
    /// error.
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let at = if path == "." { String::new() } else { format!(" at `{path}`") };
            CliError::config(format!("{source}{at}: {inner}"))
        })?;
        de.end().map_err(|e| CliError::config(format!("{source}: {e}")))?;
        Ok(cfg)
    }

    /// Replaces the model with the stylized member of `family` unless it
    /// already belongs to it.
    pub fn ensure_family(&mut self, family: ModelFamily) {
        if self.model.family() != family {
            self.model = ModelConfig::stylized(family);
        }
    }

    pub fn set_payoff_kind(&mut self, kind: PayoffKind) {
        self.payoff.kind = kind;
        if kind == PayoffKind::FxCall {
            self.ensure_family(ModelFamily::Bivariate);
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
