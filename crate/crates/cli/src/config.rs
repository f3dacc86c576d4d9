//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use charflow::analytic::{AnalyticFlow, SceneConfig};
use charflow::field::Domain;
use charflow::io::{EvalOptions, ExportKind, ImageFormat};
use charflow::nn::MlpSpec;
use charflow::radiance::{SceneSpec, StaticSpec};
use charflow::train::{FlowFitConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const DEFAULT_OUT: &str = "charflow-out";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Output directory, `charflow-out` next to the config file by default; `--out` overrides it.
    pub out: Option<PathBuf>,
    /// Checkpoint read by eval, export and pathlines. Defaults to `<out>/checkpoint.chk`.
    pub checkpoint: Option<PathBuf>,
    pub scene: SceneSection,
    pub model: ModelSection,
    pub fit: Option<FitSection>,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub export: ExportSection,
    pub pathlines: PathlineSection,
}

/// Where training images and ground truth come from. At most one of
/// `preset`, `config` and `dataset` may be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Built-in scene; only `mini_plume` exists.
    pub preset: Option<String>,
    /// Scene description in its own TOML file.
    pub config: Option<PathBuf>,
    /// Previously synthesized dataset directory.
    pub dataset: Option<PathBuf>,
    pub frames: Option<usize>,
    pub format: ImageFormat,
    pub seed: u64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { preset: None, config: None, dataset: None, frames: None, format: ImageFormat::Chgr, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleModel {
    /// Analytic SDF when the scene has an obstacle, otherwise none.
    Auto,
    Analytic,
    Learned,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub omega0: f64,
    pub encoder_omega0: f64,
    pub decoder_omega0: f64,
    pub obstacle: ObstacleModel,
    pub static_width: usize,
    /// Domain used when no scene is given.
    pub domain: Domain,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 64,
            omega0: 30.0,
            encoder_omega0: 10.0,
            decoder_omega0: 2.0,
            obstacle: ObstacleModel::Auto,
            static_width: 32,
            domain: Domain::default(),
        }
    }
}

/// Fit the trajectory field to a known flow before (or instead of) image
/// training. In TOML, `flow` sits next to the fit options in one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table", into = "toml::Table")]
pub struct FitSection {
    /// Defaults to the scene's flow.
    pub flow: Option<AnalyticFlow>,
    pub config: FlowFitConfig,
}

impl TryFrom<toml::Table> for FitSection {
    type Error = String;

    fn try_from(mut t: toml::Table) -> Result<Self, String> {
        let flow = match t.remove("flow") {
            Some(v) => Some(v.try_into().map_err(|e: toml::de::Error| e.to_string())?),
            None => None,
        };
        let config = toml::Value::Table(t).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        Ok(Self { flow, config })
    }
}

impl From<FitSection> for toml::Table {
    fn from(f: FitSection) -> Self {
        let mut t = toml::Table::try_from(&f.config).unwrap_or_default();
        if let Some(flow) = f.flow.and_then(|fl| toml::Value::try_from(fl).ok()) {
            t.insert("flow".into(), flow);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub what: ExportKind,
    pub res: [usize; 3],
    pub t: f64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { what: ExportKind::Density, res: [32; 3], t: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathlineSection {
    pub n: usize,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Default for PathlineSection {
    fn default() -> Self {
        Self { n: 100, t0: 0.0, t1: 1.0, steps: 50 }
    }
}

impl RunConfig {
    /// Parse `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        self.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT));
        fix(&mut self.out);
        fix(&mut self.checkpoint);
        fix(&mut self.scene.config);
        fix(&mut self.scene.dataset);
    }

    pub fn validate(&self) -> CliResult<()> {
        let s = &self.scene;
        let sources = [s.preset.is_some(), s.config.is_some(), s.dataset.is_some()].iter().filter(|b| **b).count();
        if sources > 1 {
            return Err(CliError::Config("[scene] takes only one of preset, config and dataset".into()));
        }
        if let Some(p) = &s.preset {
            if p != "mini_plume" {
                return Err(CliError::Config(format!("unknown scene preset {p:?}; expected \"mini_plume\"")));
            }
        }
        if self.model.width == 0 {
            return Err(CliError::Config("[model] width must be positive".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Apply `--seed` to every seeded section.
    pub fn set_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        if let Some(f) = &mut self.fit {
            f.config.seed = seed;
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir().join("checkpoint.chk"))
    }

    /// Scene description for `preset` or `config`; datasets carry their own.
    pub fn scene_config(&self) -> CliResult<Option<SceneConfig>> {
        let mut sc = if self.scene.preset.is_some() {
            SceneConfig::mini_plume()
        } else if let Some(p) = &self.scene.config {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        } else {
            return Ok(None);
        };
        if let Some(n) = self.scene.frames {
            sc.frames = n;
        }
        sc.validate()?;
        Ok(Some(sc))
    }

    pub fn scene_spec(&self, scene: Option<&SceneConfig>) -> SceneSpec {
        let m = &self.model;
        let obstacle = scene.and_then(|s| s.obstacle.clone());
        let st = |analytic| StaticSpec { analytic, color_width: m.static_width, ..StaticSpec::default() };
        let static_branch = match m.obstacle {
            ObstacleModel::Auto => obstacle.map(|o| st(Some(o))),
            ObstacleModel::Analytic => obstacle.map(|o| st(Some(o))),
            ObstacleModel::Learned => Some(st(None)),
            ObstacleModel::None => None,
        };
        let mut spec = SceneSpec::with_width(m.width, m.omega0, static_branch);
        spec.field.encoder = MlpSpec { omega0: m.encoder_omega0, ..spec.field.encoder };
        spec.field.decoder = MlpSpec { omega0: m.decoder_omega0, ..spec.field.decoder };
        spec
    }
}
