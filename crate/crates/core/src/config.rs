//! Pipeline configuration: one TOML file with a section per subcommand.
//! Unknown keys are rejected; relative paths resolve against the config
//! file's directory; `INVLOC_OUT` overrides the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cyclegan::{GanTrainConfig, LayerName};
use crate::datasets::{Layout, SubsetMode, SynthConfig};
use crate::error::{Error, IoContext, Result};
use crate::features::Fusion;
use crate::posereg::PoseTrainConfig;

pub const OUTPUT_ENV: &str = "INVLOC_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every stochastic component; overrides per-section seeds.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub gan: GanSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub placerec: PlaceRecSection,
    #[serde(default)]
    pub pose: PoseSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Image root; defaults to `<output_dir>/data`, where `synth` writes.
    pub root: Option<PathBuf>,
    pub layout: Layout,
    /// Side length images are resized to on load.
    pub size: usize,
    /// Parameters for `synth`.
    pub synthetic: SynthConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: None,
            layout: Layout::PerCondition,
            size: 64,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    /// Conditions pooled into domain A.
    pub domain_a: Vec<String>,
    /// Condition forming domain B.
    pub domain_b: String,
    pub train: GanTrainConfig,
}

impl Default for GanSection {
    fn default() -> Self {
        Self {
            domain_a: ["spring", "summer", "fall"].map(String::from).to_vec(),
            domain_b: "winter".into(),
            train: GanTrainConfig {
                image_size: 64,
                ..Default::default()
            },
        }
    }
}

/// `"auto"` (use the analysis result) or a layer name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerChoice {
    #[default]
    Auto,
    Layer(LayerName),
}

impl TryFrom<String> for LayerChoice {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        if s == "auto" {
            Ok(LayerChoice::Auto)
        } else {
            Ok(LayerChoice::Layer(s.parse()?))
        }
    }
}

impl From<LayerChoice> for String {
    fn from(c: LayerChoice) -> String {
        match c {
            LayerChoice::Auto => "auto".into(),
            LayerChoice::Layer(l) => l.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub layer: LayerChoice,
    /// Layers compared by `analyze-layers`; empty means all of them.
    pub layers: Vec<LayerName>,
    /// Condition pair used for the layer analysis.
    pub query: String,
    pub database: String,
    /// Frames per condition used for the analysis (0 = all).
    pub subset: usize,
    pub subset_mode: SubsetMode,
    pub fusion: Fusion,
    /// Cache fusion maps under `<output_dir>/features/cache`.
    pub cache: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            layer: LayerChoice::Auto,
            layers: Vec::new(),
            query: "summer".into(),
            database: "winter".into(),
            subset: 0,
            subset_mode: SubsetMode::Strided,
            fusion: Fusion::Sum,
            cache: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceRecSection {
    /// Conditions to compare pairwise; empty means every dataset condition.
    pub conditions: Vec<String>,
    /// Database positions around a true match that also count as correct.
    pub tolerance: usize,
    /// Explicit thresholds; absent means every distinct score.
    pub thresholds: Option<Vec<f64>>,
    pub subset: usize,
    pub subset_mode: SubsetMode,
    /// Queries shown in the top-1 match grid.
    pub grid_queries: usize,
    /// Pair queries and database frames by pose distance (metres) instead
    /// of the correspondence file.
    pub align_max_dist: Option<f64>,
    /// Read `<dir>/<query>__<database>.bin` score matrices instead of
    /// computing them.
    pub import_dir: Option<PathBuf>,
}

impl Default for PlaceRecSection {
    fn default() -> Self {
        Self {
            conditions: Vec::new(),
            tolerance: 0,
            thresholds: None,
            subset: 0,
            subset_mode: SubsetMode::Strided,
            grid_queries: 8,
            align_max_dist: None,
            import_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSection {
    pub train_conditions: Vec<String>,
    pub eval_conditions: Vec<String>,
    /// Also train the RGB baselines.
    pub baselines: bool,
    /// Conditions pooled for the multi-condition RGB baseline; empty means
    /// every condition not used for evaluation.
    pub pooled_conditions: Vec<String>,
    pub train: PoseTrainConfig,
}

impl Default for PoseSection {
    fn default() -> Self {
        Self {
            train_conditions: vec!["summer".into()],
            eval_conditions: vec!["winter".into()],
            baselines: true,
            pooled_conditions: Vec::new(),
            train: PoseTrainConfig {
                input_size: 64,
                ..Default::default()
            },
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text; `base` anchors relative paths.
    pub fn from_toml(text: &str, base: &Path, path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        if let Ok(out) = std::env::var(OUTPUT_ENV) {
            if !out.is_empty() {
                cfg.output_dir = PathBuf::from(out);
            }
        }
        cfg.resolve(base);
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, path)
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.output_dir);
        if let Some(r) = self.dataset.root.as_mut() {
            abs(r);
        }
        if let Some(d) = self.placerec.import_dir.as_mut() {
            abs(d);
        }
    }

    fn propagate_seed(&mut self) {
        self.dataset.synthetic.seed = self.seed;
        self.gan.train.seed = self.seed;
        self.pose.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let mut train = self.gan.train.clone();
        if self.dataset.size == 0 || !self.dataset.size.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "dataset.size must be a positive multiple of 4, got {}",
                self.dataset.size
            )));
        }
        train.max_iters = train.max_iters.max(1);
        train.validate()?;
        self.pose.train.validate()?;
        if self.gan.domain_a.is_empty() {
            return Err(Error::InvalidArgument("gan.domain_a is empty".into()));
        }
        for &l in &self.features.layers {
            if !train.generator_spec().contains(l) {
                return Err(Error::UnknownLayer(l.to_string()));
            }
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.dataset
            .root
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn gan_dir(&self) -> PathBuf {
        self.output_dir.join("gan")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output_dir.join("features").join("cache")
    }

    pub fn layers_dir(&self) -> PathBuf {
        self.output_dir.join("layers")
    }

    pub fn placerec_dir(&self) -> PathBuf {
        self.output_dir.join("placerec")
    }

    pub fn pose_dir(&self) -> PathBuf {
        self.output_dir.join("pose")
    }

    pub fn pose_eval_dir(&self) -> PathBuf {
        self.output_dir.join("pose_eval")
    }
}
