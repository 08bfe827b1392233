use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::FeatureKind;
use crate::eval::ActionMode;
use crate::gridhouse::{HouseParams, RenderConfig};
use crate::perception::{PerceptionTrainConfig, DEFAULT_BACKGROUND_CAP, DEFAULT_LAMBDA};
use crate::state::SecondChannel;
use crate::trainer::TrainConfig;

/// Whole-run configuration, read from TOML. Every key is optional; unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// `objects`, `environments`, or absent for "train and evaluate on every pair".
    pub setting: Option<Setting>,
    pub houses: HousesSection,
    pub split: SplitSection,
    pub render: RenderSection,
    pub perception: PerceptionSection,
    pub policy: PolicySection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            setting: None,
            houses: HousesSection::default(),
            split: SplitSection::default(),
            render: RenderSection::default(),
            perception: PerceptionSection::default(),
            policy: PolicySection::default(),
            eval: EvalSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// One house; some targets trained, the rest held out.
    Objects,
    /// Several houses; some trained, the rest held out.
    Environments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HousesSection {
    /// Houses to generate when `files` is empty.
    pub count: usize,
    /// Layout files to load instead of generating.
    pub files: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
    pub room_min: usize,
    pub room_max: usize,
    pub objects: usize,
    pub object_max_cells: usize,
    pub label_pool: Vec<String>,
}

impl Default for HousesSection {
    fn default() -> Self {
        HousesSection::from_params(1, &HouseParams::default())
    }
}

impl HousesSection {
    pub fn from_params(count: usize, p: &HouseParams) -> Self {
        HousesSection {
            count,
            files: Vec::new(),
            width: p.width,
            height: p.height,
            rooms: p.rooms,
            room_min: p.room_min,
            room_max: p.room_max,
            objects: p.objects,
            object_max_cells: p.object_max_cells,
            label_pool: p.label_pool.clone(),
        }
    }

    pub fn params(&self) -> HouseParams {
        HouseParams {
            width: self.width,
            height: self.height,
            rooms: self.rooms,
            room_min: self.room_min,
            room_max: self.room_max,
            objects: self.objects,
            object_max_cells: self.object_max_cells,
            label_pool: self.label_pool.clone(),
        }
    }
}

/// Train/held-out split sizes used by the two settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_targets: usize,
    pub test_targets: usize,
    pub train_houses: usize,
    pub test_houses: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_targets: 3,
            test_targets: 2,
            train_houses: 3,
            test_houses: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub max_range: f64,
    pub wall_height: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        let r = RenderConfig::default();
        RenderSection {
            width: r.width,
            height: r.height,
            fov_deg: r.fov_deg,
            max_range: r.max_range,
            wall_height: r.wall_height,
        }
    }
}

impl RenderSection {
    pub fn config(&self) -> RenderConfig {
        RenderConfig {
            width: self.width,
            height: self.height,
            fov_deg: self.fov_deg,
            max_range: self.max_range,
            wall_height: self.wall_height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionSection {
    /// Square input side; a multiple of 4.
    pub image_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub background_cap: f64,
    pub sample_cap: usize,
    /// Share of frames held out for the accuracy/IoU/RMSE report.
    pub holdout_fraction: f64,
}

impl Default for PerceptionSection {
    fn default() -> Self {
        let t = PerceptionTrainConfig::default();
        PerceptionSection {
            image_size: 32,
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            lambda: DEFAULT_LAMBDA,
            background_cap: DEFAULT_BACKGROUND_CAP,
            sample_cap: 500,
            holdout_fraction: 0.2,
        }
    }
}

impl PerceptionSection {
    pub fn train_config(&self, seed: u64) -> PerceptionTrainConfig {
        PerceptionTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            lambda: self.lambda,
            seed,
        }
    }

    pub fn render_config(&self, render: &RenderSection) -> RenderConfig {
        RenderConfig {
            width: self.image_size,
            height: self.image_size,
            ..render.config()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    #[default]
    GroundTruth,
    Noisy,
    Predicted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    #[default]
    Depth,
    Gray,
}

impl From<Channel> for SecondChannel {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Depth => SecondChannel::Depth,
            Channel::Gray => SecondChannel::Gray,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub n_workers: usize,
    pub rollout_len: usize,
    pub max_env_steps: u64,
    pub lr: f64,
    pub gamma: f64,
    pub beta_entropy: f64,
    pub value_coeff: f64,
    pub grad_clip: f64,
    pub episode_step_cap: usize,
    pub log_interval: u64,
    pub checkpoint_every: u64,
    pub observation: ObservationKind,
    pub second_channel: Channel,
    /// Noise model for `observation = "noisy"`.
    pub flip_p: f64,
    pub depth_sigma: f64,
    /// Perception checkpoint for `observation = "predicted"`; defaults to
    /// `<out-dir>/perception.ckpt`.
    pub perception_checkpoint: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        let t = TrainConfig::default();
        PolicySection {
            n_workers: t.n_workers,
            rollout_len: t.rollout_len,
            max_env_steps: t.max_env_steps,
            lr: t.lr,
            gamma: t.gamma,
            beta_entropy: t.beta_entropy,
            value_coeff: t.value_coeff,
            grad_clip: t.grad_clip,
            episode_step_cap: t.episode_step_cap,
            log_interval: t.log_interval,
            checkpoint_every: t.checkpoint_every,
            observation: ObservationKind::GroundTruth,
            second_channel: Channel::Depth,
            flip_p: 0.1,
            depth_sigma: 0.05,
            perception_checkpoint: None,
        }
    }
}

impl PolicySection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_workers: self.n_workers,
            rollout_len: self.rollout_len,
            max_env_steps: self.max_env_steps,
            lr: self.lr,
            gamma: self.gamma,
            beta_entropy: self.beta_entropy,
            value_coeff: self.value_coeff,
            grad_clip: self.grad_clip,
            episode_step_cap: self.episode_step_cap,
            seed,
            log_interval: self.log_interval,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sample,
    Greedy,
}

impl From<Mode> for ActionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sample => ActionMode::Sample,
            Mode::Greedy => ActionMode::Greedy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_starts: usize,
    pub cap: usize,
    pub mode: Mode,
    /// Policy checkpoint; defaults to `<out-dir>/policy.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Also evaluate the uniform random policy on the same starts.
    pub random_baseline: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_starts: crate::eval::DEFAULT_STARTS,
            cap: crate::eval::DEFAULT_CAP,
            mode: Mode::Sample,
            checkpoint: None,
            random_baseline: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extractor {
    #[default]
    Depth10,
    Gray10,
}

impl From<Extractor> for FeatureKind {
    fn from(e: Extractor) -> Self {
        match e {
            Extractor::Depth10 => FeatureKind::Depth10,
            Extractor::Gray10 => FeatureKind::Gray10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub extractors: Vec<Extractor>,
    pub max_steps: usize,
    pub sample_cap: usize,
    /// Houses for the analysis; rooms are larger than the training houses so
    /// that the distance range fits inside one room.
    pub houses: HousesSection,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            extractors: vec![Extractor::Depth10, Extractor::Gray10],
            max_steps: 9,
            sample_cap: 20_000,
            houses: HousesSection::from_params(5, &analysis_house_params()),
        }
    }
}

pub fn analysis_house_params() -> HouseParams {
    HouseParams {
        width: 24,
        height: 24,
        rooms: 2,
        room_min: 6,
        room_max: 10,
        ..HouseParams::default()
    }
}

/// Single house with two targets, sized for a short training run.
pub fn small_house_params() -> HouseParams {
    HouseParams {
        width: 11,
        height: 11,
        rooms: 2,
        room_min: 3,
        room_max: 4,
        objects: 2,
        ..HouseParams::default()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Preset values for a setting: objects uses one house with enough
    /// targets for the split, environments uses several houses.
    pub fn apply_setting(&mut self, setting: Setting) {
        self.setting = Some(setting);
        match setting {
            Setting::Objects => {
                self.houses.count = 1;
                self.houses.objects = self.houses.objects.max(self.split.train_targets + self.split.test_targets);
            }
            Setting::Environments => {
                self.houses.count = self.split.train_houses + self.split.test_houses;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.perception.image_size == 0 || self.perception.image_size % 4 != 0 {
            return bad(format!("perception.image_size must be a positive multiple of 4, got {}", self.perception.image_size));
        }
        if !(0.0..1.0).contains(&self.perception.holdout_fraction) {
            return bad("perception.holdout_fraction must lie in [0, 1)".into());
        }
        if self.render.width < crate::state::GRID || self.render.height < crate::state::GRID {
            return bad(format!("render size must be at least {0}x{0}", crate::state::GRID));
        }
        if !(0.0..1.0).contains(&self.policy.flip_p) || self.policy.depth_sigma < 0.0 {
            return bad("policy.flip_p must lie in [0, 1) and policy.depth_sigma be non-negative".into());
        }
        if self.eval.n_starts == 0 || self.eval.cap == 0 {
            return bad("eval.n_starts and eval.cap must be positive".into());
        }
        if self.houses.files.is_empty() && self.houses.count == 0 {
            return bad("houses.count must be positive when no layout files are given".into());
        }
        self.policy
            .train_config(self.seed)
            .validate()
            .or_else(|e| bad(format!("policy: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridhouse::default_label_pool;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::parse("", Path::new("x.toml")).unwrap(), RunConfig::default());
    }

    #[test]
    fn default_round_trips() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_toml(), Path::new("x.toml")).unwrap(), d);
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let text = "seed = 3\n\n[policy]\nlerning_rate = 0.1\n";
        let err = RunConfig::parse(text, Path::new("run.toml")).unwrap_err().to_string();
        assert!(err.contains("lerning_rate"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn sections_override_defaults() {
        let text = "setting = \"objects\"\n[policy]\nlr = 0.2\nsecond_channel = \"gray\"\n[analysis]\nextractors = [\"gray10\"]\n";
        let c = RunConfig::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.setting, Some(Setting::Objects));
        assert_eq!(c.policy.lr, 0.2);
        assert_eq!(c.policy.second_channel, Channel::Gray);
        assert_eq!(c.analysis.extractors, vec![Extractor::Gray10]);
        assert_eq!(c.policy.gamma, TrainConfig::default().gamma);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in ["[perception]\nimage_size = 30\n", "[policy]\ngamma = 1.5\n", "[eval]\ncap = 0\n"] {
            assert!(matches!(RunConfig::parse(text, Path::new("x.toml")), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn settings_size_the_house_set() {
        let mut c = RunConfig::default();
        c.apply_setting(Setting::Environments);
        assert_eq!(c.houses.count, 5);
        let mut c = RunConfig::default();
        c.apply_setting(Setting::Objects);
        assert_eq!((c.houses.count, c.houses.objects), (1, 5));
        assert!(c.houses.label_pool == default_label_pool());
    }
}
