//! Run configuration: a TOML or JSON file, then command-line overrides,
//! then output-root resolution. The resolved value is what gets written
//! next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use duallora::adapters::{Combination, FusionKind, PromptMode, TargetProjections};
use duallora::dst::corpus::Corpus;
use duallora::dst::generator::generate;
use duallora::dst::{PretrainConfig, TrainConfig};
use duallora::{DualLoraConfig, Error, ModelConfig};
use serde::{Deserialize, Serialize};

/// Overrides the directory that relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "DUALLORA_OUTPUT_ROOT";

/// Name of the resolved-config snapshot in every output directory.
pub const SNAPSHOT: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSource {
    /// Load this corpus file instead of generating one.
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub per_domain: usize,
}

impl Default for CorpusSource {
    fn default() -> Self {
        Self {
            path: None,
            seed: 0,
            per_domain: 40,
        }
    }
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus> {
        match &self.path {
            Some(p) => Ok(Corpus::load(p)?),
            None => Ok(generate(self.seed, self.per_domain)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub max_new_tokens: usize,
    /// Lowercase and collapse whitespace before comparing values.
    pub normalize: bool,
    /// Only these slot keys; every slot of the domain when empty.
    pub slots: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_new_tokens: 4,
            normalize: true,
            slots: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    pub base: Option<PathBuf>,
    pub adapters: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSettings {
    /// Slot whose prompt is folded into the biases.
    pub slot: Option<String>,
    pub measure_latency: bool,
    pub warmup: usize,
    pub runs: usize,
}

impl Default for MergeSettings {
    fn default() -> Self {
        Self {
            slot: None,
            measure_latency: false,
            warmup: 20,
            runs: 200,
        }
    }
}

/// Which encoder input the attention dump looks at. Unset fields pick the
/// first held-out dialogue, its last turn and the first slot of the domain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnSettings {
    pub dialogue: Option<String>,
    pub turn: Option<usize>,
    pub slot: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    Rank,
    Placement,
    Fusion,
    Combination,
    NPromptLoras,
    PromptInput,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rank => "rank",
            SweepAxis::Placement => "placement",
            SweepAxis::Fusion => "fusion",
            SweepAxis::Combination => "combination",
            SweepAxis::NPromptLoras => "n_prompt_loras",
            SweepAxis::PromptInput => "prompt_input",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &DualLoraConfig, value: &str) -> duallora::Result<DualLoraConfig> {
        let mut c = base.clone();
        let bad = |what: &str| Error::Config(format!("'{value}' is not a valid {what}"));
        match self {
            SweepAxis::Rank => c.rank = value.parse().map_err(|_| bad("rank"))?,
            SweepAxis::Placement => c.target_projections = value.parse::<TargetProjections>()?,
            SweepAxis::Fusion => c.fusion = value.parse::<FusionKind>()?,
            SweepAxis::Combination => c.combination = value.parse::<Combination>()?,
            SweepAxis::NPromptLoras => {
                c.n_prompt_loras = value.parse().map_err(|_| bad("prompt adapter count"))?
            }
            SweepAxis::PromptInput => c.prompt_input = value.parse::<PromptMode>()?,
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Rank,
            values: ["8", "16", "32", "64"].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainWhat {
    /// Pretrain every backbone weight.
    Base,
    /// Train adapters on a frozen backbone.
    #[default]
    Adapters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSource,
    pub held_out: String,
    pub vocab_size: usize,
    pub model: ModelConfig,
    /// Backbone training (`train --target base`).
    pub pretrain: PretrainConfig,
    pub adapters: DualLoraConfig,
    /// Adapter training.
    pub train: TrainConfig,
    pub train_target: TrainWhat,
    pub eval: EvalSettings,
    pub checkpoints: CheckpointPaths,
    pub merge: MergeSettings,
    pub attn: AttnSettings,
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/latest"),
            corpus: CorpusSource::default(),
            held_out: "taxi".into(),
            vocab_size: 512,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            adapters: DualLoraConfig::default(),
            train: TrainConfig {
                steps: 600,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            train_target: TrainWhat::default(),
            eval: EvalSettings::default(),
            checkpoints: CheckpointPaths::default(),
            merge: MergeSettings::default(),
            attn: AttnSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

fn config_error(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file; other extensions are tried as TOML.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adapters.validate(self.model.d_model)?;
        self.train.validate()?;
        self.pretrain.train.validate()?;
        if self.merge.runs == 0 {
            return Err(config_error("merge.runs must be at least 1".into()));
        }
        if self.vocab_size != self.model.vocab_size {
            return Err(config_error(format!(
                "vocab_size {} differs from model.vocab_size {}",
                self.vocab_size, self.model.vocab_size
            )));
        }
        Ok(())
    }

    /// Joins a relative `output_dir` onto `root` (normally the value of
    /// [`OUTPUT_ROOT_ENV`]).
    pub fn resolve_output(&mut self, root: Option<&Path>) {
        if let Some(root) = root {
            if self.output_dir.is_relative() {
                self.output_dir = root.join(&self.output_dir);
            }
        }
    }

    /// Creates the output directory and writes the snapshot into it.
    pub fn prepare_output(&self) -> Result<PathBuf> {
        let dir = self.output_dir.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join(SNAPSHOT), self)?;
        Ok(dir)
    }

    pub fn base_checkpoint(&self) -> Result<&Path> {
        self.checkpoints
            .base
            .as_deref()
            .ok_or_else(|| config_error("no base checkpoint given (--base)".into()))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
