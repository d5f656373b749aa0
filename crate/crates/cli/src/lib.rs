//! Command-line front end: corpus generation, training, evaluation,
//! merging, attention dumps and ablation sweeps.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure during training, 1 anything else (I/O).

pub mod commands;
pub mod config;
pub mod latency;

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use duallora::adapters::{Combination, FusionKind, PromptMode, TargetProjections};
use duallora::Error;

use config::{RunConfig, SweepAxis, TrainWhat};

#[derive(Debug, Parser)]
#[command(
    name = "duallora",
    version,
    about = "Context + prompt low-rank adapters on a toy seq2seq DST model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-domain corpus as JSON.
    GenCorpus(GenCorpusArgs),
    /// Pretrain a backbone or train adapters on a saved one.
    Train(TrainArgs),
    /// Score a model on the held-out domain.
    Eval(Common),
    /// Fold adapters into the backbone weights and biases.
    Merge(MergeArgs),
    /// Export per-head attention maps and prompt attention mass.
    AttnDump(AttnArgs),
    /// Train and score one adapter run per value of one configuration axis.
    Sweep(SweepArgs),
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (relative paths go under $DUALLORA_OUTPUT_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Adapter initialization and example-order seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus JSON to use instead of generating one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    #[arg(long)]
    pub per_domain: Option<usize>,
    #[arg(long)]
    pub held_out: Option<String>,
    /// Base (or merged) model checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Adapter checkpoint.
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// qv, qkv or qkvo.
    #[arg(long)]
    pub targets: Option<TargetProjections>,
    /// mean_add, cross_attention or gate_attention.
    #[arg(long)]
    pub fusion: Option<FusionKind>,
    /// horizontal or vertical.
    #[arg(long)]
    pub combination: Option<Combination>,
    #[arg(long)]
    pub n_prompt_loras: Option<usize>,
    /// slot_prompt or slot_embedding.
    #[arg(long)]
    pub prompt_input: Option<PromptMode>,
    /// Adapter training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Backbone pretraining steps.
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Comma-separated slot keys to evaluate; every slot of the domain by default.
    #[arg(long, value_delimiter = ',')]
    pub slots: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub per_domain: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub target: Option<TrainWhat>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Slot key whose prompt is merged, e.g. taxi-leaveat.
    #[arg(long)]
    pub slot: Option<String>,
    /// Also time base, merged and unmerged forward passes.
    #[arg(long)]
    pub latency: bool,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dialogue: Option<String>,
    #[arg(long)]
    pub turn: Option<usize>,
    #[arg(long)]
    pub slot: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    pub fn resolve(self) -> Result<RunConfig> {
        let mut c = base_config(self.config.as_deref())?;
        set(&mut c.output_dir, self.out);
        if let Some(s) = self.seed {
            c.adapters.seed = s;
            c.train.seed = s;
        }
        if self.corpus.is_some() {
            c.corpus.path = self.corpus;
        }
        set(&mut c.corpus.seed, self.corpus_seed);
        set(&mut c.corpus.per_domain, self.per_domain);
        set(&mut c.held_out, self.held_out);
        if self.base.is_some() {
            c.checkpoints.base = self.base;
        }
        if self.adapters.is_some() {
            c.checkpoints.adapters = self.adapters;
        }
        set(&mut c.adapters.rank, self.rank);
        set(&mut c.adapters.target_projections, self.targets);
        set(&mut c.adapters.fusion, self.fusion);
        set(&mut c.adapters.combination, self.combination);
        set(&mut c.adapters.n_prompt_loras, self.n_prompt_loras);
        set(&mut c.adapters.prompt_input, self.prompt_input);
        set(&mut c.train.steps, self.steps);
        set(&mut c.train.lr, self.lr);
        set(&mut c.train.batch_size, self.batch_size);
        set(&mut c.pretrain.train.steps, self.pretrain_steps);
        set(&mut c.eval.max_new_tokens, self.max_new_tokens);
        set(&mut c.eval.slots, self.slots);
        Ok(c)
    }
}

impl Command {
    /// The fully resolved configuration for this invocation, before the
    /// output root is applied.
    pub fn resolve(self) -> Result<(RunConfig, Kind)> {
        Ok(match self {
            Command::GenCorpus(a) => {
                let mut c = base_config(a.config.as_deref())?;
                set(&mut c.output_dir, a.out);
                set(&mut c.corpus.seed, a.seed);
                set(&mut c.corpus.per_domain, a.per_domain);
                (c, Kind::GenCorpus)
            }
            Command::Train(a) => {
                let mut c = a.common.resolve()?;
                set(&mut c.train_target, a.target);
                (c, Kind::Train)
            }
            Command::Eval(a) => (a.resolve()?, Kind::Eval),
            Command::Merge(a) => {
                let mut c = a.common.resolve()?;
                if a.slot.is_some() {
                    c.merge.slot = a.slot;
                }
                c.merge.measure_latency |= a.latency;
                (c, Kind::Merge)
            }
            Command::AttnDump(a) => {
                let mut c = a.common.resolve()?;
                if a.dialogue.is_some() {
                    c.attn.dialogue = a.dialogue;
                }
                if a.turn.is_some() {
                    c.attn.turn = a.turn;
                }
                if a.slot.is_some() {
                    c.attn.slot = a.slot;
                }
                (c, Kind::AttnDump)
            }
            Command::Sweep(a) => {
                let mut c = a.common.resolve()?;
                set(&mut c.sweep.axis, a.axis);
                set(&mut c.sweep.values, a.values);
                (c, Kind::Sweep)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    GenCorpus,
    Train,
    Eval,
    Merge,
    AttnDump,
    Sweep,
}

/// Resolves, validates, snapshots the config into the output directory and
/// runs the command. Returns the output directory.
pub fn run(cli: Cli, output_root: Option<&Path>) -> Result<PathBuf> {
    let (mut cfg, kind) = cli.command.resolve()?;
    cfg.resolve_output(output_root);
    cfg.validate()?;
    let out = cfg.prepare_output()?;
    match kind {
        Kind::GenCorpus => {
            commands::gen_corpus(&cfg, &out)?;
        }
        Kind::Train => {
            commands::train_cmd(&cfg, &out)?;
        }
        Kind::Eval => {
            commands::eval_cmd(&cfg, &out)?;
        }
        Kind::Merge => {
            commands::merge_cmd(&cfg, &out)?;
        }
        Kind::AttnDump => {
            commands::attn_dump_cmd(&cfg, &out)?;
        }
        Kind::Sweep => {
            commands::sweep_cmd(&cfg, &out)?;
        }
    }
    Ok(out)
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Numerical(_) => 3,
                Error::Io(_) => 1,
                _ => 2,
            };
        }
    }
    1
}
