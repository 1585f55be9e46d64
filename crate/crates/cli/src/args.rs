use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Debug, Parser)]
#[command(name = "cedst", version, about = "Copy-enhanced dialogue state tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tracker and write checkpoint, history and metrics
    Train(TrainArgs),
    /// Score a checkpoint on one split of a corpus
    Eval(EvalArgs),
    /// Turn a share of each slot's values into unknown values
    Mask(MaskArgs),
    /// Generate a seeded synthetic corpus
    Synth(SynthArgs),
    /// Print config, parameter shapes and gate values of a checkpoint
    Inspect(InspectArgs),
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())).into())
}

/// Declares an argument struct whose every key can come from `--config` (TOML,
/// snake_case keys) or from the matching flag; flags win.
macro_rules! layered {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $f:ident : $t:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            /// TOML file with any of the keys below
            #[arg(long)]
            #[serde(skip)]
            pub config: Option<PathBuf>,
            $(
                $(#[$fm])*
                #[arg(long)]
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $f: Option<$t>,
            )*
        }

        impl $name {
            /// Config-file values overridden by flags.
            pub fn resolve(self) -> anyhow::Result<Self> {
                let mut base = match &self.config {
                    Some(path) => read_config::<Self>(path)?,
                    None => Self::default(),
                };
                $(
                    if self.$f.is_some() {
                        base.$f = self.$f;
                    }
                )*
                base.config = self.config;
                Ok(base)
            }
        }
    };
}

layered!(
    TrainArgs {
        /// Corpus in the JSON dialogue format
        corpus: PathBuf,
        /// bAbI task-5 train file (instead of --corpus)
        babi_train: PathBuf,
        babi_dev: PathBuf,
        babi_test: PathBuf,
        /// Output directory
        out: PathBuf,
        d_rnn: usize,
        /// Width of seeded-random embeddings
        d_emb: usize,
        /// Word-vector text file ("token v1 v2 ..." per line)
        embeddings: PathBuf,
        ngram_dim: usize,
        learning_rate: f64,
        dropout_keep: f64,
        epochs: usize,
        /// Turns per optimizer step
        batch_size: usize,
        seed: u64,
        tie_encoders: bool,
        /// zeros | action_context
        decoder_init: String,
        max_copy_len: usize,
        /// marginalize | prefer_generate | prefer_copy
        target_policy: String,
        multi_encoder: bool,
        multi_decoder: bool,
        copy: bool,
        self_attention: bool,
        shared_lstm: bool,
    }
);

layered!(
    EvalArgs {
        checkpoint: PathBuf,
        corpus: PathBuf,
        babi_train: PathBuf,
        babi_dev: PathBuf,
        babi_test: PathBuf,
        /// train | dev | test
        split: String,
        /// Metrics JSON file; stdout when absent
        out: PathBuf,
    }
);

layered!(
    MaskArgs {
        corpus: PathBuf,
        babi_train: PathBuf,
        babi_dev: PathBuf,
        babi_test: PathBuf,
        /// Share of each slot's values to mask, e.g. 0.2, 0.4 or 0.6
        ratio: f64,
        seed: u64,
        /// Output directory for corpus.json and mask_report.json
        out: PathBuf,
    }
);

layered!(
    SynthArgs {
        n_train: usize,
        n_dev: usize,
        n_test: usize,
        vocab_size: usize,
        values_per_slot: usize,
        oov_test_fraction: f64,
        /// Comma-separated informable slots with held-out values
        #[arg(value_delimiter = ',')]
        oov_slots: Vec<String>,
        paraphrase_noise: f64,
        seed: u64,
        max_turns: usize,
        /// Output directory for corpus.json and manifest.json
        out: PathBuf,
    }
);

layered!(InspectArgs { checkpoint: PathBuf });

/// Flag, then config file, then `CEDST_SEED`, then `default`.
pub fn resolve_seed(seed: Option<u64>, default: u64) -> anyhow::Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("CEDST_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Invalid(format!("CEDST_SEED must be an unsigned integer, got '{v}'")).into()),
        Err(_) => Ok(default),
    }
}

/// Parses a snake_case enum name through its serde representation.
pub fn parse_name<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_owned()))
        .map_err(|_| Invalid(format!("invalid value '{value}' for {key}")).into())
}
