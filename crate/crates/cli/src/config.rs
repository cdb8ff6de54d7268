//! Run configuration: one flat key-value file with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crs_core::backbone::BackboneConfig;
use crs_core::context_encoder::ContextHeadConfig;
use crs_core::corpus::{ExampleConfig, Split};
use crs_core::dataset::{DatasetKind, VocabConfig};
use crs_core::generator::BiasMode;
use crs_core::graph_encoder::RgcnConfig;
use crs_core::{
    ColdStartPolicy, CrsError, DecodeConfig, FusionConfig, ModelConfig, Result, Strategy, TrainConfig, Variant,
};

/// Environment variable naming the root that relative paths resolve
/// against.
pub const DATA_DIR_ENV: &str = "CRS_DATA_DIR";

/// File name of the configuration echo written beside outputs.
pub const ECHO_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Data.
    pub dataset: DatasetKind,
    /// Raw corpus: a ReDial or OpenDialKG release file, or a canonical
    /// `.jsonl` file.
    pub corpus: PathBuf,
    /// Tab-separated `head relation tail` triples.
    pub kg: PathBuf,
    /// Optional tab-separated `alias entity` pairs.
    pub aliases: Option<PathBuf>,
    pub inverse_relations: bool,
    pub prepared_dir: PathBuf,
    pub vocab_min_count: usize,
    pub vocab_max_size: Option<usize>,

    // Model.
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    pub rgcn_dim: usize,
    pub rgcn_layers: usize,
    pub rgcn_bases: Option<usize>,
    pub max_context_len: usize,
    pub text_entities: bool,
    pub dedup_history: bool,
    pub context_hidden_layer: bool,
    pub context_masked: bool,

    // Fusion.
    pub lambda: f64,
    pub mu: f64,
    pub cold_start_policy: ColdStartPolicy,

    // Training.
    pub gamma: f64,
    pub lr_new: f64,
    pub lr_pretrained: f64,
    pub warmup_updates: usize,
    pub max_tokens_per_batch: usize,
    pub update_frequency: usize,
    pub epochs: usize,
    pub seed: u64,
    pub decay_power: f64,
    pub stop_gradient: bool,
    pub select_k: usize,
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,

    // Decoding.
    pub strategy: Strategy,
    pub beam: usize,
    pub groups: usize,
    pub length_penalty: f64,
    pub max_new_tokens: usize,
    pub bias_trigger_k: usize,
    pub diversity_strength: f64,
    pub bias_mode: BiasMode,

    // Evaluation.
    pub eval_split: Split,
    pub exclude_seen: bool,
    /// Also decode responses and report the generation metrics.
    pub generate: bool,
    pub lm_order: usize,
    /// Evaluate only the first this-many examples.
    pub eval_limit: Option<usize>,

    // Service.
    pub bind: String,
    pub max_sessions: usize,
    pub sessions_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let backbone = BackboneConfig::default();
        let rgcn = RgcnConfig::default();
        let examples = ExampleConfig::default();
        let head = ContextHeadConfig::default();
        let fusion = FusionConfig::default();
        let train = TrainConfig::default();
        let decode = DecodeConfig::default();
        let vocab = VocabConfig::default();
        RunConfig {
            dataset: DatasetKind::Redial,
            corpus: "raw/conversations.jsonl".into(),
            kg: "raw/kg.tsv".into(),
            aliases: None,
            inverse_relations: true,
            prepared_dir: "prepared".into(),
            vocab_min_count: vocab.min_count,
            vocab_max_size: vocab.max_size,
            variant: Variant::Full,
            d_model: backbone.d_model,
            heads: backbone.heads,
            ffn_dim: backbone.ffn_dim,
            encoder_layers: backbone.encoder_layers,
            decoder_layers: backbone.decoder_layers,
            max_positions: backbone.max_positions,
            rgcn_dim: rgcn.dim,
            rgcn_layers: rgcn.layers,
            rgcn_bases: rgcn.bases,
            max_context_len: examples.max_len,
            text_entities: examples.text_entities,
            dedup_history: examples.dedup_history,
            context_hidden_layer: head.hidden_layer,
            context_masked: head.masked,
            lambda: fusion.lambda,
            mu: fusion.mu,
            cold_start_policy: fusion.cold_start_policy,
            gamma: train.gamma,
            lr_new: train.lr_new,
            lr_pretrained: train.lr_pretrained,
            warmup_updates: train.warmup_updates,
            max_tokens_per_batch: train.max_tokens_per_batch,
            update_frequency: train.update_frequency,
            epochs: train.epochs,
            seed: train.seed,
            decay_power: train.decay_power,
            stop_gradient: train.stop_gradient,
            select_k: train.select_k,
            output_dir: "runs".into(),
            checkpoint: "runs/model.ckpt".into(),
            strategy: decode.strategy,
            beam: decode.beam_size,
            groups: decode.groups,
            length_penalty: decode.length_penalty,
            max_new_tokens: decode.max_new_tokens,
            bias_trigger_k: decode.bias_trigger_k,
            diversity_strength: decode.diversity_strength,
            bias_mode: decode.bias_mode,
            eval_split: Split::Test,
            exclude_seen: false,
            generate: true,
            lm_order: 3,
            eval_limit: None,
            bind: "127.0.0.1:8080".into(),
            max_sessions: 1024,
            sessions_dir: None,
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub variant: Option<Variant>,
    pub dataset: Option<DatasetKind>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub gamma: Option<f64>,
    pub beam: Option<usize>,
    pub groups: Option<usize>,
    pub length_penalty: Option<f64>,
    pub seed: Option<u64>,
    pub exclude_seen: bool,
    pub epochs: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CrsError::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CrsError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CrsError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = o.$f.clone() {
                    self.$f = v;
                }
            )*};
        }
        set!(variant, dataset, lambda, mu, gamma, beam, groups, length_penalty, seed, epochs, checkpoint, output_dir);
        if o.exclude_seen {
            self.exclude_seen = true;
        }
    }

    /// Rewrites relative paths to sit under `root`.
    pub fn resolve_paths(&mut self, root: Option<&Path>) {
        let Some(root) = root else { return };
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.kg,
            &mut self.prepared_dir,
            &mut self.output_dir,
            &mut self.checkpoint,
        ] {
            fix(p);
        }
        for p in [&mut self.aliases, &mut self.sessions_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().backbone.validate()?;
        self.fusion().validate()?;
        self.train().validate()?;
        self.decode().validate()?;
        if self.max_sessions == 0 {
            return Err(CrsError::Config("max_sessions must be positive".into()));
        }
        if self.lm_order == 0 {
            return Err(CrsError::Config("lm_order must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            backbone: BackboneConfig {
                d_model: self.d_model,
                heads: self.heads,
                ffn_dim: self.ffn_dim,
                encoder_layers: self.encoder_layers,
                decoder_layers: self.decoder_layers,
                max_positions: self.max_positions,
            },
            rgcn: RgcnConfig {
                dim: self.rgcn_dim,
                layers: self.rgcn_layers,
                bases: self.rgcn_bases,
            },
            context_head: ContextHeadConfig {
                hidden_layer: self.context_hidden_layer,
                masked: self.context_masked,
            },
            examples: self.examples(),
            pretrained_backbone: false,
        }
    }

    pub fn examples(&self) -> ExampleConfig {
        ExampleConfig {
            max_len: self.max_context_len,
            text_entities: self.text_entities,
            dedup_history: self.dedup_history,
        }
    }

    pub fn vocab(&self) -> VocabConfig {
        VocabConfig {
            min_count: self.vocab_min_count,
            max_size: self.vocab_max_size,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            mu: self.mu,
            lambda: self.lambda,
            cold_start_policy: self.cold_start_policy,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lr_new: self.lr_new,
            lr_pretrained: self.lr_pretrained,
            warmup_updates: self.warmup_updates,
            max_tokens_per_batch: self.max_tokens_per_batch,
            update_frequency: self.update_frequency,
            epochs: self.epochs,
            seed: self.seed,
            decay_power: self.decay_power,
            stop_gradient: self.stop_gradient,
            select_k: self.select_k,
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            strategy: self.strategy,
            beam_size: self.beam,
            groups: self.groups,
            length_penalty: self.length_penalty,
            max_new_tokens: self.max_new_tokens,
            bias_trigger_k: self.bias_trigger_k,
            diversity_strength: self.diversity_strength,
            bias_mode: self.bias_mode,
        }
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CrsError::io(dir, e))?;
        let path = dir.join(ECHO_NAME);
        fs::write(&path, self.to_toml()).map_err(|e| CrsError::io(&path, e))?;
        Ok(path)
    }
}
