//! The assembled recommender: backbone, graph encoder, preference and
//! context heads over one parameter store.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneConfig};
use crate::context_encoder::{self, ContextHeadConfig};
use crate::corpus::{ExampleConfig, ItemCatalog, TokenId, Vocabulary};
use crate::error::{CrsError, Result};
use crate::generator::{self, DecodeConfig, Hypothesis, VocabBias};
use crate::graph_encoder::{self, RgcnConfig};
use crate::kg::{AliasIndex, EntityId, KnowledgeGraph};
use crate::nn::{Graph, Mat, ParamGroup, ParamStore};
use crate::preference::{
    self, PreferenceHistory, RecommendationDistribution, Summarizer,
};
use crate::recommender::{self, FusionBranch, FusionConfig};

/// Which preference signals drive recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Contextual preference only.
    #[serde(rename = "context")]
    ContextOnly,
    /// Entity preference with a learned attention summary.
    #[serde(rename = "entity-selfa")]
    EntitySelfA,
    /// Entity preference with recency weights.
    #[serde(rename = "entity-timea")]
    EntityTimeA,
    /// Recency-weighted entity preference fused with contextual preference.
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ContextOnly,
        Variant::EntitySelfA,
        Variant::EntityTimeA,
        Variant::Full,
    ];

    pub fn uses_entities(self) -> bool {
        self != Variant::ContextOnly
    }

    pub fn uses_context(self) -> bool {
        matches!(self, Variant::ContextOnly | Variant::Full)
    }

    pub fn summarizer(self, lambda: f64) -> Summarizer {
        match self {
            Variant::EntitySelfA => Summarizer::SelfAttention,
            _ => Summarizer::TimeAware { lambda },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ContextOnly => "context",
            Variant::EntitySelfA => "entity-selfa",
            Variant::EntityTimeA => "entity-timea",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CrsError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub rgcn: RgcnConfig,
    pub context_head: ContextHeadConfig,
    pub examples: ExampleConfig,
    /// Backbone weights came from pretraining and train at the lower rate.
    pub pretrained_backbone: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            backbone: BackboneConfig::default(),
            rgcn: RgcnConfig::default(),
            context_head: ContextHeadConfig::default(),
            examples: ExampleConfig::default(),
            pretrained_backbone: false,
        }
    }
}

pub const SCORER: &str = "pref.scorer";

/// Everything the recommender needs at inference time.
#[derive(Debug, Clone)]
pub struct CrsModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub kg: KnowledgeGraph,
    pub aliases: AliasIndex,
    pub catalog: ItemCatalog,
    pub vocab: Vocabulary,
    support: Arc<[bool]>,
}

/// Per-context recommendation with its parts.
#[derive(Debug, Clone)]
pub struct Recommendation {
    pub p_e: Option<RecommendationDistribution>,
    pub p_c: Option<RecommendationDistribution>,
    pub p_rec: RecommendationDistribution,
    pub branch: FusionBranch,
}

impl CrsModel {
    pub fn new(
        config: ModelConfig,
        kg: KnowledgeGraph,
        aliases: AliasIndex,
        catalog: ItemCatalog,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        vocab.check_aligned(&catalog)?;
        let mut store = ParamStore::new();
        let group = if config.pretrained_backbone {
            ParamGroup::Pretrained
        } else {
            ParamGroup::New
        };
        backbone::init_params(&mut store, &config.backbone, &vocab, group, seed)?;
        graph_encoder::init_params(&mut store, &kg, &config.rgcn, seed.wrapping_add(1))?;
        context_encoder::init_params(
            &mut store,
            &config.context_head,
            config.backbone.d_model,
            kg.num_entities(),
            seed.wrapping_add(2),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let scale = 1.0 / (config.rgcn.dim as f64).sqrt();
        store.insert_uniform(SCORER, (1, config.rgcn.dim), scale, ParamGroup::New, &mut rng);
        Self::from_parts(config, store, kg, aliases, catalog, vocab)
    }

    /// Assembles a model from loaded parts, checking alignment.
    pub fn from_parts(
        config: ModelConfig,
        store: ParamStore,
        kg: KnowledgeGraph,
        aliases: AliasIndex,
        catalog: ItemCatalog,
        vocab: Vocabulary,
    ) -> Result<Self> {
        vocab.check_aligned(&catalog)?;
        graph_encoder::check_params(&store, &kg, &config.rgcn)?;
        let support: Arc<[bool]> = kg.item_mask().to_vec().into();
        if !support.iter().any(|s| *s) {
            return Err(CrsError::Config("no catalog item is linked to the knowledge graph".into()));
        }
        Ok(CrsModel {
            config,
            store,
            kg,
            aliases,
            catalog,
            vocab,
            support,
        })
    }

    pub fn support(&self) -> &Arc<[bool]> {
        &self.support
    }

    pub fn num_items(&self) -> usize {
        self.support.iter().filter(|s| **s).count()
    }

    /// R-GCN output table `[|E|, d]`.
    pub fn entity_table(&self) -> Result<Mat> {
        graph_encoder::entity_table(&self.store, &self.kg, &self.config.rgcn)
    }

    pub fn entity_distribution(
        &self,
        table: &Mat,
        history: &PreferenceHistory,
        lambda: f64,
    ) -> Result<Option<RecommendationDistribution>> {
        if history.is_empty() {
            return Ok(None);
        }
        let summary = match self.config.variant.summarizer(lambda) {
            Summarizer::TimeAware { lambda } => preference::time_aware_summary(history, table, lambda)?,
            Summarizer::SelfAttention => {
                let a = self
                    .store
                    .get(SCORER)
                    .ok_or_else(|| CrsError::Config("missing attention scorer".into()))?;
                preference::self_attention_summary(history, table, a.row(0))?
            }
        };
        preference::entity_scores(summary.view(), table, self.support.clone()).map(Some)
    }

    /// Mean encoder state of a context, `[d_model]`.
    pub fn pooled_context(&self, context: &[TokenId]) -> Result<ndarray::Array1<f64>> {
        let mut g = Graph::with_params(&self.store);
        let enc = backbone::encode(&mut g, &self.config.backbone, context)?;
        let p = backbone::pooled(&mut g, &enc);
        Ok(g.value(p).row(0).to_owned())
    }

    pub fn context_distribution(&self, context: &[TokenId]) -> Result<RecommendationDistribution> {
        let pooled = self.pooled_context(context)?;
        context_encoder::context_scores(pooled.view(), &self.store, &self.config.context_head, self.support.clone())
    }

    /// Recommendation for one context. `table` is the precomputed entity
    /// table (see [`CrsModel::entity_table`]).
    pub fn recommend(
        &self,
        table: &Mat,
        context: &[TokenId],
        history: &PreferenceHistory,
        fusion: &FusionConfig,
    ) -> Result<Recommendation> {
        fusion.validate()?;
        let variant = self.config.variant;
        let p_e = if variant.uses_entities() {
            self.entity_distribution(table, history, fusion.lambda)?
        } else {
            None
        };
        let p_c = if variant.uses_context() {
            Some(self.context_distribution(context)?)
        } else {
            None
        };
        let (p_rec, branch) = match (&p_e, &p_c) {
            (_, Some(pc)) if variant == Variant::Full => recommender::fuse(p_e.as_ref(), pc, fusion)?,
            (_, Some(pc)) => (pc.clone(), FusionBranch::ContextOnly),
            (Some(pe), None) => (pe.clone(), FusionBranch::Fused),
            // Entity-only variants have nothing to go on without mentions.
            (None, None) => (
                RecommendationDistribution::uniform(self.support.clone())?,
                FusionBranch::UniformEntity,
            ),
        };
        Ok(Recommendation { p_e, p_c, p_rec, branch })
    }

    /// Decodes a response for `context`, optionally biased.
    pub fn generate(
        &self,
        context: &[TokenId],
        bias: Option<&VocabBias>,
        cfg: &DecodeConfig,
    ) -> Result<Vec<Hypothesis>> {
        let mut g = Graph::with_params(&self.store);
        let enc = backbone::encode(&mut g, &self.config.backbone, context)?;
        let bb = self.config.backbone;
        let mut scorer = |prefix: &[TokenId]| -> Result<Vec<f64>> {
            let mark = g.len();
            let logits = backbone::decode_logits(&mut g, &bb, &enc, prefix)?;
            let row = g.value(logits).row(prefix.len() - 1).to_vec();
            g.truncate(mark);
            Ok(row)
        };
        generator::decode(&mut scorer, bias, cfg)
    }

    pub fn build_bias(&self, p_rec: &RecommendationDistribution) -> Result<VocabBias> {
        generator::build_bias(p_rec, &self.vocab, &self.catalog)
    }

    pub fn entity_of_item(&self, item_id: &str) -> Option<EntityId> {
        self.catalog.entity_of(item_id)
    }

    /// Replaces parameters with those of another store of the same layout.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        graph_encoder::check_params(&store, &self.kg, &self.config.rgcn)?;
        self.store = store;
        Ok(())
    }

    /// Zero matrix shaped like the entity table, for variants that never
    /// read it.
    pub fn empty_table(&self) -> Mat {
        Array2::zeros((self.kg.num_entities(), self.config.rgcn.dim))
    }
}
