//! The full reconstruction model: modality transforms, query encoder,
//! knowledge pool fusion and the conditioned field.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::field::{ConditionedField, FieldConfig, FieldGeometry};
use super::loss::assemble_grid;
use crate::error::{Error, Result};
use crate::fusion::{
    build_knowledge_pool, crossmodal_attention, fuse_residual, QueryEncoder, QueryEncoderConfig,
    VisibilityTokens,
};
use crate::imaging::DenseVisibilityGrid;
use crate::modality::{
    amplitude_scale, ikg_encode, vkg_encode, FrozenEncoder, ImageFormConfig, ImageFormTransform,
    TextPrompt, DEFAULT_PATCH, DEFAULT_TEXT_TOKENS, DEFAULT_VOCAB,
};
use crate::numerics::{seeded_rng, Bound, ParamStore, Tape, Tensor, Var};
use crate::skysim::VisibilitySet;

/// Which conditioning path feeds the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionArm {
    /// Query attends to visual and textual knowledge.
    Full,
    /// Condition is the query feature alone.
    NoKnowledge,
    /// Knowledge pool without visual tokens.
    NoVisual,
    /// Knowledge pool without textual tokens.
    NoText,
    /// Zero condition; only the measurements constrain the output.
    VisibilityOnly,
}

impl FusionArm {
    pub const ALL: [FusionArm; 5] = [
        FusionArm::Full,
        FusionArm::NoKnowledge,
        FusionArm::NoVisual,
        FusionArm::NoText,
        FusionArm::VisibilityOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionArm::Full => "full",
            FusionArm::NoKnowledge => "no_kb",
            FusionArm::NoVisual => "no_visual",
            FusionArm::NoText => "no_text",
            FusionArm::VisibilityOnly => "vis_only",
        }
    }
}

impl fmt::Display for FusionArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionArm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown model arm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    pub image: ImageFormConfig,
    pub query: QueryEncoderConfig,
    /// Patch size of the visual encoder.
    pub patch: usize,
    /// Textual knowledge tokens; 0 disables the text block.
    pub text_tokens: usize,
    pub vocab: usize,
    pub field: FieldConfig,
    pub arm: FusionArm,
    /// Seed of the frozen encoders, independent of the trainable weights.
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            image: ImageFormConfig::default(),
            query: QueryEncoderConfig::default(),
            patch: DEFAULT_PATCH,
            text_tokens: DEFAULT_TEXT_TOKENS,
            vocab: DEFAULT_VOCAB,
            field: FieldConfig::default(),
            arm: FusionArm::Full,
            encoder_seed: 0x5eed,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(Error::config("n", "must be a power of two >= 4"));
        }
        if self.patch == 0 || !self.n.is_multiple_of(self.patch) {
            return Err(Error::config("patch", format!("must divide the grid size {}", self.n)));
        }
        if self.vocab == 0 {
            return Err(Error::config("vocab", "must be positive"));
        }
        self.image.validate()?;
        self.query.validate()?;
        self.field.validate()?;
        if !self.query.d_model.is_multiple_of(4) {
            return Err(Error::config("d_model", "must be a multiple of 4"));
        }
        if !self.query.d_model.is_multiple_of(self.field.hidden_layers()) {
            return Err(Error::config(
                "d_model",
                format!("must split evenly over {} field layers", self.field.hidden_layers()),
            ));
        }
        Ok(())
    }

    /// Trainable parameter count, from the layer shapes.
    pub fn param_count(&self) -> usize {
        self.image.param_count()
            + self.query.param_count()
            + ConditionedField::param_count(&self.field, self.query.d_model)
    }
}

/// Intermediate features of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    /// Query feature; absent for the visibility-only arm.
    pub query: Option<Var>,
    /// Knowledge pool; absent when the arm does not use one.
    pub pool: Option<Var>,
    /// Fused condition for the field.
    pub fused: Var,
}

/// Detached copies of [`Features`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensors {
    pub query: Option<Tensor>,
    pub pool: Option<Tensor>,
    pub fused: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    image_form: ImageFormTransform,
    query: QueryEncoder,
    field: ConditionedField,
    visual: FrozenEncoder,
    textual: FrozenEncoder,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let image_form = ImageFormTransform::new(cfg.image, &mut params, &mut rng)?;
        let query = QueryEncoder::new(cfg.query, &mut params, &mut rng)?;
        let field = ConditionedField::new(cfg.field, cfg.query.d_model, &mut params, &mut rng)?;
        let d = cfg.query.d_model;
        let visual = FrozenEncoder::visual(cfg.encoder_seed, d, cfg.image.channels, cfg.patch)?;
        let textual = FrozenEncoder::textual(cfg.encoder_seed, d, cfg.vocab, cfg.text_tokens)?;
        Ok(Self {
            cfg,
            params,
            image_form,
            query,
            field,
            visual,
            textual,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn visual_encoder(&self) -> &FrozenEncoder {
        &self.visual
    }

    pub fn text_encoder(&self) -> &FrozenEncoder {
        &self.textual
    }

    fn check_grid(&self, vs: &VisibilitySet) -> Result<()> {
        if vs.n != self.cfg.n {
            return Err(Error::config(
                "n",
                format!("model is configured for {} but data has {}", self.cfg.n, vs.n),
            ));
        }
        Ok(())
    }

    /// Records the conditioning path for one sample.
    pub fn features(&self, tape: &mut Tape, p: &Bound, vs: &VisibilitySet, prompt: &TextPrompt) -> Result<Features> {
        self.check_grid(vs)?;
        let q = &self.cfg.query;
        if self.cfg.arm == FusionArm::VisibilityOnly {
            let fused = tape.constant(Tensor::zeros(&[q.query_tokens, q.d_model]));
            return Ok(Features {
                query: None,
                pool: None,
                fused,
            });
        }
        let tokens = VisibilityTokens::new(vs, &q.tokens)?;
        let query = self.query.forward(tape, p, &tokens)?;
        if self.cfg.arm == FusionArm::NoKnowledge {
            return Ok(Features {
                query: Some(query),
                pool: None,
                fused: query,
            });
        }
        let visual = if self.cfg.arm != FusionArm::NoVisual {
            let map = self.image_form.forward(tape, p, vs)?;
            Some(vkg_encode(tape, map, &self.visual)?)
        } else {
            None
        };
        let textual = if self.cfg.arm != FusionArm::NoText && self.cfg.text_tokens > 0 {
            Some(tape.constant(ikg_encode(prompt, &self.textual)?))
        } else {
            None
        };
        let pool = build_knowledge_pool(tape, visual, textual)?;
        let attended = crossmodal_attention(tape, query, pool, q.heads)?;
        let fused = fuse_residual(tape, attended, query)?;
        Ok(Features {
            query: Some(query),
            pool: Some(pool),
            fused,
        })
    }

    /// Records the full forward pass; returns the features and the field's
    /// free-cell predictions `[P×2]` in visibility units.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        vs: &VisibilitySet,
        prompt: &TextPrompt,
        geom: &FieldGeometry,
    ) -> Result<(Features, Var)> {
        if !geom.fits(vs.mask(), self.cfg.field.frequencies) {
            return Err(Error::usage("field geometry was built for a different mask"));
        }
        let feats = self.features(tape, p, vs, prompt)?;
        let coords = tape.constant(geom.encoding.clone());
        let raw = self.field.forward(tape, p, coords, feats.fused)?;
        let pred = tape.scale(raw, amplitude_scale(vs));
        Ok((feats, pred))
    }

    /// Dense reconstruction: measured cells are copied from `vs`, the rest
    /// come from the field, and the result is Hermitian.
    pub fn reconstruct(&self, vs: &VisibilitySet, prompt: &TextPrompt, geom: &FieldGeometry) -> Result<DenseVisibilityGrid> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (_, pred) = self.forward(&mut tape, &p, vs, prompt, geom)?;
        assemble_grid(vs, geom, tape.value(pred).data())
    }

    pub fn feature_tensors(&self, vs: &VisibilitySet, prompt: &TextPrompt) -> Result<FeatureTensors> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let f = self.features(&mut tape, &p, vs, prompt)?;
        Ok(FeatureTensors {
            query: f.query.map(|v| tape.value(v).clone()),
            pool: f.pool.map(|v| tape.value(v).clone()),
            fused: tape.value(f.fused).clone(),
        })
    }

    /// Sizes of the trainable groups, in [`crate::numerics::ParamGroup::ALL`] order.
    pub fn group_sizes(&self) -> Vec<usize> {
        crate::numerics::ParamGroup::ALL
            .iter()
            .map(|g| self.params.group_size(*g))
            .collect()
    }
}
