//! Per-sample Adam training and evaluation against ground-truth skies.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::field::FieldGeometry;
use super::loss::spectral_loss_on_tape;
use super::model::Model;
use crate::error::{Error, Result};
use crate::imaging::{
    dirty_beam, dirty_image, hogbom_clean, ift_image, psnr, ssim, zero_filled_image, CleanConfig,
    DenseVisibilityGrid, Map,
};
use crate::modality::{text_rendering_transform, DatasetMeta, TextPrompt};
use crate::numerics::{adam_step, seeded_rng, AdamConfig, AdamState, Tape};
use crate::skysim::{SkyImage, VisibilitySet};

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sky: SkyImage,
    pub vis: VisibilitySet,
    /// Noiseless dense visibilities of `sky`.
    pub truth: DenseVisibilityGrid,
    pub prompt: TextPrompt,
}

impl Sample {
    pub fn new(sky: SkyImage, vis: VisibilitySet, meta: &DatasetMeta) -> Result<Self> {
        if sky.n != vis.n {
            return Err(Error::shape("sky and visibility grids differ in size"));
        }
        let truth = DenseVisibilityGrid::from_sky(&sky);
        let prompt = text_rendering_transform(&vis, meta)?;
        Ok(Self {
            sky,
            vis,
            truth,
            prompt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds subset selection and the per-epoch visiting order.
    pub seed: u64,
    /// Fraction of the training set used, in `(0, 1]`.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            adam: AdamConfig::default(),
            seed: 0,
            train_fraction: 1.0,
        }
    }
}

/// Indices of the `⌈fraction·len⌉` samples kept for training, chosen by a
/// seeded shuffle and returned in ascending order.
pub fn select_fraction(len: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("train_fraction", "must be in (0, 1]"));
    }
    // Guard against products like 0.1 * 200 landing a hair above 20.
    let keep = (libm::ceil(fraction * len as f64 - 1e-9) as usize).clamp(1, len.max(1));
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut seeded_rng(seed ^ 0x5345_4c45_4354));
    let mut kept: Vec<usize> = idx.into_iter().take(keep.min(len)).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Reuses the encoded field coordinates while consecutive samples share a
/// sampling mask.
#[derive(Debug, Clone, Default)]
pub struct GeometryCache {
    geom: Option<FieldGeometry>,
}

impl GeometryCache {
    pub fn get(&mut self, vs: &VisibilitySet, frequencies: usize) -> Result<&FieldGeometry> {
        let stale = !matches!(&self.geom, Some(g) if g.n == vs.n && g.fits(vs.mask(), frequencies));
        if stale {
            self.geom = Some(FieldGeometry::new(vs.mask(), vs.n, frequencies)?);
        }
        Ok(self.geom.as_ref().expect("geometry just built"))
    }
}

/// Mutable training state: the model, one Adam state per parameter tensor
/// and the geometry cache.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    states: Vec<AdamState>,
    adam: AdamConfig,
    cache: GeometryCache,
}

impl Trainer {
    pub fn new(model: Model, adam: AdamConfig) -> Self {
        let states = model.params().iter().map(|p| AdamState::new(p.value.len())).collect();
        Self {
            model,
            states,
            adam,
            cache: GeometryCache::default(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// One forward/backward pass and Adam update on a single sample;
    /// returns the loss before the update.
    pub fn step(&mut self, sample: &Sample) -> Result<f64> {
        let freqs = self.model.config().field.frequencies;
        let geom = self.cache.get(&sample.vis, freqs)?;
        let mut tape = Tape::new();
        let bound = self.model.params().bind(&mut tape);
        let (_, pred) = self.model.forward(&mut tape, &bound, &sample.vis, &sample.prompt, geom)?;
        let (loss, _) = spectral_loss_on_tape(&mut tape, pred, &sample.vis, geom, &sample.truth)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Degenerate("training loss is not finite".into()));
        }
        let grads = tape.backward(loss)?;
        let adam = self.adam;
        for ((param, var), state) in self
            .model
            .params_mut()
            .iter_mut()
            .zip(bound.vars())
            .zip(&mut self.states)
        {
            if let Some(g) = grads.get(*var) {
                adam_step(param.value.data_mut(), g, state, &adam);
            }
        }
        Ok(value)
    }

    /// Mean image scores of the current model over `samples`.
    pub fn score(&mut self, samples: &[Sample]) -> Result<Score> {
        let mut total = Score::default();
        for s in samples {
            let freqs = self.model.config().field.frequencies;
            let geom = self.cache.get(&s.vis, freqs)?;
            let grid = self.model.reconstruct(&s.vis, &s.prompt, geom)?;
            let sc = score_map(&ift_image(&grid)?, &s.sky)?;
            total.psnr += sc.psnr;
            total.ssim += sc.ssim;
        }
        let n = samples.len().max(1) as f64;
        Ok(Score {
            psnr: total.psnr / n,
            ssim: total.ssim / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Trains on the selected fraction of `train`, visiting samples in a fresh
/// seeded order each epoch. Scores are computed on `val`, or on the first
/// training samples when `val` is empty. `on_epoch` sees each epoch's
/// metrics and model; an error from it aborts training.
pub fn train(
    model: Model,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &Model) -> Result<()>,
) -> Result<(Model, Vec<EpochMetrics>)> {
    if train_set.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    let subset = select_fraction(train_set.len(), cfg.train_fraction, cfg.seed)?;
    let monitor: Vec<Sample> = if val.is_empty() {
        subset.iter().take(8).map(|i| train_set[*i].clone()).collect()
    } else {
        val.to_vec()
    };
    let mut rng = seeded_rng(cfg.seed ^ 0x4f_5244_4552);
    let mut trainer = Trainer::new(model, cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = subset.clone();
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for i in &order {
            loss += trainer.step(&train_set[*i])?;
        }
        let score = trainer.score(&monitor)?;
        let m = EpochMetrics {
            epoch,
            loss: loss / order.len() as f64,
            psnr: score.psnr,
            ssim: score.ssim,
        };
        on_epoch(&m, trainer.model())?;
        history.push(m);
    }
    Ok((trainer.into_model(), history))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Score {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of `map` against the sky, with the sky's peak as range.
pub fn score_map(map: &Map, sky: &SkyImage) -> Result<Score> {
    let truth = Map::from(sky);
    let peak = match sky.peak() {
        p if p > 0.0 => p,
        _ => 1.0,
    };
    Ok(Score {
        psnr: psnr(map, &truth, peak)?,
        ssim: ssim(map, &truth, peak)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvaluation {
    pub model: Score,
    /// Flux-calibrated dirty image.
    pub dirty: Score,
    /// Uncalibrated zero-filled image, which the untrained model reproduces.
    pub zero_filled: Score,
    /// Present when a CLEAN configuration was supplied.
    pub clean: Option<Score>,
    pub prediction: DenseVisibilityGrid,
}

/// Scores the model's reconstructions, the dirty and zero-filled images and optionally
/// CLEAN restorations of `samples` against their skies.
pub fn evaluate(model: &Model, samples: &[Sample], clean: Option<&CleanConfig>) -> Result<Vec<SampleEvaluation>> {
    let mut cache = GeometryCache::default();
    let freqs = model.config().field.frequencies;
    samples
        .iter()
        .map(|s| {
            let geom = cache.get(&s.vis, freqs)?;
            let prediction = model.reconstruct(&s.vis, &s.prompt, geom)?;
            let model_score = score_map(&ift_image(&prediction)?, &s.sky)?;
            let dirty = score_map(&dirty_image(&s.vis)?, &s.sky)?;
            let zero_filled = score_map(&zero_filled_image(&s.vis)?, &s.sky)?;
            let clean = match clean {
                Some(cfg) => Some(clean_score(s, cfg)?),
                None => None,
            };
            Ok(SampleEvaluation {
                model: model_score,
                dirty,
                zero_filled,
                clean,
                prediction,
            })
        })
        .collect()
}

/// Restores the dirty image with Högbom CLEAN and scores it.
pub fn clean_score(sample: &Sample, cfg: &CleanConfig) -> Result<Score> {
    let dirty = dirty_image(&sample.vis)?;
    let beam = dirty_beam(&sample.vis)?;
    let res = hogbom_clean(&dirty, &beam.map, cfg)?;
    score_map(&res.restored, &sample.sky)
}
