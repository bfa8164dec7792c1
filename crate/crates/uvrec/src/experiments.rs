//! Training, evaluation, baselines, ablations and data-efficiency sweeps
//! over a loaded dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use uvrec_core::fusion::{feature_stats, FeatureStats};
use uvrec_core::imaging::{dirty_beam, dirty_image, hogbom_clean, CleanComponent, CleanConfig};
use uvrec_core::numerics::{ParamGroup, Tensor};
use uvrec_core::reconstructor::{
    evaluate, score_map, train, EpochMetrics, FusionArm, Model, Sample, SampleEvaluation, Score,
};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{split_hash, Dataset};
use crate::error::{Error, Result};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Standard deviation uses the `n - 1` denominator; a single value has
    /// std 0.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

/// `sqrt((a² + b²) / 2)`: the pooled standard deviation of two groups of
/// equal size.
pub fn pooled_std(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

pub fn check_compatible(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    if cfg.n != data.config.n {
        return Err(Error::config(
            "n",
            format!("config grid {} does not match dataset grid {}", cfg.n, data.config.n),
        ));
    }
    Ok(())
}

/// Trained model plus its learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub steps: usize,
    pub seconds_per_iter: f64,
}

/// Trains a fresh model for `cfg` with `seed` on the dataset's training
/// split, monitoring the validation split.
pub fn train_model(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<TrainOutcome> {
    check_compatible(cfg, data)?;
    let model = Model::new(cfg.model_config(), seed)?;
    let tc = cfg.train_config(seed);
    let start = Instant::now();
    let (model, history) = train(model, &data.train, &data.val, &tc, &mut |_, _| Ok(()))?;
    let elapsed = start.elapsed().as_secs_f64();
    let per_epoch = uvrec_core::reconstructor::select_fraction(data.train.len(), tc.train_fraction, seed)?.len();
    let steps = per_epoch * tc.epochs;
    Ok(TrainOutcome {
        model,
        history,
        steps,
        seconds_per_iter: elapsed / steps.max(1) as f64,
    })
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,psnr,ssim\n");
    for m in history {
        let _ = writeln!(out, "{},{:.9e},{:.6},{:.6}", m.epoch, m.loss, m.psnr, m.ssim);
    }
    out
}

/// [`evaluate`] split across worker threads; results keep sample order.
pub fn evaluate_parallel(
    model: &Model,
    samples: &[Sample],
    clean: Option<&CleanConfig>,
) -> Result<Vec<SampleEvaluation>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    if workers <= 1 {
        return Ok(evaluate(model, samples, clean)?);
    }
    let chunk = samples.len().div_ceil(workers);
    let parts: Vec<uvrec_core::Result<Vec<SampleEvaluation>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|c| s.spawn(move || evaluate(model, c, clean)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluation_csv(evals: &[SampleEvaluation]) -> String {
    let mut out =
        String::from("index,model_psnr,model_ssim,dirty_psnr,dirty_ssim,zero_filled_psnr,zero_filled_ssim\n");
    for (i, e) in evals.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e.model.psnr, e.model.ssim, e.dirty.psnr, e.dirty.ssim, e.zero_filled.psnr, e.zero_filled.ssim
        );
    }
    out
}

/// Mean scores of one method across samples.
pub fn mean_score<'a>(scores: impl IntoIterator<Item = &'a Score>) -> Score {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for sc in scores {
        p += sc.psnr;
        s += sc.ssim;
        n += 1;
    }
    let n = n.max(1) as f64;
    Score {
        psnr: p / n,
        ssim: s / n,
    }
}

/// Whether every measured cell of every prediction equals its input sample
/// bit for bit, and the largest Hermitian residual.
pub fn data_consistency(samples: &[Sample], evals: &[SampleEvaluation]) -> (bool, f64) {
    let mut exact = samples.len() == evals.len();
    let mut herm: f64 = 0.0;
    for (s, e) in samples.iter().zip(evals) {
        let n = s.vis.n;
        for smp in s.vis.samples() {
            let got = e.prediction.values[smp.row * n + smp.col];
            exact &= got.re.to_bits() == smp.value.re.to_bits() && got.im.to_bits() == smp.value.im.to_bits();
        }
        herm = herm.max(e.prediction.hermitian_error());
    }
    (exact, herm)
}

/// CLEAN restoration of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanRow {
    pub score: Score,
    pub iterations: usize,
    pub components: Vec<CleanComponent>,
}

pub fn clean_baseline(samples: &[Sample], cfg: &CleanConfig) -> Result<Vec<CleanRow>> {
    samples
        .iter()
        .map(|s| {
            let dirty = dirty_image(&s.vis)?;
            let beam = dirty_beam(&s.vis)?;
            let res = hogbom_clean(&dirty, &beam.map, cfg)?;
            Ok(CleanRow {
                score: score_map(&res.restored, &s.sky)?,
                iterations: res.iterations,
                components: res.components,
            })
        })
        .collect()
}

pub fn clean_csv(rows: &[CleanRow]) -> String {
    let mut out = String::from("index,psnr,ssim,iterations,components\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.6},{:.6},{},{}",
            r.score.psnr,
            r.score.ssim,
            r.iterations,
            r.components.len()
        );
    }
    out
}

pub fn components_csv(components: &[CleanComponent]) -> String {
    let mut out = String::from("row,col,flux\n");
    for c in components {
        let _ = writeln!(out, "{},{},{:?}", c.row, c.col, c.flux);
    }
    out
}

/// Feature statistics of the query (`zeta`), knowledge pool (`xi`) and
/// fused condition (`eta`) for one sample. Features an arm does not
/// compute report as an empty tensor.
pub fn feature_statistics(model: &Model, sample: &Sample) -> Result<[(&'static str, FeatureStats); 3]> {
    let f = model.feature_tensors(&sample.vis, &sample.prompt)?;
    let empty = Tensor::zeros(&[0]);
    Ok([
        ("zeta", feature_stats(f.query.as_ref().unwrap_or(&empty))),
        ("xi", feature_stats(f.pool.as_ref().unwrap_or(&empty))),
        ("eta", feature_stats(&f.fused)),
    ])
}

pub fn stats_csv(rows: &[(&str, FeatureStats)]) -> String {
    let mut out = String::from("feature,mean,std,entropy\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{:.9},{:.9},{:.9}", s.mean, s.std, s.entropy);
    }
    out
}

/// One trained-and-evaluated model.
#[derive(Debug, Clone)]
pub struct Trial {
    pub arm: FusionArm,
    pub fraction: f64,
    pub seed: u64,
    /// Mean test scores.
    pub score: Score,
    pub history: Vec<EpochMetrics>,
    /// Absent when the model came from an existing checkpoint.
    pub seconds_per_iter: Option<f64>,
    pub steps: usize,
}

type TrialKey = (FusionArm, u64, u64);

/// Trials keyed by arm, training fraction and seed, so ablations and
/// sweeps can share runs. With a checkpoint root, each trial is saved
/// there and reused on later calls when its config hash matches.
#[derive(Debug, Default)]
pub struct Trials {
    done: BTreeMap<TrialKey, Trial>,
    checkpoint_root: Option<PathBuf>,
}

impl Trials {
    pub fn new(checkpoint_root: Option<PathBuf>) -> Self {
        Self {
            done: BTreeMap::new(),
            checkpoint_root,
        }
    }

    pub fn trial_dir(root: &Path, arm: FusionArm, fraction: f64, seed: u64) -> PathBuf {
        root.join(arm.name()).join(format!("fraction_{fraction}")).join(format!("seed_{seed}"))
    }

    pub fn get_or_run(
        &mut self,
        base: &ExperimentConfig,
        data: &Dataset,
        arm: FusionArm,
        fraction: f64,
        seed: u64,
    ) -> Result<&Trial> {
        let key = (arm, fraction.to_bits(), seed);
        if !self.done.contains_key(&key) {
            let cfg = ExperimentConfig {
                arm,
                train_fraction: fraction,
                seed,
                ..base.clone()
            };
            let trial = self.run(&cfg, data)?;
            self.done.insert(key, trial);
        }
        Ok(&self.done[&key])
    }

    fn run(&self, cfg: &ExperimentConfig, data: &Dataset) -> Result<Trial> {
        let dir = self
            .checkpoint_root
            .as_ref()
            .map(|r| Self::trial_dir(r, cfg.arm, cfg.train_fraction, cfg.seed));
        let reuse = dir.as_ref().and_then(|d| checkpoint::load(d).ok()).filter(|c| c.config == *cfg);
        let (model, history, seconds_per_iter, steps) = match reuse {
            Some(c) => (c.model, Vec::new(), None, 0),
            None => {
                let out = train_model(cfg, data, cfg.seed)?;
                if let Some(d) = &dir {
                    checkpoint::save(d, cfg, cfg.seed, cfg.epochs, &out.model)?;
                    crate::dataset::write_text(&d.join("metrics.csv"), &metrics_csv(&out.history))?;
                }
                (out.model, out.history, Some(out.seconds_per_iter), out.steps)
            }
        };
        let evals = evaluate_parallel(&model, &data.test, None)?;
        Ok(Trial {
            arm: cfg.arm,
            fraction: cfg.train_fraction,
            seed: cfg.seed,
            score: mean_score(evals.iter().map(|e| &e.model)),
            history,
            seconds_per_iter,
            steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    /// Number of runs (seeds) the statistics are over.
    pub runs: usize,
    /// Mean test PSNR of each run, in seed order.
    pub per_run_psnr: Vec<f64>,
}

impl MethodSummary {
    fn from_scores(method: &str, scores: &[Score]) -> Self {
        let psnr: Vec<f64> = scores.iter().map(|s| s.psnr).collect();
        let ssim: Vec<f64> = scores.iter().map(|s| s.ssim).collect();
        Self {
            method: method.to_string(),
            psnr: MeanStd::of(&psnr),
            ssim: MeanStd::of(&ssim),
            runs: scores.len(),
            per_run_psnr: psnr,
        }
    }
}

/// Baselines and model arms compared on one test split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub methods: Vec<MethodSummary>,
    pub split_hash: String,
    pub param_count: usize,
    /// Trainable parameters per group, as `(group name, size)`.
    pub group_sizes: Vec<(&'static str, usize)>,
    /// Mean wall time per training step over the freshly trained runs.
    pub seconds_per_iter: Option<f64>,
}

impl RunReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// `method,psnr_mean,psnr_std,ssim_mean,ssim_std,runs,split_hash`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,psnr_mean,psnr_std,ssim_mean,ssim_std,runs,split_hash\n");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{},{}",
                m.method, m.psnr.mean, m.psnr.std, m.ssim.mean, m.ssim.std, m.runs, self.split_hash
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>18} {:>18} {:>5}", "method", "PSNR (dB)", "SSIM", "runs");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<12} {:>9.3} ± {:<6.3} {:>9.4} ± {:<6.4} {:>5}",
                m.method, m.psnr.mean, m.psnr.std, m.ssim.mean, m.ssim.std, m.runs
            );
        }
        let _ = writeln!(out, "test split hash: {}", self.split_hash);
        let groups: Vec<String> = self.group_sizes.iter().map(|(g, s)| format!("{g}={s}")).collect();
        let _ = writeln!(out, "trainable parameters: {} ({})", self.param_count, groups.join(", "));
        out
    }

    /// Wall-clock training speed; kept out of [`Self::to_table`] so written
    /// reports stay byte-identical across runs.
    pub fn speed_line(&self) -> String {
        match self.seconds_per_iter {
            Some(s) => format!("training speed: {:.2} ms/iter", s * 1e3),
            None => "training speed: not measured (checkpoints reused)".to_string(),
        }
    }
}

fn baseline_methods(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<MethodSummary>> {
    let untrained = Model::new(cfg.model_config(), cfg.seed)?;
    let evals = evaluate_parallel(&untrained, &data.test, None)?;
    let clean = clean_baseline(&data.test, &cfg.clean_config())?;
    // The baselines do not depend on the seed; they count as one run.
    Ok(vec![
        MethodSummary::from_scores("dirty", &[mean_score(evals.iter().map(|e| &e.dirty))]),
        MethodSummary::from_scores("zero_filled", &[mean_score(evals.iter().map(|e| &e.zero_filled))]),
        MethodSummary::from_scores("clean", &[mean_score(clean.iter().map(|r| &r.score))]),
    ])
}

/// Trains every arm over the configured seeds and reports them next to the
/// dirty, zero-filled and CLEAN baselines.
pub fn ablate(cfg: &ExperimentConfig, data: &Dataset, trials: &mut Trials) -> Result<RunReport> {
    check_compatible(cfg, data)?;
    let mut methods = baseline_methods(cfg, data)?;
    let mut timings = Vec::new();
    for arm in FusionArm::ALL {
        let mut scores = Vec::new();
        for seed in cfg.seed_list() {
            let t = trials.get_or_run(cfg, data, arm, cfg.train_fraction, seed)?;
            scores.push(t.score);
            timings.extend(t.seconds_per_iter);
        }
        methods.push(MethodSummary::from_scores(arm.name(), &scores));
    }
    let full = cfg.model_config();
    let model = Model::new(full, cfg.seed)?;
    Ok(RunReport {
        methods,
        split_hash: split_hash(&data.test),
        param_count: full.param_count(),
        group_sizes: ParamGroup::ALL.iter().map(|g| (g.name(), model.params().group_size(*g))).collect(),
        seconds_per_iter: (!timings.is_empty()).then(|| timings.iter().sum::<f64>() / timings.len() as f64),
    })
}

/// Parses a comma-separated fraction list into ascending, distinct values
/// in `(0, 1]`.
pub fn parse_fractions(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f: f64 = part
            .parse()
            .map_err(|_| Error::config("fractions", format!("`{part}` is not a number")))?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config("fractions", format!("{f} is outside (0, 1]")));
        }
        out.push(f);
    }
    if out.is_empty() {
        return Err(Error::config("fractions", "empty list"));
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_samples: usize,
    pub summary: MethodSummary,
}

/// Full-arm model trained on each fraction of the training split, over the
/// configured seeds.
pub fn sweep_fraction(
    cfg: &ExperimentConfig,
    data: &Dataset,
    fractions: &[f64],
    trials: &mut Trials,
) -> Result<Vec<SweepRow>> {
    check_compatible(cfg, data)?;
    let mut rows = Vec::new();
    for &f in fractions {
        let mut scores = Vec::new();
        for seed in cfg.seed_list() {
            scores.push(trials.get_or_run(cfg, data, cfg.arm, f, seed)?.score);
        }
        rows.push(SweepRow {
            fraction: f,
            train_samples: uvrec_core::reconstructor::select_fraction(data.train.len(), f, cfg.seed)?.len(),
            summary: MethodSummary::from_scores(&format!("{f}"), &scores),
        });
    }
    Ok(rows)
}

/// `fraction,train_samples,psnr_mean,psnr_std,ssim_mean,ssim_std,runs`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,train_samples,psnr_mean,psnr_std,ssim_mean,ssim_std,runs\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.fraction, r.train_samples, s.psnr.mean, s.psnr.std, s.ssim.mean, s.ssim.std, s.runs
        );
    }
    out
}
