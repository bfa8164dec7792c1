//! Visibility query encoder, knowledge pool and cross-modal fusion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{
    uniform_fan_in, Bound, ParamGroup, ParamId, ParamStore, SeededRng, Tape, Tensor, Var,
};
use crate::skysim::VisibilitySet;

/// Raw per-token features: `u, v, re, im`.
pub const RAW_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenConfig {
    /// Octaves of sinusoidal `(u, v)` features appended to each token.
    pub frequencies: usize,
    /// When false the sinusoidal columns are kept but zeroed.
    pub position_codes: bool,
    /// Keep both members of each conjugate pair. When false only the
    /// half-plane representative of a pair becomes a token.
    pub conjugate_tokens: bool,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            frequencies: 4,
            position_codes: true,
            conjugate_tokens: false,
        }
    }
}

impl TokenConfig {
    pub fn width(&self) -> usize {
        RAW_FEATURES + 4 * self.frequencies
    }
}

/// Visibility samples as a `L×d_in` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityTokens {
    pub tokens: Tensor,
}

/// Whether a sample lies in the half-plane that represents its conjugate
/// pair: `v > 0`, or `v = 0` and `u >= 0`.
pub fn is_half_plane(row: usize, col: usize, n: usize) -> bool {
    let h = n / 2;
    row > h || (row == h && col >= h)
}

impl VisibilityTokens {
    pub fn new(vs: &VisibilitySet, cfg: &TokenConfig) -> Result<Self> {
        let half = vs.n as f64 / 2.0;
        let scale = crate::modality::amplitude_scale(vs);
        let width = cfg.width();
        let mut data = Vec::new();
        let mut rows = 0;
        for s in vs.samples() {
            if !cfg.conjugate_tokens && !is_half_plane(s.row, s.col, vs.n) {
                continue;
            }
            let (u, v) = (s.u / half, s.v / half);
            let start = data.len();
            data.extend_from_slice(&[u, v, s.value.re / scale, s.value.im / scale]);
            data.resize(start + width, 0.0);
            if cfg.position_codes {
                let codes = &mut data[start + RAW_FEATURES..];
                for k in 0..cfg.frequencies {
                    let w = core::f64::consts::PI * (1u64 << k) as f64;
                    codes[4 * k] = libm::sin(w * u);
                    codes[4 * k + 1] = libm::cos(w * u);
                    codes[4 * k + 2] = libm::sin(w * v);
                    codes[4 * k + 3] = libm::cos(w * v);
                }
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::usage("visibility set yields no tokens"));
        }
        Ok(Self {
            tokens: Tensor::new(&[rows, width], data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryEncoderConfig {
    pub tokens: TokenConfig,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub query_tokens: usize,
}

impl Default for QueryEncoderConfig {
    fn default() -> Self {
        Self {
            tokens: TokenConfig::default(),
            d_model: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            query_tokens: 16,
        }
    }
}

impl QueryEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(
                "d_model",
                format!("{} is not divisible by {} heads", self.d_model, self.heads),
            ));
        }
        if self.query_tokens == 0 {
            return Err(Error::config("query_tokens", "must be positive"));
        }
        if self.ff_dim == 0 {
            return Err(Error::config("ff_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d + 4 * (d * d + d) + 2 * self.ff_dim * d + self.ff_dim + d;
        self.tokens.width() * d + d + self.query_tokens * d + self.layers * per_layer + 2 * d
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, fan_in: usize, out: usize) -> Self {
        let group = ParamGroup::VisibilityQuery;
        Self {
            w: store.add(format!("{name}.weight"), group, uniform_fan_in(rng, &[fan_in, out], fan_in)),
            b: store.add(format!("{name}.bias"), group, uniform_fan_in(rng, &[out], fan_in)),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add_bias(y, p.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    shift: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let group = ParamGroup::VisibilityQuery;
        Self {
            gain: store.add(format!("{name}.gain"), group, Tensor::full(&[d], 1.0)),
            shift: store.add(format!("{name}.shift"), group, Tensor::zeros(&[d])),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.shift))
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    norm_attn: Norm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ff: Norm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Transformer encoder over visibility tokens with learned summary tokens
/// prepended; the summary outputs form the query feature.
#[derive(Debug, Clone)]
pub struct QueryEncoder {
    cfg: QueryEncoderConfig,
    embed: Linear,
    summary: ParamId,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
}

impl QueryEncoder {
    pub fn new(cfg: QueryEncoderConfig, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let embed = Linear::new(store, rng, "query_encoder.embed", cfg.tokens.width(), d);
        let summary = store.add(
            "query_encoder.summary",
            ParamGroup::VisibilityQuery,
            uniform_fan_in(rng, &[cfg.query_tokens, d], d),
        );
        let layers = (0..cfg.layers)
            .map(|i| {
                let name = |part: &str| format!("query_encoder.layer{i}.{part}");
                EncoderLayer {
                    norm_attn: Norm::new(store, &name("norm_attn"), d),
                    query: Linear::new(store, rng, &name("query"), d, d),
                    key: Linear::new(store, rng, &name("key"), d, d),
                    value: Linear::new(store, rng, &name("value"), d, d),
                    out: Linear::new(store, rng, &name("out"), d, d),
                    norm_ff: Norm::new(store, &name("norm_ff"), d),
                    ff_in: Linear::new(store, rng, &name("ff_in"), d, cfg.ff_dim),
                    ff_out: Linear::new(store, rng, &name("ff_out"), cfg.ff_dim, d),
                }
            })
            .collect();
        let final_norm = Norm::new(store, "query_encoder.final_norm", d);
        Ok(Self {
            cfg,
            embed,
            summary,
            layers,
            final_norm,
        })
    }

    pub fn config(&self) -> &QueryEncoderConfig {
        &self.cfg
    }

    /// Query feature `[T_q × d]` for the given tokens.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, tokens: &VisibilityTokens) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::usage("query encoder needs at least one token"));
        }
        if tokens.tokens.shape()[1] != self.cfg.tokens.width() {
            return Err(Error::shape("token width does not match encoder config"));
        }
        let x = tape.constant(tokens.tokens.clone());
        let x = self.embed.forward(tape, p, x)?;
        let mut h = tape.concat_rows(&[p.var(self.summary), x])?;
        for layer in &self.layers {
            let n = layer.norm_attn.forward(tape, p, h)?;
            let q = layer.query.forward(tape, p, n)?;
            let k = layer.key.forward(tape, p, n)?;
            let v = layer.value.forward(tape, p, n)?;
            let a = multi_head_attention(tape, q, k, v, self.cfg.heads)?;
            let a = layer.out.forward(tape, p, a)?;
            h = tape.add(h, a)?;
            let n = layer.norm_ff.forward(tape, p, h)?;
            let f = layer.ff_in.forward(tape, p, n)?;
            let f = tape.relu(f);
            let f = layer.ff_out.forward(tape, p, f)?;
            h = tape.add(h, f)?;
        }
        let summary = tape.slice_rows(h, 0, self.cfg.query_tokens)?;
        self.final_norm.forward(tape, p, summary)
    }
}

/// Scaled dot-product attention with `heads` equal channel splits and no
/// projections: per head `softmax(q kᵀ / √d_h) v`, heads concatenated.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (_, d) = tape.value(q).dims2()?;
    let (rows, dk) = tape.value(k).dims2()?;
    if rows == 0 {
        return Err(Error::usage("attention over an empty key set"));
    }
    if dk != d || tape.value(v).dims2()? != (rows, d) {
        return Err(Error::shape("attention operands disagree in shape"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::config("heads", format!("{d} channels do not split into {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale);
        let weights = tape.softmax_rows(logits)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        tape.concat_last_dim(&outs)
    }
}

/// Knowledge pool: visual tokens followed by textual tokens. Either block may
/// be absent, but not both.
pub fn build_knowledge_pool(tape: &mut Tape, visual: Option<Var>, textual: Option<Var>) -> Result<Var> {
    let parts: Vec<Var> = [visual, textual].into_iter().flatten().collect();
    match parts.as_slice() {
        [] => Err(Error::usage("knowledge pool needs at least one token block")),
        [only] => Ok(*only),
        _ => {
            let dv = tape.value(parts[0]).dims2()?.1;
            let dt = tape.value(parts[1]).dims2()?.1;
            if dv != dt {
                return Err(Error::shape(format!(
                    "visual tokens have width {dv}, textual tokens {dt}"
                )));
            }
            tape.concat_rows(&parts)
        }
    }
}

/// Attends from the query feature to the knowledge pool with identity
/// projections.
pub fn crossmodal_attention(tape: &mut Tape, query: Var, pool: Var, heads: usize) -> Result<Var> {
    if tape.value(pool).shape().first() == Some(&0) {
        return Err(Error::usage("cross-modal attention over an empty pool"));
    }
    multi_head_attention(tape, query, pool, pool, heads)
}

/// Residual fusion of the attention output with the query feature.
pub fn fuse_residual(tape: &mut Tape, attended: Var, query: Var) -> Result<Var> {
    tape.add(attended, query)
}

pub const STATS_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    /// Entropy in nats of a 64-bin histogram spanning the value range.
    pub entropy: f64,
}

pub fn feature_stats(t: &Tensor) -> FeatureStats {
    let xs = t.data();
    if xs.is_empty() {
        return FeatureStats {
            mean: 0.0,
            std: 0.0,
            entropy: 0.0,
        };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut entropy = 0.0;
    if hi > lo {
        let mut counts = vec![0usize; STATS_BINS];
        for x in xs {
            let bin = ((x - lo) / (hi - lo) * STATS_BINS as f64) as usize;
            counts[bin.min(STATS_BINS - 1)] += 1;
        }
        for c in counts.into_iter().filter(|c| *c > 0) {
            let p = c as f64 / n;
            entropy -= p * libm::log(p);
        }
    }
    FeatureStats {
        mean,
        std: libm::sqrt(var),
        entropy,
    }
}
