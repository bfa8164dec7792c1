//! Image-form and text-form views of a visibility set, and the frozen
//! encoders that turn them into knowledge tokens.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::numerics::{
    seeded_rng, uniform_fan_in, Bound, ParamGroup, ParamId, ParamStore, SeededRng, Tape, Tensor,
    Var,
};
use crate::skysim::VisibilitySet;

/// Rows of the raw visibility sequence: `u, v, re, im`.
pub const SEQUENCE_ROWS: usize = 4;
pub const DEFAULT_CHANNELS: usize = 4;
pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_TEXT_TOKENS: usize = 32;
pub const DEFAULT_VOCAB: usize = 512;
pub const UNNAMED_SURVEY: &str = "unnamed-survey";

/// Amplitude used to normalize a set's values; 1 for an all-zero set.
pub fn amplitude_scale(vs: &VisibilitySet) -> f64 {
    let s = vs.max_amplitude();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// The samples in raster order as a `4×L` sequence of `u/(N/2)`, `v/(N/2)`,
/// `re/s`, `im/s` with `s` the largest amplitude.
pub fn visibility_sequence(vs: &VisibilitySet) -> Tensor {
    let l = vs.len();
    let half = vs.n as f64 / 2.0;
    let s = amplitude_scale(vs);
    let mut data = vec![0.0; SEQUENCE_ROWS * l];
    for (i, smp) in vs.samples().iter().enumerate() {
        data[i] = smp.u / half;
        data[l + i] = smp.v / half;
        data[2 * l + i] = smp.value.re / s;
        data[3 * l + i] = smp.value.im / s;
    }
    Tensor::new(&[SEQUENCE_ROWS, l], data).expect("sequence shape")
}

/// Bilinear splat of each sample onto its four nearest grid cells, as
/// `(cell, sample, weight)` entries. Each sample's weights sum to one, so the
/// scatter preserves the total of every feature channel.
pub fn bilinear_scatter_entries(vs: &VisibilitySet) -> Vec<(usize, usize, f64)> {
    let n = vs.n;
    let half = (n / 2) as f64;
    let mut entries = Vec::with_capacity(4 * vs.len());
    for (i, smp) in vs.samples().iter().enumerate() {
        let (x, y) = (smp.u + half, smp.v + half);
        let (x0, y0) = (libm::floor(x), libm::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        let taps = [
            (y0, x0, (1.0 - fx) * (1.0 - fy)),
            (y0, x0 + 1.0, fx * (1.0 - fy)),
            (y0 + 1.0, x0, (1.0 - fx) * fy),
            (y0 + 1.0, x0 + 1.0, fx * fy),
        ];
        for (r, c, w) in taps {
            if w == 0.0 || r < 0.0 || c < 0.0 || r >= n as f64 || c >= n as f64 {
                continue;
            }
            entries.push((r as usize * n + c as usize, i, w));
        }
    }
    entries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageFormConfig {
    pub channels: usize,
    /// Odd kernel width of the sequence convolution.
    pub kernel_1d: usize,
    /// Odd kernel width of the grid convolution.
    pub kernel_2d: usize,
}

impl Default for ImageFormConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS,
            kernel_1d: 3,
            kernel_2d: 3,
        }
    }
}

impl ImageFormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        for (field, k) in [("kernel_1d", self.kernel_1d), ("kernel_2d", self.kernel_2d)] {
            if k % 2 == 0 {
                return Err(Error::config(field, "must be odd"));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        c * SEQUENCE_ROWS * self.kernel_1d + c + c * c * self.kernel_2d * self.kernel_2d + c
    }
}

/// Image-form feature map `C×N×N`, detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFormFeature {
    pub map: Tensor,
}

/// Trainable sequence convolution, bilinear scatter and grid convolution
/// that lift a visibility set into an image-form feature map.
#[derive(Debug, Clone)]
pub struct ImageFormTransform {
    cfg: ImageFormConfig,
    conv1d_w: ParamId,
    conv1d_b: ParamId,
    conv2d_w: ParamId,
    conv2d_b: ParamId,
}

impl ImageFormTransform {
    pub fn new(cfg: ImageFormConfig, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let (k1, k2) = (cfg.kernel_1d, cfg.kernel_2d);
        let fan1 = SEQUENCE_ROWS * k1;
        let fan2 = c * k2 * k2;
        let conv1d_w = store.add(
            "conv1d.weight",
            ParamGroup::ImageConv1d,
            uniform_fan_in(rng, &[c, SEQUENCE_ROWS, k1], fan1),
        );
        let conv1d_b = store.add(
            "conv1d.bias",
            ParamGroup::ImageConv1d,
            uniform_fan_in(rng, &[c], fan1),
        );
        let conv2d_w = store.add(
            "conv2d.weight",
            ParamGroup::ImageConv2d,
            uniform_fan_in(rng, &[c, c, k2, k2], fan2),
        );
        let conv2d_b = store.add(
            "conv2d.bias",
            ParamGroup::ImageConv2d,
            uniform_fan_in(rng, &[c], fan2),
        );
        Ok(Self {
            cfg,
            conv1d_w,
            conv1d_b,
            conv2d_w,
            conv2d_b,
        })
    }

    pub fn config(&self) -> &ImageFormConfig {
        &self.cfg
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.conv1d_w, self.conv1d_b, self.conv2d_w, self.conv2d_b]
    }

    /// Records the transform on `tape`; the result has shape `C×N×N`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, vs: &VisibilitySet) -> Result<Var> {
        if vs.is_empty() {
            return Err(Error::usage("image-form transform of an empty visibility set"));
        }
        let n = vs.n;
        let seq = tape.constant(visibility_sequence(vs));
        let feats = tape.conv1d(
            seq,
            params.var(self.conv1d_w),
            params.var(self.conv1d_b),
            self.cfg.kernel_1d / 2,
        )?;
        let grid = tape.sparse_linear(feats, n * n, bilinear_scatter_entries(vs))?;
        let grid = tape.reshape(grid, &[self.cfg.channels, n, n])?;
        tape.conv2d(
            grid,
            params.var(self.conv2d_w),
            params.var(self.conv2d_b),
            self.cfg.kernel_2d / 2,
        )
    }

    /// Evaluates the transform without recording gradients.
    pub fn apply(&self, store: &ParamStore, vs: &VisibilitySet) -> Result<ImageFormFeature> {
        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &params, vs)?;
        Ok(ImageFormFeature {
            map: tape.value(out).clone(),
        })
    }
}

/// Dataset-level description used in the text prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub subject: String,
}

/// Per-sample statistics rendered into the prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptStats {
    pub samples: usize,
    pub amp_mean: f64,
    pub amp_std: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Circular mean phase, in radians, over samples with `v > 0` or
    /// `v = 0, u >= 0`. Conjugate pairs would otherwise cancel.
    pub phase_mean: f64,
    pub uv_rmax: f64,
    pub coverage: f64,
}

const STAT_KEYS: [&str; 8] = [
    "samples",
    "amp_mean",
    "amp_std",
    "amp_min",
    "amp_max",
    "phase_mean",
    "uv_rmax",
    "coverage",
];

/// Formats `x` with six significant digits in plain decimal notation.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.5}", x);
    }
    let exp = libm::floor(libm::log10(libm::fabs(x))) as i32;
    // Rounding can carry into the next decade, e.g. 9.999996.
    let decimals = |e: i32| (5 - e).max(0) as usize;
    let s = format!("{:.*}", decimals(exp), x);
    let rounded: f64 = s.parse().unwrap_or(x);
    let exp2 = libm::floor(libm::log10(libm::fabs(rounded))) as i32;
    if exp2 != exp {
        format!("{:.*}", decimals(exp2), x)
    } else {
        s
    }
}

impl PromptStats {
    pub fn from_visibility(vs: &VisibilitySet) -> Self {
        let amps: Vec<f64> = vs.samples().iter().map(|s| s.amplitude()).collect();
        let count = amps.len();
        let denom = count.max(1) as f64;
        let mean = amps.iter().sum::<f64>() / denom;
        let var = amps.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / denom;
        let (mut sin, mut cos) = (0.0, 0.0);
        for s in vs.samples() {
            if s.v > 0.0 || (s.v == 0.0 && s.u >= 0.0) {
                let phase = libm::atan2(s.value.im, s.value.re);
                sin += libm::sin(phase);
                cos += libm::cos(phase);
            }
        }
        let phase_mean = if sin == 0.0 && cos == 0.0 {
            0.0
        } else {
            libm::atan2(sin, cos)
        };
        Self {
            samples: count,
            amp_mean: mean,
            amp_std: libm::sqrt(var),
            amp_min: amps.iter().copied().fold(f64::INFINITY, f64::min),
            amp_max: amps.iter().copied().fold(0.0, f64::max),
            phase_mean,
            uv_rmax: vs
                .samples()
                .iter()
                .map(|s| libm::sqrt(s.u * s.u + s.v * s.v))
                .fold(0.0, f64::max),
            coverage: vs.coverage_fraction(),
        }
    }

    fn values(&self) -> [f64; 7] {
        [
            self.amp_mean,
            self.amp_std,
            self.amp_min,
            self.amp_max,
            self.phase_mean,
            self.uv_rmax,
            self.coverage,
        ]
    }

    /// Parses a rendered sample block back into statistics.
    pub fn parse(block: &str) -> Result<Self> {
        let mut fields = block.split_whitespace();
        let mut next = |key: &str| -> Result<&str> {
            let tok = fields
                .next()
                .ok_or_else(|| Error::usage(format!("prompt is missing `{key}`")))?;
            tok.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| Error::usage(format!("expected `{key}=` in prompt, found `{tok}`")))
        };
        let samples = next(STAT_KEYS[0])?
            .parse()
            .map_err(|_| Error::usage("bad sample count in prompt"))?;
        let mut vals = [0.0; 7];
        for (slot, key) in vals.iter_mut().zip(&STAT_KEYS[1..]) {
            *slot = next(key)?
                .parse()
                .map_err(|_| Error::usage(format!("bad value for `{key}` in prompt")))?;
        }
        let [amp_mean, amp_std, amp_min, amp_max, phase_mean, uv_rmax, coverage] = vals;
        Ok(Self {
            samples,
            amp_mean,
            amp_std,
            amp_min,
            amp_max,
            phase_mean,
            uv_rmax,
            coverage,
        })
    }
}

impl fmt::Display for PromptStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", STAT_KEYS[0], self.samples)?;
        for (key, v) in STAT_KEYS[1..].iter().zip(self.values()) {
            write!(f, " {}={}", key, format_sig6(v))?;
        }
        Ok(())
    }
}

/// Text-form view of a visibility set.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrompt {
    pub dataset_block: String,
    pub sample_block: String,
    /// The statistics as rendered, i.e. rounded to six significant digits.
    pub stats: PromptStats,
}

impl TextPrompt {
    pub fn full(&self) -> String {
        format!("{} {}", self.dataset_block, self.sample_block)
    }
}

/// Renders dataset metadata and per-sample statistics into a prompt.
pub fn text_rendering_transform(vs: &VisibilitySet, meta: &DatasetMeta) -> Result<TextPrompt> {
    if vs.is_empty() {
        return Err(Error::usage("text rendering of an empty visibility set"));
    }
    let name = match meta.name.trim() {
        "" => UNNAMED_SURVEY,
        s => s,
    };
    let subject = match meta.subject.trim() {
        "" => "unspecified sources",
        s => s,
    };
    let dataset_block = format!("survey: {name}. subject: {subject}. sparse visibility statistics:");
    let sample_block = PromptStats::from_visibility(vs).to_string();
    let stats = PromptStats::parse(&sample_block)?;
    Ok(TextPrompt {
        dataset_block,
        sample_block,
        stats,
    })
}

/// Sinusoidal code of a scalar position: `dim/2` sine/cosine pairs with
/// geometrically spaced frequencies from 1 down to 1/10000.
pub fn sinusoid_code(pos: f64, dim: usize, out: &mut [f64]) {
    let pairs = dim / 2;
    for k in 0..pairs {
        let freq = libm::pow(10000.0, -(k as f64) / pairs.max(1) as f64);
        out[2 * k] = libm::sin(pos * freq);
        out[2 * k + 1] = libm::cos(pos * freq);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Visual,
    Textual,
}

/// Deterministic, never-trained stand-in for a pre-trained encoder.
///
/// Visual encoders hold a bias-free patch projection; textual encoders hold
/// a word embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    kind: EncoderKind,
    seed: u64,
    dim: usize,
    weights: Tensor,
    patch: usize,
    channels: usize,
    max_tokens: usize,
}

impl FrozenEncoder {
    pub fn visual(seed: u64, dim: usize, channels: usize, patch: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(4) {
            return Err(Error::config("d_model", "must be a positive multiple of 4"));
        }
        if patch == 0 || channels == 0 {
            return Err(Error::config("patch", "patch and channels must be positive"));
        }
        let fan_in = channels * patch * patch;
        let mut rng = seeded_rng(seed ^ 0x5649_5355_414c);
        Ok(Self {
            kind: EncoderKind::Visual,
            seed,
            dim,
            weights: uniform_fan_in(&mut rng, &[fan_in, dim], fan_in),
            patch,
            channels,
            max_tokens: 0,
        })
    }

    pub fn textual(seed: u64, dim: usize, vocab: usize, max_tokens: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::config("d_model", "must be a positive even number"));
        }
        if vocab == 0 {
            return Err(Error::config("vocab", "must be positive"));
        }
        let mut rng = seeded_rng(seed ^ 0x5445_5854);
        Ok(Self {
            kind: EncoderKind::Textual,
            seed,
            dim,
            weights: uniform_fan_in(&mut rng, &[vocab, dim], 1),
            patch: 0,
            channels: 0,
            max_tokens,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn expect_kind(&self, kind: EncoderKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::usage(format!(
                "expected a {:?} encoder, got {:?}",
                kind, self.kind
            )));
        }
        Ok(())
    }
}

/// Produces visual knowledge tokens from an image-form map on the tape.
/// Implementations for external models may return constants.
pub trait VisualTokenizer {
    fn token_dim(&self) -> usize;
    fn encode_map(&self, tape: &mut Tape, map: Var) -> Result<Var>;
}

/// Produces textual knowledge tokens from a prompt.
pub trait TextTokenizer {
    fn token_dim(&self) -> usize;
    fn encode_prompt(&self, prompt: &TextPrompt) -> Result<Tensor>;
}

impl VisualTokenizer for FrozenEncoder {
    fn token_dim(&self) -> usize {
        self.dim
    }

    fn encode_map(&self, tape: &mut Tape, map: Var) -> Result<Var> {
        vkg_encode(tape, map, self)
    }
}

impl TextTokenizer for FrozenEncoder {
    fn token_dim(&self) -> usize {
        self.dim
    }

    fn encode_prompt(&self, prompt: &TextPrompt) -> Result<Tensor> {
        ikg_encode(prompt, self)
    }
}

/// Flat indices that cut a `C×H×W` map into non-overlapping `P×P` patches,
/// one row per patch in raster order, features ordered channel, row, column.
fn patch_index(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * h * w);
    for pr in 0..h / p {
        for pc in 0..w / p {
            for ch in 0..c {
                for y in 0..p {
                    for x in 0..p {
                        idx.push((ch * h + pr * p + y) * w + pc * p + x);
                    }
                }
            }
        }
    }
    idx
}

/// Fixed 2-D position codes for a `rows×cols` patch grid: the first half of
/// each code encodes the patch row, the second half the patch column.
pub fn patch_position_codes(rows: usize, cols: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; rows * cols * dim];
    for (t, code) in data.chunks_mut(dim).enumerate() {
        let (r, c) = (t / cols, t % cols);
        sinusoid_code(r as f64, half, &mut code[..half]);
        sinusoid_code(c as f64, half, &mut code[half..]);
    }
    Tensor::new(&[rows * cols, dim], data).expect("position code shape")
}

/// Visual knowledge tokens `[(H/P)(W/P) × d]`: patch flattening, the
/// encoder's fixed projection and 2-D position codes. Gradients reach the
/// map but never the encoder, whose weights enter the tape as constants.
pub fn vkg_encode(tape: &mut Tape, map: Var, enc: &FrozenEncoder) -> Result<Var> {
    enc.expect_kind(EncoderKind::Visual)?;
    let (c, h, w) = match tape.value(map).shape() {
        [c, h, w] => (*c, *h, *w),
        other => return Err(Error::shape(format!("image-form map shape {:?}", other))),
    };
    let p = enc.patch;
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "map {h}×{w} is not divisible into {p}×{p} patches"
        )));
    }
    if c != enc.channels {
        return Err(Error::shape(format!(
            "map has {c} channels, encoder expects {}",
            enc.channels
        )));
    }
    let tokens = (h / p) * (w / p);
    let patches = tape.gather(map, patch_index(c, h, w, p), &[tokens, c * p * p])?;
    let proj = tape.constant(enc.weights.clone());
    let projected = tape.matmul(patches, proj)?;
    let pos = tape.constant(patch_position_codes(h / p, w / p, enc.dim));
    tape.add(projected, pos)
}

/// Splits a prompt into word and number tokens on whitespace and `=`.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|ch: char| ch.is_whitespace() || ch == '=')
        .filter(|t| !t.is_empty())
        .collect()
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Textual knowledge tokens `[T_t × d]`. Numbers map to a sinusoidal code of
/// `sign(x)·ln(1+|x|)`, words to a hashed row of the embedding table.
/// Prompts longer than `T_t` tokens are truncated; the rest is zero rows.
pub fn ikg_encode(prompt: &TextPrompt, enc: &FrozenEncoder) -> Result<Tensor> {
    enc.expect_kind(EncoderKind::Textual)?;
    let d = enc.dim;
    let rows = enc.max_tokens;
    let vocab = enc.weights.shape()[0];
    let table = enc.weights.data();
    let mut data = vec![0.0; rows * d];
    let text = prompt.full();
    for (tok, out) in tokenize(&text).into_iter().zip(data.chunks_mut(d)) {
        match tok.parse::<f64>() {
            Ok(x) if x.is_finite() => {
                let z = libm::copysign(libm::log1p(libm::fabs(x)), x);
                sinusoid_code(z * VALUE_GAIN, d, out);
            }
            _ => {
                let row = (fnv1a(enc.seed, tok.as_bytes()) % vocab as u64) as usize;
                out.copy_from_slice(&table[row * d..(row + 1) * d]);
            }
        }
    }
    Tensor::new(&[rows, d], data)
}

/// Stretches log-compressed values so nearby statistics get distinct codes.
const VALUE_GAIN: f64 = 100.0;
