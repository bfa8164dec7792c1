//! Coordinate neural field over the uv grid, modulated per hidden layer.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::fft::conjugate_index;
use crate::numerics::{uniform_fan_in, Bound, ParamGroup, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldConfig {
    /// Number of affine maps, output head included.
    pub depth: usize,
    pub width: usize,
    /// Sinusoidal frequencies per coordinate axis.
    pub frequencies: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            width: 128,
            frequencies: 16,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::config("depth", "must be at least 2"));
        }
        if self.width == 0 {
            return Err(Error::config("width", "must be positive"));
        }
        if self.frequencies == 0 {
            return Err(Error::config("frequencies", "must be positive"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.depth - 1
    }

    pub fn encoding_width(&self) -> usize {
        2 + 4 * self.frequencies
    }

    /// Field parameters, FiLM heads excluded.
    pub fn param_count(&self) -> usize {
        let w = self.width;
        let e = self.encoding_width();
        (e * w + w) + (self.depth - 2) * (w * w + w) + (2 * w + 2)
    }
}

/// An unmeasured cell the field predicts, with its conjugate partner.
/// Self-conjugate cells are their own partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeCell {
    pub cell: usize,
    pub partner: usize,
}

impl FreeCell {
    pub fn is_self_conjugate(&self) -> bool {
        self.cell == self.partner
    }
}

/// Encoded coordinates of the free cells of one sampling mask. The field
/// predicts one representative per conjugate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGeometry {
    pub n: usize,
    mask: Vec<bool>,
    pub cells: Vec<FreeCell>,
    pub encoding: Tensor,
}

/// Angular frequencies spaced geometrically from `π` to `π·N/2`.
pub fn field_frequencies(n: usize, count: usize) -> Vec<f64> {
    let top = (n / 2).max(1) as f64;
    (0..count)
        .map(|k| {
            let t = if count > 1 {
                k as f64 / (count - 1) as f64
            } else {
                0.0
            };
            core::f64::consts::PI * libm::pow(top, t)
        })
        .collect()
}

impl FieldGeometry {
    pub fn new(mask: &[bool], n: usize, frequencies: usize) -> Result<Self> {
        if mask.len() != n * n {
            return Err(Error::shape(format!("mask of {} cells is not {n}x{n}", mask.len())));
        }
        let h = (n / 2) as f64;
        let freqs = field_frequencies(n, frequencies);
        let width = 2 + 4 * frequencies;
        let mut cells = Vec::new();
        let mut data = Vec::new();
        for row in 0..n {
            for col in 0..n {
                let cell = row * n + col;
                let partner = conjugate_index(row, n) * n + conjugate_index(col, n);
                if mask[cell] || partner < cell {
                    continue;
                }
                cells.push(FreeCell { cell, partner });
                let (u, v) = ((col as f64 - h) / h, (row as f64 - h) / h);
                data.extend_from_slice(&[u, v]);
                for w in &freqs {
                    data.extend_from_slice(&[
                        libm::sin(w * u),
                        libm::cos(w * u),
                        libm::sin(w * v),
                        libm::cos(w * v),
                    ]);
                }
            }
        }
        let encoding = Tensor::new(&[cells.len(), width], data)?;
        Ok(Self {
            n,
            mask: mask.to_vec(),
            cells,
            encoding,
        })
    }

    pub fn fits(&self, mask: &[bool], frequencies: usize) -> bool {
        self.mask == mask && self.encoding.shape().get(1) == Some(&(2 + 4 * frequencies))
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

impl Affine {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add_bias(y, p.var(self.b))
    }
}

fn affine(
    store: &mut ParamStore,
    name: &str,
    weight: Tensor,
    bias: Tensor,
) -> Affine {
    Affine {
        w: store.add(format!("{name}.weight"), ParamGroup::Reconstructor, weight),
        b: store.add(format!("{name}.bias"), ParamGroup::Reconstructor, bias),
    }
}

fn scaled(mut t: Tensor, c: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v *= c);
    t
}

/// Feature-wise modulation `gamma ⊙ x + beta` of every row of `x`.
pub fn film_modulate(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    tape.film(x, gamma, beta)
}

/// Neural field plus the affine heads that map chunks of the pooled fused
/// feature to per-layer `(gamma, beta)`.
#[derive(Debug, Clone)]
pub struct ConditionedField {
    cfg: FieldConfig,
    chunk: usize,
    hidden: Vec<Affine>,
    gamma: Vec<Affine>,
    beta: Vec<Affine>,
    head: Affine,
}

impl ConditionedField {
    /// `cond_dim` is the width of the conditioning feature; it is split into
    /// one equal chunk per hidden layer.
    pub fn new(cfg: FieldConfig, cond_dim: usize, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg.hidden_layers();
        if cond_dim == 0 || !cond_dim.is_multiple_of(layers) {
            return Err(Error::config(
                "d_model",
                format!("{cond_dim} does not split into {layers} per-layer chunks"),
            ));
        }
        let chunk = cond_dim / layers;
        let w = cfg.width;
        let relu_gain = libm::sqrt(6.0);
        let mut hidden = Vec::with_capacity(layers);
        let mut gamma = Vec::with_capacity(layers);
        let mut beta = Vec::with_capacity(layers);
        for j in 0..layers {
            let fan_in = if j == 0 { cfg.encoding_width() } else { w };
            hidden.push(affine(
                store,
                &format!("field.layer{j}"),
                scaled(uniform_fan_in(rng, &[fan_in, w], fan_in), relu_gain),
                uniform_fan_in(rng, &[w], fan_in),
            ));
            gamma.push(affine(
                store,
                &format!("film.gamma{j}"),
                uniform_fan_in(rng, &[chunk, w], chunk),
                Tensor::full(&[w], 1.0),
            ));
            beta.push(affine(
                store,
                &format!("film.beta{j}"),
                uniform_fan_in(rng, &[chunk, w], chunk),
                Tensor::zeros(&[w]),
            ));
        }
        let head = affine(store, "field.head", Tensor::zeros(&[w, 2]), Tensor::zeros(&[2]));
        Ok(Self {
            cfg,
            chunk,
            hidden,
            gamma,
            beta,
            head,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    /// Parameters of the field and its FiLM heads.
    pub fn param_count(cfg: &FieldConfig, cond_dim: usize) -> usize {
        let layers = cfg.hidden_layers();
        let chunk = cond_dim / layers;
        cfg.param_count() + layers * 2 * (chunk * cfg.width + cfg.width)
    }

    /// Per-hidden-layer `(gamma, beta)` from the token-averaged condition.
    pub fn modulation(&self, tape: &mut Tape, p: &Bound, cond: Var) -> Result<Vec<(Var, Var)>> {
        let pooled = tape.mean_pool_tokens(cond)?;
        let width = tape.value(pooled).dims2()?.1;
        if width != self.chunk * self.hidden.len() {
            return Err(Error::config(
                "d_model",
                format!("condition width {width} does not match the FiLM heads"),
            ));
        }
        (0..self.hidden.len())
            .map(|j| {
                let part = tape.slice_cols(pooled, j * self.chunk, self.chunk)?;
                let g = self.gamma[j].forward(tape, p, part)?;
                let b = self.beta[j].forward(tape, p, part)?;
                Ok((g, b))
            })
            .collect()
    }

    /// Raw `(re, im)` predictions `[P×2]` at the encoded coordinates.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, coords: Var, cond: Var) -> Result<Var> {
        let film = self.modulation(tape, p, cond)?;
        let mut h = coords;
        for (layer, (g, b)) in self.hidden.iter().zip(film) {
            let a = layer.forward(tape, p, h)?;
            let a = tape.relu(a);
            h = film_modulate(tape, a, g, b)?;
        }
        self.head.forward(tape, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use alloc::vec;

    #[test]
    fn geometry_takes_one_cell_per_pair() {
        let n = 8;
        let mut mask = vec![false; n * n];
        mask[4 * n + 5] = true;
        mask[4 * n + 3] = true;
        let g = FieldGeometry::new(&mask, n, 3).unwrap();
        let self_conj = g.cells.iter().filter(|c| c.is_self_conjugate()).count();
        assert_eq!(self_conj, 4);
        assert_eq!(2 * g.cells.len() - self_conj, n * n - 2);
        assert_eq!(g.encoding.shape(), &[g.cells.len(), 14]);
        assert!(g.fits(&mask, 3) && !g.fits(&mask, 2));
    }

    #[test]
    fn film_identity_and_annihilation() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]).unwrap());
        let ones = tape.constant(Tensor::full(&[1, 2], 1.0));
        let zeros = tape.constant(Tensor::zeros(&[1, 2]));
        let beta = tape.constant(Tensor::from_rows(&[&[0.25, 7.0]]).unwrap());
        let same = film_modulate(&mut tape, x, ones, zeros).unwrap();
        assert_eq!(tape.value(same), tape.value(x));
        let flat = film_modulate(&mut tape, x, zeros, beta).unwrap();
        assert_eq!(tape.value(flat).data(), &[0.25, 7.0, 0.25, 7.0]);
        let wide = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(film_modulate(&mut tape, x, wide, zeros), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_head_predicts_zero() {
        let mut store = ParamStore::new();
        let cfg = FieldConfig {
            depth: 3,
            width: 8,
            frequencies: 2,
        };
        let f = ConditionedField::new(cfg, 4, &mut store, &mut seeded_rng(1)).unwrap();
        assert_eq!(store.total_size(), ConditionedField::param_count(&cfg, 4));
        let g = FieldGeometry::new(&[false; 16], 4, 2).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let coords = tape.constant(g.encoding.clone());
        let cond = tape.constant(Tensor::full(&[3, 4], 0.5));
        let out = f.forward(&mut tape, &p, coords, cond).unwrap();
        assert_eq!(tape.value(out).shape(), &[g.cells.len(), 2]);
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn condition_must_split_evenly() {
        let cfg = FieldConfig::default();
        let r = ConditionedField::new(cfg, 6, &mut ParamStore::new(), &mut seeded_rng(0));
        assert!(matches!(r, Err(Error::Config { .. })));
    }
}
