//! Amplitude- and error-weighted spectral loss.

use alloc::vec::Vec;

use num_complex::Complex64;

use super::field::FieldGeometry;
use crate::error::{Error, Result};
use crate::imaging::{ift_image, psnr, ssim, DenseVisibilityGrid};
use crate::numerics::{Tape, Tensor, Var};
use crate::skysim::VisibilitySet;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// `|pred - truth|` per cell.
    pub abs_delta: Vec<f64>,
    /// Per-cell weight `(ρ/max ρ + 1)·|Δ|`, with `ρ = |truth|`.
    pub omega: Vec<f64>,
    /// Image-plane scores of the prediction against the imaged truth.
    pub psnr: f64,
    pub ssim: f64,
}

pub(crate) struct LossTerms {
    pub loss: f64,
    pub abs_delta: Vec<f64>,
    pub omega: Vec<f64>,
}

pub(crate) fn loss_terms(pred: &DenseVisibilityGrid, truth: &DenseVisibilityGrid) -> Result<LossTerms> {
    if pred.n != truth.n || pred.values.len() != truth.values.len() {
        return Err(Error::shape("prediction and truth grids differ in size"));
    }
    let max_rho = truth.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if max_rho == 0.0 {
        return Err(Error::Degenerate("truth grid is identically zero".into()));
    }
    let mut abs_delta = Vec::with_capacity(pred.values.len());
    let mut omega = Vec::with_capacity(pred.values.len());
    let mut total = 0.0;
    for (p, t) in pred.values.iter().zip(&truth.values) {
        let d = (p - t).norm();
        let w = (t.norm() / max_rho + 1.0) * d;
        total += w * d * d;
        abs_delta.push(d);
        omega.push(w);
    }
    Ok(LossTerms {
        loss: total / pred.values.len() as f64,
        abs_delta,
        omega,
    })
}

/// `mean(ω·|Δ|²)` over all cells, plus image-plane scores.
pub fn spectral_loss(pred: &DenseVisibilityGrid, truth: &DenseVisibilityGrid) -> Result<LossReport> {
    let terms = loss_terms(pred, truth)?;
    let truth_map = ift_image(truth)?;
    let pred_map = ift_image(pred)?;
    let peak = match truth_map.max() {
        p if p > 0.0 => p,
        _ => 1.0,
    };
    Ok(LossReport {
        loss: terms.loss,
        abs_delta: terms.abs_delta,
        omega: terms.omega,
        psnr: psnr(&pred_map, &truth_map, peak)?,
        ssim: ssim(&pred_map, &truth_map, peak)?,
    })
}

/// Dense grid from measured samples plus field predictions `[P×2]` for the
/// free cells; each prediction also fills its conjugate partner.
/// Self-conjugate cells keep only the real part.
pub fn assemble_grid(vs: &VisibilitySet, geom: &FieldGeometry, pred: &[f64]) -> Result<DenseVisibilityGrid> {
    if pred.len() != 2 * geom.cells.len() || geom.n != vs.n {
        return Err(Error::shape("predictions do not match the field geometry"));
    }
    let mut values = vs.zero_filled_grid();
    for (fc, re_im) in geom.cells.iter().zip(pred.chunks(2)) {
        if fc.is_self_conjugate() {
            values[fc.cell] = Complex64::new(re_im[0], 0.0);
        } else {
            let v = Complex64::new(re_im[0], re_im[1]);
            values[fc.cell] = v;
            values[fc.partner] = v.conj();
        }
    }
    DenseVisibilityGrid::new(vs.n, values)
}

/// Records the spectral loss of the grid assembled from `pred` on `tape`,
/// with ω frozen at its current value. Returns the loss variable and the
/// assembled grid.
pub fn spectral_loss_on_tape(
    tape: &mut Tape,
    pred: Var,
    vs: &VisibilitySet,
    geom: &FieldGeometry,
    truth: &DenseVisibilityGrid,
) -> Result<(Var, DenseVisibilityGrid)> {
    let grid = assemble_grid(vs, geom, tape.value(pred).data())?;
    let terms = loss_terms(&grid, truth)?;
    let omega = &terms.omega;
    let mut constant = 0.0;
    let mut free = alloc::vec![false; grid.values.len()];
    let mut targets = Vec::with_capacity(2 * geom.cells.len());
    let mut weights = Vec::with_capacity(2 * geom.cells.len());
    // Each prediction enters the loss at its cell and at its partner, where
    // it appears conjugated; the two quadratics merge into one.
    let mut merge = |w1: f64, a: f64, w2: f64, b: f64, c: &mut f64| {
        let w = w1 + w2;
        if w > 0.0 {
            targets.push((w1 * a + w2 * b) / w);
            *c += w1 * w2 * (a - b) * (a - b) / w;
        } else {
            targets.push(a);
        }
        weights.push(w);
    };
    for fc in &geom.cells {
        free[fc.cell] = true;
        free[fc.partner] = true;
        let t = truth.values[fc.cell];
        let wc = omega[fc.cell];
        if fc.is_self_conjugate() {
            merge(wc, t.re, 0.0, 0.0, &mut constant);
            merge(0.0, 0.0, 0.0, 0.0, &mut constant);
            constant += wc * t.im * t.im;
        } else {
            let tp = truth.values[fc.partner];
            let wp = omega[fc.partner];
            merge(wc, t.re, wp, tp.re, &mut constant);
            merge(wc, t.im, wp, -tp.im, &mut constant);
        }
    }
    for (i, is_free) in free.iter().enumerate() {
        if !is_free {
            constant += omega[i] * terms.abs_delta[i] * terms.abs_delta[i];
        }
    }
    let sq = tape.weighted_sq_err(pred, targets, weights)?;
    let c = tape.constant(Tensor::scalar(constant));
    let total = tape.add(sq, c)?;
    Ok((tape.scale(total, 1.0 / grid.values.len() as f64), grid))
}
