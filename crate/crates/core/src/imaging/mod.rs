//! uv-plane ↔ image-plane transforms, dirty imaging, CLEAN and image
//! quality metrics.
//!
//! All grids use the centered convention: cell `(N/2, N/2)` is zero
//! spatial frequency and pixel `(N/2, N/2)` is the phase center.

mod clean;
mod metrics;

use alloc::vec::Vec;

use num_complex::Complex64;

pub use clean::{hogbom_clean, CleanComponent, CleanConfig, CleanResult, GaussianBeam};
pub use metrics::{mse, psnr, ssim, PSNR_CAP_DB, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::numerics::fft::{conjugate_index, fft2_centered, ifft2_centered};
use crate::skysim::{SkyImage, VisibilitySet};

/// Real-valued `N×N` image-plane map. Unlike [`SkyImage`] it may go
/// negative (dirty images, residuals).
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(alloc::format!(
                "map of {} values is not {n}x{n}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: alloc::vec![0.0; n * n],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index and value of the entry with the largest magnitude.
    pub fn abs_peak(&self) -> (usize, f64) {
        let mut best = (0, 0.0f64);
        for (i, v) in self.data.iter().enumerate() {
            if libm::fabs(*v) > libm::fabs(best.1) {
                best = (i, *v);
            }
        }
        best
    }

    /// Circularly shifts the map so that the center moves to `(row, col)`.
    pub fn shifted_to(&self, row: usize, col: usize) -> Map {
        let n = self.n;
        let h = n / 2;
        let mut out = alloc::vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let sy = (y + n + h - row) % n;
                let sx = (x + n + h - col) % n;
                out[y * n + x] = self.data[sy * n + sx];
            }
        }
        Map { n, data: out }
    }
}

impl From<&SkyImage> for Map {
    fn from(sky: &SkyImage) -> Self {
        Map {
            n: sky.n,
            data: sky.pixels.clone(),
        }
    }
}

/// Dense `N×N` visibility grid, zero frequency at the center cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVisibilityGrid {
    pub n: usize,
    pub values: Vec<Complex64>,
}

impl DenseVisibilityGrid {
    pub fn new(n: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape(alloc::format!(
                "grid of {} values is not {n}x{n}",
                values.len()
            )));
        }
        if !n.is_power_of_two() {
            return Err(Error::shape(alloc::format!("grid size {n} is not a power of two")));
        }
        Ok(Self { n, values })
    }

    /// Full noiseless spectrum of a sky: the dense ground truth.
    pub fn from_sky(sky: &SkyImage) -> Self {
        Self {
            n: sky.n,
            values: sky.spectrum(),
        }
    }

    /// Forward transform of an arbitrary real map.
    pub fn from_map(map: &Map) -> Result<Self> {
        let mut values: Vec<Complex64> = map.data.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        fft2_centered(&mut values, map.n)?;
        Self::new(map.n, values)
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.n + col]
    }

    /// Largest `|V(k) - conj(V(-k))|` over the grid.
    pub fn hermitian_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let partner = self.at(conjugate_index(r, n), conjugate_index(c, n));
                worst = worst.max((self.at(r, c) - partner.conj()).norm());
            }
        }
        worst
    }
}

/// Centered inverse transform of a grid whose residual imaginary part must
/// be negligible: `max|imag| <= 1e-8 · max|real|`.
pub fn ift_image(grid: &DenseVisibilityGrid) -> Result<Map> {
    let mut values = grid.values.clone();
    ifft2_centered(&mut values, grid.n)?;
    let max_re = values.iter().map(|v| libm::fabs(v.re)).fold(0.0, f64::max);
    let max_im = values.iter().map(|v| libm::fabs(v.im)).fold(0.0, f64::max);
    if max_im > 1e-8 * max_re {
        return Err(Error::usage(alloc::format!(
            "grid is not Hermitian: imaginary residue {max_im:e} vs real peak {max_re:e}"
        )));
    }
    Map::new(grid.n, values.into_iter().map(|v| v.re).collect())
}

/// Inverse transform of the zero-filled measurements, without any flux
/// calibration. The untrained reconstructor reproduces this map exactly.
pub fn zero_filled_image(vs: &VisibilitySet) -> Result<Map> {
    if vs.is_empty() {
        return Err(Error::usage("dirty image of an empty visibility set"));
    }
    ift_image(&DenseVisibilityGrid::new(vs.n, vs.zero_filled_grid())?)
}

/// Point-spread function of a sampling pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct DirtyBeam {
    /// Beam normalized to 1 at the center pixel.
    pub map: Map,
    /// Center value of the unnormalized beam, `count / N²`.
    pub raw_peak: f64,
}

/// Inverse transform of the sampling mask, peak-normalized.
pub fn dirty_beam(vs: &VisibilitySet) -> Result<DirtyBeam> {
    if vs.is_empty() {
        return Err(Error::usage("dirty beam of an empty visibility set"));
    }
    let ones: Vec<Complex64> = vs
        .mask()
        .iter()
        .map(|m| Complex64::new(if *m { 1.0 } else { 0.0 }, 0.0))
        .collect();
    let raw = ift_image(&DenseVisibilityGrid::new(vs.n, ones)?)?;
    let h = vs.n / 2;
    let raw_peak = raw.at(h, h);
    let data = raw.data.iter().map(|v| v / raw_peak).collect();
    Ok(DirtyBeam {
        map: Map::new(vs.n, data)?,
        raw_peak,
    })
}

/// Dirty image in flux-per-beam units: the zero-filled image divided by
/// the beam's `raw_peak`. A point source of flux `f` at pixel `p` images
/// to `f` times the peak-normalized beam shifted to `p`, and full
/// coverage returns the sky itself.
pub fn dirty_image(vs: &VisibilitySet) -> Result<Map> {
    let zero_filled = zero_filled_image(vs)?;
    let beam = dirty_beam(vs)?;
    let data = zero_filled.data.iter().map(|v| v / beam.raw_peak).collect();
    Map::new(vs.n, data)
}
