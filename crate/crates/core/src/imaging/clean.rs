//! Högbom CLEAN.

use alloc::vec;
use alloc::vec::Vec;

use super::Map;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanConfig {
    /// Fraction of the peak removed per iteration, in `(0, 1]`.
    pub gain: f64,
    pub max_iter: usize,
    /// Stop once the residual peak magnitude falls to this fraction of the
    /// initial peak.
    pub threshold: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            gain: 0.1,
            max_iter: 1000,
            threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanComponent {
    pub row: usize,
    pub col: usize,
    pub flux: f64,
}

/// Elliptical Gaussian `exp(-½(a·dx² + 2b·dx·dy + c·dy²))` with peak 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBeam {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GaussianBeam {
    /// Circular beam with the given full width at half maximum, in pixels.
    pub fn circular(fwhm: f64) -> Self {
        let sigma = fwhm / (2.0 * libm::sqrt(2.0 * core::f64::consts::LN_2));
        let inv = 1.0 / (sigma * sigma);
        Self { a: inv, b: 0.0, c: inv }
    }

    pub fn eval(&self, dx: f64, dy: f64) -> f64 {
        libm::exp(-0.5 * (self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy))
    }

    /// Least-squares fit of `ln(beam)` over the main lobe: the pixels
    /// 4-connected to the center whose value is at least one half.
    pub fn fit_main_lobe(beam: &Map) -> Self {
        let n = beam.n;
        let h = n / 2;
        let mut lobe = vec![false; n * n];
        let mut stack = vec![(h, h)];
        lobe[h * n + h] = true;
        while let Some((r, c)) = stack.pop() {
            let neighbours = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (nr, nc) in neighbours {
                if nr < n && nc < n && !lobe[nr * n + nc] && beam.at(nr, nc) >= 0.5 {
                    lobe[nr * n + nc] = true;
                    stack.push((nr, nc));
                }
            }
        }
        // Normal equations for q = a·x² + 2b·xy + c·y² ≈ -2 ln B.
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for r in 0..n {
            for c in 0..n {
                if !lobe[r * n + c] || (r, c) == (h, h) {
                    continue;
                }
                let (x, y) = (c as f64 - h as f64, r as f64 - h as f64);
                let row = [x * x, 2.0 * x * y, y * y];
                let target = -2.0 * libm::log(beam.at(r, c));
                for i in 0..3 {
                    for j in 0..3 {
                        ata[i][j] += row[i] * row[j];
                    }
                    atb[i] += row[i] * target;
                }
            }
        }
        match solve3(ata, atb) {
            Some([a, b, c]) if a > 0.0 && c > 0.0 && a * c - b * b > 0.0 => Self { a, b, c },
            _ => Self::circular(1.0),
        }
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let d = det3(&m);
    let scale = m.iter().flatten().map(|v| libm::fabs(*v)).fold(0.0, f64::max);
    if !(libm::fabs(d) > 1e-12 * scale * scale * scale) {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = rhs[i];
        }
        *o = det3(&mk) / d;
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanResult {
    pub components: Vec<CleanComponent>,
    pub residual: Map,
    pub restored: Map,
    pub restoring_beam: GaussianBeam,
    pub iterations: usize,
    /// Residual peak magnitude before each iteration, plus the final one.
    pub peak_history: Vec<f64>,
}

impl CleanResult {
    /// Component flux summed per pixel.
    pub fn merged_components(&self, n: usize) -> Vec<f64> {
        merge_components(&self.components, n)
    }
}

/// Iteratively removes scaled, shifted copies of the peak-normalized
/// `beam` from `dirty`, then restores the components with a Gaussian fitted
/// to the beam's main lobe. Shifts wrap around the grid, matching the
/// periodicity of DFT images.
pub fn hogbom_clean(dirty: &Map, beam: &Map, cfg: &CleanConfig) -> Result<CleanResult> {
    if dirty.n != beam.n || dirty.data.len() != beam.data.len() {
        return Err(Error::shape("dirty image and beam differ in size"));
    }
    if !(cfg.gain > 0.0 && cfg.gain <= 1.0) {
        return Err(Error::usage("CLEAN gain must be in (0, 1]"));
    }
    let n = dirty.n;
    let h = n / 2;
    let (_, beam_peak) = beam.abs_peak();
    if beam_peak == 0.0 {
        return Err(Error::usage("CLEAN beam is identically zero"));
    }
    let mut residual = dirty.clone();
    let (_, initial) = residual.abs_peak();
    let stop = libm::fabs(initial) * cfg.threshold;
    let mut components = Vec::new();
    let mut peak_history = Vec::new();
    let mut iterations = 0;
    loop {
        let (idx, peak) = residual.abs_peak();
        peak_history.push(libm::fabs(peak));
        if iterations >= cfg.max_iter || libm::fabs(peak) <= stop || peak == 0.0 {
            break;
        }
        let (pr, pc) = (idx / n, idx % n);
        let flux = cfg.gain * peak;
        for y in 0..n {
            let by = (y + n + h - pr) % n;
            for x in 0..n {
                let bx = (x + n + h - pc) % n;
                residual.data[y * n + x] -= flux * beam.data[by * n + bx];
            }
        }
        components.push(CleanComponent {
            row: pr,
            col: pc,
            flux,
        });
        iterations += 1;
    }
    let restoring_beam = GaussianBeam::fit_main_lobe(beam);
    let mut restored = residual.clone();
    for (idx, flux) in merge_components(&components, n).iter().enumerate() {
        if *flux == 0.0 {
            continue;
        }
        let (pr, pc) = ((idx / n) as isize, (idx % n) as isize);
        for y in 0..n {
            let dy = wrapped_offset(y as isize - pr, n);
            for x in 0..n {
                let dx = wrapped_offset(x as isize - pc, n);
                restored.data[y * n + x] += flux * restoring_beam.eval(dx, dy);
            }
        }
    }
    Ok(CleanResult {
        components,
        residual,
        restored,
        restoring_beam,
        iterations,
        peak_history,
    })
}

fn merge_components(components: &[CleanComponent], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n * n];
    for comp in components {
        acc[comp.row * n + comp.col] += comp.flux;
    }
    acc
}

fn wrapped_offset(d: isize, n: usize) -> f64 {
    let n = n as isize;
    let mut d = d % n;
    if d > n / 2 {
        d -= n;
    } else if d < -n / 2 {
        d += n;
    }
    d as f64
}
