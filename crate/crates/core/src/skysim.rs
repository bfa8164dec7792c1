//! Synthetic skies and the interferometric forward model.
//!
//! A sky is an `N×N` non-negative intensity map normalized to peak 1.
//! Observing it means taking its centered 2-D Fourier transform, keeping
//! only the cells hit by the array's projected baselines, and adding
//! circular complex Gaussian noise.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::fft::{conjugate_index, fft2_centered};
use crate::numerics::{seeded_rng, SeededRng};

/// Nominal field of view attached to generated skies, in radians
/// (roughly 800 micro-arcseconds).
pub const DEFAULT_FOV: f64 = 4.0e-9;

/// Fraction of the half-grid that the longest projected baseline reaches.
const UV_FILL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkyKind {
    Points,
    Blobs,
    Spiral,
    Ring,
    EdgeDisk,
}

impl SkyKind {
    pub const ALL: [SkyKind; 5] = [
        SkyKind::Points,
        SkyKind::Blobs,
        SkyKind::Spiral,
        SkyKind::Ring,
        SkyKind::EdgeDisk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkyKind::Points => "points",
            SkyKind::Blobs => "blobs",
            SkyKind::Spiral => "spiral",
            SkyKind::Ring => "ring",
            SkyKind::EdgeDisk => "edge_disk",
        }
    }
}

impl fmt::Display for SkyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SkyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::usage(alloc::format!("unknown sky kind `{s}`")))
    }
}

/// Non-negative `N×N` intensity map.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyImage {
    pub n: usize,
    pub pixels: Vec<f64>,
    pub fov: f64,
    pub label: SkyKind,
}

impl SkyImage {
    pub fn new(n: usize, pixels: Vec<f64>, label: SkyKind) -> Result<Self> {
        check_grid_size(n, 2)?;
        if pixels.len() != n * n {
            return Err(Error::shape("sky pixel count is not n*n"));
        }
        if pixels.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::usage("sky pixels must be finite and non-negative"));
        }
        Ok(Self {
            n,
            pixels,
            fov: DEFAULT_FOV,
            label,
        })
    }

    pub fn peak(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_flux(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Centered, unnormalized 2-D Fourier transform of the sky.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut grid: Vec<Complex64> = self.pixels.iter().map(|p| Complex64::new(*p, 0.0)).collect();
        fft2_centered(&mut grid, self.n).expect("sky grid is a power of two");
        grid
    }
}

fn check_grid_size(n: usize, min: usize) -> Result<()> {
    if !n.is_power_of_two() || n < min {
        return Err(Error::usage(alloc::format!(
            "grid size {n} must be a power of two >= {min}"
        )));
    }
    Ok(())
}

/// One elliptical Gaussian component, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBlob {
    pub x: f64,
    pub y: f64,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    pub angle: f64,
    pub amplitude: f64,
}

impl GaussianBlob {
    /// Integral over the whole plane.
    pub fn mass(&self) -> f64 {
        2.0 * PI * self.amplitude * self.sigma_major * self.sigma_minor
    }

    fn eval(&self, px: f64, py: f64) -> f64 {
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let dx = px - self.x;
        let dy = py - self.y;
        let a = (c * dx + s * dy) / self.sigma_major;
        let b = (-s * dx + c * dy) / self.sigma_minor;
        self.amplitude * libm::exp(-0.5 * (a * a + b * b))
    }
}

/// Parametric description of a synthetic sky before pixelization.
#[derive(Debug, Clone, PartialEq)]
pub enum SkyModel {
    Points(Vec<(usize, usize, f64)>),
    Blobs(Vec<GaussianBlob>),
    Spiral {
        x: f64,
        y: f64,
        radius: f64,
        pitch: f64,
        phase: f64,
        arm_width: f64,
        axis_ratio: f64,
        angle: f64,
        bulge: f64,
    },
    Ring {
        x: f64,
        y: f64,
        r_inner: f64,
        r_outer: f64,
        asymmetry: f64,
        bright_angle: f64,
    },
    EdgeDisk {
        x: f64,
        y: f64,
        scale_length: f64,
        scale_height: f64,
        angle: f64,
        bulge: f64,
        bulge_sigma: f64,
    },
}

impl SkyModel {
    /// Draws random parameters for `kind` on an `n×n` grid.
    pub fn random(kind: SkyKind, n: usize, rng: &mut SeededRng) -> Self {
        let nf = n as f64;
        let c = nf / 2.0;
        match kind {
            SkyKind::Points => {
                let count = rng.random_range(1..=5);
                let mut pts: Vec<(usize, usize, f64)> = Vec::new();
                while pts.len() < count {
                    let r = rng.random_range(n / 4..3 * n / 4);
                    let col = rng.random_range(n / 4..3 * n / 4);
                    if pts.iter().all(|p| (p.0, p.1) != (r, col)) {
                        pts.push((r, col, rng.random_range(0.2..1.0)));
                    }
                }
                SkyModel::Points(pts)
            }
            SkyKind::Blobs => {
                let count = rng.random_range(1..=4);
                let blobs = (0..count)
                    .map(|_| {
                        let s1 = rng.random_range(nf / 32.0..nf / 12.0);
                        let s2 = s1 * rng.random_range(0.5..1.0);
                        GaussianBlob {
                            x: c + rng.random_range(-nf / 8.0..nf / 8.0),
                            y: c + rng.random_range(-nf / 8.0..nf / 8.0),
                            sigma_major: s1,
                            sigma_minor: s2,
                            angle: rng.random_range(0.0..PI),
                            amplitude: rng.random_range(0.3..1.0),
                        }
                    })
                    .collect();
                SkyModel::Blobs(blobs)
            }
            SkyKind::Spiral => SkyModel::Spiral {
                x: c + rng.random_range(-nf / 32.0..nf / 32.0),
                y: c + rng.random_range(-nf / 32.0..nf / 32.0),
                radius: rng.random_range(nf / 8.0..nf / 6.0),
                pitch: rng.random_range(0.21..0.44),
                phase: rng.random_range(0.0..2.0 * PI),
                arm_width: rng.random_range(0.3..0.5),
                axis_ratio: rng.random_range(0.5..1.0),
                angle: rng.random_range(0.0..PI),
                bulge: rng.random_range(0.3..0.8),
            },
            SkyKind::Ring => {
                let r_inner = rng.random_range(nf / 10.0..nf / 6.0);
                let width = rng.random_range(nf / 32.0..nf / 12.0);
                let off = r_inner / 4.0;
                SkyModel::Ring {
                    x: c + rng.random_range(-off..off),
                    y: c + rng.random_range(-off..off),
                    r_inner,
                    r_outer: r_inner + width,
                    asymmetry: rng.random_range(0.0..0.6),
                    bright_angle: rng.random_range(0.0..2.0 * PI),
                }
            }
            SkyKind::EdgeDisk => {
                let scale_length = rng.random_range(nf / 16.0..nf / 10.0);
                SkyModel::EdgeDisk {
                    x: c + rng.random_range(-nf / 32.0..nf / 32.0),
                    y: c + rng.random_range(-nf / 32.0..nf / 32.0),
                    scale_length,
                    scale_height: scale_length * rng.random_range(0.1..0.25),
                    angle: rng.random_range(0.0..PI),
                    bulge: rng.random_range(0.2..0.7),
                    bulge_sigma: scale_length * rng.random_range(0.3..0.6),
                }
            }
        }
    }

    pub fn kind(&self) -> SkyKind {
        match self {
            SkyModel::Points(_) => SkyKind::Points,
            SkyModel::Blobs(_) => SkyKind::Blobs,
            SkyModel::Spiral { .. } => SkyKind::Spiral,
            SkyModel::Ring { .. } => SkyKind::Ring,
            SkyModel::EdgeDisk { .. } => SkyKind::EdgeDisk,
        }
    }

    /// Pixel values, unnormalized. Pixel `(r, c)` is sampled at its center
    /// `(x, y) = (c, r)`.
    pub fn render(&self, n: usize) -> Vec<f64> {
        let mut px = vec![0.0; n * n];
        match self {
            SkyModel::Points(pts) => {
                for (r, c, f) in pts {
                    px[r * n + c] += f;
                }
            }
            SkyModel::Blobs(blobs) => {
                for_each_pixel(n, &mut px, |x, y| blobs.iter().map(|b| b.eval(x, y)).sum());
            }
            SkyModel::Spiral {
                x,
                y,
                radius,
                pitch,
                phase,
                arm_width,
                axis_ratio,
                angle,
                bulge,
            } => {
                let (s, c) = (libm::sin(*angle), libm::cos(*angle));
                let r0 = radius / 6.0;
                for_each_pixel(n, &mut px, |px, py| {
                    let dx = px - x;
                    let dy = py - y;
                    let a = c * dx + s * dy;
                    let b = (-s * dx + c * dy) / axis_ratio;
                    let r = libm::sqrt(a * a + b * b);
                    let theta = libm::atan2(b, a);
                    let envelope = libm::exp(-0.5 * (r / radius) * (r / radius));
                    let mut arms = 0.0;
                    if r > 0.0 {
                        for arm in 0..2 {
                            let arm_angle =
                                phase + arm as f64 * PI + libm::log(r.max(r0) / r0) / libm::tan(*pitch);
                            let d = wrap_angle(theta - arm_angle);
                            arms += libm::exp(-0.5 * (d / arm_width) * (d / arm_width));
                        }
                    }
                    let core = bulge * libm::exp(-0.5 * (r / (radius / 4.0)) * (r / (radius / 4.0)));
                    arms * envelope + core
                });
            }
            SkyModel::Ring {
                x,
                y,
                r_inner,
                r_outer,
                asymmetry,
                bright_angle,
            } => {
                for_each_pixel(n, &mut px, |px, py| {
                    let dx = px - x;
                    let dy = py - y;
                    let r = libm::sqrt(dx * dx + dy * dy);
                    if r >= *r_inner && r <= *r_outer {
                        1.0 + asymmetry * libm::cos(libm::atan2(dy, dx) - bright_angle)
                    } else {
                        0.0
                    }
                });
            }
            SkyModel::EdgeDisk {
                x,
                y,
                scale_length,
                scale_height,
                angle,
                bulge,
                bulge_sigma,
            } => {
                let (s, c) = (libm::sin(*angle), libm::cos(*angle));
                for_each_pixel(n, &mut px, |px, py| {
                    let dx = px - x;
                    let dy = py - y;
                    let a = c * dx + s * dy;
                    let b = -s * dx + c * dy;
                    let disk = libm::exp(-libm::fabs(a) / scale_length - libm::fabs(b) / scale_height);
                    let r2 = dx * dx + dy * dy;
                    disk + bulge * libm::exp(-0.5 * r2 / (bulge_sigma * bulge_sigma))
                });
            }
        }
        px
    }
}

fn for_each_pixel(n: usize, px: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    for r in 0..n {
        for c in 0..n {
            px[r * n + c] = f(c as f64, r as f64);
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = libm::fmod(a + PI, 2.0 * PI);
    if t < 0.0 {
        t + PI
    } else {
        t - PI
    }
}

/// Builds a peak-normalized synthetic sky of the given morphology.
pub fn make_synthetic_sky(kind: SkyKind, n: usize, seed: u64) -> Result<SkyImage> {
    check_grid_size(n, 16)?;
    let mut rng = seeded_rng(seed);
    let model = SkyModel::random(kind, n, &mut rng);
    let mut pixels = model.render(n);
    let peak = pixels.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        pixels.iter_mut().for_each(|p| *p /= peak);
    }
    SkyImage::new(n, pixels, kind)
}

/// Earth-fixed station layout and observing track.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    /// Earth-centered, Earth-fixed positions in meters.
    pub stations: Vec<[f64; 3]>,
    /// Source declination in radians.
    pub declination: f64,
    /// Greenwich hour angles of the source, in radians.
    pub hour_angles: Vec<f64>,
    /// Observing wavelength in meters.
    pub wavelength: f64,
}

/// Approximate positions of an eight-station millimetre VLBI array
/// (Chile x2, Arizona, Mexico, Hawaii x2, Spain, South Pole).
pub const EHT_LIKE_STATIONS: [[f64; 3]; 8] = [
    [2_225_061.2, -5_440_057.4, -2_481_681.2],
    [2_225_039.5, -5_441_197.6, -2_479_303.4],
    [-1_828_796.2, -5_054_406.8, 3_427_865.2],
    [-768_715.6, -5_988_507.1, 2_063_354.9],
    [-5_464_584.7, -2_493_001.2, 2_150_653.9],
    [-5_464_555.5, -2_492_927.9, 2_150_797.2],
    [5_088_967.8, -301_681.2, 3_825_015.8],
    [0.0, 0.0, -6_359_609.7],
];

impl ArrayConfig {
    /// Eight-station array observing at 1.3 mm a source at +12.4°
    /// declination, with `hours` hour angles spread evenly over ±`span/2`
    /// radians.
    pub fn eht_like(hours: usize, span: f64) -> Self {
        let hour_angles = if hours == 1 {
            vec![0.0]
        } else {
            (0..hours)
                .map(|i| -span / 2.0 + span * i as f64 / (hours - 1) as f64)
                .collect()
        };
        Self {
            stations: EHT_LIKE_STATIONS.to_vec(),
            declination: 12.39_f64.to_radians(),
            hour_angles,
            wavelength: 1.3e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.len() < 2 {
            return Err(Error::config("stations", "need at least two stations"));
        }
        if self.hour_angles.is_empty() {
            return Err(Error::config("hour_angles", "empty"));
        }
        if self.hour_angles.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("hour_angles", "must be strictly increasing"));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::config("wavelength", "must be positive"));
        }
        Ok(())
    }

    /// Projected `(u, v)` of every baseline at every hour angle, in
    /// wavelengths.
    pub fn baseline_tracks(&self) -> Vec<(f64, f64)> {
        let (sd, cd) = (libm::sin(self.declination), libm::cos(self.declination));
        let mut out = Vec::new();
        for &h in &self.hour_angles {
            let (sh, ch) = (libm::sin(h), libm::cos(h));
            for i in 0..self.stations.len() {
                for j in i + 1..self.stations.len() {
                    let b: [f64; 3] = core::array::from_fn(|k| self.stations[j][k] - self.stations[i][k]);
                    let u = (b[0] * sh + b[1] * ch) / self.wavelength;
                    let v = (-b[0] * ch * sd + b[1] * sh * sd + b[2] * cd) / self.wavelength;
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// One sampled uv position on the grid: sub-cell coordinates in cells from
/// the grid center, and the cell it snaps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvPoint {
    pub u: f64,
    pub v: f64,
    pub row: usize,
    pub col: usize,
}

/// Sampling pattern of an array on an `N×N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UvCoverage {
    pub n: usize,
    pub mask: Vec<bool>,
    /// One point per masked cell, in raster order.
    pub points: Vec<UvPoint>,
    /// Grid cells per wavelength, which is also the implied field of view
    /// in radians.
    pub cells_per_wavelength: f64,
}

impl UvCoverage {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / (self.n * self.n) as f64
    }
}

/// Snaps a centered grid coordinate to its cell index, or `None` if it
/// falls off the grid.
pub fn snap_to_cell(coord: f64, n: usize) -> Option<usize> {
    let k = libm::round(coord) as i64 + (n / 2) as i64;
    (0..n as i64).contains(&k).then_some(k as usize)
}

/// Grids the array's uv tracks. Baselines are scaled so the longest one
/// reaches 95% of the half-grid; each point brings its conjugate `(-u,-v)`,
/// and cells hit more than once keep the first point.
pub fn compute_uv_coverage(cfg: &ArrayConfig, n: usize) -> Result<UvCoverage> {
    cfg.validate()?;
    check_grid_size(n, 4)?;
    let tracks = cfg.baseline_tracks();
    let max_r = tracks
        .iter()
        .map(|(u, v)| libm::sqrt(u * u + v * v))
        .fold(0.0, f64::max);
    let scale = if max_r > 0.0 {
        UV_FILL * (n as f64 / 2.0 - 1.0) / max_r
    } else {
        1.0
    };
    let mut mask = vec![false; n * n];
    let mut points = Vec::new();
    for (u, v) in tracks {
        let (gu, gv) = (u * scale, v * scale);
        let (Some(col), Some(row)) = (snap_to_cell(gu, n), snap_to_cell(gv, n)) else {
            continue;
        };
        if mask[row * n + col] {
            continue;
        }
        mask[row * n + col] = true;
        points.push(UvPoint { u: gu, v: gv, row, col });
        let (cr, cc) = (conjugate_index(row, n), conjugate_index(col, n));
        if (cr, cc) != (row, col) {
            mask[cr * n + cc] = true;
            points.push(UvPoint {
                u: -gu,
                v: -gv,
                row: cr,
                col: cc,
            });
        }
    }
    points.sort_by_key(|p| (p.row, p.col));
    Ok(UvCoverage {
        n,
        mask,
        points,
        cells_per_wavelength: scale,
    })
}

/// One measured visibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvSample {
    pub u: f64,
    pub v: f64,
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
    /// Standard deviation of the complex noise added, `sqrt(E|ε|²)`.
    pub sigma: f64,
}

impl UvSample {
    pub fn amplitude(&self) -> f64 {
        self.value.norm()
    }
}

/// Sparse, Hermitian-consistent visibility measurements on an `N×N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilitySet {
    pub n: usize,
    samples: Vec<UvSample>,
    mask: Vec<bool>,
}

impl VisibilitySet {
    /// Assembles a set from samples, checking that they snap to distinct
    /// cells that exactly cover `mask` and that the mask is Hermitian.
    pub fn new(n: usize, mut samples: Vec<UvSample>, mask: Vec<bool>) -> Result<Self> {
        check_grid_size(n, 2)?;
        if mask.len() != n * n {
            return Err(Error::shape("mask is not n*n"));
        }
        for r in 0..n {
            for c in 0..n {
                if mask[r * n + c] != mask[conjugate_index(r, n) * n + conjugate_index(c, n)] {
                    return Err(Error::usage("mask is not Hermitian-symmetric"));
                }
            }
        }
        samples.sort_by_key(|s| (s.row, s.col));
        let mut seen = vec![false; n * n];
        for s in &samples {
            if s.row >= n || s.col >= n || !mask[s.row * n + s.col] {
                return Err(Error::usage("sample outside the mask"));
            }
            if core::mem::replace(&mut seen[s.row * n + s.col], true) {
                return Err(Error::usage("two samples share one cell"));
            }
            if !(s.value.re.is_finite() && s.value.im.is_finite()) {
                return Err(Error::usage("non-finite visibility"));
            }
        }
        if seen != mask {
            return Err(Error::usage("mask marks cells without samples"));
        }
        Ok(Self { n, samples, mask })
    }

    pub fn samples(&self) -> &[UvSample] {
        &self.samples
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.samples.len() as f64 / (self.n * self.n) as f64
    }

    /// Largest measured amplitude.
    pub fn max_amplitude(&self) -> f64 {
        self.samples.iter().map(|s| s.amplitude()).fold(0.0, f64::max)
    }

    /// The sparse measurements on a dense grid, zero elsewhere.
    pub fn zero_filled_grid(&self) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        for s in &self.samples {
            g[s.row * self.n + s.col] = s.value;
        }
        g
    }
}

/// Observes `sky` through `coverage`: samples its centered spectrum at the
/// covered cells and adds complex noise of standard deviation
/// `noise_sigma · max|F(x)|`. Conjugate cells share one noise draw, so the
/// result stays Hermitian.
pub fn sample_visibility(
    sky: &SkyImage,
    coverage: &UvCoverage,
    noise_sigma: f64,
    seed: u64,
) -> Result<VisibilitySet> {
    if sky.n != coverage.n {
        return Err(Error::shape(alloc::format!(
            "sky grid {} does not match coverage grid {}",
            sky.n,
            coverage.n
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::usage("noise_sigma must be non-negative"));
    }
    let n = sky.n;
    let spectrum = sky.spectrum();
    let max_amp = spectrum.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let sigma = noise_sigma * max_amp;
    let component_std = sigma / core::f64::consts::SQRT_2;
    let mut rng = seeded_rng(seed);
    let mut values: Vec<Option<Complex64>> = vec![None; n * n];
    let mut samples = Vec::with_capacity(coverage.points.len());
    for p in &coverage.points {
        let cell = p.row * n + p.col;
        let partner = conjugate_index(p.row, n) * n + conjugate_index(p.col, n);
        let value = match values[cell] {
            Some(v) => v,
            None => {
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                let noise = Complex64::new(nr, ni) * component_std;
                let v = if partner == cell {
                    Complex64::new(spectrum[cell].re + noise.re, 0.0)
                } else {
                    spectrum[cell] + noise
                };
                values[cell] = Some(v);
                values[partner] = Some(v.conj());
                v
            }
        };
        samples.push(UvSample {
            u: p.u,
            v: p.v,
            row: p.row,
            col: p.col,
            value,
            sigma,
        });
    }
    VisibilitySet::new(n, samples, coverage.mask.clone())
}

/// Human-readable label, used in prompts and file names.
pub fn describe_kind(kind: SkyKind) -> String {
    String::from(match kind {
        SkyKind::Points => "compact point sources",
        SkyKind::Blobs => "smooth gaussian blobs",
        SkyKind::Spiral => "two-armed spiral galaxy",
        SkyKind::Ring => "bright ring",
        SkyKind::EdgeDisk => "edge-on disk with bulge",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_sky_normalized() {
        let sky = make_synthetic_sky(SkyKind::Points, 64, 7).unwrap();
        let lit = sky.pixels.iter().filter(|p| **p > 0.0).count();
        assert!((1..=5).contains(&lit));
        assert_eq!(sky.peak(), 1.0);
    }

    #[test]
    fn ring_is_annular() {
        for seed in 0..10 {
            let mut rng = seeded_rng(seed);
            let model = SkyModel::random(SkyKind::Ring, 64, &mut rng);
            let SkyModel::Ring { x, y, r_inner, r_outer, .. } = model else {
                unreachable!()
            };
            let sky = make_synthetic_sky(SkyKind::Ring, 64, seed).unwrap();
            assert_eq!(sky.pixels[32 * 64 + 32], 0.0);
            for r in 0..64 {
                for c in 0..64 {
                    if sky.pixels[r * 64 + c] > 0.0 {
                        let d = libm::hypot(c as f64 - x, r as f64 - y);
                        assert!(d >= r_inner && d <= r_outer);
                    }
                }
            }
        }
    }

    #[test]
    fn blob_flux_matches_gaussian_integrals() {
        for seed in 0..20 {
            let mut rng = seeded_rng(seed);
            let SkyModel::Blobs(blobs) = SkyModel::random(SkyKind::Blobs, 64, &mut rng) else {
                unreachable!()
            };
            let analytic: f64 = blobs.iter().map(|b| b.mass()).sum();
            let rendered: f64 = SkyModel::Blobs(blobs).render(64).iter().sum();
            assert!((rendered / analytic - 1.0).abs() < 0.02, "seed {seed}");
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("nebula".parse::<SkyKind>(), Err(Error::Usage(_))));
        assert!(matches!(make_synthetic_sky(SkyKind::Blobs, 48, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn two_stations_one_hour() {
        let cfg = ArrayConfig {
            stations: vec![[0.0; 3], [1000.0, 2000.0, 0.0]],
            declination: 0.3,
            hour_angles: vec![0.4],
            wavelength: 1.0,
        };
        let cov = compute_uv_coverage(&cfg, 32).unwrap();
        assert_eq!(cov.count(), 2);
        assert_eq!(cov.points.len(), 2);
    }

    #[test]
    fn eight_station_count_bound() {
        for hours in [1, 5, 16, 40] {
            let cov = compute_uv_coverage(&ArrayConfig::eht_like(hours, PI), 64).unwrap();
            assert!(cov.count() <= 2 * hours * 28);
            assert!(cov.fraction() < 1.0);
        }
    }

    #[test]
    fn sample_grid_mismatch() {
        let sky = make_synthetic_sky(SkyKind::Blobs, 32, 1).unwrap();
        let cov = compute_uv_coverage(&ArrayConfig::eht_like(8, PI), 64).unwrap();
        assert!(matches!(sample_visibility(&sky, &cov, 0.0, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn hour_angles_must_increase() {
        let mut cfg = ArrayConfig::eht_like(4, 1.0);
        cfg.hour_angles.swap(0, 1);
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
