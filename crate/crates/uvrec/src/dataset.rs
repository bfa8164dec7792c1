//! Simulated dataset directories.
//!
//! ```text
//! <root>/manifest.txt          format, config hash, split sizes, coverage
//! <root>/config.txt            the full experiment config
//! <root>/<split>/<index>/      split is train, val or test; index is 4 digits
//!     sky.vvtt                 [N, N] sky intensities
//!     sky.png                  peak-scaled preview
//!     vis.csv                  u,v,re,im,sigma (u, v in cells from the grid center)
//!     mask.vvtt                [N, N] sampling mask, 1 where measured
//!     prompt.txt               rendered text prompt
//!     sample.txt               kind and seeds
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use uvrec_core::numerics::Tensor;
use uvrec_core::reconstructor::Sample;
use uvrec_core::skysim::{
    compute_uv_coverage, make_synthetic_sky, sample_visibility, snap_to_cell, SkyImage, SkyKind, UvSample,
    VisibilitySet,
};
use uvrec_core::Complex64;

use crate::config::{hex_digest, ExperimentConfig};
use crate::error::{Error, IoContext, Result};
use crate::manifest::Manifest;
use crate::{render, tensor_io};

pub const FORMAT: &str = "uvrec-dataset-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn count(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.train,
            Split::Val => cfg.val,
            Split::Test => cfg.test,
        }
    }
}

/// Seed for one purpose of one sample, independent across all three.
fn derive_seed(data_seed: u64, split: Split, index: usize, purpose: &str) -> u64 {
    let digest = Sha256::digest(format!("{data_seed}/{}/{index}/{purpose}", split.name()));
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn sample_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.name()).join(format!("{index:04}"))
}

/// Writes a fresh dataset for `cfg` into `out`, which must be absent or
/// empty. Returns the manifest.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if out.exists() && fs::read_dir(out).at(out)?.next().is_some() {
        return Err(uvrec_core::Error::Usage(format!("output directory {} is not empty", out.display())).into());
    }
    let coverage = compute_uv_coverage(&cfg.array_config(), cfg.n)?;
    let meta = cfg.dataset_meta();
    for split in Split::ALL {
        for i in 0..split.count(cfg) {
            let kind = cfg.kinds[i % cfg.kinds.len()];
            let sky_seed = derive_seed(cfg.data_seed, split, i, "sky");
            let noise_seed = derive_seed(cfg.data_seed, split, i, "noise");
            let sky = make_synthetic_sky(kind, cfg.n, sky_seed)?;
            let vis = sample_visibility(&sky, &coverage, cfg.noise_sigma, noise_seed)?;
            let sample = Sample::new(sky, vis, &meta)?;
            let dir = sample_dir(out, split, i);
            fs::create_dir_all(&dir).at(&dir)?;
            write_sample(&dir, &sample)?;
            let info = format!("kind = {kind}\nsky_seed = {sky_seed}\nnoise_seed = {noise_seed}\n");
            write_text(&dir.join("sample.txt"), &info)?;
        }
    }
    let mut manifest = Manifest::new(FORMAT);
    manifest.set("config_hash", cfg.hash());
    for split in Split::ALL {
        manifest.set(split.name(), split.count(cfg).to_string());
    }
    manifest.set("coverage_cells", coverage.count().to_string());
    manifest.set("coverage_fraction", format!("{:?}", coverage.fraction()));
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    manifest.save(&out.join("manifest.txt"))?;
    Ok(manifest)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

/// Persists one sample's sky, visibility, mask, preview and prompt.
pub fn write_sample(dir: &Path, s: &Sample) -> Result<()> {
    let n = s.sky.n;
    let sky = Tensor::new(&[n, n], s.sky.pixels.clone())?;
    tensor_io::save(&dir.join("sky.vvtt"), &[&sky])?;
    render::save_png(&render::map_image(&s.sky.pixels, n), &dir.join("sky.png"))?;
    write_text(&dir.join("vis.csv"), &visibility_csv(&s.vis))?;
    let mask = s.vis.mask().iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    tensor_io::save(&dir.join("mask.vvtt"), &[&Tensor::new(&[n, n], mask)?])?;
    write_text(&dir.join("prompt.txt"), &format!("{}\n", s.prompt.full()))
}

/// CSV with header `u,v,re,im,sigma`; floats print in their shortest
/// round-trip form.
pub fn visibility_csv(vs: &VisibilitySet) -> String {
    let mut out = String::from("u,v,re,im,sigma\n");
    for s in vs.samples() {
        let _ = writeln!(out, "{:?},{:?},{:?},{:?},{:?}", s.u, s.v, s.value.re, s.value.im, s.sigma);
    }
    out
}

pub fn parse_visibility_csv(text: &str, n: usize, mask: Vec<bool>, origin: &Path) -> Result<VisibilitySet> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("u,v,re,im,sigma") {
        return Err(Error::format(origin, "expected header `u,v,re,im,sigma`"));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |why: &str| Error::format(origin, format!("row {}: {why}", i + 1));
        let f: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        let [u, v, re, im, sigma] = f[..] else {
            return Err(bad("expected 5 columns"));
        };
        let (Some(col), Some(row)) = (snap_to_cell(u, n), snap_to_cell(v, n)) else {
            return Err(bad("uv point off the grid"));
        };
        samples.push(UvSample {
            u,
            v,
            row,
            col,
            value: Complex64::new(re, im),
            sigma,
        });
    }
    Ok(VisibilitySet::new(n, samples, mask)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).at(path)
}

fn square_side(t: &Tensor, path: &Path) -> Result<usize> {
    match t.shape() {
        [a, b] if a == b => Ok(*a),
        _ => Err(Error::format(path, "expected a square [N, N] tensor")),
    }
}

/// Loads a sample directory written by [`write_sample`]; the prompt is
/// re-rendered from `cfg`'s dataset description.
pub fn load_sample(dir: &Path, cfg: &ExperimentConfig) -> Result<Sample> {
    let sky_path = dir.join("sky.vvtt");
    let sky_t = tensor_io::load_one(&sky_path)?;
    let n = square_side(&sky_t, &sky_path)?;
    let info_path = dir.join("sample.txt");
    let info = Manifest::parse(&read_text(&info_path)?, None, &info_path)?;
    let kind: SkyKind = info.require("kind", &info_path)?.parse()?;
    let sky = SkyImage::new(n, sky_t.data().to_vec(), kind)?;
    let mask_path = dir.join("mask.vvtt");
    let mask_t = tensor_io::load_one(&mask_path)?;
    if square_side(&mask_t, &mask_path)? != n {
        return Err(Error::format(&mask_path, "mask and sky sizes differ"));
    }
    let mask = mask_t.data().iter().map(|v| *v != 0.0).collect();
    let vis_path = dir.join("vis.csv");
    let vis = parse_visibility_csv(&read_text(&vis_path)?, n, mask, &vis_path)?;
    Ok(Sample::new(sky, vis, &cfg.dataset_meta())?)
}

/// A loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: ExperimentConfig,
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest_path = root.join("manifest.txt");
        let manifest = Manifest::load(&manifest_path, Some(FORMAT))?;
        let config_path = root.join("config.txt");
        let config = ExperimentConfig::parse(&read_text(&config_path)?)?;
        if manifest.require("config_hash", &manifest_path)? != config.hash() {
            return Err(Error::format(&config_path, "config does not match the manifest hash"));
        }
        let mut splits = Split::ALL.map(|split| -> Result<Vec<Sample>> {
            let count: usize = manifest
                .require(split.name(), &manifest_path)?
                .parse()
                .map_err(|_| Error::format(&manifest_path, format!("bad `{}` count", split.name())))?;
            (0..count).map(|i| load_sample(&sample_dir(root, split, i), &config)).collect()
        });
        let take = |r: &mut Result<Vec<Sample>>| std::mem::replace(r, Ok(Vec::new()));
        Ok(Self {
            train: take(&mut splits[0])?,
            val: take(&mut splits[1])?,
            test: take(&mut splits[2])?,
            root: root.to_path_buf(),
            config,
            manifest,
        })
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Hex SHA-256 over the skies and measurements of `samples`, in order.
pub fn split_hash(samples: &[Sample]) -> String {
    let mut bytes = Vec::new();
    for s in samples {
        bytes.extend_from_slice(&(s.sky.n as u64).to_le_bytes());
        for p in &s.sky.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        bytes.extend_from_slice(visibility_csv(&s.vis).as_bytes());
    }
    hex_digest(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n: 16,
            train: 3,
            val: 0,
            test: 2,
            hours: 6,
            hour_span: 4.0,
            patch: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn simulate_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let root = dir.path().join("data");
        simulate(&cfg, &root).unwrap();
        let ds = Dataset::load(&root).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (3, 0, 2));
        assert_eq!(ds.config, cfg);
        // Reloaded samples equal freshly simulated ones, bit for bit.
        let cov = compute_uv_coverage(&cfg.array_config(), cfg.n).unwrap();
        let seed = derive_seed(cfg.data_seed, Split::Test, 1, "sky");
        let sky = make_synthetic_sky(cfg.kinds[1], cfg.n, seed).unwrap();
        let vis = sample_visibility(&sky, &cov, cfg.noise_sigma, derive_seed(cfg.data_seed, Split::Test, 1, "noise")).unwrap();
        assert_eq!(ds.test[1].vis, vis);
        assert_eq!(ds.test[1].sky, sky);
        assert!(simulate(&cfg, &root).is_err(), "non-empty output must be refused");
    }

    #[test]
    fn tampered_config_detected() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("d");
        simulate(&small(), &root).unwrap();
        let p = root.join("config.txt");
        let text = fs::read_to_string(&p).unwrap().replace("noise_sigma = 0.05", "noise_sigma = 0.06");
        fs::write(&p, text).unwrap();
        assert!(matches!(Dataset::load(&root), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_errors() {
        let p = Path::new("vis.csv");
        let mask = vec![false; 16];
        assert!(matches!(parse_visibility_csv("a,b\n", 4, mask.clone(), p), Err(Error::Format { .. })));
        assert!(matches!(
            parse_visibility_csv("u,v,re,im,sigma\n1,2,3\n", 4, mask.clone(), p),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_visibility_csv("u,v,re,im,sigma\n9,0,1,0,0\n", 4, mask, p),
            Err(Error::Format { .. })
        ));
    }
}
