//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use uvrec_core::imaging::{dirty_image, ift_image};
use uvrec_core::reconstructor::{FieldGeometry, Sample};

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::{self, Dataset};
use crate::error::{IoContext, Result};
use crate::experiments::{self, Trials};
use crate::{render, tensor_io};

#[derive(Debug, Parser)]
#[command(name = "uvrec", version, about = "Sparse-visibility reconstruction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an untrained checkpoint.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split against the dirty and zero-filled images.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-sample CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run Högbom CLEAN on every test sample.
    CleanBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CLEAN settings; defaults to the dataset's config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a dirty | reconstruction | truth panel for one sample.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        /// Output PNG path; the reconstruction is also dumped next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare all model arms and the baselines over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on growing fractions of the training split.
    SweepFraction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.1,0.25,0.5,1.0")]
        fractions: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature statistics of the query, knowledge pool and fused condition.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

/// Loads a sample directory, rendering its prompt with the owning
/// dataset's config when the directory sits inside a dataset.
fn load_sample(dir: &Path, fallback: &ExperimentConfig) -> Result<Sample> {
    let dataset_config = dir.join("../../config.txt");
    let cfg = match fs::read_to_string(&dataset_config) {
        Ok(text) => ExperimentConfig::parse(&text)?,
        Err(_) => fallback.clone(),
    };
    dataset::load_sample(dir, &cfg)
}

fn load_checkpoint_for(ck: &Path, data: &Dataset) -> Result<Checkpoint> {
    let c = checkpoint::load(ck)?;
    experiments::check_compatible(&c.config, data)?;
    Ok(c)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let stdout = Path::new("<stdout>");
    let mut say = |text: String| -> Result<()> { writeln!(out, "{text}").at(stdout) };
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let m = dataset::simulate(&cfg, &out)?;
            say(format!(
                "simulated {} train / {} val / {} test samples into {} (config {})",
                cfg.train,
                cfg.val,
                cfg.test,
                out.display(),
                m.get("config_hash").unwrap_or_default()
            ))?;
        }
        Command::Init { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let model = uvrec_core::reconstructor::Model::new(cfg.model_config(), cfg.seed)?;
            checkpoint::save(&out, &cfg, cfg.seed, 0, &model)?;
            say(format!("untrained checkpoint with {} parameters", model.params().total_size()))?;
        }
        Command::Train { config, data, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = Dataset::load(&data)?;
            let t = experiments::train_model(&cfg, &ds, cfg.seed)?;
            checkpoint::save(&out, &cfg, cfg.seed, cfg.epochs, &t.model)?;
            write(&out.join("metrics.csv"), &experiments::metrics_csv(&t.history))?;
            let last = t.history.last().expect("at least one epoch");
            say(format!("parameters {}", t.model.params().total_size()))?;
            say(format!(
                "trained {} epochs: loss {:.4e}, val PSNR {:.3} dB, SSIM {:.4}, {:.2} ms/iter",
                last.epoch,
                last.loss,
                last.psnr,
                last.ssim,
                t.seconds_per_iter * 1e3
            ))?;
        }
        Command::Evaluate { checkpoint, data, out } => {
            let ds = Dataset::load(&data)?;
            let c = load_checkpoint_for(&checkpoint, &ds)?;
            let evals = experiments::evaluate_parallel(&c.model, &ds.test, None)?;
            if let Some(p) = out {
                write(&p, &experiments::evaluation_csv(&evals))?;
            }
            let (exact, herm) = experiments::data_consistency(&ds.test, &evals);
            for (name, s) in [
                ("model", experiments::mean_score(evals.iter().map(|e| &e.model))),
                ("dirty", experiments::mean_score(evals.iter().map(|e| &e.dirty))),
                ("zero_filled", experiments::mean_score(evals.iter().map(|e| &e.zero_filled))),
            ] {
                say(format!("{name:<12} PSNR {:.6} dB  SSIM {:.6}", s.psnr, s.ssim))?;
            }
            say(format!("measured cells exact: {exact}; max Hermitian error {herm:.3e}"))?;
        }
        Command::CleanBaseline { data, out, config } => {
            let ds = Dataset::load(&data)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ds.config.clone(),
            };
            let rows = experiments::clean_baseline(&ds.test, &cfg.clean_config())?;
            create_dir(&out.join("components"))?;
            write(&out.join("clean.csv"), &experiments::clean_csv(&rows))?;
            for (i, r) in rows.iter().enumerate() {
                write(&out.join(format!("components/{i:04}.csv")), &experiments::components_csv(&r.components))?;
            }
            let s = experiments::mean_score(rows.iter().map(|r| &r.score));
            say(format!("clean        PSNR {:.6} dB  SSIM {:.6} over {} samples", s.psnr, s.ssim, rows.len()))?;
        }
        Command::Reconstruct { checkpoint, sample, out } => {
            let c = checkpoint::load(&checkpoint)?;
            let s = load_sample(&sample, &c.config)?;
            let geom = FieldGeometry::new(s.vis.mask(), s.vis.n, c.config.field_frequencies)?;
            let grid = c.model.reconstruct(&s.vis, &s.prompt, &geom)?;
            let recon = ift_image(&grid)?;
            let dirty = dirty_image(&s.vis)?;
            let n = s.sky.n;
            let panel = render::panel_image(&[&dirty.data, &recon.data, &s.sky.pixels], n);
            render::save_png(&panel, &out)?;
            let dump = out.with_extension("vvtt");
            tensor_io::save(&dump, &[&uvrec_core::numerics::Tensor::new(&[n, n], recon.data.clone())?])?;
            let sc = uvrec_core::reconstructor::score_map(&recon, &s.sky)?;
            say(format!(
                "wrote {} ({}x{}); reconstruction PSNR {:.3} dB SSIM {:.4}",
                out.display(),
                panel.width(),
                panel.height(),
                sc.psnr,
                sc.ssim
            ))?;
        }
        Command::Ablate { config, data, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = Dataset::load(&data)?;
            let mut trials = Trials::new(Some(out.join("runs")));
            let report = experiments::ablate(&cfg, &ds, &mut trials)?;
            create_dir(&out)?;
            write(&out.join("ablation.csv"), &report.to_csv())?;
            let table = report.to_table();
            write(&out.join("ablation.txt"), &table)?;
            say(table)?;
            say(report.speed_line())?;
        }
        Command::SweepFraction {
            config,
            data,
            fractions,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = Dataset::load(&data)?;
            let fractions = experiments::parse_fractions(&fractions)?;
            let mut trials = Trials::new(Some(out.join("runs")));
            let rows = experiments::sweep_fraction(&cfg, &ds, &fractions, &mut trials)?;
            create_dir(&out)?;
            let csv = experiments::sweep_csv(&rows);
            write(&out.join("sweep.csv"), &csv)?;
            say(csv)?;
        }
        Command::Stats { checkpoint, sample, out } => {
            let c = checkpoint::load(&checkpoint)?;
            let s = load_sample(&sample, &c.config)?;
            let rows = experiments::feature_statistics(&c.model, &s)?;
            let csv = experiments::stats_csv(&rows);
            if let Some(p) = out {
                write(&p, &csv)?;
            }
            say(csv)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and maps any failure to a one-line
/// message and an exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let first = e.to_string().lines().next().unwrap_or_default().to_string();
                let _ = writeln!(err, "error[E_ARGS]: {}", first.trim_start_matches("error: "));
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.one_line());
            e.exit_code()
        }
    }
}

