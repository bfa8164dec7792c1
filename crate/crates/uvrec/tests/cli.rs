use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use uvrec::cli::main_with;
use uvrec::ExperimentConfig;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn uvrec(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("uvrec").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = uvrec(args);
    assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
    o.stdout
}

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        n: 16,
        train: 6,
        val: 2,
        test: 3,
        hours: 6,
        hour_span: 4.0,
        patch: 4,
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        ff_dim: 8,
        query_tokens: 2,
        field_depth: 3,
        field_width: 8,
        field_frequencies: 2,
        channels: 2,
        vocab: 32,
        epochs: 1,
        seeds: 2,
        ..ExperimentConfig::default()
    }
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, cfg.to_text()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root` with its bytes, sorted by relative path.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic_and_counts_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        train: 100,
        val: 0,
        test: 20,
        ..tiny()
    };
    let c = write_config(dir.path(), "c.txt", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", s(&c), "--out", s(&a)]);
    ok(&["simulate", "--config", s(&c), "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
    let dirs: usize = ["train", "val", "test"]
        .iter()
        .filter_map(|sp| fs::read_dir(a.join(sp)).ok())
        .map(|rd| rd.count())
        .sum();
    assert_eq!(dirs, 120);
    let csv = fs::read_to_string(a.join("test/0000/vis.csv")).unwrap();
    assert!(csv.starts_with("u,v,re,im,sigma\n"));
}

#[test]
fn manifest_hash_follows_config_changes() {
    let dir = tempfile::tempdir().unwrap();
    let hash_of = |cfg: &ExperimentConfig, tag: &str| {
        let c = write_config(dir.path(), &format!("{tag}.txt"), cfg);
        let out = dir.path().join(tag);
        ok(&["simulate", "--config", s(&c), "--out", s(&out)]);
        let m = fs::read_to_string(out.join("manifest.txt")).unwrap();
        m.lines().find(|l| l.starts_with("config_hash")).unwrap().to_string()
    };
    let base = ExperimentConfig { train: 1, val: 0, test: 1, ..tiny() };
    let h0 = hash_of(&base, "base");
    let perturbed = [
        ExperimentConfig { noise_sigma: 0.1, ..base.clone() },
        ExperimentConfig { data_seed: 2, ..base.clone() },
        ExperimentConfig { hours: 7, ..base.clone() },
        ExperimentConfig { lr: 2e-3, ..base.clone() },
        ExperimentConfig { subject: "rings".into(), ..base.clone() },
    ];
    let mut seen = vec![h0];
    for (i, cfg) in perturbed.iter().enumerate() {
        let h = hash_of(cfg, &format!("p{i}"));
        assert!(!seen.contains(&h), "perturbation {i} kept the hash");
        seen.push(h);
    }
}

#[test]
fn untrained_checkpoint_scores_like_zero_filled_imaging() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "c.txt", &tiny());
    let data = dir.path().join("data");
    let ck = dir.path().join("ck");
    let csv = dir.path().join("eval.csv");
    ok(&["simulate", "--config", s(&c), "--out", s(&data)]);
    ok(&["init", "--config", s(&c), "--out", s(&ck)]);
    let text = ok(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&csv)]);
    assert!(text.contains("measured cells exact: true"));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    for r in rows {
        let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - v[4]).abs() <= 1e-9, "psnr {} vs {}", v[0], v[4]);
        assert!((v[1] - v[5]).abs() <= 1e-9, "ssim {} vs {}", v[1], v[5]);
    }
}

#[test]
fn train_reconstruct_stats_and_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let c = write_config(dir.path(), "c.txt", &cfg);
    let data = dir.path().join("data");
    let ck = dir.path().join("ck");
    ok(&["simulate", "--config", s(&c), "--out", s(&data)]);
    let out = ok(&["train", "--config", s(&c), "--data", s(&data), "--out", s(&ck)]);
    let reported: usize = out.lines().next().unwrap().strip_prefix("parameters ").unwrap().parse().unwrap();
    assert_eq!(reported, cfg.model_config().param_count());
    let metrics = fs::read_to_string(ck.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,loss,psnr,ssim"));
    assert_eq!(metrics.lines().count(), 1 + cfg.epochs);

    let png = dir.path().join("panel.png");
    let sample = data.join("test/0001");
    ok(&["reconstruct", "--checkpoint", s(&ck), "--sample", s(&sample), "--out", s(&png)]);
    let img = image::open(&png).unwrap();
    let m = uvrec::render::PANEL_MARGIN;
    assert_eq!((img.width(), img.height()), (3 * 16 + 4 * m, 16 + 2 * m));
    assert!(png.with_extension("vvtt").exists());

    let stats = dir.path().join("stats.csv");
    ok(&["stats", "--checkpoint", s(&ck), "--sample", s(&sample), "--out", s(&stats)]);
    let labels: Vec<String> = csv_rows(&stats).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(labels, ["zeta", "xi", "eta"]);

    let clean = dir.path().join("clean");
    ok(&["clean-baseline", "--data", s(&data), "--out", s(&clean)]);
    assert_eq!(csv_rows(&clean.join("clean.csv")).len(), cfg.test);
    assert!(clean.join("components/0002.csv").exists());
}

#[test]
fn ablation_report_shape_and_shared_split() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "c.txt", &tiny());
    let data = dir.path().join("data");
    let out = dir.path().join("ablate");
    ok(&["simulate", "--config", s(&c), "--out", s(&data)]);
    ok(&["ablate", "--config", s(&c), "--data", s(&data), "--out", s(&out)]);
    let rows = csv_rows(&out.join("ablation.csv"));
    let arms: Vec<&Vec<String>> = rows
        .iter()
        .filter(|r| ["full", "no_kb", "no_visual", "no_text", "vis_only"].contains(&r[0].as_str()))
        .collect();
    assert_eq!(arms.len(), 5);
    for r in &arms {
        // psnr mean/std and ssim mean/std, over both seeds.
        assert!(r[1..5].iter().all(|x| x.parse::<f64>().unwrap().is_finite()));
        assert_eq!(r[5], "2");
    }
    let hashes: std::collections::HashSet<&String> = rows.iter().map(|r| &r[6]).collect();
    assert_eq!(hashes.len(), 1);
    // A second run reuses the saved checkpoints and reproduces both reports.
    let first = fs::read(out.join("ablation.csv")).unwrap();
    let table = fs::read(out.join("ablation.txt")).unwrap();
    let stdout = ok(&["ablate", "--config", s(&c), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(fs::read(out.join("ablation.csv")).unwrap(), first);
    assert_eq!(fs::read(out.join("ablation.txt")).unwrap(), table);
    assert!(stdout.contains("not measured (checkpoints reused)"), "{stdout}");
}

#[test]
fn sweep_rows_sorted_and_full_fraction_matches_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { seeds: 1, ..tiny() };
    let c = write_config(dir.path(), "c.txt", &cfg);
    let data = dir.path().join("data");
    let out = dir.path().join("sweep");
    ok(&["simulate", "--config", s(&c), "--out", s(&data)]);
    ok(&["sweep-fraction", "--config", s(&c), "--data", s(&data), "--fractions", "1.0,0.5", "--out", s(&out)]);
    let rows = csv_rows(&out.join("sweep.csv"));
    let fr: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(fr, ["0.5", "1"]);

    let ck = dir.path().join("ck");
    let eval = dir.path().join("eval.csv");
    ok(&["train", "--config", s(&c), "--data", s(&data), "--out", s(&ck)]);
    ok(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&eval)]);
    let psnr: Vec<f64> = csv_rows(&eval).iter().map(|r| r[1].parse().unwrap()).collect();
    let mean = psnr.iter().sum::<f64>() / psnr.len() as f64;
    let swept: f64 = rows[1][2].parse().unwrap();
    assert!((mean - swept).abs() < 1e-5, "{mean} vs {swept}");
}

#[test]
fn error_paths_are_single_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let o = uvrec(&["simulate", "--config", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.code, 3);
    assert!(o.stderr.starts_with("error[E_IO]: ") && o.stderr.lines().count() == 1, "{}", o.stderr);

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "n = 64\nepochz = 3\n").unwrap();
    let o = uvrec(&["simulate", "--config", s(&bad), "--out", s(&dir.path().join("y"))]);
    assert_eq!(o.code, 5);
    assert!(o.stderr.starts_with("error[E_CONFIG]: ") && o.stderr.contains("epochz"), "{}", o.stderr);

    let o = uvrec(&["frobnicate"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.starts_with("error[E_ARGS]: ") && o.stderr.lines().count() == 1, "{}", o.stderr);

    // Checkpoint built for a 32-grid against 16-grid data.
    let small = write_config(dir.path(), "s.txt", &tiny());
    let big = write_config(dir.path(), "b.txt", &ExperimentConfig { n: 32, ..tiny() });
    let data = dir.path().join("data");
    let ck = dir.path().join("ck");
    ok(&["simulate", "--config", s(&small), "--out", s(&data)]);
    ok(&["init", "--config", s(&big), "--out", s(&ck)]);
    let o = uvrec(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(o.code, 5, "{}", o.stderr);
    assert!(o.stderr.starts_with("error[E_CONFIG]: "));
}

#[test]
fn binary_exit_status() {
    let exe = env!("CARGO_BIN_EXE_uvrec");
    let out = Command::new(exe).args(["evaluate", "--checkpoint", "/nonexistent", "--data", "/nonexistent"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[E_IO]"));
    let ok = Command::new(exe).arg("--help").output().unwrap();
    assert!(ok.status.success());
}

#[test]
fn env_override_reaches_commands() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "c.txt", &tiny());
    let exe = env!("CARGO_BIN_EXE_uvrec");
    let out = dir.path().join("d");
    let st = Command::new(exe)
        .args(["simulate", "--config", s(&c), "--out", s(&out)])
        .env("UVREC_TEST", "1")
        .env("UVREC_TRAIN", "2")
        .output()
        .unwrap();
    assert!(st.status.success());
    assert_eq!(fs::read_dir(out.join("train")).unwrap().count(), 2);
    assert_eq!(fs::read_dir(out.join("test")).unwrap().count(), 1);
}
