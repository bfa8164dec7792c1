//! Model checkpoints.
//!
//! ```text
//! <dir>/manifest.txt   format, config hash, seed, epoch, parameter table
//! <dir>/config.txt     the experiment config the model was built from
//! <dir>/params.vvtt    every trainable tensor, in parameter order
//! ```

use std::fs;
use std::path::Path;

use uvrec_core::numerics::ParamGroup;
use uvrec_core::reconstructor::Model;

use crate::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};
use crate::manifest::Manifest;
use crate::tensor_io;

pub const FORMAT: &str = "uvrec-checkpoint-1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Epochs trained; 0 for an untrained model.
    pub epoch: usize,
    pub model: Model,
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save(dir: &Path, cfg: &ExperimentConfig, seed: u64, epoch: usize, model: &Model) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let params = model.params();
    let mut m = Manifest::new(FORMAT);
    m.set("config_hash", cfg.hash());
    m.set("seed", seed.to_string());
    m.set("epoch", epoch.to_string());
    m.set("arm", model.config().arm.name());
    m.set("param_count", params.total_size().to_string());
    for g in ParamGroup::ALL {
        m.set(&format!("group.{}", g.name()), params.group_size(g).to_string());
    }
    for (i, p) in params.iter().enumerate() {
        m.set(&format!("param.{i:04}"), format!("{} {}", p.name, shape_text(p.value.shape())));
    }
    let tensors: Vec<_> = params.iter().map(|p| &p.value).collect();
    tensor_io::save(&dir.join("params.vvtt"), &tensors)?;
    fs::write(dir.join("config.txt"), cfg.to_text()).at(&dir.join("config.txt"))?;
    m.save(&dir.join("manifest.txt"))
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join("manifest.txt");
    let m = Manifest::load(&manifest_path, Some(FORMAT))?;
    let config_path = dir.join("config.txt");
    let config = ExperimentConfig::parse(&fs::read_to_string(&config_path).at(&config_path)?)?;
    if m.require("config_hash", &manifest_path)? != config.hash() {
        return Err(Error::config("config_hash", "checkpoint config does not match its manifest"));
    }
    let number = |key: &str| -> Result<u64> {
        m.require(key, &manifest_path)?
            .parse()
            .map_err(|_| Error::format(&manifest_path, format!("bad `{key}`")))
    };
    let seed = number("seed")?;
    let epoch = number("epoch")? as usize;
    let mut model = Model::new(config.model_config(), seed)?;
    let tensors = tensor_io::load(&dir.join("params.vvtt"))?;
    if tensors.len() != model.params().len() {
        return Err(Error::config(
            "params",
            format!("checkpoint holds {} tensors, config builds {}", tensors.len(), model.params().len()),
        ));
    }
    for (i, (p, t)) in model.params_mut().iter_mut().zip(tensors).enumerate() {
        let listed = m.require(&format!("param.{i:04}"), &manifest_path)?;
        let expected = format!("{} {}", p.name, shape_text(p.value.shape()));
        if listed != expected || t.shape() != p.value.shape() {
            return Err(Error::config(p.name.clone(), format!("checkpoint has `{listed}`, config builds `{expected}`")));
        }
        p.value = t;
    }
    Ok(Checkpoint {
        config,
        seed,
        epoch,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n: 16,
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
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let mut model = Model::new(cfg.model_config(), 4).unwrap();
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            p.value.data_mut().iter_mut().for_each(|v| *v += i as f64 * 1e-3);
        }
        save(dir.path(), &cfg, 4, 2, &model).unwrap();
        let ck = load(dir.path()).unwrap();
        assert_eq!((ck.seed, ck.epoch), (4, 2));
        assert_eq!(ck.model.params(), model.params());
    }

    #[test]
    fn mismatched_config_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        save(dir.path(), &cfg, 0, 0, &Model::new(cfg.model_config(), 0).unwrap()).unwrap();
        // Swap in a config with a wider field and a matching hash.
        let wider = ExperimentConfig { field_width: 16, ..cfg };
        fs::write(dir.path().join("config.txt"), wider.to_text()).unwrap();
        let mp = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&mp).unwrap().replace(&tiny().hash(), &wider.hash());
        fs::write(&mp, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Config { .. })));
    }
}
