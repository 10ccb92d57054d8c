//! Checkpoints: one JSON file holding the config, the vocabulary (row order
//! is meaningful), and every parameter as shape plus flat values. The format
//! is self-describing so other tooling can read it without this crate.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::{ModelParams, TrainedModel, Vocab};
use super::ModelError;
use crate::param::ParamStore;

#[derive(Serialize, Deserialize)]
struct SavedTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: ModelConfig,
    vocab: Vec<String>,
    params: BTreeMap<String, SavedTensor>,
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    let params = model
        .store
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                SavedTensor {
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        params,
    };
    let io_err = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let out = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    serde_json::to_writer(out, &file).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, ModelError> {
    use rand::SeedableRng;
    let bad = |reason: String| ModelError::Checkpoint {
        path: path.display().to_string(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: CheckpointFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| bad(e.to_string()))?;
    ckpt.config.validate()?;

    // Rebuild the parameter layout from the config, then overwrite every
    // tensor from the file. Pretrained-embedding hooks do not apply here;
    // the checkpoint already holds the trained rows.
    let vocab = Vocab::from_tokens(ckpt.vocab);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ckpt.config.seed);
    let mut store = ParamStore::new();
    let params = ModelParams::build(&ckpt.config, &vocab, &mut store, &mut rng);

    if ckpt.params.len() != store.len() {
        return Err(bad(format!(
            "expected {} parameters for this config, file has {}",
            store.len(),
            ckpt.params.len()
        )));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.get(id).name.clone();
        let saved = ckpt
            .params
            .get(&name)
            .ok_or_else(|| bad(format!("missing parameter {name:?}")))?;
        let value = store.value_mut(id);
        if value.shape() != saved.shape.as_slice() {
            return Err(bad(format!(
                "parameter {name:?} has shape {:?} in the file, expected {:?}",
                saved.shape,
                value.shape()
            )));
        }
        if saved.values.len() != value.len() {
            return Err(bad(format!(
                "parameter {name:?} has {} values for shape {:?}",
                saved.values.len(),
                saved.shape
            )));
        }
        value.data_mut().copy_from_slice(&saved.values);
    }

    Ok(TrainedModel {
        config: ckpt.config,
        vocab,
        params,
        store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn tiny_model() -> TrainedModel {
        let cfg = ModelConfig {
            word_dim: 4,
            type_dim: 4,
            bi_hidden: 2,
            uni_hidden: 4,
            capsule_dim: 3,
            num_classes: 2,
            ..Default::default()
        };
        let vocab = Vocab::build(["alpha", "beta"].into_iter());
        TrainedModel::init(cfg, vocab).unwrap()
    }

    #[test]
    fn save_load_round_trips_every_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let model = tiny_model();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.vocab.tokens(), model.vocab.tokens());
        assert_eq!(loaded.store.len(), model.store.len());
        for (a, b) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn corrupted_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        std::fs::write(&path, "{\"config\": {}}").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn missing_file_reports_the_path() {
        let err = load_checkpoint(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.json"));
    }
}
