use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{MlpArchitecture, MlpParameters, TrainConfig};
use crate::datagen::NormalizationStats;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ehpc-mlp";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained network together with everything needed to run it on raw
/// states.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParameters,
    pub normalization: NormalizationStats,
    pub train_config: Option<TrainConfig>,
    /// Hex SHA-256 of the training dataset file, when known.
    pub dataset_hash: Option<String>,
}

impl Checkpoint {
    pub fn nodes(&self) -> usize {
        self.params.architecture.output_width()
    }

    /// Errors unless the network maps `3k` features to `k` powers.
    pub fn expect_nodes(&self, k: usize) -> Result<()> {
        let arch = &self.params.architecture;
        if arch.input_width() != 3 * k || arch.output_width() != k {
            return Err(Error::Dimension(format!(
                "checkpoint is {} -> {}, evaluator needs {} -> {k}",
                arch.input_width(),
                arch.output_width(),
                3 * k
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    architecture: MlpArchitecture,
    normalization: NormalizationStats,
    train_config: Option<TrainConfig>,
    dataset_hash: Option<String>,
    layers: Vec<LayerRecord>,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let params = &checkpoint.params;
    params.validate()?;
    let layers = params
        .weights
        .iter()
        .zip(&params.biases)
        .map(|(w, b)| LayerRecord {
            rows: w.nrows(),
            cols: w.ncols(),
            weights: w.iter().copied().collect(),
            biases: b.to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: params.architecture.clone(),
        normalization: checkpoint.normalization.clone(),
        train_config: checkpoint.train_config.clone(),
        dataset_hash: checkpoint.dataset_hash.clone(),
        layers,
    };
    let text = serde_json::to_string(&file).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| {
        Error::format(path, format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint {} v{}", file.format, file.version),
        ));
    }
    let arch = MlpArchitecture::new(file.architecture.sizes, file.architecture.leaky_slope)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let width = arch.input_width();
    if file.normalization.mean.len() != width || file.normalization.scale.len() != width {
        return Err(Error::format(path, "normalization width does not match the input layer"));
    }
    if file.layers.len() != arch.sizes.len() - 1 {
        return Err(Error::format(path, "layer count does not match architecture"));
    }
    let mut weights = Vec::with_capacity(file.layers.len());
    let mut biases = Vec::with_capacity(file.layers.len());
    for (j, layer) in file.layers.into_iter().enumerate() {
        if (layer.rows, layer.cols) != (arch.sizes[j + 1], arch.sizes[j]) {
            return Err(Error::format(path, format!("layer {} shape mismatch", j + 1)));
        }
        let w = Array2::from_shape_vec((layer.rows, layer.cols), layer.weights)
            .map_err(|e| Error::format(path, format!("layer {}: {e}", j + 1)))?;
        if layer.biases.len() != layer.rows {
            return Err(Error::format(path, format!("layer {} bias length mismatch", j + 1)));
        }
        weights.push(w);
        biases.push(Array1::from(layer.biases));
    }
    let params = MlpParameters {
        architecture: arch,
        weights,
        biases,
    };
    params.validate()?;
    Ok(Checkpoint {
        params,
        normalization: file.normalization,
        train_config: file.train_config,
        dataset_hash: file.dataset_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::build_architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(k: usize) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        Checkpoint {
            params: MlpParameters::random(build_architecture(k, 4).unwrap(), &mut rng),
            normalization: NormalizationStats::identity(3 * k),
            train_config: Some(TrainConfig::default()),
            dataset_hash: Some("ab".into()),
        }
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let ck = sample(2);
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let x = [0.3, -1.0, 2.0, 0.1, 5.0, -0.7];
        let a = ck.params.forward(&x).unwrap();
        let b = back.params.forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn truncated_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&sample(1), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format { message, .. }) => assert!(message.contains("line 1 column"), "{message}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn node_count_guard() {
        let ck = sample(5);
        assert!(ck.expect_nodes(5).is_ok());
        assert!(matches!(ck.expect_nodes(1), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_tampered_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&sample(1), &path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        value["layers"][0]["rows"] = 7.into();
        fs::write(&path, value.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
