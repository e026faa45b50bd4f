//! Supervised dataset of (state, optimal offline power) pairs.
//!
//! Each episode is solved offline and replayed through the clipped battery
//! update, emitting one point per slot with features `(E ‖ B ‖ G)` and the
//! offline powers as label.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::{generate_episode, SystemConfig};
use crate::error::{Error, Result};
use crate::offline::{build_offline_program, solve_offline, OfflineSolution};
use crate::rng::{stream_rng, Substream};

/// Objective tolerance used when labelling.
pub const LABEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: Vec<f64>,
}

/// Per-feature affine map `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(width: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Statistics of `points`. Zero-variance features get scale 1.
    pub fn fit(points: &[DataPoint]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Dimension("cannot normalize an empty training set".into()));
        };
        let width = first.features.len();
        let count = points.len() as f64;
        let mut mean = vec![0.0; width];
        for p in points {
            for (m, x) in mean.iter_mut().zip(&p.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; width];
        for p in points {
            for ((v, x), m) in var.iter_mut().zip(&p.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let sd = (v / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    log::warn!("feature {j} has zero variance; scale clamped to 1");
                    1.0
                }
            })
            .collect();
        Ok(NormalizationStats { mean, scale })
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: SystemConfig,
    pub seed: u64,
    pub episodes: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub k: usize,
    pub horizon: usize,
    pub points: Vec<DataPoint>,
    pub normalization: Option<NormalizationStats>,
    pub provenance: Option<Provenance>,
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub k: usize,
    pub horizon: usize,
    pub points: usize,
    pub provenance: Option<Provenance>,
    pub normalization: Option<NormalizationStats>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn with_points(&self, points: Vec<DataPoint>) -> Dataset {
        Dataset {
            k: self.k,
            horizon: self.horizon,
            points,
            normalization: self.normalization.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn metadata(&self) -> DatasetMetadata {
        DatasetMetadata {
            k: self.k,
            horizon: self.horizon,
            points: self.points.len(),
            provenance: self.provenance.clone(),
            normalization: self.normalization.clone(),
        }
    }
}

/// Points of one solved episode. Batteries are replayed with the clipped
/// update under the offline powers, which is what an online controller
/// would observe.
pub fn episode_points(
    config: &SystemConfig,
    energies: &ndarray::Array2<f64>,
    gains: &ndarray::Array2<f64>,
    solution: &OfflineSolution,
) -> Vec<DataPoint> {
    let (n_slots, k) = energies.dim();
    let mut battery = config.initial_batteries();
    let mut points = Vec::with_capacity(n_slots);
    for n in 0..n_slots {
        let mut features = Vec::with_capacity(3 * k);
        features.extend(energies.row(n).iter());
        features.extend(battery.iter());
        features.extend(gains.row(n).iter());
        let label: Vec<f64> = (0..k)
            .map(|j| solution.powers[[n, j]].clamp(0.0, battery[j].min(config.p_max)))
            .collect();
        for j in 0..k {
            battery[j] = (battery[j] + energies[[n, j]] - label[j]).min(config.b_max);
        }
        points.push(DataPoint { features, label });
    }
    points
}

fn solve_episode(config: &SystemConfig, horizon: usize, seed: u64, index: usize) -> Result<Vec<DataPoint>> {
    let attempt = |substream| -> Result<Vec<DataPoint>> {
        let mut rng = stream_rng(seed, substream, index as u64);
        let ep = generate_episode(&mut rng, config, horizon);
        let program = build_offline_program(&ep, config)?;
        let solution = solve_offline(&program, LABEL_TOL)?;
        Ok(episode_points(config, &ep.energies, &ep.gains, &solution))
    };
    match attempt(Substream::Dataset) {
        Ok(points) => Ok(points),
        Err(e) => {
            log::warn!("episode {index}: {e}; resampling once");
            attempt(Substream::Resample)
        }
    }
}

/// Solves `num_episodes` offline instances of length `horizon`. Episode `i`
/// draws from its own random stream, so the result does not depend on the
/// size of the rayon pool it runs in.
pub fn generate_training_set(
    config: &SystemConfig,
    num_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    if num_episodes == 0 || horizon == 0 {
        return Err(Error::Config("need at least one episode of at least one slot".into()));
    }
    let per_episode: Vec<Vec<DataPoint>> = (0..num_episodes)
        .into_par_iter()
        .map(|i| solve_episode(config, horizon, seed, i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        k: config.k,
        horizon,
        points: per_episode.into_iter().flatten().collect(),
        normalization: None,
        provenance: Some(Provenance {
            config: config.clone(),
            seed,
            episodes: num_episodes,
            horizon,
        }),
    })
}

/// Uniform random split into `(train, validation)` with exactly `n_val`
/// validation points. Both parts keep the original point order.
pub fn split_train_validation(dataset: &Dataset, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let total = dataset.points.len();
    if n_val == 0 || n_val >= total {
        return Err(Error::Config(format!(
            "validation size {n_val} must be in 1..{total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream_rng(seed, Substream::Split, 0));
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|i| dataset.points[*i].clone()).collect();
    Ok((
        dataset.with_points(pick(&train_idx)),
        dataset.with_points(pick(&val_idx)),
    ))
}

/// Normalizes both splits with statistics of the training split. Labels are
/// untouched. Apply once: the map is affine, not idempotent.
pub fn normalize_features(train: &Dataset, validation: &Dataset) -> Result<(Dataset, Dataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(&train.points)?;
    let map = |d: &Dataset| {
        let mut out = d.with_points(
            d.points
                .iter()
                .map(|p| DataPoint {
                    features: stats.apply(&p.features),
                    label: p.label.clone(),
                })
                .collect(),
        );
        out.normalization = Some(stats.clone());
        out
    };
    Ok((map(train), map(validation), stats))
}

fn fmt_value(out: &mut String, x: f64) {
    // 12 significant digits.
    write!(out, "{x:.11e}").expect("write to string");
}

pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the CSV form:
///
/// ```txt
/// k,n
/// <K>,<N>
/// e_1,..,e_K,b_1,..,b_K,g_1,..,g_K,p_1,..,p_K
/// <rows>
/// ```
///
/// plus a JSON sidecar at `<path>.meta.json`.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let k = dataset.k;
    let mut out = String::with_capacity(64 + dataset.points.len() * 4 * k * 18);
    writeln!(out, "k,n\n{},{}", k, dataset.horizon).expect("write to string");
    let names: Vec<String> = ["e", "b", "g", "p"]
        .iter()
        .flat_map(|prefix| (1..=k).map(move |i| format!("{prefix}_{i}")))
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for p in &dataset.points {
        if p.features.len() != 3 * k || p.label.len() != k {
            return Err(Error::Dimension(format!(
                "point with {} features and {} labels in a K={k} dataset",
                p.features.len(),
                p.label.len()
            )));
        }
        for (i, x) in p.features.iter().chain(&p.label).enumerate() {
            if i > 0 {
                out.push(',');
            }
            fmt_value(&mut out, *x);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&dataset.metadata()).expect("metadata serializes");
    let meta_path = metadata_path(path);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: String| Error::format(path, format!("line {line}: {msg}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("k,n") {
        return Err(bad(1, "expected header `k,n`".into()));
    }
    let dims = lines.next().ok_or_else(|| bad(2, "missing dimensions".into()))?;
    let dims: Vec<usize> = dims
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(2, e.to_string()))?;
    let [k, horizon] = dims[..] else {
        return Err(bad(2, "expected `<k>,<n>`".into()));
    };
    if k == 0 {
        return Err(bad(2, "k must be positive".into()));
    }
    let columns = lines.next().ok_or_else(|| bad(3, "missing column names".into()))?;
    let width = columns.split(',').count();
    if width != 4 * k {
        return Err(bad(3, format!("{width} columns for k={k}, expected {}", 4 * k)));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(i + 4, e.to_string()))?;
        if values.len() != 4 * k {
            return Err(bad(i + 4, format!("row has {} values, header k={k} needs {}", values.len(), 4 * k)));
        }
        points.push(DataPoint {
            features: values[..3 * k].to_vec(),
            label: values[3 * k..].to_vec(),
        });
    }

    let meta_path = metadata_path(path);
    let meta: Option<DatasetMetadata> = match fs::read_to_string(&meta_path) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?),
        Err(_) => None,
    };
    if let Some(m) = &meta {
        if m.k != k || m.points != points.len() {
            return Err(Error::format(&meta_path, "metadata disagrees with the CSV body"));
        }
    }
    Ok(Dataset {
        k,
        horizon,
        points,
        normalization: meta.as_ref().and_then(|m| m.normalization.clone()),
        provenance: meta.and_then(|m| m.provenance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(k: usize) -> SystemConfig {
        SystemConfig {
            k,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn one_episode_gives_one_point_per_slot() {
        let ds = generate_training_set(&small_config(5), 1, 20, 4).unwrap();
        assert_eq!(ds.len(), 20);
        assert!(ds.points.iter().all(|p| p.features.len() == 15 && p.label.len() == 5));
    }

    #[test]
    fn labels_are_feasible() {
        let config = small_config(3);
        let ds = generate_training_set(&config, 20, 20, 9).unwrap();
        assert_eq!(ds.len(), 400);
        for p in &ds.points {
            for j in 0..3 {
                let battery = p.features[3 + j];
                assert!(p.label[j] >= 0.0);
                assert!(p.label[j] <= battery.min(config.p_max));
                assert!(battery <= config.b_max);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let config = small_config(2);
        let a = generate_training_set(&config, 6, 10, 17).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| generate_training_set(&config, 6, 10, 17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = generate_training_set(&small_config(1), 5, 20, 1).unwrap();
        let (train, val) = split_train_validation(&ds, 30, 2).unwrap();
        assert_eq!((train.len(), val.len()), (70, 30));
        let (train2, val2) = split_train_validation(&ds, 30, 2).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        let (single, _) = split_train_validation(&ds, 99, 2).unwrap();
        assert_eq!(single.len(), 1);
        assert!(split_train_validation(&ds, 0, 2).is_err());
        assert!(split_train_validation(&ds, 100, 2).is_err());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let ds = generate_training_set(&small_config(1), 3, 20, 1).unwrap();
        let (train, val) = split_train_validation(&ds, 17, 8).unwrap();
        let mut all: Vec<_> = train.points.iter().chain(&val.points).map(|p| format!("{:?}", p)).collect();
        let mut orig: Vec<_> = ds.points.iter().map(|p| format!("{:?}", p)).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn normalization_properties() {
        let mut ds = generate_training_set(&small_config(2), 4, 20, 3).unwrap();
        // Make one feature constant.
        for p in &mut ds.points {
            p.features[0] = 7.0;
        }
        let (train, val) = split_train_validation(&ds, 20, 0).unwrap();
        let (ntrain, nval, stats) = normalize_features(&train, &val).unwrap();
        assert_eq!(stats.scale[0], 1.0);
        assert!(ntrain.points.iter().all(|p| p.features[0] == 0.0));
        for j in 0..6 {
            let mean: f64 = ntrain.points.iter().map(|p| p.features[j]).sum::<f64>() / ntrain.len() as f64;
            assert!(mean.abs() < 1e-10);
        }
        assert_eq!(nval.points[0].label, val.points[0].label);
        // Applying twice is not the identity.
        let once = stats.apply(&train.points[0].features);
        let twice = stats.apply(&once);
        assert_ne!(once, twice);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = generate_training_set(&small_config(2), 2, 5, 5).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.k, 2);
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.provenance, ds.provenance);
        for (a, b) in ds.points.iter().zip(&back.points) {
            for (x, y) in a.features.iter().chain(&a.label).zip(b.features.iter().chain(&b.label)) {
                assert!((x - y).abs() <= 1e-11 * x.abs().max(1e-300));
            }
        }
        // Text is a fixed point after the first write.
        let path2 = dir.path().join("again.csv");
        write_dataset(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn csv_rejects_width_mismatch_and_accepts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "k,n\n2,20\ne_1,e_2,b_1,b_2,g_1,g_2,p_1,p_2\n1,2,3\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
        fs::write(&path, "k,n\n3,20\ne_1,e_2,b_1,b_2,g_1,g_2,p_1,p_2\n").unwrap();
        assert!(read_dataset(&path).is_err());
        fs::write(&path, "k,n\n2,20\ne_1,e_2,b_1,b_2,g_1,g_2,p_1,p_2\n").unwrap();
        let empty = read_dataset(&path).unwrap();
        assert!(empty.is_empty());
    }
}
