//! Minibatch SGD with periodic checkpointing.
//!
//! Checkpoints carry the step size in effect when they were saved and an
//! integer time coordinate (defaulting to the global step index); both feed
//! the influence engine. The on-disk layout is one `manifest.json` plus one
//! binary parameter file per checkpoint.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{grad, init_params, ModelSpec, ParameterVector};

const CKPT_MAGIC: &[u8; 8] = b"TSEQCKPT";
const CKPT_VERSION: u32 = 1;
const CKPT_HEADER_LEN: usize = 8 + 4 + 8;

/// Learning-rate schedule evaluated at a 0-based global step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant { eta: f64 },
    Cosine { eta_max: f64, eta_min: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LrSchedule::Constant { eta } => *eta > 0.0,
            LrSchedule::Cosine { eta_max, eta_min } => {
                *eta_min > 0.0 && eta_min <= eta_max
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "learning rates must be positive with eta_min <= eta_max, got {self:?}"
            )))
        }
    }

    /// Closed-form step size at `step` of `total_steps`.
    pub fn eta_at(&self, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant { eta } => *eta,
            LrSchedule::Cosine { eta_max, eta_min } => {
                if total_steps <= 1 {
                    return *eta_max;
                }
                let progress = step as f64 / (total_steps - 1) as f64;
                eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    /// Save a checkpoint after every this many optimizer steps.
    pub checkpoint_every: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.checkpoint_every < 1 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size, and checkpoint_every must all be >= 1".into(),
            ));
        }
        self.lr_schedule.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 32,
            lr_schedule: LrSchedule::Constant { eta: 0.1 },
            checkpoint_every: 1,
            shuffle_seed: 0,
        }
    }
}

/// Model parameters captured after a given optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub index: usize,
    /// 1-based count of completed optimizer steps at save time.
    pub step: u64,
    /// Time coordinate on the decay axis; defaults to `step`.
    pub t: i64,
    /// Step size applied on the step that produced these parameters.
    pub eta: f64,
    pub params: ParameterVector,
}

/// An ordered run of checkpoints plus the metadata needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    pub run_id: String,
    pub model_spec: ModelSpec,
    pub dataset_name: String,
    pub config: TrainConfig,
    pub checkpoints: Vec<Checkpoint>,
    /// Default reference time `T`: the final step of the run.
    pub final_time: i64,
}

impl CheckpointStore {
    pub fn final_params(&self) -> Option<&ParameterVector> {
        self.checkpoints.last().map(|c| &c.params)
    }

    /// A store containing only the last checkpoint of this run.
    pub fn final_only(&self) -> CheckpointStore {
        let mut s = self.clone();
        if let Some(last) = s.checkpoints.pop() {
            s.checkpoints = vec![last];
        }
        s
    }
}

fn run_id_for(spec: &ModelSpec, cfg: &TrainConfig, dataset: &Dataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(spec).expect("spec serializes"));
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    hasher.update(dataset.name.as_bytes());
    hasher.update(dataset.len().to_le_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Run minibatch SGD over `d`, checkpointing every `checkpoint_every` steps
/// and always capturing the final step. Deterministic under `shuffle_seed`.
pub fn train(spec: &ModelSpec, d: &Dataset, cfg: &TrainConfig) -> Result<CheckpointStore> {
    spec.validate()?;
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if d.feature_dim != spec.feature_dim || d.num_classes != spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset ({} features, {} classes) does not match model spec ({}, {})",
            d.feature_dim, d.num_classes, spec.feature_dim, spec.num_classes
        )));
    }

    let mut params = init_params(spec)?;
    let steps_per_epoch = d.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);

    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut grad_mean = vec![0.0f64; params.dim()];
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let eta = cfg.lr_schedule.eta_at(step, total_steps);
            grad_mean.fill(0.0);
            for &i in batch {
                let g = grad(spec, &params, &d.samples[i])?;
                for (acc, gi) in grad_mean.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (w, g) in params.values.iter_mut().zip(&grad_mean) {
                *w -= eta * (g * inv);
            }
            step += 1;
            if step.is_multiple_of(cfg.checkpoint_every) {
                checkpoints.push(Checkpoint {
                    index: checkpoints.len(),
                    step: step as u64,
                    t: step as i64,
                    eta,
                    params: params.clone(),
                });
            }
        }
    }
    if checkpoints.last().map(|c| c.step) != Some(step as u64) {
        let eta = cfg.lr_schedule.eta_at(step - 1, total_steps);
        checkpoints.push(Checkpoint {
            index: checkpoints.len(),
            step: step as u64,
            t: step as i64,
            eta,
            params: params.clone(),
        });
    }

    Ok(CheckpointStore {
        run_id: run_id_for(spec, cfg, d),
        model_spec: spec.clone(),
        dataset_name: d.name.clone(),
        config: cfg.clone(),
        final_time: step as i64,
        checkpoints,
    })
}

/// Train and persist the run directory in one call.
pub fn train_to_dir(
    spec: &ModelSpec,
    d: &Dataset,
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
) -> Result<CheckpointStore> {
    let store = train(spec, d, cfg)?;
    save_store(&store, out_dir)?;
    Ok(store)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    i: usize,
    step: u64,
    t: i64,
    eta: f64,
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    run_id: String,
    model_spec: ModelSpec,
    dataset_name: String,
    config: TrainConfig,
    final_time: i64,
    checkpoints: Vec<ManifestEntry>,
}

fn encode_params(params: &ParameterVector) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(CKPT_HEADER_LEN + 8 * params.dim());
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn decode_params(path: &Path, bytes: &[u8]) -> Result<ParameterVector> {
    if bytes.len() < CKPT_HEADER_LEN {
        return Err(Error::format(
            path,
            format!("header needs {CKPT_HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..8] != CKPT_MAGIC {
        return Err(Error::format(path, "bad magic bytes, not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CKPT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {version}, expected {CKPT_VERSION}"),
        ));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let expected = CKPT_HEADER_LEN + 8 * count;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {count} parameters, found {}", bytes.len()),
        ));
    }
    let values = bytes[CKPT_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ParameterVector { values })
}

/// Persist a store as `manifest.json` plus one binary file per checkpoint.
pub fn save_store(store: &CheckpointStore, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;

    let mut entries = Vec::with_capacity(store.checkpoints.len());
    for ckpt in &store.checkpoints {
        let file = format!("ckpt-{:05}.bin", ckpt.index);
        let bytes = encode_params(&ckpt.params);
        let digest = hex::encode(Sha256::digest(&bytes));
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::storage(&path, e))?;
        entries.push(ManifestEntry {
            i: ckpt.index,
            step: ckpt.step,
            t: ckpt.t,
            eta: ckpt.eta,
            file,
            sha256: digest,
        });
    }

    let manifest = Manifest {
        run_id: store.run_id.clone(),
        model_spec: store.model_spec.clone(),
        dataset_name: store.dataset_name.clone(),
        config: store.config.clone(),
        final_time: store.final_time,
        checkpoints: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::storage(&path, e))
}

/// Load a run directory saved by [`save_store`]; parameter bytes round-trip
/// bit-exactly and every file's digest is verified against the manifest.
pub fn load_store(dir: impl AsRef<Path>) -> Result<CheckpointStore> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::storage(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, format!("invalid manifest: {e}")))?;

    let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
    let mut last_step: Option<u64> = None;
    let mut last_t: Option<i64> = None;
    for entry in &manifest.checkpoints {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::storage(&path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(Error::format(
                &path,
                format!("sha256 mismatch: manifest says {}, file hashes to {digest}", entry.sha256),
            ));
        }
        let params = decode_params(&path, &bytes)?;
        if let Some(prev) = last_step {
            if entry.step <= prev {
                return Err(Error::format(
                    &manifest_path,
                    format!("checkpoint steps must strictly increase, {} after {prev}", entry.step),
                ));
            }
        }
        if let Some(prev) = last_t {
            if entry.t < prev {
                return Err(Error::format(
                    &manifest_path,
                    format!("checkpoint times must be nondecreasing, {} after {prev}", entry.t),
                ));
            }
        }
        last_step = Some(entry.step);
        last_t = Some(entry.t);
        checkpoints.push(Checkpoint {
            index: entry.i,
            step: entry.step,
            t: entry.t,
            eta: entry.eta,
            params,
        });
    }
    if checkpoints.is_empty() {
        return Err(Error::format(&manifest_path, "store holds no checkpoints"));
    }

    Ok(CheckpointStore {
        run_id: manifest.run_id,
        model_spec: manifest.model_spec,
        dataset_name: manifest.dataset_name,
        config: manifest.config,
        final_time: manifest.final_time,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticConfig};
    use crate::model::{loss, predict};
    use approx::assert_relative_eq;

    fn clean_data(seed: u64) -> Dataset {
        make_synthetic(&SyntheticConfig {
            n_users: 8,
            steps_per_user: 8,
            feature_dim: 4,
            noise_rate: 0.0,
            seed,
        })
        .unwrap()
    }

    fn quick_config(epochs: usize, batch_size: usize, eta: f64, every: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size,
            lr_schedule: LrSchedule::Constant { eta },
            checkpoint_every: every,
            shuffle_seed: 7,
        }
    }

    fn mean_train_loss(spec: &ModelSpec, params: &ParameterVector, d: &Dataset) -> f64 {
        let total: f64 = d
            .samples
            .iter()
            .map(|z| loss(spec, params, z).unwrap())
            .sum();
        total / d.len() as f64
    }

    #[test]
    fn single_full_batch_step_matches_hand_update() {
        let d = clean_data(1);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        let cfg = quick_config(1, d.len(), 0.25, 1);
        let store = train(&spec, &d, &cfg).unwrap();
        assert_eq!(store.checkpoints.len(), 1);

        let init = init_params(&spec).unwrap();
        let mut mean = vec![0.0; init.dim()];
        for z in &d.samples {
            for (m, g) in mean.iter_mut().zip(grad(&spec, &init, z).unwrap()) {
                *m += g;
            }
        }
        mean.iter_mut().for_each(|m| *m /= d.len() as f64);
        let expect: Vec<f64> = init
            .values
            .iter()
            .zip(&mean)
            .map(|(w, g)| w - 0.25 * g)
            .collect();
        for (a, b) in store.checkpoints[0].params.values.iter().zip(&expect) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn checkpoint_cadence_has_no_duplicate_final() {
        let d = clean_data(2);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        // 64 samples, batch 32, 5 epochs -> 10 steps.
        let store = train(&spec, &d, &quick_config(5, 32, 0.05, 1)).unwrap();
        assert_eq!(store.checkpoints.len(), 10);
        assert_eq!(store.checkpoints.last().unwrap().step, 10);

        let store = train(&spec, &d, &quick_config(5, 32, 0.05, 3)).unwrap();
        let steps: Vec<u64> = store.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![3, 6, 9, 10]);
        assert_eq!(store.final_time, 10);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let d = clean_data(3);
        let spec = ModelSpec::mlp(4, vec![5], 2, 11, 0.5);
        let cfg = quick_config(3, 8, 0.1, 2);
        let a = train(&spec, &d, &cfg).unwrap();
        let b = train(&spec, &d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_schedule_records_configured_eta() {
        let d = clean_data(4);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        let store = train(&spec, &d, &quick_config(2, 16, 0.07, 2)).unwrap();
        assert!(store.checkpoints.iter().all(|c| c.eta == 0.07));
    }

    #[test]
    fn cosine_schedule_matches_closed_form_and_decays() {
        let d = clean_data(5);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        let schedule = LrSchedule::Cosine {
            eta_max: 0.2,
            eta_min: 0.01,
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            lr_schedule: schedule.clone(),
            checkpoint_every: 1,
            shuffle_seed: 7,
        };
        let store = train(&spec, &d, &cfg).unwrap();
        let total = 16; // 64 samples / 16 per batch * 4 epochs
        assert_eq!(store.checkpoints.len(), total);
        for ckpt in &store.checkpoints {
            let s = (ckpt.step - 1) as usize;
            let progress = s as f64 / (total - 1) as f64;
            let expect = 0.01 + 0.5 * (0.2 - 0.01) * (1.0 + (std::f64::consts::PI * progress).cos());
            assert_eq!(ckpt.eta, expect, "step {}", ckpt.step);
        }
        for pair in store.checkpoints.windows(2) {
            assert!(pair[1].eta <= pair[0].eta);
        }
        assert_relative_eq!(store.checkpoints[0].eta, 0.2, max_relative = 1e-15);
        assert_relative_eq!(store.checkpoints[total - 1].eta, 0.01, max_relative = 1e-12);
    }

    #[test]
    fn full_batch_loss_is_nonincreasing_on_convex_model() {
        let d = clean_data(6);
        let spec = ModelSpec::logistic(4, 2, 3, 0.3);
        let cfg = quick_config(15, d.len(), 0.2, 1);
        let store = train(&spec, &d, &cfg).unwrap();
        let losses: Vec<f64> = store
            .checkpoints
            .iter()
            .map(|c| mean_train_loss(&spec, &c.params, &d))
            .collect();
        for pair in losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss went up: {pair:?}");
        }
    }

    #[test]
    fn training_fits_clean_synthetic_data() {
        let d = clean_data(7);
        let spec = ModelSpec::logistic(4, 2, 3, 0.1);
        let cfg = quick_config(40, 8, 0.5, 10);
        let store = train(&spec, &d, &cfg).unwrap();
        let init = init_params(&spec).unwrap();
        let final_params = store.final_params().unwrap();
        assert!(mean_train_loss(&spec, final_params, &d) < mean_train_loss(&spec, &init, &d));

        let correct = d
            .samples
            .iter()
            .filter(|z| {
                let probs = predict(&spec, final_params, z).unwrap();
                let argmax = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                argmax == z.label
            })
            .count();
        let acc = correct as f64 / d.len() as f64;
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = Dataset::new("empty", 2, 4, vec![]).unwrap();
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        assert!(train(&spec, &d, &quick_config(1, 4, 0.1, 1)).is_err());
    }

    #[test]
    fn store_round_trip_is_bit_exact() {
        let d = clean_data(8);
        let spec = ModelSpec::mlp(4, vec![3], 2, 5, 0.5);
        let store = train(&spec, &d, &quick_config(3, 16, 0.1, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_store(&store, dir.path()).unwrap();
        let loaded = load_store(dir.path()).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn tampered_magic_is_a_format_error() {
        let d = clean_data(9);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        let store = train(&spec, &d, &quick_config(1, 32, 0.1, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_store(&store, dir.path()).unwrap();

        let victim = dir.path().join("ckpt-00000.bin");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, &bytes).unwrap();
        // Re-stamp the manifest digest so the magic check itself is exercised.
        let manifest_path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest.checkpoints[0].sha256 = hex::encode(Sha256::digest(&bytes));
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

        match load_store(dir.path()) {
            Err(Error::Format { path, message }) => {
                assert!(path.ends_with("ckpt-00000.bin"), "path {path:?}");
                assert!(message.contains("magic"), "message {message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_byte_counts() {
        let d = clean_data(10);
        let spec = ModelSpec::logistic(4, 2, 3, 0.5);
        let store = train(&spec, &d, &quick_config(1, 32, 0.1, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_store(&store, dir.path()).unwrap();

        let victim = dir.path().join("ckpt-00000.bin");
        let mut bytes = fs::read(&victim).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&victim, &bytes).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest.checkpoints[0].sha256 = hex::encode(Sha256::digest(&bytes));
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

        match load_store(dir.path()) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("expected") && message.contains("found"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn digests_are_stable_across_save_load_cycles() {
        let spec = ModelSpec::logistic(6, 2, 21, 0.5);
        let mut checkpoints = Vec::new();
        for i in 0..100 {
            let ckpt_spec = ModelSpec {
                init_seed: 1000 + i as u64,
                ..spec.clone()
            };
            checkpoints.push(Checkpoint {
                index: i,
                step: (i + 1) as u64,
                t: (i + 1) as i64,
                eta: 0.1,
                params: init_params(&ckpt_spec).unwrap(),
            });
        }
        let store = CheckpointStore {
            run_id: "hash-stability".into(),
            model_spec: spec,
            dataset_name: "none".into(),
            config: TrainConfig::default(),
            final_time: 100,
            checkpoints,
        };

        let first = tempfile::tempdir().unwrap();
        save_store(&store, first.path()).unwrap();
        let digests = |dir: &Path| -> Vec<String> {
            let manifest: Manifest =
                serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap())
                    .unwrap();
            manifest.checkpoints.into_iter().map(|e| e.sha256).collect()
        };
        let original = digests(first.path());

        let reloaded = load_store(first.path()).unwrap();
        let second = tempfile::tempdir().unwrap();
        save_store(&reloaded, second.path()).unwrap();
        assert_eq!(original, digests(second.path()));
        assert_eq!(reloaded, load_store(second.path()).unwrap());
    }
}
