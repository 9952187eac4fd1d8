//! Sample ingestion, validation, grouping, splitting, and synthetic generation.
//!
//! The canonical on-disk format is JSONL: line 1 is a header object
//! `{"num_classes": .., "feature_dim": .., "name": ..}`, every following
//! line is one [`Sample`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training or evaluation record: a user's behavior at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub user_id: String,
    /// Abstract integer time coordinate, monotone within a user's sequence.
    pub t: i64,
    pub features: Vec<f64>,
    pub label: usize,
    /// Optional text slots (`sentence`, `question`, `answer`, `context`) for
    /// instruction rendering.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub text_fields: BTreeMap<String, String>,
    /// True when the synthetic generator flipped this sample's label.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flipped: bool,
}

/// JSONL header line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    num_classes: usize,
    feature_dim: usize,
    name: String,
}

/// An ordered collection of samples with a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Construct a dataset, checking every schema invariant.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        feature_dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let d = Dataset {
            name: name.into(),
            num_classes,
            feature_dim,
            samples,
        };
        d.validate()?;
        Ok(d)
    }

    /// Re-check all invariants: schema bounds, per-sample shape, id uniqueness.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim < 1 {
            return Err(Error::InvalidArgument("feature_dim must be >= 1".into()));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            validate_sample(s, self.num_classes, self.feature_dim)
                .map_err(Error::InvalidArgument)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate sample id \"{}\"", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ids of samples whose labels were flipped by the synthetic generator.
    pub fn flipped_ids(&self) -> Vec<&str> {
        self.samples
            .iter()
            .filter(|s| s.flipped)
            .map(|s| s.id.as_str())
            .collect()
    }
}

fn validate_sample(
    s: &Sample,
    num_classes: usize,
    feature_dim: usize,
) -> std::result::Result<(), String> {
    if s.features.len() != feature_dim {
        return Err(format!(
            "sample \"{}\" has {} features, expected {}",
            s.id,
            s.features.len(),
            feature_dim
        ));
    }
    if let Some(v) = s.features.iter().find(|v| !v.is_finite()) {
        return Err(format!("sample \"{}\" has non-finite feature {}", s.id, v));
    }
    if s.label >= num_classes {
        return Err(format!(
            "sample \"{}\" has label {} outside 0..{}",
            s.id, s.label, num_classes
        ));
    }
    Ok(())
}

/// Evaluation samples plus the reference time `T` used by decay exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub samples: Vec<Sample>,
    pub reference_time: i64,
}

impl EvalSet {
    /// Build an eval set. When `reference_time` is `None` it is auto-derived
    /// as the maximum sample time.
    pub fn new(samples: Vec<Sample>, reference_time: Option<i64>) -> Result<Self> {
        let derived = samples.iter().map(|s| s.t).max();
        let reference_time = match (reference_time, derived) {
            (Some(t), _) => t,
            (None, Some(t)) => t,
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "cannot derive reference time from an empty eval set".into(),
                ))
            }
        };
        Ok(EvalSet {
            samples,
            reference_time,
        })
    }

    pub fn from_dataset(d: &Dataset) -> Result<Self> {
        EvalSet::new(d.samples.clone(), None)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Load a dataset from JSONL. Line numbers in errors are 1-based,
/// counting the header as line 1.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file, expected a header line"))?;
    let header_line = header_line.map_err(|e| Error::storage(path, e))?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|source| Error::Parse { line: 1, source })?;

    let mut samples = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: line_no,
            source,
        })?;
        validate_sample(&sample, header.num_classes, header.feature_dim).map_err(|message| {
            Error::Schema {
                line: line_no,
                message,
            }
        })?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate sample id \"{}\" at line {}",
                sample.id, line_no
            )));
        }
        samples.push(sample);
    }

    Ok(Dataset {
        name: header.name,
        num_classes: header.num_classes,
        feature_dim: header.feature_dim,
        samples,
    })
}

/// Write a dataset as JSONL. `load_jsonl(save_jsonl(d)) == d` field-by-field.
pub fn save_jsonl(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        num_classes: d.num_classes,
        feature_dim: d.feature_dim,
        name: d.name.clone(),
    };
    let io_err = |e: std::io::Error| Error::storage(path, e);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(io_err)?;
    for s in &d.samples {
        writeln!(w, "{}", serde_json::to_string(s).expect("sample serializes")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Group samples by user, each list ascending by `(t, id)`.
/// The lists partition the dataset.
pub fn group_by_user(d: &Dataset) -> BTreeMap<&str, Vec<&Sample>> {
    let mut groups: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in &d.samples {
        groups.entry(s.user_id.as_str()).or_default().push(s);
    }
    for list in groups.values_mut() {
        list.sort_by(|a, b| a.t.cmp(&b.t).then_with(|| a.id.cmp(&b.id)));
    }
    groups
}

/// Deterministic shuffled split into train/val/test.
///
/// Val and test sizes are floor-rounded; the remainder goes to train.
pub fn split(
    d: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    for f in [ft, fv, fs] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "split fraction {f} outside [0, 1]"
            )));
        }
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions sum to {}, expected 1",
            ft + fv + fs
        )));
    }

    let n = d.samples.len();
    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let pick = |range: std::ops::Range<usize>, suffix: &str| Dataset {
        name: format!("{}-{}", d.name, suffix),
        num_classes: d.num_classes,
        feature_dim: d.feature_dim,
        samples: order[range].iter().map(|&i| d.samples[i].clone()).collect(),
    };

    Ok((
        pick(0..n_train, "train"),
        pick(n_train..n_train + n_val, "val"),
        pick(n_train + n_val..n, "test"),
    ))
}

/// Generator config for the synthetic behavior-sequence dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub steps_per_user: usize,
    pub feature_dim: usize,
    /// Fraction of labels to flip; exactly `round(noise_rate * n)` samples are flipped.
    pub noise_rate: f64,
    pub seed: u64,
}

/// Margin enforced between every clean sample and the ground-truth separator.
const SYNTHETIC_MARGIN: f64 = 0.25;

/// Generate per-user behavior sequences with a linearly separable ground
/// truth and an exact count of recorded label flips.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    make_synthetic_with_truth(cfg).map(|(d, _)| d)
}

/// As [`make_synthetic`], additionally returning the ground-truth separator
/// (unit weight vector) so callers can audit the labeling.
pub fn make_synthetic_with_truth(cfg: &SyntheticConfig) -> Result<(Dataset, Vec<f64>)> {
    if cfg.n_users < 1 || cfg.steps_per_user < 1 || cfg.feature_dim < 1 {
        return Err(Error::InvalidArgument(
            "n_users, steps_per_user, and feature_dim must all be >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.noise_rate) {
        return Err(Error::InvalidArgument(format!(
            "noise_rate {} outside [0, 1)",
            cfg.noise_rate
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    truth.iter_mut().for_each(|v| *v /= norm);

    let n = cfg.n_users * cfg.steps_per_user;
    let mut samples = Vec::with_capacity(n);
    for user in 0..cfg.n_users {
        let user_id = format!("u{user:04}");
        let mut x: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for step in 0..cfg.steps_per_user {
            if step > 0 {
                // Stationary AR(1) walk: time-correlated behavior with
                // bounded feature norms across a user's sequence.
                for v in x.iter_mut() {
                    *v = 0.7 * *v + 0.6 * rng.random_range(-1.0..1.0);
                }
            }
            // Push points off the separator so the clean labeling has margin.
            let score: f64 = truth.iter().zip(&x).map(|(w, v)| w * v).sum();
            if score.abs() < SYNTHETIC_MARGIN {
                let target = if score >= 0.0 {
                    SYNTHETIC_MARGIN
                } else {
                    -SYNTHETIC_MARGIN
                };
                for (v, w) in x.iter_mut().zip(&truth) {
                    *v += (target - score) * w;
                }
            }
            let score: f64 = truth.iter().zip(&x).map(|(w, v)| w * v).sum();
            let label = usize::from(score > 0.0);

            let mut text_fields = BTreeMap::new();
            text_fields.insert(
                "sentence".into(),
                format!("account {user_id} activity reading {:.3} at step {step}", x[0]),
            );
            text_fields.insert(
                "question".into(),
                "is the account in good standing".into(),
            );
            text_fields.insert(
                "context".into(),
                format!("account {user_id} shows reading {:.3} after {step} periods", x[0]),
            );
            text_fields.insert(
                "answer".into(),
                if label == 1 { "good" } else { "bad" }.into(),
            );

            samples.push(Sample {
                id: format!("{user_id}-t{step:04}"),
                user_id: user_id.clone(),
                t: step as i64,
                features: x.clone(),
                label,
                text_fields,
                flipped: false,
            });
        }
    }

    let n_flips = (cfg.noise_rate * n as f64).round() as usize;
    let flip_at = rand::seq::index::sample(&mut rng, n, n_flips);
    for idx in flip_at {
        let s = &mut samples[idx];
        s.label = 1 - s.label;
        s.flipped = true;
        let answer = if s.label == 1 { "good" } else { "bad" };
        s.text_fields.insert("answer".into(), answer.into());
    }

    let dataset = Dataset {
        name: format!("synthetic-{}", cfg.seed),
        num_classes: 2,
        feature_dim: cfg.feature_dim,
        samples,
    };
    Ok((dataset, truth))
}
