//! Checkpoint-based influence scoring with exponential time decay.
//!
//! The pair score sums, over stored checkpoints in ascending index order,
//! `decay^(T - t_i) * eta_i * <grad(w_i, z_train), grad(w_i, z_test)>`.
//! With `gamma = 1` every decay weight is exactly one and the score reduces
//! to the plain checkpoint gradient-similarity estimator.
//!
//! All reductions run in a fixed order (checkpoints ascending, eval samples
//! ascending by id) so results are identical under any thread count; the
//! parallel path only distributes whole training samples across workers.

use std::fs::File;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EvalSet, Sample};
use crate::error::{Error, Result};
use crate::model::GradientProvider;
use crate::trainer::{Checkpoint, CheckpointStore};

/// Which clock the decay exponent `T - t_i` is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAxis {
    /// `t_i` is the checkpoint's global SGD step; `T` defaults to the final step.
    CheckpointStep,
    /// `t_i` is the checkpoint's stored time coordinate reinterpreted on the
    /// sample-time axis; `T` defaults to the eval set's reference time.
    SampleTimestamp,
}

/// Decay factor and time-axis convention for the exponent `T - t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    /// Decay factor in `(0, 1]`; `1` disables decay.
    pub gamma: f64,
    pub time_axis: TimeAxis,
    /// Explicit reference time `T`; when absent it is resolved per the axis.
    pub reference_time: Option<i64>,
    /// Refuse negative exponents instead of clamping them to zero.
    pub strict: bool,
}

impl DecayConfig {
    pub fn new(gamma: f64) -> Self {
        DecayConfig {
            gamma,
            time_axis: TimeAxis::CheckpointStep,
            reference_time: None,
            strict: false,
        }
    }

    /// The `gamma = 1` special case: every checkpoint weighted equally.
    pub fn tracincp() -> Self {
        DecayConfig::new(1.0)
    }

    pub fn with_time_axis(mut self, axis: TimeAxis) -> Self {
        self.time_axis = axis;
        self
    }

    pub fn with_reference_time(mut self, t: i64) -> Self {
        self.reference_time = Some(t);
        self
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    fn checkpoint_time(&self, ckpt: &Checkpoint) -> i64 {
        match self.time_axis {
            TimeAxis::CheckpointStep => ckpt.step as i64,
            TimeAxis::SampleTimestamp => ckpt.t,
        }
    }

    /// Resolve `T`: explicit override, else final checkpoint step, else the
    /// caller-supplied sample-time default.
    fn resolve_reference(&self, store: &CheckpointStore, sample_time_default: i64) -> i64 {
        self.reference_time.unwrap_or(match self.time_axis {
            TimeAxis::CheckpointStep => store
                .checkpoints
                .last()
                .map(|c| c.step as i64)
                .unwrap_or(store.final_time),
            TimeAxis::SampleTimestamp => sample_time_default,
        })
    }

    fn decay_weight(&self, reference: i64, checkpoint_time: i64) -> Result<f64> {
        let exponent = reference - checkpoint_time;
        if exponent < 0 {
            if self.strict {
                return Err(Error::Config(format!(
                    "reference time {reference} precedes checkpoint time {checkpoint_time} \
                     and strict mode forbids clamping"
                )));
            }
            return Ok(1.0);
        }
        Ok(self.gamma.powi(exponent.min(i32::MAX as i64) as i32))
    }
}

/// One checkpoint's share of a sample's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointContribution {
    pub checkpoint_index: usize,
    pub decay_weight: f64,
    /// Gradient dot product, averaged over eval samples.
    pub dot: f64,
    pub contribution: f64,
}

/// Influence of one training sample, with its per-checkpoint breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub sample_id: String,
    pub score: f64,
    pub per_checkpoint: Vec<CheckpointContribution>,
    pub eval_count: usize,
}

impl InfluenceRecord {
    /// A record carrying only an id and score, as reloaded from CSV.
    pub fn from_score(sample_id: impl Into<String>, score: f64) -> Self {
        InfluenceRecord {
            sample_id: sample_id.into(),
            score,
            per_checkpoint: Vec::new(),
            eval_count: 0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_store(store: &CheckpointStore) -> Result<()> {
    if store.checkpoints.is_empty() {
        return Err(Error::InvalidArgument("checkpoint store is empty".into()));
    }
    Ok(())
}

/// Pairwise influence of `z_t` on `z_test` (Eq.-style decayed gradient
/// similarity summed over checkpoints in ascending index order).
pub fn tracseq_pair<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    z_t: &Sample,
    z_test: &Sample,
    cfg: &DecayConfig,
) -> Result<f64> {
    check_store(store)?;
    cfg.validate()?;
    let reference = cfg.resolve_reference(store, z_test.t);
    let mut acc = 0.0;
    for ckpt in &store.checkpoints {
        let weight = cfg.decay_weight(reference, cfg.checkpoint_time(ckpt))?;
        let g_train = model.gradient(&ckpt.params, z_t)?;
        let g_test = model.gradient(&ckpt.params, z_test)?;
        acc += weight * ckpt.eta * dot(&g_train, &g_test);
    }
    Ok(acc)
}

/// [`tracseq_pair`] with `gamma = 1`; bit-identical to passing `gamma = 1`
/// in any decay configuration.
pub fn tracincp_pair<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    z_t: &Sample,
    z_test: &Sample,
) -> Result<f64> {
    tracseq_pair(store, model, z_t, z_test, &DecayConfig::tracincp())
}

/// Self-influence: the `z_t = z_test` diagonal, a decayed sum of squared
/// gradient norms. Always nonnegative.
pub fn self_influence<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    z: &Sample,
    cfg: &DecayConfig,
) -> Result<f64> {
    tracseq_pair(store, model, z, z, cfg)
}

/// Shared, immutable scoring context: decay weights per checkpoint and eval
/// gradients computed once per (checkpoint, eval sample).
struct ScoreContext<'a> {
    store: &'a CheckpointStore,
    weights: Vec<f64>,
    eval_grads: Vec<Vec<Vec<f64>>>,
    eval_count: usize,
}

fn prepare_context<'a, G: GradientProvider>(
    store: &'a CheckpointStore,
    model: &G,
    eval: &EvalSet,
    cfg: &DecayConfig,
) -> Result<ScoreContext<'a>> {
    check_store(store)?;
    cfg.validate()?;
    if eval.is_empty() {
        return Err(Error::InvalidArgument("eval set is empty".into()));
    }
    let reference = cfg.resolve_reference(store, eval.reference_time);

    let mut eval_sorted: Vec<&Sample> = eval.samples.iter().collect();
    eval_sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut weights = Vec::with_capacity(store.checkpoints.len());
    let mut eval_grads = Vec::with_capacity(store.checkpoints.len());
    for ckpt in &store.checkpoints {
        weights.push(cfg.decay_weight(reference, cfg.checkpoint_time(ckpt))?);
        let grads: Result<Vec<Vec<f64>>> = eval_sorted
            .iter()
            .map(|z| model.gradient(&ckpt.params, z))
            .collect();
        eval_grads.push(grads?);
    }
    Ok(ScoreContext {
        store,
        weights,
        eval_grads,
        eval_count: eval_sorted.len(),
    })
}

fn score_one<G: GradientProvider>(
    ctx: &ScoreContext<'_>,
    model: &G,
    z: &Sample,
) -> Result<InfluenceRecord> {
    let k = ctx.store.checkpoints.len();
    let mut train_grads = Vec::with_capacity(k);
    for ckpt in &ctx.store.checkpoints {
        train_grads.push(model.gradient(&ckpt.params, z)?);
    }

    let mut pair_sum = 0.0;
    let mut dot_sums = vec![0.0f64; k];
    for j in 0..ctx.eval_count {
        let mut pair = 0.0;
        for i in 0..k {
            let d = dot(&train_grads[i], &ctx.eval_grads[i][j]);
            pair += ctx.weights[i] * ctx.store.checkpoints[i].eta * d;
            dot_sums[i] += d;
        }
        pair_sum += pair;
    }

    let m = ctx.eval_count as f64;
    let per_checkpoint = (0..k)
        .map(|i| {
            let mean_dot = dot_sums[i] / m;
            CheckpointContribution {
                checkpoint_index: ctx.store.checkpoints[i].index,
                decay_weight: ctx.weights[i],
                dot: mean_dot,
                contribution: ctx.weights[i] * ctx.store.checkpoints[i].eta * mean_dot,
            }
        })
        .collect();

    Ok(InfluenceRecord {
        sample_id: z.id.clone(),
        score: pair_sum / m,
        per_checkpoint,
        eval_count: ctx.eval_count,
    })
}

/// Score every training sample: the mean over eval samples of the pair
/// influence. Output order follows the training dataset.
///
/// With the `parallel` feature this distributes training samples across the
/// current rayon pool; the result is identical to [`score_dataset_serial`].
pub fn score_dataset<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    train: &Dataset,
    eval: &EvalSet,
    cfg: &DecayConfig,
) -> Result<Vec<InfluenceRecord>> {
    #[cfg(feature = "parallel")]
    {
        let ctx = prepare_context(store, model, eval, cfg)?;
        train
            .samples
            .par_iter()
            .map(|z| score_one(&ctx, model, z))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        score_dataset_serial(store, model, train, eval, cfg)
    }
}

/// Self-influence of every training sample, in dataset order. Each record's
/// per-checkpoint dot is the squared gradient norm at that checkpoint.
pub fn self_influence_dataset<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    train: &Dataset,
    cfg: &DecayConfig,
) -> Result<Vec<InfluenceRecord>> {
    check_store(store)?;
    cfg.validate()?;
    let self_one = |z: &Sample| -> Result<InfluenceRecord> {
        let reference = cfg.resolve_reference(store, z.t);
        let mut score = 0.0;
        let mut per_checkpoint = Vec::with_capacity(store.checkpoints.len());
        for ckpt in &store.checkpoints {
            let weight = cfg.decay_weight(reference, cfg.checkpoint_time(ckpt))?;
            let g = model.gradient(&ckpt.params, z)?;
            let norm2 = dot(&g, &g);
            score += weight * ckpt.eta * norm2;
            per_checkpoint.push(CheckpointContribution {
                checkpoint_index: ckpt.index,
                decay_weight: weight,
                dot: norm2,
                contribution: weight * ckpt.eta * norm2,
            });
        }
        Ok(InfluenceRecord {
            sample_id: z.id.clone(),
            score,
            per_checkpoint,
            eval_count: 1,
        })
    };
    #[cfg(feature = "parallel")]
    {
        train.samples.par_iter().map(self_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        train.samples.iter().map(self_one).collect()
    }
}

/// Single-threaded scoring path; always available as the sequential
/// reference for the parallel implementation.
pub fn score_dataset_serial<G: GradientProvider>(
    store: &CheckpointStore,
    model: &G,
    train: &Dataset,
    eval: &EvalSet,
    cfg: &DecayConfig,
) -> Result<Vec<InfluenceRecord>> {
    let ctx = prepare_context(store, model, eval, cfg)?;
    train
        .samples
        .iter()
        .map(|z| score_one(&ctx, model, z))
        .collect()
}

/// Records in output order: score descending, then id ascending.
pub fn sorted_for_output(records: &[InfluenceRecord]) -> Vec<&InfluenceRecord> {
    let mut rows: Vec<&InfluenceRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    rows
}

/// Write `sample_id,score` CSV rows sorted by score descending, id ascending.
pub fn write_scores_csv(records: &[InfluenceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| Error::storage(path, std::io::Error::other(e));
    w.write_record(["sample_id", "score"]).map_err(io_err)?;
    for r in sorted_for_output(records) {
        // Display for f64 is the shortest text that parses back to the same bits.
        w.write_record([r.sample_id.as_str(), &format!("{}", r.score)])
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::storage(path, e))
}

/// Reload a scores CSV written by [`write_scores_csv`].
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<InfluenceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?;
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "score"] {
            return Err(Error::format(
                path,
                format!("expected header sample_id,score, found {headers:?}"),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 2)))?;
        let id = row
            .get(0)
            .ok_or_else(|| Error::format(path, format!("row {} missing sample_id", i + 2)))?;
        let score: f64 = row
            .get(1)
            .ok_or_else(|| Error::format(path, format!("row {} missing score", i + 2)))?
            .parse()
            .map_err(|e| Error::format(path, format!("row {}: bad score: {e}", i + 2)))?;
        records.push(InfluenceRecord::from_score(id, score));
    }
    Ok(records)
}

/// Write the per-checkpoint breakdown as JSONL, one record per line, in the
/// same order as the scores CSV.
pub fn write_breakdown_jsonl(records: &[InfluenceRecord], path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in sorted_for_output(records) {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))
            .map_err(|e| Error::storage(path, e))?;
    }
    w.flush().map_err(|e| Error::storage(path, e))
}
