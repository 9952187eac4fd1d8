//! Evaluation metrics, the leave-one-out retraining oracle, and rank
//! correlation.
//!
//! KS is the classic credit-risk discrimination measure: the largest
//! vertical gap between the score ECDFs of the positive and negative
//! classes, computed exactly over the merged sample points.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EvalSet, Sample};
use crate::error::{Error, Result};
use crate::model::{init_params, loss, predict, ModelSpec, ParameterVector};
use crate::trainer::{train, TrainConfig};

/// Fraction of exact prediction matches.
pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal nonempty prediction/gold vectors, got {} and {}",
            preds.len(),
            golds.len()
        )));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 averaging mode. Binary scores one positive class; macro averages the
/// per-class binary F1 over `0..=max_label`, where classes absent from both
/// vectors contribute zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    Binary { pos_class: usize },
    Macro,
}

fn binary_f1(preds: &[usize], golds: &[usize], pos: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut false_neg = 0usize;
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == pos, g == pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => false_neg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + false_neg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// `2TP / (2TP + FP + FN)` for binary mode; unweighted per-class mean for
/// macro. Always in `[0, 1]`.
pub fn f1(preds: &[usize], golds: &[usize], mode: F1Mode) -> Result<f64> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal nonempty prediction/gold vectors, got {} and {}",
            preds.len(),
            golds.len()
        )));
    }
    match mode {
        F1Mode::Binary { pos_class } => Ok(binary_f1(preds, golds, pos_class)),
        F1Mode::Macro => {
            let max_label = preds.iter().chain(golds).copied().max().unwrap_or(0);
            let classes = max_label + 1;
            let total: f64 = (0..classes).map(|c| binary_f1(preds, golds, c)).sum();
            Ok(total / classes as f64)
        }
    }
}

/// Fraction of raw outputs whose trimmed, case-folded text matches no
/// lexicon entry.
pub fn miss_rate<S: AsRef<str>>(raw_outputs: &[S], lexicon: &[S]) -> Result<f64> {
    if lexicon.is_empty() {
        return Err(Error::InvalidArgument("lexicon must be nonempty".into()));
    }
    if raw_outputs.is_empty() {
        return Ok(0.0);
    }
    let folded: Vec<String> = lexicon
        .iter()
        .map(|s| s.as_ref().trim().to_lowercase())
        .collect();
    let missed = raw_outputs
        .iter()
        .filter(|out| {
            let o = out.as_ref().trim().to_lowercase();
            !folded.contains(&o)
        })
        .count();
    Ok(missed as f64 / raw_outputs.len() as f64)
}

/// Two-sample Kolmogorov-Smirnov statistic: `sup_x |ECDF_pos(x) - ECDF_neg(x)|`
/// evaluated exactly over the merged sorted scores.
pub fn ks_statistic(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::InvalidArgument(
            "both score groups must be nonempty".into(),
        ));
    }
    let mut pos = scores_pos.to_vec();
    let mut neg = scores_neg.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let (mut ip, mut in_) = (0usize, 0usize);
    let mut sup = 0.0f64;
    for x in thresholds {
        while ip < pos.len() && pos[ip] <= x {
            ip += 1;
        }
        while in_ < neg.len() && neg[in_] <= x {
            in_ += 1;
        }
        sup = sup.max((ip as f64 / np - in_ as f64 / nn).abs());
    }
    Ok(sup)
}

/// Spearman rank correlation: Pearson correlation of fractional ranks with
/// average ranks on ties. Errors on constant input (undefined).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need two equal-length vectors of at least 2 entries, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    pearson(&ra, &rb)
}

fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation undefined for a constant vector".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Mean per-sample loss at fixed parameters.
pub fn mean_loss(spec: &ModelSpec, params: &ParameterVector, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot average over zero samples".into()));
    }
    let mut total = 0.0;
    for z in samples {
        total += loss(spec, params, z)?;
    }
    Ok(total / samples.len() as f64)
}

/// Argmax prediction; ties resolve to the lowest class index.
pub fn predict_label(spec: &ModelSpec, params: &ParameterVector, z: &Sample) -> Result<usize> {
    let probs = predict(spec, params, z)?;
    let mut best = 0;
    for (c, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Eval-loss change from retraining without one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub sample_id: String,
    pub base_eval_loss: f64,
    pub loo_eval_loss: f64,
    /// `loo_eval_loss - base_eval_loss`; positive means the sample helped.
    pub delta: f64,
}

/// Retrainings the oracle will run without an explicit override.
pub const DEFAULT_LOO_CAP: usize = 256;

/// Ground-truth influence by leave-one-out retraining: train once on the
/// full set, then once per sample with that sample removed, under identical
/// seeds and schedule. Results are sorted by sample id.
///
/// Removing the only sample of a singleton set leaves the initialized model.
pub fn loo_oracle(
    spec: &ModelSpec,
    train_set: &Dataset,
    eval: &EvalSet,
    cfg: &TrainConfig,
    cap: Option<usize>,
) -> Result<Vec<LooResult>> {
    let cap = cap.unwrap_or(DEFAULT_LOO_CAP);
    if train_set.len() > cap {
        return Err(Error::LooCapExceeded {
            n: train_set.len(),
            cap,
        });
    }
    if eval.is_empty() {
        return Err(Error::InvalidArgument("eval set is empty".into()));
    }

    let base_store = train(spec, train_set, cfg)?;
    let base_params = base_store.final_params().expect("completed run is nonempty");
    let base_eval_loss = mean_loss(spec, base_params, &eval.samples)?;

    let retrain_without = |i: &usize| -> Result<LooResult> {
        let i = *i;
        let mut samples = train_set.samples.clone();
        let removed = samples.remove(i);
        let final_params;
        let store;
        if samples.is_empty() {
            final_params = init_params(spec)?;
        } else {
            let reduced = Dataset {
                name: train_set.name.clone(),
                num_classes: train_set.num_classes,
                feature_dim: train_set.feature_dim,
                samples,
            };
            store = train(spec, &reduced, cfg)?;
            final_params = store.final_params().expect("nonempty").clone();
        }
        let loo_eval_loss = mean_loss(spec, &final_params, &eval.samples)?;
        Ok(LooResult {
            sample_id: removed.id,
            base_eval_loss,
            loo_eval_loss,
            delta: loo_eval_loss - base_eval_loss,
        })
    };

    let indices: Vec<usize> = (0..train_set.len()).collect();
    #[cfg(feature = "parallel")]
    let results: Result<Vec<LooResult>> = indices.par_iter().map(retrain_without).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<LooResult>> = indices.iter().map(retrain_without).collect();

    let mut results = results?;
    results.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(results)
}

/// Write LOO results as `sample_id,base_loss,loo_loss,delta`.
pub fn write_loo_csv(results: &[LooResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "sample_id,base_loss,loo_loss,delta").map_err(|e| Error::storage(path, e))?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{}",
            r.sample_id, r.base_eval_loss, r.loo_eval_loss, r.delta
        )
        .map_err(|e| Error::storage(path, e))?;
    }
    w.flush().map_err(|e| Error::storage(path, e))
}

/// Scalar metric suite over one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub f1: f64,
    pub miss: f64,
    pub ks: f64,
    pub n: usize,
}

impl MetricReport {
    /// Aligned-column text rendering.
    pub fn to_table(&self) -> String {
        format!(
            "metric  value\nacc     {:.6}\nf1      {:.6}\nmiss    {:.6}\nks      {:.6}\nn       {}\n",
            self.acc, self.f1, self.miss, self.ks, self.n
        )
    }
}

/// Evaluate a trained model on labeled samples. KS splits the predicted
/// `pos_class` probability by gold label; miss is zero because the model
/// emits class indices directly.
pub fn evaluate_model(
    spec: &ModelSpec,
    params: &ParameterVector,
    samples: &[Sample],
    mode: F1Mode,
    pos_class: usize,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on zero samples".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    for z in samples {
        let probs = predict(spec, params, z)?;
        let mut best = 0;
        for (c, p) in probs.iter().enumerate().skip(1) {
            if *p > probs[best] {
                best = c;
            }
        }
        preds.push(best);
        if z.label == pos_class {
            pos_scores.push(probs[pos_class]);
        } else {
            neg_scores.push(probs[pos_class]);
        }
    }
    let golds: Vec<usize> = samples.iter().map(|z| z.label).collect();
    Ok(MetricReport {
        acc: accuracy(&preds, &golds)?,
        f1: f1(&preds, &golds, mode)?,
        miss: 0.0,
        ks: ks_statistic(&pos_scores, &neg_scores)?,
        n: samples.len(),
    })
}
