//! Top-K pruning, hybrid dataset mixing, and instruction-data rendering.
//!
//! The pruned set is the k highest-scoring samples (score descending, id
//! ascending on ties). The mixer composes a training set from a prefix of
//! the pruned ids plus a seeded random draw from the rest of the dataset:
//! 30% high-influence and 70% random by default.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::influence::InfluenceRecord;

/// Size of the pruned set: an absolute count or a fraction of the input,
/// resolved as `ceil(fraction * n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KSpec {
    Count(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub k: KSpec,
}

impl PruneConfig {
    pub fn resolve_k(&self, n: usize) -> Result<usize> {
        let k = match self.k {
            KSpec::Count(c) => c,
            KSpec::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "k fraction must lie in (0, 1], got {f}"
                    )));
                }
                (f * n as f64).ceil() as usize
            }
        };
        if k < 1 || k > n {
            return Err(Error::InvalidArgument(format!(
                "resolved k = {k} outside 1..={n}"
            )));
        }
        Ok(k)
    }
}

fn rank_order(a: &InfluenceRecord, b: &InfluenceRecord) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// The k most influential sample ids, ordered score descending then id
/// ascending. Every selected score is >= every unselected score.
pub fn select_topk(records: &[InfluenceRecord], k: usize) -> Result<Vec<String>> {
    if k < 1 || k > records.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            records.len()
        )));
    }
    let mut refs: Vec<&InfluenceRecord> = records.iter().collect();
    if k < refs.len() {
        // Partial selection; the full-sort route is kept to the tests.
        refs.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b));
        refs.truncate(k);
    }
    refs.sort_by(|a, b| rank_order(a, b));
    Ok(refs.into_iter().map(|r| r.sample_id.clone()).collect())
}

/// A composed training set: a high-influence prefix plus a disjoint random
/// complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub total_n: usize,
    pub high_influence_ratio: f64,
    pub seed: u64,
    pub selected_high: Vec<String>,
    pub selected_random: Vec<String>,
}

impl MixPlan {
    /// Ids in export order: high-influence part first, then the random part.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.selected_high
            .iter()
            .chain(&self.selected_random)
            .map(String::as_str)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("plan serializes");
        std::fs::write(path, json).map_err(|e| Error::storage(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<MixPlan> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("invalid plan: {e}")))
    }
}

/// Compose `round(rho * total_n)` high-influence ids (a prefix of
/// `topk_ids`) with a seeded uniform draw from the remaining dataset.
pub fn build_mix(
    d: &Dataset,
    topk_ids: &[String],
    rho: f64,
    total_n: usize,
    seed: u64,
) -> Result<MixPlan> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "high-influence ratio must lie in [0, 1], got {rho}"
        )));
    }
    if total_n > d.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {total_n} samples from a dataset of {}",
            d.len()
        )));
    }
    let n_high = (rho * total_n as f64).round() as usize;
    if n_high > topk_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "mix needs {n_high} high-influence ids but only {} were supplied",
            topk_ids.len()
        )));
    }

    let known: HashSet<&str> = d.samples.iter().map(|s| s.id.as_str()).collect();
    let mut high_set: HashSet<&str> = HashSet::with_capacity(n_high);
    let selected_high: Vec<String> = topk_ids[..n_high].to_vec();
    for id in &selected_high {
        if !known.contains(id.as_str()) {
            return Err(Error::Integrity(format!("top-k id \"{id}\" not in dataset")));
        }
        if !high_set.insert(id.as_str()) {
            return Err(Error::Integrity(format!("top-k id \"{id}\" listed twice")));
        }
    }

    let candidates: Vec<&str> = d
        .samples
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| !high_set.contains(id))
        .collect();
    let n_random = total_n - n_high;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected_random = rand::seq::index::sample(&mut rng, candidates.len(), n_random)
        .iter()
        .map(|i| candidates[i].to_string())
        .collect();

    Ok(MixPlan {
        total_n,
        high_influence_ratio: rho,
        seed,
        selected_high,
        selected_random,
    })
}

/// The tasks of the instruction templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Classification,
    Qa,
}

/// A task template: required text slots plus, for discriminative tasks,
/// a closed answer lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub task: Task,
}

impl InstructionTemplate {
    pub fn new(task: Task) -> Self {
        InstructionTemplate { task }
    }

    pub fn required_slots(&self) -> &'static [&'static str] {
        match self.task {
            Task::Sentiment => &["sentence", "answer"],
            Task::Classification => &["sentence", "question", "answer"],
            Task::Qa => &["context", "question", "answer"],
        }
    }

    /// Valid answers for discriminative tasks; empty means unconstrained.
    pub fn answer_lexicon(&self) -> &'static [&'static str] {
        match self.task {
            Task::Sentiment => &["good", "neutral", "bad"],
            Task::Classification => &["Yes", "No"],
            Task::Qa => &[],
        }
    }
}

fn slot<'a>(z: &'a Sample, name: &str) -> Result<&'a str> {
    z.text_fields
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| Error::MissingSlot(name.to_string()))
}

/// Render the prompt (everything up to and including `Answer:`) and the
/// answer separately. [`render_instruction`] is their space-joined form.
pub fn render_prompt_and_answer(
    z: &Sample,
    tmpl: &InstructionTemplate,
) -> Result<(String, String)> {
    let answer = slot(z, "answer")?.to_string();
    let lexicon = tmpl.answer_lexicon();
    if !lexicon.is_empty() && !lexicon.contains(&answer.as_str()) {
        return Err(Error::AnswerOutsideLexicon {
            answer,
            lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
        });
    }
    let prompt = match tmpl.task {
        Task::Sentiment => {
            format!("{}\nQuestion: what is the sentiment?\nAnswer:", slot(z, "sentence")?)
        }
        Task::Classification => format!(
            "{}\nQuestion: {}?\nAnswer:",
            slot(z, "sentence")?,
            slot(z, "question")?
        ),
        Task::Qa => format!(
            "{}\nQuestion: {}?\nAnswer:",
            slot(z, "context")?,
            slot(z, "question")?
        ),
    };
    Ok((prompt, answer))
}

/// Byte-exact task rendering.
pub fn render_instruction(z: &Sample, tmpl: &InstructionTemplate) -> Result<String> {
    let (prompt, answer) = render_prompt_and_answer(z, tmpl)?;
    Ok(format!("{prompt} {answer}"))
}

/// Invert [`render_instruction`], recovering every slot value. Scans from
/// the end so slot text containing newlines still parses as long as it does
/// not embed the literal markers.
pub fn parse_instruction(
    text: &str,
    tmpl: &InstructionTemplate,
) -> Result<BTreeMap<String, String>> {
    let bad = |what: &str| Error::InvalidArgument(format!("unparseable instruction: {what}"));
    let answer_at = text.rfind("\nAnswer: ").ok_or_else(|| bad("no answer marker"))?;
    let answer = &text[answer_at + "\nAnswer: ".len()..];
    let head = &text[..answer_at];

    let mut slots = BTreeMap::new();
    slots.insert("answer".to_string(), answer.to_string());
    match tmpl.task {
        Task::Sentiment => {
            let sentence = head
                .strip_suffix("\nQuestion: what is the sentiment?")
                .ok_or_else(|| bad("missing sentiment question"))?;
            slots.insert("sentence".to_string(), sentence.to_string());
        }
        Task::Classification | Task::Qa => {
            let q_at = head.rfind("\nQuestion: ").ok_or_else(|| bad("no question marker"))?;
            let question = head[q_at + "\nQuestion: ".len()..]
                .strip_suffix('?')
                .ok_or_else(|| bad("question lost its trailing question mark"))?;
            let body_slot = if tmpl.task == Task::Qa { "context" } else { "sentence" };
            slots.insert("question".to_string(), question.to_string());
            slots.insert(body_slot.to_string(), head[..q_at].to_string());
        }
    }
    Ok(slots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixSource {
    Topk,
    Random,
}

/// One line of the exported instruct JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructRecord {
    pub id: String,
    pub source: MixSource,
    pub prompt: String,
    pub answer: String,
}

/// Render every planned sample and write one JSON object per line, high
/// part first, preserving plan order. Rendering may run in parallel; output
/// order is unaffected.
pub fn export_instruct_jsonl<F>(
    plan: &MixPlan,
    d: &Dataset,
    assign: F,
    path: impl AsRef<Path>,
) -> Result<()>
where
    F: Fn(&Sample) -> InstructionTemplate + Sync,
{
    let by_id: HashMap<&str, &Sample> = d.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let jobs: Vec<(&str, MixSource)> = plan
        .selected_high
        .iter()
        .map(|id| (id.as_str(), MixSource::Topk))
        .chain(plan.selected_random.iter().map(|id| (id.as_str(), MixSource::Random)))
        .collect();

    let render_one = |&(id, source): &(&str, MixSource)| -> Result<String> {
        let z = by_id
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("plan id \"{id}\" not in dataset")))?;
        let (prompt, answer) = render_prompt_and_answer(z, &assign(z))?;
        let record = InstructRecord {
            id: id.to_string(),
            source,
            prompt,
            answer,
        };
        Ok(serde_json::to_string(&record).expect("record serializes"))
    };

    #[cfg(feature = "parallel")]
    let lines: Result<Vec<String>> = jobs.par_iter().map(render_one).collect();
    #[cfg(not(feature = "parallel"))]
    let lines: Result<Vec<String>> = jobs.iter().map(render_one).collect();

    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines? {
        writeln!(w, "{line}").map_err(|e| Error::storage(path, e))?;
    }
    w.flush().map_err(|e| Error::storage(path, e))
}

/// Read back an instruct JSONL written by [`export_instruct_jsonl`].
pub fn load_instruct_jsonl(path: impl AsRef<Path>) -> Result<Vec<InstructRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticConfig};
    use rand::Rng;

    fn records(pairs: &[(&str, f64)]) -> Vec<InfluenceRecord> {
        pairs
            .iter()
            .map(|&(id, score)| InfluenceRecord::from_score(id, score))
            .collect()
    }

    fn text_sample(id: &str, fields: &[(&str, &str)]) -> Sample {
        Sample {
            id: id.into(),
            user_id: "u".into(),
            t: 0,
            features: vec![0.0],
            label: 0,
            text_fields: fields
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            flipped: false,
        }
    }

    #[test]
    fn topk_orders_by_score_then_id() {
        let recs = records(&[("a", 0.9), ("b", 0.1), ("c", 0.7), ("d", -0.5)]);
        assert_eq!(select_topk(&recs, 2).unwrap(), vec!["a", "c"]);
    }

    #[test]
    fn topk_breaks_ties_by_id() {
        let recs = records(&[("b", 0.5), ("a", 0.5), ("c", 0.1)]);
        assert_eq!(select_topk(&recs, 1).unwrap(), vec!["a"]);
        assert_eq!(select_topk(&recs, 2).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn topk_rejects_out_of_range_k() {
        let recs = records(&[("a", 0.5)]);
        assert!(select_topk(&recs, 0).is_err());
        assert!(select_topk(&recs, 2).is_err());
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let recs: Vec<InfluenceRecord> = (0..1000)
            .map(|i| InfluenceRecord::from_score(format!("s{i:04}"), rng.random_range(-5.0..5.0)))
            .collect();
        let got = select_topk(&recs, 300).unwrap();

        let mut sorted: Vec<(f64, &str)> =
            recs.iter().map(|r| (r.score, r.sample_id.as_str())).collect();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let expect: Vec<String> = sorted[..300].iter().map(|(_, id)| id.to_string()).collect();
        assert_eq!(got, expect);

        let min_selected = sorted[..300].iter().map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let max_rest = sorted[300..].iter().map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
        assert!(min_selected >= max_rest);
    }

    #[test]
    fn prune_config_resolves_fractions_with_ceil() {
        let cfg = PruneConfig {
            k: KSpec::Fraction(0.3),
        };
        assert_eq!(cfg.resolve_k(1000).unwrap(), 300);
        assert_eq!(cfg.resolve_k(7).unwrap(), 3); // ceil(2.1)
        let cfg = PruneConfig { k: KSpec::Count(5) };
        assert_eq!(cfg.resolve_k(10).unwrap(), 5);
        assert!(cfg.resolve_k(4).is_err());
    }

    fn mix_fixture() -> (Dataset, Vec<String>) {
        let d = make_synthetic(&SyntheticConfig {
            n_users: 40,
            steps_per_user: 25,
            feature_dim: 3,
            noise_rate: 0.0,
            seed: 55,
        })
        .unwrap();
        let topk: Vec<String> = d.samples[..400].iter().map(|s| s.id.clone()).collect();
        (d, topk)
    }

    #[test]
    fn mix_produces_300_high_and_700_random() {
        let (d, topk) = mix_fixture();
        let plan = build_mix(&d, &topk, 0.3, 1000, 42).unwrap();
        assert_eq!(plan.selected_high.len(), 300);
        assert_eq!(plan.selected_random.len(), 700);
        assert_eq!(plan.selected_high, topk[..300].to_vec());
        let high: HashSet<&String> = plan.selected_high.iter().collect();
        assert!(plan.selected_random.iter().all(|id| !high.contains(id)));
    }

    #[test]
    fn mix_boundary_ratios() {
        let (d, topk) = mix_fixture();
        let pure_random = build_mix(&d, &topk, 0.0, 200, 1).unwrap();
        assert!(pure_random.selected_high.is_empty());
        assert_eq!(pure_random.selected_random.len(), 200);

        let pure_topk = build_mix(&d, &topk, 1.0, 400, 1).unwrap();
        assert_eq!(pure_topk.selected_high, topk);
        assert!(pure_topk.selected_random.is_empty());
    }

    #[test]
    fn mix_is_seed_deterministic_with_varying_random_part() {
        let (d, topk) = mix_fixture();
        let base = build_mix(&d, &topk, 0.3, 500, 42).unwrap();
        assert_eq!(base, build_mix(&d, &topk, 0.3, 500, 42).unwrap());

        let mut distinct_random = 0;
        for seed in 100..120 {
            let plan = build_mix(&d, &topk, 0.3, 500, seed).unwrap();
            assert_eq!(plan.selected_high, base.selected_high);
            if plan.selected_random != base.selected_random {
                distinct_random += 1;
            }
        }
        assert_eq!(distinct_random, 20);
    }

    #[test]
    fn mix_rejects_insufficient_inputs() {
        let (d, topk) = mix_fixture();
        assert!(build_mix(&d, &topk[..10], 0.3, 1000, 1).is_err());
        assert!(build_mix(&d, &topk, 0.3, d.len() + 1, 1).is_err());
        let bogus = vec!["ghost".to_string()];
        assert!(matches!(
            build_mix(&d, &bogus, 1.0, 1, 1),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn sentiment_rendering_is_byte_exact() {
        let z = text_sample("s", &[("sentence", "Rates rose."), ("answer", "bad")]);
        let tmpl = InstructionTemplate::new(Task::Sentiment);
        assert_eq!(
            render_instruction(&z, &tmpl).unwrap(),
            "Rates rose.\nQuestion: what is the sentiment?\nAnswer: bad"
        );
    }

    #[test]
    fn classification_rendering_is_byte_exact() {
        let z = text_sample(
            "c",
            &[
                ("sentence", "Loan repaid on schedule."),
                ("question", "is the applicant creditworthy"),
                ("answer", "Yes"),
            ],
        );
        let tmpl = InstructionTemplate::new(Task::Classification);
        assert_eq!(
            render_instruction(&z, &tmpl).unwrap(),
            "Loan repaid on schedule.\nQuestion: is the applicant creditworthy?\nAnswer: Yes"
        );
    }

    #[test]
    fn qa_rendering_is_byte_exact() {
        let z = text_sample(
            "q",
            &[
                ("context", "Applicant reports 50k income."),
                ("question", "what is the reported income"),
                ("answer", "50k"),
            ],
        );
        let tmpl = InstructionTemplate::new(Task::Qa);
        assert_eq!(
            render_instruction(&z, &tmpl).unwrap(),
            "Applicant reports 50k income.\nQuestion: what is the reported income?\nAnswer: 50k"
        );
    }

    #[test]
    fn missing_slot_is_named() {
        let z = text_sample("c", &[("sentence", "text"), ("answer", "Yes")]);
        match render_instruction(&z, &InstructionTemplate::new(Task::Classification)) {
            Err(Error::MissingSlot(slot)) => assert_eq!(slot, "question"),
            other => panic!("expected missing-slot error, got {other:?}"),
        }
    }

    #[test]
    fn lexicon_violations_are_rejected() {
        let z = text_sample("s", &[("sentence", "text"), ("answer", "terrible")]);
        assert!(matches!(
            render_instruction(&z, &InstructionTemplate::new(Task::Sentiment)),
            Err(Error::AnswerOutsideLexicon { .. })
        ));
    }

    #[test]
    fn parse_back_recovers_synthetic_slots() {
        let d = make_synthetic(&SyntheticConfig {
            n_users: 5,
            steps_per_user: 6,
            feature_dim: 2,
            noise_rate: 0.0,
            seed: 9,
        })
        .unwrap();
        for tmpl in [
            InstructionTemplate::new(Task::Sentiment),
            InstructionTemplate::new(Task::Qa),
        ] {
            for z in &d.samples {
                let text = render_instruction(z, &tmpl).unwrap();
                let slots = parse_instruction(&text, &tmpl).unwrap();
                for name in tmpl.required_slots() {
                    assert_eq!(
                        slots.get(*name).map(String::as_str),
                        z.text_fields.get(*name).map(String::as_str),
                        "slot {name} of sample {}",
                        z.id
                    );
                }
            }
        }
    }

    #[test]
    fn export_counts_and_sources_match_plan() {
        let (d, topk) = mix_fixture();
        let plan = build_mix(&d, &topk, 0.3, 10, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instruct.jsonl");
        export_instruct_jsonl(&plan, &d, |_| InstructionTemplate::new(Task::Sentiment), &path)
            .unwrap();
        let records = load_instruct_jsonl(&path).unwrap();
        assert_eq!(records.len(), 10);
        assert_eq!(
            records.iter().filter(|r| r.source == MixSource::Topk).count(),
            3
        );
        let mut got: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        let mut expect: Vec<&str> = plan.ids().collect();
        got.sort_unstable();
        expect.sort_unstable();
        assert_eq!(got, expect);
    }

    #[test]
    fn export_with_full_topk_plan_tags_everything_topk() {
        let (d, topk) = mix_fixture();
        let plan = build_mix(&d, &topk, 1.0, 20, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instruct.jsonl");
        export_instruct_jsonl(&plan, &d, |_| InstructionTemplate::new(Task::Qa), &path).unwrap();
        let records = load_instruct_jsonl(&path).unwrap();
        assert!(records.iter().all(|r| r.source == MixSource::Topk));
    }

    #[test]
    fn export_rejects_unknown_ids() {
        let (d, _) = mix_fixture();
        let plan = MixPlan {
            total_n: 1,
            high_influence_ratio: 1.0,
            seed: 0,
            selected_high: vec!["ghost".into()],
            selected_random: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instruct.jsonl");
        let err = export_instruct_jsonl(&plan, &d, |_| InstructionTemplate::new(Task::Qa), &path);
        assert!(matches!(err, Err(Error::Integrity(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            /// Permuting the records never changes the selected prefix.
            #[test]
            fn topk_is_permutation_invariant(seed in 0u64..500, k in 1usize..30) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut recs: Vec<InfluenceRecord> = (0..30)
                    .map(|i| InfluenceRecord::from_score(
                        format!("s{i:02}"),
                        rng.random_range(-1.0..1.0),
                    ))
                    .collect();
                let baseline = select_topk(&recs, k).unwrap();
                for _ in 0..3 {
                    use rand::seq::SliceRandom;
                    recs.shuffle(&mut rng);
                    prop_assert_eq!(select_topk(&recs, k).unwrap(), baseline.clone());
                }
            }

            /// Mix partition sizes are exact and the parts disjoint.
            #[test]
            fn mix_partition_sizes(rho in 0.0f64..1.0, total in 1usize..200, seed in 0u64..100) {
                let d = make_synthetic(&SyntheticConfig {
                    n_users: 10,
                    steps_per_user: 20,
                    feature_dim: 2,
                    noise_rate: 0.0,
                    seed: 1,
                }).unwrap();
                let topk: Vec<String> =
                    d.samples[..200].iter().map(|s| s.id.clone()).collect();
                let plan = build_mix(&d, &topk, rho, total, seed).unwrap();
                let n_high = (rho * total as f64).round() as usize;
                prop_assert_eq!(plan.selected_high.len(), n_high);
                prop_assert_eq!(plan.selected_random.len(), total - n_high);
                let mut all: Vec<&str> = plan.ids().collect();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), total);
            }
        }
    }
}
