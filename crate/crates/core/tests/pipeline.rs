//! Library-level pipeline integration: generate, split, train with
//! persistence, score, prune, mix, render, and evaluate on temp storage.

use tracseq::dataset::{load_jsonl, make_synthetic, save_jsonl, split, SyntheticConfig};
use tracseq::eval::{evaluate_model, F1Mode};
use tracseq::influence::{read_scores_csv, score_dataset, write_scores_csv, DecayConfig};
use tracseq::model::ModelSpec;
use tracseq::pruner::{
    build_mix, export_instruct_jsonl, load_instruct_jsonl, parse_instruction, select_topk,
    InstructionTemplate, KSpec, MixSource, PruneConfig, Task,
};
use tracseq::trainer::{load_store, train_to_dir, LrSchedule, TrainConfig};
use tracseq::EvalSet;

#[test]
fn library_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();

    let full = make_synthetic(&SyntheticConfig {
        n_users: 30,
        steps_per_user: 10,
        feature_dim: 6,
        noise_rate: 0.1,
        seed: 11,
    })
    .unwrap();
    let data_path = dir.path().join("full.jsonl");
    save_jsonl(&full, &data_path).unwrap();
    let full = load_jsonl(&data_path).unwrap();

    let (train_d, val_d, test_d) = split(&full, (0.7, 0.15, 0.15), 11).unwrap();
    assert_eq!(train_d.len() + val_d.len() + test_d.len(), 300);

    let spec = ModelSpec::logistic(6, 2, 11, 0.5);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 21,
        lr_schedule: LrSchedule::Constant { eta: 0.3 },
        checkpoint_every: 20,
        shuffle_seed: 11,
    };
    let ckpt_dir = dir.path().join("ckpts");
    let store = train_to_dir(&spec, &train_d, &cfg, &ckpt_dir).unwrap();
    let reloaded = load_store(&ckpt_dir).unwrap();
    assert_eq!(store, reloaded);

    let eval_set = EvalSet::from_dataset(&val_d).unwrap();
    let records =
        score_dataset(&reloaded, &reloaded.model_spec, &train_d, &eval_set, &DecayConfig::new(0.9))
            .unwrap();
    let scores_path = dir.path().join("scores.csv");
    write_scores_csv(&records, &scores_path).unwrap();
    let records = read_scores_csv(&scores_path).unwrap();

    let k = PruneConfig {
        k: KSpec::Fraction(0.3),
    }
    .resolve_k(records.len())
    .unwrap();
    let topk = select_topk(&records, k).unwrap();
    assert_eq!(topk.len(), k);

    let plan = build_mix(&train_d, &topk, 0.3, 150, 11).unwrap();
    let instruct_path = dir.path().join("instruct.jsonl");
    export_instruct_jsonl(
        &plan,
        &train_d,
        |_| InstructionTemplate::new(Task::Sentiment),
        &instruct_path,
    )
    .unwrap();
    let lines = load_instruct_jsonl(&instruct_path).unwrap();
    assert_eq!(lines.len(), 150);
    assert_eq!(
        lines.iter().filter(|l| l.source == MixSource::Topk).count(),
        45
    );
    // Every exported prompt parses back to the sample's own slots.
    let tmpl = InstructionTemplate::new(Task::Sentiment);
    for line in lines.iter().take(20) {
        let z = train_d.samples.iter().find(|s| s.id == line.id).unwrap();
        let text = format!("{} {}", line.prompt, line.answer);
        let slots = parse_instruction(&text, &tmpl).unwrap();
        assert_eq!(slots["sentence"], z.text_fields["sentence"]);
        assert_eq!(slots["answer"], z.text_fields["answer"]);
    }

    let report = evaluate_model(
        &reloaded.model_spec,
        reloaded.final_params().unwrap(),
        &test_d.samples,
        F1Mode::Binary { pos_class: 1 },
        1,
    )
    .unwrap();
    assert!(report.acc > 0.7, "test accuracy {}", report.acc);
    assert!(report.ks > 0.4, "test ks {}", report.ks);
}

/// Samples the generator flipped should, on average, score lower against a
/// clean eval split than untouched samples.
#[test]
fn flipped_samples_rank_below_clean_ones() {
    let full = make_synthetic(&SyntheticConfig {
        n_users: 25,
        steps_per_user: 10,
        feature_dim: 5,
        noise_rate: 0.12,
        seed: 29,
    })
    .unwrap();
    let (train_d, val_d, _) = split(&full, (0.75, 0.25, 0.0), 29).unwrap();
    let clean_eval: Vec<_> = val_d.samples.iter().filter(|s| !s.flipped).cloned().collect();
    let eval_set = EvalSet::new(clean_eval, None).unwrap();

    let spec = ModelSpec::logistic(5, 2, 29, 0.5);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 16,
        lr_schedule: LrSchedule::Constant { eta: 0.3 },
        checkpoint_every: 20,
        shuffle_seed: 29,
    };
    let store = tracseq::trainer::train(&spec, &train_d, &cfg).unwrap();
    let records =
        score_dataset(&store, &spec, &train_d, &eval_set, &DecayConfig::new(0.9)).unwrap();

    let mut flipped_sum = 0.0;
    let mut flipped_n = 0.0;
    let mut clean_sum = 0.0;
    let mut clean_n = 0.0;
    for (r, z) in records.iter().zip(&train_d.samples) {
        if z.flipped {
            flipped_sum += r.score;
            flipped_n += 1.0;
        } else {
            clean_sum += r.score;
            clean_n += 1.0;
        }
    }
    let flipped_mean = flipped_sum / flipped_n;
    let clean_mean = clean_sum / clean_n;
    assert!(
        flipped_mean < clean_mean,
        "flipped mean {flipped_mean} should sit below clean mean {clean_mean}"
    );
}
