//! Subcommand implementations: flag/config resolution, module calls, and
//! run-log bookkeeping.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use tracseq::dataset::{load_jsonl, make_synthetic, save_jsonl, SyntheticConfig};
use tracseq::eval::{evaluate_model, loo_oracle, write_loo_csv, F1Mode};
use tracseq::influence::{
    score_dataset, self_influence_dataset, write_breakdown_jsonl, write_scores_csv,
};
use tracseq::model::{grad_check, init_params, ModelKind, ModelSpec};
use tracseq::pruner::{
    build_mix, export_instruct_jsonl, select_topk, InstructionTemplate, KSpec, MixPlan,
    PruneConfig, Task,
};
use tracseq::trainer::{load_store, train_to_dir, LrSchedule, TrainConfig};
use tracseq::{DecayConfig, EvalSet, InfluenceRecord, Sample, TimeAxis};

use crate::manifest::validate_finetune_manifest;
use crate::util::{require_dir, require_file, CliError, CliResult, ConfigFile, RunLog};
use crate::{
    EvalArgs, GradcheckArgs, MixArgs, ModelArgs, OracleArgs, PruneArgs, RenderArgs, ScoreArgs,
    SplitArgs, SynthArgs, TrainArgs, TrainOptArgs, ValidateFinetuneArgs,
};

fn required_path(
    flag: Option<PathBuf>,
    cfg: &ConfigFile,
    key: &str,
) -> CliResult<PathBuf> {
    flag.map(Ok)
        .or_else(|| cfg.path(key).transpose())
        .transpose()?
        .ok_or_else(|| CliError::usage(format!("missing required --{key}")))
}

fn parse_model_kind(s: &str) -> CliResult<ModelKind> {
    match s {
        "logistic" => Ok(ModelKind::Logistic),
        "mlp" => Ok(ModelKind::Mlp),
        other => Err(CliError::usage(format!(
            "unknown model kind \"{other}\", expected logistic or mlp"
        ))),
    }
}

fn parse_hidden(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::usage(format!("bad hidden width \"{p}\"")))
        })
        .collect()
}

fn parse_time_axis(s: &str) -> CliResult<TimeAxis> {
    match s {
        "step" => Ok(TimeAxis::CheckpointStep),
        "timestamp" => Ok(TimeAxis::SampleTimestamp),
        other => Err(CliError::usage(format!(
            "unknown time axis \"{other}\", expected step or timestamp"
        ))),
    }
}

fn parse_task(s: &str) -> CliResult<Task> {
    match s {
        "sentiment" => Ok(Task::Sentiment),
        "classification" => Ok(Task::Classification),
        "qa" => Ok(Task::Qa),
        other => Err(CliError::usage(format!(
            "unknown task \"{other}\", expected sentiment, classification, or qa"
        ))),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile) -> CliResult<u64> {
    Ok(flag.or(cfg.u64("seed")?).unwrap_or(42))
}

/// Resolved-config echo: a flat map of long flag names, so a run log's
/// `resolved_config` can be fed straight back through `--config`.
type Echo = serde_json::Map<String, serde_json::Value>;

/// Model spec from flags/config plus the dataset's schema.
fn resolve_model_spec(
    margs: &ModelArgs,
    cfg: &ConfigFile,
    seed: u64,
    feature_dim: usize,
    num_classes: usize,
) -> CliResult<(ModelSpec, Echo)> {
    let kind_name = margs
        .model
        .clone()
        .or(cfg.string("model")?)
        .unwrap_or_else(|| "logistic".into());
    let kind = parse_model_kind(&kind_name)?;
    let hidden_raw = margs.hidden.clone().or(cfg.string("hidden")?);
    let hidden_dims = match (&kind, hidden_raw.as_deref()) {
        (ModelKind::Logistic, _) => Vec::new(),
        (ModelKind::Mlp, Some(s)) => parse_hidden(s)?,
        (ModelKind::Mlp, None) => vec![8],
    };
    let init_scale = margs.init_scale.or(cfg.f64("init-scale")?).unwrap_or(0.5);
    let init_seed = margs.init_seed.or(cfg.u64("init-seed")?).unwrap_or(seed);
    let spec = ModelSpec {
        kind,
        feature_dim,
        num_classes,
        hidden_dims: hidden_dims.clone(),
        init_seed,
        init_scale,
    };
    spec.validate()?;
    let mut echo = Echo::new();
    echo.insert("model".into(), json!(kind_name));
    if !hidden_dims.is_empty() {
        let joined = hidden_dims
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        echo.insert("hidden".into(), json!(joined));
    }
    echo.insert("init-scale".into(), json!(init_scale));
    echo.insert("init-seed".into(), json!(init_seed));
    Ok((spec, echo))
}

fn resolve_train_config(
    targs: &TrainOptArgs,
    cfg: &ConfigFile,
) -> CliResult<(TrainConfig, u64, Echo)> {
    let seed = resolve_seed(targs.seed, cfg)?;
    let epochs = targs.epochs.or(cfg.usize("epochs")?).unwrap_or(10);
    let batch_size = targs.batch_size.or(cfg.usize("batch-size")?).unwrap_or(32);
    let checkpoint_every = targs
        .checkpoint_every
        .or(cfg.usize("checkpoint-every")?)
        .unwrap_or(1);
    let schedule_name = targs
        .lr_schedule
        .clone()
        .or(cfg.string("lr-schedule")?)
        .unwrap_or_else(|| "constant".into());
    let mut echo = Echo::new();
    let lr_schedule = match schedule_name.as_str() {
        "constant" => {
            let eta = targs.lr.or(cfg.f64("lr")?).unwrap_or(0.1);
            echo.insert("lr".into(), json!(eta));
            LrSchedule::Constant { eta }
        }
        "cosine" => {
            let eta_max = targs.lr_max.or(cfg.f64("lr-max")?).unwrap_or(0.1);
            let eta_min = targs.lr_min.or(cfg.f64("lr-min")?).unwrap_or(0.01);
            echo.insert("lr-max".into(), json!(eta_max));
            echo.insert("lr-min".into(), json!(eta_min));
            LrSchedule::Cosine { eta_max, eta_min }
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown lr schedule \"{other}\", expected constant or cosine"
            )))
        }
    };
    let train_config = TrainConfig {
        epochs,
        batch_size,
        lr_schedule,
        checkpoint_every,
        shuffle_seed: seed,
    };
    train_config.validate()?;
    echo.insert("lr-schedule".into(), json!(schedule_name));
    echo.insert("epochs".into(), json!(epochs));
    echo.insert("batch-size".into(), json!(batch_size));
    echo.insert("checkpoint-every".into(), json!(checkpoint_every));
    echo.insert("seed".into(), json!(seed));
    Ok((train_config, seed, echo))
}

fn merged(parts: Vec<Echo>) -> serde_json::Value {
    let mut all = Echo::new();
    for part in parts {
        all.extend(part);
    }
    serde_json::Value::Object(all)
}

macro_rules! echo_map {
    ($($key:literal : $value:expr),* $(,)?) => {{
        let mut m = Echo::new();
        $(m.insert($key.into(), json!($value));)*
        m
    }};
}

pub fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let out = required_path(args.out, &cfg, "out")?;
    let synth = SyntheticConfig {
        n_users: args.n_users.or(cfg.usize("n-users")?).unwrap_or(20),
        steps_per_user: args
            .steps_per_user
            .or(cfg.usize("steps-per-user")?)
            .unwrap_or(10),
        feature_dim: args.feature_dim.or(cfg.usize("feature-dim")?).unwrap_or(8),
        noise_rate: args.noise_rate.or(cfg.f64("noise-rate")?).unwrap_or(0.0),
        seed: resolve_seed(args.seed, &cfg)?,
    };
    let log = RunLog::start("synth");
    let d = make_synthetic(&synth)?;
    save_jsonl(&d, &out)?;
    println!(
        "wrote {} samples ({} flipped) to {}",
        d.len(),
        d.flipped_ids().len(),
        out.display()
    );
    log.finish(
        &out,
        merged(vec![echo_map! {
            "out": out,
            "n-users": synth.n_users,
            "steps-per-user": synth.steps_per_user,
            "feature-dim": synth.feature_dim,
            "noise-rate": synth.noise_rate,
            "seed": synth.seed,
        }]),
    )
}

pub fn cmd_split(args: SplitArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data = required_path(args.data, &cfg, "data")?;
    let out_train = required_path(args.out_train, &cfg, "out-train")?;
    let out_val = required_path(args.out_val, &cfg, "out-val")?;
    let out_test = required_path(args.out_test, &cfg, "out-test")?;
    require_file(&data, "dataset")?;
    let fractions = (
        args.train_frac.or(cfg.f64("train-frac")?).unwrap_or(0.8),
        args.val_frac.or(cfg.f64("val-frac")?).unwrap_or(0.1),
        args.test_frac.or(cfg.f64("test-frac")?).unwrap_or(0.1),
    );
    let seed = resolve_seed(args.seed, &cfg)?;

    let mut log = RunLog::start("split");
    log.hash_input(&data)?;
    let dataset = load_jsonl(&data)?;
    let (train_d, val_d, test_d) = tracseq::dataset::split(&dataset, fractions, seed)?;
    save_jsonl(&train_d, &out_train)?;
    save_jsonl(&val_d, &out_val)?;
    save_jsonl(&test_d, &out_test)?;
    println!(
        "split {} -> {} train / {} val / {} test",
        dataset.len(),
        train_d.len(),
        val_d.len(),
        test_d.len()
    );
    log.finish(
        &out_train,
        json!({
            "data": data,
            "out-train": out_train,
            "out-val": out_val,
            "out-test": out_test,
            "train-frac": fractions.0,
            "val-frac": fractions.1,
            "test-frac": fractions.2,
            "seed": seed,
        }),
    )
}

pub fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data = required_path(args.data, &cfg, "data")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_file(&data, "dataset")?;

    let mut log = RunLog::start("train");
    log.hash_input(&data)?;
    let dataset = load_jsonl(&data)?;
    let (train_config, seed, train_echo) = resolve_train_config(&args.train, &cfg)?;
    let (spec, model_echo) =
        resolve_model_spec(&args.model, &cfg, seed, dataset.feature_dim, dataset.num_classes)?;

    let store = train_to_dir(&spec, &dataset, &train_config, &out)?;
    println!(
        "run {}: {} checkpoints over {} steps -> {}",
        store.run_id,
        store.checkpoints.len(),
        store.final_time,
        out.display()
    );
    log.finish(
        &out,
        merged(vec![echo_map! { "data": data, "out": out }, model_echo, train_echo]),
    )
}

pub fn cmd_score(args: ScoreArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let ckpts = required_path(args.ckpts, &cfg, "ckpts")?;
    let train_path = required_path(args.train, &cfg, "train")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_dir(&ckpts, "checkpoint")?;
    require_file(&train_path, "training dataset")?;

    let estimator = args
        .estimator
        .clone()
        .or(cfg.string("estimator")?)
        .unwrap_or_else(|| "tracseq".into());
    let gamma = match estimator.as_str() {
        "tracincp" => 1.0,
        "tracseq" => args.gamma.or(cfg.f64("gamma")?).unwrap_or(0.9),
        other => {
            return Err(CliError::usage(format!(
                "unknown estimator \"{other}\", expected tracseq or tracincp"
            )))
        }
    };
    let axis_name = args
        .time_axis
        .clone()
        .or(cfg.string("time-axis")?)
        .unwrap_or_else(|| "step".into());
    let mut decay = DecayConfig::new(gamma).with_time_axis(parse_time_axis(&axis_name)?);
    let reference_time = args.reference_time.or(cfg.i64("reference-time")?);
    if let Some(t) = reference_time {
        decay = decay.with_reference_time(t);
    }

    let mut log = RunLog::start("score");
    log.hash_input(&ckpts)?;
    log.hash_input(&train_path)?;
    let store = load_store(&ckpts)?;
    let train_d = load_jsonl(&train_path)?;

    let mut eval_path_used: Option<PathBuf> = None;
    let records: Vec<InfluenceRecord> = if args.self_influence {
        self_influence_dataset(&store, &store.model_spec, &train_d, &decay)?
    } else {
        let eval_path = required_path(args.eval, &cfg, "eval")?;
        require_file(&eval_path, "eval dataset")?;
        log.hash_input(&eval_path)?;
        let eval_d = load_jsonl(&eval_path)?;
        let eval = EvalSet::from_dataset(&eval_d)?;
        eval_path_used = Some(eval_path);
        score_dataset(&store, &store.model_spec, &train_d, &eval, &decay)?
    };

    write_scores_csv(&records, &out)?;
    if let Some(bpath) = &args.breakdown {
        write_breakdown_jsonl(&records, bpath)?;
    }
    println!("scored {} samples -> {}", records.len(), out.display());
    let mut echo = echo_map! {
        "ckpts": ckpts,
        "train": train_path,
        "out": out,
        "estimator": estimator,
        "gamma": gamma,
        "time-axis": axis_name,
        "self-influence": args.self_influence,
    };
    if let Some(t) = reference_time {
        echo.insert("reference-time".into(), json!(t));
    }
    if let Some(b) = &args.breakdown {
        echo.insert("breakdown".into(), json!(b));
    }
    if let Some(e) = &eval_path_used {
        echo.insert("eval".into(), json!(e));
    }
    log.finish(&out, merged(vec![echo]))
}

pub fn cmd_prune(args: PruneArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let scores = required_path(args.scores, &cfg, "scores")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_file(&scores, "scores")?;

    let k_flag = args.k.or(cfg.usize("k")?);
    let k_frac = args.k_frac.or(cfg.f64("k-frac")?);
    let k_spec = match (k_flag, k_frac) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("--k and --k-frac are mutually exclusive"))
        }
        (Some(k), None) => KSpec::Count(k),
        (None, Some(f)) => KSpec::Fraction(f),
        (None, None) => KSpec::Fraction(0.3),
    };

    let mut log = RunLog::start("prune");
    log.hash_input(&scores)?;
    let records = tracseq::influence::read_scores_csv(&scores)?;
    let k = PruneConfig { k: k_spec }.resolve_k(records.len())?;
    let ids = select_topk(&records, k)?;
    std::fs::write(&out, ids.join("\n") + "\n")
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
    println!("kept top {k} of {} -> {}", records.len(), out.display());
    let mut echo = echo_map! { "scores": scores, "out": out, "resolved-k": k };
    match k_spec {
        KSpec::Count(c) => {
            echo.insert("k".into(), json!(c));
        }
        KSpec::Fraction(f) => {
            echo.insert("k-frac".into(), json!(f));
        }
    }
    log.finish(&out, merged(vec![echo]))
}

pub fn cmd_mix(args: MixArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data = required_path(args.data, &cfg, "data")?;
    let topk = required_path(args.topk, &cfg, "topk")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_file(&data, "dataset")?;
    require_file(&topk, "top-k id")?;

    let ratio = args.ratio.or(cfg.f64("ratio")?).unwrap_or(0.3);
    let seed = resolve_seed(args.seed, &cfg)?;

    let mut log = RunLog::start("mix");
    log.hash_input(&data)?;
    log.hash_input(&topk)?;
    let dataset = load_jsonl(&data)?;
    let total = args.total.or(cfg.usize("total")?).unwrap_or(dataset.len());
    let ids: Vec<String> = std::fs::read_to_string(&topk)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", topk.display())))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let plan = build_mix(&dataset, &ids, ratio, total, seed)?;
    plan.save_json(&out)?;
    println!(
        "mix plan: {} high-influence + {} random -> {}",
        plan.selected_high.len(),
        plan.selected_random.len(),
        out.display()
    );
    log.finish(
        &out,
        json!({ "data": data, "topk": topk, "out": out, "ratio": ratio, "total": total, "seed": seed }),
    )
}

pub fn cmd_render(args: RenderArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data = required_path(args.data, &cfg, "data")?;
    let plan_path = required_path(args.plan, &cfg, "plan")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_file(&data, "dataset")?;
    require_file(&plan_path, "mix plan")?;

    let task_name = args
        .task
        .clone()
        .or(cfg.string("task")?)
        .unwrap_or_else(|| "sentiment".into());
    let template = InstructionTemplate::new(parse_task(&task_name)?);

    let mut log = RunLog::start("render");
    log.hash_input(&data)?;
    log.hash_input(&plan_path)?;
    let dataset = load_jsonl(&data)?;
    let plan = MixPlan::load_json(&plan_path)?;
    export_instruct_jsonl(&plan, &dataset, |_| template, &out)?;
    println!("rendered {} lines -> {}", plan.total_n, out.display());
    log.finish(
        &out,
        json!({ "data": data, "plan": plan_path, "out": out, "task": task_name }),
    )
}

pub fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let ckpts = required_path(args.ckpts, &cfg, "ckpts")?;
    let data = required_path(args.data, &cfg, "data")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_dir(&ckpts, "checkpoint")?;
    require_file(&data, "dataset")?;

    let pos_class = args.pos_class.or(cfg.usize("pos-class")?).unwrap_or(1);
    let mode_name = args
        .f1_mode
        .clone()
        .or(cfg.string("f1-mode")?)
        .unwrap_or_else(|| "binary".into());
    let mode = match mode_name.as_str() {
        "binary" => F1Mode::Binary { pos_class },
        "macro" => F1Mode::Macro,
        other => {
            return Err(CliError::usage(format!(
                "unknown f1 mode \"{other}\", expected binary or macro"
            )))
        }
    };

    let mut log = RunLog::start("eval");
    log.hash_input(&ckpts)?;
    log.hash_input(&data)?;
    let store = load_store(&ckpts)?;
    let dataset = load_jsonl(&data)?;
    let params = store
        .final_params()
        .ok_or_else(|| CliError::usage("checkpoint store holds no checkpoints"))?;
    let report = evaluate_model(&store.model_spec, params, &dataset.samples, mode, pos_class)?;

    let json_text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&out, &json_text)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
    print!("{}", report.to_table());
    log.finish(
        &out,
        json!({ "ckpts": ckpts, "data": data, "out": out, "f1-mode": mode_name, "pos-class": pos_class }),
    )
}

pub fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let data = required_path(args.data, &cfg, "data")?;
    let eval_path = required_path(args.eval, &cfg, "eval")?;
    let out = required_path(args.out, &cfg, "out")?;
    require_file(&data, "dataset")?;
    require_file(&eval_path, "eval dataset")?;

    let mut log = RunLog::start("oracle");
    log.hash_input(&data)?;
    log.hash_input(&eval_path)?;
    let dataset = load_jsonl(&data)?;
    let eval_d = load_jsonl(&eval_path)?;
    let eval = EvalSet::from_dataset(&eval_d)?;
    let (train_config, seed, train_echo) = resolve_train_config(&args.train, &cfg)?;
    let (spec, model_echo) =
        resolve_model_spec(&args.model, &cfg, seed, dataset.feature_dim, dataset.num_classes)?;
    let cap = args.cap.or(cfg.usize("cap")?);

    let results = loo_oracle(&spec, &dataset, &eval, &train_config, cap)?;
    write_loo_csv(&results, &out)?;
    println!("{} leave-one-out retrainings -> {}", results.len(), out.display());
    let mut echo = echo_map! { "data": data, "eval": eval_path, "out": out };
    if let Some(c) = cap {
        echo.insert("cap".into(), json!(c));
    }
    log.finish(&out, merged(vec![echo, model_echo, train_echo]))
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let seed = resolve_seed(args.seed, &cfg)?;
    let feature_dim = args.feature_dim.or(cfg.usize("feature-dim")?).unwrap_or(8);
    let num_classes = args.num_classes.or(cfg.usize("num-classes")?).unwrap_or(2);
    let trials = args.trials.or(cfg.usize("trials")?).unwrap_or(100);
    let h = args.h.or(cfg.f64("h")?).unwrap_or(1e-6);
    let (base_spec, model_echo) =
        resolve_model_spec(&args.model, &cfg, seed, feature_dim, num_classes)?;

    let log = RunLog::start("gradcheck");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let spec = ModelSpec {
            init_seed: seed.wrapping_add(trial as u64),
            ..base_spec.clone()
        };
        let params = init_params(&spec)?;
        let features: Vec<f64> = (0..feature_dim)
            .map(|_| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * rng.random_range(0.2..1.5)
            })
            .collect();
        let z = Sample {
            id: format!("gradcheck-{trial}"),
            user_id: "gradcheck".into(),
            t: 0,
            features,
            label: trial % num_classes,
            text_fields: Default::default(),
            flipped: false,
        };
        let err = grad_check(&spec, &params, &z, h)?;
        worst = worst.max(err);
    }
    println!("gradcheck: {trials} trials, max relative error {worst:.3e}");

    if let Some(out) = &args.out {
        let report = merged(vec![
            model_echo,
            echo_map! {
                "feature-dim": feature_dim,
                "num-classes": num_classes,
                "trials": trials,
                "h": h,
                "seed": seed,
                "max-relative-error": worst,
            },
        ]);
        std::fs::write(out, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
        log.finish(out, report)?;
    }
    if let Some(limit) = args.fail_above {
        if worst > limit {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "gradient check failed: max relative error {worst:.3e} exceeds {limit:.3e}"
            )));
        }
    }
    Ok(())
}

pub fn cmd_validate_finetune(args: ValidateFinetuneArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let manifest_path = required_path(args.manifest, &cfg, "manifest")?;
    let manifest = validate_finetune_manifest(&manifest_path)?;
    let pretty = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    println!("{pretty}");
    if let Some(out) = &args.out {
        let mut log = RunLog::start("validate-finetune");
        log.hash_input(&manifest_path)?;
        std::fs::write(out, &pretty)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
        log.finish(out, json!({ "manifest": manifest_path, "out": out }))?;
    }
    Ok(())
}
