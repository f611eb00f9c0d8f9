use crate::config::Config;
use crate::experiment::{
    ablation, build_encoder, build_gateway, enrich_items, fit_and_test, model_error, parse_variants, question_pool, render_table, runtime, split,
};
use crate::{AblateArgs, Cli, CliError, Command, EnrichArgs, EvaluateArgs, GradeArgs, ServeArgs, SplitPart, TrainArgs, TrainOverrides};
use grader_core::data::EnrichedItem;
use grader_core::dataset::{load_dataset, load_enriched, split_dataset, write_enriched, write_predictions, DatasetError};
use grader_core::metrics::evaluate;
use grader_core::model::{load_checkpoint, predict_with_checkpoint, save_checkpoint, Checkpoint};
use grader_llm::Enricher;
use grader_service::{Grader, Service};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Enrich(a) => enrich(config, a),
        Command::Train(a) => train(config, a),
        Command::Evaluate(a) => evaluate_cmd(config, a),
        Command::Grade(a) => grade(config, a),
        Command::Ablate(a) => ablate_cmd(config, a),
        Command::Serve(a) => serve(config, a),
    }
}

fn input_error(path: &Path) -> impl FnOnce(DatasetError) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}

fn output_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(output_error(path))
}

/// Prints the machine-readable summary of a run.
fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn apply(config: &mut Config, o: &TrainOverrides) {
    if let Some(e) = o.epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = o.lr {
        config.train.learning_rate = lr;
    }
    if let Some(s) = o.seed {
        config.train.seed = s;
        config.model.seed = s;
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// The encoder a checkpoint was trained with. A remote endpoint may be
/// supplied by the config when the checkpoint does not name one.
fn checkpoint_encoder(ckpt: &Checkpoint, config: &Config) -> Result<grader_core::Encoder64, CliError> {
    let mut mcfg = ckpt.config.clone();
    if mcfg.encoder.remote_url.is_none() {
        mcfg.encoder.remote_url = config.encoder.remote_url.clone();
    }
    build_encoder(&mcfg)
}

fn enrich(mut config: Config, a: EnrichArgs) -> Result<(), CliError> {
    if let Some(m) = a.mode {
        config.llm.mode = m;
    }
    if let Some(c) = &a.cache {
        config.llm.cache_path = Some(c.display().to_string());
    }
    let items = load_dataset(&a.input).map_err(input_error(&a.input))?;
    let pool_items = match &a.pool {
        Some(p) => load_dataset(p).map_err(input_error(p))?,
        None => match split_dataset(items.clone(), config.train.seed) {
            Ok(s) => s.train,
            Err(DatasetError::TooSmall(_)) => items.clone(),
            Err(e) => return Err(input_error(&a.input)(e)),
        },
    };
    let encoder = build_encoder(&config.model_config())?;
    let pool = question_pool(&pool_items, &encoder)?;
    let gateway = build_gateway(&config.llm)?;
    let enricher = Enricher::new(gateway.clone(), encoder, Arc::new(pool));
    let enriched = runtime()?.block_on(enrich_items(&enricher, &items))?;
    write_enriched(&enriched, &a.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    summary(serde_json::json!({
        "command": "enrich",
        "items": enriched.len(),
        "out": a.out,
        "enrichment_version": enricher.version(),
        "upstream_calls": gateway.upstream_calls(),
    }));
    Ok(())
}

fn default_log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("epochs.jsonl")
}

fn train(mut config: Config, a: TrainArgs) -> Result<(), CliError> {
    apply(&mut config, &a.train);
    let items = load_enriched(&a.input).map_err(input_error(&a.input))?;
    let mcfg = config.model_config();
    let encoder = build_encoder(&mcfg)?;
    let parts = split(items, config.train.seed)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.ckpt));
    let mut log = BufWriter::new(File::create(&log_path).map_err(output_error(&log_path))?);
    let mut log_err = None;
    let (outcome, test) = fit_and_test(&parts, &mcfg, &config.train, &encoder, |e| {
        if let Err(err) = writeln!(log, "{}", serde_json::to_string(e).expect("serializable")) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(output_error(&log_path)(e));
    }
    log.flush().map_err(output_error(&log_path))?;
    save_checkpoint(&outcome.checkpoint, &a.ckpt).map_err(model_error)?;
    let m = &outcome.checkpoint.metadata;
    summary(serde_json::json!({
        "command": "train",
        "checkpoint": a.ckpt,
        "epoch_log": log_path,
        "model_version": outcome.checkpoint.model_version,
        "best_epoch": m.epoch,
        "train_mse": m.train_mse,
        "val_mse": m.val_mse,
        "test_mse": test.mse,
        "test_qwk": test.qwk,
    }));
    Ok(())
}

fn evaluate_cmd(config: Config, a: EvaluateArgs) -> Result<(), CliError> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let items = load_enriched(&a.input).map_err(input_error(&a.input))?;
    let scored: Vec<EnrichedItem> = match a.split {
        SplitPart::All => items,
        part => {
            // The checkpoint's training seed reproduces its split.
            let s = split(items, ckpt.metadata.seed)?;
            match part {
                SplitPart::Train => s.train,
                SplitPart::Validation => s.validation,
                _ => s.test,
            }
        }
    };
    let encoder = checkpoint_encoder(&ckpt, &config)?;
    let results = predict_with_checkpoint(&scored, &ckpt, &encoder).map_err(model_error)?;
    let exam: Vec<_> = scored.iter().map(|e| e.item.clone()).collect();
    let report = evaluate(&results, &exam).map_err(|e| CliError::Validation(e.to_string()))?;
    write_json(&a.report, &report)?;
    summary(serde_json::json!({
        "command": "evaluate", "report": a.report, "n": report.n,
        "mse": report.mse, "acc": report.acc, "f1": report.f1, "qwk": report.qwk,
    }));
    Ok(())
}

fn grade(config: Config, a: GradeArgs) -> Result<(), CliError> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let items = load_enriched(&a.input).map_err(input_error(&a.input))?;
    let encoder = checkpoint_encoder(&ckpt, &config)?;
    let results = predict_with_checkpoint(&items, &ckpt, &encoder).map_err(model_error)?;
    write_predictions(&results, &a.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    summary(serde_json::json!({ "command": "grade", "items": results.len(), "out": a.out, "model_version": ckpt.model_version }));
    Ok(())
}

fn ablate_cmd(mut config: Config, a: AblateArgs) -> Result<(), CliError> {
    apply(&mut config, &a.train);
    if a.seeds == 0 {
        return Err(CliError::Validation("--seeds must be at least 1".into()));
    }
    let variants = parse_variants(&a.variants)?;
    let items = load_enriched(&a.input).map_err(input_error(&a.input))?;
    let mcfg = config.model_config();
    let encoder = build_encoder(&mcfg)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|k| config.train.seed + k).collect();
    let rows = ablation(&items, &mcfg, &config.train, &variants, &seeds, &encoder)?;
    print!("{}", render_table(&rows));
    write_json(&a.out, &serde_json::json!({ "seeds": seeds, "rows": rows }))?;
    Ok(())
}

fn serve(mut config: Config, a: ServeArgs) -> Result<(), CliError> {
    if let Some(p) = a.port {
        config.service.port = p;
    }
    if let Some(d) = &a.data_dir {
        config.service.data_dir = d.display().to_string();
    }
    if let Some(c) = &a.ckpt {
        config.service.checkpoint = Some(c.display().to_string());
    }
    let rt = runtime()?;
    let grader = match &config.service.checkpoint {
        Some(path) => {
            let ckpt = load_ckpt(Path::new(path))?;
            let encoder = checkpoint_encoder(&ckpt, &config)?;
            let gateway = build_gateway(&config.llm)?;
            Some(Grader::with_encoder(&ckpt, gateway, encoder).map_err(model_error)?)
        }
        None => {
            log::warn!("no checkpoint configured; submissions will be refused");
            None
        }
    };
    rt.block_on(async {
        let service = Service::start(config.service.clone(), grader).map_err(|e| CliError::Runtime(e.to_string()))?;
        service.serve().await.map_err(|e| CliError::Runtime(format!("serve: {e}")))
    })
}
