//! Building blocks shared by the subcommands: encoders, gateways, enrichment
//! runs and the train-then-test experiment behind `evaluate` and `ablate`.

use crate::CliError;
use grader_core::data::{EnrichedItem, ExamItem};
use grader_core::dataset::{split_dataset, DatasetSplit};
use grader_core::metrics::{report, MetricsReport};
use grader_core::model::{ablate, ablation_variants, predict_with_checkpoint, train_with, Component, EpochLog, ModelConfig, ModelError, TrainConfig, TrainOutcome};
use grader_core::text::{sentence_embedding, ProviderKind};
use grader_core::Encoder64;
use grader_llm::remote::RemoteEmbedding;
use grader_llm::{ChatProvider, Enricher, Gateway, GatewayConfig, Mode, OpenAiProvider, QuestionPool, ResponseCache, RuleBasedLlm, TemplateRegistry};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Duration;

pub fn build_encoder(config: &ModelConfig) -> Result<Encoder64, CliError> {
    match config.encoder.provider {
        ProviderKind::Hash => Encoder64::from_config(config).map_err(|e| CliError::Validation(e.to_string())),
        ProviderKind::Remote => {
            let url = config.encoder.remote_url.clone().ok_or_else(|| CliError::Validation("encoder.remote_url is required for the remote provider".into()))?;
            let remote = RemoteEmbedding::new(url, config.d(), Duration::from_secs(60)).map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(Encoder64::new(config.max_len(), Arc::new(remote)))
        }
    }
}

/// Gateway for the configured mode: the OpenAI-compatible client (live), the
/// cache alone (replay) or the rule-based stand-in (mock).
pub fn build_gateway(config: &GatewayConfig) -> Result<Arc<Gateway>, CliError> {
    let cache = match &config.cache_path {
        Some(p) => ResponseCache::open(p).map_err(|e| CliError::Validation(format!("cache {p}: {e}")))?,
        None if config.mode == Mode::Replay => return Err(CliError::Validation("replay mode needs llm.cache_path".into())),
        None => ResponseCache::in_memory(),
    };
    let provider: Option<Arc<dyn ChatProvider>> = match config.mode {
        Mode::Live => Some(Arc::new(
            OpenAiProvider::from_env(config.base_url.clone(), Duration::from_secs(config.timeout_secs)).map_err(|e| CliError::Validation(e.to_string()))?,
        )),
        Mode::Replay => None,
        Mode::Mock => Some(Arc::new(RuleBasedLlm::new())),
    };
    Gateway::new(config.clone(), TemplateRegistry::standard(), Arc::new(cache), provider)
        .map(Arc::new)
        .map_err(|e| CliError::Validation(e.to_string()))
}

pub fn question_pool(items: &[ExamItem], encoder: &Encoder64) -> Result<QuestionPool, CliError> {
    QuestionPool::from_items(items, |t| sentence_embedding(t, encoder.tokenizer(), encoder.provider())).map_err(|e| CliError::Validation(e.to_string()))
}

/// Enriches every item, failing on the first item that cannot be enriched.
/// Responses already obtained stay in the gateway cache.
pub async fn enrich_items(enricher: &Enricher, items: &[ExamItem]) -> Result<Vec<EnrichedItem>, CliError> {
    let results = enricher.enrich_all(items).await;
    let failed = results.iter().filter(|r| r.is_err()).count();
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        match r {
            Ok(e) => out.push(e),
            Err(e) => return Err(CliError::Runtime(format!("{failed} of {} items failed to enrich; first: {e}", items.len()))),
        }
    }
    Ok(out)
}

pub fn split(items: Vec<EnrichedItem>, seed: u64) -> Result<DatasetSplit<EnrichedItem>, CliError> {
    split_dataset(items, seed).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Numeric { .. } | ModelError::Io(_) => CliError::Runtime(e.to_string()),
        ModelError::Encode(ref inner) if matches!(inner, grader_core::text::EncodeError::Provider(_)) => CliError::Runtime(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

/// Scores `items` with a checkpoint and compares against their labels.
pub fn test_report(items: &[EnrichedItem], outcome: &TrainOutcome, encoder: &Encoder64) -> Result<MetricsReport, CliError> {
    let results = predict_with_checkpoint(items, &outcome.checkpoint, encoder).map_err(model_error)?;
    let preds: Vec<f64> = results.iter().map(|r| r.predicted_score).collect();
    let labels = items
        .iter()
        .map(|e| e.item.score().ok_or_else(|| CliError::Validation(format!("item {:?} has no label", e.item.id))))
        .collect::<Result<Vec<f64>, _>>()?;
    report(&preds, &labels).map_err(|e| CliError::Validation(e.to_string()))
}

/// Trains on the train split, selects on validation and reports on test.
pub fn fit_and_test(
    split: &DatasetSplit<EnrichedItem>,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    encoder: &Encoder64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(TrainOutcome, MetricsReport), CliError> {
    let outcome = train_with(&split.train, &split.validation, tcfg, mcfg, encoder, on_epoch).map_err(model_error)?;
    let report = test_report(&split.test, &outcome, encoder)?;
    Ok((outcome, report))
}

/// `all` or a comma list of component codes; the full model always comes first.
pub fn parse_variants(list: &str) -> Result<Vec<(String, Vec<Component>)>, CliError> {
    let all = ablation_variants();
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(all);
    }
    let mut picked = vec![all[0].clone()];
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if part.eq_ignore_ascii_case("full") {
            continue;
        }
        let c = Component::parse(part).ok_or_else(|| CliError::Validation(format!("unknown ablation variant {part:?}")))?;
        let row = all.iter().find(|(_, cs)| cs == &[c]).expect("every component has a row").clone();
        if !picked.contains(&row) {
            picked.push(row);
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Mean over `runs`.
    pub mse: f64,
    pub acc: f64,
    pub f1: f64,
    pub qwk: f64,
    pub runs: usize,
    /// Per-run test MSE, in seed order.
    pub mse_runs: Vec<f64>,
}

/// Trains every variant once per seed on the same enriched items. Seed `s`
/// fixes the split, the shuffling and the initialization for all variants.
pub fn ablation(
    items: &[EnrichedItem],
    base: &ModelConfig,
    tcfg: &TrainConfig,
    variants: &[(String, Vec<Component>)],
    seeds: &[u64],
    encoder: &Encoder64,
) -> Result<Vec<AblationRow>, CliError> {
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|(name, _)| AblationRow { variant: name.clone(), mse: 0.0, acc: 0.0, f1: 0.0, qwk: 0.0, runs: 0, mse_runs: Vec::new() })
        .collect();
    for &seed in seeds {
        let split = split(items.to_vec(), seed)?;
        for ((name, disabled), row) in variants.iter().zip(rows.iter_mut()) {
            let mcfg = ModelConfig { seed, ..ablate(base, disabled).map_err(model_error)? };
            let t = TrainConfig { seed, ..tcfg.clone() };
            let (_, r) = fit_and_test(&split, &mcfg, &t, encoder, |_| {})?;
            log::info!("seed {seed} {name}: mse {:.4} qwk {:.3}", r.mse, r.qwk);
            row.mse_runs.push(r.mse);
            row.mse += r.mse;
            row.acc += r.acc;
            row.f1 += r.f1;
            row.qwk += r.qwk;
            row.runs += 1;
        }
    }
    for row in &mut rows {
        let n = row.runs.max(1) as f64;
        row.mse /= n;
        row.acc /= n;
        row.f1 /= n;
        row.qwk /= n;
    }
    Ok(rows)
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<10} {:>8} {:>8} {:>8} {:>8}\n", "variant", "MSE", "ACC", "F1", "QWK");
    for r in rows {
        s.push_str(&format!("{:<10} {:>8.4} {:>8.3} {:>8.3} {:>8.3}\n", r.variant, r.mse, r.acc, r.f1, r.qwk));
    }
    s
}

/// A multi-threaded runtime for the async parts of a command.
pub fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Runtime(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_lists() {
        assert_eq!(parse_variants("all").unwrap().len(), 6);
        let v = parse_variants("cross, KPM,full").unwrap();
        assert_eq!(v.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["Full", "w/o Cross", "w/o KPM"]);
        assert!(parse_variants("kpm,nope").is_err());
    }

    #[test]
    fn table_has_header_and_rows() {
        let row = AblationRow { variant: "Full".into(), mse: 0.01, acc: 1.0, f1: 1.0, qwk: 0.9, runs: 1, mse_runs: vec![0.01] };
        let t = render_table(&[row]);
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().nth(1).unwrap().starts_with("Full"));
    }
}
