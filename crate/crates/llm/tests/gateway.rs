use grader_llm::{
    ChatProvider, Gateway, GatewayConfig, LlmError, MockProvider, Mode, OpenAiProvider, ProviderError, ResponseCache, TemplateRegistry,
};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

fn config(mode: Mode) -> GatewayConfig {
    GatewayConfig { mode, backoff_ms: 1, ..Default::default() }
}

fn gateway(mode: Mode, provider: Option<MockProvider>, cache: Arc<ResponseCache>) -> Gateway {
    Gateway::new(config(mode), TemplateRegistry::standard(), cache, provider.map(|p| Arc::new(p) as Arc<dyn ChatProvider>)).unwrap()
}

fn lge(gw: &Gateway, answer: &str) -> grader_llm::LlmRequest {
    gw.request("lge").var("question", "Q").var("reference", "R").var("answer", answer)
}

const GOOD: &str = "```json\n{\"rating\": \"good\", \"strengths\": [\"clear\"], \"weaknesses\": []}\n```";

#[tokio::test]
async fn second_identical_request_is_a_cache_hit() {
    let mock = MockProvider::canned(GOOD);
    let gw = gateway(Mode::Live, Some(mock.clone()), Arc::new(ResponseCache::in_memory()));
    let first = gw.complete(&lge(&gw, "A")).await.unwrap();
    let second = gw.complete(&lge(&gw, "A")).await.unwrap();
    assert!(!first.cache_hit && second.cache_hit);
    assert_eq!(first.text, second.text);
    assert_eq!(second.parsed.as_ref().unwrap()["rating"], "good");
    assert_eq!(mock.calls(), 1);
    gw.complete(&lge(&gw, "B")).await.unwrap();
    assert_eq!(mock.calls(), 2);
}

#[tokio::test]
async fn canned_text_without_schema() {
    let mut registry = TemplateRegistry::standard();
    registry.register(grader_llm::Template {
        id: "echo".into(),
        version: "v1".into(),
        system: "s".into(),
        body: "say {{x}}".into(),
        schema: None,
    });
    let gw = Gateway::new(config(Mode::Mock), registry, Arc::new(ResponseCache::in_memory()), Some(Arc::new(MockProvider::canned("ok")))).unwrap();
    let r = gw.complete(&gw.request("echo").var("x", "hi")).await.unwrap();
    assert_eq!(r.text, "ok");
    assert!(r.parsed.is_none());
}

#[tokio::test]
async fn replay_miss_and_replay_hit() {
    let cache = Arc::new(ResponseCache::in_memory());
    let recorder = gateway(Mode::Mock, Some(MockProvider::canned(GOOD)), cache.clone());
    recorder.complete(&lge(&recorder, "A")).await.unwrap();

    let replay = gateway(Mode::Replay, None, cache);
    let hit = replay.complete(&lge(&replay, "A")).await.unwrap();
    assert!(hit.cache_hit);
    assert!(matches!(replay.complete(&lge(&replay, "other")).await, Err(LlmError::ReplayMiss(_))));
    assert_eq!(replay.upstream_calls(), 0);
}

#[tokio::test]
async fn transient_failures_are_retried_twice() {
    let attempts = Arc::new(AtomicUsize::new(0));
    let a = attempts.clone();
    let flaky = MockProvider::new(move |_| {
        if a.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(ProviderError::Transient("503".into()))
        } else {
            Ok(GOOD.into())
        }
    });
    let gw = gateway(Mode::Live, Some(flaky.clone()), Arc::new(ResponseCache::in_memory()));
    assert!(gw.complete(&lge(&gw, "A")).await.is_ok());
    assert_eq!(flaky.calls(), 3);

    let down = MockProvider::new(|_| Err(ProviderError::Transient("timeout".into())));
    let gw = gateway(Mode::Live, Some(down.clone()), Arc::new(ResponseCache::in_memory()));
    assert!(matches!(gw.complete(&lge(&gw, "A")).await, Err(LlmError::Upstream(_))));
    assert_eq!(down.calls(), 3);

    let fatal = MockProvider::new(|_| Err(ProviderError::Fatal("401".into())));
    let gw = gateway(Mode::Live, Some(fatal.clone()), Arc::new(ResponseCache::in_memory()));
    assert!(matches!(gw.complete(&lge(&gw, "A")).await, Err(LlmError::Upstream(_))));
    assert_eq!(fatal.calls(), 1);
}

#[tokio::test]
async fn unparseable_output_gets_one_repair_attempt() {
    let cache = Arc::new(ResponseCache::in_memory());
    let repaired = MockProvider::new(|c| Ok(if c.repair { GOOD.into() } else { "I think it is good.".into() }));
    let gw = gateway(Mode::Live, Some(repaired.clone()), cache.clone());
    let r = gw.complete(&lge(&gw, "A")).await.unwrap();
    assert_eq!(r.parsed.unwrap()["rating"], "good");
    assert_eq!(repaired.calls(), 2);
    // The repaired text is what gets cached.
    assert!(gw.complete(&lge(&gw, "A")).await.unwrap().cache_hit);

    let hopeless = MockProvider::canned("{\"rating\": 3}");
    let gw = gateway(Mode::Live, Some(hopeless.clone()), Arc::new(ResponseCache::in_memory()));
    match gw.complete(&lge(&gw, "A")).await {
        Err(LlmError::MalformedOutput { raw, .. }) => assert_eq!(raw, "{\"rating\": 3}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(hopeless.calls(), 2);
}

#[tokio::test]
async fn request_contract_errors() {
    let gw = gateway(Mode::Mock, Some(MockProvider::canned(GOOD)), Arc::new(ResponseCache::in_memory()));
    assert!(matches!(gw.complete(&gw.request("xyz")).await, Err(LlmError::UnknownTemplate(_))));
    let missing = gw.request("lge").var("question", "Q");
    assert_eq!(gw.complete(&missing).await, Err(LlmError::MissingVariable("reference".into())));
    let mut hot = lge(&gw, "A");
    hot.temperature = -1.0;
    assert!(matches!(gw.complete(&hot).await, Err(LlmError::InvalidRequest(_))));
    assert!(Gateway::new(config(Mode::Live), TemplateRegistry::standard(), Arc::new(ResponseCache::in_memory()), None).is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_calls_are_bounded() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    struct Probe {
        current: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }
    #[async_trait::async_trait]
    impl ChatProvider for Probe {
        async fn complete(&self, _: &grader_llm::ProviderCall) -> Result<String, ProviderError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(20)).await;
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(GOOD.into())
        }
    }
    let cfg = GatewayConfig { parallelism: 3, ..config(Mode::Live) };
    let probe = Probe { current: current.clone(), peak: peak.clone() };
    let gw = Arc::new(Gateway::new(cfg, TemplateRegistry::standard(), Arc::new(ResponseCache::in_memory()), Some(Arc::new(probe))).unwrap());
    let tasks: Vec<_> = (0..12)
        .map(|i| {
            let gw = gw.clone();
            tokio::spawn(async move { gw.complete(&lge(&gw, &format!("answer {i}"))).await })
        })
        .collect();
    for t in tasks {
        t.await.unwrap().unwrap();
    }
    assert_eq!(peak.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn cache_file_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("llm-cache.jsonl");
    {
        let cache = Arc::new(ResponseCache::open(&path).unwrap());
        let gw = gateway(Mode::Mock, Some(MockProvider::canned(GOOD)), cache);
        gw.complete(&lge(&gw, "A")).await.unwrap();
    }
    let line = std::fs::read_to_string(&path).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    for key in ["digest", "request_summary", "response_text", "model", "created_at"] {
        assert!(record.get(key).is_some(), "{key}");
    }
    let replay = gateway(Mode::Replay, None, Arc::new(ResponseCache::open(&path).unwrap()));
    assert!(replay.complete(&lge(&replay, "A")).await.unwrap().cache_hit);
}

/// Round trip through the OpenAI wire format against a local stub server.
#[tokio::test(flavor = "multi_thread")]
async fn openai_compatible_provider() {
    use axum::routing::post;
    use axum::Json;
    let app = axum::Router::new().route(
        "/v1/chat/completions",
        post(|headers: axum::http::HeaderMap, Json(body): Json<serde_json::Value>| async move {
            assert_eq!(headers["authorization"], "Bearer secret");
            assert_eq!(body["temperature"], 0.0);
            assert_eq!(body["messages"][1]["role"], "user");
            Json(serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": GOOD } }] }))
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let provider = OpenAiProvider::new(format!("http://{addr}/v1/"), Some("secret".into()), Duration::from_secs(5)).unwrap();
    let gw = Gateway::new(config(Mode::Live), TemplateRegistry::standard(), Arc::new(ResponseCache::in_memory()), Some(Arc::new(provider))).unwrap();
    let r = gw.complete(&lge(&gw, "A")).await.unwrap();
    assert_eq!(r.parsed.unwrap()["strengths"][0], "clear");

    let dead = OpenAiProvider::new("http://127.0.0.1:9/v1", None, Duration::from_millis(200)).unwrap();
    let gw = Gateway::new(config(Mode::Live), TemplateRegistry::standard(), Arc::new(ResponseCache::in_memory()), Some(Arc::new(dead))).unwrap();
    assert!(matches!(gw.complete(&lge(&gw, "A")).await, Err(LlmError::Upstream(_))));
    assert_eq!(gw.upstream_calls(), 3);
}
