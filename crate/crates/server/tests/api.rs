use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use alcoref::acquisition::{score_pool, Strategy};
use alcoref::active_loop::{oracle_label, select_with_read_budget, ActiveLearner, Label, ReadBudget, Verdict};
use alcoref::corpus::{synth_generate, Document, FeatureConfig, Featurizer, Span, SynthConfig};
use alcoref::scorer::{Hyperparams, ModelDims, ModelParams};
use alcoref_server::{router, serve, session_stats, AppState, LabelAck, QueryPayload, SessionCreated, StatsReport};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn target() -> Vec<Document> {
    synth_generate(&SynthConfig {
        n_docs: 4,
        tokens_per_doc: 40,
        vocab_shift: 0.5,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn learner() -> ActiveLearner {
    let fc = FeatureConfig {
        hashed_dim: 64,
        max_width: 4,
    };
    let f = Featurizer::hashed(fc);
    let dims = ModelDims {
        feature_dim: f.dim(),
        repr_dim: 8,
        hidden_dim: 8,
    };
    let hyper = Hyperparams {
        max_epochs: 2,
        ..Default::default()
    };
    let test = synth_generate(&SynthConfig {
        n_docs: 2,
        tokens_per_doc: 30,
        vocab_shift: 0.5,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    ActiveLearner::new(ModelParams::init(dims, hyper, fc), f, hyper, target(), test).unwrap()
}

/// A clock that reads `offset` seconds past a fixed instant.
fn manual_clock() -> (Arc<AtomicI64>, alcoref_server::Clock) {
    let offset = Arc::new(AtomicI64::new(0));
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap();
    let o = offset.clone();
    (offset, Arc::new(move || base + chrono::Duration::seconds(o.load(Ordering::SeqCst))))
}

fn app() -> (Router, AppState) {
    let state = AppState::new(learner(), 7);
    (router(state.clone()), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, mode: Value, k: usize) -> SessionCreated {
    let (status, body) = call(
        app,
        "POST",
        "/session",
        Some(json!({"annotator_id": "ann", "mode": mode, "strategy": "ment-ent", "k": k})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    serde_json::from_value(body).unwrap()
}

fn gold(span: &Span) -> Document {
    target().into_iter().find(|d| d.doc_id == span.doc_id).unwrap()
}

fn oracle(span: &Span) -> Verdict {
    oracle_label(&gold(span), span, DateTime::UNIX_EPOCH).unwrap().verdict
}

async fn post_label(app: &Router, session: &str, query: &Span, verdict: &Verdict) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        &format!("/session/{session}/label"),
        Some(json!({"query": query, "verdict": verdict})),
    )
    .await
}

#[tokio::test]
async fn health_reports_version() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn few_docs_queue_matches_budgeted_selection() {
    let (app, _) = app();
    let created = create(&app, json!("few_docs"), 6).await;
    assert_eq!(created.m, ReadBudget::Docs(1));
    let l = learner();
    let scored = score_pool(
        Strategy::MentEnt,
        l.model(&l.source),
        &l.target,
        &Default::default(),
        &mut rand::thread_rng(),
    )
    .unwrap();
    let expected = select_with_read_budget(&scored, 6, ReadBudget::Docs(1)).unwrap();
    assert_eq!(created.queue, expected);
    let docs: std::collections::BTreeSet<&str> = created.queue.iter().map(|s| s.doc_id.as_str()).collect();
    assert_eq!(docs.len(), 1);
}

#[tokio::test]
async fn many_docs_spreads_one_span_per_document() {
    let (app, _) = app();
    let created = create(&app, json!("many_docs"), 10).await;
    assert_eq!(created.m, ReadBudget::Unconstrained);
    assert_eq!(created.queue.len(), 4);
    let docs: std::collections::BTreeSet<&str> = created.queue.iter().map(|s| s.doc_id.as_str()).collect();
    assert_eq!(docs.len(), 4);

    let custom = create(&app, json!({"custom": {"k_per_doc": 2}}), 10).await;
    assert_eq!(custom.queue.len(), 8);
}

#[tokio::test]
async fn invalid_session_requests_are_rejected() {
    let (app, _) = app();
    for body in [
        json!({"annotator_id": "a", "mode": "few_docs", "strategy": "ment-ent", "k": 0}),
        json!({"annotator_id": "a", "mode": {"custom": {"k_per_doc": 0}}, "strategy": "ment-ent", "k": 3}),
    ] {
        let (status, _) = call(&app, "POST", "/session", Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn next_returns_active_query_with_preceding_candidates() {
    let (app, _) = app();
    let created = create(&app, json!("few_docs"), 5).await;
    let (status, body) = call(&app, "GET", &format!("/session/{}/next", created.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let payload: QueryPayload = serde_json::from_value(body).unwrap();
    assert_eq!(payload.position, 0);
    assert_eq!(payload.remaining, created.queue.len());
    assert_eq!(payload.query, created.queue[0]);
    let doc = gold(&payload.query);
    assert_eq!(payload.tokens, doc.tokens);
    assert_eq!(payload.sentence_starts, doc.sentence_starts);
    assert!(payload.candidates.iter().all(|c| c.precedes(&payload.query)));
}

#[tokio::test]
async fn labeling_walks_the_queue() {
    let (app, state) = app();
    let created = create(&app, json!("few_docs"), 5).await;
    let id = &created.session_id;
    for (i, query) in created.queue.iter().enumerate() {
        let verdict = oracle(query);
        let (status, body) = post_label(&app, id, query, &verdict).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let ack: LabelAck = serde_json::from_value(body).unwrap();
        assert_eq!(ack.position, i);
        assert_eq!(ack.remaining, created.queue.len() - i - 1);

        let (status, again) = post_label(&app, id, query, &verdict).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(serde_json::from_value::<LabelAck>(again).unwrap(), ack);
    }
    assert_eq!(state.pool().len(), created.queue.len());
    let (status, body) = call(&app, "GET", &format!("/session/{id}/next"), None).await;
    assert_eq!((status, body), (StatusCode::NO_CONTENT, Value::Null));

    let (status, _) = post_label(&app, id, &created.queue[0], &Verdict::NotAMention).await;
    let expected = if oracle(&created.queue[0]) == Verdict::NotAMention {
        StatusCode::OK
    } else {
        StatusCode::CONFLICT
    };
    assert_eq!(status, expected);
}

#[tokio::test]
async fn protocol_violations() {
    let (app, state) = app();
    let created = create(&app, json!("few_docs"), 5).await;
    let id = &created.session_id;
    let (head, second) = (&created.queue[0], &created.queue[1]);

    let (status, body) = post_label(&app, id, second, &Verdict::NotAMention).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflict");

    let later = Span::new(head.doc_id.clone(), head.end, head.end + 1);
    let (status, _) = post_label(&app, id, head, &Verdict::Antecedent { span: later }).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = post_label(&app, id, head, &Verdict::Antecedent { span: head.clone() }).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(state.pool().is_empty());

    for uri in ["/session/nope/next", "/session/nope/stats", "/document/nope"] {
        let (status, _) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, _) = post_label(&app, "nope", head, &Verdict::NotAMention).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Recovers after the rejections.
    let (status, _) = post_label(&app, id, head, &oracle(head)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn document_endpoint_hides_gold() {
    let (app, _) = app();
    let doc = &target()[0];
    let (status, body) = call(&app, "GET", &format!("/document/{}", doc.doc_id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tokens"], json!(doc.tokens));
    assert!(body.get("gold_clusters").is_none());
}

#[tokio::test]
async fn stats_track_throughput() {
    let (offset, clock) = manual_clock();
    let state = AppState::with_clock(learner(), 7, clock);
    let app = router(state);
    let created = create(&app, json!("few_docs"), 5).await;
    let id = &created.session_id;

    let (_, body) = call(&app, "GET", &format!("/session/{id}/stats"), None).await;
    let empty: StatsReport = serde_json::from_value(body).unwrap();
    assert_eq!(empty.stats.labels, 0);
    assert_eq!(empty.stats.labels_in_window, 0);
    assert_eq!(empty.stats.document_switches, 0);
    assert_eq!(empty.stats.mean_inter_arrival_seconds, 0.0);

    for (i, query) in created.queue.iter().take(3).enumerate() {
        offset.store(60 * i as i64, Ordering::SeqCst);
        let (status, _) = post_label(&app, id, query, &oracle(query)).await;
        assert_eq!(status, StatusCode::OK);
    }
    offset.store(26 * 60, Ordering::SeqCst);
    let (status, _) = post_label(&app, id, &created.queue[3], &oracle(&created.queue[3])).await;
    assert_eq!(status, StatusCode::OK);

    let (_, body) = call(&app, "GET", &format!("/session/{id}/stats"), None).await;
    assert!(body["started_at"].as_str().unwrap().ends_with(".000Z"));
    let report: StatsReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.stats.labels, 4);
    assert_eq!(report.stats.labels_in_window, 3);
    assert_eq!(report.stats.inter_arrival_seconds, vec![60.0, 60.0, 1440.0]);
    assert_eq!(report.stats.document_switches, 0);
}

#[test]
fn stats_examples() {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let label = |doc: &str, secs: i64| Label {
        query: Span::new(doc, 0, 1),
        verdict: Verdict::NotAMention,
        timestamp: t0 + chrono::Duration::seconds(secs),
        annotator_id: "a".into(),
    };
    let s = session_stats(t0, &[label("a", 0), label("a", 60), label("b", 120)]);
    assert_eq!(s.document_switches, 1);
    assert_eq!(s.documents, 2);
    assert_eq!(s.mean_inter_arrival_seconds, 60.0);
    assert_eq!(session_stats(t0, &[]).labels, 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicate_posts_store_one_label() {
    let (app, state) = app();
    let created = create(&app, json!("few_docs"), 5).await;
    let head = created.queue[0].clone();
    let verdict = oracle(&head);
    let mut tasks = Vec::new();
    for _ in 0..100 {
        let (app, id, head, verdict) = (app.clone(), created.session_id.clone(), head.clone(), verdict.clone());
        tasks.push(tokio::spawn(async move { post_label(&app, &id, &head, &verdict).await }));
    }
    let mut acks = Vec::new();
    for t in tasks {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        acks.push(body);
    }
    assert!(acks.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(state.pool().len(), 1);
    assert_eq!(state.session_snapshot(&created.session_id).await.unwrap().completed.len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_lose_no_updates() {
    let (app, state) = app();
    let created = create(&app, json!("many_docs"), 4).await;
    let queue = created.queue.clone();
    let mut tasks = Vec::new();
    for i in 0..100 {
        let (app, id) = (app.clone(), created.session_id.clone());
        let query = queue[i % queue.len()].clone();
        let verdict = oracle(&query);
        tasks.push(tokio::spawn(async move { post_label(&app, &id, &query, &verdict).await }));
    }
    let mut ok = 0;
    for t in tasks {
        let (status, _) = t.await.unwrap();
        assert!(status == StatusCode::OK || status == StatusCode::CONFLICT, "{status}");
        ok += usize::from(status == StatusCode::OK);
    }
    let session = state.session_snapshot(&created.session_id).await.unwrap();
    let done: Vec<&Span> = session.completed.iter().map(|l| &l.query).collect();
    assert_eq!(done, queue[..session.completed.len()].iter().collect::<Vec<_>>());
    assert_eq!(state.pool().len(), session.completed.len());
    assert!(ok >= session.completed.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cycle_advance_retrains_in_background() {
    let (app, state) = app();
    let (status, _) = call(&app, "POST", "/cycle/advance", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let created = create(&app, json!("few_docs"), 4).await;
    let id = &created.session_id;
    for q in &created.queue[..2] {
        post_label(&app, id, q, &oracle(q)).await;
    }
    let (status, body) = call(&app, "POST", "/cycle/advance", None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["n_labels"], 2);
    assert_eq!(body["training"], true);

    // Labeling continues while training runs.
    let q = &created.queue[2];
    let (status, _) = post_label(&app, id, q, &oracle(q)).await;
    assert_eq!(status, StatusCode::OK);

    let mut cycle = 0;
    for _ in 0..600 {
        let (_, body) = call(&app, "GET", "/cycle", None).await;
        if body["training"] == false {
            assert!(body["last_error"].is_null(), "{body}");
            cycle = body["cycle"].as_u64().unwrap();
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(cycle, 1);
    let next = create(&app, json!("few_docs"), 3).await;
    assert_eq!(next.cycle, 1);
    let pool = state.pool();
    assert!(next.queue.iter().all(|s| !pool.contains(s)));
}

#[tokio::test]
async fn sessions_survive_persist_and_restore() {
    let (app, state) = app();
    let created = create(&app, json!("few_docs"), 3).await;
    let q = &created.queue[0];
    post_label(&app, &created.session_id, q, &oracle(q)).await;
    let dir = tempfile::tempdir().unwrap();
    state.persist(dir.path()).await.unwrap();

    let restored = AppState::new(learner(), 7);
    assert_eq!(restored.restore(dir.path()).unwrap(), 1);
    assert_eq!(
        restored.session_snapshot(&created.session_id).await.unwrap(),
        state.session_snapshot(&created.session_id).await.unwrap()
    );
    assert_eq!(restored.pool(), state.pool());
    let fresh = create(&router(restored), json!("few_docs"), 2).await;
    assert_ne!(fresh.session_id, created.session_id);
}

#[tokio::test]
async fn serve_reports_port_conflicts_and_flushes_on_shutdown() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let err = serve(AppState::new(learner(), 7), addr, None, async {}).await.unwrap_err();
    assert!(err.to_string().contains("cannot bind"), "{err}");
    drop(taken);

    let dir = tempfile::tempdir().unwrap();
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    serve(AppState::new(learner(), 7), free, Some(dir.path().to_path_buf()), async {})
        .await
        .unwrap();
    assert!(dir.path().join("pool.json").exists());
}
