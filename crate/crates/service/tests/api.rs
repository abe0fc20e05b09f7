use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use ssd_core::audio::{encode_wav, AudioClip};
use ssd_core::nnet::{Checkpoint, SmallCnn, SmallCnnConfig, TrainingMeta};
use ssd_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

fn checkpoint(frames: usize, experiment: &str, seed: u64) -> Checkpoint {
    let classes = if experiment.starts_with("e2") { 2 } else { 4 };
    let cfg = SmallCnnConfig::standard(frames, classes);
    let names: Vec<String> = if classes == 2 {
        vec!["incorrect".into(), "correct".into()]
    } else {
        ["stopping", "backing", "fcdp", "affrication"].map(String::from).to_vec()
    };
    let meta = TrainingMeta {
        experiment: experiment.into(),
        fold: Some(0),
        epoch: 3,
        val_loss: 0.5,
        seed,
        config_hash: cfg.hash(),
        class_names: names,
    };
    Checkpoint::from_model(&SmallCnn::new(cfg, seed).unwrap(), meta)
}

fn save_checkpoint(dir: &Path, name: &str, ck: &Checkpoint) -> std::path::PathBuf {
    let p = dir.join(name);
    ck.save(&p).unwrap();
    p
}

fn tone_wav(seconds: f64, hz: f64) -> Vec<u8> {
    let rate = 16_000;
    let n = (seconds * rate as f64) as usize;
    let s = (0..n)
        .map(|i| (0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin()) as f32)
        .collect();
    encode_wav(&AudioClip::new(s, rate).unwrap(), 16).unwrap()
}

struct Harness {
    app: Router,
    state: Arc<AppState>,
    _dir: tempfile::TempDir,
}

fn harness(with_model: bool, admin: Option<&str>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = with_model.then(|| save_checkpoint(dir.path(), "e1.ssdm", &checkpoint(256, "e1", 1)));
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().join("data")),
        checkpoint,
        static_dir: None,
        admin_token: admin.map(String::from),
    };
    let state = Arc::new(AppState::new(&cfg).unwrap());
    Harness {
        app: router(state.clone(), None),
        state,
        _dir: dir,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn post_json(uri: &str, body: &Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_wav(uri: &str, wav: Vec<u8>) -> Request<Body> {
    Request::post(uri).header("content-type", "audio/wav").body(Body::from(wav)).unwrap()
}

fn questionnaire() -> Value {
    json!({"age": 5, "sex": "F", "vocal_organs_normal": true, "consent": true})
}

async fn new_session(app: &Router, q: Value) -> String {
    let (s, v) = call(app, post_json("/sessions", &q)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn questionnaire_validation() {
    let h = harness(false, None);
    let id = new_session(&h.app, questionnaire()).await;
    assert!(!id.is_empty());

    let mut q = questionnaire();
    q["consent"] = json!(false);
    let (s, v) = call(&h.app, post_json("/sessions", &q)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["fields"]["consent"].is_string(), "{v}");

    let (s, v) = call(&h.app, post_json("/sessions", &json!({"age": "five", "sex": "X"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    for f in ["age", "sex", "consent", "vocal_organs_normal"] {
        assert!(v["fields"][f].is_string(), "missing diagnostic for {f}: {v}");
    }

    let req = Request::post("/sessions").body(Body::from("{not json")).unwrap();
    let (s, v) = call(&h.app, req).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("JSON"));
}

#[tokio::test]
async fn phrase_table() {
    let h = harness(false, None);
    let (s, a) = call(&h.app, get("/phrases")).await;
    assert_eq!(s, StatusCode::OK);
    let list = a.as_array().unwrap();
    assert_eq!(list.len(), 96);
    assert_eq!(list[0]["romanization"], "Bùdīng");
    assert_eq!(list[0]["phrase_id"], "P01");
    for k in ["phrase_id", "text", "romanization", "translation"] {
        assert!(list.iter().all(|e| e[k].is_string()));
    }
    let (_, b) = call(&h.app, get("/phrases")).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn responses_without_model_are_unavailable() {
    let h = harness(false, None);
    let id = new_session(&h.app, questionnaire()).await;
    let (s, _) = call(&h.app, post_wav(&format!("/sessions/{id}/responses/P01"), tone_wav(1.0, 300.0))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&h.app, get("/model")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn prediction_and_report_flow() {
    let h = harness(true, None);
    let id = new_session(&h.app, questionnaire()).await;

    let (s, r) = call(&h.app, get(&format!("/sessions/{id}/report"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["answered"], 0);
    assert!(r["categories"].as_array().unwrap().iter().all(|c| c["flagged"] == 0));

    let mut labels = Vec::new();
    for (phrase, hz) in [("P01", 300.0), ("P02", 900.0), ("P03", 2500.0)] {
        let (s, p) = call(&h.app, post_wav(&format!("/sessions/{id}/responses/{phrase}"), tone_wav(1.5, hz))).await;
        assert_eq!(s, StatusCode::OK, "{p}");
        let probs = p["probabilities"].as_array().unwrap();
        assert_eq!(probs.len(), 4);
        let sum: f64 = probs.iter().map(|c| c["probability"].as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6, "{sum}");
        assert!(p["latency_ms"].as_f64().unwrap() > 0.0);
        labels.push(p["label"].as_str().unwrap().to_string());
    }

    let (_, r1) = call(&h.app, get(&format!("/sessions/{id}/report"))).await;
    let (_, r2) = call(&h.app, get(&format!("/sessions/{id}/report"))).await;
    assert_eq!(r1, r2);
    assert_eq!(r1["answered"], 3);
    for c in r1["categories"].as_array().unwrap() {
        let name = c["category"].as_str().unwrap();
        let want = labels.iter().filter(|l| l.as_str() == name).count();
        assert_eq!(c["flagged"], want, "{name}");
    }

    // re-recording replaces the earlier take
    let (s, _) = call(&h.app, post_wav(&format!("/sessions/{id}/responses/P01"), tone_wav(0.8, 5000.0))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, r3) = call(&h.app, get(&format!("/sessions/{id}/report"))).await;
    assert_eq!(r3["answered"], 3);
}

#[tokio::test]
async fn response_errors() {
    let h = harness(true, None);
    let id = new_session(&h.app, questionnaire()).await;
    let cases = [
        (format!("/sessions/nope/responses/P01"), tone_wav(1.0, 300.0), StatusCode::NOT_FOUND),
        (format!("/sessions/{id}/responses/P99"), tone_wav(1.0, 300.0), StatusCode::NOT_FOUND),
        (format!("/sessions/{id}/responses/P01"), tone_wav(3.5, 300.0), StatusCode::UNPROCESSABLE_ENTITY),
        (format!("/sessions/{id}/responses/P01"), b"RIFF garbage".to_vec(), StatusCode::UNPROCESSABLE_ENTITY),
    ];
    for (uri, body, want) in cases {
        let (s, v) = call(&h.app, post_wav(&uri, body)).await;
        assert_eq!(s, want, "{uri}: {v}");
        assert!(v["error"].is_string());
    }
    let (s, _) = call(&h.app, get("/sessions/nope/report")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_predictions_agree() {
    let h = harness(true, None);
    let id = new_session(&h.app, questionnaire()).await;
    let wav = tone_wav(1.2, 700.0);
    let tasks: Vec<_> = (0..4)
        .map(|i| {
            let app = h.app.clone();
            let uri = format!("/sessions/{id}/responses/P0{}", i + 1);
            let wav = wav.clone();
            tokio::spawn(async move { call(&app, post_wav(&uri, wav)).await.1["probabilities"].clone() })
        })
        .collect();
    let mut out = Vec::new();
    for t in tasks {
        out.push(t.await.unwrap());
    }
    assert!(out.iter().all(|p| *p == out[0]));
}

#[tokio::test]
async fn model_metadata_and_hot_swap() {
    let h = harness(true, Some("s3cret"));
    let (s, m) = call(&h.app, get("/model")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["experiment"], "e1");
    assert_eq!(m["preset"], "phrase");
    assert_eq!(m["checkpoint_sha256"], checkpoint(256, "e1", 1).content_hash());

    let dir = tempfile::tempdir().unwrap();
    let next = checkpoint(128, "e2-backing", 2);
    let path = save_checkpoint(dir.path(), "e2.ssdm", &next);
    let body = json!({ "path": path });

    let (s, _) = call(&h.app, post_json("/admin/model", &body)).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let mut req = post_json("/admin/model", &json!({"path": dir.path().join("missing.ssdm")}));
    req.headers_mut().insert("x-admin-token", "s3cret".parse().unwrap());
    assert_eq!(call(&h.app, req).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let before = h.state.model().unwrap();
    let mut req = post_json("/admin/model", &body);
    req.headers_mut().insert("x-admin-token", "s3cret".parse().unwrap());
    let (s, m) = call(&h.app, req).await;
    assert_eq!(s, StatusCode::OK, "{m}");
    assert_eq!(m["checkpoint_sha256"], next.content_hash());
    assert_eq!(m["preset"], "character");
    // a holder of the old model keeps using it untouched
    assert_eq!(before.info().experiment, "e1");

    let id = new_session(&h.app, questionnaire()).await;
    let (s, p) = call(&h.app, post_wav(&format!("/sessions/{id}/responses/P05"), tone_wav(0.5, 400.0))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(p["probabilities"].as_array().unwrap().len(), 2);
    let flagged = p["label"] == "incorrect";
    assert_eq!(p["category"] == "backing", flagged);

    let off = harness(true, None);
    assert_eq!(call(&off.app, post_json("/admin/model", &body)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_persist_and_donations_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let ck = save_checkpoint(dir.path(), "e1.ssdm", &checkpoint(256, "e1", 1));
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().join("data")),
        checkpoint: Some(ck),
        ..Default::default()
    };
    let (keep, drop_id, report) = {
        let app = router(Arc::new(AppState::new(&cfg).unwrap()), None);
        let mut q = questionnaire();
        q["donate_recordings"] = json!(true);
        let keep = new_session(&app, q).await;
        let drop_id = new_session(&app, questionnaire()).await;
        for id in [&keep, &drop_id] {
            let (s, p) = call(&app, post_wav(&format!("/sessions/{id}/responses/P07"), tone_wav(1.0, 500.0))).await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(p["audio_retained"], *id == keep);
        }
        let (_, report) = call(&app, get(&format!("/sessions/{keep}/report"))).await;
        (keep, drop_id, report)
    };
    let recordings = dir.path().join("data/recordings");
    assert!(recordings.join(&keep).join("P07.wav").is_file());
    assert!(!recordings.join(&drop_id).exists());

    let app = router(Arc::new(AppState::new(&cfg).unwrap()), None);
    let (s, again) = call(&app, get(&format!("/sessions/{keep}/report"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again, report);
}

#[tokio::test]
async fn serves_static_bundle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>screening</title>").unwrap();
    let state = Arc::new(AppState::new(&ServiceConfig::default()).unwrap());
    let app = router(state, Some(dir.path()));
    let res = app.clone().oneshot(get("/index.html")).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert!(String::from_utf8_lossy(&body).contains("screening"));
    let (s, _) = call(&app, get("/phrases")).await;
    assert_eq!(s, StatusCode::OK);
}
