use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use iss_service::{router, AppState, ServiceConfig, CONVENTION_HEADER, VERSION_HEADER};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn app_with(cfg: ServiceConfig) -> Router {
    router(AppState::from_config(&cfg).unwrap())
}

fn app() -> Router {
    app_with(ServiceConfig { corpus_dir: Some(fixtures()), ..Default::default() })
}

fn incident(values: f64) -> Value {
    let cats: serde_json::Map<String, Value> = ["disc", "surv", "elec", "manip", "civic", "capture", "emerg"]
        .iter()
        .map(|c| (c.to_string(), json!({ "values": [values, values, values] })))
        .collect();
    json!({ "id": "inc-1", "timestamp": "2025-03-01T00:00:00Z", "categories": cats })
}

fn panel(utilities_equal: bool, proposals: Option<Vec<Vec<f64>>>) -> Value {
    let groups = [
        "democratic-institutions",
        "civil-society-organizations",
        "regulatory-bodies",
        "technical-experts",
        "affected-communities",
        "industry-representatives",
        "academic-researchers",
    ];
    let profiles: Vec<Value> = groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let proposal = proposals.as_ref().map(|p| p[k].clone()).unwrap_or_else(|| vec![1.0 / 7.0; 7]);
            let impact = if utilities_equal { 0.5 } else { k as f64 / 10.0 };
            json!({ "group": g, "beta": 1.0, "gamma": 1.0, "expertise": 0.5, "impact": impact, "proposal": proposal })
        })
        .collect();
    json!({ "profiles": profiles })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, axum::http::HeaderMap, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, headers, value)
}

#[tokio::test]
async fn score_with_zero_params_is_half() {
    let app = app();
    let (status, headers, body) = call(&app, "POST", "/v1/score", Some(json!({ "incident": incident(0.4) }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["polynomial"], json!(0.5));
    assert_eq!(body["enforcement"]["tier"], json!("none"));
    assert!(body["linear"].as_f64().unwrap() <= body["multiplicative"].as_f64().unwrap() + 1e-12);
    assert_eq!(headers[VERSION_HEADER], iss_core::ENGINE_VERSION);
    assert!(headers[CONVENTION_HEADER].to_str().unwrap().contains("clamp"));
}

#[tokio::test]
async fn score_rejects_out_of_range_value() {
    let app = app();
    let mut inc = incident(0.4);
    inc["categories"]["surv"]["values"][1] = json!(1.5);
    let (status, _, body) = call(&app, "POST", "/v1/score", Some(json!({ "incident": inc }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("surv.values[1]"), "{body}");
}

#[tokio::test]
async fn score_with_mismatched_params_is_422() {
    let app = app();
    let params = json!({ "d": 2, "w": [0.0, 0.0], "W": [0.0, 0.0, 0.0, 0.0], "b": 0.0 });
    let (status, _, body) = call(&app, "POST", "/v1/score", Some(json!({ "incident": incident(0.4), "params": params }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["error"]["kind"], json!("dimension_mismatch"));
}

#[tokio::test]
async fn thresholds_at_start() {
    let app = app();
    let (status, _, body) = call(&app, "GET", "/v1/thresholds?t=0", None).await;
    assert_eq!(status, StatusCode::OK);
    let h = &body["levels"][2];
    assert_eq!(h["level"], json!("H"));
    assert_eq!(h["severity_threshold"], json!(0.8));
    assert_eq!(h["probability_threshold"], json!(0.01));
    let (status, _, _) = call(&app, "GET", "/v1/thresholds?t=1.5", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = call(&app, "GET", "/v1/thresholds", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn aggregate_equal_utilities_is_uniform() {
    let app = app();
    let (status, _, body) = call(&app, "POST", "/v1/weights/aggregate", Some(json!({ "panel": panel(true, None) }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    for w in body["stakeholder_weights"].as_array().unwrap() {
        assert!((w.as_f64().unwrap() - 1.0 / 7.0).abs() < 1e-12);
    }
    assert_eq!(body["disagreement"]["flagged"], json!(false));
}

#[tokio::test]
async fn aggregate_missing_group_is_400() {
    let app = app();
    let mut p = panel(true, None);
    p["profiles"].as_array_mut().unwrap().pop();
    let (status, _, _) = call(&app, "POST", "/v1/weights/aggregate", Some(json!({ "panel": p }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sensitivity_dimension_mismatch_is_422() {
    let app = app();
    let four: Vec<Vec<f64>> = vec![vec![0.25; 4]; 7];
    let body = json!({ "incident": incident(0.4), "panel": panel(true, Some(four)) });
    let (status, _, _) = call(&app, "POST", "/v1/sensitivity", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sensitivity_is_stateless() {
    let app = app();
    let body = json!({ "incident": incident(0.4), "panel": panel(false, None), "t": 0.5 });
    let (s1, _, a) = call(&app, "POST", "/v1/sensitivity", Some(body.clone())).await;
    let (s2, _, b) = call(&app, "POST", "/v1/sensitivity", Some(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    assert_eq!(a["pipeline"], json!("learned-reweighted"));
    assert_eq!(a["stable"], json!(true));
}

#[tokio::test]
async fn retrospective_by_config_matches_golden() {
    let app = app();
    let (status, _, body) = call(&app, "POST", "/v1/retrospective", Some(json!({ "config": "retrospective.json" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(fixtures().join("golden_report.json")).unwrap()).unwrap();
    assert_eq!(body, golden);

    let (status, _, _) = call(&app, "POST", "/v1/retrospective", Some(json!({ "config": "../core/fixtures/retrospective.json" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn retrospective_inline() {
    let app = app();
    let body = json!({
        "incidents": [incident(0.0)],
        "weightings": [{ "name": "equal", "panel": panel(true, None) }],
    });
    let (status, _, body) = call(&app, "POST", "/v1/retrospective", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let levels = &body["incidents"][0]["triggers"]["levels"];
    assert_eq!(levels[0]["incident"]["fired"], json!(true));
    assert_eq!(levels[2]["incident"]["fired"], json!(false));
}

async fn poll(app: &Router, id: &str) -> Value {
    for _ in 0..400 {
        let (status, _, body) = call(app, "GET", &format!("/v1/train/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] != json!("running") {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("training job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn train_job_lifecycle() {
    let app = app();
    let req = json!({ "corpus": "corpus.jsonl", "config": { "max_iters": 50 } });
    let (status, _, started) = call(&app, "POST", "/v1/train", Some(req.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{started}");
    let id = started["id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 64);
    let done = poll(&app, &id).await;
    assert_eq!(done["status"], json!("done"), "{done}");
    assert_eq!(done["result"]["params"]["d"], json!(7));

    // same request, same id, finished result
    let (status, _, again) = call(&app, "POST", "/v1/train", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["id"], json!(id));
    assert_eq!(again["result"], done["result"]);

    let (status, _, _) = call(&app, "GET", "/v1/train/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn train_rejects_two_sources() {
    let app = app();
    let req = json!({ "corpus": "corpus.jsonl", "rows": [{ "f": [0.5], "y": 0.5 }] });
    let (status, _, _) = call(&app, "POST", "/v1/train", Some(req)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

fn divergent() -> Vec<Vec<f64>> {
    (0..7)
        .map(|k| {
            let mut p = vec![0.0; 7];
            p[k] = 1.0;
            p
        })
        .collect()
}

#[tokio::test]
async fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { session_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let app = app_with(cfg.clone());

    let create = json!({ "incident": incident(0.6), "panel": panel(true, None), "t": 0.0 });
    let (status, _, s) = call(&app, "POST", "/v1/sessions", Some(create)).await;
    assert_eq!(status, StatusCode::CREATED, "{s}");
    let id = s["id"].as_str().unwrap().to_string();
    assert_eq!(s["round"], json!(0));
    assert_eq!(s["reports"][0]["disagreement"]["flagged"], json!(false));

    let rounds = format!("/v1/sessions/{id}/rounds");
    let submit = json!({ "action": "submit", "panel": panel(true, Some(divergent())) });
    let (status, _, s) = call(&app, "POST", &rounds, Some(submit.clone())).await;
    assert_eq!(status, StatusCode::OK, "{s}");
    assert_eq!(s["round"], json!(1));
    assert_eq!(s["audit"].as_array().unwrap().len(), 1);
    assert_eq!(s["reports"][1]["disagreement"]["flagged"], json!(true));

    let (status, _, s) = call(&app, "POST", &rounds, Some(json!({ "action": "precautionary" }))).await;
    assert_eq!(status, StatusCode::OK, "{s}");
    assert_eq!(s["resolved"], json!(true));
    assert_eq!(s["resolution"]["outcome"]["basis"], json!("affected-communities"));

    let (status, _, _) = call(&app, "POST", &rounds, Some(submit)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _, _) = call(&app, "GET", "/v1/sessions/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = call(&app, "POST", "/v1/sessions/unknown/rounds", Some(json!({ "action": "resolve" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // a fresh server replays the event file into the same session
    let (_, _, before) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    let reopened = app_with(cfg);
    let (status, _, after) = call(&reopened, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let lines = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[tokio::test]
async fn resolve_uses_consensus() {
    let app = app();
    let create = json!({ "incident": incident(0.6), "panel": panel(false, None) });
    let (_, _, s) = call(&app, "POST", "/v1/sessions", Some(create)).await;
    let id = s["id"].as_str().unwrap();
    let (status, _, s) = call(&app, "POST", &format!("/v1/sessions/{id}/rounds"), Some(json!({ "action": "resolve" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["resolution"]["outcome"]["basis"], json!("consensus"));
    assert_eq!(s["resolution"]["outcome"]["score"], s["reports"][0]["consensus_score"]);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let app = app_with(ServiceConfig { token: Some("s3cret".into()), ..Default::default() });
    let (status, _, _) = call(&app, "GET", "/v1/thresholds?t=0", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _, _) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let req = Request::builder()
        .uri("/v1/thresholds?t=0")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.oneshot(req).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn malformed_json_is_400() {
    let app = app();
    let req = Request::builder()
        .method("POST")
        .uri("/v1/score")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn every_listed_route_is_served() {
    let app = app();
    for (method, path) in iss_service::ROUTES {
        let uri = path.replace("{id}", "x");
        let uri = if uri == "/v1/thresholds" { "/v1/thresholds?t=0".to_string() } else { uri };
        let body = (*method == "POST").then(|| json!({}));
        let (status, _, _) = call(&app, method, &uri, body).await;
        assert_ne!(status, StatusCode::METHOD_NOT_ALLOWED, "{method} {path}");
        if status == StatusCode::NOT_FOUND {
            // unknown ids are fine; an unknown route is not
            assert!(path.contains("{id}"), "{method} {path} not routed");
        }
    }
}
