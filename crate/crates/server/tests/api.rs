use std::path::Path;

use serde_json::{json, Value};

async fn spawn() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { tabaudit_server::serve(listener).await.unwrap() });
    format!("http://{addr}")
}

fn write_rows(dir: &Path, name: &str, rows: usize) -> String {
    let text: Vec<String> = (0..rows)
        .map(|i| format!("{},{:.3},{}", i * 20, (i as f64 * 0.9).cos(), i % 7))
        .collect();
    let path = dir.join(name);
    std::fs::write(&path, text.join("\n")).unwrap();
    path.to_string_lossy().into_owned()
}

async fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("{base}{path}"))
        .json(&body)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.json().await.unwrap())
}

#[tokio::test]
async fn health_and_levenshtein() {
    let base = spawn().await;
    let health: Value = reqwest::get(format!("{base}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(health["status"], "ok");
    let (status, body) = post(&base, "/v1/levenshtein", json!({"ground_truth": "kitten", "generated": "sitting"})).await;
    assert_eq!(status, 200);
    assert_eq!(body["distance"], 3);
    assert_eq!(body["ratio"].as_f64().unwrap(), 1.0 - 3.0 / 13.0);
}

#[tokio::test]
async fn stages_chain_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_rows(dir.path(), "d.csv", 120);
    let base = spawn().await;

    let (status, inspect) = post(&base, "/v1/inspect", json!({"input": {"path": path}})).await;
    assert_eq!(status, 200, "{inspect}");
    assert_eq!(inspect["row_count"], 120);
    assert_eq!(inspect["parse"]["delimiter"], "comma");

    let (status, plan) = post(&base, "/v1/plan", json!({"input": {"path": path}, "audit": {"n_trials": 3}})).await;
    assert_eq!(status, 200, "{plan}");
    assert_eq!(plan["trials"].as_array().unwrap().len(), 3);

    let (status, prompts) = post(&base, "/v1/prompt", json!({"input": {"path": path}, "plan": plan})).await;
    assert_eq!(status, 200, "{prompts}");
    let transcripts = prompts["transcripts"].as_array().unwrap();
    assert_eq!(transcripts.len(), 3);
    assert_eq!(transcripts[0]["messages"].as_array().unwrap().len(), 16);

    let completions: Vec<Value> = plan["trials"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| json!({"file_ref": path, "trial_id": t["trial_id"], "text": t["test"]["target_row"]}))
        .collect();
    let out = dir.path().join("run");
    let (status, report) = post(
        &base,
        "/v1/score",
        json!({"dataset": "d", "inputs": [{"path": path}], "plans": [plan], "completions": completions, "out": out}),
    )
    .await;
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["dataset_score"]["dataset_mean"], 1.0);
    assert!(out.join("summary.json").exists());

    let (status, rendered) = post(&base, "/v1/render", json!({"path": out, "format": "html"})).await;
    assert_eq!(status, 200);
    assert!(rendered["content"].as_str().unwrap().starts_with("<!DOCTYPE html>"));
}

#[tokio::test]
async fn errors_carry_kind_and_status() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn().await;
    let (status, body) = post(&base, "/v1/plan", json!({"input": {"path": dir.path().join("missing.csv")}})).await;
    assert_eq!((status, body["kind"].as_str()), (422, Some("parse")));

    let short = write_rows(dir.path(), "short.csv", 5);
    let (status, body) = post(&base, "/v1/plan", json!({"input": {"path": short}})).await;
    assert_eq!((status, body["kind"].as_str()), (422, Some("parse")));

    let (status, body) = post(&base, "/v1/render", json!({"format": "pdf", "path": "x"})).await;
    assert_eq!((status, body["kind"].as_str()), (400, Some("config")));

    let resp = reqwest::get(format!("{base}/v1/audits/job-999")).await.unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[tokio::test]
async fn audit_jobs_run_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_rows(dir.path(), "d.csv", 200);
    let base = spawn().await;
    let manifest = json!({
        "dataset": [{"name": "d", "paths": [path]}],
        "backend": {"kind": "copy"},
        "audit": {"n_trials": 4},
        "out": dir.path().join("runs"),
    });
    let (status, created) = post(&base, "/v1/audits", json!({"manifest": manifest})).await;
    assert_eq!(status, 202);
    let id = created["job_id"].as_str().unwrap().to_string();
    let status = loop {
        let s: Value = reqwest::get(format!("{base}/v1/audits/{id}")).await.unwrap().json().await.unwrap();
        if s["state"] != "running" {
            break s;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    };
    assert_eq!(status["state"], "succeeded", "{status}");
    assert_eq!(status["progress"]["completed"], 4);
    let report = &status["runs"][0]["report"];
    assert_eq!(report["dataset_score"]["dataset_mean"], report["confound"]["copy_baseline_mean"]);
    assert!(dir.path().join("runs/d/trials.jsonl").exists());

    let (status, body) = post(&base, "/v1/audits", json!({"manifest": {"dataset": []}})).await;
    assert_eq!((status, body["kind"].as_str()), (400, Some("config")));
}
