use std::path::Path;

use tabaudit_client::{Client, ClientError};
use tabaudit_core::api::{ErrorKind, LevenshteinRequest, PlanRequest, RenderRequest};
use tabaudit_core::backend::BackendSpec;
use tabaudit_core::confound::VerdictLevel;
use tabaudit_core::manifest::{DatasetSpec, InputFile, RunManifest};
use tabaudit_core::sampler::AuditConfig;

async fn spawn() -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { tabaudit_server::serve(listener).await.unwrap() });
    Client::new(format!("http://{addr}/")).with_poll_interval(std::time::Duration::from_millis(5))
}

fn write_rows(dir: &Path, name: &str, rows: usize) -> String {
    let text: Vec<String> = (0..rows)
        .map(|i| format!("{} {:.4} {:.4}", i * 16, (i as f64 * 1.3).sin(), (i as f64 * 0.2).cos()))
        .collect();
    let path = dir.join(name);
    std::fs::write(&path, text.join("\n")).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(paths: Vec<String>, backend: BackendSpec) -> RunManifest {
    RunManifest {
        datasets: vec![DatasetSpec {
            name: "walk".into(),
            paths,
            parse: Default::default(),
        }],
        backend: Some(backend),
        audit: AuditConfig {
            n_trials: 6,
            ..AuditConfig::default()
        },
        ..RunManifest::default()
    }
}

#[tokio::test]
async fn audit_round_trip_with_progress() {
    let dir = tempfile::tempdir().unwrap();
    let client = spawn().await;
    assert_eq!(client.health().await.unwrap().status, "ok");
    let m = manifest(vec![write_rows(dir.path(), "a.txt", 150)], BackendSpec::Memorizer);
    let estimate = client.estimate(&m).await.unwrap();
    assert_eq!(estimate.requests, 6);
    let mut seen = Vec::new();
    let runs = client.run_audit(&m, |p| seen.push(p.completed)).await.unwrap();
    let report = &runs[0].report;
    assert_eq!(report.dataset_score.dataset_mean, 1.0);
    assert_eq!(report.verdict.level, VerdictLevel::StrongEvidence);
    assert_eq!(seen.last(), Some(&6));

    let rendered = client
        .render(&RenderRequest {
            path: None,
            report: Some(report.clone()),
            format: "json".into(),
        })
        .await
        .unwrap();
    assert_eq!(rendered.content, report.to_json());
}

#[tokio::test]
async fn failures_keep_their_exit_class() {
    let dir = tempfile::tempdir().unwrap();
    let client = spawn().await;

    let m = manifest(vec![write_rows(dir.path(), "short.txt", 4)], BackendSpec::Memorizer);
    let err = client.run_audit(&m, |_| {}).await.unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    let mut m = manifest(vec![write_rows(dir.path(), "a.txt", 150)], BackendSpec::Replay);
    m.cache = Some(dir.path().join("absent.jsonl"));
    let err = client.run_audit(&m, |_| {}).await.unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    let err = client
        .plan(&PlanRequest {
            input: InputFile {
                path: dir.path().join("a.txt"),
                parse: None,
            },
            audit: AuditConfig {
                n_trials: 0,
                ..AuditConfig::default()
            },
        })
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Api(ref e) if e.kind == ErrorKind::Config), "{err:?}");
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let client = Client::new(format!("http://{}", listener.local_addr().unwrap()));
    drop(listener);
    let err = client
        .levenshtein(&LevenshteinRequest {
            ground_truth: "a".into(),
            generated: "b".into(),
        })
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)));
    assert_eq!(err.exit_code(), 1);
}
