use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"run_id = "cli"
corpus_manifest = "corpus/manifest.jsonl"
chunk_words = 120
mcqs_per_chunk = 4
generator_model = "sim-generator"
evaluator_models = ["sim-judge"]
embedding_model = "sim-embed"
seed = 3
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let text: Vec<String> = (0..300)
        .map(|i| format!("word{} term{}", i % 37, i % 11))
        .collect();
    std::fs::write(corpus.join("a.txt"), text.join(" ")).unwrap();
    std::fs::write(
        corpus.join("manifest.jsonl"),
        "{\"doc_id\":\"a\",\"path\":\"a.txt\"}\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("infopot.toml"), config).unwrap();
    dir
}

fn infopot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infopot"))
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

#[test]
fn missing_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = infopot(dir.path(), &["chunk"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "config");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = setup(&format!("{CONFIG}chunk_size = 5\n"));
    let out = infopot(dir.path(), &["chunk"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["kind"], "config");
    assert!(err.to_string().contains("chunk_size"), "{err}");
}

#[test]
fn stage_without_predecessor_names_the_fix() {
    let dir = setup(CONFIG);
    let out = infopot(dir.path(), &["filter"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["kind"], "missing_stage");
    assert!(err["message"].as_str().unwrap().contains("infopot chunk"));
}

#[test]
fn report_before_any_run_is_unknown_run() {
    let dir = setup(CONFIG);
    let out = infopot(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["kind"], "unknown_run");
}

#[test]
fn staged_commands_then_rerun_skips_everything() {
    let dir = setup(CONFIG);
    for stage in ["chunk", "generate", "filter", "evaluate", "score", "sweep"] {
        let out = infopot(dir.path(), &[stage]);
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let lines = stdout_lines(&out);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0]["skipped"], false);
    }
    let out = infopot(dir.path(), &["run"]);
    assert!(out.status.success());
    let outcomes = stdout_lines(&out);
    assert_eq!(outcomes.len(), 6);
    assert!(
        outcomes.iter().all(|o| o["skipped"] == true),
        "{outcomes:?}"
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("sim-judge"));

    let forced = infopot(dir.path(), &["--force", "score"]);
    assert_eq!(stdout_lines(&forced)[0]["skipped"], false);
}

#[test]
fn report_json_is_a_bundle() {
    let dir = setup(CONFIG);
    assert!(infopot(dir.path(), &["run"]).status.success());
    let out = infopot(dir.path(), &["report", "--json"]);
    assert!(out.status.success());
    let bundle: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(bundle["run_id"], "cli");
    let reports = bundle["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["model_id"], "sim-judge");
    assert!(dir.path().join("runs/cli/reports/bundle.json").is_file());
}

#[test]
fn percentile_override_changes_sweep_rows() {
    let dir = setup(CONFIG);
    let out = infopot(dir.path(), &["run", "--percentiles", "0,50"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("runs/cli/reports/sweep.csv")).unwrap();
    // header + 3 families x 2 cutoffs for one model
    assert_eq!(csv.lines().count(), 1 + 6, "{csv}");
}

#[test]
fn templates_are_written_and_usable() {
    let dir = setup(CONFIG);
    let out = infopot(dir.path(), &["templates", "--out", "tpl"]);
    assert!(out.status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path().join("tpl")).unwrap().collect();
    assert!(!files.is_empty());

    let cfg = format!("{CONFIG}templates_dir = \"tpl\"\n");
    std::fs::write(dir.path().join("infopot.toml"), cfg).unwrap();
    assert!(infopot(dir.path(), &["chunk"]).status.success());
}

#[test]
fn api_key_value_never_reaches_output() {
    let secret = "sk-test-do-not-print-0123456789";
    let cfg = format!(
        "{CONFIG}\n[provider]\nkind = \"openai-compatible\"\nendpoint_url = \"http://127.0.0.1:9\"\n\
         api_key_env = \"INFOPOT_TEST_KEY\"\nmax_retries = 0\nbackoff_ms = [0]\ntimeout_secs = 2\n"
    );
    let dir = setup(&cfg);
    assert!(infopot(dir.path(), &["chunk"]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_infopot"))
        .current_dir(dir.path())
        .env("INFOPOT_TEST_KEY", secret)
        .args(["--log", "trace", "generate"])
        .output()
        .unwrap();
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!all.contains(secret));
    for entry in walk(&dir.path().join("runs")) {
        let bytes = std::fs::read(&entry).unwrap();
        assert!(
            !String::from_utf8_lossy(&bytes).contains(secret),
            "{}",
            entry.display()
        );
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}
