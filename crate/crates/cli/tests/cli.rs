//! End-to-end checks of the `iun` binary: planning output, a full run with
//! exit code 0, resume behavior, and the partial-failure exit code 2.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn copy_fixture_inputs(dir: &Path) {
    for name in ["corpus.jsonl", "embeddings.emb1", "scores_llm.jsonl", "scores_b.jsonl", "config.toml"] {
        std::fs::copy(fixtures_dir().join(name), dir.join(name)).unwrap();
    }
}

fn iun() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iun"))
}

#[test]
fn plan_lists_stages() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture_inputs(dir.path());
    let out = iun()
        .args(["plan", "-c"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for stage in ["chunk", "embed", "reduce", "cluster", "score", "features"] {
        assert!(stdout.contains(stage), "missing {stage} in:\n{stdout}");
    }
}

#[test]
fn run_end_to_end_exits_zero_and_is_resumable() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture_inputs(dir.path());
    let config = dir.path().join("config.toml");

    let out = iun().args(["run", "-c"]).arg(&config).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/report/report.md").exists());
    assert!(dir.path().join("out/correlations.csv").exists());
    assert!(dir.path().join("out/manifest.json").exists());

    // rerun resumes cleanly from the warm cache
    let out = iun().args(["run", "-c"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn stage_subcommand_runs_only_its_closure() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture_inputs(dir.path());
    let config = dir.path().join("config.toml");

    let out = iun().args(["chunk", "-c"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("cache/chunks/FIX-500.jsonl").exists());
    assert!(!dir.path().join("cache/reduced").exists(), "chunk must not reduce");
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), "[[corpora]]\nname = \"\"\n").unwrap();
    let out = iun()
        .args(["run", "-c"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validity_rejected_cases_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture_inputs(dir.path());
    // an external assignment with 5 clusters gets rejected (outside 20..=100)
    // but rejection is an expected outcome, not a failure
    let mut csv = String::from("id,label\n");
    for i in 0..500 {
        csv.push_str(&format!("doc{i:04},{}\n", i % 5));
    }
    std::fs::write(dir.path().join("flat5.csv"), csv).unwrap();
    let config = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    let text = text.replace(
        "[[scorers]]",
        "[[clustering.external]]\nlabel = \"flat5\"\ncorpus = \"FIX\"\nsize = 500\nembedding = \"SYN\"\nreduction = \"pca20\"\npath = \"flat5.csv\"\n\n[[scorers]]",
    );
    std::fs::write(&config, text).unwrap();

    let out = iun().args(["run", "-c"]).arg(&config).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let rejected =
        std::fs::read_to_string(dir.path().join("out/report/rejected_cases.csv")).unwrap();
    assert!(rejected.contains("ext-flat5"));
}

#[test]
fn failed_cells_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture_inputs(dir.path());
    // point one external assignment at a missing file: its cell fails,
    // the rest of the grid completes
    let config = dir.path().join("config.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    let text = text.replace(
        "[[scorers]]",
        "[[clustering.external]]\nlabel = \"ghost\"\ncorpus = \"FIX\"\nsize = 500\nembedding = \"SYN\"\nreduction = \"pca20\"\npath = \"missing.csv\"\n\n[[scorers]]",
    );
    std::fs::write(&config, text).unwrap();

    let out = iun().args(["run", "-c"]).arg(&config).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    // healthy cells still produced the report
    assert!(dir.path().join("out/report/report.md").exists());
}
