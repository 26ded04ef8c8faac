use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn das(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_das"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.das(args);
        assert!(
            out.status.success(),
            "das {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Absolute path of the run directory a command reported.
    fn run_dir(&self, stdout: &str) -> PathBuf {
        let line = stdout
            .lines()
            .find_map(|l| l.strip_prefix("run dir: "))
            .expect("run dir line");
        self.dir.path().join(line)
    }

    fn synth(&self, authors: &str, per: &str) -> &Self {
        self.ok(&[
            "synth",
            "--authors",
            authors,
            "--docs-per-author",
            per,
            "--out",
            "corpus.jsonl",
        ]);
        self
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_bad_flags() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.das(&["--help"])), 0);
    assert_eq!(code(&ws.das(&["filter", "--bogus"])), 1);
    assert_eq!(code(&ws.das(&[])), 1);
}

#[test]
fn synth_minimal_corpus() {
    let ws = Workspace::new();
    let out = ws.ok(&[
        "synth",
        "--authors",
        "1",
        "--docs-per-author",
        "2",
        "--out",
        "tiny.jsonl",
    ]);
    assert!(out.contains("wrote 2 documents"), "{out}");
    assert_eq!(
        fs::read_to_string(ws.path("tiny.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert_eq!(
        code(&ws.das(&[
            "synth",
            "--authors",
            "0",
            "--docs-per-author",
            "2",
            "--out",
            "x.jsonl"
        ])),
        1
    );
    assert_eq!(
        code(&ws.das(&[
            "synth",
            "--authors",
            "2",
            "--docs-per-author",
            "2",
            "--signal",
            "2",
            "--out",
            "x.jsonl"
        ])),
        1
    );
}

#[test]
fn filter_validates_and_reuses_the_cache() {
    let ws = Workspace::new();
    ws.synth("30", "4");
    let zero = ws.das(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        "a00003-000",
        "--top-k",
        "0",
    ]);
    assert_eq!(code(&zero), 1);
    let unknown = ws.das(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        "nope",
        "--top-k",
        "5",
    ]);
    assert_eq!(code(&unknown), 2);
    assert_eq!(
        code(&ws.das(&["filter", "--query", "a00003-000"])),
        1,
        "no corpus given"
    );

    let first = ws.ok(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        "a00003-000",
        "--top-k",
        "50",
    ]);
    assert!(first.contains("pool: 50 candidates"), "{first}");
    assert!(!first.contains("embedding calls: 0"), "{first}");
    let second = ws.ok(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        "a00003-000",
        "--top-k",
        "50",
    ]);
    assert!(second.contains("embedding calls: 0"), "{second}");
    let (a, b) = (ws.run_dir(&first), ws.run_dir(&second));
    assert_ne!(a, b);
    assert_eq!(
        fs::read(a.join("pool.json")).unwrap(),
        fs::read(b.join("pool.json")).unwrap()
    );
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["config"]["top_k"], 50);
    assert_eq!(manifest["query_id"], "a00003-000");

    // K beyond the universe keeps everything but the target
    let all = ws.ok(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        "a00003-000",
        "--top-k",
        "5000",
    ]);
    assert!(all.contains("pool: 119 candidates"), "{all}");
}

fn filtered(ws: &Workspace, query: &str, k: &str) -> PathBuf {
    let out = ws.ok(&[
        "filter",
        "--corpus",
        "corpus.jsonl",
        "--query",
        query,
        "--top-k",
        k,
    ]);
    ws.run_dir(&out).join("pool.json")
}

#[test]
fn zero_noise_attribution_puts_same_author_first() {
    let ws = Workspace::new();
    ws.synth("60", "5");
    let pool = filtered(&ws, "a00007-002", "200");
    let out = ws.ok(&[
        "attribute",
        "--corpus",
        "corpus.jsonl",
        "--pool",
        pool.to_str().unwrap(),
        "--trials",
        "5",
        "--group-size",
        "10",
        "--alpha",
        "5",
        "--final-k",
        "20",
        "--client",
        "oracle",
        "--oracle-noise",
        "0",
    ]);
    let dir = ws.run_dir(&out);
    let result = json(&dir.join("result.json"));
    let ranked: Vec<&str> = result["ranked"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["doc_id"].as_str().unwrap())
        .collect();
    assert_eq!(ranked.len(), 20);
    let mut top: Vec<&str> = ranked[..4].to_vec();
    top.sort_unstable();
    assert_eq!(
        top,
        ["a00007-000", "a00007-001", "a00007-003", "a00007-004"]
    );

    let manifest = json(&dir.join("manifest.json"));
    // 200 -> 40 -> 8 takes 20 + 4 judged groups per trial
    assert_eq!(
        manifest["calls_per_trial"],
        serde_json::json!([24, 24, 24, 24, 24])
    );
    assert_eq!(manifest["config"]["tsa"]["alpha"], 5.0);
    assert!(
        fs::read_to_string(dir.join("verdicts.jsonl"))
            .unwrap()
            .lines()
            .count()
            >= 120
    );
    assert!(fs::read_to_string(dir.join("rounds.csv"))
        .unwrap()
        .starts_with("trial,round,phi"));

    let pe = ws.ok(&[
        "attribute",
        "--corpus",
        "corpus.jsonl",
        "--pool",
        pool.to_str().unwrap(),
        "--ablation",
        "pe",
    ]);
    let pe_manifest = json(&ws.run_dir(&pe).join("manifest.json"));
    assert_eq!(
        pe_manifest["calls_per_trial"],
        serde_json::json!([20, 20, 20, 20, 20])
    );
    assert_eq!(pe_manifest["config"]["mode"], "singlepass");
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let ws = Workspace::new();
    ws.synth("40", "5");
    let pool = filtered(&ws, "a00001-000", "150");
    let args = [
        "attribute",
        "--corpus",
        "corpus.jsonl",
        "--pool",
        pool.to_str().unwrap(),
        "--oracle-noise",
        "0.3",
        "--seed",
        "9",
    ];
    let dir = ws.run_dir(&ws.ok(&args));
    let full_result = fs::read(dir.join("result.json")).unwrap();
    let log = fs::read_to_string(dir.join("verdicts.jsonl")).unwrap();

    // keep the first rounds and a torn line, as after a crash
    let lines: Vec<&str> = log.lines().collect();
    let kept = lines[..lines.len() / 2].join("\n") + "\n{\"trial\": 3, \"rou";
    fs::write(dir.join("verdicts.jsonl"), kept).unwrap();
    fs::remove_file(dir.join("result.json")).unwrap();

    let mut resume = args.to_vec();
    resume.extend(["--resume", dir.to_str().unwrap()]);
    let out = ws.ok(&resume);
    assert!(out.contains("replayed from log"), "{out}");
    assert_eq!(fs::read(dir.join("result.json")).unwrap(), full_result);
    assert_eq!(fs::read_to_string(dir.join("verdicts.jsonl")).unwrap(), log);

    // different settings cannot resume this directory
    let mut other = resume.clone();
    other.extend(["--trials", "2"]);
    assert_eq!(code(&ws.das(&other)), 1);
}

#[test]
fn unreachable_chat_endpoint_is_a_provider_error() {
    let ws = Workspace::new();
    ws.synth("10", "3");
    let pool = filtered(&ws, "a00001-000", "25");
    fs::write(
        ws.path("config.json"),
        r#"{"llm": {"ranker": {"limits": {"max_group_size": 26, "context_budget_chars": 400000},
            "parse_retries": 0, "transport_attempts": 2, "backoff_ms": 1}}}"#,
    )
    .unwrap();
    let out = ws.das(&[
        "--config",
        "config.json",
        "attribute",
        "--corpus",
        "corpus.jsonl",
        "--pool",
        pool.to_str().unwrap(),
        "--client",
        "http",
        "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--resume"));
}

#[test]
fn evaluate_reports_system_and_chance_rows() {
    let ws = Workspace::new();
    ws.synth("50", "4");
    ws.ok(&[
        "labels",
        "--corpus",
        "corpus.jsonl",
        "--out",
        "labels.jsonl",
    ]);
    assert_eq!(
        fs::read_to_string(ws.path("labels.jsonl"))
            .unwrap()
            .lines()
            .count(),
        200
    );
    fs::create_dir(ws.path("results")).unwrap();
    for q in ["a00002-000", "a00011-003", "a00040-001"] {
        let pool = filtered(&ws, q, "100");
        let out = ws.ok(&[
            "attribute",
            "--corpus",
            "corpus.jsonl",
            "--pool",
            pool.to_str().unwrap(),
            "--runs-dir",
            "results",
        ]);
        assert!(ws.run_dir(&out).starts_with(ws.path("results")));
    }
    let out = ws.ok(&[
        "evaluate",
        "--results",
        "results",
        "--labels",
        "labels.jsonl",
        "--k-list",
        "5,10,15,20",
    ]);
    let header = out.lines().next().unwrap();
    for col in ["Rank@5", "Rank@10", "Rank@15", "Rank@20", "Miss"] {
        assert!(header.contains(col), "{out}");
    }
    assert!(
        out.lines()
            .any(|l| l.starts_with("DAS") && l.contains("100.00%")),
        "{out}"
    );
    assert!(out.lines().any(|l| l.starts_with("Random")), "{out}");
    let dir = ws.run_dir(&out);
    let report = json(&dir.join("report.json"));
    assert_eq!(report["num_queries"], 3);
    assert_eq!(report["miss_rate"], 0.0);
    let curve = fs::read_to_string(dir.join("mean_rank.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6, "{curve}");

    fs::create_dir(ws.path("empty")).unwrap();
    assert_eq!(
        code(&ws.das(&["evaluate", "--results", "empty", "--labels", "labels.jsonl"])),
        2
    );
    fs::write(
        ws.path("partial.jsonl"),
        fs::read_to_string(ws.path("labels.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(
        code(&ws.das(&[
            "evaluate",
            "--results",
            "results",
            "--labels",
            "partial.jsonl"
        ])),
        2
    );
}

#[test]
fn benchmark_one_to_many_sweep() {
    let ws = Workspace::new();
    ws.synth("30", "4");
    let out = ws.ok(&[
        "benchmark",
        "--corpus",
        "corpus.jsonl",
        "--queries",
        "10",
        "--setting",
        "one-to-many",
        "--distractors",
        "5",
        "--no-filter",
        "--final-k",
        "5",
        "--k-list",
        "1,3,5",
    ]);
    let dir = ws.run_dir(&out);
    let report = json(&dir.join("report.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_dir(dir.join("results")).unwrap().count(), 10);
    assert!(out.lines().any(|l| l.starts_with("Precision")), "{out}");
    assert_eq!(report["rows"][2]["rank_at_k"], 1.0);
}
