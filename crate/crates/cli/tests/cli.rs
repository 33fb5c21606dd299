use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

fn cassette(task: &str) -> PathBuf {
    fixtures().join(format!("cassettes/{task}.ndjson"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plancompose")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Compares with `tests/snapshots/<name>`; `UPDATE_SNAPSHOTS=1` rewrites it.
fn snapshot(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(name);
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
    assert_eq!(actual, expected, "snapshot {name} changed; rerun with UPDATE_SNAPSHOTS=1 if intended");
}

#[test]
fn help_output_is_stable() {
    for (name, args) in [
        ("help.txt", vec!["--help"]),
        ("solve_help.txt", vec!["solve", "--help"]),
        ("bench_help.txt", vec!["bench", "--help"]),
        ("ablate_help.txt", vec!["ablate", "--help"]),
        ("analyze_help.txt", vec!["analyze", "--help"]),
    ] {
        let o = run(&args);
        assert!(o.status.success());
        snapshot(name, &stdout(&o));
    }
}

#[test]
fn help_lists_every_run_flag() {
    let text = stdout(&run(&["bench", "--help"]));
    for flag in ["--task", "--mode", "--cassette", "--config", "--plan", "--out", "--jobs", "--full-trace", "--disable"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn solves_designer_watch_in_replay() {
    let dir = tempfile::tempdir().unwrap();
    let query = dir.path().join("q.json");
    let first = std::fs::read_to_string(fixtures().join("tabmwp.jsonl")).unwrap().lines().next().unwrap().to_string();
    std::fs::write(&query, first).unwrap();
    let out = dir.path().join("out");
    let o = run(&["solve", "--task", "tabmwp", "--cassette", s(&cassette("tabmwp")), "--query", s(&query), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("plan (planner): [Program_Generator, Program_Verifier, Program_Executor, Answer_Generator]"), "{text}");
    assert!(text.contains("answer: 1750.00"), "{text}");
    assert!(out.join("trace.jsonl").is_file());
}

#[test]
fn plan_override_bypasses_the_planner() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve",
        "--task",
        "scienceqa",
        "--cassette",
        s(&cassette("scienceqa")),
        "--question",
        "Which word would you find on a dictionary page with the guide words hammer and hotel?",
        "--choice",
        "hut",
        "--choice",
        "hole",
        "--plan",
        r#"["Solution_Generator","Answer_Generator"]"#,
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("plan (scripted): [Solution_Generator, Answer_Generator]"), "{text}");
    // Not recorded, so lenient replay answers nothing; the run still completes.
    assert!(text.contains("answer: [NO_ANSWER]"), "{text}");
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ndjson");
    let o = run(&["solve", "--task", "tabmwp", "--cassette", s(&missing), "--question", "q"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["bench", "--task", "tabmwp", "--cassette", s(&cassette("tabmwp")), "--out", s(dir.path()), s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no usable items"));

    let o = run(&["bench", "--task", "tabmwp", "--mode", "live", "--out", s(dir.path()), s(&fixtures().join("tabmwp.jsonl"))]);
    if std::env::var_os("COMPOSE_LLM_API_KEY").is_none() {
        assert_eq!(o.status.code(), Some(2));
    }

    let o = run(&["bench", "--task", "tabmwp", "--cassette", s(&cassette("tabmwp")), "--disable", "Nope", s(&fixtures().join("tabmwp.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["analyze", "--out", s(dir.path()), s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
}

fn bench(task: &str, out: &Path) -> Output {
    run(&["bench", "--task", task, "--cassette", s(&cassette(task)), "--out", s(out), s(&fixtures().join(format!("{task}.jsonl")))])
}

/// Trace lines with the wall-clock fields removed.
fn untimed(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["started_at"] = serde_json::Value::Null;
            v["finished_at"] = serde_json::Value::Null;
            for step in v["steps"].as_array_mut().unwrap() {
                step["duration_ms"] = serde_json::Value::Null;
            }
            v
        })
        .collect()
}

#[test]
fn bench_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bench("tabmwp", out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("accuracy  90.00% (18/20)"));
    }
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
    assert_eq!(std::fs::read(a.join("report.txt")).unwrap(), std::fs::read(b.join("report.txt")).unwrap());
    assert_eq!(untimed(&a.join("traces.jsonl")), untimed(&b.join("traces.jsonl")));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["splits"]["ques_type"]["multi_choice"]["total"], 3);
}

#[test]
fn analyze_writes_three_report_families() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("run");
    assert!(bench("scienceqa", &runs).status.success());
    let out = dir.path().join("analysis");
    let o = run(&["analyze", "--out", s(&out), s(&runs.join("traces.jsonl"))]);
    assert!(o.status.success());
    for f in ["tool_usage.json", "transitions.json", "transitions.dot", "program_stats.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("program_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["traces"], 20);

    // One trace: a single START..END path.
    let one = dir.path().join("one.jsonl");
    let first = std::fs::read_to_string(runs.join("traces.jsonl")).unwrap().lines().next().unwrap().to_string() + "\n";
    std::fs::write(&one, first).unwrap();
    let single = dir.path().join("single");
    assert!(run(&["analyze", "--out", s(&single), s(&one)]).status.success());
    let g: serde_json::Value = serde_json::from_slice(&std::fs::read(single.join("transitions.json")).unwrap()).unwrap();
    assert!(g["edges"].as_array().unwrap().iter().all(|e| e["probability"] == 1.0));
}

#[test]
fn ablation_removes_the_module_from_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ab");
    let o = run(&[
        "ablate",
        "--task",
        "scienceqa",
        "--cassette",
        s(&cassette("scienceqa")),
        "--disable",
        "Knowledge_Retrieval",
        "--out",
        s(&out),
        s(&fixtures().join("scienceqa.jsonl")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(report["baseline_accuracy"], 80.0);
    assert_eq!(report["ablated_accuracy"], 70.0);
    assert_eq!(report["delta"], -10.0);

    let usage = |name: &str| -> serde_json::Value {
        let dest = dir.path().join(format!("analysis-{name}"));
        assert!(run(&["analyze", "--out", s(&dest), s(&out.join(name).join("traces.jsonl"))]).status.success());
        serde_json::from_slice(&std::fs::read(dest.join("tool_usage.json")).unwrap()).unwrap()
    };
    assert!(usage("baseline")["planned"]["Knowledge_Retrieval"].as_f64().unwrap() > 0.0);
    assert!(usage("ablated")["planned"].get("Knowledge_Retrieval").is_none());
}

#[test]
fn plugin_module_from_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("echo.toml"),
        "task = \"scienceqa\"\n[[module]]\nname = \"Echo\"\nbackend = { kind = \"rule\", rule = \"echo\" }\nconsumes = [\"question\"]\nproduces = [\"knowledge\"]\n",
    )
    .unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("task = \"scienceqa\"\nmode = \"replay\"\ncassette = {:?}\ninventory = [\"echo.toml\"]\n", s(&cassette("scienceqa"))),
    )
    .unwrap();
    let o = run(&["solve", "--config", s(&config), "--question", "Is this an echo?", "--plan", "[Echo]", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("1. Echo") && text.contains("answer: Is this an echo?"), "{text}");
}

#[test]
fn cassette_commands() {
    let o = run(&["cassette", "check", s(&cassette("tabmwp"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("models   gpt-4"));
    let o = run(&["cassette", "list", s(&cassette("tabmwp"))]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() > 10);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ndjson");
    std::fs::write(&bad, "not json\n").unwrap();
    assert_eq!(run(&["cassette", "check", s(&bad)]).status.code(), Some(2));
}
