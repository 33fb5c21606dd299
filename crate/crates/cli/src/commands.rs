use crate::config::RunConfig;
use crate::{CliError, QueryArgs, RunArgs};
use plancompose_core::eval::{ablation_run, load_benchmark, query_from_record, run_benchmark, AccuracyReport, AnalysisReport, BenchRun, BenchmarkItem};
use plancompose_core::executor::{read_traces, write_traces, Engine, ExecutionTrace};
use plancompose_core::gateway::Cassette;
use plancompose_core::inventory::Inventory;
use plancompose_core::plan::parse_plan;
use plancompose_core::planner::PlanOutcome;
use plancompose_core::stub::{StubConfig, StubServer};
use plancompose_core::types::{Plan, PlanSource, Status};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

fn load_config(run: &RunArgs) -> Result<RunConfig, CliError> {
    RunConfig::load(run.config.as_deref(), run.overrides())
}

fn scripted_plan(text: &str, inv: &Inventory) -> Result<Plan, CliError> {
    let mut plan = parse_plan(text, &inv.name_list()).map_err(|e| CliError::Config(format!("--plan: {e}")))?;
    plan.source = PlanSource::Scripted;
    plan.raw_planner_text = None;
    Ok(plan)
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Crash(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, body).map_err(|e| CliError::Crash(format!("{}: {e}", path.display())))
}

fn save_traces(path: &Path, traces: &[ExecutionTrace]) -> Result<(), CliError> {
    write_traces(path, traces).map_err(|e| CliError::Crash(e.to_string()))
}

fn query_record(args: &QueryArgs) -> Result<(Value, Option<PathBuf>), CliError> {
    if let Some(path) = &args.query {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok((v, path.parent().map(Path::to_path_buf)));
    }
    let question = args.question.as_ref().ok_or_else(|| CliError::Config("pass --query FILE or --question TEXT".into()))?;
    let mut v = json!({ "pid": args.id.clone().unwrap_or_else(|| "query".into()), "question": question });
    if !args.choices.is_empty() {
        v["choices"] = json!(args.choices);
    }
    for (key, value) in [
        ("hint", &args.context),
        ("table", &args.table),
        ("table_title", &args.table_title),
        ("unit", &args.unit),
        ("image", &args.image),
    ] {
        if let Some(s) = value {
            v[key] = json!(s);
        }
    }
    Ok((v, None))
}

fn plan_line(plan: &Plan) -> String {
    let source = match plan.source {
        PlanSource::Planner => "planner",
        PlanSource::Fallback => "fallback",
        PlanSource::Scripted => "scripted",
    };
    format!("plan ({source}): [{}]", plan.modules.join(", "))
}

pub fn solve(run: &RunArgs, query: &QueryArgs) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let (record, dir) = query_record(query)?;
    let engine = cfg.engine(dir.as_deref())?;
    let q = query_from_record(&record, cfg.task).map_err(|e| CliError::Config(format!("query: {e}")))?;
    let outcome = match &run.plan {
        Some(text) => PlanOutcome::scripted(scripted_plan(text, &engine.inventory)?),
        None => engine.plan(&q),
    };
    let (answer, trace) = engine.execute(&q, &outcome);

    println!("{}", plan_line(&trace.plan));
    if let Some(reason) = &trace.fallback_reason {
        println!("fallback reason: {reason}");
    }
    for s in &trace.steps {
        let status = match &s.status {
            Status::Ok => "ok".to_string(),
            Status::Failed(r) => format!("failed: {r}"),
        };
        let flags = if s.flags.is_empty() { String::new() } else { format!(" {:?}", s.flags) };
        println!("  {}. {:<20} {status}{flags}", s.index + 1, s.module);
    }
    println!("answer: {}", answer.normalized);
    let path = cfg.out.join("trace.jsonl");
    save_traces(&path, &[trace])?;
    println!("trace: {}", path.display());
    Ok(())
}

fn load_items(cfg: &RunConfig, path: &Path) -> Result<Vec<BenchmarkItem>, CliError> {
    let bench = load_benchmark(path, cfg.task).map_err(|e| CliError::Config(e.to_string()))?;
    for r in &bench.rejected {
        eprintln!("skipped item {}: {}", r.pid, r.reason);
    }
    if bench.items.is_empty() {
        return Err(CliError::Config(format!("benchmark {} has no usable items", path.display())));
    }
    Ok(bench.items)
}

fn write_run(dir: &Path, items: &[BenchmarkItem], run: &BenchRun) -> Result<AccuracyReport, CliError> {
    let report = AccuracyReport::build(items, run);
    save_traces(&dir.join("traces.jsonl"), &run.traces())?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    write_file(&dir.join("report.txt"), &report.summary())?;
    Ok(report)
}

fn bench_engine(cfg: &RunConfig, benchmark: &Path) -> Result<Engine, CliError> {
    cfg.engine(benchmark.parent())
}

pub fn bench(run: &RunArgs, benchmark: &Path) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let items = load_items(&cfg, benchmark)?;
    let engine = bench_engine(&cfg, benchmark)?;
    let plan = run.plan.as_deref().map(|t| scripted_plan(t, &engine.inventory)).transpose()?;
    let result = run_benchmark(&engine, &items, cfg.jobs, plan.as_ref());
    let report = write_run(&cfg.out, &items, &result)?;
    print!("{}", report.summary());
    println!("\nwrote {}", cfg.out.display());
    if report.crashes > 0 {
        return Err(CliError::Crash(format!("{} items crashed the harness", report.crashes)));
    }
    Ok(())
}

pub fn ablate(run: &RunArgs, benchmark: &Path) -> Result<(), CliError> {
    if run.plan.is_some() {
        return Err(CliError::Config("ablate runs the planner; --plan is not accepted".into()));
    }
    let cfg = load_config(run)?;
    if cfg.options.disabled.is_empty() {
        return Err(CliError::Config("ablate needs at least one --disable MODULE".into()));
    }
    let items = load_items(&cfg, benchmark)?;
    let mut engine = bench_engine(&cfg, benchmark)?;
    let disabled = std::mem::take(&mut engine.options.disabled);
    let (report, baseline, ablated) =
        ablation_run(&mut engine, &items, cfg.jobs, &disabled).map_err(|e| CliError::Config(e.to_string()))?;
    write_run(&cfg.out.join("baseline"), &items, &baseline)?;
    write_run(&cfg.out.join("ablated"), &items, &ablated)?;
    write_file(&cfg.out.join("ablation.json"), &report.to_json())?;
    write_file(&cfg.out.join("ablation.txt"), &report.summary())?;
    print!("{}", report.summary());
    println!("\nwrote {}", cfg.out.display());
    let crashes = baseline.crashes() + ablated.crashes();
    if crashes > 0 {
        return Err(CliError::Crash(format!("{crashes} items crashed the harness")));
    }
    Ok(())
}

pub fn analyze(out: Option<&Path>, paths: &[PathBuf]) -> Result<(), CliError> {
    let mut traces = Vec::new();
    for p in paths {
        traces.extend(read_traces(p).map_err(|e| CliError::Config(e.to_string()))?);
    }
    if traces.is_empty() {
        return Err(CliError::Config("the trace files hold no traces".into()));
    }
    let report = AnalysisReport::build(&traces);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"));
    let written = report.write_to(&dir).map_err(|e| CliError::Crash(format!("{}: {e}", dir.display())))?;
    print!("{}", report.summary());
    println!();
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn open_cassette(path: &Path) -> Result<Cassette, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("cassette {} does not exist", path.display())));
    }
    Cassette::open(path).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cassette_list(path: &Path) -> Result<(), CliError> {
    for r in open_cassette(path)?.records() {
        let first = r.response.lines().next().unwrap_or_default();
        let preview: String = first.chars().take(60).collect();
        println!("{}  {:<16} {:>6}  {preview}", &r.digest[..12.min(r.digest.len())], r.model_id, r.response.len());
    }
    Ok(())
}

pub fn cassette_check(path: &Path) -> Result<(), CliError> {
    let cassette = open_cassette(path)?;
    let bad: Vec<_> = cassette
        .records()
        .into_iter()
        .filter(|r| r.digest.len() != 64 || !r.digest.bytes().all(|b| b.is_ascii_hexdigit()))
        .map(|r| r.digest)
        .collect();
    let meta = cassette.metadata();
    println!("records  {}", meta.records);
    println!("models   {}", meta.model_ids.into_iter().collect::<Vec<_>>().join(", "));
    if !bad.is_empty() {
        return Err(CliError::Config(format!("{} records have malformed digests: {}", bad.len(), bad.join(", "))));
    }
    println!("ok");
    Ok(())
}

pub fn stub_server(config: Option<&Path>, addr: &str) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<StubConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => StubConfig::default(),
    };
    let server = StubServer::bind(addr, cfg).map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
    println!("stub serving on {} (vision {0}, search {0}/search, chat {0}/v1/chat/completions)", server.base_url());
    server.join();
    Ok(())
}
