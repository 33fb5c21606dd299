//! Regenerates the mini benchmark and its replay cassettes.
//!
//! Reads `fixtures/mini/authoring/<task>.json` (item, scripted planner text and
//! per-module responses), writes `fixtures/mini/<task>.jsonl` and records
//! `fixtures/mini/cassettes/<task>.ndjson` by running the engine in record mode
//! against a scripted chat backend and the local tool stub.
//!
//!     cargo run -p plancompose-core --example author_fixtures

use plancompose_core::eval::{parse_benchmark, run_benchmark};
use plancompose_core::executor::Engine;
use plancompose_core::gateway::{Cassette, ChatRequest, Gateway, GatewayError};
use plancompose_core::inventory::{inventory_for_task, Backend};
use plancompose_core::modules::adapters::{AdapterEndpoints, Adapters};
use plancompose_core::modules::prompt::TemplateSet;
use plancompose_core::stub::{StubConfig, StubServer};
use plancompose_core::types::Task;
use serde::Deserialize;
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

const ABLATED: &str = "Knowledge_Retrieval";

#[derive(Debug, Deserialize)]
struct Authored {
    item: Value,
    planner: String,
    responses: BTreeMap<String, String>,
    #[serde(default)]
    ablated: BTreeMap<String, String>,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    ocr: Option<Value>,
    #[serde(default)]
    search: Option<Vec<String>>,
}

/// Planner text, base responses and ablated responses for one item.
type Script = (String, BTreeMap<String, String>, BTreeMap<String, String>);

#[derive(Default)]
struct Current {
    pid: String,
    ablated: bool,
}

/// Instruction prefix → module name, for telling prompts apart.
fn prompt_prefixes(task: Task) -> Vec<(String, String)> {
    let templates = TemplateSet::shipped();
    let mut out = vec![];
    let planner = templates.get(&format!("{}/planner", task.as_str())).expect("planner template");
    let head = planner.instruction.split("{modules}").next().unwrap_or_default();
    out.push((head.to_string(), "planner".to_string()));
    for spec in &inventory_for_task(task).specs {
        if let Backend::LlmPrompted { template, .. } = &spec.backend {
            let t = templates.get(template).expect("module template");
            out.push((t.instruction.clone(), spec.name.clone()));
        }
    }
    out
}

fn without_module(plan_text: &str, module: &str) -> String {
    match serde_json::from_str::<Vec<String>>(plan_text) {
        Ok(names) => {
            let kept: Vec<_> = names.into_iter().filter(|n| n != module).collect();
            serde_json::to_string(&kept).expect("list serializes").replace("\",\"", "\", \"")
        }
        Err(_) => plan_text.to_string(),
    }
}

fn author(root: &Path, task: Task) {
    let name = task.as_str();
    let authored: Vec<Authored> =
        serde_json::from_str(&std::fs::read_to_string(root.join(format!("authoring/{name}.json"))).unwrap()).unwrap();

    let mut stub = StubConfig::default();
    let mut lines = String::new();
    for a in &authored {
        let mut item = a.item.clone();
        if let Some(img) = item.get("image").and_then(Value::as_str).map(str::to_string) {
            if let Some(c) = &a.caption {
                stub.captions.insert(img.clone(), c.clone());
            }
            if let Some(o) = &a.ocr {
                stub.ocr.insert(img.clone(), o.clone());
            }
            item["image"] = Value::String(format!("images/{img}"));
        }
        if let Some(snippets) = &a.search {
            let key = a
                .responses
                .get("Query_Generator")
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| item["question"].as_str().unwrap_or_default().to_string());
            stub.search.insert(key, snippets.clone());
        }
        lines.push_str(&serde_json::to_string(&item).unwrap());
        lines.push('\n');
    }
    let bench_path = root.join(format!("{name}.jsonl"));
    std::fs::write(&bench_path, &lines).unwrap();
    let bench = parse_benchmark(&lines, task, name).unwrap();
    assert!(bench.rejected.is_empty(), "{:?}", bench.rejected);

    let by_pid: BTreeMap<String, &Authored> =
        authored.iter().map(|a| (a.item["pid"].as_str().unwrap().to_string(), a)).collect();
    let current = Arc::new(Mutex::new(Current::default()));
    let prefixes = prompt_prefixes(task);
    let responses: BTreeMap<String, Script> = by_pid
        .iter()
        .map(|(pid, a)| (pid.clone(), (a.planner.clone(), a.responses.clone(), a.ablated.clone())))
        .collect();
    let state = current.clone();
    let backend = move |req: &ChatRequest| -> Result<String, GatewayError> {
        let cur = state.lock().unwrap();
        let module = prefixes
            .iter()
            .filter(|(p, _)| req.prompt.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, m)| m.as_str())
            .unwrap_or_else(|| panic!("unrecognized prompt for {}", cur.pid));
        let (planner, base, ablated) = &responses[&cur.pid];
        let text = match (module, cur.ablated) {
            ("planner", false) => planner.clone(),
            ("planner", true) => without_module(planner, ABLATED),
            (m, true) if ablated.contains_key(m) => ablated[m].clone(),
            (m, _) => base.get(m).cloned().unwrap_or_else(|| panic!("{}: no scripted response for {m}", cur.pid)),
        };
        Ok(text)
    };

    let server = StubServer::start(stub).unwrap();
    let cassette_path = root.join(format!("cassettes/{name}.ndjson"));
    let _ = std::fs::remove_file(&cassette_path);
    let gateway = Gateway::record(Arc::new(backend), Cassette::open_for_append(&cassette_path).unwrap());
    let adapters = Adapters::new(AdapterEndpoints {
        vision: Some(server.base_url()),
        search: Some(format!("{}/search", server.base_url())),
        timeout: None,
    })
    .with_image_root(root);
    let mut engine = Engine::new(inventory_for_task(task), gateway).with_adapters(adapters);

    let mut passes = vec![false];
    if task == Task::ScienceQA {
        passes.push(true);
    }
    for ablated in passes {
        engine.options.disabled = if ablated { BTreeSet::from([ABLATED.to_string()]) } else { BTreeSet::new() };
        let mut correct = 0;
        for item in &bench.items {
            {
                let mut cur = current.lock().unwrap();
                cur.pid = item.query.id.clone();
                cur.ablated = ablated;
            }
            let run = run_benchmark(&engine, std::slice::from_ref(item), Some(1), None);
            let r = &run.results[0];
            correct += usize::from(r.correct);
            println!("{name} {} {:<8} {:<28} {}", if ablated { "ablated" } else { "base   " }, r.pid, r.answer.normalized, r.correct);
        }
        println!("{name}: {correct}/{} correct", bench.items.len());
    }
    println!("{}: {} records", cassette_path.display(), engine.gateway.cassette().map_or(0, Cassette::len));
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    std::fs::create_dir_all(root.join("cassettes")).unwrap();
    author(&root, Task::ScienceQA);
    author(&root, Task::TabMWP);
}
