use plancompose_core::eval::{ablation_run, load_benchmark, run_benchmark, BenchmarkItem};
use plancompose_core::executor::{Engine, ExecutionTrace};
use plancompose_core::gateway::{Cassette, Gateway};
use plancompose_core::inventory::inventory_for_task;
use plancompose_core::modules::adapters::Adapters;
use plancompose_core::plan::FallbackReason;
use plancompose_core::types::{Flag, PlanSource, Query, Status, Task};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

fn items(task: Task) -> Vec<BenchmarkItem> {
    load_benchmark(&fixtures().join(format!("{}.jsonl", task.as_str())), task).unwrap().items
}

fn engine(task: Task, strict: bool) -> Engine {
    let cassette = Cassette::open(&fixtures().join(format!("cassettes/{}.ndjson", task.as_str()))).unwrap();
    Engine::new(inventory_for_task(task), Gateway::replay(cassette, strict)).with_adapters(Adapters::default().with_image_root(fixtures()))
}

fn trace_of(task: Task, pid: &str) -> ExecutionTrace {
    let item = items(task).into_iter().find(|i| i.query.id == pid).unwrap();
    engine(task, true).solve(&item.query).1
}

#[test]
fn garbage_and_invalid_plans_fall_back() {
    let t = trace_of(Task::ScienceQA, "sqa-06");
    assert_eq!(t.plan.source, PlanSource::Fallback);
    assert!(matches!(t.fallback_reason, Some(FallbackReason::Unparsable(_))));
    let t = trace_of(Task::ScienceQA, "sqa-14");
    assert!(matches!(t.fallback_reason, Some(FallbackReason::ConstraintViolation(_))));
    assert_eq!(t.modules(), ["Solution_Generator", "Answer_Generator"]);
    let t = trace_of(Task::TabMWP, "tab-19");
    assert_eq!(t.modules(), ["Program_Generator", "Program_Verifier", "Program_Executor", "Answer_Generator"]);
    assert!(t.plan.raw_planner_text.as_deref().unwrap().contains("Program_Executor"));
}

#[test]
fn rejected_program_is_not_executed() {
    let t = trace_of(Task::TabMWP, "tab-09");
    assert!(t.steps[1].flags.contains(&Flag::VerifierRejected));
    assert_eq!(t.steps[2].status, Status::Failed(plancompose_core::types::FailureReason::VerifierRejected));
    assert!(t.final_answer.is_sentinel());
}

#[test]
fn runtime_fault_leaves_the_solution_path() {
    let t = trace_of(Task::TabMWP, "tab-10");
    assert!(matches!(t.steps[2].status, Status::Failed(_)), "{:?}", t.steps[2].status);
    assert_eq!(t.final_answer.normalized, "4.00");
}

#[test]
fn gated_lookup_in_a_planned_run() {
    let t = trace_of(Task::TabMWP, "tab-04");
    assert!(t.steps[0].flags.contains(&Flag::Gated));
    assert!(t.steps[0].request_digests.is_empty());
}

#[test]
fn empty_search_is_flagged_not_failed() {
    let t = trace_of(Task::ScienceQA, "sqa-19");
    let bs = t.steps.iter().find(|s| s.module == "Bing_Search").unwrap();
    assert!(bs.status.is_ok() && bs.flags.contains(&Flag::EmptySearchResult));
}

#[test]
fn strict_replay_of_an_unrecorded_query_falls_back() {
    let q = Query::new("x", Task::TabMWP, "Something never recorded?");
    let (answer, t) = engine(Task::TabMWP, true).solve(&q);
    assert!(matches!(t.fallback_reason, Some(FallbackReason::PlannerUnavailable(_))));
    assert!(answer.is_sentinel());
}

#[test]
fn hidden_ablation_matches_the_recorded_delta() {
    let qs = items(Task::ScienceQA);
    let mut e = engine(Task::ScienceQA, false);
    let disabled = BTreeSet::from(["Knowledge_Retrieval".to_string()]);
    let (report, base, ablated) = ablation_run(&mut e, &qs, None, &disabled).unwrap();
    assert_eq!((report.baseline_accuracy, report.ablated_accuracy, report.delta), (80.0, 70.0, -10.0));
    assert_eq!(report.skipped_steps, 0);
    assert!(e.options.disabled.is_empty());
    let uses = |r: &plancompose_core::eval::BenchRun| r.traces().iter().filter(|t| t.modules().contains(&"Knowledge_Retrieval")).count();
    assert!(uses(&base) > 0);
    assert_eq!(uses(&ablated), 0);
}

#[test]
fn skip_only_ablation_runs_planned_occurrences_as_identity() {
    let qs = items(Task::ScienceQA);
    let mut e = engine(Task::ScienceQA, false);
    e.options.hide_disabled = false;
    let planned_kr =
        run_benchmark(&e, &qs, None, None).traces().iter().filter(|t| t.modules().contains(&"Knowledge_Retrieval")).count();
    let disabled = BTreeSet::from(["Knowledge_Retrieval".to_string()]);
    let (report, _, ablated) = ablation_run(&mut e, &qs, None, &disabled).unwrap();
    assert_eq!(report.skipped_steps, planned_kr);
    for t in ablated.traces() {
        for s in t.steps.iter().filter(|s| s.module == "Knowledge_Retrieval") {
            assert!(s.flags.contains(&Flag::DisabledSkipped) && s.cache_writes.is_empty());
        }
    }
}

#[test]
fn terminal_module_cannot_be_ablated() {
    let mut e = engine(Task::TabMWP, false);
    let disabled = BTreeSet::from(["Answer_Generator".to_string()]);
    assert!(ablation_run(&mut e, &items(Task::TabMWP), None, &disabled).is_err());
}
