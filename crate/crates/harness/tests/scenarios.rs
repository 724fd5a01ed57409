use std::collections::BTreeMap;
use std::process::Command;

use proptest::prelude::*;
use redress_harness::scenario::schedule;
use redress_harness::{run_embedded, scenarios, select, HarnessError};

#[tokio::test]
async fn every_scenario_passes_under_two_seeds() {
    for seed in [1, 2] {
        let results = run_embedded(&scenarios::all(), seed).await.unwrap();
        assert_eq!(results.len(), 4);
        for r in &results {
            assert!(r.passed(), "{}", r.trace());
        }
    }
}

#[tokio::test]
async fn same_seed_gives_same_heads() {
    let heads = |rs: Vec<redress_harness::ScenarioResult>| rs.into_iter().map(|r| r.head).collect::<Vec<_>>();
    let a = heads(run_embedded(&scenarios::all(), 7).await.unwrap());
    let b = heads(run_embedded(&scenarios::all(), 7).await.unwrap());
    assert_eq!(a, b);
}

#[tokio::test]
async fn single_scenario_runs_alone() {
    let one = select("impersonation").unwrap();
    let results = run_embedded(&one, 3).await.unwrap();
    assert!(results[0].passed(), "{}", results[0].trace());
    assert!(matches!(select("nope"), Err(HarnessError::UnknownScenario(_))));
}

#[test]
fn cli_runs_all_and_writes_junit() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("junit.xml");
    let out = Command::new(env!("CARGO_BIN_EXE_harness"))
        .args(["run", "all", "--seed", "5", "--report"])
        .arg(&report)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("4/4 scenarios passed"));
    let xml = std::fs::read_to_string(&report).unwrap();
    assert_eq!(xml.matches("<testsuite ").count(), 4);
    assert!(!xml.contains("<failure"));

    let out = Command::new(env!("CARGO_BIN_EXE_harness")).args(["run", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

proptest! {
    #[test]
    fn schedule_keeps_each_actor_in_order(seed in any::<u64>()) {
        for s in scenarios::all() {
            let order = schedule(&s.phases, seed);
            let total: usize = s.phases.iter().flat_map(|p| &p.0).map(Vec::len).sum();
            prop_assert_eq!(order.len(), total);
            let mut next: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut phase = 0;
            for (p, script, k) in order {
                prop_assert!(p >= phase, "phase {} ran after phase {}", p, phase);
                phase = p;
                let n = next.entry((p, script)).or_default();
                prop_assert_eq!(*n, k);
                *n += 1;
            }
        }
    }
}
