//! Acceptance run: one PASS/FAIL line per criterion, with pinned budgets.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use redress_core::audit::verify_audit_chain;
use redress_harness::props::{attest, ephemeral, minimize, scope, Tally};
use redress_harness::sim::{disclosure, grants, lifecycle};
use redress_harness::{burst, embedded, run_all, run_embedded, scenarios, Api};
use redress_service::ServiceConfig;
use reqwest::Method;
use serde_json::Value;

const SEED: u64 = 0x5eed_2026;
const SCENARIO_SEEDS: [u64; 2] = [1, 2];

const AC1_CONVERSATIONS: usize = 1_000;
const AC2_PAIRS: usize = 5_000;
const AC2_BUNDLES: usize = 500;
const AC3_TAMPERS: usize = 10_000;
const AC4_SCHEDULES: usize = 1_000;
const AC5_RUNS: usize = 500;
const AC5_STEPS: usize = 120;
const AC6_RUNS: usize = 400;
const AC6_THREADED_RUNS: usize = 25;
const AC6_BURST: usize = 40;
const AC6_VIEW_LIMIT: u32 = 5;
const AC7_FUZZ_RUNS: usize = 300;
const AC7_STEPS: usize = 150;

type Verdict = Result<String, String>;

fn tally(t: Tally) -> Verdict {
    if t.ok() {
        Ok(t.to_string())
    } else {
        Err(t.to_string())
    }
}

fn need(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn ac1() -> Verdict {
    let t = scope::run(SEED, AC1_CONVERSATIONS);
    need(t.cases == scope::PRESETS.len() + 5 * AC1_CONVERSATIONS, format!("case count {}", t.cases))?;
    tally(t)
}

fn ac2() -> Verdict {
    let mut t = minimize::monotonicity(SEED, AC2_PAIRS);
    need(t.cases >= AC2_PAIRS, format!("only {} comparable pairs", t.cases))?;
    let r = minimize::removal(SEED, AC2_BUNDLES);
    need(r.cases == AC2_BUNDLES, format!("only {} bundles", r.cases))?;
    t.merge(r);
    tally(t)
}

fn ac3() -> Verdict {
    let t = attest::run(SEED, AC3_TAMPERS);
    need(t.cases >= AC3_TAMPERS + t.noted("untampered"), format!("case count {}", t.cases))?;
    tally(t)
}

fn ac4() -> Verdict {
    let t = ephemeral::run(SEED, AC4_SCHEDULES);
    need(t.noted("seconds-schedules") + t.noted("messages-schedules") == AC4_SCHEDULES, "schedule count")?;
    need(t.noted("boundary-queries") > 0, "no query landed on the inclusive boundary")?;
    tally(t)
}

fn ac5() -> Verdict {
    let t = disclosure::run(SEED, AC5_RUNS, AC5_STEPS);
    need(t.noted("runs") == AC5_RUNS, "run count")?;
    need(t.noted("increases") > 0, "no level increase exercised")?;
    need(t.noted("consent-events") > 0, "no consent event exercised")?;
    tally(t)
}

async fn ac6() -> Verdict {
    let mut t = grants::run(SEED, AC6_RUNS);
    t.merge(grants::threaded(SEED, AC6_THREADED_RUNS, 8, 30));
    let svc = embedded(ServiceConfig::default()).await.map_err(|e| e.to_string())?;
    let api = Api::new(&svc.base_url());
    let b = burst::grant_burst(&api, 1_000_000, AC6_VIEW_LIMIT, AC6_BURST).await.map_err(|e| e.to_string());
    svc.stop().await;
    t.merge(b?);
    need(t.noted("served-limited") == AC6_VIEW_LIMIT as usize, "burst served a different count")?;
    tally(t)
}

fn ac7() -> Verdict {
    let mut t = lifecycle::enumerate();
    need(t.noted("permitted") + t.noted("refused") == (lifecycle::STARTS.len()) * 15, "probe count")?;
    let f = lifecycle::fuzz(SEED, AC7_FUZZ_RUNS, AC7_STEPS);
    need(f.noted("assignments") > 0, "fuzz made no assignment")?;
    t.merge(f);
    tally(t)
}

async fn ac8() -> Verdict {
    let all = scenarios::all();
    let mut lines = Vec::new();
    for seed in SCENARIO_SEEDS {
        let mut heads = Vec::new();
        for _ in 0..2 {
            let results = run_embedded(&all, seed).await.map_err(|e| e.to_string())?;
            if let Some(r) = results.iter().find(|r| !r.passed()) {
                return Err(r.trace());
            }
            need(results.len() == scenarios::NAMES.len(), "scenario count")?;
            heads.push(results.iter().map(|r| r.head.clone()).collect::<Vec<_>>());
        }
        need(heads[0] == heads[1], format!("seed {seed}: heads differ between runs"))?;
        lines.push(format!("seed {seed} head {}", &heads[0].last().expect("four scenarios")[..16]));
    }
    Ok(format!("4 scenarios x {} seeds x 2 runs; {}", SCENARIO_SEEDS.len(), lines.join(", ")))
}

/// Server binary built alongside this test, when present.
fn server_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let bin = dir.join(format!("redress-server{}", std::env::consts::EXE_SUFFIX));
    bin.exists().then_some(bin)
}

struct Server {
    child: Child,
    url: String,
}

fn spawn_server(bin: &Path, config: &Path) -> Result<Server, String> {
    let mut child = Command::new(bin)
        .args(["--seed-fixtures", "--port", "0", "--config"])
        .arg(config)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn {}: {e}", bin.display()))?;
    let mut stdout = BufReader::new(child.stdout.take().expect("piped"));
    let mut line = String::new();
    let url = loop {
        line.clear();
        if stdout.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("server exited before listening".into());
        }
        if let Some(url) = line.trim().strip_prefix("listening on ") {
            break url.to_owned();
        }
    };
    std::thread::spawn(move || std::io::copy(&mut stdout, &mut std::io::sink()));
    Ok(Server { child, url })
}

/// Audit head and every report as its filer sees it.
async fn observe(api: &Api) -> Result<(String, BTreeMap<String, Value>), String> {
    let events = api.audit(0).await.map_err(|e| e.to_string())?;
    need(verify_audit_chain(&events).valid, "audit chain broken")?;
    let last = events.last().ok_or("empty audit log")?;
    let head: String = last.hash.iter().map(|b| format!("{b:02x}")).collect();
    let mut reports = BTreeMap::new();
    for e in events.iter().filter(|e| e.action == "report.file") {
        let id = e.object.split(';').next().and_then(|p| p.strip_prefix("report:")).ok_or("report.file names no report")?;
        let (status, body) = api
            .call(&e.actor, Method::GET, &format!("/reports/{id}"), None, last.at)
            .await
            .map_err(|e| e.to_string())?;
        need(status == 200, format!("{id} read back with {status}"))?;
        reports.insert(id.to_owned(), body);
    }
    Ok((head, reports))
}

async fn ac9() -> Verdict {
    let all = scenarios::all();
    let (first, rest) = all.split_at(2);
    let seed = SCENARIO_SEEDS[0];
    let reference = run_embedded(&all, seed).await.map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let state = dir.path().join("state.json");
    let config = dir.path().join("service.toml");
    std::fs::write(&config, format!("harness_mode = true\npersistence_path = {:?}\n", state.display().to_string()))
        .map_err(|e| e.to_string())?;

    let mut mode = "process killed with SIGKILL";
    let (before, after, finals) = match server_binary() {
        Some(bin) => {
            let mut s = spawn_server(&bin, &config)?;
            let api = Api::new(&s.url);
            let r1 = run_all(first, &api, seed, true).await.map_err(|e| e.to_string())?;
            let before = observe(&api).await?;
            s.child.kill().map_err(|e| e.to_string())?;
            let _ = s.child.wait();
            let mut s = spawn_server(&bin, &config)?;
            let api = Api::new(&s.url);
            let after = observe(&api).await?;
            let r2 = run_all(rest, &api, seed, false).await.map_err(|e| e.to_string())?;
            let end = observe(&api).await?;
            s.child.kill().map_err(|e| e.to_string())?;
            let _ = s.child.wait();
            let s3 = spawn_server(&bin, &config)?;
            let again = observe(&Api::new(&s3.url)).await;
            let mut s3 = s3;
            let _ = s3.child.kill();
            let _ = s3.child.wait();
            need(again? == end, "second restart changed head or reports")?;
            (before, after, r1.into_iter().chain(r2).collect::<Vec<_>>())
        }
        None => {
            mode = "in-process server task aborted (server binary not built)";
            let cfg = ServiceConfig::load(&config).map_err(|e| e.to_string())?;
            let s = embedded(cfg.clone()).await.map_err(|e| e.to_string())?;
            let api = Api::new(&s.base_url());
            let r1 = run_all(first, &api, seed, true).await.map_err(|e| e.to_string())?;
            let before = observe(&api).await?;
            s.kill().await;
            let s = embedded(cfg).await.map_err(|e| e.to_string())?;
            let api = Api::new(&s.base_url());
            let after = observe(&api).await?;
            let r2 = run_all(rest, &api, seed, false).await.map_err(|e| e.to_string())?;
            s.kill().await;
            (before, after, r1.into_iter().chain(r2).collect::<Vec<_>>())
        }
    };
    need(before.0 == after.0, format!("head {} became {}", before.0, after.0))?;
    need(before.1 == after.1, "report states changed across restart")?;
    if let Some(r) = finals.iter().find(|r| !r.passed()) {
        return Err(r.trace());
    }
    let want: Vec<&String> = reference.iter().map(|r| &r.head).collect();
    let got: Vec<&String> = finals.iter().map(|r| &r.head).collect();
    need(want == got, "interrupted run diverged from the uninterrupted one")?;
    Ok(format!("{mode}; {} reports, head {} kept", before.1.len(), &before.0[..16]))
}

struct Outcome {
    name: &'static str,
    verdict: Verdict,
    took: Duration,
    budget: Option<Duration>,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.verdict.is_ok() && self.budget.is_none_or(|b| self.took < b)
    }

    fn line(&self) -> String {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        let budget = self.budget.map_or(String::new(), |b| format!(" < {}s", b.as_secs()));
        let detail = match &self.verdict {
            Ok(d) | Err(d) => d.lines().next().unwrap_or("").to_owned(),
        };
        format!("{tag} {} ({:.2}s{budget}) {detail}", self.name, self.took.as_secs_f64())
    }
}

fn timed(name: &'static str, budget: Option<u64>, f: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let verdict = f();
    Outcome {
        name,
        verdict,
        took: start.elapsed(),
        budget: budget.map(Duration::from_secs),
    }
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    type Job<'a> = (&'static str, Option<u64>, Box<dyn FnOnce() -> Verdict + 'a>);
    let jobs: Vec<Job> = vec![
        ("AC1 scope selection", Some(10), Box::new(ac1)),
        ("AC2 minimization", Some(30), Box::new(ac2)),
        ("AC3 attestation tampering", Some(60), Box::new(ac3)),
        ("AC4 ephemeral window", None, Box::new(ac4)),
        ("AC5 audit replay", None, Box::new(ac5)),
        ("AC6 access grants", None, Box::new(|| rt.block_on(ac6()))),
        ("AC7 lifecycle", None, Box::new(ac7)),
        ("AC8 scenarios", Some(120), Box::new(|| rt.block_on(ac8()))),
        ("AC9 restart", None, Box::new(|| rt.block_on(ac9()))),
    ];
    let mut failed = 0;
    for (name, budget, job) in jobs {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let o = timed(name, budget, job);
        println!("{}", o.line());
        if !o.passed() {
            failed += 1;
            if let Err(e) = &o.verdict {
                eprintln!("{e}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
