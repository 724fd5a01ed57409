//! Abuse-scenario harness for the redress service.
//!
//! Scenarios are scripted HTTP conversations between adversarial and honest
//! actors, interleaved under a seed and checked against the audit log. The
//! `props` and `sim` modules drive the core library directly with counted,
//! seeded runs.

pub mod burst;
pub mod client;
pub mod junit;
pub mod props;
pub mod scenario;
pub mod scenarios;
pub mod sim;

use std::net::SocketAddr;

use redress_service::{RunningService, ServiceConfig, StartError};
use thiserror::Error;

pub use client::{Api, ClientError};
pub use scenario::{Scenario, ScenarioResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Start(#[from] StartError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Logical time of the first scripted step on a fresh service.
pub const CLOCK_BASE: u64 = 1_000_000;

/// Starts an in-process service on a loopback port, seeded with the fixture
/// world and honoring the logical clock header.
pub async fn embedded(mut config: ServiceConfig) -> Result<RunningService, StartError> {
    config.harness_mode = true;
    let state = redress_service::build_state(&config, true)?;
    redress_service::start(state, SocketAddr::from(([127, 0, 0, 1], 0))).await
}

/// Resolves `all` or a single scenario name.
pub fn select(name: &str) -> Result<Vec<Scenario>, HarnessError> {
    if name == "all" {
        return Ok(scenarios::all());
    }
    scenarios::by_name(name)
        .map(|s| vec![s])
        .ok_or_else(|| HarnessError::UnknownScenario(name.to_owned()))
}

/// Runs `scenarios` in order against `api`. The first starts at
/// [`CLOCK_BASE`] when `fresh`, each later one an hour after the previous
/// run's last event.
pub async fn run_all(scenarios: &[Scenario], api: &Api, seed: u64, fresh: bool) -> Result<Vec<ScenarioResult>, ClientError> {
    let mut out = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let base = (fresh && i == 0).then_some(CLOCK_BASE);
        out.push(scenario::run(s, api, seed, base).await?);
    }
    Ok(out)
}

/// Runs `scenarios` against a fresh embedded service and stops it.
pub async fn run_embedded(scenarios: &[Scenario], seed: u64) -> Result<Vec<ScenarioResult>, HarnessError> {
    let svc = embedded(ServiceConfig::default()).await?;
    let api = Api::new(&svc.base_url());
    let results = run_all(scenarios, &api, seed, true).await;
    svc.stop().await;
    Ok(results?)
}
