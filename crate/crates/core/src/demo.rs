//! End-to-end run on one machine: a relay process, provider processes and
//! an in-process customer, all on loopback with a shared file store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, BufReader, Lines};
use tokio::process::{Child, ChildStdout, Command};

use crate::audit::{check_flow_order, read_event_log, receipted_msats};
use crate::customer::{run_training, CustomerConfig, CustomerError, OuterMode, Timeouts};
use crate::ml::{synthetic_classify, synthetic_linear, Dataset, InnerHyperparams, LossSpec, ModelSpec, RunOption};
use crate::nostr::generate_keypair;
use crate::store::{get_model, FileStore, SharedStore, MODEL_ROOT_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DemoDataset {
    SyntheticLinear { n: usize, d: usize, noise: f64 },
    SyntheticClassify { n: usize, d: usize, classes: usize },
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    /// The `fedstr` binary used to start the relay and providers.
    pub exe: PathBuf,
    pub providers: usize,
    pub rounds: usize,
    pub run_option: RunOption,
    pub outer_mode: OuterMode,
    pub dataset: DemoDataset,
    pub seed: u64,
    /// Holds the model store, relay log, round log and summary unless
    /// overridden.
    pub work_dir: PathBuf,
    pub model_root: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
    pub summary_out: Option<PathBuf>,
    pub kill_provider_at: Option<usize>,
    pub tamper_blob: bool,
    pub malicious_provider: bool,
    pub job_timeout: Duration,
}

impl DemoConfig {
    pub fn new(exe: PathBuf, work_dir: PathBuf) -> Self {
        Self {
            exe,
            providers: 2,
            rounds: 3,
            run_option: RunOption::FedAvg,
            outer_mode: OuterMode::Local,
            dataset: DemoDataset::SyntheticLinear {
                n: 3000,
                d: 10,
                noise: 0.1,
            },
            seed: 7,
            work_dir,
            model_root: None,
            log_out: None,
            summary_out: None,
            kill_provider_at: None,
            tamper_blob: false,
            malicious_provider: false,
            job_timeout: Duration::from_secs(4),
        }
    }

    fn any_fault(&self) -> bool {
        self.kill_provider_at.is_some() || self.tamper_blob || self.malicious_provider
    }
}

/// Machine-readable outcome of one demo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub ok: bool,
    pub rounds_completed: usize,
    pub initial_loss: Option<f64>,
    /// Full-dataset mean loss after each round.
    pub losses: Vec<f64>,
    pub final_loss: Option<f64>,
    pub hash_verifications: usize,
    pub integrity_errors: usize,
    pub validations_passed: usize,
    pub validations_failed: usize,
    pub validations_deferred: usize,
    pub reassignments: usize,
    pub payments: usize,
    pub msats_receipted: BTreeMap<String, u64>,
    pub flow_jobs_checked: usize,
    pub flow_violations: Vec<String>,
    pub final_sha256: String,
    pub final_url: String,
    pub final_blob_verified: bool,
    pub relay_url: String,
    pub loopback_only: bool,
    pub round_log: PathBuf,
    pub relay_log: PathBuf,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid demo config: {0}")]
    Config(String),
    #[error("{what} failed to start: {reason}")]
    Spawn { what: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Customer(#[from] CustomerError),
}

struct Spawned {
    child: Child,
    lines: Lines<BufReader<ChildStdout>>,
}

async fn spawn(exe: &Path, args: &[String], model_root: &Path, what: &str) -> Result<Spawned, DemoError> {
    let mut child = Command::new(exe)
        .args(args)
        .env(MODEL_ROOT_ENV, model_root)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| DemoError::Spawn {
            what: what.into(),
            reason: e.to_string(),
        })?;
    let stdout = child.stdout.take().expect("stdout is piped");
    Ok(Spawned {
        child,
        lines: BufReader::new(stdout).lines(),
    })
}

/// Waits for a stdout line starting with `prefix` and returns the rest.
async fn expect_line(s: &mut Spawned, prefix: &str, what: &str) -> Result<String, DemoError> {
    let fail = |reason: String| DemoError::Spawn {
        what: what.into(),
        reason,
    };
    let read = async {
        while let Some(line) = s.lines.next_line().await? {
            if let Some(rest) = line.strip_prefix(prefix) {
                return Ok::<_, std::io::Error>(Some(rest.trim().to_string()));
            }
        }
        Ok(None)
    };
    match tokio::time::timeout(Duration::from_secs(20), read).await {
        Ok(Ok(Some(v))) => Ok(v),
        Ok(Ok(None)) => Err(fail("exited before becoming ready".into())),
        Ok(Err(e)) => Err(fail(e.to_string())),
        Err(_) => Err(fail("not ready within 20 s".into())),
    }
}

fn is_loopback(u: &str) -> bool {
    match url::Url::parse(u) {
        Ok(p) if p.scheme() == "file" => true,
        Ok(p) => matches!(p.host_str(), Some("127.0.0.1" | "localhost" | "[::1]")),
        Err(_) => false,
    }
}

fn build_dataset(d: DemoDataset, seed: u64) -> Result<(Dataset, ModelSpec, LossSpec), DemoError> {
    let err = |e: crate::ml::MlError| DemoError::Config(e.to_string());
    Ok(match d {
        DemoDataset::SyntheticLinear { n, d, noise } => {
            (synthetic_linear(n, d, noise, seed).map_err(err)?.0, ModelSpec::linear(d), LossSpec::Mse)
        }
        DemoDataset::SyntheticClassify { n, d, classes } => (
            synthetic_classify(n, d, classes, seed).map_err(err)?,
            ModelSpec::logistic(d, classes),
            LossSpec::CrossEntropy,
        ),
    })
}

/// Runs the demo and writes the round log and summary. Returns the
/// summary even when training failed; `ok` tells the two apart.
pub async fn run_demo(cfg: &DemoConfig) -> Result<DemoSummary, DemoError> {
    if cfg.providers == 0 || cfg.rounds == 0 {
        return Err(DemoError::Config("providers and rounds must be at least 1".into()));
    }
    std::fs::create_dir_all(&cfg.work_dir)?;
    let model_root = cfg.model_root.clone().unwrap_or_else(|| cfg.work_dir.join("models"));
    let store = FileStore::new(&model_root).map_err(|e| DemoError::Config(e.to_string()))?;
    let relay_log = cfg.work_dir.join("relay.jsonl");
    let round_log = cfg.log_out.clone().unwrap_or_else(|| cfg.work_dir.join("rounds.jsonl"));
    let _ = std::fs::remove_file(&relay_log);

    let mut relay = spawn(
        &cfg.exe,
        &[
            "relay".into(),
            "serve".into(),
            "--bind".into(),
            "127.0.0.1:0".into(),
            "--log-file".into(),
            relay_log.display().to_string(),
        ],
        &model_root,
        "relay",
    )
    .await?;
    let relay_url = expect_line(&mut relay, "listening ", "relay").await?;

    let total = cfg.providers + usize::from(cfg.any_fault());
    let mut providers = Vec::new();
    let mut prefer = Vec::new();
    for i in 0..total {
        let mut args: Vec<String> = [
            "provider",
            "run",
            "--relays",
            &relay_url,
            "--ephemeral",
            "--price-init",
            "100",
            "--price-result",
            "900",
            "--max-jobs",
            "2",
            "--progress-interval-ms",
            "250",
            "--payment-timeout-secs",
            "10",
            "--grace-secs",
            "30",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        if i == 0 {
            if let Some(r) = cfg.kill_provider_at {
                args.extend(["--crash-after-payment-on-job".into(), r.to_string()]);
            }
            if cfg.tamper_blob {
                args.push("--tamper-blob".into());
            }
            if cfg.malicious_provider {
                args.extend(["--noise-variance".into(), "10".into()]);
            }
        }
        let what = format!("provider {i}");
        let mut p = spawn(&cfg.exe, &args, &model_root, &what).await?;
        let pk = expect_line(&mut p, "ready ", &what).await?;
        if i < cfg.providers {
            prefer.push(pk);
        }
        providers.push(p);
    }

    let (data, model, loss) = build_dataset(cfg.dataset, cfg.seed)?;
    let mut ccfg = CustomerConfig::new(generate_keypair(None).expect("random keys"), vec![relay_url.clone()], data, model, loss);
    ccfg.num_pr = cfg.providers;
    ccfg.num_jobs = cfg.rounds;
    ccfg.run_option = cfg.run_option;
    ccfg.outer_mode = cfg.outer_mode;
    ccfg.seed = cfg.seed;
    ccfg.prefer = prefer;
    ccfg.log_out = Some(round_log.clone());
    ccfg.timeouts = Timeouts {
        feedback_interval: Duration::from_millis(100),
        job_timeout: cfg.job_timeout,
        discovery_window: Duration::from_secs(5),
    };
    ccfg.hyperparams = InnerHyperparams {
        epochs: if cfg.run_option == RunOption::DiLoCo { 50 } else { 5 },
        batch_size: 16,
        learning_rate: if cfg.run_option == RunOption::DiLoCo { 0.02 } else { 0.05 },
        ..InnerHyperparams::default()
    };
    let shared: SharedStore = Arc::new(store.clone());
    let outcome = run_training(ccfg, shared).await;

    for mut p in providers {
        let _ = p.child.kill().await;
    }
    let _ = relay.child.kill().await;

    let events = read_event_log(&relay_log).unwrap_or_default();
    let flow = check_flow_order(&events);
    let receipted = receipted_msats(&events);
    let summary = match outcome {
        Ok(out) => {
            let final_blob_verified = get_model(&out.final_ref, &store).is_ok();
            let mut urls: Vec<&str> = vec![relay_url.as_str(), out.final_ref.url.as_str()];
            urls.extend(out.rounds.iter().map(|r| r.global.url.as_str()));
            let loopback_only = urls.iter().all(|u| is_loopback(u));
            let completed = out.rounds.len() == cfg.rounds;
            DemoSummary {
                ok: completed && flow.violations.is_empty() && final_blob_verified && loopback_only,
                rounds_completed: out.rounds.len(),
                initial_loss: Some(out.initial_data_loss),
                losses: out.rounds.iter().map(|r| r.data_loss).collect(),
                final_loss: out.rounds.last().map(|r| r.data_loss),
                hash_verifications: out.stats.hash_verifications,
                integrity_errors: out.stats.integrity_errors,
                validations_passed: out.stats.validations_passed,
                validations_failed: out.stats.validations_failed,
                validations_deferred: out.stats.validations_deferred,
                reassignments: out.stats.reassignments,
                payments: out.stats.payments,
                msats_receipted: receipted,
                flow_jobs_checked: flow.jobs_checked,
                flow_violations: flow.violations,
                final_sha256: out.final_ref.sha256.clone(),
                final_url: out.final_ref.url.clone(),
                final_blob_verified,
                relay_url,
                loopback_only,
                round_log,
                relay_log,
                error: None,
            }
        }
        Err(e) => DemoSummary {
            ok: false,
            rounds_completed: 0,
            initial_loss: None,
            losses: Vec::new(),
            final_loss: None,
            hash_verifications: 0,
            integrity_errors: 0,
            validations_passed: 0,
            validations_failed: 0,
            validations_deferred: 0,
            reassignments: 0,
            payments: 0,
            msats_receipted: receipted,
            flow_jobs_checked: flow.jobs_checked,
            flow_violations: flow.violations,
            final_sha256: String::new(),
            final_url: String::new(),
            final_blob_verified: false,
            loopback_only: is_loopback(&relay_url),
            relay_url,
            round_log,
            relay_log,
            error: Some(e.to_string()),
        },
    };
    let summary_path = cfg.summary_out.clone().unwrap_or_else(|| cfg.work_dir.join("summary.json"));
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}
