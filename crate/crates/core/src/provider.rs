//! Service-provider daemon: announce, take paid jobs, train, publish.
//!
//! Each accepted request runs in its own session task:
//! payment-required, wait for a valid receipt, processing heartbeats while
//! the optimizer runs on a blocking thread, store and re-verify the output,
//! success, result. A customer that leaves the completion invoice unpaid
//! past the grace period is blacklisted for the life of the process.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinSet;
use tracing::{debug, info, warn};

use crate::events::{
    build_discoverability, build_feedback, build_file_metadata, build_job_result, parse_job_request, result_kind_for,
    Discoverability, EventError, FeedbackStatus, FileMetadata, JobFeedback, JobResult, ProviderSpec, Task,
    KIND_FEDERATED_TRAINING, KIND_ZAP_RECEIPT,
};
use crate::job::{get_all_params, get_dataset, get_outer_state, put_outer_state, JobError, JobPlan, INFO_OUTER_STATE};
use crate::ml::{inner_optimize, loss, outer_diloco, outer_fedavg, MlError, ModelParams, RunOption};
use crate::nostr::{unix_now, Event, Filter, Keypair};
use crate::payments::{stub_lnurl, validate_receipt, AlwaysSettled, Bolt11Stub, ExpectedPayment, ReceiptCheck};
use crate::relay::{PoolError, RelayPool, SubItem};
use crate::store::{get_model, get_params, put_params, SharedStore, StorageRef};

/// `d` tag of the announcement; one announcement per provider key.
pub const ANNOUNCEMENT_ID: &str = "fedstr-trainer";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Relay(#[from] PoolError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("simulated crash after payment on job {0}")]
    Crashed(usize),
}

/// Misbehaviour switches used to exercise the customer's defences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProviderFaults {
    /// Stop dead right after accepting payment for the n-th inner job (1-based).
    pub crash_after_payment_on_job: Option<usize>,
    /// Overwrite the stored output with different bytes after publishing its digest.
    pub tamper_blob: bool,
    /// Add `N(0, variance)` noise to every inner output.
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub keys: Keypair,
    pub relays: Vec<String>,
    pub supported_kinds: Vec<u16>,
    pub name: String,
    pub spec: ProviderSpec,
    pub price_init_msats: u64,
    pub price_result_msats: u64,
    pub progress_interval: Duration,
    pub payment_timeout: Duration,
    pub grace_period: Duration,
    pub max_jobs: usize,
    /// Also publish a kind-1063 event for every output.
    pub publish_file_metadata: bool,
    pub faults: ProviderFaults,
}

impl ProviderConfig {
    pub fn new(keys: Keypair, relays: Vec<String>) -> Self {
        Self {
            keys,
            relays,
            supported_kinds: vec![KIND_FEDERATED_TRAINING],
            name: "fedstr trainer".into(),
            spec: ProviderSpec {
                hardware: "cpu".into(),
                max_execution_time: "3600".into(),
                model_dimensions_range: "1-1000000".into(),
            },
            price_init_msats: 100,
            price_result_msats: 900,
            progress_interval: Duration::from_secs(5),
            payment_timeout: Duration::from_secs(60),
            grace_period: Duration::from_secs(60),
            max_jobs: 2,
            publish_file_metadata: false,
            faults: ProviderFaults::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.supported_kinds.is_empty() {
            return Err(ProviderError::Config("no supported kinds".into()));
        }
        if self.max_jobs == 0 {
            return Err(ProviderError::Config("max jobs must be at least 1".into()));
        }
        if self.relays.is_empty() {
            return Err(ProviderError::Config("no relays".into()));
        }
        if self.progress_interval.is_zero() {
            return Err(ProviderError::Config("progress interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    AwaitingPayment,
    Running,
    Publishing,
    Done,
    Aborted,
}

struct Shared {
    cfg: ProviderConfig,
    pool: RelayPool,
    store: SharedStore,
    blacklist: Mutex<HashSet<String>>,
    sessions: Mutex<HashMap<String, SessionPhase>>,
    active: AtomicUsize,
    inner_jobs: AtomicUsize,
    receipts: broadcast::Sender<Event>,
}

impl Shared {
    fn me(&self) -> &str {
        self.cfg.keys.public_key()
    }

    fn set_phase(&self, id: &str, p: SessionPhase) {
        self.sessions.lock().expect("sessions lock").insert(id.to_string(), p);
    }

    fn relay_hint(&self) -> Option<String> {
        self.cfg.relays.first().cloned()
    }

    async fn publish(&self, e: &Event) {
        if let Err(err) = self.pool.publish(e).await {
            warn!(kind = e.kind, "publish failed: {err}");
        }
    }

    async fn feedback(&self, req: &Event, status: FeedbackStatus, info: Option<String>, amount: Option<(u64, String)>) {
        let mut fb = JobFeedback::new(status, req.id.clone(), req.pubkey.clone());
        fb.extra_info = info;
        fb.relay_hint = self.relay_hint();
        if let Some((a, b)) = amount {
            fb = fb.with_amount(a, Some(b));
        }
        match build_feedback(&fb, &self.cfg.keys) {
            Ok(e) => self.publish(&e).await,
            Err(err) => warn!("cannot build feedback: {err}"),
        }
    }
}

/// A running provider identity bound to a relay pool.
#[derive(Clone)]
pub struct Provider {
    shared: Arc<Shared>,
    started_at: u64,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider").field("pubkey", &self.public_key()).finish()
    }
}

fn mint_invoice(amount_msats: u64) -> String {
    let mut payment_hash = [0u8; 8];
    rand::thread_rng().fill_bytes(&mut payment_hash);
    Bolt11Stub { amount_msats, payment_hash }.to_string()
}

impl Provider {
    pub async fn connect(cfg: ProviderConfig, store: SharedStore) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let pool = RelayPool::connect(&cfg.relays).await;
        if pool.connected() == 0 {
            return Err(PoolError::NoRelays.into());
        }
        let (receipts, _) = broadcast::channel(1024);
        Ok(Self {
            shared: Arc::new(Shared {
                cfg,
                pool,
                store,
                blacklist: Mutex::new(HashSet::new()),
                sessions: Mutex::new(HashMap::new()),
                active: AtomicUsize::new(0),
                inner_jobs: AtomicUsize::new(0),
                receipts,
            }),
            started_at: unix_now(),
        })
    }

    pub fn public_key(&self) -> &str {
        self.shared.me()
    }

    pub fn lnurl(&self) -> String {
        stub_lnurl(self.public_key())
    }

    pub fn announcement(&self) -> Discoverability {
        let cfg = &self.shared.cfg;
        Discoverability {
            identifier: ANNOUNCEMENT_ID.into(),
            name: cfg.name.clone(),
            about: "Trains linear, logistic and MLP models with FedAvg or DiLoCo".into(),
            lnurl: Some(self.lnurl()),
            supported_kinds: cfg.supported_kinds.clone(),
            topics: vec!["federated-learning".into()],
            specs: vec![cfg.spec.clone()],
        }
    }

    /// Publishes the kind-31990 announcement; returns its id.
    pub async fn announce(&self) -> Result<String, ProviderError> {
        let e = build_discoverability(&self.announcement(), &self.shared.cfg.keys)?;
        self.shared.pool.publish(&e).await?;
        Ok(e.id)
    }

    pub fn blacklist_customer(&self, pubkey: &str) {
        self.shared.blacklist.lock().expect("blacklist lock").insert(pubkey.to_string());
    }

    pub fn is_blacklisted(&self, pubkey: &str) -> bool {
        self.shared.blacklist.lock().expect("blacklist lock").contains(pubkey)
    }

    pub fn session_phase(&self, job_request_id: &str) -> Option<SessionPhase> {
        self.shared.sessions.lock().expect("sessions lock").get(job_request_id).copied()
    }

    /// Serves job requests until every relay connection is gone. Returns
    /// `Crashed` when the crash fault fires.
    pub async fn serve(&self) -> Result<(), ProviderError> {
        let me = self.public_key().to_string();
        let filters = vec![
            Filter::new()
                .kinds(self.shared.cfg.supported_kinds.iter().copied())
                .tag('p', [me.clone()])
                .since(self.started_at),
            Filter::new().kinds([KIND_ZAP_RECEIPT]).tag('p', [me.clone()]).since(self.started_at),
        ];
        let mut sub = self.shared.pool.subscribe(filters).await?;
        let (crash_tx, mut crash_rx) = mpsc::unbounded_channel::<usize>();
        let mut sessions = JoinSet::new();
        let mut seen = HashSet::new();
        info!(pubkey = %me, "provider serving");
        loop {
            tokio::select! {
                Some(job) = crash_rx.recv() => {
                    sessions.abort_all();
                    return Err(ProviderError::Crashed(job));
                }
                Some(done) = sessions.join_next(), if !sessions.is_empty() => {
                    if let Err(e) = done {
                        if e.is_panic() {
                            warn!("session panicked: {e}");
                        }
                    }
                }
                item = sub.recv() => {
                    let ev = match item {
                        Some(SubItem::Event(ev)) => ev,
                        Some(SubItem::EndOfStored) => continue,
                        Some(SubItem::Disconnected) | None => return Ok(()),
                    };
                    if ev.kind == KIND_ZAP_RECEIPT {
                        let _ = self.shared.receipts.send(ev);
                        continue;
                    }
                    if !seen.insert(ev.id.clone()) {
                        continue;
                    }
                    self.accept(ev, &mut sessions, &crash_tx).await;
                }
            }
        }
    }

    async fn accept(&self, ev: Event, sessions: &mut JoinSet<()>, crash: &mpsc::UnboundedSender<usize>) {
        let sh = &self.shared;
        if self.is_blacklisted(&ev.pubkey) {
            debug!(customer = %ev.pubkey, "ignoring blacklisted customer");
            return;
        }
        let req = match parse_job_request(&ev) {
            Ok(r) => r,
            Err(e) => {
                sh.feedback(&ev, FeedbackStatus::Error, Some(format!("bad request: {e}")), None).await;
                return;
            }
        };
        if !req.providers.is_empty() && !req.providers.iter().any(|p| p == sh.me()) {
            return;
        }
        if sh.active.fetch_add(1, Ordering::SeqCst) >= sh.cfg.max_jobs {
            sh.active.fetch_sub(1, Ordering::SeqCst);
            sh.feedback(&ev, FeedbackStatus::Error, Some("busy".into()), None).await;
            return;
        }
        let plan = match JobPlan::from_request(&req) {
            Ok(p) => p,
            Err(e) => {
                sh.active.fetch_sub(1, Ordering::SeqCst);
                sh.feedback(&ev, FeedbackStatus::Error, Some(e.to_string()), None).await;
                return;
            }
        };
        let provider = self.clone();
        let crash = crash.clone();
        sessions.spawn(async move {
            provider.session(ev, plan, crash).await;
        });
    }

    async fn session(&self, req: Event, plan: JobPlan, crash: mpsc::UnboundedSender<usize>) {
        let sh = &*self.shared;
        let mut receipts = sh.receipts.subscribe();
        let release = ActiveGuard(&sh.active);
        if sh.cfg.price_init_msats > 0 {
            sh.set_phase(&req.id, SessionPhase::AwaitingPayment);
            let price = sh.cfg.price_init_msats;
            sh.feedback(&req, FeedbackStatus::PaymentRequired, None, Some((price, mint_invoice(price))))
                .await;
            if !self.await_payment(&mut receipts, &req.id, price, sh.cfg.payment_timeout).await {
                sh.set_phase(&req.id, SessionPhase::Aborted);
                sh.feedback(&req, FeedbackStatus::Error, Some("payment timeout".into()), None).await;
                return;
            }
        }
        if plan.task() == Task::Inner {
            let n = sh.inner_jobs.fetch_add(1, Ordering::SeqCst) + 1;
            if sh.cfg.faults.crash_after_payment_on_job == Some(n) {
                warn!(job = n, "crash fault triggered");
                let _ = crash.send(n);
                std::future::pending::<()>().await;
            }
        }
        sh.set_phase(&req.id, SessionPhase::Running);
        sh.feedback(&req, FeedbackStatus::Processing, Some("started".into()), None).await;

        let outcome = self.run_with_heartbeat(&req, plan).await;
        let (output, reported_loss, info) = match outcome {
            Ok(v) => v,
            Err(msg) => {
                sh.set_phase(&req.id, SessionPhase::Aborted);
                sh.feedback(&req, FeedbackStatus::Error, Some(msg), None).await;
                return;
            }
        };
        sh.set_phase(&req.id, SessionPhase::Publishing);
        let file_metadata_id = if sh.cfg.publish_file_metadata {
            self.publish_file_metadata(&output).await
        } else {
            None
        };
        sh.feedback(&req, FeedbackStatus::Success, None, None).await;
        let price = sh.cfg.price_result_msats;
        let result = JobResult {
            kind: result_kind_for(req.kind).expect("request kinds were filtered"),
            request_json: req.to_json(),
            job_request_id: req.id.clone(),
            relay_hint: sh.relay_hint(),
            customer_pubkey: req.pubkey.clone(),
            amount_msats: (price > 0).then_some(price),
            bolt11: (price > 0).then(|| mint_invoice(price)),
            info,
            output,
            reported_loss,
            file_metadata_id,
            content: String::new(),
        };
        let ev = match build_job_result(&result, &sh.cfg.keys) {
            Ok(e) => e,
            Err(e) => {
                sh.set_phase(&req.id, SessionPhase::Aborted);
                sh.feedback(&req, FeedbackStatus::Error, Some(e.to_string()), None).await;
                return;
            }
        };
        sh.publish(&ev).await;
        sh.set_phase(&req.id, SessionPhase::Done);
        drop(release);
        if price > 0 && !self.await_payment(&mut receipts, &ev.id, price, sh.cfg.grace_period).await {
            warn!(customer = %req.pubkey, "result left unpaid; blacklisting customer");
            self.blacklist_customer(&req.pubkey);
        }
    }

    async fn await_payment(
        &self,
        receipts: &mut broadcast::Receiver<Event>,
        event_id: &str,
        amount: u64,
        timeout: Duration,
    ) -> bool {
        let expected = ExpectedPayment {
            recipient: self.public_key().to_string(),
            lnurl: self.lnurl(),
            amount_msats: Some(amount),
            event_id: Some(event_id.to_string()),
        };
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let ev = match tokio::time::timeout_at(deadline, receipts.recv()).await {
                Err(_) => return false,
                Ok(Err(broadcast::error::RecvError::Lagged(_))) => continue,
                Ok(Err(broadcast::error::RecvError::Closed)) => return false,
                Ok(Ok(ev)) => ev,
            };
            if ev.tag_value("e") != Some(event_id) {
                continue;
            }
            match validate_receipt(&ev, &expected, &AlwaysSettled) {
                ReceiptCheck::Pass => return true,
                ReceiptCheck::Fail(reason) => warn!(receipt = %ev.id, "rejected receipt: {reason}"),
            }
        }
    }

    /// Runs the job on a blocking thread, publishing a processing feedback
    /// every progress interval until it finishes.
    async fn run_with_heartbeat(
        &self,
        req: &Event,
        plan: JobPlan,
    ) -> Result<(StorageRef, Option<f64>, Vec<(String, String)>), String> {
        let sh = &*self.shared;
        let progress: Arc<Mutex<Option<(usize, f64)>>> = Arc::new(Mutex::new(None));
        let store = sh.store.clone();
        let faults = sh.cfg.faults.clone();
        let prog = progress.clone();
        let mut work = tokio::task::spawn_blocking(move || execute(plan, &*store, &faults, &prog));
        let mut tick = tokio::time::interval(sh.cfg.progress_interval);
        tick.tick().await;
        loop {
            tokio::select! {
                done = &mut work => {
                    return match done {
                        Ok(Ok(v)) => Ok(v),
                        Ok(Err(e)) => Err(e.to_string()),
                        Err(e) => Err(format!("worker failed: {e}")),
                    };
                }
                _ = tick.tick() => {
                    let info = match *progress.lock().expect("progress lock") {
                        Some((t, l)) => format!("step {t} loss {l:.6}"),
                        None => "running".into(),
                    };
                    sh.feedback(req, FeedbackStatus::Processing, Some(info), None).await;
                }
            }
        }
    }

    async fn publish_file_metadata(&self, output: &StorageRef) -> Option<String> {
        let m = FileMetadata {
            url: output.url.clone(),
            sha256: output.sha256.clone(),
            mime: "application/octet-stream".into(),
            size_bytes: output.size_bytes,
            alt: Some("model parameters".into()),
            description: String::new(),
        };
        let ev = build_file_metadata(&m, &self.shared.cfg.keys).ok()?;
        self.shared.pool.publish(&ev).await.ok()?;
        Some(ev.id)
    }
}

struct ActiveGuard<'a>(&'a AtomicUsize);

impl Drop for ActiveGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Error)]
enum ExecError {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error("training failed: {0}")]
    Ml(#[from] MlError),
}

type Output = (StorageRef, Option<f64>, Vec<(String, String)>);

fn execute(
    plan: JobPlan,
    store: &dyn crate::store::ModelStore,
    faults: &ProviderFaults,
    progress: &Mutex<Option<(usize, f64)>>,
) -> Result<Output, ExecError> {
    let (params, reported_loss, info) = match plan {
        JobPlan::Inner(job) => {
            let global = get_params(&job.global, store)?;
            let data = get_dataset(&job.data, job.spec.target_kind(), store)?;
            let mut report = |t: usize, l: f64| {
                *progress.lock().expect("progress lock") = Some((t, l));
            };
            let mut out = inner_optimize(
                &global,
                &job.spec.model,
                job.spec.loss,
                &data,
                job.run_option,
                &job.spec.hyperparams,
                &mut report,
            )?;
            if let Some(var) = faults.noise_variance {
                let normal = Normal::new(0.0, var.sqrt()).map_err(|e| MlError::InvalidHyperparams(e.to_string()))?;
                let mut rng = rand::thread_rng();
                out.values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            let l = loss(&out, &job.spec.model, job.spec.loss, &data)?;
            (out, l.is_finite().then_some(l), Vec::new())
        }
        JobPlan::Outer(job) => {
            let global = get_params(&job.global, store)?;
            let inner = get_all_params(&job.inner, store)?;
            let state = get_outer_state(&job.state, store)?;
            let (next, state) = match job.run_option {
                RunOption::FedAvg => (outer_fedavg(&inner, &state.weights)?, state),
                RunOption::DiLoCo => outer_diloco(&global, &inner, &state)?,
            };
            let sref = put_outer_state(&state, store)?;
            (next, None, vec![(INFO_OUTER_STATE.to_string(), sref.to_tag_value())])
        }
    };
    let out = store_verified(&params, store)?;
    if faults.tamper_blob {
        let mut bytes = get_model(&out, store)?;
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x5a;
        store.write_blob(&out.sha256, &bytes)?;
    }
    Ok((out, reported_loss, info))
}

/// Stores `p` and reads it back so the published digest is known to match
/// what the URL serves.
fn store_verified(p: &ModelParams, store: &dyn crate::store::ModelStore) -> Result<StorageRef, ExecError> {
    let r = put_params(p, store)?;
    get_model(&r, store)?;
    Ok(r)
}
