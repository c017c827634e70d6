use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::time::Instant;
use tracing::{info, warn};

use crate::events::{
    build_job_request, parse_feedback, parse_job_result, result_kind_for, FeedbackStatus, JobRequest, JobResult,
    KIND_FEEDBACK,
};
use crate::job::{
    get_outer_state, put_dataset, put_outer_state, InnerJob, JobPlan, OuterJob, TrainingSpec, INFO_OUTER_STATE,
};
use crate::ml::{
    init_model, loss, outer_diloco, outer_fedavg, split_dataset, total_loss, Dataset, ModelParams, OuterState,
    RunOption,
};
use crate::nostr::{generate_keypair, unix_now, Event, Filter};
use crate::payments::{create_zap_request, stub_pay, StubNode};
use crate::relay::{MergedSubscription, RelayPool, SubItem};
use crate::store::{get_params, put_params, SharedStore, StorageRef, StoreError};
use crate::validation::{deltas_from_inner, validate_test_a, validate_test_b, TestType, ValidationConfig, Verdict};

use super::{discover_providers, CustomerConfig, CustomerError, DiscoveredProvider, LogPhase, LogRecord, OuterMode, RoundLog};

/// Per-slot phase within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPhase {
    Requested,
    PaymentRequested,
    Paid,
    Processing,
    ResultReady,
    Validated,
    Failed,
    Reassigned,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub hash_verifications: usize,
    pub integrity_errors: usize,
    pub validations_passed: usize,
    pub validations_failed: usize,
    pub validations_deferred: usize,
    pub reassignments: usize,
    pub payments: usize,
    pub msats_paid: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Mean loss of the new global model on the held-out set.
    pub test_loss: f64,
    /// Mean loss on the whole dataset.
    pub data_loss: f64,
    pub providers: Vec<String>,
    pub global: StorageRef,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub final_params: ModelParams,
    pub final_ref: StorageRef,
    pub initial_test_loss: f64,
    pub initial_data_loss: f64,
    pub rounds: Vec<RoundReport>,
    /// Global model before round 1 and after every round.
    pub history: Vec<ModelParams>,
    pub stats: RunStats,
    pub log: Vec<LogRecord>,
}

#[derive(Debug)]
struct Slot {
    label: String,
    base: JobRequest,
    provider: DiscoveredProvider,
    request_id: String,
    phase: SlotPhase,
    attempts: usize,
    last_activity: Instant,
    result_id: Option<String>,
    result: Option<JobResult>,
    output: Option<ModelParams>,
    outer_state: Option<OuterState>,
}

enum Check<'a> {
    Inner { global: &'a ModelParams },
    Outer { series: &'a [ModelParams] },
}

/// Runs a whole training job with the given store.
pub async fn run_training(cfg: CustomerConfig, store: SharedStore) -> Result<TrainingOutcome, CustomerError> {
    Customer::connect(cfg, store).await?.run_training().await
}

/// A connected customer. The round log and statistics stay readable after
/// a failed run.
pub struct Customer {
    cfg: CustomerConfig,
    pool: RelayPool,
    store: SharedStore,
    wallet: StubNode,
    log: RoundLog,
    stats: RunStats,
    denylist: HashSet<String>,
    seen: HashSet<String>,
    vcfg: Option<ValidationConfig>,
    provider_history: HashMap<String, Vec<ModelParams>>,
}

impl Customer {
    pub async fn connect(cfg: CustomerConfig, store: SharedStore) -> Result<Self, CustomerError> {
        cfg.validate()?;
        let log = match &cfg.log_out {
            Some(p) => RoundLog::to_file(p).map_err(|e| CustomerError::Log(format!("{}: {e}", p.display())))?,
            None => RoundLog::new(),
        };
        let pool = RelayPool::connect(&cfg.relays).await;
        if pool.connected() == 0 {
            return Err(CustomerError::RelaysLost);
        }
        Ok(Self {
            wallet: StubNode::new(generate_keypair(None).expect("random keys")),
            cfg,
            pool,
            store,
            log,
            stats: RunStats::default(),
            denylist: HashSet::new(),
            seen: HashSet::new(),
            vcfg: None,
            provider_history: HashMap::new(),
        })
    }

    pub fn log(&self) -> &[LogRecord] {
        self.log.records()
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    fn me(&self) -> &str {
        self.cfg.keys.public_key()
    }

    fn split_holdout(&self) -> (Dataset, Dataset) {
        let d = &self.cfg.dataset;
        if let Some(t) = &self.cfg.test_dataset {
            return (d.clone(), t.clone());
        }
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x7e57));
        let n_test = ((d.len() as f64 * self.cfg.test_fraction).ceil() as usize).clamp(1, d.len().saturating_sub(1));
        let (test, train) = idx.split_at(n_test);
        (d.select(train), d.select(test))
    }

    async fn blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(&dyn crate::store::ModelStore) -> T + Send + 'static,
    ) -> T {
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || f(&*store)).await.expect("store task panicked")
    }

    pub async fn run_training(&mut self) -> Result<TrainingOutcome, CustomerError> {
        let cfg = self.cfg.clone();
        let (train, test) = self.split_holdout();
        let shards = split_dataset(&train, cfg.num_pr, cfg.seed)?;
        let mut shard_refs = Vec::new();
        for s in shards {
            shard_refs.push(self.blocking(move |st| put_dataset(&s, st)).await?);
        }
        let mut global = init_model(&cfg.model)?;
        let initial_total = total_loss(&global, &cfg.model, cfg.loss, &test)?;
        let initial_test_loss = loss(&global, &cfg.model, cfg.loss, &test)?;
        let initial_data_loss = loss(&global, &cfg.model, cfg.loss, &cfg.dataset)?;
        self.vcfg = Some(ValidationConfig {
            test_type: cfg.validation.inner_test,
            gamma_t: cfg.validation.gamma_t.unwrap_or(0.5 * test.len() as f64),
            beta_t: cfg.validation.beta_t.unwrap_or(initial_total),
            tau_c: cfg.validation.tau_c,
            test_dataset: test.clone(),
            loss: cfg.loss,
            model: cfg.model.clone(),
        });
        let g = global.clone();
        let mut global_ref = self.blocking(move |st| put_params(&g, st)).await?;

        let result_kind = result_kind_for(cfg.kind).ok_or_else(|| CustomerError::Config("not a job kind".into()))?;
        let since = unix_now().saturating_sub(1);
        let mut sub = self
            .pool
            .subscribe(vec![
                Filter::new().kinds([KIND_FEEDBACK, result_kind]).tag('p', [self.me().to_string()]).since(since),
            ])
            .await?;

        let mut roster = discover_providers(
            &self.pool,
            cfg.num_pr,
            cfg.kind,
            &self.denylist,
            &cfg.prefer,
            cfg.timeouts.discovery_window,
        )
        .await?;
        let mut state = OuterState {
            weights: cfg.weights.clone(),
            nesterov: cfg.nesterov,
            velocity: Vec::new(),
        };
        let mut history = vec![global.clone()];
        let mut rounds = Vec::new();
        let mut prior: Vec<Option<String>> = vec![None; cfg.num_pr];

        for round in 1..=cfg.num_jobs {
            let mut slots = Vec::new();
            for (k, data) in shard_refs.iter().enumerate() {
                let mut spec = self.training_spec();
                spec.hyperparams.shuffle_seed = cfg
                    .hyperparams
                    .shuffle_seed
                    .wrapping_add(cfg.seed.wrapping_mul(1_000_003))
                    .wrapping_add((round * 1000 + k) as u64);
                let plan = JobPlan::Inner(InnerJob {
                    run_option: cfg.run_option,
                    data: data.clone(),
                    global: global_ref.clone(),
                    spec,
                });
                let mut base = self.base_request(&plan);
                base.prior_result = prior[k].clone();
                slots.push(self.new_slot(format!("shard{k}"), base, roster[k].clone(), round).await?);
            }
            self.drive(&mut slots, round, &mut sub, Check::Inner { global: &global }).await?;
            roster = slots.iter().map(|s| s.provider.clone()).collect();
            for (k, s) in slots.iter().enumerate() {
                prior[k] = s.result_id.clone();
                let out = s.output.clone().expect("validated slots have output");
                self.provider_history.entry(s.provider.pubkey.clone()).or_default().push(out);
            }
            let outputs: Vec<ModelParams> = slots.iter().map(|s| s.output.clone().expect("validated")).collect();
            let (next, next_state) = match cfg.outer_mode {
                OuterMode::Local => match cfg.run_option {
                    RunOption::FedAvg => (outer_fedavg(&outputs, &state.weights)?, state.clone()),
                    RunOption::DiLoCo => outer_diloco(&global, &outputs, &state)?,
                },
                OuterMode::Delegate => {
                    let refs: Vec<StorageRef> = slots
                        .iter()
                        .map(|s| s.result.as_ref().expect("validated").output.clone())
                        .collect();
                    self.delegate_outer(round, &global_ref, refs, &state, &history, &mut sub).await?
                }
            };
            global = next;
            state = next_state;
            let g = global.clone();
            global_ref = self.blocking(move |st| put_params(&g, st)).await?;
            history.push(global.clone());
            let test_loss = loss(&global, &cfg.model, cfg.loss, &test)?;
            let data_loss = loss(&global, &cfg.model, cfg.loss, &cfg.dataset)?;
            info!(round, test_loss, data_loss, "round complete");
            self.log.push(
                round,
                "",
                LogPhase::RoundComplete,
                "",
                format!("test_loss={test_loss} data_loss={data_loss} global={}", global_ref.sha256),
            );
            rounds.push(RoundReport {
                round,
                test_loss,
                data_loss,
                providers: roster.iter().map(|p| p.pubkey.clone()).collect(),
                global: global_ref.clone(),
            });
            if cfg.target_loss.is_some_and(|t| test_loss <= t) {
                break;
            }
        }
        Ok(TrainingOutcome {
            final_params: global,
            final_ref: global_ref,
            initial_test_loss,
            initial_data_loss,
            rounds,
            history,
            stats: self.stats.clone(),
            log: self.log.records().to_vec(),
        })
    }

    fn training_spec(&self) -> TrainingSpec {
        TrainingSpec {
            model: self.cfg.model.clone(),
            loss: self.cfg.loss,
            hyperparams: self.cfg.hyperparams.clone(),
        }
    }

    fn base_request(&self, plan: &JobPlan) -> JobRequest {
        let mut r = plan.to_request(self.cfg.kind, "");
        r.providers.clear();
        r.relays = self.cfg.relays.clone();
        r.bid_msats = Some(self.cfg.payment.init_msats + self.cfg.payment.round_msats);
        r
    }

    async fn new_slot(
        &mut self,
        label: String,
        base: JobRequest,
        provider: DiscoveredProvider,
        round: usize,
    ) -> Result<Slot, CustomerError> {
        let mut slot = Slot {
            label,
            base,
            provider,
            request_id: String::new(),
            phase: SlotPhase::Requested,
            attempts: 0,
            last_activity: Instant::now(),
            result_id: None,
            result: None,
            output: None,
            outer_state: None,
        };
        self.assign(&mut slot, round).await?;
        Ok(slot)
    }

    /// Publishes the slot's request addressed to its current provider.
    async fn assign(&mut self, slot: &mut Slot, round: usize) -> Result<(), CustomerError> {
        let mut req = slot.base.clone();
        req.providers = vec![slot.provider.pubkey.clone()];
        let ev = build_job_request(&req, &self.cfg.keys)?;
        self.pool.publish(&ev).await?;
        slot.request_id = ev.id.clone();
        slot.phase = SlotPhase::Requested;
        slot.last_activity = Instant::now();
        slot.result_id = None;
        slot.result = None;
        slot.output = None;
        slot.outer_state = None;
        self.log.push(round, &slot.provider.pubkey, LogPhase::Requested, &ev.id, slot.label.clone());
        Ok(())
    }

    async fn drive(
        &mut self,
        slots: &mut [Slot],
        round: usize,
        sub: &mut MergedSubscription,
        check: Check<'_>,
    ) -> Result<(), CustomerError> {
        let mut tick = tokio::time::interval(self.cfg.timeouts.feedback_interval);
        loop {
            if slots.iter().all(|s| s.phase == SlotPhase::Validated) {
                return Ok(());
            }
            if slots
                .iter()
                .all(|s| matches!(s.phase, SlotPhase::ResultReady | SlotPhase::Validated))
            {
                self.validate_ready(slots, round, &check).await?;
                continue;
            }
            tokio::select! {
                item = sub.recv() => match item {
                    Some(SubItem::Event(ev)) => self.on_event(slots, round, ev).await?,
                    Some(SubItem::EndOfStored) => {}
                    Some(SubItem::Disconnected) | None => return Err(CustomerError::RelaysLost),
                },
                _ = tick.tick() => {
                    let now = Instant::now();
                    for i in 0..slots.len() {
                        let s = &slots[i];
                        let waiting = !matches!(s.phase, SlotPhase::ResultReady | SlotPhase::Validated);
                        if waiting && now.duration_since(s.last_activity) > self.cfg.timeouts.job_timeout {
                            self.fail(slots, i, round, "timeout".into()).await?;
                        }
                    }
                }
            }
        }
    }

    async fn on_event(&mut self, slots: &mut [Slot], round: usize, ev: Event) -> Result<(), CustomerError> {
        if !self.seen.insert(ev.id.clone()) {
            return Ok(());
        }
        let Some(req_id) = ev.tag_value("e").map(str::to_string) else {
            return Ok(());
        };
        let Some(i) = slots.iter().position(|s| s.request_id == req_id) else {
            return Ok(());
        };
        if ev.pubkey != slots[i].provider.pubkey {
            return Ok(());
        }
        if ev.kind == KIND_FEEDBACK {
            let fb = match parse_feedback(&ev) {
                Ok(f) => f,
                Err(e) => {
                    warn!("unparseable feedback {}: {e}", ev.id);
                    return Ok(());
                }
            };
            slots[i].last_activity = Instant::now();
            let pk = slots[i].provider.pubkey.clone();
            match fb.status {
                FeedbackStatus::PaymentRequired if slots[i].phase == SlotPhase::Requested => {
                    slots[i].phase = SlotPhase::PaymentRequested;
                    let amount = fb.amount_msats.unwrap_or(0);
                    self.log.push(round, &pk, LogPhase::PaymentRequested, &ev.id, format!("{amount} msats"));
                    if amount > self.cfg.payment.init_msats {
                        return self.fail(slots, i, round, format!("asks {amount} msats upfront")).await;
                    }
                    if amount > 0 {
                        let receipt = self.pay(&slots[i].provider, amount, &req_id).await?;
                        self.log.push(round, &pk, LogPhase::Paid, &receipt, format!("{amount} msats"));
                    }
                    slots[i].phase = SlotPhase::Paid;
                }
                FeedbackStatus::Processing
                    if matches!(slots[i].phase, SlotPhase::Requested | SlotPhase::Paid) =>
                {
                    slots[i].phase = SlotPhase::Processing;
                    self.log.push(round, &pk, LogPhase::Processing, &ev.id, fb.extra_info.unwrap_or_default());
                }
                FeedbackStatus::Error => {
                    let why = fb.extra_info.unwrap_or_else(|| "error".into());
                    return self.fail(slots, i, round, format!("provider error: {why}")).await;
                }
                _ => {}
            }
            return Ok(());
        }
        if slots[i].result_id.is_some() {
            return Ok(());
        }
        let result = match parse_job_result(&ev) {
            Ok(r) => r,
            Err(e) => return self.fail(slots, i, round, format!("bad result: {e}")).await,
        };
        slots[i].last_activity = Instant::now();
        let out_ref = result.output.clone();
        let state_ref = match result.info_value(INFO_OUTER_STATE).map(StorageRef::parse_tag_value) {
            None => None,
            Some(Ok((r, _))) => Some(r),
            Some(Err(e)) => return self.fail(slots, i, round, format!("bad outer state ref: {e}")).await,
        };
        let fetched = self
            .blocking(move |st| -> Result<(ModelParams, Option<OuterState>), crate::job::JobError> {
                let p = get_params(&out_ref, st)?;
                let s = state_ref.map(|r| get_outer_state(&r, st)).transpose()?;
                Ok((p, s))
            })
            .await;
        let (params, outer_state) = match fetched {
            Ok(v) => v,
            Err(e) => {
                let integrity = matches!(
                    e,
                    crate::job::JobError::Store(StoreError::Integrity { .. })
                );
                if integrity {
                    self.stats.integrity_errors += 1;
                }
                return self.fail(slots, i, round, format!("{}: {e}", if integrity { "integrity" } else { "fetch" })).await;
            }
        };
        self.stats.hash_verifications += 1;
        if !params.same_layout(&init_model(&self.cfg.model)?) {
            return self.fail(slots, i, round, "output layout does not match the model".into()).await;
        }
        if slots[i].base.task == crate::events::Task::Outer && outer_state.is_none() {
            return self.fail(slots, i, round, "outer result without state".into()).await;
        }
        let pk = slots[i].provider.pubkey.clone();
        self.log.push(round, &pk, LogPhase::ResultReady, &ev.id, format!("sha256={}", result.output.sha256));
        let s = &mut slots[i];
        s.phase = SlotPhase::ResultReady;
        s.result_id = Some(ev.id.clone());
        s.result = Some(result);
        s.output = Some(params);
        s.outer_state = outer_state;
        Ok(())
    }

    async fn validate_ready(&mut self, slots: &mut [Slot], round: usize, check: &Check<'_>) -> Result<(), CustomerError> {
        let vcfg = self.vcfg.clone().expect("validation config set before rounds");
        let ready: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].phase == SlotPhase::ResultReady).collect();
        let mut verdicts = Vec::new();
        match check {
            Check::Inner { global } => {
                let inner: BTreeMap<String, ModelParams> = slots
                    .iter()
                    .map(|s| (s.provider.pubkey.clone(), s.output.clone().expect("all slots have output")))
                    .collect();
                let deltas = deltas_from_inner(global, &inner)?;
                for &i in &ready {
                    let pk = &slots[i].provider.pubkey;
                    let v = match vcfg.test_type {
                        TestType::A => validate_test_a(pk, global, &deltas, &vcfg)?,
                        TestType::B => {
                            let mut h = self.provider_history.get(pk).cloned().unwrap_or_default();
                            h.push(inner[pk].clone());
                            validate_test_b(&h, &vcfg)?
                        }
                    };
                    verdicts.push((i, v));
                }
            }
            Check::Outer { series } => {
                for &i in &ready {
                    let mut h = series.to_vec();
                    h.push(slots[i].output.clone().expect("ready"));
                    verdicts.push((i, validate_test_b(&h, &vcfg)?));
                }
            }
        }
        for (i, v) in verdicts {
            let pk = slots[i].provider.pubkey.clone();
            let result_id = slots[i].result_id.clone().unwrap_or_default();
            match v {
                Verdict::Fail { statistic, threshold } => {
                    self.stats.validations_failed += 1;
                    self.fail(slots, i, round, format!("validation: {statistic} > {threshold}")).await?;
                }
                v => {
                    let detail = match &v {
                        Verdict::Deferred(why) => {
                            self.stats.validations_deferred += 1;
                            format!("deferred: {why}")
                        }
                        _ => {
                            self.stats.validations_passed += 1;
                            format!("statistic={}", v.statistic().unwrap_or(f64::NAN))
                        }
                    };
                    slots[i].phase = SlotPhase::Validated;
                    self.log.push(round, &pk, LogPhase::Validated, &result_id, detail);
                    let invoiced = slots[i].result.as_ref().and_then(|r| r.amount_msats).unwrap_or(0);
                    if invoiced == 0 {
                        continue;
                    }
                    if invoiced > self.cfg.payment.round_msats {
                        self.log.push(round, &pk, LogPhase::Settled, &result_id, format!("unpaid: invoice {invoiced} over budget"));
                        continue;
                    }
                    let provider = slots[i].provider.clone();
                    let receipt = self.pay(&provider, invoiced, &result_id).await?;
                    self.log.push(round, &pk, LogPhase::Settled, &receipt, format!("{invoiced} msats"));
                }
            }
        }
        Ok(())
    }

    /// Marks the slot failed, denylists its provider and hands the same
    /// request to a fresh one.
    async fn fail(&mut self, slots: &mut [Slot], i: usize, round: usize, reason: String) -> Result<(), CustomerError> {
        let old = slots[i].provider.pubkey.clone();
        warn!(round, slot = %slots[i].label, provider = %old, "slot failed: {reason}");
        slots[i].phase = SlotPhase::Failed;
        self.log.push(round, &old, LogPhase::Failed, &slots[i].request_id, reason);
        self.denylist.insert(old.clone());
        if slots[i].attempts >= self.cfg.max_attempts {
            return Err(CustomerError::ReassignmentExhausted {
                slot: slots[i].label.clone(),
                attempts: slots[i].attempts,
            });
        }
        let mut exclude = self.denylist.clone();
        exclude.extend(slots.iter().map(|s| s.provider.pubkey.clone()));
        let fresh = match discover_providers(
            &self.pool,
            1,
            self.cfg.kind,
            &exclude,
            &self.cfg.prefer,
            self.cfg.timeouts.discovery_window,
        )
        .await
        {
            Ok(mut v) => v.remove(0),
            Err(CustomerError::InsufficientProviders { .. }) => {
                return Err(CustomerError::ReassignmentExhausted {
                    slot: slots[i].label.clone(),
                    attempts: slots[i].attempts,
                })
            }
            Err(e) => return Err(e),
        };
        slots[i].attempts += 1;
        slots[i].phase = SlotPhase::Reassigned;
        self.stats.reassignments += 1;
        self.log.push(round, &old, LogPhase::Reassigned, &slots[i].request_id, format!("to {}", fresh.pubkey));
        slots[i].provider = fresh;
        self.assign(&mut slots[i], round).await
    }

    /// Pays `amount` to `provider` for `event_id` and publishes the receipt.
    async fn pay(&mut self, provider: &DiscoveredProvider, amount: u64, event_id: &str) -> Result<String, CustomerError> {
        let zap = create_zap_request(
            amount,
            &provider.lnurl,
            &provider.pubkey,
            Some(event_id),
            &self.cfg.relays,
            &self.cfg.keys,
        )?;
        let paid = stub_pay(&zap, &self.wallet)?;
        self.pool.publish(&paid.receipt).await?;
        self.stats.payments += 1;
        *self.stats.msats_paid.entry(provider.pubkey.clone()).or_default() += amount;
        Ok(paid.receipt.id)
    }

    async fn delegate_outer(
        &mut self,
        round: usize,
        global_ref: &StorageRef,
        inner: Vec<StorageRef>,
        state: &OuterState,
        series: &[ModelParams],
        sub: &mut MergedSubscription,
    ) -> Result<(ModelParams, OuterState), CustomerError> {
        let st = state.clone();
        let state_ref = self.blocking(move |s| put_outer_state(&st, s)).await?;
        let plan = JobPlan::Outer(OuterJob {
            run_option: self.cfg.run_option,
            global: global_ref.clone(),
            inner,
            state: state_ref,
            spec: self.training_spec(),
        });
        let provider = match discover_providers(
            &self.pool,
            1,
            self.cfg.kind,
            &self.denylist,
            &self.cfg.prefer,
            self.cfg.timeouts.discovery_window,
        )
        .await
        {
            Ok(mut v) => v.remove(0),
            Err(e) => return Err(e),
        };
        let base = self.base_request(&plan);
        let mut slots = vec![self.new_slot("outer".into(), base, provider, round).await?];
        self.drive(&mut slots, round, sub, Check::Outer { series }).await?;
        let s = slots.pop().expect("one slot");
        self.log.push(
            round,
            &s.provider.pubkey,
            LogPhase::OuterApplied,
            s.result_id.as_deref().unwrap_or(""),
            "",
        );
        Ok((s.output.expect("validated"), s.outer_state.expect("checked on result")))
    }
}
