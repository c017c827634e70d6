use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedstr::customer::{run_training, CustomerConfig, OuterMode, Timeouts};
use fedstr::demo::{run_demo, DemoConfig, DemoDataset};
use fedstr::ml::{Activation, Dataset, LossSpec, ModelFamily, ModelSpec, RunOption, TargetKind};
use fedstr::nostr::{generate_keypair, Keypair};
use fedstr::provider::{Provider, ProviderConfig, ProviderError, ProviderFaults};
use fedstr::relay::{relay_serve, RelayConfig, DEFAULT_MAX_MESSAGE_BYTES};
use fedstr::store::{default_store, SharedStore, MODEL_ROOT_ENV};
use fedstr::validation::TestType;

#[derive(Parser)]
#[command(name = "fedstr", version, about = "Federated training marketplace over NOSTR relays")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Relay server.
    #[command(subcommand)]
    Relay(RelayCmd),
    /// Service provider daemon.
    #[command(subcommand)]
    Provider(ProviderCmd),
    /// Customer side.
    #[command(subcommand)]
    Customer(CustomerCmd),
    /// Local end-to-end runs.
    #[command(subcommand)]
    Demo(DemoCmd),
}

#[derive(Subcommand)]
enum RelayCmd {
    Serve {
        #[arg(long, default_value = "127.0.0.1:7777")]
        bind: String,
        /// Append every accepted event to this file, one JSON per line.
        #[arg(long)]
        log_file: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_MESSAGE_BYTES)]
        max_message_bytes: usize,
    },
}

#[derive(Args)]
struct Identity {
    /// Hex secret key file; created on first use.
    #[arg(long, conflicts_with = "ephemeral")]
    key: Option<PathBuf>,
    /// Use a fresh keypair for this run.
    #[arg(long)]
    ephemeral: bool,
}

impl Identity {
    fn load(&self) -> Result<Keypair, String> {
        match (&self.key, self.ephemeral) {
            (Some(p), _) => Keypair::load_or_create(p).map_err(|e| e.to_string()),
            (None, true) => generate_keypair(None).map_err(|e| e.to_string()),
            (None, false) => Err("pass --key PATH or --ephemeral".into()),
        }
    }
}

#[derive(Subcommand)]
enum ProviderCmd {
    Run(ProviderArgs),
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    relays: Vec<String>,
    #[command(flatten)]
    identity: Identity,
    #[arg(long, default_value_t = 100)]
    price_init: u64,
    #[arg(long, default_value_t = 900)]
    price_result: u64,
    #[arg(long, default_value_t = 2)]
    max_jobs: usize,
    #[arg(long, default_value_t = 5000)]
    progress_interval_ms: u64,
    #[arg(long, default_value_t = 60)]
    payment_timeout_secs: u64,
    #[arg(long, default_value_t = 60)]
    grace_secs: u64,
    #[arg(long, default_value = "fedstr trainer")]
    name: String,
    /// Also publish a kind-1063 file metadata event per output.
    #[arg(long)]
    nip94: bool,
    #[arg(long, hide = true)]
    crash_after_payment_on_job: Option<usize>,
    #[arg(long, hide = true)]
    tamper_blob: bool,
    #[arg(long, hide = true)]
    noise_variance: Option<f64>,
}

#[derive(Subcommand)]
enum CustomerCmd {
    Train(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RunArg {
    Fedavg,
    Diloco,
}

impl From<RunArg> for RunOption {
    fn from(r: RunArg) -> Self {
        match r {
            RunArg::Fedavg => RunOption::FedAvg,
            RunArg::Diloco => RunOption::DiLoCo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OuterArg {
    #[value(name = "self")]
    Local,
    Delegate,
}

impl From<OuterArg> for OuterMode {
    fn from(o: OuterArg) -> Self {
        match o {
            OuterArg::Local => OuterMode::Local,
            OuterArg::Delegate => OuterMode::Delegate,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Ce,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    A,
    B,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    relays: Vec<String>,
    #[command(flatten)]
    identity: Identity,
    /// CSV with columns x0..x{d-1},y.
    #[arg(long)]
    data: PathBuf,
    /// Held-out CSV for validation; otherwise a fraction of --data.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// `linear`, `logistic:CLASSES` or `mlp:H1,H2[:relu]`.
    #[arg(long, default_value = "linear")]
    model: String,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, default_value_t = 2)]
    providers: usize,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, value_enum, default_value = "fedavg")]
    run_option: RunArg,
    #[arg(long, value_enum, default_value = "self")]
    outer: OuterArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    feedback_interval_ms: u64,
    #[arg(long, default_value_t = 30)]
    job_timeout_secs: u64,
    #[arg(long, value_delimiter = ',')]
    prefer: Vec<String>,
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long, value_enum, default_value = "a")]
    test_type: TestArg,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 2)]
    tau_c: usize,
    #[arg(long, default_value_t = 100)]
    price_init: u64,
    #[arg(long, default_value_t = 900)]
    price_round: u64,
    #[arg(long, default_value = "rounds.jsonl")]
    log_out: PathBuf,
}

#[derive(Subcommand)]
enum DemoCmd {
    E2e(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    SyntheticLinear,
    SyntheticClassify,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 2)]
    providers: usize,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, value_enum, default_value = "fedavg")]
    run_option: RunArg,
    #[arg(long, value_enum, default_value = "self")]
    outer: OuterArg,
    #[arg(long, value_enum, default_value = "synthetic-linear")]
    dataset: DatasetArg,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "fedstr-demo")]
    work_dir: PathBuf,
    #[arg(long)]
    log_out: Option<PathBuf>,
    #[arg(long)]
    summary_out: Option<PathBuf>,
    #[arg(long)]
    kill_provider_at: Option<usize>,
    #[arg(long)]
    tamper_blob: bool,
    #[arg(long)]
    malicious_provider: bool,
    #[arg(long, default_value_t = 4)]
    job_timeout_secs: u64,
}

fn parse_model(s: &str, dim: usize) -> Result<ModelSpec, String> {
    let mut parts = s.split(':');
    let spec = match parts.next() {
        Some("linear") => ModelSpec::linear(dim),
        Some("logistic") => {
            let classes = parts.next().unwrap_or("2").parse().map_err(|_| "logistic:CLASSES")?;
            ModelSpec::logistic(dim, classes)
        }
        Some("mlp") => {
            let hidden = parts
                .next()
                .ok_or("mlp:H1,H2")?
                .split(',')
                .map(|h| h.parse::<usize>().map_err(|_| format!("bad hidden width {h:?}")))
                .collect::<Result<Vec<_>, _>>()?;
            let activation = match parts.next() {
                None | Some("tanh") => Activation::Tanh,
                Some("relu") => Activation::Relu,
                Some(a) => return Err(format!("unknown activation {a}")),
            };
            ModelSpec::mlp(dim, hidden, 1, activation, 0)
        }
        _ => return Err(format!("unknown model {s:?}")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn store() -> Result<SharedStore, String> {
    default_store().map(|s| Arc::new(s) as SharedStore).map_err(|e| e.to_string())
}

fn announce(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

async fn relay_cmd(cmd: RelayCmd) -> Result<(), String> {
    let RelayCmd::Serve {
        bind,
        log_file,
        max_message_bytes,
    } = cmd;
    let relay = relay_serve(&bind, RelayConfig { max_message_bytes, log_file })
        .await
        .map_err(|e| format!("bind {bind}: {e}"))?;
    announce(format!("listening {}", relay.url()));
    let _ = tokio::signal::ctrl_c().await;
    relay.shutdown().await;
    Ok(())
}

async fn provider_cmd(a: ProviderArgs) -> Result<ExitCode, String> {
    let mut cfg = ProviderConfig::new(a.identity.load()?, a.relays);
    cfg.price_init_msats = a.price_init;
    cfg.price_result_msats = a.price_result;
    cfg.max_jobs = a.max_jobs;
    cfg.progress_interval = Duration::from_millis(a.progress_interval_ms);
    cfg.payment_timeout = Duration::from_secs(a.payment_timeout_secs);
    cfg.grace_period = Duration::from_secs(a.grace_secs);
    cfg.name = a.name;
    cfg.publish_file_metadata = a.nip94;
    cfg.faults = ProviderFaults {
        crash_after_payment_on_job: a.crash_after_payment_on_job,
        tamper_blob: a.tamper_blob,
        noise_variance: a.noise_variance,
    };
    let provider = Provider::connect(cfg, store()?).await.map_err(|e| e.to_string())?;
    provider.announce().await.map_err(|e| e.to_string())?;
    announce(format!("ready {}", provider.public_key()));
    tokio::select! {
        r = provider.serve() => match r {
            Ok(()) => Err("all relays disconnected".into()),
            Err(ProviderError::Crashed(job)) => {
                eprintln!("provider stopped after payment on job {job}");
                Ok(ExitCode::from(3))
            }
            Err(e) => Err(e.to_string()),
        },
        _ = tokio::signal::ctrl_c() => Ok(ExitCode::SUCCESS),
    }
}

async fn customer_cmd(a: TrainArgs) -> Result<(), String> {
    let loss = match a.loss {
        Some(LossArg::Mse) => LossSpec::Mse,
        Some(LossArg::Ce) => LossSpec::CrossEntropy,
        None if a.model.starts_with("logistic") => LossSpec::CrossEntropy,
        None => LossSpec::Mse,
    };
    let kind = if loss == LossSpec::Mse { TargetKind::Real } else { TargetKind::Classes };
    let read = |p: &PathBuf| -> Result<Dataset, String> {
        let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
        Dataset::from_csv_bytes(&bytes, kind).map_err(|e| format!("{}: {e}", p.display()))
    };
    let data = read(&a.data)?;
    let mut model = parse_model(&a.model, data.dim())?;
    if let (ModelFamily::Mlp { .. }, LossSpec::CrossEntropy) = (&model.family, loss) {
        return Err("mlp models are trained with mse here".into());
    }
    model.init_seed = a.seed;
    let mut cfg = CustomerConfig::new(a.identity.load()?, a.relays, data, model, loss);
    cfg.test_dataset = a.test_data.as_ref().map(read).transpose()?;
    cfg.num_pr = a.providers;
    cfg.num_jobs = a.rounds;
    cfg.run_option = a.run_option.into();
    cfg.outer_mode = a.outer.into();
    cfg.seed = a.seed;
    cfg.hyperparams.epochs = a.epochs;
    cfg.hyperparams.batch_size = a.batch_size;
    cfg.hyperparams.learning_rate = a.lr;
    cfg.timeouts = Timeouts {
        feedback_interval: Duration::from_millis(a.feedback_interval_ms),
        job_timeout: Duration::from_secs(a.job_timeout_secs),
        ..Timeouts::default()
    };
    cfg.prefer = a.prefer;
    cfg.target_loss = a.target_loss;
    cfg.validation.inner_test = match a.test_type {
        TestArg::A => TestType::A,
        TestArg::B => TestType::B,
    };
    cfg.validation.gamma_t = a.gamma;
    cfg.validation.beta_t = a.beta;
    cfg.validation.tau_c = a.tau_c;
    cfg.payment.init_msats = a.price_init;
    cfg.payment.round_msats = a.price_round;
    cfg.log_out = Some(a.log_out.clone());
    let out = run_training(cfg, store()?).await.map_err(|e| e.to_string())?;
    let last = out.rounds.last().map(|r| r.test_loss).unwrap_or(out.initial_test_loss);
    announce(format!("final loss {last} (initial {})", out.initial_test_loss));
    announce(format!("final model {} sha256 {}", out.final_ref.url, out.final_ref.sha256));
    announce(format!("round log {}", a.log_out.display()));
    Ok(())
}

async fn demo_cmd(a: DemoArgs) -> Result<ExitCode, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut cfg = DemoConfig::new(exe, a.work_dir);
    cfg.providers = a.providers;
    cfg.rounds = a.rounds;
    cfg.run_option = a.run_option.into();
    cfg.outer_mode = a.outer.into();
    cfg.dataset = match a.dataset {
        DatasetArg::SyntheticLinear => DemoDataset::SyntheticLinear {
            n: a.n,
            d: a.dim,
            noise: a.noise,
        },
        DatasetArg::SyntheticClassify => DemoDataset::SyntheticClassify {
            n: a.n,
            d: a.dim,
            classes: a.classes,
        },
    };
    cfg.seed = a.seed;
    cfg.model_root = std::env::var_os(MODEL_ROOT_ENV).map(PathBuf::from);
    cfg.log_out = a.log_out;
    cfg.summary_out = a.summary_out;
    cfg.kill_provider_at = a.kill_provider_at;
    cfg.tamper_blob = a.tamper_blob;
    cfg.malicious_provider = a.malicious_provider;
    cfg.job_timeout = Duration::from_secs(a.job_timeout_secs);
    let summary = run_demo(&cfg).await.map_err(|e| e.to_string())?;
    announce(serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(if summary.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().cmd {
        Cmd::Relay(c) => relay_cmd(c).await.map(|_| ExitCode::SUCCESS),
        Cmd::Provider(ProviderCmd::Run(a)) => provider_cmd(a).await,
        Cmd::Customer(CustomerCmd::Train(a)) => customer_cmd(a).await.map(|_| ExitCode::SUCCESS),
        Cmd::Demo(DemoCmd::E2e(a)) => demo_cmd(a).await,
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
