//! A whole marketplace in one process: a relay, three providers and a
//! customer training a linear model over three rounds. Pass `diloco` to
//! switch the optimizer and `delegate` to hand aggregation to a provider.

use std::sync::Arc;
use std::time::Duration;

use fedstr::customer::{run_training, CustomerConfig, OuterMode, Timeouts};
use fedstr::market::LocalMarket;
use fedstr::ml::{synthetic_linear, LossSpec, ModelSpec, RunOption};
use fedstr::nostr::generate_keypair;
use fedstr::provider::ProviderFaults;
use fedstr::store::{FileStore, SharedStore};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let dir = tempfile::tempdir()?;
    let store: SharedStore = Arc::new(FileStore::new(dir.path())?);
    let mut market = LocalMarket::start(store.clone()).await?;
    let providers = market.add_providers(3, ProviderFaults::default()).await?;
    println!("relay {} with {} providers", market.relay_url(), providers.len());

    let (data, _, _) = synthetic_linear(3000, 10, 0.1, 1)?;
    let mut cfg = CustomerConfig::new(
        generate_keypair(None)?,
        vec![market.relay_url()],
        data,
        ModelSpec::linear(10),
        LossSpec::Mse,
    );
    cfg.num_pr = 3;
    cfg.timeouts = Timeouts {
        feedback_interval: Duration::from_millis(100),
        job_timeout: Duration::from_secs(5),
        discovery_window: Duration::from_secs(5),
    };
    if args.iter().any(|a| a == "diloco") {
        cfg.run_option = RunOption::DiLoCo;
        cfg.hyperparams.epochs = 50;
        cfg.hyperparams.learning_rate = 0.02;
    }
    if args.iter().any(|a| a == "delegate") {
        cfg.outer_mode = OuterMode::Delegate;
    }

    let out = run_training(cfg, store).await?;
    println!("initial full-data loss {:.4}", out.initial_data_loss);
    for r in &out.rounds {
        println!("round {}  test {:.4}  data {:.5}  global {}", r.round, r.test_loss, r.data_loss, &r.global.sha256[..16]);
    }
    println!(
        "{} payments, {} msats, {} hash checks",
        out.stats.payments,
        out.stats.msats_paid.values().sum::<u64>(),
        out.stats.hash_verifications
    );
    market.shutdown().await;
    Ok(())
}
