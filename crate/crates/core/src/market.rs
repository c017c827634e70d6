//! A whole marketplace inside one process: a relay on a loopback port and
//! provider tasks sharing one model store. Used by tests and examples;
//! the `demo` command runs the same pieces as separate processes.

use std::time::Duration;

use tokio::task::JoinHandle;

use crate::nostr::{generate_keypair, Keypair};
use crate::provider::{Provider, ProviderConfig, ProviderError, ProviderFaults};
use crate::relay::{relay_serve, RelayConfig, RelayHandle};
use crate::store::SharedStore;

pub struct LocalMarket {
    pub relay: RelayHandle,
    pub store: SharedStore,
    pub providers: Vec<RunningProvider>,
}

pub struct RunningProvider {
    pub provider: Provider,
    pub task: JoinHandle<Result<(), ProviderError>>,
}

impl RunningProvider {
    pub fn public_key(&self) -> &str {
        self.provider.public_key()
    }
}

/// Provider settings tuned for fast local runs.
pub fn quick_provider_config(keys: Keypair, relay_url: &str) -> ProviderConfig {
    let mut cfg = ProviderConfig::new(keys, vec![relay_url.to_string()]);
    cfg.progress_interval = Duration::from_millis(200);
    cfg.payment_timeout = Duration::from_secs(10);
    cfg.grace_period = Duration::from_secs(10);
    cfg
}

impl LocalMarket {
    pub async fn start(store: SharedStore) -> std::io::Result<Self> {
        let relay = relay_serve("127.0.0.1:0", RelayConfig::default()).await?;
        Ok(Self {
            relay,
            store,
            providers: Vec::new(),
        })
    }

    pub fn relay_url(&self) -> String {
        self.relay.url()
    }

    /// Connects, announces and starts serving.
    pub async fn add_provider(&mut self, cfg: ProviderConfig) -> Result<&RunningProvider, ProviderError> {
        let provider = Provider::connect(cfg, self.store.clone()).await?;
        provider.announce().await?;
        let p = provider.clone();
        let task = tokio::spawn(async move { p.serve().await });
        self.providers.push(RunningProvider { provider, task });
        Ok(self.providers.last().expect("just pushed"))
    }

    /// Adds `n` providers with fresh keys and the given faults.
    pub async fn add_providers(&mut self, n: usize, faults: ProviderFaults) -> Result<Vec<String>, ProviderError> {
        let mut keys = Vec::new();
        for _ in 0..n {
            let mut cfg = quick_provider_config(generate_keypair(None).expect("random keys"), &self.relay_url());
            cfg.faults = faults.clone();
            keys.push(self.add_provider(cfg).await?.public_key().to_string());
        }
        Ok(keys)
    }

    pub async fn shutdown(self) {
        for p in &self.providers {
            p.task.abort();
        }
        self.relay.shutdown().await;
    }
}
