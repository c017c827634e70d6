//! Start a relay on loopback, publish an event and read it back through a
//! live subscription.

use fedstr::nostr::{generate_keypair, sign_event, unix_now, EventTemplate, Filter};
use fedstr::relay::{relay_serve, RelayClient, RelayConfig, SubItem};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let relay = relay_serve("127.0.0.1:0", RelayConfig::default()).await?;
    println!("relay listening on {}", relay.url());

    let keys = generate_keypair(None)?;
    let alice = RelayClient::connect(&relay.url()).await?;
    let bob = RelayClient::connect(&relay.url()).await?;

    let early = sign_event(EventTemplate::new(keys.public_key(), unix_now(), 1, vec![], "stored"), &keys)?;
    let ack = alice.publish(&early).await?;
    println!("publish accepted={} message={:?}", ack.accepted, ack.message);

    let mut sub = bob.subscribe(vec![Filter::new().authors([keys.public_key()])]).await?;
    for e in sub.stored().await {
        println!("replayed: {}", e.content);
    }

    let live = sign_event(EventTemplate::new(keys.public_key(), unix_now(), 1, vec![], "live"), &keys)?;
    alice.publish(&live).await?;
    if let Some(SubItem::Event(e)) = sub.recv().await {
        println!("pushed:   {}", e.content);
    }

    let dup = alice.publish(&live).await?;
    println!("republish: accepted={} message={:?}", dup.accepted, dup.message);
    relay.shutdown().await;
    Ok(())
}
