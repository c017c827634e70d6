//! Paying a provider: a zap request, a receipt minted by the stub Lightning
//! node, and the provider's checks on that receipt.

use fedstr::nostr::generate_keypair;
use fedstr::payments::{
    create_zap_request, stub_lnurl, stub_pay, validate_receipt, AlwaysSettled, ExpectedPayment, StubNode, ZapReceipt,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let customer = generate_keypair(None)?;
    let provider = generate_keypair(None)?;
    let node = StubNode::new(generate_keypair(None)?);
    let job = "cd".repeat(32);
    let lnurl = stub_lnurl(provider.public_key());

    let request = create_zap_request(900, &lnurl, provider.public_key(), Some(&job), &["ws://127.0.0.1:7777".into()], &customer)?;
    let paid = stub_pay(&request, &node)?;
    let receipt = ZapReceipt::from_event(&paid.receipt)?;
    println!("invoice {} for {:?} msats, publish to {:?}", receipt.bolt11, receipt.amount_msats(), paid.relays);

    let expected = ExpectedPayment {
        recipient: provider.public_key().to_string(),
        lnurl,
        amount_msats: Some(900),
        event_id: Some(job),
    };
    println!("genuine receipt: {:?}", validate_receipt(&paid.receipt, &expected, &AlwaysSettled));

    let underpaid = create_zap_request(500, &expected.lnurl, provider.public_key(), expected.event_id.as_deref(), &[], &customer)?;
    let paid = stub_pay(&underpaid, &node)?;
    println!("underpaid receipt: {:?}", validate_receipt(&paid.receipt, &expected, &AlwaysSettled));

    let elsewhere = create_zap_request(900, "lnurl1someoneelse", provider.public_key(), expected.event_id.as_deref(), &[], &customer)?;
    let paid = stub_pay(&elsewhere, &node)?;
    println!("wrong lnurl: {:?}", validate_receipt(&paid.receipt, &expected, &AlwaysSettled));
    Ok(())
}
