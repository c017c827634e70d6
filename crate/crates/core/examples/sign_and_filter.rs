//! Sign an event, verify it, and match it against subscription filters.

use fedstr::nostr::{generate_keypair, sign_event, verify_event, EventTemplate, Filter};

fn main() {
    let keys = generate_keypair(None).expect("keygen");
    let template = EventTemplate::new(
        keys.public_key(),
        1_700_000_000,
        1,
        vec![vec!["t".into(), "fedstr".into()]],
        "hello relays",
    );
    println!("canonical form: {}", template.canonical_json());

    let event = sign_event(template, &keys).expect("sign");
    println!("id  {}\nsig {}", event.id, event.sig);
    assert!(verify_event(&event));

    let mut forged = event.clone();
    forged.content = "hello relays!".into();
    println!("forged content verifies: {}", verify_event(&forged));

    let by_topic = Filter::new().kinds([1]).tag('t', ["fedstr"]);
    let too_late = by_topic.clone().since(1_800_000_000);
    println!("topic filter matches: {}", by_topic.matches(&event));
    println!("with since in the future: {}", too_late.matches(&event));
    println!("filter on the wire: {}", serde_json::to_string(&by_topic).unwrap());
}
