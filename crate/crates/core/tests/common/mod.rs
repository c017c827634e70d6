//! Random record generators shared by the integration tests.
#![allow(dead_code)]

use fedstr::events::{
    Discoverability, FeedbackStatus, InputType, JobFeedback, JobInput, JobRequest, JobResult, ModelState,
    ProviderSpec, Task,
};
use fedstr::ml::RunOption;
use fedstr::store::StorageRef;
use rand::distributions::Alphanumeric;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn hex64<R: Rng>(rng: &mut R) -> String {
    let b: [u8; 32] = rng.gen();
    hex::encode(b)
}

/// Printable text with a few characters JSON has to escape.
pub fn text<R: Rng>(rng: &mut R, max: usize) -> String {
    const SPICE: [&str; 8] = ["\"", "\\", "\n", "\t", "é", "漢", "🦀", "\u{1}"];
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                SPICE.choose(rng).unwrap().to_string()
            } else {
                (rng.sample(Alphanumeric) as char).to_string()
            }
        })
        .collect()
}

pub fn word<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| rng.sample(Alphanumeric) as char).collect()
}

fn opt<R: Rng, T>(rng: &mut R, f: impl FnOnce(&mut R) -> T) -> Option<T> {
    rng.gen_bool(0.5).then(|| f(rng))
}

pub fn storage_ref<R: Rng>(rng: &mut R) -> StorageRef {
    StorageRef {
        url: format!("file:///tmp/{}/model_{}.bin", word(rng, 6), word(rng, 8)),
        sha256: hex64(rng),
        size_bytes: rng.gen_range(1..1 << 30),
    }
}

fn relay_url<R: Rng>(rng: &mut R) -> String {
    format!("ws://{}.example:{}", word(rng, 5).to_lowercase(), rng.gen_range(1000..9000))
}

pub fn job_request<R: Rng>(rng: &mut R) -> JobRequest {
    let task = if rng.gen() { Task::Inner } else { Task::Outer };
    let run = if rng.gen() { RunOption::FedAvg } else { RunOption::DiLoCo };
    let mut r = JobRequest::new(rng.gen_range(8000..9000), task, run);
    r.inputs.push(match rng.gen_range(0..3) {
        0 => JobInput::url(format!("file:///data/{}.csv", word(rng, 6))),
        1 => JobInput::job(hex64(rng), opt(rng, relay_url)),
        _ => JobInput {
            data: text(rng, 20),
            input_type: InputType::Text,
            relay_hint: None,
            marker: None,
        },
    });
    for _ in 0..rng.gen_range(0..4) {
        r.inputs.push(JobInput {
            data: storage_ref(rng).to_tag_value(),
            input_type: InputType::Text,
            relay_hint: Some(if rng.gen() { String::new() } else { relay_url(rng) }),
            marker: Some(word(rng, 5)),
        });
    }
    r.output_spec = format!("application/{}", word(rng, 6));
    r.relays = (0..rng.gen_range(0..3)).map(|_| relay_url(rng)).collect();
    r.bid_msats = opt(rng, |g| g.gen());
    r.providers = (0..rng.gen_range(0..3)).map(|_| hex64(rng)).collect();
    r.data_set = opt(rng, |g| storage_ref(g).to_tag_value());
    r.model_state = opt(rng, |g| {
        if g.gen() {
            ModelState::Ref(storage_ref(g))
        } else {
            ModelState::Inline(format!("b64:{}", word(g, 30)))
        }
    });
    r.model_spec = opt(rng, |g| text(g, 40));
    r.source_code = opt(rng, |g| text(g, 40));
    r.expected_execution_time = opt(rng, |g| g.gen());
    r.hardware_spec = opt(rng, |g| text(g, 10));
    r.validation_rules = opt(rng, |g| text(g, 10));
    r.timeout_max = opt(rng, |g| g.gen());
    r.extra_params = (0..rng.gen_range(0..3))
        .map(|_| (format!("x_{}", word(rng, 4)), text(rng, 12)))
        .collect();
    r.prior_result = opt(rng, hex64);
    r
}

pub fn job_feedback<R: Rng>(rng: &mut R) -> JobFeedback {
    let status = *[
        FeedbackStatus::PaymentRequired,
        FeedbackStatus::Processing,
        FeedbackStatus::Error,
        FeedbackStatus::Success,
        FeedbackStatus::Partial,
    ]
    .choose(rng)
    .unwrap();
    let mut fb = JobFeedback::new(status, hex64(rng), hex64(rng));
    fb.extra_info = opt(rng, |g| text(g, 30));
    if rng.gen() {
        fb = fb.with_amount(rng.gen_range(1..1_000_000), opt(rng, |g| format!("lnstub1{}m{}", g.gen_range(1..1000), word(g, 16))));
    }
    fb.relay_hint = opt(rng, relay_url);
    fb.payload = text(rng, 30);
    fb
}

pub fn job_result<R: Rng>(rng: &mut R) -> JobResult {
    let has_amount = rng.gen::<bool>();
    JobResult {
        kind: rng.gen_range(6000..7000),
        request_json: format!("{{\"note\":{:?}}}", word(rng, 10)),
        job_request_id: hex64(rng),
        relay_hint: opt(rng, relay_url),
        customer_pubkey: hex64(rng),
        amount_msats: has_amount.then(|| rng.gen_range(1..1_000_000)),
        bolt11: if has_amount { opt(rng, |g| format!("lnstub1{}m{}", g.gen_range(1..1000), word(g, 16))) } else { None },
        info: (0..rng.gen_range(0..3)).map(|_| (word(rng, 6), text(rng, 20))).collect(),
        output: storage_ref(rng),
        reported_loss: opt(rng, |g| g.gen_range(-1e6..1e6)),
        file_metadata_id: opt(rng, hex64),
        content: text(rng, 30),
    }
}

pub fn discoverability<R: Rng>(rng: &mut R) -> Discoverability {
    Discoverability {
        identifier: word(rng, 10),
        name: text(rng, 20),
        about: text(rng, 40),
        lnurl: opt(rng, |g| format!("lnurlstub1{}", hex64(g))),
        supported_kinds: (0..rng.gen_range(0..4)).map(|_| rng.gen_range(8000..9000)).collect(),
        topics: (0..rng.gen_range(0..3)).map(|_| word(rng, 6)).collect(),
        specs: (0..rng.gen_range(0..3))
            .map(|_| ProviderSpec {
                hardware: text(rng, 10),
                max_execution_time: rng.gen_range(1..10_000).to_string(),
                model_dimensions_range: format!("1-{}", rng.gen_range(2..1_000_000)),
            })
            .collect(),
    }
}
