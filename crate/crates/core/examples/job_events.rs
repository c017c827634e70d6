//! The marketplace event vocabulary: a training job request, the provider's
//! feedback and result, its announcement and a NIP-94 record for the blob.

use fedstr::events::{
    build_discoverability, build_feedback, build_file_metadata, build_job_request, build_job_result,
    parse_job_request, parse_job_result, result_kind_for, Discoverability, FeedbackStatus, FileMetadata,
    JobFeedback, JobInput, JobRequest, JobResult, ModelState, ProviderSpec, Task, KIND_FEDERATED_TRAINING,
};
use fedstr::ml::RunOption;
use fedstr::nostr::generate_keypair;
use fedstr::store::StorageRef;

fn show(label: &str, e: &fedstr::nostr::Event) {
    println!("--- {label} (kind {})", e.kind);
    for t in &e.tags {
        println!("  {t:?}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let customer = generate_keypair(None)?;
    let provider = generate_keypair(None)?;
    let model = StorageRef {
        url: "file:///tmp/fedstr_models/model_ab.bin".into(),
        sha256: "ab".repeat(32),
        size_bytes: 1024,
    };

    let announcement = Discoverability {
        identifier: "fedstr-trainer".into(),
        name: "desk trainer".into(),
        about: "FedAvg and DiLoCo inner/outer jobs".into(),
        lnurl: None,
        supported_kinds: vec![KIND_FEDERATED_TRAINING],
        topics: vec!["federated-learning".into()],
        specs: vec![ProviderSpec {
            hardware: "cpu".into(),
            max_execution_time: "600".into(),
            model_dimensions_range: "1-100000".into(),
        }],
    };
    show("announcement", &build_discoverability(&announcement, &provider)?);

    let mut req = JobRequest::new(KIND_FEDERATED_TRAINING, Task::Inner, RunOption::FedAvg);
    req.inputs.push(JobInput::url("file:///tmp/shard0.csv"));
    req.providers.push(provider.public_key().to_string());
    req.model_state = Some(ModelState::Ref(model.clone()));
    req.bid_msats = Some(1000);
    let req_event = build_job_request(&req, &customer)?;
    show("job request", &req_event);
    assert_eq!(parse_job_request(&req_event)?, req);

    let fb = JobFeedback::new(FeedbackStatus::PaymentRequired, &req_event.id, customer.public_key())
        .with_amount(100, Some("lnstub1100m0011223344556677".into()));
    show("feedback", &build_feedback(&fb, &provider)?);

    let meta = FileMetadata {
        url: model.url.clone(),
        sha256: model.sha256.clone(),
        mime: "application/octet-stream".into(),
        size_bytes: model.size_bytes,
        alt: Some("inner model".into()),
        description: "round 1 output".into(),
    };
    let meta_event = build_file_metadata(&meta, &provider)?;
    show("file metadata", &meta_event);

    let result = JobResult {
        kind: result_kind_for(req.kind).expect("request kind"),
        request_json: req_event.to_json(),
        job_request_id: req_event.id.clone(),
        relay_hint: None,
        customer_pubkey: customer.public_key().to_string(),
        amount_msats: Some(900),
        bolt11: None,
        info: vec![("epochs".into(), "5".into())],
        output: model,
        reported_loss: Some(0.0123),
        file_metadata_id: Some(meta_event.id.clone()),
        content: String::new(),
    };
    let result_event = build_job_result(&result, &provider)?;
    show("job result", &result_event);
    assert_eq!(parse_job_result(&result_event)?, result);
    Ok(())
}
