mod common;

use common::*;
use spngp::data::synth::gen_smooth;
use spngp::kernel::KernelFamily;
use spngp::structure::{build, KernelTemplate, Overlap, StructureConfig};
use spngp::{Error, SpnGp};

fn trained() -> SpnGp {
    let d = gen_smooth(4, 150, 2).unwrap();
    let menu = vec![
        KernelTemplate::new(KernelFamily::SquaredExponentialArd),
        KernelTemplate::new(KernelFamily::Matern),
    ];
    let mut cfg = StructureConfig::new(30, menu);
    cfg.sum_nodes_per_region = 2;
    cfg.overlap = Overlap::Count { count: 3 };
    let mut m = build(&d, &cfg).unwrap();
    m.fit_leaves().unwrap();
    m.posterior_update().unwrap();
    m
}

#[test]
fn round_trip_preserves_document_and_predictions() {
    let m = trained();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    m.save(&p, "cfg-abc").unwrap();
    let (back, fp) = SpnGp::load(&p).unwrap();
    assert_eq!(fp, "cfg-abc");
    assert!(back.posterior_applied());
    assert_eq!(back.to_json("cfg-abc").unwrap(), std::fs::read_to_string(&p).unwrap());
    let q = random_queries(2, 2, 25);
    assert_eq!(
        back.predict(&q, Default::default()).unwrap(),
        m.predict(&q, Default::default()).unwrap()
    );
}

#[test]
fn reloaded_model_refuses_a_second_update() {
    let m = trained();
    let (mut back, _) = SpnGp::from_json(&m.to_json("x").unwrap()).unwrap();
    assert!(matches!(back.posterior_update(), Err(Error::State(_))));
}

#[test]
fn infinite_weights_survive_the_round_trip() {
    let mut m = random_model(3);
    let sum = m
        .nodes()
        .iter()
        .find(|n| n.kind.name() == "sum" && n.kind.children().len() >= 2)
        .map(|n| n.id);
    let Some(sum) = sum else { return };
    let k = m.node(sum).kind.children().len();
    let mut w = vec![0.0; k];
    w[0] = 1.0;
    m.set_weights(sum, &w).unwrap();
    let (back, _) = SpnGp::from_json(&m.to_json("x").unwrap()).unwrap();
    assert_eq!(back.weights(sum).unwrap(), m.weights(sum).unwrap());
}

#[test]
fn other_versions_are_refused_with_a_message() {
    let text = trained().to_json("x").unwrap();
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    match SpnGp::from_json(&bumped) {
        Err(Error::Format(msg)) => assert!(msg.contains("version 2"), "{msg}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn unknown_fields_and_foreign_files_are_refused() {
    let text = trained().to_json("x").unwrap();
    let extra = text.replacen("{", "{\n  \"surprise\": 1,", 1);
    assert!(SpnGp::from_json(&extra).is_err());
    assert!(matches!(SpnGp::from_json("{\"format\": \"other\"}"), Err(Error::Format(_))));
}

#[test]
fn tampered_structure_fails_validation() {
    let text = trained().to_json("x").unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut v = v;
    let nodes = v["nodes"].as_array_mut().unwrap();
    let sum = nodes.iter_mut().find(|n| n["kind"]["type"] == "sum").unwrap();
    sum["kind"]["log_weights"][0] = serde_json::json!(5.0);
    assert!(matches!(SpnGp::from_json(&v.to_string()), Err(Error::Format(_))));
}
