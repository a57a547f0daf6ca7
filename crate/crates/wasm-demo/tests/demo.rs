use serde_json::Value;
use stlm_core::actions::{coalesce, parse_all, ParseEvent};
use stlm_core::modelfile::{quantize_model, write_model};
use stlm_core::tokenizer::Vocab;
use stlm_core::transformer::{ModelConfig, ModelWeights, Tensor};
use stlm_wasm::{default_config, quantize_block, size_report, StreamParser};

#[test]
fn block_view_reports_codes_and_errors() {
    let v: Value = serde_json::from_str(&quantize_block("7, -3.5 1.25,0.1").unwrap()).unwrap();
    assert_eq!(v["scale"], 1.0);
    let codes: Vec<u64> = v["codes"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    assert_eq!(&codes[..4], &[15, 4, 9, 8]);
    assert!(codes[4..].iter().all(|&c| c == 8));
    assert_eq!(v["bytes_hex"].as_str().unwrap().len(), 36);
    let half_step = v["half_step"].as_f64().unwrap();
    assert_eq!(half_step, 0.5);
    assert!(v["max_error"].as_f64().unwrap() <= half_step);
}

#[test]
fn block_input_errors() {
    assert!(quantize_block("1, two").unwrap_err().contains("two"));
    let many = vec!["1"; 33].join(",");
    assert!(quantize_block(&many).is_err());
    let zero: Value = serde_json::from_str(&quantize_block("").unwrap()).unwrap();
    assert_eq!(zero["max_error"], 0.0);
}

#[test]
fn stream_parser_matches_one_shot() {
    let text = "Sure <search>Highest building in the world<search> and <call>John Castro<calendar>";
    let mut p = StreamParser::new(None);
    let mut events: Vec<ParseEvent> = Vec::new();
    for chunk in text.as_bytes().chunks(5) {
        let chunk = std::str::from_utf8(chunk).unwrap();
        events.extend(serde_json::from_str::<Vec<ParseEvent>>(&p.feed(chunk)).unwrap());
    }
    events.extend(serde_json::from_str::<Vec<ParseEvent>>(&p.flush()).unwrap());
    assert_eq!(coalesce(events), parse_all(text));

    let mut p = StreamParser::new(Some(4));
    p.feed("<call>");
    assert!(p.is_inside());
    let overflow: Value = serde_json::from_str(&p.feed("Johnny")).unwrap();
    assert_eq!(overflow[0]["reason"], "payload_overflow");
}

#[test]
fn size_report_matches_written_files() {
    let config = ModelConfig::default();
    let weights = ModelWeights::random(&config, 1).unwrap();
    let vocab = Vocab::fixture(config.vocab_size).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("f16.stlm");
    let dst = dir.path().join("q4.stlm");
    write_model(&src, &config, &weights.map(|_, t| Tensor::f16(t.to_dense())), Some(&vocab)).unwrap();
    quantize_model(&src, &dst).unwrap();

    let report: Value = serde_json::from_str(&size_report(&default_config()).unwrap()).unwrap();
    assert_eq!(report["f16_file_bytes"].as_u64(), Some(std::fs::metadata(&src).unwrap().len()));
    assert_eq!(report["quantized_file_bytes"].as_u64(), Some(std::fs::metadata(&dst).unwrap().len()));
    let params: usize = weights.named_tensors().iter().map(|(_, t)| t.numel()).sum();
    assert_eq!(report["params"].as_u64(), Some(params as u64));
}

#[test]
fn size_report_rejects_bad_configs() {
    let bad = r#"{"n_layers":1,"n_heads":2,"d_model":48,"vocab_size":300,"max_context":16}"#;
    assert!(size_report(bad).unwrap_err().contains("multiple of 32"));
    assert!(size_report("{}").is_err());
    // vocab beyond the fixture still gets an estimate, without vocab text
    let big = r#"{"n_layers":1,"n_heads":2,"d_model":64,"vocab_size":50000,"max_context":16}"#;
    let v: Value = serde_json::from_str(&size_report(big).unwrap()).unwrap();
    assert_eq!(v["vocab_bytes"], 0);
}
