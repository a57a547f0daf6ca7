#[path = "support/http.rs"]
mod http;
#[path = "support/md5_ref.rs"]
mod md5_ref;

use std::fs;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use http::{Fault, TestServer};
use md5_ref::{md5_reference, RFC1321_SUITE};
use stlm_core::modelfile::{fetch_model, md5_hex, read_model, write_model, ModelManifest};
use stlm_core::tokenizer::Vocab;
use stlm_core::transformer::{ModelConfig, ModelWeights, Transformer};
use stlm_core::Error;

#[test]
fn md5_rfc_suite() {
    for (input, digest) in RFC1321_SUITE {
        assert_eq!(md5_reference(input.as_bytes()), digest, "oracle on {input:?}");
        assert_eq!(md5_hex(input.as_bytes()), digest, "{input:?}");
    }
}

#[test]
fn md5_random_buffers_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1321);
    for _ in 0..1000 {
        let len = rng.gen_range(0..300);
        let mut buf = vec![0u8; len];
        rng.fill_bytes(&mut buf);
        assert_eq!(md5_hex(&buf), md5_reference(&buf));
    }
}

#[test]
fn md5_single_flip_changes_digest() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let mut buf = vec![0u8; rng.gen_range(1..200)];
        rng.fill_bytes(&mut buf);
        let before = md5_hex(&buf);
        let i = rng.gen_range(0..buf.len());
        buf[i] ^= 1 << rng.gen_range(0..8);
        assert_ne!(md5_hex(&buf), before);
    }
}

fn model_bytes(seed: u64) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let c = ModelConfig::default();
    let w = ModelWeights::random(&c, seed).unwrap();
    let p = dir.path().join("m.stlm");
    write_model(&p, &c, &w, Some(&Vocab::fixture(c.vocab_size).unwrap())).unwrap();
    fs::read(p).unwrap()
}

#[test]
fn roundtrip_preserves_logits() {
    let dir = tempfile::tempdir().unwrap();
    let c = ModelConfig::default();
    let w = ModelWeights::random(&c, 3).unwrap();
    let p = dir.path().join("m.stlm");
    let summary = write_model(&p, &c, &w, None).unwrap();
    assert_eq!(summary.total_bytes, fs::metadata(&p).unwrap().len());
    let loaded = read_model(&p).unwrap();
    let prompt = [256, 72, 105, 10, 257];
    let a = Transformer::new(c.clone(), w).unwrap();
    let b = Transformer::new(loaded.config, loaded.weights).unwrap();
    let la = a.forward(&prompt, &mut a.new_cache()).unwrap();
    let lb = b.forward(&prompt, &mut b.new_cache()).unwrap();
    assert_eq!(la, lb);

    let mut bytes = fs::read(&p).unwrap();
    let off = summary.tensors[3].offset as usize + 5;
    bytes[off] ^= 0x10;
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_model(&p), Err(Error::ChecksumMismatch { .. })));
}

fn manifest_for(server: &TestServer, body: &[u8]) -> ModelManifest {
    server.put("/m.stlm", body.to_vec(), Fault::None);
    ModelManifest {
        url: server.url("/m.stlm"),
        bytes: body.len() as u64,
        md5: md5_hex(body),
        name: "m.stlm".into(),
        version: 1,
    }
}

fn listing(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn fetch_downloads_verifies_and_then_skips() {
    let server = TestServer::start();
    let body = model_bytes(1);
    let m = manifest_for(&server, &body);
    let dest = tempfile::tempdir().unwrap();

    let mut seen = Vec::new();
    let out = fetch_model(&m, dest.path(), |d, t| seen.push((d, t))).unwrap();
    assert!(!out.cached);
    assert_eq!(out.downloaded, body.len() as u64);
    assert!(seen.windows(2).all(|w| w[0].0 <= w[1].0));
    assert_eq!(seen.last(), Some(&(m.bytes, m.bytes)));
    assert!(read_model(&out.path).is_ok());
    assert_eq!(listing(dest.path()), ["m.stlm"]);

    let requests = server.request_count();
    let again = fetch_model(&m, dest.path(), |_, _| {}).unwrap();
    assert!(again.cached);
    assert_eq!(again.downloaded, 0);
    assert_eq!(server.request_count(), requests);
}

#[test]
fn corrupted_body_installs_nothing() {
    let server = TestServer::start();
    let body = model_bytes(2);
    let m = manifest_for(&server, &body);
    server.set_fault("/m.stlm", Fault::Corrupt);
    let dest = tempfile::tempdir().unwrap();
    let err = fetch_model(&m, dest.path(), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::ChecksumMismatch { .. }), "{err}");
    assert!(listing(dest.path()).is_empty());
}

#[test]
fn truncation_keeps_partial_and_resume_completes() {
    let server = TestServer::start();
    let body = model_bytes(3);
    let m = manifest_for(&server, &body);
    let cut = body.len() / 3;
    server.set_fault("/m.stlm", Fault::Truncate(cut));
    let dest = tempfile::tempdir().unwrap();
    let err = fetch_model(&m, dest.path(), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::Network(_)), "{err}");
    assert_eq!(listing(dest.path()), ["m.stlm.part"]);
    assert_eq!(fs::metadata(dest.path().join("m.stlm.part")).unwrap().len(), cut as u64);

    server.set_fault("/m.stlm", Fault::None);
    let out = fetch_model(&m, dest.path(), |_, _| {}).unwrap();
    assert_eq!(out.resumed_from, cut as u64);
    assert_eq!(out.downloaded, (body.len() - cut) as u64);
    assert_eq!(server.range_starts().last(), Some(&Some(cut as u64)));
    assert_eq!(fs::read(&out.path).unwrap(), body);
    assert_eq!(listing(dest.path()), ["m.stlm"]);
}

#[test]
fn range_ignored_restarts_from_zero() {
    let server = TestServer::start();
    let body = model_bytes(4);
    let m = manifest_for(&server, &body);
    let dest = tempfile::tempdir().unwrap();
    fs::write(dest.path().join("m.stlm.part"), &body[..100]).unwrap();
    server.set_fault("/m.stlm", Fault::IgnoreRange);
    let out = fetch_model(&m, dest.path(), |_, _| {}).unwrap();
    assert_eq!(out.downloaded, body.len() as u64);
    assert_eq!(fs::read(out.path).unwrap(), body);
}

#[test]
fn stale_corrupt_install_is_replaced() {
    let server = TestServer::start();
    let body = model_bytes(5);
    let m = manifest_for(&server, &body);
    let dest = tempfile::tempdir().unwrap();
    fs::write(dest.path().join("m.stlm"), b"not the model").unwrap();
    let out = fetch_model(&m, dest.path(), |_, _| {}).unwrap();
    assert!(!out.cached);
    assert_eq!(fs::read(out.path).unwrap(), body);
}

#[test]
fn unreachable_server_is_network_error() {
    let m = ModelManifest {
        url: "http://127.0.0.1:9/m.stlm".into(),
        bytes: 10,
        md5: md5_hex(b"0123456789"),
        name: "m.stlm".into(),
        version: 1,
    };
    let dest = tempfile::tempdir().unwrap();
    assert!(matches!(
        fetch_model(&m, dest.path(), |_, _| {}),
        Err(Error::Network(_))
    ));
}
