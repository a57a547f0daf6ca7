use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stlm_core::tokenizer::TokenId;
use stlm_core::transformer::{softmax, ModelConfig, ModelWeights, Transformer};

fn random_model(seed: u64) -> Transformer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_heads = [1, 2, 4][rng.gen_range(0..3)];
    let d_model = [32, 64][rng.gen_range(0..2)];
    let config = ModelConfig {
        n_layers: rng.gen_range(1..4),
        n_heads,
        d_model,
        vocab_size: rng.gen_range(262..320),
        max_context: 48,
        rotary_fraction: [0.25, 0.5, 1.0][rng.gen_range(0..3)],
        ..ModelConfig::default()
    };
    let weights = ModelWeights::random(&config, seed).unwrap();
    Transformer::new(config, weights).unwrap()
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.gen_range(0..vocab as TokenId)).collect()
}

#[test]
fn kv_cache_matches_full_recompute_on_20_models() {
    for seed in 0..20 {
        let m = random_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let n = rng.gen_range(2..40);
        let toks = random_tokens(&mut rng, m.config().vocab_size, n);

        let mut cache = m.new_cache();
        let mut last = Vec::new();
        let mut at = 0;
        while at < toks.len() {
            let step = rng.gen_range(1..=4).min(toks.len() - at);
            last = m.forward(&toks[at..at + step], &mut cache).unwrap().pop().unwrap();
            at += step;
        }
        let one_shot = m.forward(&toks, &mut m.new_cache()).unwrap().pop().unwrap();
        let max = last
            .iter()
            .zip(&one_shot)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max <= 1e-4, "seed {seed}: max diff {max}");
    }
}

#[test]
fn earlier_logits_ignore_later_tokens() {
    for seed in 0..10 {
        let m = random_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = m.config().vocab_size;
        let a = random_tokens(&mut rng, v, 20);
        let mut b = a.clone();
        let cut = rng.gen_range(1..20);
        for t in &mut b[cut..] {
            *t = rng.gen_range(0..v as TokenId);
        }
        let la = m.forward(&a, &mut m.new_cache()).unwrap();
        let lb = m.forward(&b, &mut m.new_cache()).unwrap();
        assert_eq!(la[..cut], lb[..cut], "seed {seed}");
    }
}

#[test]
fn softmax_of_logits_is_normalized() {
    for seed in 0..10 {
        let m = random_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks = random_tokens(&mut rng, m.config().vocab_size, 10);
        for row in m.forward(&toks, &mut m.new_cache()).unwrap() {
            let p = softmax(&row);
            let sum: f64 = p.iter().map(|&x| x as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
