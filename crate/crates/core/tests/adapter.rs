use std::collections::BTreeMap;

use proptest::prelude::*;
use stlm_core::adapter::{
    default_targets, merge_lora, pad_batch, split_dataset, LoraAdapter, LoraPair,
};
use stlm_core::qtensor::DenseTensor;
use stlm_core::transformer::{ModelConfig, ModelWeights, Tensor};

fn config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        vocab_size: 300,
        max_context: 16,
        ..ModelConfig::default()
    }
}

fn dual_path(w: &DenseTensor, p: &LoraPair, scale: f32, x: &[f32]) -> Vec<f32> {
    let wx = w.matvec(x).unwrap();
    let ax = p.a.matvec(x).unwrap();
    let bax = p.b.matvec(&ax).unwrap();
    wx.iter().zip(&bax).map(|(a, b)| a + scale * b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn merged_matches_dual_path(seed in any::<u64>(), rank in 1usize..6, alpha in 0.5f32..16.0) {
        let c = config();
        let base = ModelWeights::random(&c, seed).unwrap();
        let ad = LoraAdapter::random(&base, &default_targets(&c), rank, alpha, seed ^ 1, false).unwrap();
        let merged = merge_lora(&base, &ad).unwrap();
        let x: Vec<f32> = (0..c.d_model).map(|i| ((i as f32) * 0.37 + seed as f32 * 1e-20).sin()).collect();
        for (name, pair) in &ad.targets {
            let w = base.get(name).unwrap().to_dense();
            let want = dual_path(&w, pair, ad.scale(), &x);
            let got = merged.get(name).unwrap().matvec(&x).unwrap();
            for (g, e) in got.iter().zip(&want) {
                prop_assert!((g - e).abs() <= 1e-4, "{name}: {g} vs {e}");
            }
        }
        for (name, t) in base.named_tensors() {
            if !ad.targets.contains_key(&name) {
                prop_assert_eq!(t.to_bytes(), merged.get(&name).unwrap().to_bytes());
            }
        }
    }

    #[test]
    fn update_is_linear_in_alpha(seed in any::<u64>(), rank in 1usize..5, alpha in 0.25f32..8.0) {
        let c = config();
        let base = ModelWeights::random(&c, seed).unwrap();
        let a1 = LoraAdapter::random(&base, &default_targets(&c), rank, alpha, seed, false).unwrap();
        let a2 = LoraAdapter { alpha: 2.0 * alpha, ..a1.clone() };
        for name in a1.targets.keys() {
            let d1 = a1.delta(name).unwrap();
            let d2 = a2.delta(name).unwrap();
            for (x, y) in d1.data().iter().zip(d2.data()) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }
        // on a zero base the merged weights are the updates themselves
        let zero = ModelWeights::zeros(&c);
        let m1 = merge_lora(&zero, &a1).unwrap();
        let m2 = merge_lora(&zero, &a2).unwrap();
        for name in a1.targets.keys() {
            let (w1, w2) = (m1.get(name).unwrap().to_dense(), m2.get(name).unwrap().to_dense());
            for (x, y) in w1.data().iter().zip(w2.data()) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn split_is_seeded_partition(n in 2usize..400, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (tr, ev) = split_dataset(&items, frac, seed).unwrap();
        let (tr2, ev2) = split_dataset(&items, frac, seed).unwrap();
        prop_assert_eq!(&tr, &tr2);
        prop_assert_eq!(&ev, &ev2);
        prop_assert_eq!(tr.len() + ev.len(), n);
        let mut all: Vec<_> = tr.iter().chain(&ev).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
        prop_assert_eq!(tr.len(), ((frac * n as f64).round() as usize).clamp(1, n - 1));
    }

    #[test]
    fn padding_invariants(rows in prop::collection::vec(prop::collection::vec(0u32..261, 0..20), 1..8)) {
        let b = pad_batch(&rows, 261);
        let width = rows.iter().map(Vec::len).max().unwrap();
        prop_assert_eq!(b.lengths.iter().sum::<usize>(), rows.iter().map(Vec::len).sum::<usize>());
        for (i, row) in b.rows.iter().enumerate() {
            prop_assert_eq!(row.len(), width);
            prop_assert_eq!(&row[..rows[i].len()], &rows[i][..]);
            prop_assert!(row[rows[i].len()..].iter().all(|&t| t == 261));
        }
    }
}

#[test]
fn merged_target_is_dense_even_from_q4() {
    let c = config();
    let base = ModelWeights::random(&c, 3).unwrap();
    let q = stlm_core::modelfile::quantize_weights(&base).unwrap();
    let ad = LoraAdapter::random(&q, &default_targets(&c), 2, 4.0, 9, false).unwrap();
    let merged = merge_lora(&q, &ad).unwrap();
    for name in ad.targets.keys() {
        assert!(matches!(merged.get(name).unwrap(), Tensor::F32(_)));
    }
    let mut pairs = BTreeMap::new();
    pairs.insert(
        "embed_in.weight".to_string(),
        LoraPair {
            a: DenseTensor::zeros(vec![1, 32]),
            b: DenseTensor::zeros(vec![300, 1]),
        },
    );
    let ad = LoraAdapter { rank: 1, alpha: 1.0, targets: pairs };
    assert!(merge_lora(&q, &ad).is_ok());
}
