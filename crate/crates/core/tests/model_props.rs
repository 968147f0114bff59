use proptest::prelude::*;
use semsum::model::{Mode, ModelConfig, SeqModel};
use semsum::Graph;

const V: usize = 10;
const PAD: u32 = 0;

fn small() -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        dropout: 0.0,
        max_positions: 24,
        vocab_size: V,
        tied_embeddings: false,
    }
}

fn ids(min: usize, max: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..V as u32, min..max)
}

fn logits(model: &SeqModel<f64>, doc: &[u32], prefix: &[u32]) -> Vec<f64> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let enc = model.encode(&mut g, &b, doc, &mut Mode::Eval).unwrap();
    let l = model.decoder_logits(&mut g, &b, &enc, prefix, &mut Mode::Eval).unwrap();
    g.value(l).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoder_is_causal(seed in 0u64..1000, doc in ids(1, 10), prefix in ids(2, 10), pos in 0usize..10, tok in 1u32..V as u32) {
        let model = SeqModel::<f64>::new(small(), PAD, seed).unwrap();
        let j = pos % prefix.len();
        let mut changed = prefix.clone();
        changed[j] = tok;
        let a = logits(&model, &doc, &prefix);
        let b = logits(&model, &doc, &changed);
        for (x, y) in a[..j * V].iter().zip(&b[..j * V]) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_sum_to_one(seed in 0u64..1000, doc in ids(1, 10), prefix in ids(1, 10)) {
        let model = SeqModel::<f64>::new(small(), PAD, seed).unwrap();
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let enc = model.encode(&mut g, &b, &doc, &mut Mode::Eval).unwrap();
        let p = model.decode_distributions(&mut g, &b, &enc, &prefix, &mut Mode::Eval).unwrap();
        for row in g.value(p).chunks(V) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn trailing_padding_is_invisible(seed in 0u64..1000, doc in ids(1, 8), prefix in ids(1, 8), pads in 1usize..6) {
        let model = SeqModel::<f64>::new(small(), PAD, seed).unwrap();
        let mut padded = doc.clone();
        padded.extend(std::iter::repeat(PAD).take(pads));
        let a = logits(&model, &doc, &prefix);
        let b = logits(&model, &padded, &prefix);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let model = SeqModel::<f64>::new(small(), PAD, 5).unwrap();
    let mut params = model.params.clone();
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let loss = model.ml_loss(&mut g, &b, &[1, 4, 6, 3, 8, 2], &[1, 5, 7, 9, 2], &mut Mode::Eval).unwrap();
    g.backward(loss).unwrap();
    params.accumulate_grads(&g, &b);
    for (name, t) in params.iter() {
        // Softmax is invariant to a constant added to every score, and a key
        // bias adds the same amount to every score of a query, so its gradient
        // is identically zero.
        if name.ends_with(".k.bias") {
            continue;
        }
        let nonzero = t.grad().is_some_and(|gr| gr.iter().any(|x| *x != 0.0));
        assert!(nonzero, "{name} has no gradient");
    }
}

#[test]
fn key_bias_gradient_vanishes() {
    let model = SeqModel::<f64>::new(small(), PAD, 6).unwrap();
    let mut params = model.params.clone();
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let loss = model.ml_loss(&mut g, &b, &[1, 4, 6, 2], &[1, 5, 2], &mut Mode::Eval).unwrap();
    g.backward(loss).unwrap();
    params.accumulate_grads(&g, &b);
    for (name, t) in params.iter().filter(|(n, _)| n.ends_with(".k.bias")) {
        let max = t.grad().map_or(0.0, |gr| gr.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        assert!(max < 1e-12, "{name}: {max}");
    }
}
