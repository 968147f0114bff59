#![allow(dead_code)]

use semsum::data::{self, DatasetRecord};
use semsum::rouge;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsum::search::{self, SearchConfig, StepScorer};
use semsum::tokenizer::{train_bpe, Vocab};
use semsum::trainer::Sample;
use semsum::{Real, SeqModel};

pub fn records(text: &str) -> Vec<DatasetRecord> {
    data::read_all(text.as_bytes()).expect("fixture parses")
}

/// BPE vocabulary learned on the 16-pair corpus.
pub fn fixture_vocab() -> Vocab {
    let corpus = records(data::FIXTURE_CORPUS);
    let texts: Vec<&str> = corpus
        .iter()
        .flat_map(|r| [r.document.as_str(), r.summary.as_deref().unwrap()])
        .collect();
    train_bpe(&texts, 400).unwrap()
}

pub fn train8(vocab: &Vocab) -> (Vec<DatasetRecord>, Vec<Sample>) {
    let recs = records(data::FIXTURE_TRAIN8);
    let samples = data::to_samples(vocab, &recs);
    (recs, samples)
}

pub fn corpus_samples(vocab: &Vocab) -> Vec<Sample> {
    data::to_samples(vocab, &records(data::FIXTURE_CORPUS))
}

/// Fixture summaries are 8 to 12 words, far below the 55-token default minimum.
pub fn fixture_search() -> SearchConfig {
    SearchConfig {
        beam: 5,
        min_len: 1,
        max_len: 30,
        length_penalty: 1.0,
        block_trigrams: true,
    }
}

/// Mean ROUGE-1 F1 of beam-search outputs against the record summaries.
pub fn rouge1<T: Real>(model: &SeqModel<T>, vocab: &Vocab, recs: &[DatasetRecord], samples: &[Sample]) -> f64 {
    let cfg = fixture_search();
    let mut refs = Vec::new();
    let mut gens = Vec::new();
    for (r, s) in recs.iter().zip(samples) {
        let out = search::generate(model, &s.doc, vocab.specials(), &cfg).unwrap();
        refs.push(r.summary.clone().unwrap());
        gens.push(vocab.decode(&out.ids).unwrap());
    }
    rouge::evaluate_corpus(&refs, &gens, rouge::tokenize).unwrap().rouge1.f1
}

/// Step distributions drawn from a seeded generator keyed by the prefix.
pub struct RandomTable {
    pub vocab: usize,
    pub eos: u32,
    pub seed: u64,
    pub spread: f64,
}

impl StepScorer for RandomTable {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn eos(&self) -> u32 {
        self.eos
    }
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, search::SearchError> {
        let mut key = self.seed;
        for &t in prefix {
            key = key.wrapping_mul(0x100000001b3).wrapping_add(u64::from(t) + 1);
        }
        key = key.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(prefix.len() as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-self.spread..self.spread)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|x| x - lse).collect())
    }
}
