use semsum::data::*;
use semsum::search::*;
use semsum::trainer::*;
use semsum::tokenizer::*;
use semsum::*;
use semsum::semsim::*;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let obj: Objective = args[1].parse().unwrap();
    let lr: f64 = args[2].parse().unwrap();
    let steps: usize = args[3].parse().unwrap();
    let dropout: f64 = args[4].parse().unwrap();
    let recs: Vec<DatasetRecord> = read_jsonl(include_str!("../fixtures/train8.jsonl").as_bytes()).map(|r| preprocess(r.unwrap())).collect();
    let corpus: Vec<DatasetRecord> = read_jsonl(include_str!("../fixtures/corpus.jsonl").as_bytes()).map(|r| preprocess(r.unwrap())).collect();
    let texts: Vec<String> = corpus.iter().flat_map(|r| [r.document.clone(), r.summary.clone().unwrap()]).collect();
    let vocab = train_bpe(&texts, 400).unwrap();
    println!("vocab {}", vocab.size());
    let samples: Vec<Sample> = recs.iter().map(|r| Sample{doc: vocab.encode(&r.document, Role::Document), reference: vocab.encode(r.summary.as_ref().unwrap(), Role::Reference)}).collect();
    println!("lens {:?}", samples.iter().map(|s| (s.doc.len(), s.reference.len())).collect::<Vec<_>>());
    let sp = vocab.specials();
    let model = SeqModel::<f32>::new(ModelConfig::toy(vocab.size()), sp.pad, 1).unwrap();
    let scorer = if obj != Objective::MlOnly {
        Some(Scorer { lm: ScorerLM::from_encoder(&model), head: SemSimHead::random(64, 5) })
    } else { None };
    let cfg = TrainConfig { lr, dropout, update_freq: 1, objective: obj, ..Default::default() };
    let mut t = Trainer::new(model, scorer, cfg, samples.clone()).unwrap();
    let scfg = SearchConfig { beam: 5, min_len: 1, max_len: 30, length_penalty: 1.0, block_trigrams: true };
    let start = std::time::Instant::now();
    for s in 1..=steps {
        let r = t.train_step().unwrap();
        if s % 100 == 0 || s == 1 {
            let mut r1 = 0.0;
            for (smp, rec) in samples.iter().zip(&recs) {
                let out = generate(&t.model, &smp.doc, sp, &scfg).unwrap();
                let text = vocab.decode(&out.ids).unwrap();
                let sc = rouge::rouge_n(&rouge::tokenize(rec.summary.as_ref().unwrap()), &rouge::tokenize(&text), 1);
                r1 += sc.f1 / 8.0;
            }
            println!("step {s} t={:.1}s loss {:.4} ml {:.4} semsim {:.4} r1 {:.4}", start.elapsed().as_secs_f64(), r.losses.total, r.losses.ml, r.losses.semsim, r1);
        }
    }
}
