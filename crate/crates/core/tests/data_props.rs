use std::io::{BufWriter, Write};

use proptest::prelude::*;
use semsum::data::{self, clean_text, DataError, DatasetRecord};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cleaning_is_idempotent(s in r#"([a-z ]|\\n|\\t|\\"|\\|\n|\t|"){0,40}"#) {
        let once = clean_text(&s);
        prop_assert_eq!(clean_text(&once), once.clone());
        prop_assert!(!once.contains("  "));
        prop_assert_eq!(once.trim(), once.as_str());
    }

    #[test]
    fn records_round_trip_through_json_lines(docs in prop::collection::vec(("[a-z]{1,10}", proptest::option::of("[a-z]{1,10}")), 0..20)) {
        let recs: Vec<DatasetRecord> = docs
            .iter()
            .enumerate()
            .map(|(i, (d, s))| DatasetRecord { document: d.clone(), summary: s.clone(), id: Some(i.to_string()) })
            .collect();
        let text: String = recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n\n").collect();
        let back: Vec<DatasetRecord> = data::read_jsonl(text.as_bytes()).collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, recs);
    }
}

#[test]
fn large_file_streams_with_error_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    let n = 200_000;
    let bad = 150_001;
    {
        let mut w = BufWriter::new(std::fs::File::create(&path).unwrap());
        for i in 1..=n {
            if i == bad {
                writeln!(w, "{{\"document\": oops}}").unwrap();
            } else {
                writeln!(w, "{{\"document\":\"doc {i}\",\"summary\":\"sum {i}\"}}").unwrap();
            }
        }
    }
    let mut ok = 0usize;
    let mut errors = Vec::new();
    for item in data::load_jsonl(&path).unwrap() {
        match item {
            Ok(r) => {
                ok += 1;
                assert!(r.summary.is_some());
            }
            Err(DataError::Line { line, .. }) => errors.push(line),
            Err(e) => panic!("{e}"),
        }
    }
    assert_eq!(ok, n - 1);
    assert_eq!(errors, vec![bad]);
}

#[test]
fn first_records_arrive_before_the_rest_are_read() {
    // A reader that panics past a byte budget proves the iterator does not slurp.
    struct Limited<R>(R, usize);
    impl<R: std::io::Read> std::io::Read for Limited<R> {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            assert!(self.1 > 0, "read past the budget");
            let cap = buf.len().min(self.1);
            let n = self.0.read(&mut buf[..cap])?;
            self.1 -= n;
            Ok(n)
        }
    }
    let line = "{\"document\":\"d\",\"summary\":\"s\"}\n";
    let text = line.repeat(100_000);
    let reader = std::io::BufReader::with_capacity(256, Limited(text.as_bytes(), 4096));
    let first: Vec<_> = data::read_jsonl::<_, DatasetRecord>(reader).take(3).collect();
    assert_eq!(first.len(), 3);
    assert!(first.iter().all(Result::is_ok));
}
