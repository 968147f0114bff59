//! Character-level byte-pair encoding.
//!
//! Words are split on whitespace and each word is prefixed with the boundary
//! marker [`WORD_MARK`], which is itself a base symbol. Merges are learned
//! greedily by pair frequency and replayed in learned order at encode time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub const WORD_MARK: char = '▁';
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("target vocabulary {target} must exceed {base} base symbols plus specials")]
    TargetTooSmall { target: usize, base: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Index { id: u32, size: usize },
    #[error("malformed vocabulary file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which of the three sequence roles a token sequence plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Document,
    Reference,
    Generated,
}

/// Token ids with their role. Reference and generated sequences end with eos.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, role: Role) -> Self {
        Self { ids, role }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_usize(&self) -> Vec<usize> {
        self.ids.iter().map(|&i| i as usize).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
}

/// Dense id ↔ token table with the ordered merge list that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    specials: SpecialIds,
}

impl Vocab {
    /// Builds a vocabulary from base symbols and merges: specials first, then
    /// sorted base symbols, then one token per merge.
    pub fn from_parts(base: impl IntoIterator<Item = String>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        let base: BTreeSet<String> = base.into_iter().chain([WORD_MARK.to_string()]).collect();
        tokens.extend(base);
        for (a, b) in &merges {
            let joined = format!("{a}{b}");
            if !tokens.contains(&joined) {
                tokens.push(joined);
            }
        }
        Self::from_tokens(tokens, merges)
    }

    fn from_tokens(tokens: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let specials = SpecialIds {
            pad: index[PAD],
            bos: index[BOS],
            eos: index[EOS],
            unk: index[UNK],
        };
        Self {
            tokens,
            index,
            merges,
            ranks,
            specials,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn is_special(&self, id: u32) -> bool {
        let s = self.specials;
        id == s.pad || id == s.bos || id == s.eos || id == s.unk
    }

    /// Encodes without specials.
    pub fn encode_raw(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut symbols: Vec<String> = std::iter::once(WORD_MARK)
                .chain(word.chars())
                .map(String::from)
                .collect();
            self.apply_merges(&mut symbols);
            out.extend(
                symbols
                    .iter()
                    .map(|s| self.index.get(s).copied().unwrap_or(self.specials.unk)),
            );
        }
        out
    }

    fn apply_merges(&self, symbols: &mut Vec<String>) {
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == a && &symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = merged;
        }
    }

    /// Encodes `text` for `role`. Summaries are wrapped in bos/eos; documents too,
    /// so the encoder sees explicit boundaries.
    pub fn encode(&self, text: &str, role: Role) -> TokenSequence {
        let mut ids = vec![self.specials.bos];
        ids.extend(self.encode_raw(text));
        ids.push(self.specials.eos);
        TokenSequence::new(ids, role)
    }

    /// Surface text with specials stripped; boundary markers become spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::Index {
                id,
                size: self.size(),
            })?;
            if self.is_special(id) {
                continue;
            }
            s.push_str(tok);
        }
        let s = s.replace(WORD_MARK, " ");
        Ok(s.strip_prefix(' ').map(str::to_string).unwrap_or(s))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        std::fs::read_to_string(path)?.parse()
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#vocab {}", self.tokens.len())?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        writeln!(f, "#merges {}", self.merges.len())?;
        for (a, b) in &self.merges {
            writeln!(f, "{a} {b}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Vocab {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |line: usize, reason: &str| TokenizerError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = s.lines().enumerate();
        let header_count = |l: Option<(usize, &str)>, tag: &str| -> Result<usize, TokenizerError> {
            let (i, l) = l.ok_or_else(|| err(0, "unexpected end of file"))?;
            l.strip_prefix(tag)
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| err(i + 1, &format!("expected `{tag} <count>`")))
        };
        let n = header_count(lines.next(), "#vocab")?;
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            let (_, t) = lines.next().ok_or_else(|| err(0, "truncated token list"))?;
            tokens.push(t.to_string());
        }
        let k = header_count(lines.next(), "#merges")?;
        let mut merges = Vec::with_capacity(k);
        for _ in 0..k {
            let (i, l) = lines.next().ok_or_else(|| err(0, "truncated merge list"))?;
            let (a, b) = l.split_once(' ').ok_or_else(|| err(i + 1, "merge needs two symbols"))?;
            merges.push((a.to_string(), b.to_string()));
        }
        for special in [PAD, BOS, EOS, UNK] {
            if !tokens.iter().any(|t| t == special) {
                return Err(err(0, &format!("missing special token {special}")));
            }
        }
        Ok(Vocab::from_tokens(tokens, merges))
    }
}

/// Learns merges until the vocabulary reaches `target_vocab` or no pair occurs
/// at least twice. Frequency ties go to the lexicographically smallest pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab: usize) -> Result<Vocab, TokenizerError> {
    let mut word_counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for line in corpus {
        for word in line.as_ref().split_whitespace() {
            let symbols = std::iter::once(WORD_MARK)
                .chain(word.chars())
                .map(String::from)
                .collect();
            *word_counts.entry(symbols).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let base: BTreeSet<String> = word_counts.keys().flatten().cloned().collect();
    let base_size = base.len() + 4;
    if target_vocab <= base_size {
        return Err(TokenizerError::TargetTooSmall {
            target: target_vocab,
            base: base_size,
        });
    }

    let mut words: Vec<(Vec<String>, usize)> = word_counts.into_iter().collect();
    let mut merges = Vec::new();
    let mut size = base_size;
    while size < target_vocab {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pairs.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        // BTreeMap iterates pairs in lexicographic order; keep the first maximum.
        let Some(((a, b), freq)) = pairs
            .into_iter()
            .fold(None, |best: Option<((&str, &str), usize)>, (p, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            })
        else {
            break;
        };
        if freq < 2 {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        let joined = format!("{a}{b}");
        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols[i] = joined.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        if !base.contains(&joined) && !merges.iter().any(|(x, y)| format!("{x}{y}") == joined) {
            size += 1;
        }
        merges.push((a, b));
    }
    Ok(Vocab::from_parts(base, merges))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_corpus_learns_no_merges() {
        // base: ▁ a b, plus four specials = 7
        let v = train_bpe(&["ab"], 8).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "aaaa" twice: (a,a) occurs 3×2 = 6 times, (▁,a) 2 times
        let v = train_bpe(&["aaaa aaaa"], 9).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn ties_break_lexicographically() {
        // (x,y) and (y,z) both occur twice; ("x","y") < ("y","z") but ("▁","x") also twice and "▁" > "x"
        let v = train_bpe(&["xyz xyz"], 9).unwrap();
        assert_eq!(v.merges()[0], ("x".to_string(), "y".to_string()));
    }

    #[test]
    fn rejects_empty_corpus_and_small_target() {
        assert!(matches!(train_bpe::<&str>(&[], 100), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_bpe(&["   "], 100), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(
            train_bpe(&["abc"], 8),
            Err(TokenizerError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn merge_replay_in_learned_order() {
        let v = Vocab::from_parts(
            ["a".to_string(), "b".to_string()],
            vec![("a".into(), "a".into()), ("aa".into(), "a".into())],
        );
        let ids = v.encode_raw("aaab");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["▁", "aaa", "b"]);
    }

    #[test]
    fn empty_text_and_unknown_symbols() {
        let v = train_bpe(&["abc abd"], 12).unwrap();
        let s = v.specials();
        assert_eq!(v.encode("", Role::Reference).ids, vec![s.bos, s.eos]);
        assert!(v.encode_raw("").is_empty());
        let ids = v.encode_raw("☃☃");
        assert_eq!(v.token(ids[0]), Some("▁"));
        assert!(ids[1..].iter().all(|&i| i == s.unk));
        assert_eq!(ids.len(), 3);
        assert_eq!(v.decode(&ids).unwrap(), "");
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let v = train_bpe(&["abc"], 12).unwrap();
        assert!(matches!(v.decode(&[999]), Err(TokenizerError::Index { id: 999, .. })));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = train_bpe(&["the cat sat on the mat", "the hat"], 30).unwrap();
        let text = v.to_string();
        assert!(text.starts_with("#vocab "));
        let back: Vocab = text.parse().unwrap();
        assert_eq!(back, v);
    }
}
