//! SemEval 2016 Task 6A data ingestion: TSV loading, phase-1 label
//! derivation, vocabulary construction, and id-sequence encoding.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::textprep::{tokenize, Preprocessor};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing column '{0}' in header")]
    MissingColumn(&'static str),
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    BadRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown stance '{value}'")]
    UnknownStance { line: usize, value: String },
    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    BadMinCount,
    #[error("example {id}: no tokens left after preprocessing")]
    EmptyAfterPrep { id: String },
    #[error("unknown target '{target}'; valid targets: {valid:?}")]
    UnknownTarget { target: String, valid: Vec<String> },
}

/// Gold stance of a tweet toward its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stance {
    Favor,
    Against,
    None,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favor, Stance::Against, Stance::None];

    pub fn parse(s: &str) -> Option<Stance> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" => Some(Stance::Favor),
            "AGAINST" => Some(Stance::Against),
            "NONE" => Some(Stance::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favor => "FAVOR",
            Stance::Against => "AGAINST",
            Stance::None => "NONE",
        }
    }

    /// Fixed class ordering: FAVOR 0, AGAINST 1, NONE 2.
    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::Against => 1,
            Stance::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }
}

impl std::fmt::Display for Stance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Phase-1 label: FAVOR and AGAINST tweets are subjective, NONE is neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase1Label {
    Subjective,
    Neutral,
}

impl Phase1Label {
    /// Class index for the phase-1 head: SUBJECTIVE 0, NEUTRAL 1.
    pub fn index(self) -> usize {
        match self {
            Phase1Label::Subjective => 0,
            Phase1Label::Neutral => 1,
        }
    }
}

/// FAVOR → SUBJECTIVE, AGAINST → SUBJECTIVE, NONE → NEUTRAL.
pub fn derive_phase1(stance: Stance) -> Phase1Label {
    match stance {
        Stance::Favor | Stance::Against => Phase1Label::Subjective,
        Stance::None => Phase1Label::Neutral,
    }
}

/// One labeled instance from the task data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub target: String,
    pub tweet: String,
    pub stance: Stance,
}

/// Reserved vocabulary ids.
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bidirectional token↔id map with reserved PAD and UNK slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    fn with_reserved() -> Vocab {
        let mut token_to_id = HashMap::new();
        token_to_id.insert(PAD_TOKEN.to_string(), PAD_ID);
        token_to_id.insert(UNK_TOKEN.to_string(), UNK_ID);
        Vocab {
            token_to_id,
            id_to_token: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        }
    }

    fn insert(&mut self, token: String) {
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    /// Rebuild from an ordered token list (line order = id order), as
    /// stored in a checkpoint. The first two entries must be the reserved
    /// PAD and UNK markers.
    pub fn from_ordered_tokens(tokens: Vec<String>) -> Result<Vocab, String> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err("vocab list must start with the reserved <pad> and <unk> entries".into());
        }
        let mut vocab = Vocab::with_reserved();
        for tok in tokens.into_iter().skip(2) {
            if vocab.token_to_id.contains_key(&tok) {
                return Err(format!("duplicate vocab token '{tok}'"));
            }
            vocab.insert(tok);
        }
        Ok(vocab)
    }

    /// Id for a token, UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Total size including the reserved entries.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Tokens in id order, including the reserved entries.
    pub fn ordered_tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// An example mapped to vocabulary ids, ready for the model.
#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub id: String,
    pub target: String,
    pub tweet_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub phase1: Phase1Label,
    pub stance: Stance,
}

/// Decode file bytes as UTF-8, falling back to Windows-1252 (the encoding
/// of the official release) when the bytes are not valid UTF-8.
fn decode_text(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => decode_windows_1252(e.as_bytes()),
    }
}

// 0x80..=0x9F remappings; every other byte matches Latin-1.
const CP1252_HIGH: [char; 32] = [
    '\u{20AC}', '\u{0081}', '\u{201A}', '\u{0192}', '\u{201E}', '\u{2026}', '\u{2020}', '\u{2021}',
    '\u{02C6}', '\u{2030}', '\u{0160}', '\u{2039}', '\u{0152}', '\u{008D}', '\u{017D}', '\u{008F}',
    '\u{0090}', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}', '\u{2022}', '\u{2013}', '\u{2014}',
    '\u{02DC}', '\u{2122}', '\u{0161}', '\u{203A}', '\u{0153}', '\u{009D}', '\u{017E}', '\u{0178}',
];

fn decode_windows_1252(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|&b| match b {
            0x80..=0x9F => CP1252_HIGH[(b - 0x80) as usize],
            _ => b as char,
        })
        .collect()
}

/// Load a SemEval 2016 Task 6 TSV: one header row with ID/Target/Tweet/Stance
/// columns, then one example per line.
pub fn load_semeval(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = decode_text(bytes);
    parse_semeval(&text)
}

/// Parse the TSV content of a task file; see [`load_semeval`].
pub fn parse_semeval(text: &str) -> Result<Vec<Example>, CorpusError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CorpusError::EmptyCorpus)?;
    let header_fields: Vec<String> = header
        .trim_end_matches('\r')
        .split('\t')
        .map(|f| f.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &'static str| -> Result<usize, CorpusError> {
        header_fields
            .iter()
            .position(|f| f == &name.to_ascii_lowercase())
            .ok_or(CorpusError::MissingColumn(name))
    };
    let id_col = col("ID")?;
    let target_col = col("Target")?;
    let tweet_col = col("Tweet")?;
    let stance_col = col("Stance")?;
    let width = header_fields.len();

    let mut examples = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(CorpusError::BadRow {
                line: line_no,
                expected: width,
                found: fields.len(),
            });
        }
        let target = fields[target_col].trim();
        if target.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "target",
            });
        }
        let tweet = fields[tweet_col].trim();
        if tweet.is_empty() {
            return Err(CorpusError::EmptyField {
                line: line_no,
                field: "tweet",
            });
        }
        let stance = Stance::parse(fields[stance_col]).ok_or_else(|| CorpusError::UnknownStance {
            line: line_no,
            value: fields[stance_col].trim().to_string(),
        })?;
        examples.push(Example {
            id: fields[id_col].trim().to_string(),
            target: target.to_string(),
            tweet: tweet.to_string(),
            stance,
        });
    }
    Ok(examples)
}

/// Build the shared vocabulary from the training split: cleaned tweet
/// tokens filtered by `min_count`, plus every target token regardless of
/// count. Ids are assigned by descending frequency, ties broken
/// lexicographically.
pub fn build_vocab(
    examples: &[Example],
    min_count: u64,
    prep: &Preprocessor,
) -> Result<Vocab, CorpusError> {
    if min_count < 1 {
        return Err(CorpusError::BadMinCount);
    }
    if examples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut target_tokens: BTreeSet<String> = BTreeSet::new();
    for ex in examples {
        for tok in prep.clean(&ex.tweet) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for tok in tokenize(&ex.target) {
            *counts.entry(tok.clone()).or_insert(0) += 1;
            target_tokens.insert(tok);
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(tok, n)| *n >= min_count || target_tokens.contains(tok))
        .collect();
    kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

    let mut vocab = Vocab::with_reserved();
    for (tok, _) in kept {
        vocab.insert(tok);
    }
    Ok(vocab)
}

/// Map an example to id sequences: the tweet through the full preprocessor,
/// the target through the tokenizer only.
pub fn encode(
    example: &Example,
    vocab: &Vocab,
    prep: &Preprocessor,
) -> Result<EncodedExample, CorpusError> {
    let tweet_tokens = prep.clean(&example.tweet);
    if tweet_tokens.is_empty() {
        return Err(CorpusError::EmptyAfterPrep {
            id: example.id.clone(),
        });
    }
    let target_tokens = tokenize(&example.target);
    if target_tokens.is_empty() {
        return Err(CorpusError::EmptyAfterPrep {
            id: example.id.clone(),
        });
    }
    Ok(EncodedExample {
        id: example.id.clone(),
        target: example.target.clone(),
        tweet_ids: tweet_tokens.iter().map(|t| vocab.id(t)).collect(),
        target_ids: target_tokens.iter().map(|t| vocab.id(t)).collect(),
        phase1: derive_phase1(example.stance),
        stance: example.stance,
    })
}

/// Distinct targets in first-appearance-independent (sorted) order.
pub fn targets(examples: &[Example]) -> Vec<String> {
    let set: BTreeSet<&str> = examples.iter().map(|e| e.target.as_str()).collect();
    set.into_iter().map(|s| s.to_string()).collect()
}

/// Order-preserving filter on exact target match.
pub fn filter_by_target(examples: &[Example], target: &str) -> Result<Vec<Example>, CorpusError> {
    let valid = targets(examples);
    if !valid.iter().any(|t| t == target) {
        return Err(CorpusError::UnknownTarget {
            target: target.to_string(),
            valid,
        });
    }
    Ok(examples.iter().filter(|e| e.target == target).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "ID\tTarget\tTweet\tStance\n\
        1\tAtheism\tEveryone is able to believe in whatever they want. #Freedom\tFAVOR\n\
        2\tAtheism\tBe still. Be patient. Watch and let God work.\tAGAINST\n\
        3\tAtheism\tAlot of angry people in this world. Peace to all. #love\tNONE\n\
        4\tFeminist Movement\tit's not always the guys job. #equality\tfavor\n\
        5\tFeminist Movement\tFriendly reminder that the Gender Pay Gap is a myth.\tAgainst\n";

    fn fixture_examples() -> Vec<Example> {
        parse_semeval(FIXTURE).unwrap()
    }

    #[test]
    fn parse_counts_and_case_insensitive_stances() {
        let ex = fixture_examples();
        assert_eq!(ex.len(), 5);
        assert_eq!(ex[0].stance, Stance::Favor);
        assert_eq!(ex[3].stance, Stance::Favor);
        assert_eq!(ex[4].stance, Stance::Against);
        assert_eq!(ex[2].stance, Stance::None);
        assert_eq!(ex[4].target, "Feminist Movement");
    }

    #[test]
    fn parse_rejects_unknown_stance_with_line_number() {
        let bad = "ID\tTarget\tTweet\tStance\n1\tAtheism\thello world\tMAYBE\n";
        match parse_semeval(bad) {
            Err(CorpusError::UnknownStance { line, value }) => {
                assert_eq!(line, 2);
                assert_eq!(value, "MAYBE");
            }
            other => panic!("expected UnknownStance, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_missing_column() {
        let bad = "ID\tTarget\tStance\n1\tAtheism\tFAVOR\n";
        assert!(matches!(
            parse_semeval(bad),
            Err(CorpusError::MissingColumn("Tweet"))
        ));
    }

    #[test]
    fn parse_rejects_short_row() {
        let bad = "ID\tTarget\tTweet\tStance\n1\tAtheism\tonly three fields\n";
        assert!(matches!(parse_semeval(bad), Err(CorpusError::BadRow { line: 2, .. })));
    }

    #[test]
    fn windows_1252_fallback() {
        let mut bytes = b"ID\tTarget\tTweet\tStance\n1\tAtheism\tGod".to_vec();
        bytes.push(0x92); // cp1252 right single quote
        bytes.extend_from_slice(b"s plan\tAGAINST\n");
        let text = decode_text(bytes);
        let ex = parse_semeval(&text).unwrap();
        assert_eq!(ex[0].tweet, "God\u{2019}s plan");
    }

    #[test]
    fn phase1_derivation_is_total() {
        assert_eq!(derive_phase1(Stance::Favor), Phase1Label::Subjective);
        assert_eq!(derive_phase1(Stance::Against), Phase1Label::Subjective);
        assert_eq!(derive_phase1(Stance::None), Phase1Label::Neutral);
    }

    fn tiny_corpus() -> Vec<Example> {
        vec![Example {
            id: "1".into(),
            target: "t".into(),
            tweet: "a a b".into(),
            stance: Stance::Favor,
        }]
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let prep = Preprocessor::standard(false);
        let vocab = build_vocab(&tiny_corpus(), 1, &prep).unwrap();
        // a appears twice; b and t once each, tie broken lexicographically
        assert_eq!(vocab.id("a"), 2);
        assert_eq!(vocab.id("b"), 3);
        assert_eq!(vocab.id("t"), 4);
        assert_eq!(vocab.id(PAD_TOKEN), PAD_ID);
        assert_eq!(vocab.id(UNK_TOKEN), UNK_ID);
        assert_eq!(vocab.size(), 5);
    }

    #[test]
    fn vocab_min_count_prunes_but_keeps_targets() {
        let prep = Preprocessor::standard(false);
        let vocab = build_vocab(&tiny_corpus(), 2, &prep).unwrap();
        assert_eq!(vocab.id("a"), 2);
        assert_eq!(vocab.id("b"), UNK_ID, "below min_count must encode as UNK");
        // 't' only occurs once but is a target token
        assert!(vocab.contains("t"));
    }

    #[test]
    fn vocab_rejects_bad_inputs() {
        let prep = Preprocessor::standard(false);
        assert!(matches!(build_vocab(&[], 1, &prep), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(
            build_vocab(&tiny_corpus(), 0, &prep),
            Err(CorpusError::BadMinCount)
        ));
    }

    #[test]
    fn encode_is_deterministic_and_maps_oov_to_unk() {
        let prep = Preprocessor::standard(false);
        let examples = fixture_examples();
        let vocab = build_vocab(&examples, 1, &prep).unwrap();
        let enc1 = encode(&examples[0], &vocab, &prep).unwrap();
        let enc2 = encode(&examples[0], &vocab, &prep).unwrap();
        assert_eq!(enc1.tweet_ids, enc2.tweet_ids);
        assert_eq!(enc1.target_ids, enc2.target_ids);
        assert!(enc1.tweet_ids.iter().all(|&id| id != PAD_ID));

        let oov = Example {
            id: "x".into(),
            target: "Atheism".into(),
            tweet: "zzzunseen words".into(),
            stance: Stance::None,
        };
        let enc = encode(&oov, &vocab, &prep).unwrap();
        assert_eq!(enc.tweet_ids[0], UNK_ID);
    }

    #[test]
    fn encode_rejects_all_punctuation_tweet() {
        let prep = Preprocessor::standard(false);
        let examples = fixture_examples();
        let vocab = build_vocab(&examples, 1, &prep).unwrap();
        let bad = Example {
            id: "p".into(),
            target: "Atheism".into(),
            tweet: "... !!!".into(),
            stance: Stance::None,
        };
        assert!(matches!(
            encode(&bad, &vocab, &prep),
            Err(CorpusError::EmptyAfterPrep { .. })
        ));
    }

    #[test]
    fn filter_by_target_exact_match() {
        let examples = fixture_examples();
        let atheism = filter_by_target(&examples, "Atheism").unwrap();
        assert_eq!(atheism.len(), 3);
        assert!(atheism.iter().all(|e| e.target == "Atheism"));

        match filter_by_target(&examples, "Climate") {
            Err(CorpusError::UnknownTarget { valid, .. }) => {
                assert_eq!(valid, vec!["Atheism".to_string(), "Feminist Movement".to_string()]);
            }
            other => panic!("expected UnknownTarget, got {other:?}"),
        }
    }

    #[test]
    fn vocab_roundtrip_through_ordered_tokens() {
        let prep = Preprocessor::standard(false);
        let examples = fixture_examples();
        let vocab = build_vocab(&examples, 1, &prep).unwrap();
        let rebuilt = Vocab::from_ordered_tokens(vocab.ordered_tokens().to_vec()).unwrap();
        assert_eq!(vocab, rebuilt);
        assert!(Vocab::from_ordered_tokens(vec!["x".into()]).is_err());
    }
}
