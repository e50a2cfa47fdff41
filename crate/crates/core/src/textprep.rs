//! Tweet cleaning: tokenization, slang normalization from a dictionary
//! file, and stopword removal from a list file.
//!
//! Cleaning order is fixed: tokenize, expand slang, then drop stopwords —
//! slang expansions may introduce stopwords that should still be removable.
//! Targets are only ever tokenized; slang and stopword filters never apply
//! to them.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

/// Placeholder substituted for URLs before tokenization.
pub const URL_TOKEN: &str = "⟨url⟩";
/// Placeholder substituted for bare @mentions before tokenization.
pub const USER_TOKEN: &str = "⟨user⟩";

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    BadEntry { line: usize, reason: String },
}

/// Map from lowercase slang token to its multi-token expansion.
#[derive(Debug, Clone, Default)]
pub struct SlangDict {
    map: HashMap<String, Vec<String>>,
}

impl SlangDict {
    /// Parse `slang<TAB>expansion` lines.
    pub fn parse(text: &str) -> Result<SlangDict, PrepError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (key, expansion) = line.split_once('\t').ok_or_else(|| PrepError::BadEntry {
                line: i + 1,
                reason: "expected slang<TAB>expansion".into(),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(PrepError::BadEntry {
                    line: i + 1,
                    reason: "empty slang key".into(),
                });
            }
            if key != key.to_lowercase() {
                return Err(PrepError::BadEntry {
                    line: i + 1,
                    reason: format!("key '{key}' is not lowercase"),
                });
            }
            let tokens: Vec<String> = expansion
                .split_whitespace()
                .map(|t| t.to_lowercase())
                .collect();
            if tokens.is_empty() {
                return Err(PrepError::BadEntry {
                    line: i + 1,
                    reason: format!("empty expansion for '{key}'"),
                });
            }
            if tokens.len() == 1 && tokens[0] == key {
                return Err(PrepError::BadEntry {
                    line: i + 1,
                    reason: format!("'{key}' maps to itself"),
                });
            }
            map.insert(key, tokens);
        }
        Ok(SlangDict { map })
    }

    pub fn load(path: &Path) -> Result<SlangDict, PrepError> {
        let text = std::fs::read_to_string(path).map_err(|source| PrepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SlangDict::parse(&text)
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(|v| v.as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.map.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Set of lowercase stopword tokens.
#[derive(Debug, Clone, Default)]
pub struct StopwordSet {
    set: HashSet<String>,
}

impl StopwordSet {
    /// Parse one token per line; `#` lines are comments.
    pub fn parse(text: &str) -> Result<StopwordSet, PrepError> {
        let mut set = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line != line.to_lowercase() {
                return Err(PrepError::BadEntry {
                    line: i + 1,
                    reason: format!("stopword '{line}' is not lowercase"),
                });
            }
            set.insert(line.to_string());
        }
        Ok(StopwordSet { set })
    }

    pub fn load(path: &Path) -> Result<StopwordSet, PrepError> {
        let text = std::fs::read_to_string(path).map_err(|source| PrepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        StopwordSet::parse(&text)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.set.contains(token)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

static DEFAULT_SLANG: LazyLock<SlangDict> = LazyLock::new(|| {
    SlangDict::parse(include_str!("../data/slang.tsv")).expect("bundled slang dictionary is valid")
});

static DEFAULT_STOPWORDS: LazyLock<StopwordSet> = LazyLock::new(|| {
    StopwordSet::parse(include_str!("../data/stopwords.txt")).expect("bundled stopword list is valid")
});

/// The slang dictionary shipped with the crate.
pub fn default_slang() -> &'static SlangDict {
    &DEFAULT_SLANG
}

/// The stopword list shipped with the crate.
pub fn default_stopwords() -> &'static StopwordSet {
    &DEFAULT_STOPWORDS
}

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S+").expect("url regex"));

/// Lowercase and split on whitespace, replacing URLs with [`URL_TOKEN`] and
/// @mention tokens with [`USER_TOKEN`], then strip leading/trailing
/// punctuation from every token. A leading `#` or `@` is kept as part of
/// the token; tokens that strip to nothing are dropped. The output is a
/// fixed point: re-tokenizing the joined tokens changes nothing.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let no_urls = URL_RE.replace_all(&lower, format!(" {URL_TOKEN} ").as_str());
    no_urls
        .split_whitespace()
        .filter_map(|raw| {
            let stripped = strip_token(raw);
            if stripped.is_empty() {
                None
            } else if stripped.starts_with('@') && stripped.chars().count() > 1 {
                Some(USER_TOKEN.to_string())
            } else {
                Some(stripped.to_string())
            }
        })
        .collect()
}

fn strip_token(token: &str) -> &str {
    if token == URL_TOKEN || token == USER_TOKEN {
        return token;
    }
    let t = token.trim_end_matches(|c: char| !c.is_alphanumeric());
    t.trim_start_matches(|c: char| !(c.is_alphanumeric() || c == '#' || c == '@'))
}

/// Replace every token found in the dictionary with its expansion.
/// Single pass: expansion tokens are not themselves re-expanded.
pub fn normalize_slang(tokens: &[String], dict: &SlangDict) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match dict.get(tok) {
            Some(expansion) => out.extend(expansion.iter().cloned()),
            None => out.push(tok.clone()),
        }
    }
    out
}

/// Order-preserving stopword filter. If filtering would remove every token,
/// the input is returned unchanged — a zero-length sequence cannot be
/// encoded downstream.
pub fn remove_stopwords(tokens: &[String], stops: &StopwordSet) -> Vec<String> {
    let filtered: Vec<String> = tokens.iter().filter(|t| !stops.contains(t)).cloned().collect();
    if filtered.is_empty() && !tokens.is_empty() {
        tokens.to_vec()
    } else {
        filtered
    }
}

/// Tokenizer plus optional cleaning resources, the configuration consumed
/// by corpus encoding.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub slang: SlangDict,
    pub stopwords: StopwordSet,
    pub cleaning: bool,
}

impl Preprocessor {
    /// Preprocessor backed by the bundled slang and stopword files.
    pub fn standard(cleaning: bool) -> Preprocessor {
        Preprocessor {
            slang: default_slang().clone(),
            stopwords: default_stopwords().clone(),
            cleaning,
        }
    }

    pub fn with_resources(slang: SlangDict, stopwords: StopwordSet, cleaning: bool) -> Preprocessor {
        Preprocessor {
            slang,
            stopwords,
            cleaning,
        }
    }

    /// Tokenize, and when cleaning is enabled, normalize slang then remove
    /// stopwords.
    pub fn clean(&self, text: &str) -> Vec<String> {
        let tokens = tokenize(text);
        if !self.cleaning {
            return tokens;
        }
        let expanded = normalize_slang(&tokens, &self.slang);
        remove_stopwords(&expanded, &self.stopwords)
    }
}
