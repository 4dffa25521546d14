//! Shared code/title vocabulary and per-example extended vocabularies.

use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const END: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>"];
pub const UNK_TOKEN: &str = "<unk>";

const FILE_HEADER: &str = "C2Q-VOCAB v1 count=";

/// Fixed token/id mapping. Ids `0..4` are PAD, UNK, START and END.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> =
            id_to_token.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            if token_to_id.contains_key(&t) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry {t:?}")));
            }
            token_to_id.insert(t.clone(), id_to_token.len());
            id_to_token.push(t);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-special entries in id order.
    pub fn entries(&self) -> &[String] {
        &self.id_to_token[NUM_SPECIALS..]
    }

    /// Hex SHA-256 of the serialized vocabulary; checkpoints record it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    /// Header line `C2Q-VOCAB v1 count=<n>`, then one token per line; the
    /// token on line `k` after the header has id `k + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FILE_HEADER}{}", self.entries().len());
        for t in self.entries() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<vocab>".into(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty vocabulary file".into()))?;
        let count: usize = header
            .strip_prefix(FILE_HEADER)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad(1, format!("bad header {header:?}")))?;
        let tokens: Vec<String> = lines.map(String::from).collect();
        if tokens.len() != count {
            return Err(bad(1, format!("header says {count} tokens, file has {}", tokens.len())));
        }
        if let Some(i) = tokens
            .iter()
            .position(|t| t.is_empty() || t.contains(char::is_whitespace))
        {
            return Err(bad(i + 2, "token is empty or contains whitespace".into()));
        }
        Vocabulary::from_tokens(tokens)
    }
}

/// Keeps every token seen more than `min_freq` times (threshold `t` means
/// "at least `t + 1` occurrences"), most frequent first with ties in
/// lexicographic order, truncated to `max_size` non-special entries.
pub fn build_vocab<'a, I, S>(streams: I, min_freq: usize, max_size: Option<usize>) -> Vocabulary
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for stream in streams {
        for t in stream {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c > min_freq && !SPECIAL_TOKENS.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = max_size {
        kept.truncate(cap);
    }
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string())).expect("counted tokens are distinct")
}

/// Source tokens missing from the base vocabulary, in first-occurrence order.
/// The `k`-th one has extended id `base_size + k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtendedVocab {
    base_size: usize,
    oov_tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl ExtendedVocab {
    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn oov_tokens(&self) -> &[String] {
        &self.oov_tokens
    }

    /// `|base| + |oov|`
    pub fn size(&self) -> usize {
        self.base_size + self.oov_tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|k| self.base_size + k)
    }
}

/// Base ids (OOV as UNK), extended ids (OOV as per-example ids) and the extension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSource {
    pub base_ids: Vec<usize>,
    pub extended_ids: Vec<usize>,
    pub ext: ExtendedVocab,
}

pub fn encode_source<S: AsRef<str>>(code_tokens: &[S], vocab: &Vocabulary) -> EncodedSource {
    let mut ext = ExtendedVocab {
        base_size: vocab.len(),
        ..Default::default()
    };
    let mut base_ids = Vec::with_capacity(code_tokens.len());
    let mut extended_ids = Vec::with_capacity(code_tokens.len());
    for t in code_tokens {
        let t = t.as_ref();
        match vocab.id(t) {
            Some(id) => {
                base_ids.push(id);
                extended_ids.push(id);
            }
            None => {
                let next = ext.oov_tokens.len();
                let k = *ext.index.entry(t.to_string()).or_insert(next);
                if k == next {
                    ext.oov_tokens.push(t.to_string());
                }
                base_ids.push(UNK);
                extended_ids.push(vocab.len() + k);
            }
        }
    }
    EncodedSource {
        base_ids,
        extended_ids,
        ext,
    }
}

/// Target ids over the extended vocabulary with END appended. Tokens neither in
/// the base vocabulary nor in the paired source become UNK.
pub fn encode_target<S: AsRef<str>>(title_tokens: &[S], vocab: &Vocabulary, ext: &ExtendedVocab) -> Vec<usize> {
    title_tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            vocab.id(t).or_else(|| ext.id(t)).unwrap_or(UNK)
        })
        .chain(std::iter::once(END))
        .collect()
}

/// Maps extended ids back to tokens, stopping before the first END.
pub fn decode_ids(ids: &[usize], vocab: &Vocabulary, ext: &ExtendedVocab) -> Result<Vec<String>> {
    let limit = vocab.len() + ext.oov_tokens.len();
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= limit {
            return Err(Error::IdOutOfRange { id, limit });
        }
        if id == END {
            break;
        }
        let tok = match vocab.token(id) {
            Some(t) => t,
            None => &ext.oov_tokens[id - vocab.len()],
        };
        out.push(tok.to_string());
    }
    Ok(out)
}
