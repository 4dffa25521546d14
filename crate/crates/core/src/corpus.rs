//! Post ingestion, pair mining, tokenization, filtering and dataset splits.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::{Error, Result};

/// Placeholder emitted in place of numeric literals.
pub const NUMBER_TOKEN: &str = "NUMBER";
/// Placeholder emitted in place of string and character literals.
pub const STRING_TOKEN: &str = "STRING";
/// Reserved placeholder. Nothing in the tokenizer emits it.
pub const VAR_TOKEN: &str = "VAR";

/// Title words that mark a post as a question.
pub const INTERROGATIVES: [&str; 5] = ["how", "what", "why", "which", "when"];

pub const MIN_CODE_TOKENS: usize = 16;
pub const MAX_CODE_TOKENS: usize = 128;
pub const MIN_TITLE_TOKENS: usize = 4;
pub const MAX_TITLE_TOKENS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Python,
    Java,
    Javascript,
    Csharp,
    Sql,
}

impl Lang {
    pub const ALL: [Lang; 5] = [Lang::Python, Lang::Java, Lang::Javascript, Lang::Csharp, Lang::Sql];

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Python => "python",
            Lang::Java => "java",
            Lang::Javascript => "javascript",
            Lang::Csharp => "csharp",
            Lang::Sql => "sql",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lang::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unsupported language {s:?}")))
    }
}

/// One question post as ingested from JSONL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPost {
    pub id: u64,
    pub lang: Lang,
    pub title: String,
    pub body: String,
    pub score: i64,
}

/// A mined, not yet tokenized pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub id: u64,
    pub lang: Lang,
    pub code: String,
    pub title: String,
}

/// A tokenized `<code, title>` training pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcPair {
    pub id: u64,
    pub lang: Lang,
    pub code_tokens: Vec<String>,
    pub title_tokens: Vec<String>,
}

/// Why posts were dropped by [`extract_pairs`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub low_score: usize,
    pub no_code: usize,
    pub empty_title: usize,
    pub malformed_code: usize,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.low_score + self.no_code + self.empty_title + self.malformed_code
    }
}

enum Blocks {
    None,
    Some(Vec<String>),
    Malformed,
}

/// Code blocks are delimited by lines that are exactly `<code>` and `</code>`.
fn code_blocks(body: &str) -> Blocks {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in body.lines() {
        let marker = line.trim_end_matches('\r');
        match (marker, current.as_mut()) {
            ("<code>", None) => current = Some(Vec::new()),
            ("<code>", Some(_)) | ("</code>", None) => return Blocks::Malformed,
            ("</code>", Some(lines)) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (_, Some(lines)) => lines.push(line),
            (_, None) => {}
        }
    }
    if current.is_some() {
        return Blocks::Malformed;
    }
    if blocks.is_empty() {
        Blocks::None
    } else {
        Blocks::Some(blocks)
    }
}

/// One candidate per post with `score >= min_score`, a nonempty title and at
/// least one code block. Several blocks are joined in document order with `\n`.
pub fn extract_pairs(posts: &[RawPost], min_score: i64) -> (Vec<Candidate>, SkipReport) {
    let mut report = SkipReport::default();
    let mut out = Vec::new();
    for post in posts {
        if post.score < min_score {
            report.low_score += 1;
            continue;
        }
        if post.title.trim().is_empty() {
            report.empty_title += 1;
            continue;
        }
        match code_blocks(&post.body) {
            Blocks::None => report.no_code += 1,
            Blocks::Malformed => report.malformed_code += 1,
            Blocks::Some(blocks) => out.push(Candidate {
                id: post.id,
                lang: post.lang,
                code: blocks.join("\n"),
                title: post.title.clone(),
            }),
        }
    }
    (out, report)
}

/// A recoverable problem met while tokenizing code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizeWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub warnings: Vec<TokenizeWarning>,
}

struct CommentSyntax {
    line: &'static [&'static str],
    block: Option<(&'static str, &'static str)>,
}

fn comment_syntax(lang: Lang) -> CommentSyntax {
    match lang {
        Lang::Python => CommentSyntax {
            line: &["#"],
            block: None,
        },
        Lang::Java | Lang::Javascript | Lang::Csharp => CommentSyntax {
            line: &["//"],
            block: Some(("/*", "*/")),
        },
        Lang::Sql => CommentSyntax {
            line: &["--"],
            block: Some(("/*", "*/")),
        },
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    lang: Lang,
    out: &'a mut Tokenized,
}

impl Lexer<'_> {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek(0) {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn warn(&mut self, message: String) {
        let line = self.line;
        self.out.warnings.push(TokenizeWarning { line, message });
    }

    /// Consumes a string literal whose opening delimiter starts at `pos`.
    fn string(&mut self, delim: &str, escapes: bool, doubled_quote_escape: bool, multiline: bool) {
        let start_line = self.line;
        for _ in delim.chars() {
            self.bump();
        }
        let quote = delim.chars().next().unwrap_or('"');
        loop {
            if self.starts_with(delim) {
                if doubled_quote_escape && delim.len() == 1 && self.peek(1) == Some(quote) {
                    self.bump();
                    self.bump();
                    continue;
                }
                for _ in delim.chars() {
                    self.bump();
                }
                break;
            }
            match self.peek(0) {
                None => {
                    self.warn(format!("unterminated string literal opened on line {start_line}"));
                    break;
                }
                Some('\n') if !multiline => {
                    self.warn(format!("unterminated string literal on line {start_line}"));
                    break;
                }
                Some('\\') if escapes => {
                    self.bump();
                    if self.peek(0) != Some('\n') || multiline {
                        self.bump();
                    }
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
        self.out.tokens.push(STRING_TOKEN.to_string());
    }

    /// String literal starting at the current position, if any, as
    /// `(prefix_len, delimiter, escapes, doubled_quote, multiline)`.
    fn string_start(&self) -> Option<(usize, &'static str, bool, bool, bool)> {
        let c = self.peek(0)?;
        match self.lang {
            Lang::Python => {
                let mut pre = 0;
                while pre < 2 && self.peek(pre).is_some_and(|c| "rRbBuUfF".contains(c)) {
                    pre += 1;
                }
                if pre > 0 && self.pos > 0 && is_ident_char(self.chars[self.pos - 1]) {
                    return None;
                }
                let q = self.peek(pre)?;
                if q != '"' && q != '\'' {
                    return None;
                }
                let raw = (0..pre).any(|i| matches!(self.peek(i), Some('r' | 'R')));
                let triple = self.peek(pre + 1) == Some(q) && self.peek(pre + 2) == Some(q);
                let delim = match (q, triple) {
                    ('"', true) => "\"\"\"",
                    ('\'', true) => "'''",
                    ('"', false) => "\"",
                    _ => "'",
                };
                Some((pre, delim, !raw, false, triple))
            }
            Lang::Csharp if c == '@' && self.peek(1) == Some('"') => Some((1, "\"", false, true, true)),
            Lang::Csharp | Lang::Java => match c {
                '"' => Some((0, "\"", true, false, false)),
                '\'' => Some((0, "'", true, false, false)),
                _ => None,
            },
            Lang::Javascript => match c {
                '"' => Some((0, "\"", true, false, false)),
                '\'' => Some((0, "'", true, false, false)),
                '`' => Some((0, "`", true, false, true)),
                _ => None,
            },
            Lang::Sql => match c {
                '\'' => Some((0, "'", false, true, true)),
                '"' => Some((0, "\"", false, true, false)),
                _ => None,
            },
        }
    }

    fn number(&mut self) {
        let mut prev = '\0';
        while let Some(c) = self.peek(0) {
            let exp_sign = (c == '+' || c == '-')
                && (prev == 'e' || prev == 'E')
                && self.peek(1).is_some_and(|d| d.is_ascii_digit());
            let dot = c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit());
            if is_ident_char(c) || dot || exp_sign {
                prev = c;
                self.bump();
            } else {
                break;
            }
        }
        self.out.tokens.push(NUMBER_TOKEN.to_string());
    }

    fn run(&mut self) {
        let syntax = comment_syntax(self.lang);
        while let Some(c) = self.peek(0) {
            if c.is_whitespace() {
                self.bump();
                continue;
            }
            if syntax.line.iter().any(|m| self.starts_with(m)) {
                self.skip_line();
                continue;
            }
            if let Some((open, close)) = syntax.block {
                if self.starts_with(open) {
                    for _ in open.chars() {
                        self.bump();
                    }
                    let start = self.line;
                    loop {
                        if self.starts_with(close) {
                            for _ in close.chars() {
                                self.bump();
                            }
                            break;
                        }
                        if self.bump().is_none() {
                            self.warn(format!("unterminated block comment opened on line {start}"));
                            break;
                        }
                    }
                    continue;
                }
            }
            if let Some((prefix, delim, escapes, doubled, multiline)) = self.string_start() {
                for _ in 0..prefix {
                    self.bump();
                }
                self.string(delim, escapes, doubled, multiline);
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
                self.number();
                continue;
            }
            if is_ident_start(c) {
                let start = self.pos;
                while self.peek(0).is_some_and(is_ident_char) {
                    self.bump();
                }
                self.out.tokens.push(self.chars[start..self.pos].iter().collect());
                continue;
            }
            self.bump();
            self.out.tokens.push(c.to_string());
        }
    }
}

/// Strips comments, replaces numeric literals by `NUMBER` and string literals
/// by `STRING`, and splits the rest into identifiers and single punctuation
/// characters, in source order.
pub fn tokenize_code(text: &str, lang: Lang) -> Tokenized {
    let mut out = Tokenized::default();
    Lexer {
        chars: text.chars().collect(),
        pos: 0,
        line: 1,
        lang,
        out: &mut out,
    }
    .run();
    out
}

/// Lowercases and splits on whitespace; each punctuation character becomes its own token.
pub fn tokenize_title(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Tokenizes every candidate; tokenizer warnings are returned with the pair id.
pub fn tokenize_candidates(candidates: &[Candidate]) -> (Vec<QcPair>, Vec<(u64, TokenizeWarning)>) {
    let mut warnings = Vec::new();
    let pairs = candidates
        .iter()
        .map(|c| {
            let code = tokenize_code(&c.code, c.lang);
            warnings.extend(code.warnings.into_iter().map(|w| (c.id, w)));
            QcPair {
                id: c.id,
                lang: c.lang,
                code_tokens: code.tokens,
                title_tokens: tokenize_title(&c.title),
            }
        })
        .collect();
    (pairs, warnings)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub empty_token: usize,
    pub no_interrogative: usize,
    pub code_too_short: usize,
    pub code_too_long: usize,
    pub title_too_short: usize,
    pub title_too_long: usize,
}

pub fn has_interrogative(title_tokens: &[String]) -> bool {
    title_tokens
        .iter()
        .any(|t| INTERROGATIVES.iter().any(|k| t.eq_ignore_ascii_case(k)))
}

/// Keeps pairs whose title has an interrogative keyword, with
/// 16..=128 code tokens and 4..=16 title tokens. Each rejected pair is counted
/// under the first failing reason.
pub fn filter_pairs(candidates: Vec<QcPair>) -> (Vec<QcPair>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for p in candidates {
        let bad_token = |t: &String| t.is_empty() || t.chars().any(char::is_whitespace);
        let code_len = p.code_tokens.len();
        let title_len = p.title_tokens.len();
        if p.code_tokens.iter().chain(&p.title_tokens).any(bad_token) {
            report.empty_token += 1;
        } else if !has_interrogative(&p.title_tokens) {
            report.no_interrogative += 1;
        } else if code_len < MIN_CODE_TOKENS {
            report.code_too_short += 1;
        } else if code_len > MAX_CODE_TOKENS {
            report.code_too_long += 1;
        } else if title_len < MIN_TITLE_TOKENS {
            report.title_too_short += 1;
        } else if title_len > MAX_TITLE_TOKENS {
            report.title_too_long += 1;
        } else {
            report.kept += 1;
            kept.push(p);
        }
    }
    (kept, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<QcPair>,
    pub val: Vec<QcPair>,
    pub test: Vec<QcPair>,
}

/// Draws validation and test pairs uniformly without replacement; the rest is
/// training data. Every split keeps the input order.
pub fn split_dataset(pairs: Vec<QcPair>, spec: SplitSpec) -> Result<Splits> {
    let held = spec.val_count + spec.test_count;
    if held >= pairs.len() {
        return Err(Error::TooFewPairs {
            required: held + 1,
            available: pairs.len(),
        });
    }
    let mut rng = Rng::new(spec.seed);
    let drawn = rng.sample_indices(pairs.len(), held);
    let val: HashSet<usize> = drawn[..spec.val_count].iter().copied().collect();
    let test: HashSet<usize> = drawn[spec.val_count..].iter().copied().collect();
    let mut out = Splits::default();
    for (i, p) in pairs.into_iter().enumerate() {
        if val.contains(&i) {
            out.val.push(p);
        } else if test.contains(&i) {
            out.test.push(p);
        } else {
            out.train.push(p);
        }
    }
    Ok(out)
}
