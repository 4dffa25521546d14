//! Corpus BLEU-1..4 and ROUGE-1/2/L against single references.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate/reference n-gram totals of one pair.
fn overlap<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize, usize) {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let matches = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, c.values().sum(), r.values().sum())
}

fn check_corpus<S>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    Ok(())
}

/// Pooled n-gram bookkeeping for one order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCounts {
    pub matches: usize,
    pub candidate: usize,
    pub reference: usize,
}

impl NgramCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.matches, self.candidate)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matches, self.reference)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn pooled<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> NgramCounts {
    candidates
        .par_iter()
        .zip(references)
        .map(|(c, r)| overlap(c, r, n))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(NgramCounts::default(), |acc, (m, c, r)| NgramCounts {
            matches: acc.matches + m,
            candidate: acc.candidate + c,
            reference: acc.reference + r,
        })
}

pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len >= reference_len {
        1.0
    } else if candidate_len == 0 {
        0.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Corpus-level BLEU-n without smoothing: geometric mean of the pooled
/// clipped precisions times the brevity penalty; 0 if any precision is 0.
pub fn bleu<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> Result<f64> {
    check_corpus(candidates, references)?;
    if n == 0 {
        return Err(Error::InvalidInput("BLEU order must be at least 1".into()));
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let p = pooled(candidates, references, k).precision();
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    Ok(brevity_penalty(c, r) * (log_sum / n as f64).exp())
}

/// Sentence BLEU-n with add-one smoothing on orders above 1. For debugging single outputs.
pub fn sentence_bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> f64 {
    if candidate.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, c, _) = overlap(candidate, reference, k);
        let p = if k == 1 {
            ratio(m, c)
        } else {
            (m + 1) as f64 / (c + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    brevity_penalty(candidate.len(), reference.len()) * (log_sum / n as f64).exp()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    fn from_pr(p: f64, r: f64) -> Self {
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f }
    }
}

/// Corpus-pooled ROUGE-n.
pub fn rouge_n<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> Result<Prf> {
    check_corpus(candidates, references)?;
    let counts = pooled(candidates, references, n);
    Ok(Prf::from_pr(counts.precision(), counts.recall()))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() {
                diag + 1
            } else {
                up.max(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L of one pair.
pub fn rouge_l_pair<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Prf {
    let l = lcs_len(candidate, reference);
    Prf::from_pr(ratio(l, candidate.len()), ratio(l, reference.len()))
}

/// Mean of the per-pair ROUGE-L precision, recall and F1.
pub fn rouge_l<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<Prf> {
    check_corpus(candidates, references)?;
    let per: Vec<Prf> = candidates
        .par_iter()
        .zip(references)
        .map(|(c, r)| rouge_l_pair(c, r))
        .collect();
    let n = per.len() as f64;
    Ok(Prf {
        p: per.iter().map(|x| x.p).sum::<f64>() / n,
        r: per.iter().map(|x| x.r).sum::<f64>() / n,
        f: per.iter().map(|x| x.f).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub pairs: usize,
    pub counts: ReportCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    /// Orders 1 to 4.
    pub ngrams: Vec<NgramCounts>,
    pub candidate_tokens: usize,
    pub reference_tokens: usize,
    pub brevity_penalty: f64,
}

pub fn score<S: AsRef<str> + Sync>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<ScoreReport> {
    check_corpus(candidates, references)?;
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    Ok(ScoreReport {
        bleu1: bleu(candidates, references, 1)?,
        bleu2: bleu(candidates, references, 2)?,
        bleu3: bleu(candidates, references, 3)?,
        bleu4: bleu(candidates, references, 4)?,
        rouge1: rouge_n(candidates, references, 1)?,
        rouge2: rouge_n(candidates, references, 2)?,
        rouge_l: rouge_l(candidates, references)?,
        pairs: candidates.len(),
        counts: ReportCounts {
            ngrams: (1..=4).map(|n| pooled(candidates, references, n)).collect(),
            candidate_tokens: c,
            reference_tokens: r,
            brevity_penalty: brevity_penalty(c, r),
        },
    })
}
