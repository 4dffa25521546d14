//! Beam search and greedy decoding over the extended vocabulary.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::model::{Decoder, DecoderState, Hyperparams, Parameters, PROB_FLOOR};
use crate::numerics::Scalar;
use crate::vocab::{decode_ids, encode_source, Vocabulary, END, PAD, START, UNK_TOKEN};
use crate::{Error, Result};

/// `p*` over the extended vocabulary, the next state and, when the model
/// attends, the attention over source positions.
pub type StepOutput<S> = (Vec<f64>, S, Option<Vec<f64>>);

/// Anything that yields a next-token distribution given a state and the previous token.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&mut self) -> Result<Self::State>;

    fn step(&mut self, state: &Self::State, prev: usize) -> Result<StepOutput<Self::State>>;
}

impl<T: Scalar> StepModel for Decoder<'_, T> {
    type State = DecoderState;

    fn initial_state(&mut self) -> Result<DecoderState> {
        Ok(Decoder::initial_state(self))
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<StepOutput<DecoderState>> {
        let v = Decoder::step(self, state, prev)?;
        Ok((v.p_star, v.state, v.attention))
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Extended ids emitted so far, END included when finished.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub state: S,
    pub finished: bool,
    /// Attention of every emitted token, when the model attends.
    pub attention: Vec<Vec<f64>>,
}

/// One ranked output of the search.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Extended ids without END.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// `logprob / |tokens|`, END counted.
    pub score: f64,
    pub finished: bool,
    pub attention: Vec<Vec<f64>>,
}

fn log_p(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn selectable(id: usize) -> bool {
    id != PAD && id != START
}

fn by_logprob_then_ids(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// The `k` most probable selectable ids, most probable first, lower id on ties.
fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).filter(|&i| selectable(i)).collect();
    ids.sort_by(|&a, &b| {
        log_p(p[b])
            .partial_cmp(&log_p(p[a]))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

fn finish<S>(h: Hypothesis<S>) -> Decoded {
    let len = h.tokens.len().max(1) as f64;
    let mut tokens = h.tokens;
    if h.finished {
        tokens.pop();
    }
    Decoded {
        tokens,
        logprob: h.logprob,
        score: h.logprob / len,
        finished: h.finished,
        attention: h.attention,
    }
}

/// Standard beam search. Every live hypothesis is expanded with its top `k`
/// continuations and the `k` best by total log-probability survive; those that
/// end in END move to the completed pool. The search stops once `k` are
/// complete or after `max_len` tokens, keeping unterminated hypotheses.
/// Results are ranked by length-normalized log-probability.
pub fn beam_search<M: StepModel>(model: &mut M, k: usize, max_len: usize) -> Result<Vec<Decoded>> {
    if k == 0 || max_len == 0 {
        return Err(Error::InvalidInput("beam size and max_len must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.initial_state()?,
        finished: false,
        attention: Vec::new(),
    }];
    let mut done: Vec<Hypothesis<M::State>> = Vec::new();
    for _ in 0..max_len {
        let mut cands = Vec::with_capacity(live.len() * k);
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(START);
            let (p, state, att) = model.step(&h.state, prev)?;
            for id in top_k(&p, k) {
                let mut tokens = h.tokens.clone();
                tokens.push(id);
                let mut attention = h.attention.clone();
                attention.extend(att.clone());
                cands.push(Hypothesis {
                    tokens,
                    logprob: h.logprob + log_p(p[id]),
                    state: state.clone(),
                    finished: id == END,
                    attention,
                });
            }
        }
        cands.sort_by(|a, b| by_logprob_then_ids((a.logprob, &a.tokens), (b.logprob, &b.tokens)));
        cands.truncate(k);
        live.clear();
        for c in cands {
            if c.finished {
                done.push(c);
            } else {
                live.push(c);
            }
        }
        if done.len() >= k || live.is_empty() {
            break;
        }
    }
    let mut out: Vec<Decoded> = done.into_iter().chain(live).map(finish).collect();
    out.sort_by(|a, b| by_logprob_then_ids((a.score, &a.tokens), (b.score, &b.tokens)));
    Ok(out)
}

/// Takes the most probable selectable token at each step until END or `max_len`.
pub fn greedy_decode<M: StepModel>(model: &mut M, max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    let mut h = Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.initial_state()?,
        finished: false,
        attention: Vec::new(),
    };
    while h.tokens.len() < max_len && !h.finished {
        let prev = h.tokens.last().copied().unwrap_or(START);
        let (p, state, att) = model.step(&h.state, prev)?;
        let id = top_k(&p, 1)[0];
        h.tokens.push(id);
        h.logprob += log_p(p[id]);
        h.state = state;
        h.finished = id == END;
        h.attention.extend(att);
    }
    Ok(finish(h))
}

/// Replaces each UNK with the source token that received the most attention at that step.
pub fn resolve_unk<S: AsRef<str>>(tokens: &[String], attention: &[Vec<f64>], source: &[S]) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(t, tok)| {
            if tok != UNK_TOKEN {
                return tok.clone();
            }
            let Some(a) = attention.get(t) else {
                return tok.clone();
            };
            let best = (0..a.len().min(source.len())).fold(None, |best: Option<usize>, i| match best {
                Some(b) if a[b] >= a[i] => Some(b),
                _ => Some(i),
            });
            best.map_or_else(|| tok.clone(), |i| source[i].as_ref().to_string())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub greedy: bool,
    pub max_len: usize,
}

impl DecodeOptions {
    pub fn beam(k: usize, max_len: usize) -> Self {
        DecodeOptions {
            beam: k,
            greedy: false,
            max_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tokens: Vec<String>,
    pub score: f64,
    pub logprob: f64,
}

/// Decodes a title for one tokenized snippet. Models without the copy
/// mechanism have their UNK outputs replaced via attention.
pub fn generate<T: Scalar, S: AsRef<str>>(
    params: &Parameters<T>,
    hyper: &Hyperparams,
    vocab: &Vocabulary,
    code_tokens: &[S],
    opts: DecodeOptions,
) -> Result<Generated> {
    if code_tokens.is_empty() {
        return Err(Error::InvalidInput("empty code snippet".into()));
    }
    let source = encode_source(code_tokens, vocab);
    let mut dec = Decoder::new(params, hyper, &source)?;
    let best = if opts.greedy {
        greedy_decode(&mut dec, opts.max_len)?
    } else {
        beam_search(&mut dec, opts.beam, opts.max_len)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidInput("beam search produced no hypothesis".into()))?
    };
    let mut tokens = decode_ids(&best.tokens, vocab, &source.ext)?;
    if hyper.ablation.attention && !hyper.ablation.copy {
        tokens = resolve_unk(&tokens, &best.attention, code_tokens);
    }
    Ok(Generated {
        tokens,
        score: best.score,
        logprob: best.logprob,
    })
}

/// [`generate`] over many snippets in parallel; output order follows input order.
pub fn generate_all<T: Scalar, S: AsRef<str> + Sync>(
    params: &Parameters<T>,
    hyper: &Hyperparams,
    vocab: &Vocabulary,
    snippets: &[Vec<S>],
    opts: DecodeOptions,
) -> Result<Vec<Generated>> {
    snippets
        .par_iter()
        .map(|code| generate(params, hyper, vocab, code, opts))
        .collect()
}
