use super::{Hyperparams, Parameters};
use crate::corpus::QcPair;
use crate::numerics::{LstmWeights, Scalar, Tape, Tensor, Var};
use crate::vocab::{encode_source, encode_target, EncodedSource, Vocabulary, START, UNK};
use crate::{Error, Result};

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A training pair mapped to ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub id: u64,
    pub source: EncodedSource,
    /// Extended ids, END included.
    pub target: Vec<usize>,
}

impl EncodedExample {
    pub fn new<S: AsRef<str>>(id: u64, code_tokens: &[S], title_tokens: &[S], vocab: &Vocabulary) -> Self {
        let source = encode_source(code_tokens, vocab);
        let target = encode_target(title_tokens, vocab, &source.ext);
        EncodedExample { id, source, target }
    }

    pub fn from_pair(pair: &QcPair, vocab: &Vocabulary) -> Self {
        Self::new(pair.id, &pair.code_tokens, &pair.title_tokens, vocab)
    }
}

/// Decoder hidden state, cell state and coverage vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub cov: Var,
}

pub struct Encoded {
    /// `[M, 2H]`; row `i` is the last layer's `[fw_i; bw_i]`.
    pub memory: Var,
    /// `W_eh · h_i` for every source position, `[M, A]`; present when attention is on.
    pub memory_proj: Option<Var>,
    /// `[fw_M; bw_1]` hidden states of the last layer.
    pub summary: Var,
    pub init: DecoderState,
    pub len: usize,
}

fn run_lstm<T: Scalar>(
    tape: &mut Tape<'_, T>,
    w: LstmWeights,
    inputs: &[Var],
    hidden: usize,
    reverse: bool,
) -> Result<Vec<(Var, Var)>> {
    let zero = tape.zeros(1, hidden);
    let (mut h, mut c) = (zero, zero);
    let mut out = vec![(zero, zero); inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        (h, c) = tape.lstm_cell(inputs[t], h, c, w)?;
        out[t] = (h, c);
    }
    Ok(out)
}

/// Two-layer bidirectional LSTM encoder plus the tanh bridge to the decoder's
/// initial hidden and cell states.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &Parameters<T>,
    hyper: &Hyperparams,
    base_ids: &[usize],
) -> Result<Encoded> {
    if base_ids.is_empty() {
        return Err(Error::InvalidInput("cannot encode an empty source".into()));
    }
    let l = params.layout();
    let hd = hyper.hidden;
    let table = tape.param(l.embedding);
    let mut inputs = Vec::with_capacity(base_ids.len());
    for &id in base_ids {
        inputs.push(tape.embed_row(table, id)?);
    }
    let mut last = Vec::new();
    for layer in &l.encoder {
        let fw = run_lstm(tape, layer[0], &inputs, hd, false)?;
        let bw = run_lstm(tape, layer[1], &inputs, hd, true)?;
        inputs = fw
            .iter()
            .zip(&bw)
            .map(|(f, b)| tape.concat(&[f.0, b.0]))
            .collect::<Result<_>>()?;
        last = vec![fw, bw];
    }
    let (fw, bw) = (&last[0], &last[1]);
    let m = base_ids.len();
    let memory = tape.stack_rows(&inputs)?;
    let summary = tape.concat(&[fw[m - 1].0, bw[0].0])?;
    let summary_c = tape.concat(&[fw[m - 1].1, bw[0].1])?;
    let h0 = tape.linear(summary, l.bridge_h.0, l.bridge_h.1)?;
    let h0 = tape.tanh(h0);
    let c0 = tape.linear(summary_c, l.bridge_c.0, l.bridge_c.1)?;
    let c0 = tape.tanh(c0);
    let cov = tape.zeros(1, m);
    let memory_proj = if hyper.ablation.attention {
        let w = tape.param(l.att_w_eh);
        Some(tape.matmul_nt(memory, w)?)
    } else {
        None
    };
    Ok(Encoded {
        memory,
        memory_proj,
        summary,
        init: DecoderState { h: h0, c: c0, cov },
        len: m,
    })
}

/// Scores `e_i = vᵀ tanh(W_cv cov_i + W_eh h_i + W_sh s_t + b)` (the coverage
/// term only when `coverage` is set), normalizes them over the `valid`
/// positions and returns `(a_t, c_t = Σ a_i h_i)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &Parameters<T>,
    memory: Var,
    memory_proj: Var,
    s_t: Var,
    cov: Var,
    coverage: bool,
    valid: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let l = params.layout();
    let m = tape.shape(memory).0;
    if tape.shape(cov) != (1, m) {
        return Err(Error::Shape {
            op: "attention coverage",
            left: vec![1, m],
            right: vec![tape.shape(cov).0, tape.shape(cov).1],
        });
    }
    let ws = tape.linear(s_t, l.att_w_sh, l.att_b)?;
    let mut pre = tape.add_row(memory_proj, ws)?;
    if coverage {
        let w_cv = tape.param(l.att_w_cv);
        let term = tape.outer(cov, w_cv)?;
        pre = tape.add(pre, term)?;
    }
    let act = tape.tanh(pre);
    let v = tape.param(l.att_v);
    let scores = tape.matmul_nt(act, v)?;
    let scores = tape.reshape(scores, 1, m)?;
    let a = tape.softmax(scores, valid)?;
    let context = tape.matmul_nn(a, memory)?;
    Ok((a, context))
}

/// `p*(w) = p_cg · Σ_{i: src_i = w} a_i + (1 − p_cg) · P(w)` over the extended vocabulary.
pub(crate) fn mix_copy<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p_vocab: Var,
    attention: Var,
    copy_gate: Var,
    source_ext: &[usize],
    ext_size: usize,
) -> Result<Var> {
    let copy = tape.scatter_add(attention, source_ext, ext_size)?;
    let generate = tape.pad(p_vocab, ext_size)?;
    let keep = tape.one_minus(copy_gate);
    let copy = tape.scale(copy, copy_gate)?;
    let generate = tape.scale(generate, keep)?;
    tape.add(copy, generate)
}

/// Everything one decoder step produces.
#[derive(Clone, Copy, Debug)]
pub struct DecoderStep {
    /// State after this step; its coverage is `cov_t + a_t`.
    pub state: DecoderState,
    pub attention: Option<Var>,
    /// Coverage fed into this step's attention.
    pub coverage: Var,
    pub context: Var,
    pub copy_gate: Option<Var>,
    pub vocab_dist: Var,
    /// Distribution over `|V| + |oov|` extended ids.
    pub p_star: Var,
}

/// One decoder step fed with the previous output `y_prev`. Extended-only ids
/// are fed back as UNK.
#[allow(clippy::too_many_arguments)]
pub fn decode_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &Parameters<T>,
    hyper: &Hyperparams,
    enc: &Encoded,
    source_ext: &[usize],
    ext_size: usize,
    state: DecoderState,
    y_prev: usize,
) -> Result<DecoderStep> {
    let l = params.layout();
    let ab = hyper.ablation;
    let table = tape.param(l.embedding);
    let input = if y_prev < hyper.vocab_size { y_prev } else { UNK };
    let x = tape.embed_row(table, input)?;
    let (h, c) = tape.lstm_cell(x, state.h, state.c, l.decoder)?;

    let (attention, context) = if ab.attention {
        let proj = enc
            .memory_proj
            .ok_or_else(|| Error::InvalidInput("encoder ran without attention projection".into()))?;
        let (a, ctx) = attention_step(tape, params, enc.memory, proj, h, state.cov, ab.coverage, None)?;
        (Some(a), ctx)
    } else {
        (None, enc.summary)
    };

    let hc = tape.concat(&[h, context])?;
    let logits = tape.linear(hc, l.out_w, l.out_b)?;
    let vocab_dist = tape.softmax(logits, None)?;

    let (copy_gate, p_star) = match (ab.copy, attention) {
        (true, Some(a)) => {
            let wc = tape.param(l.gate_c);
            let ws = tape.param(l.gate_s);
            let wx = tape.param(l.gate_x);
            let b = tape.param(l.gate_b);
            let zc = tape.matmul_nt(context, wc)?;
            let zs = tape.matmul_nt(h, ws)?;
            let zx = tape.matmul_nt(x, wx)?;
            let z = tape.add(zc, zs)?;
            let z = tape.add(z, zx)?;
            let z = tape.add(z, b)?;
            let gate = tape.sigmoid(z);
            let p = mix_copy(tape, vocab_dist, a, gate, source_ext, ext_size)?;
            (Some(gate), p)
        }
        _ => (None, tape.pad(vocab_dist, ext_size)?),
    };

    let cov_next = match attention {
        Some(a) => tape.add(state.cov, a)?,
        None => state.cov,
    };
    Ok(DecoderStep {
        state: DecoderState { h, c, cov: cov_next },
        attention,
        coverage: state.cov,
        context,
        copy_gate,
        vocab_dist,
        p_star,
    })
}

pub struct LossRecord {
    /// `−(1/T) Σ log p*(y_t) + λ (1/T) Σ_t Σ_i min(a_i^t, cov_i^t)`
    pub loss: Var,
    /// The likelihood part alone.
    pub nll: Var,
    pub token_logprobs: Vec<f64>,
    pub coverage_penalties: Vec<f64>,
}

/// Teacher-forced loss of one example. The coverage term is present only when
/// coverage is enabled.
pub fn sequence_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &Parameters<T>,
    hyper: &Hyperparams,
    example: &EncodedExample,
) -> Result<LossRecord> {
    let target = &example.target;
    if target.is_empty() {
        return Err(Error::InvalidInput(format!(
            "example {} has an empty target",
            example.id
        )));
    }
    let ext_size = example.source.ext.size();
    if let Some(&bad) = target.iter().find(|&&y| y >= ext_size) {
        return Err(Error::IdOutOfRange {
            id: bad,
            limit: ext_size,
        });
    }
    let enc = encode(tape, params, hyper, &example.source.base_ids)?;
    let mut state = enc.init;
    let mut y_prev = START;
    let mut logps = Vec::with_capacity(target.len());
    let mut penalties = Vec::new();
    let floor = T::of(PROB_FLOOR);
    let base = example.source.ext.base_size();
    for &y in target {
        // without copying, an out-of-vocabulary target can only be matched by UNK
        let y = if !hyper.ablation.copy && y >= base { UNK } else { y };
        let step = decode_step(
            tape,
            params,
            hyper,
            &enc,
            &example.source.extended_ids,
            ext_size,
            state,
            y_prev,
        )?;
        let p = tape.pick(step.p_star, y)?;
        logps.push(tape.ln(p, floor));
        if hyper.ablation.coverage {
            if let Some(a) = step.attention {
                let m = tape.minimum(a, step.coverage)?;
                penalties.push(tape.sum(m));
            }
        }
        state = step.state;
        y_prev = y;
    }
    let t = T::of(target.len() as f64);
    let all = tape.concat(&logps)?;
    let total = tape.sum(all);
    let nll = tape.affine(total, -T::one() / t, T::zero());
    let loss = if penalties.is_empty() {
        nll
    } else {
        let pens = tape.concat(&penalties)?;
        let pen_total = tape.sum(pens);
        let weighted = tape.affine(pen_total, T::of(hyper.lambda_cov) / t, T::zero());
        tape.add(nll, weighted)?
    };
    Ok(LossRecord {
        loss,
        nll,
        token_logprobs: logps.iter().map(|&v| tape.scalar(v).as_f64()).collect(),
        coverage_penalties: penalties.iter().map(|&v| tape.scalar(v).as_f64()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Mean per-token negative log-likelihood.
    pub nll: f64,
}

/// Evaluates the loss of `example` and adds `scale · ∂loss/∂θ` into `grads`.
pub fn loss_and_grad<T: Scalar>(
    params: &Parameters<T>,
    hyper: &Hyperparams,
    example: &EncodedExample,
    grads: &mut [Tensor<T>],
    scale: T,
) -> Result<LossValue> {
    let mut tape = Tape::new(params.tensors());
    let rec = sequence_loss(&mut tape, params, hyper, example)?;
    tape.backward(rec.loss, scale, grads)?;
    Ok(LossValue {
        loss: tape.scalar(rec.loss).as_f64(),
        nll: tape.scalar(rec.nll).as_f64(),
    })
}

/// Values of one inference step.
#[derive(Clone, Debug)]
pub struct StepView {
    pub state: DecoderState,
    pub p_star: Vec<f64>,
    pub attention: Option<Vec<f64>>,
    pub coverage: Vec<f64>,
    pub coverage_next: Vec<f64>,
    pub copy_gate: Option<f64>,
    /// `Σ_i min(a_i, cov_i)`, zero without attention.
    pub coverage_penalty: f64,
}

/// Step-by-step inference over one encoded source.
pub struct Decoder<'p, T: Scalar> {
    tape: Tape<'p, T>,
    params: &'p Parameters<T>,
    hyper: &'p Hyperparams,
    enc: Encoded,
    source_ext: Vec<usize>,
    ext_size: usize,
}

impl<'p, T: Scalar> Decoder<'p, T> {
    pub fn new(params: &'p Parameters<T>, hyper: &'p Hyperparams, source: &EncodedSource) -> Result<Self> {
        let mut tape = Tape::new(params.tensors());
        let enc = encode(&mut tape, params, hyper, &source.base_ids)?;
        Ok(Decoder {
            tape,
            params,
            hyper,
            enc,
            source_ext: source.extended_ids.clone(),
            ext_size: source.ext.size(),
        })
    }

    pub fn initial_state(&self) -> DecoderState {
        self.enc.init
    }

    pub fn source_len(&self) -> usize {
        self.enc.len
    }

    pub fn ext_size(&self) -> usize {
        self.ext_size
    }

    pub fn hyper(&self) -> &Hyperparams {
        self.hyper
    }

    pub fn step(&mut self, state: &DecoderState, y_prev: usize) -> Result<StepView> {
        let step = decode_step(
            &mut self.tape,
            self.params,
            self.hyper,
            &self.enc,
            &self.source_ext,
            self.ext_size,
            *state,
            y_prev,
        )?;
        let to_f64 = |tape: &Tape<'_, T>, v: Var| tape.value(v).iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let attention = step.attention.map(|a| to_f64(&self.tape, a));
        let coverage = to_f64(&self.tape, step.coverage);
        let coverage_penalty = attention
            .as_ref()
            .map_or(0.0, |a| a.iter().zip(&coverage).map(|(x, y)| x.min(*y)).sum());
        Ok(StepView {
            state: step.state,
            p_star: to_f64(&self.tape, step.p_star),
            attention,
            coverage_next: to_f64(&self.tape, step.state.cov),
            coverage,
            copy_gate: step.copy_gate.map(|g| self.tape.scalar(g).as_f64()),
            coverage_penalty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;
    use crate::numerics::{sigmoid, Rng};
    use crate::vocab::{build_vocab, END};
    use approx::assert_abs_diff_eq;

    fn small_hyper(vocab: usize) -> Hyperparams {
        Hyperparams {
            embed_dim: 5,
            hidden: 4,
            ..Hyperparams::new(vocab)
        }
    }

    #[test]
    fn single_token_source() {
        let h = small_hyper(10);
        let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(3)).unwrap();
        let mut tape = Tape::new(p.tensors());
        let enc = encode(&mut tape, &p, &h, &[5]).unwrap();
        assert_eq!(enc.len, 1);
        assert_eq!(tape.shape(enc.memory), (1, 8));
        let (a, c) = attention_step(
            &mut tape,
            &p,
            enc.memory,
            enc.memory_proj.unwrap(),
            enc.init.h,
            enc.init.cov,
            true,
            None,
        )
        .unwrap();
        assert_eq!(tape.value(a), &[1.0]);
        assert_eq!(tape.value(c), tape.value(enc.memory));
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let h = small_hyper(10);
        let p: Parameters<f64> = Parameters::zeros(&h).unwrap();
        let mut tape = Tape::new(p.tensors());
        let enc = encode(&mut tape, &p, &h, &[4, 5, 6]).unwrap();
        assert!(tape.value(enc.memory).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_source_id_is_an_error() {
        let h = small_hyper(10);
        let p: Parameters<f64> = Parameters::zeros(&h).unwrap();
        let mut tape = Tape::new(p.tensors());
        assert!(matches!(
            encode(&mut tape, &p, &h, &[4, 10]),
            Err(Error::IdOutOfRange { id: 10, .. })
        ));
        assert!(encode(&mut tape, &p, &h, &[]).is_err());
    }

    #[test]
    fn reversed_input_mirrors_directions_with_tied_weights() {
        let h = small_hyper(10);
        let mut p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(9)).unwrap();
        let l = p.layout().clone();
        let hd = h.hidden;
        for (depth, layer) in l.encoder.iter().enumerate() {
            let b = p.get(layer[0].b).clone();
            p.tensors_mut()[layer[1].b.0] = b;
            let mut w = p.get(layer[0].w).clone();
            if depth == 1 {
                // the second layer sees [fw; bw], which swaps under reversal
                let cols = w.shape()[1];
                let src = p.get(layer[0].w).data().to_vec();
                for r in 0..4 * hd {
                    let row = &mut w.data_mut()[r * cols..(r + 1) * cols];
                    row[..hd].copy_from_slice(&src[r * cols + hd..r * cols + 2 * hd]);
                    row[hd..2 * hd].copy_from_slice(&src[r * cols..r * cols + hd]);
                }
            }
            p.tensors_mut()[layer[1].w.0] = w;
        }
        let mut tape = Tape::new(p.tensors());
        let ids = [4, 7, 9];
        let rev = [9, 7, 4];
        let a = encode(&mut tape, &p, &h, &ids).unwrap();
        let b = encode(&mut tape, &p, &h, &rev).unwrap();
        let (ma, mb) = (tape.value(a.memory).to_vec(), tape.value(b.memory).to_vec());
        for i in 0..3 {
            let row_a = &ma[i * 2 * hd..(i + 1) * 2 * hd];
            let row_b = &mb[(2 - i) * 2 * hd..(3 - i) * 2 * hd];
            for k in 0..hd {
                assert_abs_diff_eq!(row_a[k], row_b[hd + k], epsilon = 1e-12);
                assert_abs_diff_eq!(row_a[hd + k], row_b[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_scalar_evaluation() {
        // hidden 1 => memory rows of width 2 and a 1-wide attention space;
        // hidden 2 => width 4 and a 2-wide attention space.
        for hidden in [1usize, 2] {
            let h = Hyperparams {
                embed_dim: 2,
                hidden,
                ..Hyperparams::new(6)
            };
            let mut p: Parameters<f64> = Parameters::zeros(&h).unwrap();
            let l = p.layout().clone();
            let d = 2 * hidden;
            let fill = |n: usize, base: f64| -> Vec<f64> { (0..n).map(|i| base + 0.1 * i as f64).collect() };
            let w_eh = fill(hidden * d, -0.3);
            let w_sh = fill(hidden * hidden, 0.2);
            let w_cv = fill(hidden, 0.5);
            let b = fill(hidden, -0.05);
            let v = fill(hidden, 0.7);
            for (id, data) in [
                (l.att_w_eh, &w_eh),
                (l.att_w_sh, &w_sh),
                (l.att_w_cv, &w_cv),
                (l.att_b, &b),
                (l.att_v, &v),
            ] {
                p.tensors_mut()[id.0].data_mut().copy_from_slice(data);
            }
            let mem = fill(2 * d, -0.4);
            let s = fill(hidden, 0.3);
            let cov = vec![0.25, 0.75];

            let mut tape = Tape::new(p.tensors());
            let memory = tape.constant(2, d, mem.clone()).unwrap();
            let wv = tape.param(l.att_w_eh);
            let proj = tape.matmul_nt(memory, wv).unwrap();
            let s_t = tape.row_vector(s.clone());
            let cv = tape.row_vector(cov.clone());
            let (a, c) = attention_step(&mut tape, &p, memory, proj, s_t, cv, true, None).unwrap();

            let mut e = [0.0f64; 2];
            for (i, ei) in e.iter_mut().enumerate() {
                for j in 0..hidden {
                    let mut pre = w_cv[j] * cov[i] + b[j];
                    for k in 0..d {
                        pre += w_eh[j * d + k] * mem[i * d + k];
                    }
                    for k in 0..hidden {
                        pre += w_sh[j * hidden + k] * s[k];
                    }
                    *ei += v[j] * pre.tanh();
                }
            }
            let z = e[0].exp() + e[1].exp();
            let want_a = [e[0].exp() / z, e[1].exp() / z];
            for (got, want) in tape.value(a).iter().zip(want_a) {
                assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
            }
            for k in 0..d {
                let want = want_a[0] * mem[k] + want_a[1] * mem[d + k];
                assert_abs_diff_eq!(tape.value(c)[k], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identical_memory_rows_give_uniform_attention() {
        let h = small_hyper(6);
        let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(2)).unwrap();
        let l = p.layout().clone();
        let mut tape = Tape::new(p.tensors());
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let memory = tape.constant(3, 8, row.repeat(3)).unwrap();
        let w = tape.param(l.att_w_eh);
        let proj = tape.matmul_nt(memory, w).unwrap();
        let s = tape.row_vector(vec![0.2; 4]);
        let cov = tape.zeros(1, 3);
        let (a, _) = attention_step(&mut tape, &p, memory, proj, s, cov, true, None).unwrap();
        for &x in tape.value(a) {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn copy_mixture_example() {
        let params: Vec<Tensor<f64>> = Vec::new();
        let mut tape = Tape::new(&params);
        // base vocabulary of 4, one OOV source word with extended id 4
        let p_vocab = tape.row_vector(vec![0.1, 0.2, 0.3, 0.4]);
        let a = tape.row_vector(vec![0.25, 0.5, 0.25]);
        let gate = tape.constant(1, 1, vec![0.6]).unwrap();
        let p = mix_copy(&mut tape, p_vocab, a, gate, &[2, 4, 0], 5).unwrap();
        let v = tape.value(p);
        assert_abs_diff_eq!(v[4], 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 0.6 * 0.25 + 0.4 * 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn toy_example(vocab: &Vocabulary) -> EncodedExample {
        let code: Vec<String> = "def foo ( x ) : return bar".split(' ').map(String::from).collect();
        let title: Vec<String> = "how foo bar".split(' ').map(String::from).collect();
        EncodedExample::new(1, &code, &title, vocab)
    }

    #[test]
    fn step_distributions_are_normalized() {
        let stream: Vec<String> = "def ( x ) : return how".split(' ').map(String::from).collect();
        let vocab = build_vocab([stream.as_slice()], 0, None);
        let ex = toy_example(&vocab);
        assert!(ex.source.ext.size() > vocab.len());
        for ab in Ablation::ALL {
            let h = Hyperparams {
                ablation: ab,
                ..small_hyper(vocab.len())
            };
            let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(4)).unwrap();
            let mut dec = Decoder::new(&p, &h, &ex.source).unwrap();
            let mut state = dec.initial_state();
            let mut prev = START;
            for t in 0..5 {
                let v = dec.step(&state, prev).unwrap();
                assert_abs_diff_eq!(v.p_star.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert_eq!(v.p_star.len(), ex.source.ext.size());
                if !ab.copy {
                    assert!(v.p_star[vocab.len()..].iter().all(|&x| x == 0.0));
                }
                if let Some(a) = &v.attention {
                    assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    assert_abs_diff_eq!(v.coverage.iter().sum::<f64>(), t as f64, epsilon = 1e-9);
                    assert!((0.0..=1.0).contains(&v.coverage_penalty));
                }
                if let Some(g) = v.copy_gate {
                    assert!((0.0..=1.0).contains(&g));
                }
                state = v.state;
                prev = vocab.len();
            }
        }
    }

    #[test]
    fn loss_examples() {
        let stream: Vec<String> = "def ( x ) : return how".split(' ').map(String::from).collect();
        let vocab = build_vocab([stream.as_slice()], 0, None);
        let ex = toy_example(&vocab);
        let h = small_hyper(vocab.len());
        let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(8)).unwrap();
        let mut tape = Tape::new(p.tensors());
        let rec = sequence_loss(&mut tape, &p, &h, &ex).unwrap();
        assert_eq!(rec.coverage_penalties.len(), ex.target.len());
        assert_eq!(rec.coverage_penalties[0], 0.0);
        let nll = -rec.token_logprobs.iter().sum::<f64>() / ex.target.len() as f64;
        let cov = rec.coverage_penalties.iter().sum::<f64>() / ex.target.len() as f64;
        assert_abs_diff_eq!(tape.scalar(rec.nll), nll, epsilon = 1e-12);
        assert_abs_diff_eq!(tape.scalar(rec.loss), nll + h.lambda_cov * cov, epsilon = 1e-12);

        let bad = EncodedExample {
            target: vec![ex.source.ext.size()],
            ..ex.clone()
        };
        assert!(sequence_loss(&mut tape, &p, &h, &bad).is_err());
    }

    #[test]
    fn uniform_distribution_gives_log_k_per_token() {
        // zero parameters: uniform vocabulary softmax, gate 0.5, uniform attention
        let stream: Vec<String> = "a b c d e f".split(' ').map(String::from).collect();
        let vocab = build_vocab([stream.as_slice()], 0, None);
        let h = Hyperparams {
            ablation: Ablation::ATTEN,
            ..small_hyper(vocab.len())
        };
        let p: Parameters<f64> = Parameters::zeros(&h).unwrap();
        let code: Vec<String> = vec!["a".into(), "b".into()];
        let ex = EncodedExample::new(0, &code, &code, &vocab);
        let mut tape = Tape::new(p.tensors());
        let rec = sequence_loss(&mut tape, &p, &h, &ex).unwrap();
        assert_abs_diff_eq!(tape.scalar(rec.nll), (vocab.len() as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn copyless_models_score_oov_targets_as_unk() {
        let vocab = build_vocab([["a".to_string(), "b".to_string()].as_slice()], 0, None);
        let h = Hyperparams {
            ablation: Ablation::ATTEN,
            ..small_hyper(vocab.len())
        };
        let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(3)).unwrap();
        let code: Vec<String> = vec!["a".into(), "zz".into()];
        let title: Vec<String> = vec!["zz".into()];
        let ex = EncodedExample::new(0, &code, &title, &vocab);
        assert_eq!(ex.target[0], vocab.len());
        let as_unk = EncodedExample {
            target: vec![UNK, END],
            ..ex.clone()
        };
        let mut tape = Tape::new(p.tensors());
        let a = sequence_loss(&mut tape, &p, &h, &ex).unwrap();
        let b = sequence_loss(&mut tape, &p, &h, &as_unk).unwrap();
        assert_eq!(tape.scalar(a.loss), tape.scalar(b.loss));
        assert!(a.token_logprobs[0] > PROB_FLOOR.ln());
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // Force p*(END) = 1 at the first step through a huge output bias.
        let vocab = build_vocab([["a".to_string()].as_slice()], 0, None);
        let h = Hyperparams {
            lambda_cov: 0.0,
            ablation: Ablation::ATTEN,
            ..small_hyper(vocab.len())
        };
        let mut p: Parameters<f64> = Parameters::zeros(&h).unwrap();
        let ob = p.layout().out_b;
        p.tensors_mut()[ob.0].data_mut()[END] = 1e3;
        let code = vec!["a".to_string()];
        let ex = EncodedExample::new(0, &code, &[], &vocab);
        assert_eq!(ex.target, vec![END]);
        let mut tape = Tape::new(p.tensors());
        let rec = sequence_loss(&mut tape, &p, &h, &ex).unwrap();
        assert_eq!(tape.scalar(rec.loss), 0.0);
    }

    #[test]
    fn copy_gate_matches_sigmoid_of_its_inputs() {
        let stream: Vec<String> = "def ( x ) : return how".split(' ').map(String::from).collect();
        let vocab = build_vocab([stream.as_slice()], 0, None);
        let ex = toy_example(&vocab);
        let h = small_hyper(vocab.len());
        let p: Parameters<f64> = Parameters::init(&h, &mut Rng::new(12)).unwrap();
        let mut tape = Tape::new(p.tensors());
        let enc = encode(&mut tape, &p, &h, &ex.source.base_ids).unwrap();
        let step = decode_step(
            &mut tape,
            &p,
            &h,
            &enc,
            &ex.source.extended_ids,
            ex.source.ext.size(),
            enc.init,
            START,
        )
        .unwrap();
        let l = p.layout();
        let dotp = |w: &Tensor<f64>, v: &[f64]| w.data().iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let ctx = tape.value(step.context).to_vec();
        let hs = tape.value(step.state.h).to_vec();
        let x = p.get(l.embedding).row(START).to_vec();
        let z = dotp(p.get(l.gate_c), &ctx)
            + dotp(p.get(l.gate_s), &hs)
            + dotp(p.get(l.gate_x), &x)
            + p.get(l.gate_b).data()[0];
        assert_abs_diff_eq!(tape.scalar(step.copy_gate.unwrap()), sigmoid(z), epsilon = 1e-12);
    }
}
