//! Greedy and beam-search decoding.
//!
//! PAD and BOS are never emitted: they are excluded from expansion, while
//! per-step log-probabilities still come from the full softmax.

use std::cmp::Ordering;
use std::io::Write;

use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::memory::{trace_rows, TraceRow};
use crate::model::{DecoderState, ModelParams, StepOptions};
use crate::tensor::{log_softmax, Tape};

pub const DEFAULT_BEAM_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of the chosen per-step log-probabilities.
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Log-probability divided by token count.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

fn emittable(token: usize) -> bool {
    token != PAD && token != BOS
}

fn check_source(params: &ModelParams, src: &[usize], max_len: usize) -> Result<()> {
    if src.is_empty() {
        return Err(Error::EmptyInput("source sentence".into()));
    }
    if max_len == 0 {
        return Err(Error::invalid("decode", "max_len must be at least 1"));
    }
    if let Some(&bad) = src.iter().find(|&&t| t >= params.config.src_vocab) {
        return Err(Error::InvalidToken {
            id: bad,
            size: params.config.src_vocab,
        });
    }
    Ok(())
}

/// Highest-probability emittable token at each step until EOS or `max_len`.
pub fn greedy_decode(params: &ModelParams, src: &[usize], max_len: usize) -> Result<Hypothesis> {
    check_source(params, src, max_len)?;
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, false)?;
    let mut state = model.start(&mut tape, src)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    let mut y_prev = BOS;
    while hyp.tokens.len() < max_len {
        let out = model.decode_step(&mut tape, &state, y_prev, &mut StepOptions::inference())?;
        let lp = log_softmax(tape.value(out.logits));
        let (best, &value) = lp
            .iter()
            .enumerate()
            .filter(|&(k, _)| emittable(k))
            .fold(None, |acc: Option<(usize, &f64)>, (k, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((k, v)),
            })
            .ok_or_else(|| Error::invalid("decode", "no emittable target token"))?;
        hyp.tokens.push(best);
        hyp.log_prob += value;
        if best == EOS {
            break;
        }
        state = out.state;
        y_prev = best;
    }
    Ok(hyp)
}

struct Live {
    hyp: Hypothesis,
    state: DecoderState,
}

/// Everything a beam run produced: the chosen hypothesis plus the finished set.
#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// Finished hypotheses, best normalized score first.
    pub finished: Vec<Hypothesis>,
}

fn by_score_desc(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score().total_cmp(&a.score())
}

/// Beam search keeping the `beam_size` best expansions by total
/// log-probability; the returned hypothesis is the best finished one by
/// normalized score, or the best unfinished one if none finished.
pub fn beam_search(params: &ModelParams, src: &[usize], beam_size: usize, max_len: usize) -> Result<BeamOutput> {
    check_source(params, src, max_len)?;
    if beam_size == 0 {
        return Err(Error::invalid("beam_search", "beam_size must be at least 1"));
    }
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, false)?;
    let start = model.start(&mut tape, src)?;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        },
        state: start,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        // Candidate (parent, token, total log-prob, next state).
        let mut candidates = Vec::new();
        for (parent, l) in live.iter().enumerate() {
            let y_prev = l.hyp.tokens.last().copied().unwrap_or(BOS);
            let out = model.decode_step(&mut tape, &l.state, y_prev, &mut StepOptions::inference())?;
            let lp = log_softmax(tape.value(out.logits));
            for (k, &v) in lp.iter().enumerate().filter(|&(k, _)| emittable(k)) {
                candidates.push((parent, k, l.hyp.log_prob + v, out.state));
            }
        }
        // Stable sort keeps (parent, token) order among exact ties.
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        candidates.truncate(beam_size);
        let mut next = Vec::with_capacity(candidates.len());
        for (parent, k, log_prob, state) in candidates {
            let mut tokens = live[parent].hyp.tokens.clone();
            tokens.push(k);
            let hyp = Hypothesis { tokens, log_prob };
            if k == EOS {
                finished.push(hyp);
            } else {
                next.push(Live { hyp, state });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }

    // The greedy path can fall out of a narrow beam; keeping it makes the
    // result never score below greedy decoding whenever greedy finishes.
    if beam_size > 1 {
        let greedy = greedy_decode(params, src, max_len)?;
        if greedy.finished() && !finished.iter().any(|h| h.tokens == greedy.tokens) {
            finished.push(greedy);
        }
    }
    finished.sort_by(by_score_desc);
    let best = match finished.first() {
        Some(h) => h.clone(),
        None => {
            let mut open: Vec<Hypothesis> = live.into_iter().map(|l| l.hyp).collect();
            open.sort_by(by_score_desc);
            open.into_iter().next().expect("beam keeps at least one hypothesis")
        }
    };
    Ok(BeamOutput { best, finished })
}

/// Decodes `src` (teacher-forced when `forced` is given, greedy otherwise)
/// and records, per step and source cell, the attention weight and how far
/// the write moved that cell.
pub fn trace_decode(
    params: &ModelParams,
    src: &[usize],
    forced: Option<&[usize]>,
    max_len: usize,
) -> Result<(Hypothesis, Vec<TraceRow>)> {
    check_source(params, src, max_len)?;
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, false)?;
    let mut state = model.start(&mut tape, src)?;
    let m = params.config.cell_width();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    let mut rows = Vec::new();
    let mut y_prev = BOS;
    for t in 0..max_len {
        let out = model.decode_step(&mut tape, &state, y_prev, &mut StepOptions::inference())?;
        rows.extend(trace_rows(
            t + 1,
            tape.value(state.memory.cells),
            tape.value(out.state.memory.cells),
            tape.value(out.weights),
            m,
        ));
        let lp = log_softmax(tape.value(out.logits));
        let y = match forced {
            Some(f) => match f.get(t) {
                Some(&y) if y < lp.len() => y,
                Some(&y) => return Err(Error::InvalidToken { id: y, size: lp.len() }),
                None => break,
            },
            None => (0..lp.len())
                .filter(|&k| emittable(k))
                .fold(PAD, |b, k| if b == PAD || lp[k] > lp[b] { k } else { b }),
        };
        hyp.tokens.push(y);
        hyp.log_prob += lp[y];
        if y == EOS {
            break;
        }
        state = out.state;
        y_prev = y;
    }
    Ok((hyp, rows))
}

/// Writes one `score ||| tokens` line per hypothesis.
pub fn write_nbest<W: Write>(out: &mut W, hyps: &[Hypothesis], render: impl Fn(&[usize]) -> String) -> Result<()> {
    for h in hyps {
        writeln!(out, "{:.6} ||| {}", h.score(), render(h.content()))?;
    }
    Ok(())
}
