//! Bidirectional GRU encoder.

use crate::error::{Error, Result};
use crate::nn::{gru_step, GruVars};
use crate::tensor::{Tape, Var};

/// `N × m` annotation matrix; row `j` is `[forward_j ; backward_j]`.
#[derive(Clone, Copy, Debug)]
pub struct SourceAnnotations {
    pub matrix: Var,
    pub len: usize,
    pub width: usize,
}

impl SourceAnnotations {
    pub fn half_width(&self) -> usize {
        self.width / 2
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub forward: GruVars,
    pub backward: GruVars,
}

/// Runs the forward GRU left to right and the backward GRU right to left,
/// both from a zero state, over already-embedded source tokens.
pub fn encode(tape: &mut Tape<'_>, enc: &EncoderVars, embeddings: &[Var]) -> Result<SourceAnnotations> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("source sentence".into()));
    }
    let d_enc = tape.shape(enc.forward.u_z)[0];
    let d_bwd = tape.shape(enc.backward.u_z)[0];
    if d_enc != d_bwd {
        return Err(Error::shape("encode", tape.shape(enc.forward.u_z), tape.shape(enc.backward.u_z)));
    }
    let n = embeddings.len();

    let mut forward = Vec::with_capacity(n);
    let mut h = tape.zeros(vec![d_enc]);
    for &x in embeddings {
        h = gru_step(tape, &enc.forward, h, x)?;
        forward.push(h);
    }
    let mut backward = vec![h; n];
    let mut h = tape.zeros(vec![d_enc]);
    for (j, &x) in embeddings.iter().enumerate().rev() {
        h = gru_step(tape, &enc.backward, h, x)?;
        backward[j] = h;
    }

    let mut rows = Vec::with_capacity(2 * n);
    for j in 0..n {
        rows.push(forward[j]);
        rows.push(backward[j]);
    }
    let flat = tape.concat(&rows)?;
    let matrix = tape.reshape(flat, vec![n, 2 * d_enc])?;
    Ok(SourceAnnotations {
        matrix,
        len: n,
        width: 2 * d_enc,
    })
}
