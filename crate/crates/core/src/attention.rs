//! Additive alignment scoring, normalization and context reads.
//!
//! `e_j = v_aᵀ tanh(W_a q + U_a cell_j)`, `w = softmax(e)`, `c = Σ_j w_j cell_j`.
//! The key projection `cells · U_aᵀ` is exposed separately so callers can
//! reuse it while the cells stay fixed.

use crate::error::{Error, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub v_a: Var,
    pub w_a: Var,
    pub u_a: Var,
}

pub fn declare_attention(store: &mut ParamStore, prefix: &str, d_query: usize, d_cell: usize, d_align: usize) -> Result<()> {
    store.declare(format!("{prefix}.v_a"), ParamKind::Weight, vec![d_align])?;
    store.declare(format!("{prefix}.W_a"), ParamKind::Weight, vec![d_align, d_query])?;
    store.declare(format!("{prefix}.U_a"), ParamKind::Weight, vec![d_align, d_cell])?;
    Ok(())
}

impl AttentionVars {
    pub fn bind(bound: &Bound<'_>, prefix: &str) -> Result<Self> {
        Ok(Self {
            v_a: bound.get(&format!("{prefix}.v_a"))?,
            w_a: bound.get(&format!("{prefix}.W_a"))?,
            u_a: bound.get(&format!("{prefix}.U_a"))?,
        })
    }
}

/// `cells · U_aᵀ`, shape `n × d_a`.
pub fn keys(tape: &mut Tape<'_>, att: &AttentionVars, cells: Var) -> Result<Var> {
    if tape.shape(cells).first() == Some(&0) {
        return Err(Error::EmptyInput("attention over zero cells".into()));
    }
    tape.matmul_nt(cells, att.u_a)
}

/// Scores against precomputed [`keys`].
pub fn align_scores_with_keys(tape: &mut Tape<'_>, att: &AttentionVars, query: Var, keys: Var) -> Result<Var> {
    let projected = tape.matvec(att.w_a, query)?;
    let pre = tape.add_row(keys, projected)?;
    let act = tape.tanh(pre);
    tape.matvec(act, att.v_a)
}

pub fn align_scores(tape: &mut Tape<'_>, att: &AttentionVars, query: Var, cells: Var) -> Result<Var> {
    let k = keys(tape, att, cells)?;
    align_scores_with_keys(tape, att, query, k)
}

/// Softmax of the scores; rejects non-finite input.
pub fn normalize(tape: &mut Tape<'_>, scores: Var) -> Result<Var> {
    if let Some(i) = tape.value(scores).iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            context: "alignment score".into(),
        });
    }
    tape.softmax(scores)
}

/// Weighted sum of the cell rows.
pub fn context(tape: &mut Tape<'_>, weights: Var, cells: Var) -> Result<Var> {
    tape.matvec_t(cells, weights)
}
