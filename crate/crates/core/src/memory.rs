//! Time-stamped source memory with attentive read and gated write.
//!
//! The memory starts as the encoder annotations and, for the interactive
//! variant, is overwritten after every decoder state update:
//!
//! ```text
//! F_t = σ(W_F s_t),  U_t = σ(W_U s_t)
//! h̃_i = h_i ⊙ (1 − w(i) F_t)          forget
//! h_i' = h̃_i + w(i) U_t               update
//! ```
//!
//! The same weights `w` drive the read and the write of one step.

use std::io::Write;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Tape, Var};

/// Memory contents `H^(t)` on a tape, plus the number of completed writes.
#[derive(Clone, Copy, Debug)]
pub struct SourceMemory {
    pub cells: Var,
    pub timestep: usize,
    pub n: usize,
    pub m: usize,
}

impl SourceMemory {
    pub fn new(tape: &Tape<'_>, cells: Var) -> Result<Self> {
        match *tape.shape(cells) {
            [n, m] => Ok(Self {
                cells,
                timestep: 0,
                n,
                m,
            }),
            ref other => Err(Error::invalid("memory", format!("cells must be a matrix, got {other:?}"))),
        }
    }

    /// Same contents, one step later. Used by the variants that never write.
    pub fn advance(self) -> Self {
        Self {
            timestep: self.timestep + 1,
            ..self
        }
    }
}

/// `W_F` and `W_U`, both `m × d_s`.
#[derive(Clone, Copy, Debug)]
pub struct WriteVars {
    pub w_f: Var,
    pub w_u: Var,
}

pub const FORGET_NAME: &str = "write.W_F";
pub const UPDATE_NAME: &str = "write.W_U";

pub fn declare_write(store: &mut ParamStore, d_cell: usize, d_state: usize) -> Result<()> {
    store.declare(FORGET_NAME, ParamKind::Weight, vec![d_cell, d_state])?;
    store.declare(UPDATE_NAME, ParamKind::Weight, vec![d_cell, d_state])?;
    Ok(())
}

impl WriteVars {
    pub fn bind(bound: &Bound<'_>) -> Result<Self> {
        Ok(Self {
            w_f: bound.get(FORGET_NAME)?,
            w_u: bound.get(UPDATE_NAME)?,
        })
    }
}

fn check_weights(tape: &Tape<'_>, memory: &SourceMemory, weights: Var) -> Result<()> {
    if tape.shape(weights) != [memory.n] {
        return Err(Error::shape("memory", &[memory.n, memory.m], tape.shape(weights)));
    }
    Ok(())
}

/// `c_t = Σ_j w(j) h_j`; the memory is not modified.
pub fn read(tape: &mut Tape<'_>, memory: &SourceMemory, weights: Var) -> Result<Var> {
    check_weights(tape, memory, weights)?;
    tape.matvec_t(memory.cells, weights)
}

/// Forget step; returns the intermediate `n × m` cells.
pub fn forget(tape: &mut Tape<'_>, memory: &SourceMemory, weights: Var, state: Var, params: &WriteVars) -> Result<Var> {
    check_weights(tape, memory, weights)?;
    let pre = tape.matvec(params.w_f, state)?;
    let gate = tape.sigmoid(pre);
    if tape.shape(gate) != [memory.m] {
        return Err(Error::shape("forget", &[memory.n, memory.m], tape.shape(gate)));
    }
    let spread = tape.outer(weights, gate)?;
    let keep = tape.one_minus(spread);
    tape.mul(memory.cells, keep)
}

/// Update step on the intermediate cells; returns the memory at `timestep`.
pub fn update(
    tape: &mut Tape<'_>,
    intermediate: Var,
    weights: Var,
    state: Var,
    params: &WriteVars,
    timestep: usize,
) -> Result<SourceMemory> {
    let pre = tape.matvec(params.w_u, state)?;
    let gate = tape.sigmoid(pre);
    let added = tape.outer(weights, gate)?;
    let cells = tape.add(intermediate, added)?;
    let mut memory = SourceMemory::new(tape, cells)?;
    memory.timestep = timestep;
    Ok(memory)
}

/// Forget followed by update with the same weights.
pub fn write(tape: &mut Tape<'_>, memory: &SourceMemory, weights: Var, state: Var, params: &WriteVars) -> Result<SourceMemory> {
    let intermediate = forget(tape, memory, weights, state, params)?;
    update(tape, intermediate, weights, state, params, memory.timestep + 1)
}

/// One row of the memory trace export.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub cell: usize,
    /// `‖h_i^(t) − h_i^(t−1)‖₂`.
    pub delta_norm: f64,
    pub weight: f64,
}

/// Per-cell change between two memory snapshots of width `m`.
pub fn trace_rows(step: usize, before: &[f64], after: &[f64], weights: &[f64], m: usize) -> Vec<TraceRow> {
    before
        .chunks_exact(m)
        .zip(after.chunks_exact(m))
        .zip(weights)
        .enumerate()
        .map(|(cell, ((b, a), &weight))| TraceRow {
            step,
            cell,
            delta_norm: a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            weight,
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "t,cell_index,delta_norm,attention_weight")?;
    for r in rows {
        writeln!(out, "{},{},{:e},{:e}", r.step, r.cell, r.delta_norm, r.weight)?;
    }
    Ok(())
}
