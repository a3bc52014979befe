//! Embeddings, GRU cell, readout and dropout.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Tape, Var};

/// Looks up row `id` of an embedding table.
pub fn embed(tape: &mut Tape<'_>, table: Var, id: usize) -> Result<Var> {
    let rows = tape.shape(table)[0];
    if id >= rows {
        return Err(Error::InvalidToken { id, size: rows });
    }
    tape.row(table, id)
}

/// Handles for one GRU: update gate `z`, reset gate `r`, candidate `h`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

pub fn declare_gru(store: &mut ParamStore, prefix: &str, d_in: usize, d_h: usize) -> Result<()> {
    for gate in ["z", "r", "h"] {
        store.declare(format!("{prefix}.W_{gate}"), ParamKind::Weight, vec![d_h, d_in])?;
        store.declare(format!("{prefix}.U_{gate}"), ParamKind::Recurrent, vec![d_h, d_h])?;
        store.declare(format!("{prefix}.b_{gate}"), ParamKind::Bias, vec![d_h])?;
    }
    Ok(())
}

impl GruVars {
    pub fn bind(bound: &Bound<'_>, prefix: &str) -> Result<Self> {
        let get = |n: &str| bound.get(&format!("{prefix}.{n}"));
        Ok(Self {
            w_z: get("W_z")?,
            u_z: get("U_z")?,
            b_z: get("b_z")?,
            w_r: get("W_r")?,
            u_r: get("U_r")?,
            b_r: get("b_r")?,
            w_h: get("W_h")?,
            u_h: get("U_h")?,
            b_h: get("b_h")?,
        })
    }
}

/// One GRU transition:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step(tape: &mut Tape<'_>, gru: &GruVars, state: Var, input: Var) -> Result<Var> {
    let gate = |tape: &mut Tape<'_>, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let wx = tape.matvec(w, input)?;
        let uh = tape.matvec(u, h)?;
        let pre = tape.add(wx, uh)?;
        tape.add(pre, b)
    };
    let z_pre = gate(tape, gru.w_z, gru.u_z, gru.b_z, state)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, gru.w_r, gru.u_r, gru.b_r, state)?;
    let r = tape.sigmoid(r_pre);
    let reset = tape.mul(r, state)?;
    let cand_pre = gate(tape, gru.w_h, gru.u_h, gru.b_h, reset)?;
    let candidate = tape.tanh(cand_pre);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, state)?;
    let fresh = tape.mul(z, candidate)?;
    tape.add(kept, fresh)
}

/// Readout `W_o · tanh(W_c c + W_y e + W_s s + b) + b_o`.
#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub w_c: Var,
    pub w_y: Var,
    pub w_s: Var,
    pub b: Var,
    pub w_o: Var,
    pub b_o: Var,
}

pub fn declare_readout(
    store: &mut ParamStore,
    prefix: &str,
    d_ctx: usize,
    d_emb: usize,
    d_state: usize,
    d_hidden: usize,
    vocab: usize,
) -> Result<()> {
    store.declare(format!("{prefix}.W_c"), ParamKind::Weight, vec![d_hidden, d_ctx])?;
    store.declare(format!("{prefix}.W_y"), ParamKind::Weight, vec![d_hidden, d_emb])?;
    store.declare(format!("{prefix}.W_s"), ParamKind::Weight, vec![d_hidden, d_state])?;
    store.declare(format!("{prefix}.b"), ParamKind::Bias, vec![d_hidden])?;
    store.declare(format!("{prefix}.W_o"), ParamKind::Weight, vec![vocab, d_hidden])?;
    store.declare(format!("{prefix}.b_o"), ParamKind::Bias, vec![vocab])?;
    Ok(())
}

impl ReadoutVars {
    pub fn bind(bound: &Bound<'_>, prefix: &str) -> Result<Self> {
        let get = |n: &str| bound.get(&format!("{prefix}.{n}"));
        Ok(Self {
            w_c: get("W_c")?,
            w_y: get("W_y")?,
            w_s: get("W_s")?,
            b: get("b")?,
            w_o: get("W_o")?,
            b_o: get("b_o")?,
        })
    }
}

/// Training-time dropout settings: the rate and the mask source.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

/// Vocabulary logits. Dropout, when given, is applied to the hidden layer.
pub fn readout_logits(
    tape: &mut Tape<'_>,
    readout: &ReadoutVars,
    context: Var,
    prev_emb: Var,
    state: Var,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let a = tape.matvec(readout.w_c, context)?;
    let b = tape.matvec(readout.w_y, prev_emb)?;
    let c = tape.matvec(readout.w_s, state)?;
    let pre = tape.add_all(&[a, b, c, readout.b])?;
    let mut hidden = tape.tanh(pre);
    if let Some(d) = dropout {
        hidden = dropout_var(tape, hidden, d.rate, true, &mut *d.rng)?;
    }
    let out = tape.matvec(readout.w_o, hidden)?;
    tape.add(out, readout.b_o)
}

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate >= 1.0 {
        return vec![0.0; len];
    }
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate must lie in [0, 1], got {rate}")));
    }
    Ok(())
}

/// Dropout on a plain slice. Identity when not training or when `rate` is 0.
pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
}

/// Dropout on a tape value. Returns `x` itself, unrecorded, when inactive.
pub fn dropout_var<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.value(x).len(), rate, rng);
    let m = tape.constant(tape.shape(x).to_vec(), mask)?;
    tape.mul(x, m)
}
