//! Central finite-difference oracle for tape gradients.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EOS, UNK};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over coordinates of [`relative_error`].
    pub max_rel_error: f64,
    /// `(input index, coordinate)` where the max was reached.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Denominator floor for [`relative_error`].
///
/// Central differences of an `O(10)` loss at step `1e-5` carry roundoff of
/// about `1e-10`, so gradients much below `1e-6` cannot be resolved to a
/// relative `1e-4`. Below the floor the check is effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out);
    if tape.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(shape.to_vec()));
    }
    Ok(tape.scalar(out))
}

/// Compares the tape gradient of the scalar function `f` at `inputs` with
/// central differences of width `step` on every coordinate of every input.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite_diff_check", format!("step must be positive, got {step}")));
    }
    let marked: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = marked.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite {
                index: 0,
                context: "loss at the unperturbed point".into(),
            });
        }
        let mut grads = tape.backward(loss)?;
        vars.iter()
            .zip(&marked)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect()
    };

    let mut work: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_requires_grad(false)).collect();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut flat = 0;
    for k in 0..work.len() {
        for i in 0..work[k].len() {
            let original = work[k].data()[i];
            work[k].data_mut()[i] = original + step;
            let plus = evaluate(&f, &work)?;
            work[k].data_mut()[i] = original - step;
            let minus = evaluate(&f, &work)?;
            work[k].data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    index: flat,
                    context: format!("input {k}, coordinate {i}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k][i];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((k, i));
                report.analytic = a;
                report.numeric = numeric;
            }
            report.coordinates += 1;
            flat += 1;
        }
    }
    Ok(report)
}

/// A small random model with one sentence pair, for gradient checks.
#[derive(Clone, Debug)]
pub struct Instance {
    pub params: ModelParams,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Draws vocabularies of 5 to `max_vocab` ids, every width in `2..=max_dim`,
/// sentences of at most five ids ending in EOS, and `U(-0.8, 0.8)` values.
pub fn random_instance(variant: Variant, seed: u64, max_dim: usize, max_vocab: usize) -> Result<Instance> {
    if max_dim < 2 || max_vocab < 5 {
        return Err(Error::invalid("random_instance", "need max_dim >= 2 and max_vocab >= 5"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = || rng.random_range(2..=max_dim);
    let (d_emb, d_enc, d_s, d_a, d_readout) = (dim(), dim(), dim(), dim(), dim());
    let config = ModelConfig {
        variant,
        src_vocab: rng.random_range(5..=max_vocab),
        tgt_vocab: rng.random_range(5..=max_vocab),
        d_emb,
        d_enc,
        d_s,
        d_a,
        d_readout,
    };
    let mut sentence = |vocab: usize| -> Vec<usize> {
        let len = rng.random_range(1..=4);
        let mut s: Vec<usize> = (0..len).map(|_| rng.random_range(UNK..vocab)).collect();
        s.push(EOS);
        s
    };
    let src = sentence(config.src_vocab);
    let tgt = sentence(config.tgt_vocab);
    let mut params = ModelParams::zeros(config)?;
    params.fill_uniform(&mut rng, 0.8);
    Ok(Instance { params, src, tgt })
}
