use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::params::{Param, ParamKind};

pub const INIT_STD: f64 = 0.01;

/// Random `n × n` orthogonal matrix, row-major.
///
/// QR of a standard Gaussian matrix, with each column of Q multiplied by
/// `sign(R_ii)` so the result is a deterministic function of the draws.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let a = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect()
}

pub fn gaussian<R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Initializes one tensor according to its kind.
pub fn init_param<R: Rng + ?Sized>(param: &mut Param, rng: &mut R) -> Result<()> {
    init_param_with_std(param, INIT_STD, rng)
}

/// As [`init_param`], with `std` for the Gaussian tensors.
pub fn init_param_with_std<R: Rng + ?Sized>(param: &mut Param, std: f64, rng: &mut R) -> Result<()> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("init std must be finite and nonnegative, got {std}")));
    }
    let values = match param.kind {
        ParamKind::Bias => vec![0.0; param.tensor.len()],
        ParamKind::Weight => gaussian(param.tensor.len(), std, rng),
        ParamKind::Recurrent => match *param.tensor.shape() {
            [r, c] if r == c => orthogonal(r, rng),
            ref other => {
                return Err(Error::Param(format!(
                    "recurrent parameter {} must be square, got {other:?}",
                    param.name
                )))
            }
        },
    };
    param.tensor.data_mut().copy_from_slice(&values);
    Ok(())
}

/// Orthogonal recurrent matrices, zero biases, `N(0, 0.01²)` elsewhere.
/// Tensors are drawn in store order from one stream.
pub fn init_params<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<ModelParams> {
    init_params_with_std(config, INIT_STD, rng)
}

/// As [`init_params`], with `std` for the Gaussian tensors.
pub fn init_params_with_std<R: Rng + ?Sized>(config: ModelConfig, std: f64, rng: &mut R) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    for p in params.store.iter_mut() {
        init_param_with_std(p, std, rng)?;
    }
    Ok(params)
}
