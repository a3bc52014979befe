use crate::error::{Error, Result};

/// Running averages of squared gradients and squared updates, one buffer
/// per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_delta: Vec<Vec<f64>>,
}

impl AdaDelta {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [f64]>, rho: f64, eps: f64) -> Self {
        let sq_grad: Vec<Vec<f64>> = shapes.into_iter().map(|t| vec![0.0; t.len()]).collect();
        let sq_delta = sq_grad.clone();
        Self {
            rho,
            eps,
            sq_grad,
            sq_delta,
        }
    }

    /// Deltas for one update; both accumulators advance.
    pub fn step(&mut self, grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if grads.len() != self.sq_grad.len() {
            return Err(Error::shape("adadelta", &[grads.len()], &[self.sq_grad.len()]));
        }
        for (g, acc) in grads.iter().zip(&self.sq_grad) {
            if g.len() != acc.len() {
                return Err(Error::shape("adadelta", &[g.len()], &[acc.len()]));
            }
        }
        let (rho, eps) = (self.rho, self.eps);
        let deltas = grads
            .iter()
            .zip(self.sq_grad.iter_mut().zip(self.sq_delta.iter_mut()))
            .map(|(g, (eg, ed))| {
                g.iter()
                    .zip(eg.iter_mut().zip(ed.iter_mut()))
                    .map(|(&g, (eg, ed))| {
                        *eg = rho * *eg + (1.0 - rho) * g * g;
                        let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                        *ed = rho * *ed + (1.0 - rho) * dx * dx;
                        dx
                    })
                    .collect()
            })
            .collect();
        Ok(deltas)
    }
}
