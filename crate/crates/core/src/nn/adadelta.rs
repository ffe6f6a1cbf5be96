//! Adadelta (Zeiler's update rules, no learning rate).
//!
//! ```text
//! E[g²]  ← ρ·E[g²] + (1 − ρ)·g²
//! Δx     = −(√(E[Δx²] + ε) / √(E[g²] + ε))·g
//! E[Δx²] ← ρ·E[Δx²] + (1 − ρ)·Δx²
//! x      ← x + Δx
//! ```

use super::tensor::{Real, Tensor};
use super::{NnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta<F> {
    pub rho: f64,
    pub eps: f64,
    /// `(E[g²], E[Δx²])` per parameter, in parameter order.
    pub state: Vec<(Tensor<F>, Tensor<F>)>,
}

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

impl<F: Real> Adadelta<F> {
    /// Zero accumulators shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>, rho: f64, eps: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
            return Err(NnError::Config(format!("adadelta needs 0 < rho < 1 and eps > 0 (rho {rho}, eps {eps})")));
        }
        let state = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .collect();
        Ok(Self { rho, eps, state })
    }

    /// Applies one update. With `checked`, a non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: Vec<&mut Tensor<F>>, grads: &[Tensor<F>], checked: bool) -> Result<()> {
        if params.len() != self.state.len() || grads.len() != self.state.len() {
            return Err(NnError::Shape(format!(
                "adadelta holds {} states, got {} parameters and {} gradients",
                self.state.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), (sg, _)) in params.iter().zip(grads).zip(&self.state) {
            if p.shape() != g.shape() || p.shape() != sg.shape() {
                return Err(NnError::Shape(format!(
                    "adadelta parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    sg.shape()
                )));
            }
        }
        if checked {
            for g in grads {
                g.check_finite("gradient")?;
            }
        }
        let (rho, eps) = (F::lit(self.rho), F::lit(self.eps));
        let keep = F::one() - rho;
        for ((p, g), (sg, sd)) in params.into_iter().zip(grads).zip(&mut self.state) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(sg.data_mut().iter_mut().zip(sd.data_mut().iter_mut()));
            for ((x, &g), (eg, ed)) in it {
                *eg = rho * *eg + keep * g * g;
                let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ed = rho * *ed + keep * dx * dx;
                *x += dx;
            }
        }
        Ok(())
    }
}
