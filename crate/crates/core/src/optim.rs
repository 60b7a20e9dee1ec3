//! Heavy-ball SGD over the classifier head and the feature adapter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loss::{ClassifierParams, LossResult};
use crate::stats::FeatureAdapter;

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub classifier: f64,
    pub adapter: f64,
}

/// Classic momentum: `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    momentum: f64,
    vel_weights: DMatrix<f64>,
    vel_biases: DVector<f64>,
    vel_matrix: DMatrix<f64>,
    vel_offset: DVector<f64>,
}

impl MomentumSgd {
    pub fn new(momentum: f64, dim: usize, num_classes: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(
                "momentum",
                format!("must be in [0, 1), got {momentum}"),
            ));
        }
        Ok(Self {
            momentum,
            vel_weights: DMatrix::zeros(dim, num_classes),
            vel_biases: DVector::zeros(num_classes),
            vel_matrix: DMatrix::zeros(dim, dim),
            vel_offset: DVector::zeros(dim),
        })
    }

    /// Applies one update in place. A non-finite gradient aborts the step
    /// before any parameter or velocity is modified.
    pub fn step(
        &mut self,
        params: &mut ClassifierParams,
        adapter: &mut FeatureAdapter,
        grads: &LossResult,
        rates: GroupRates,
    ) -> Result<()> {
        if grads.grad_weights.shape() != self.vel_weights.shape()
            || grads.grad_biases.len() != self.vel_biases.len()
            || grads.grad_adapter_matrix.shape() != self.vel_matrix.shape()
            || params.weights().shape() != self.vel_weights.shape()
            || adapter.dim() != self.vel_offset.len()
        {
            return Err(Error::Dimension {
                context: "optimizer state vs gradient",
                expected: self.vel_biases.len(),
                received: grads.grad_biases.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::non_finite("gradient passed to the optimizer"));
        }
        let mu = self.momentum;
        self.vel_weights.scale_mut(mu);
        self.vel_weights += &grads.grad_weights;
        self.vel_biases.scale_mut(mu);
        self.vel_biases += &grads.grad_biases;
        self.vel_matrix.scale_mut(mu);
        self.vel_matrix += &grads.grad_adapter_matrix;
        self.vel_offset.scale_mut(mu);
        self.vel_offset += &grads.grad_adapter_offset;

        params
            .weights_mut()
            .zip_apply(&self.vel_weights, |p, v| *p -= rates.classifier * v);
        params
            .biases_mut()
            .zip_apply(&self.vel_biases, |p, v| *p -= rates.classifier * v);
        adapter
            .matrix_mut()
            .zip_apply(&self.vel_matrix, |p, v| *p -= rates.adapter * v);
        adapter
            .offset_mut()
            .zip_apply(&self.vel_offset, |p, v| *p -= rates.adapter * v);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_const(g: f64) -> LossResult {
        let mut r = LossResult::zeros(1, 1);
        r.grad_weights[(0, 0)] = g;
        r.grad_biases[0] = g;
        r
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut p = ClassifierParams::zeros(1, 1);
        let mut a = FeatureAdapter::identity(1);
        let mut opt = MomentumSgd::new(0.0, 1, 1).unwrap();
        let rates = GroupRates {
            classifier: 0.1,
            adapter: 0.0,
        };
        opt.step(&mut p, &mut a, &grads_const(2.0), rates).unwrap();
        opt.step(&mut p, &mut a, &grads_const(2.0), rates).unwrap();
        assert!((p.weights()[(0, 0)] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps_closed_form() {
        let mut p = ClassifierParams::zeros(1, 1);
        let mut a = FeatureAdapter::identity(1);
        let mut opt = MomentumSgd::new(0.9, 1, 1).unwrap();
        let rates = GroupRates {
            classifier: 0.01,
            adapter: 0.0,
        };
        let g = 3.0;
        opt.step(&mut p, &mut a, &grads_const(g), rates).unwrap();
        opt.step(&mut p, &mut a, &grads_const(g), rates).unwrap();
        let want = -0.01 * g * (1.0 + 1.9);
        assert!((p.weights()[(0, 0)] - want).abs() < 1e-15);
        assert_eq!(a, FeatureAdapter::identity(1));
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f = 0.5 * sum_i h_i (x_i - t_i)^2 over weights, biases, adapter entries.
        let target_w = 1.5;
        let target_b = -0.7;
        let target_a = 0.3;
        let mut p = ClassifierParams::zeros(1, 1);
        let mut a = FeatureAdapter::identity(1);
        let mut opt = MomentumSgd::new(0.9, 1, 1).unwrap();
        let rates = GroupRates {
            classifier: 0.05,
            adapter: 0.05,
        };
        let mut steps = 0;
        loop {
            let mut g = LossResult::zeros(1, 1);
            g.grad_weights[(0, 0)] = 2.0 * (p.weights()[(0, 0)] - target_w);
            g.grad_biases[0] = p.biases()[0] - target_b;
            g.grad_adapter_matrix[(0, 0)] = 3.0 * (a.matrix()[(0, 0)] - target_a);
            g.grad_adapter_offset[0] = a.offset()[0];
            opt.step(&mut p, &mut a, &g, rates).unwrap();
            steps += 1;
            let err = (p.weights()[(0, 0)] - target_w)
                .abs()
                .max((p.biases()[0] - target_b).abs())
                .max((a.matrix()[(0, 0)] - target_a).abs());
            if err < 1e-6 {
                break;
            }
            assert!(steps < 500, "no convergence after 500 steps (err {err})");
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = ClassifierParams::zeros(1, 1);
        let mut a = FeatureAdapter::identity(1);
        let mut opt = MomentumSgd::new(0.5, 1, 1).unwrap();
        let rates = GroupRates {
            classifier: 0.1,
            adapter: 0.1,
        };
        let err = opt.step(&mut p, &mut a, &grads_const(f64::NAN), rates);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(p, ClassifierParams::zeros(1, 1));
        assert!(MomentumSgd::new(1.0, 1, 1).is_err());
    }
}
