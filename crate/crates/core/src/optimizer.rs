//! First-order updates with a body and a head learning-rate group.

use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::numcore::{GradVector, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Learning-rate factor for the head group (final layer and extra scalars).
    pub head_lr_multiplier: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            head_lr_multiplier: 10.0,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.head_lr_multiplier >= 0.0) {
            return Err(ProfsError::invalid("learning rates must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ProfsError::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(ProfsError::invalid("Adam eps must be > 0"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }
}

fn check_grad(params: &ParamVector, grad: &GradVector) -> Result<()> {
    params.check_same_shape(grad)?;
    if !grad.is_finite() {
        return Err(ProfsError::NonFinite("gradient".into()));
    }
    Ok(())
}

/// One Adam step in place. The head group uses `base_lr · head_lr_multiplier`.
pub fn adam_step(params: &mut ParamVector, grad: &GradVector, state: &mut AdamState) -> Result<()> {
    check_grad(params, grad)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(ProfsError::ShapeMismatch("Adam moments do not match parameters".into()));
    }
    let c = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let head = params.layout().head_range();
    let g = grad.as_slice();
    let theta = params.as_mut_slice();
    for i in 0..theta.len() {
        let lr = if head.contains(&i) {
            c.base_lr * c.head_lr_multiplier
        } else {
            c.base_lr
        };
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g[i];
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}

/// `θ ← θ − lr·g`
pub fn sgd_step(params: &mut ParamVector, grad: &GradVector, lr: f64) -> Result<()> {
    check_grad(params, grad)?;
    params.add_scaled(-lr, grad)
}

/// Optimizer choice before any state exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam(AdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Adam(c) => c.validate(),
            OptimizerConfig::Sgd { lr } if lr.is_finite() && *lr > 0.0 => Ok(()),
            OptimizerConfig::Sgd { lr } => Err(ProfsError::invalid(format!("lr must be positive, got {lr}"))),
        }
    }

    pub fn build(&self, num_params: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Adam(c) => Optimizer::Adam(AdamState::new(c, num_params)),
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd { lr },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ParamVector, grad: &GradVector) -> Result<()> {
        match self {
            Optimizer::Adam(s) => adam_step(params, grad, s),
            Optimizer::Sgd { lr } => sgd_step(params, grad, *lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{LayerShape, ParamLayout};

    fn two_layer(values: f64) -> ParamVector {
        let layout = ParamLayout::new(
            vec![
                LayerShape { inputs: 1, outputs: 1 },
                LayerShape { inputs: 1, outputs: 1 },
            ],
            0,
        )
        .unwrap();
        ParamVector::from_flat(layout, vec![values; 4]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = two_layer(0.5);
        let before = p.clone();
        let g = ParamVector::zeros(p.layout().clone());
        let mut s = AdamState::new(AdamConfig::default(), p.len());
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_has_lr_magnitude() {
        let layout = ParamLayout::new(vec![], 1).unwrap();
        let mut p = ParamVector::from_flat(layout.clone(), vec![1.0]).unwrap();
        let g = ParamVector::from_flat(layout, vec![-3.0]).unwrap();
        let cfg = AdamConfig {
            base_lr: 0.01,
            head_lr_multiplier: 1.0,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, 1);
        adam_step(&mut p, &g, &mut s).unwrap();
        let expected = 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((p.as_slice()[0] - 1.0 - expected).abs() < 1e-15);
    }

    #[test]
    fn head_group_moves_ten_times_further() {
        let mut p = two_layer(0.0);
        let mut g = ParamVector::zeros(p.layout().clone());
        g.fill(1.0);
        let mut s = AdamState::new(AdamConfig::default(), p.len());
        adam_step(&mut p, &g, &mut s).unwrap();
        let body = p.weight(0)[0].abs();
        let head = p.weight(1)[0].abs();
        assert!((head / body - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sgd_examples() {
        let layout = ParamLayout::new(vec![], 1).unwrap();
        let g = ParamVector::from_flat(layout.clone(), vec![2.0]).unwrap();
        let mut p = ParamVector::from_flat(layout.clone(), vec![1.0]).unwrap();
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);
        sgd_step(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.as_slice(), &[0.0]);
        sgd_step(&mut p, &g, 0.25).unwrap();
        sgd_step(&mut p, &g, 0.25).unwrap();
        assert_eq!(p.as_slice(), &[-1.0]);
        let bad = ParamVector::from_flat(layout, vec![f64::NAN]).unwrap();
        assert!(matches!(sgd_step(&mut p, &bad, 0.1), Err(ProfsError::NonFinite(_))));
    }

    #[test]
    fn adam_is_deterministic_and_bounded() {
        let run = || {
            let mut p = two_layer(0.2);
            let mut s = AdamState::new(AdamConfig::default(), p.len());
            let mut g = ParamVector::zeros(p.layout().clone());
            for k in 0..50 {
                // alternating sign mimics a hinge switching on and off
                g.fill(if k % 2 == 0 { 1e3 } else { -1e-3 });
                let before = p.clone();
                adam_step(&mut p, &g, &mut s).unwrap();
                for (a, b) in p.as_slice().iter().zip(before.as_slice()) {
                    let lr = 1e-2; // head lr bounds both groups
                    assert!((a - b).abs() <= lr / (1.0 - 0.9) + 1e-12);
                }
            }
            p
        };
        assert_eq!(run().as_slice(), run().as_slice());
    }
}
