use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    Adam,
    AdamW,
    #[serde(rename = "RMSprop")]
    RmsProp,
}

/// Update rule and its constants. Unused constants are ignored by the rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Learning rate.
    pub eta: f64,
    /// RMSprop smoothing constant.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW).
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            eta: 1e-3,
            gamma: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(eta: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, eta, ..Default::default() }
    }

    pub fn adam(eta: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, eta, ..Default::default() }
    }

    pub fn adamw(eta: f64, weight_decay: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::AdamW, eta, weight_decay, ..Default::default() }
    }

    pub fn rmsprop(eta: f64, gamma: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::RmsProp, eta, gamma, ..Default::default() }
    }

    /// A zero learning rate is accepted so that a run can be checked to leave
    /// parameters untouched.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.eta)));
        }
        if !unit(self.gamma) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid("gamma, beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("eps must be > 0 and weight decay >= 0"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.kind {
            OptimizerKind::Sgd => format!("SGD(eta={})", self.eta),
            OptimizerKind::Adam => format!("Adam(eta={})", self.eta),
            OptimizerKind::AdamW => format!("AdamW(eta={}, lambda={})", self.eta, self.weight_decay),
            OptimizerKind::RmsProp => format!("RMSprop(eta={}, gamma={})", self.eta, self.gamma),
        }
    }
}

/// Per-parameter accumulators, shaped like the flattened parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// First moments (Adam family).
    pub first: Vec<Vec<f64>>,
    /// Second moments or running squared averages.
    pub second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, state: OptimizerState::default() })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies one update to `params` from `grads` (same type, same layout).
    ///
    /// A non-finite gradient or update aborts with [`Error::Divergence`]
    /// naming the offending tensor; `params` may be partially updated then.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_tensors = grads.tensors();
        if let Some(i) = grad_tensors.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence(format!("non-finite gradient in {}", params.tensor_names()[i])));
        }
        let mut tensors = params.tensors_mut();
        if tensors.len() != grad_tensors.len() {
            return Err(Error::Internal("parameter and gradient layouts differ".into()));
        }
        if self.state.first.is_empty() {
            self.state.first = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            self.state.second = self.state.first.clone();
        }
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);

        let mut bad = None;
        for (k, (w, g)) in tensors.iter_mut().zip(&grad_tensors).enumerate() {
            let (m, v) = (&mut self.state.first[k], &mut self.state.second[k]);
            if w.len() != g.len() || m.len() != w.len() {
                return Err(Error::Internal("parameter and gradient shapes differ".into()));
            }
            for i in 0..w.len() {
                let gi = g[i];
                match c.kind {
                    OptimizerKind::Sgd => w[i] -= c.eta * gi,
                    OptimizerKind::RmsProp => {
                        v[i] = c.gamma * v[i] + (1.0 - c.gamma) * gi * gi;
                        w[i] -= c.eta * gi / (v[i].sqrt() + c.eps);
                    }
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        if c.kind == OptimizerKind::AdamW {
                            w[i] -= c.eta * c.weight_decay * w[i];
                        }
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        w[i] -= c.eta * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
            if bad.is_none() && w.iter().any(|x| !x.is_finite()) {
                bad = Some(k);
            }
        }
        drop(tensors);
        match bad {
            Some(k) => Err(Error::Divergence(format!("non-finite value after update of {}", params.tensor_names()[k]))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn tensor_names(&self) -> Vec<String> {
            vec!["w".into()]
        }
    }

    fn one_step(cfg: OptimizerConfig, w: f64, g: f64) -> f64 {
        let mut p = Flat(vec![w]);
        Optimizer::new(cfg).unwrap().step(&mut p, &Flat(vec![g])).unwrap();
        p.0[0]
    }

    #[test]
    fn first_steps_by_hand() {
        assert_eq!(one_step(OptimizerConfig::sgd(0.5), 1.0, 2.0), 0.0);

        // acc = 0.01 * 4 = 0.04, step = 1e-3 * 2 / (0.2 + eps)
        let w = one_step(OptimizerConfig::rmsprop(1e-3, 0.99), 1.0, 2.0);
        approx::assert_abs_diff_eq!(w, 1.0 - 1e-3 * 2.0 / (0.2 + 1e-8), epsilon = 1e-15);
        approx::assert_abs_diff_eq!(w, 0.99, epsilon = 1e-7);

        // m̂ = 2, v̂ = 4
        let w = one_step(OptimizerConfig::adam(1e-3), 1.0, 2.0);
        approx::assert_abs_diff_eq!(w, 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8), epsilon = 1e-15);

        // decay first: w = 1 - 1e-3 * 0.1 * 1, then the Adam step
        let w = one_step(OptimizerConfig::adamw(1e-3, 0.1), 1.0, 2.0);
        approx::assert_abs_diff_eq!(w, 1.0 - 1e-4 - 1e-3 * 2.0 / (2.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_config_and_gradients() {
        assert!(Optimizer::new(OptimizerConfig::rmsprop(1e-3, 1.0)).is_err());
        assert!(Optimizer::new(OptimizerConfig::sgd(-1.0)).is_err());
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        let err = opt.step(&mut Flat(vec![1.0]), &Flat(vec![f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::Divergence(ref m) if m.contains('w')));
    }

    #[test]
    fn state_mirrors_parameters() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
        let mut p = Flat(vec![1.0, 2.0, 3.0]);
        opt.step(&mut p, &Flat(vec![0.1, 0.2, 0.3])).unwrap();
        opt.step(&mut p, &Flat(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!(opt.state().step, 2);
        assert_eq!(opt.state().first[0].len(), 3);
    }

    /// 200 steps on ‖w − w*‖² from a random start. Adam/AdamW and RMSprop use
    /// larger rates than the trajectory-model sweep (1e-3 would cover at most
    /// 0.2 per coordinate in 200 steps).
    #[test]
    fn every_rule_reduces_a_quadratic() {
        let configs = [
            OptimizerConfig::sgd(0.5),
            OptimizerConfig::sgd(0.1),
            OptimizerConfig::adam(0.05),
            OptimizerConfig::adamw(0.05, 4e-3),
            OptimizerConfig::rmsprop(0.01, 0.99),
        ];
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let start: Vec<f64> = (0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let f = |w: &[f64]| w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            for cfg in configs {
                let mut p = Flat(start.clone());
                let f0 = f(&p.0);
                let mut opt = Optimizer::new(cfg).unwrap();
                for _ in 0..200 {
                    let g = Flat(p.0.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect());
                    opt.step(&mut p, &g).unwrap();
                }
                let ratio = f(&p.0) / f0;
                // AdamW's decay pulls toward zero, so its fixed point is slightly off w*.
                assert!(ratio < 1e-3, "{} seed {seed}: ratio {ratio}", cfg.label());
            }
        }
    }
}
