//! First-order optimizers with inspectable, checkpointable state.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Stochastic gradient descent with heavy-ball momentum.
    Sgd,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            o => Err(Error::Config(format!("unknown optimizer `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    params: Vec<(String, Var)>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: usize,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: Vec<(String, Var)>) -> Result<Self> {
        let zeros = |v: &Var| v.as_tensor().zeros_like();
        let first = params
            .iter()
            .map(|(_, v)| zeros(v))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let second = params
            .iter()
            .map(|(_, v)| zeros(v))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Optimizer {
            cfg,
            params,
            first,
            second,
            steps: 0,
        })
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update. Parameters without a gradient see a zero one.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let c = self.cfg;
        for (i, (_, var)) in self.params.iter().enumerate() {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.clone(),
                None => var.as_tensor().zeros_like()?,
            };
            match c.kind {
                OptimizerKind::Sgd => {
                    let m = ((&self.first[i] * c.momentum)? + &g)?;
                    let mut upd = m.clone();
                    if c.weight_decay > 0.0 {
                        upd = (upd + (var.as_tensor() * c.weight_decay)?)?;
                    }
                    var.set(&(var.as_tensor() - (upd * c.lr)?)?)?;
                    self.first[i] = m;
                }
                OptimizerKind::AdamW => {
                    let m = ((&self.first[i] * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
                    let v = ((&self.second[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
                    let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
                    let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
                    let mhat = (&m / bc1)?;
                    let vhat = (&v / bc2)?;
                    let mut upd = mhat.div(&(vhat.sqrt()? + c.eps)?)?;
                    if c.weight_decay > 0.0 {
                        upd = (upd + (var.as_tensor() * c.weight_decay)?)?;
                    }
                    var.set(&(var.as_tensor() - (upd * c.lr)?)?)?;
                    self.first[i] = m;
                    self.second[i] = v;
                }
            }
        }
        Ok(())
    }

    /// Moment buffers keyed `<prefix>.<param>.m1` / `.m2`.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (n, _)) in self.params.iter().enumerate() {
            out.push((format!("{prefix}.{n}.m1"), self.first[i].clone()));
            out.push((format!("{prefix}.{n}.m2"), self.second[i].clone()));
        }
        out
    }

    pub fn load_state(
        &mut self,
        prefix: &str,
        tensors: &std::collections::HashMap<String, Tensor>,
        steps: usize,
    ) -> Result<()> {
        for (i, (n, var)) in self.params.iter().enumerate() {
            for (slot, buf) in [("m1", &mut self.first[i]), ("m2", &mut self.second[i])] {
                let key = format!("{prefix}.{n}.{slot}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state `{key}`")))?;
                *buf = t.to_dtype(var.dtype())?.to_device(var.device())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn quadratic(kind: OptimizerKind, lr: f64) -> f64 {
        let x = Var::from_tensor(&Tensor::new(&[3.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let cfg = OptimizerConfig {
            kind,
            lr,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, vec![("x".into(), x.clone())]).unwrap();
        for _ in 0..300 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        x.as_tensor()
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    #[test]
    fn both_minimize_a_quadratic() {
        assert!(quadratic(OptimizerKind::Sgd, 0.01) < 1e-4);
        assert!(quadratic(OptimizerKind::AdamW, 0.05) < 1e-3);
    }

    #[test]
    fn sgd_matches_hand_computation() {
        let x = Var::from_tensor(&Tensor::new(&[1.0f64], &Device::Cpu).unwrap()).unwrap();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            momentum: 0.9,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, vec![("x".into(), x.clone())]).unwrap();
        // loss = x^2, grad = 2x. Step 1: m = 2, x = 0.8. Step 2: m = 0.9*2 + 1.6 = 3.4, x = 0.46.
        for _ in 0..2 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let v = x
            .as_tensor()
            .to_dtype(DType::F64)
            .unwrap()
            .to_vec1::<f64>()
            .unwrap()[0];
        assert!((v - 0.46).abs() < 1e-12);
    }
}
