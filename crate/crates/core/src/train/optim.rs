//! First-order optimizers over the trainable parameter blocks.

use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{invalid_param, Result};
use crate::network::NetworkGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        Self::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            Self::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid_param(format!("bad optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Rescales the gradient when its global norm exceeds this value.
    pub clip_norm: Option<f64>,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, clip_norm: None, first: Vec::new(), second: Vec::new(), t: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Frozen blocks and dormant synapses are left alone.
    pub fn step(&mut self, graph: &mut NetworkGraph, grads: &Gradients) {
        let n = graph.blocks.len();
        self.first.resize(n, None);
        self.second.resize(n, None);
        self.t += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.norm();
                if norm > c { c / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for (b, g) in grads.blocks.iter().enumerate().take(n) {
            let Some(g) = g else { continue };
            let block = &mut graph.blocks[b];
            if block.frozen {
                continue;
            }
            let m = self.first[b].get_or_insert_with(|| vec![0.0; g.len()]);
            match self.kind {
                OptimizerKind::Sgd { lr, momentum } => {
                    for k in 0..g.len() {
                        if !block.is_active(k) {
                            continue;
                        }
                        m[k] = momentum * m[k] + scale * g[k];
                        block.weights[k] -= lr * m[k];
                    }
                }
                OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                    let v = self.second[b].get_or_insert_with(|| vec![0.0; g.len()]);
                    let c1 = 1.0 - beta1.powi(self.t as i32);
                    let c2 = 1.0 - beta2.powi(self.t as i32);
                    for k in 0..g.len() {
                        if !block.is_active(k) {
                            continue;
                        }
                        let gk = scale * g[k];
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                        block.weights[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }

    /// Clears the moment estimates of one block, used after rewiring.
    pub fn reset_entries(&mut self, block: usize, entries: &[usize]) {
        for state in [&mut self.first, &mut self.second] {
            if let Some(Some(v)) = state.get_mut(block) {
                for &k in entries {
                    v[k] = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ParamBlock;

    fn one_block(w: Vec<f64>) -> NetworkGraph {
        let mut g = NetworkGraph::default();
        let n = w.len() as u32;
        g.add_block(ParamBlock::dense("w", 1, n, w, vec![0; n as usize]));
        g
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        let mut g = one_block(vec![3.0, -2.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd { lr: 0.1, momentum: 0.5 }).unwrap();
        for _ in 0..200 {
            let grads = Gradients { blocks: vec![Some(g.blocks[0].weights.iter().map(|w| 2.0 * w).collect())] };
            opt.step(&mut g, &grads);
        }
        assert!(g.blocks[0].weights.iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut g = one_block(vec![1.0, 1.0]);
        let mut opt = Optimizer::new(OptimizerKind::adam(0.01)).unwrap();
        opt.step(&mut g, &Gradients { blocks: vec![Some(vec![5.0, -0.001])] });
        assert!((g.blocks[0].weights[0] - 0.99).abs() < 1e-6);
        assert!((g.blocks[0].weights[1] - 1.01).abs() < 1e-4);
    }

    #[test]
    fn frozen_and_dormant_entries_untouched() {
        let mut g = one_block(vec![1.0, 1.0]);
        g.blocks[0].mask = Some(vec![true, false]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd { lr: 1.0, momentum: 0.0 }).unwrap();
        opt.step(&mut g, &Gradients { blocks: vec![Some(vec![1.0, 1.0])] });
        assert_eq!(g.blocks[0].weights, vec![0.0, 1.0]);
        g.blocks[0].frozen = true;
        opt.step(&mut g, &Gradients { blocks: vec![Some(vec![1.0, 1.0])] });
        assert_eq!(g.blocks[0].weights, vec![0.0, 1.0]);
    }

    #[test]
    fn invalid_settings() {
        assert!(Optimizer::new(OptimizerKind::Sgd { lr: 0.0, momentum: 0.0 }).is_err());
        assert!(Optimizer::new(OptimizerKind::Adam { lr: 0.1, beta1: 1.0, beta2: 0.9, eps: 1e-8 }).is_err());
    }
}
