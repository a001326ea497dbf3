//! Surrogate-gradient BPTT and the training losses.
//!
//! The spike nonlinearity is the step function of the scaled voltage. Its
//! derivative is replaced by a triangular pseudo-derivative; [`ramp`] is the
//! primitive of that pseudo-derivative and defines the relaxed forward pass
//! used by the finite-difference checks.

mod bptt;
mod optim;
mod rewire;
mod tasks;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};

pub use bptt::{
    evaluate, forward_spikes, gradients, BatchResult, BpttOptions, Forward, Gradients, LossBreakdown, Sample, Target,
};
pub use optim::{Optimizer, OptimizerKind};
pub use rewire::{project_signs, rewire_sparse, RewireStats};
pub use tasks::{
    clamped_slots, pair_matching_stories, pretrain_teacher_matching, relnet_samples, train_relnet_toy, train_smnist, EpochReport, RelNetTrainConfig,
    RelNetTrainReport, SmnistTrainConfig, TeacherConfig, TeacherReport, TrainReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub gamma: f64,
    pub v_minus: f64,
    pub v_plus: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self { gamma: 0.3, v_minus: 1.0, v_plus: 1.0 }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.v_minus > 0.0 && self.v_plus > 0.0) {
            return Err(invalid_param("surrogate gamma, v_minus and v_plus must be positive"));
        }
        Ok(())
    }
}

/// Triangular pseudo-derivative: peak `gamma` at 0, zero outside
/// `[-v_minus, v_plus]`.
pub fn pseudo_derivative(vs: f64, p: &SurrogateParams) -> f64 {
    if vs < 0.0 {
        if vs >= -p.v_minus {
            p.gamma * (1.0 + vs / p.v_minus)
        } else {
            0.0
        }
    } else if vs <= p.v_plus {
        p.gamma * (1.0 - vs / p.v_plus)
    } else {
        0.0
    }
}

/// Primitive of [`pseudo_derivative`], zero below `-v_minus` and
/// `gamma * (v_minus + v_plus) / 2` above `v_plus`.
pub fn ramp(vs: f64, p: &SurrogateParams) -> f64 {
    if vs < -p.v_minus {
        0.0
    } else if vs < 0.0 {
        let u = vs + p.v_minus;
        p.gamma * u * u / (2.0 * p.v_minus)
    } else if vs <= p.v_plus {
        p.gamma * (p.v_minus / 2.0 + vs - vs * vs / (2.0 * p.v_plus))
    } else {
        p.gamma * (p.v_minus + p.v_plus) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    CrossEntropy,
    MseTeacher,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_rho: f64,
    /// Hz
    pub rho_target: f64,
    pub lambda_v: f64,
    pub lambda_r: f64,
    /// Hz, summed over all g_θ instances
    pub r_target: f64,
    pub task: TaskLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_rho: 0.0, rho_target: 10.0, lambda_v: 0.0, lambda_r: 0.0, r_target: 300.0, task: TaskLoss::CrossEntropy }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_rho, self.lambda_v, self.lambda_r].iter().any(|&l| !(l >= 0.0)) {
            return Err(invalid_param("loss weights must be non-negative"));
        }
        Ok(())
    }
}

pub const VS_LOW: f64 = -2.0;
pub const VS_HIGH: f64 = 0.4;

/// Per-element voltage penalty `relu(vs - 0.4)^2 + relu(-vs - 2)^2`.
pub fn voltage_penalty(vs: f64) -> f64 {
    let hi = (vs - VS_HIGH).max(0.0);
    let lo = (-vs + VS_LOW).max(0.0);
    hi * hi + lo * lo
}

pub(crate) fn voltage_penalty_grad(vs: f64) -> f64 {
    2.0 * (vs - VS_HIGH).max(0.0) - 2.0 * (-vs + VS_LOW).max(0.0)
}

/// `lambda * (sum_k (mean_b rate_k - target)^2)^2` over per-sample rate
/// vectors (Hz).
pub fn loss_rate(rates: &[Vec<f64>], lambda: f64, target: f64) -> f64 {
    if rates.is_empty() {
        return 0.0;
    }
    let b = rates.len() as f64;
    let n = rates[0].len();
    let s: f64 = (0..n)
        .map(|k| {
            let mean = rates.iter().map(|r| r[k]).sum::<f64>() / b;
            (mean - target).powi(2)
        })
        .sum();
    lambda * s * s
}

/// `lambda * (mean penalty)^2` over a flat list of scaled voltages.
pub fn loss_voltage(scaled: &[f64], lambda: f64) -> f64 {
    if scaled.is_empty() {
        return 0.0;
    }
    let mean = scaled.iter().map(|&v| voltage_penalty(v)).sum::<f64>() / scaled.len() as f64;
    lambda * mean * mean
}

/// g_θ rate loss for one layer.
///
/// `rates[b][instance][k]` is the rate (Hz) of neuron `k` of one g_θ
/// instance in story `b`; instances absent from a story may be omitted.
/// R_k^b sums over instances, and the loss is
/// `lambda * (mean_k (mean_b R_k^b - target)^2)^2`.
pub fn loss_gtheta_rate(rates: &[Vec<Vec<f64>>], lambda: f64, target: f64) -> f64 {
    let summed: Vec<Vec<f64>> = rates.iter().map(|story| sum_instances(story)).collect();
    let Some(k) = summed.iter().map(|r| r.len()).max() else {
        return 0.0;
    };
    if k == 0 {
        return 0.0;
    }
    let b = summed.len() as f64;
    let d: f64 = (0..k)
        .map(|n| {
            let mean = summed.iter().map(|r| r.get(n).copied().unwrap_or(0.0)).sum::<f64>() / b;
            (mean - target).powi(2)
        })
        .sum::<f64>()
        / k as f64;
    lambda * d * d
}

fn sum_instances(story: &[Vec<f64>]) -> Vec<f64> {
    let k = story.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut out = vec![0.0; k];
    for inst in story {
        for (o, r) in out.iter_mut().zip(inst) {
            *o += r;
        }
    }
    out
}

/// Spikes per neuron per instance in a `t_sim`-step window when the summed
/// rate sits exactly at `r_target` and is spread evenly over all instances
/// of an `m`-sentence story.
pub fn spikes_per_instance_at_target(r_target_hz: f64, t_sim: u32, m: u32) -> f64 {
    let instances = (m * (m + 1) / 2) as f64;
    r_target_hz * t_sim as f64 / 1000.0 / instances
}
