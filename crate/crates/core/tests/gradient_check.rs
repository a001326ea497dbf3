//! Central finite differences against the backward pass in relaxed mode.

mod common;

use std::collections::BTreeMap;

use common::gradcheck::probe;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeplace::network::{GraphKind, ParamBlock, Role, Slot};
use spikeplace::neuron::NeuronParams;
use spikeplace::raster::SpikeMatrix;
use spikeplace::sim::{run, RunOptions};
use spikeplace::train::{gradients, BpttOptions, LossConfig, Sample, Target, TaskLoss};
use spikeplace::NetworkGraph;

fn check(loss: LossConfig, teacher: bool, seed: u64) {
    let (checked, worst) = probe(loss, teacher, seed);
    assert!(checked >= 100, "only {checked} stable probes");
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    check(LossConfig { task: TaskLoss::CrossEntropy, ..LossConfig::default() }, false, 1);
}

#[test]
fn regularized_gradient_matches_finite_differences() {
    let loss = LossConfig { lambda_rho: 1e-9, rho_target: 20.0, lambda_v: 1e-7, task: TaskLoss::CrossEntropy, ..LossConfig::default() };
    check(loss, false, 2);
}

#[test]
fn teacher_gradient_matches_finite_differences() {
    check(LossConfig { task: TaskLoss::MseTeacher, ..LossConfig::default() }, true, 3);
}

/// With no hidden neurons the readout voltage is linear in the weights, so
/// the simulator's response to one-hot weight matrices gives the exact
/// cross-entropy gradient `scale * (p - y) * F` per input.
#[test]
fn readout_only_gradient_is_the_linear_filter() {
    let (n_in, n_out, steps, scale) = (4u32, 3u32, 40u32, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let build = |w: Vec<f64>| {
        let mut g = NetworkGraph::new(GraphKind::Generic);
        let a = g.add_population("in", n_in, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
        let r = g.add_population("out", n_out, NeuronParams::readout(7.0, f64::INFINITY, 10), Role::Readout);
        let b = g.add_block(ParamBlock::dense("w", n_in, n_out, w, vec![1; (n_in * n_out) as usize]));
        g.connect(a, r, b).unwrap();
        g
    };
    let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = build(w.clone());
    let samples: Vec<Sample> = (0..3)
        .map(|b| {
            let mut m = SpikeMatrix::new(n_in, steps);
            for t in 0..steps {
                for n in 0..n_in {
                    if rng.random::<f64>() < 0.3 {
                        m.set(n, t);
                    }
                }
            }
            Sample { inputs: BTreeMap::from([(0, m)]), active: None, target: Target::Class(b % n_out as usize) }
        })
        .collect();
    let opts = BpttOptions { readout_scale: scale, ..BpttOptions::new(steps) };
    let got = gradients(&g, &samples, &opts).unwrap();
    let got = got.gradients.blocks[0].as_ref().unwrap();

    let mut want = vec![0.0; w.len()];
    for s in &samples {
        let Target::Class(y) = s.target else { unreachable!() };
        // F[j] = voltage of readout 0 when only input j connects to it with weight 1
        let f: Vec<f64> = (0..n_in as usize)
            .map(|j| {
                let mut e = vec![0.0; w.len()];
                e[j * n_out as usize] = 1.0;
                run(&build(e), &s.inputs, &RunOptions::steps(steps)).unwrap().readout[&1][0]
            })
            .collect();
        let v: Vec<f64> = (0..n_out as usize)
            .map(|k| (0..n_in as usize).map(|j| w[j * n_out as usize + k] * f[j]).sum::<f64>() * scale)
            .collect();
        let z: f64 = v.iter().map(|x| x.exp()).sum();
        for k in 0..n_out as usize {
            let p = v[k].exp() / z - if k == y { 1.0 } else { 0.0 };
            for j in 0..n_in as usize {
                want[j * n_out as usize + k] += scale * p * f[j] / samples.len() as f64;
            }
        }
    }
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}
