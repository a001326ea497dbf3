//! Central finite differences against the backward pass in relaxed mode.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeplace::network::{build_lsnn, LsnnSpec};
use spikeplace::neuron::NeuronParams;
use spikeplace::raster::SpikeMatrix;
use spikeplace::train::{evaluate, forward_spikes, gradients, BpttOptions, Forward, LossConfig, Sample, Target};
use spikeplace::NetworkGraph;

pub const STEPS: u32 = 50;

pub fn network(seed: u64) -> NetworkGraph {
    let spec = LsnnSpec {
        size: 20,
        inputs: 5,
        readout: 3,
        params: NeuronParams::lif_ahp(20.0, 5.0, 200.0, 4.0, 10.0, 1),
        readout_params: NeuronParams::readout(5.0, 20.0, 25),
        input_gain: 3.0,
        rec_gain: 1.5,
        out_gain: 1.0,
        ..LsnnSpec::default()
    };
    build_lsnn(&spec, seed).unwrap()
}

pub fn batch(g: &NetworkGraph, seed: u64, teacher: bool) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = g.populations.iter().find(|p| p.is_input()).unwrap();
    (0..3)
        .map(|b| {
            let mut m = SpikeMatrix::new(input.size, STEPS);
            for t in 0..STEPS {
                for n in 0..input.size {
                    if rng.random::<f64>() < 0.25 {
                        m.set(n, t);
                    }
                }
            }
            let target = if teacher {
                Target::Teacher((0..3).map(|d| (0..STEPS).map(|t| ((t + d) as f64 * 0.3).sin()).collect()).collect())
            } else {
                Target::Class(b % 3)
            };
            Sample { inputs: BTreeMap::from([(input.id, m)]), active: None, target }
        })
        .collect()
}

fn same_spikes(a: &NetworkGraph, b: &NetworkGraph, samples: &[Sample], opts: &BpttOptions) -> bool {
    samples.iter().all(|s| forward_spikes(a, s, opts).unwrap() == forward_spikes(b, s, opts).unwrap())
}

/// Probes up to 100 weights whose hard spike pattern is stable under the
/// perturbation and returns (probes checked, worst relative error).
pub fn probe(loss: LossConfig, teacher: bool, seed: u64) -> (usize, f64) {
    let g = network(seed);
    let samples = batch(&g, seed + 100, teacher);
    let opts = BpttOptions { forward: Forward::Relaxed, loss, readout_scale: 0.5, ..BpttOptions::new(STEPS) };
    let analytic = gradients(&g, &samples, &opts).unwrap();
    assert!(analytic.loss.total > 0.0 && analytic.gradients.norm() > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut checked = 0;
    let mut attempts = 0;
    let mut worst = 0.0;
    while checked < 100 && attempts < 2000 {
        attempts += 1;
        let b = rng.random_range(0..g.blocks.len());
        let k = rng.random_range(0..g.blocks[b].len());
        if !g.blocks[b].is_active(k) {
            continue;
        }
        let (mut plus, mut minus) = (g.clone(), g.clone());
        plus.blocks[b].weights[k] += h;
        minus.blocks[b].weights[k] -= h;
        if !same_spikes(&plus, &g, &samples, &opts) || !same_spikes(&minus, &g, &samples, &opts) {
            continue;
        }
        let fd = (evaluate(&plus, &samples, &opts).unwrap().loss.total - evaluate(&minus, &samples, &opts).unwrap().loss.total)
            / (2.0 * h);
        let an = analytic.gradients.blocks[b].as_ref().unwrap()[k];
        let scale = fd.abs().max(an.abs()).max(1e-6);
        worst = f64::max(worst, (fd - an).abs() / scale);
        checked += 1;
    }
    (checked, worst)
}

