//! Training loops for the sMNIST task, teacher matching of an LSNN and the
//! toy relational task.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    evaluate, gradients, project_signs, rewire_sparse, BatchResult, BpttOptions, Forward, LossBreakdown, LossConfig,
    Optimizer, OptimizerKind, Sample, SurrogateParams, Target, TaskLoss,
};
use crate::encode::{encode_pixels, ThresholdEncoderConfig};
use crate::error::{invalid_input, invalid_param, Result};
use crate::network::{build_smnist_network, is_feedforward, NetworkGraph, RelNetIndex, Role, SmnistConfig, Slot};
use crate::raster::SpikeMatrix;
use crate::seed;
use crate::sim::{feedforward_active, relnet_embeddings, Mode, Story};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean over the batches of the epoch.
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Fraction of regularized neuron steps with the scaled voltage inside
    /// `[-2, 0.4]` during the epoch.
    pub in_range_fraction: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub test_accuracy: Option<f64>,
    /// Scaled-voltage range fraction on the test set after training.
    pub test_in_range_fraction: Option<f64>,
    pub rewired: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmnistTrainConfig {
    pub net: SmnistConfig,
    pub encoder: ThresholdEncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    pub loss: LossConfig,
    pub surrogate: SurrogateParams,
    pub readout_scale: f64,
    /// Rewire sign-violating recurrent synapses instead of clamping them.
    pub rewire: bool,
    pub rewire_magnitude: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SmnistTrainConfig {
    fn default() -> Self {
        Self {
            net: SmnistConfig::desk(),
            encoder: ThresholdEncoderConfig::default(),
            epochs: 6,
            batch_size: 16,
            optimizer: OptimizerKind::adam(0.02),
            clip_norm: None,
            loss: LossConfig { lambda_rho: 1e-9, rho_target: 10.0, lambda_v: 1e5, ..LossConfig::default() },
            surrogate: SurrogateParams::default(),
            // one over the integration window
            readout_scale: 1.0 / 840.0,
            rewire: true,
            rewire_magnitude: 1.0,
            seed: 0,
            threads: 0,
        }
    }
}

fn encode_set(data: &[(Vec<u8>, u8)], enc: &ThresholdEncoderConfig, classes: u32) -> Result<Vec<(SpikeMatrix, usize)>> {
    data.iter()
        .map(|(px, y)| {
            if *y as u32 >= classes {
                return Err(invalid_input(format!("label {y} but the readout has {classes} neurons")));
            }
            Ok((encode_pixels(px, enc)?, *y as usize))
        })
        .collect()
}

fn apply_update(
    graph: &mut NetworkGraph,
    opt: &mut Optimizer,
    result: &BatchResult,
    rewire: Option<f64>,
    seed_value: u64,
) -> Result<usize> {
    opt.step(graph, &result.gradients);
    let mut changed = 0;
    for b in 0..graph.blocks.len() {
        if graph.blocks[b].row_signs.is_none() || graph.blocks[b].frozen {
            continue;
        }
        match rewire {
            Some(mag) => {
                let (stats, entries) = rewire_sparse(&mut graph.blocks[b], mag, seed_value ^ b as u64)?;
                opt.reset_entries(b, &entries);
                changed += stats.deactivated;
            }
            None => project_signs(&mut graph.blocks[b]),
        }
    }
    Ok(changed)
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown) {
    sum.task += l.task;
    sum.rate += l.rate;
    sum.voltage += l.voltage;
    sum.gtheta += l.gtheta;
    sum.total += l.total;
}

fn mean_loss(sum: LossBreakdown, n: usize) -> LossBreakdown {
    let d = n.max(1) as f64;
    LossBreakdown {
        task: sum.task / d,
        rate: sum.rate / d,
        voltage: sum.voltage / d,
        gtheta: sum.gtheta / d,
        total: sum.total / d,
    }
}

/// Accuracy and scaled-voltage range fraction over a labelled set.
fn score(graph: &NetworkGraph, samples: &[Sample], opts: &BpttOptions, batch: usize) -> Result<(f64, f64)> {
    let (mut correct, mut inside, mut all) = (0, 0, 0);
    for chunk in samples.chunks(batch.max(1)) {
        let r = evaluate(graph, chunk, opts)?;
        correct += r.correct;
        inside += r.in_range.0;
        all += r.in_range.1;
    }
    let acc = correct as f64 / samples.len().max(1) as f64;
    let range = if all == 0 { 1.0 } else { inside as f64 / all as f64 };
    Ok((acc, range))
}

/// Trains an sMNIST network built from `cfg.net` with BPTT. Labels index
/// readout neurons directly.
pub fn train_smnist(
    cfg: &SmnistTrainConfig,
    train: &[(Vec<u8>, u8)],
    test: &[(Vec<u8>, u8)],
    mut log: impl FnMut(&EpochReport),
) -> Result<(NetworkGraph, TrainReport)> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(invalid_param("training needs data and a positive batch size"));
    }
    let mut graph = build_smnist_network(&cfg.net, cfg.seed)?;
    let input = graph.populations.iter().find(|p| p.is_input()).map(|p| p.id).expect("sMNIST input");
    let to_samples = |set: Vec<(SpikeMatrix, usize)>| -> Vec<Sample> {
        set.into_iter()
            .map(|(m, y)| Sample { inputs: BTreeMap::from([(input, m)]), active: None, target: Target::Class(y) })
            .collect()
    };
    let train_set = to_samples(encode_set(train, &cfg.encoder, cfg.net.n_readout)?);
    let test_set = to_samples(encode_set(test, &cfg.encoder, cfg.net.n_readout)?);
    let steps = train_set[0].inputs[&input].steps;
    let opts = BpttOptions {
        steps,
        forward: Forward::Hard,
        surrogate: cfg.surrogate,
        loss: LossConfig { task: TaskLoss::CrossEntropy, ..cfg.loss },
        readout_scale: cfg.readout_scale,
        threads: cfg.threads,
    };
    let mut opt = Optimizer::new(cfg.optimizer)?;
    opt.clip_norm = cfg.clip_norm;
    let mut rng = seed::stream(cfg.seed, "smnist.shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let (mut correct, mut inside, mut all, mut batches) = (0, 0, 0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let r = gradients(&graph, &batch, &opts)?;
            accumulate(&mut sum, &r.loss);
            correct += r.correct;
            inside += r.in_range.0;
            all += r.in_range.1;
            batches += 1;
            let rewire = cfg.rewire.then_some(cfg.rewire_magnitude);
            report.rewired += apply_update(&mut graph, &mut opt, &r, rewire, rng.random())?;
        }
        let test_accuracy = if test_set.is_empty() {
            None
        } else {
            Some(score(&graph, &test_set, &opts, cfg.batch_size * 4)?.0)
        };
        let e = EpochReport {
            epoch,
            loss: mean_loss(sum, batches),
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
            in_range_fraction: if all == 0 { 1.0 } else { inside as f64 / all as f64 },
            seconds: start.elapsed().as_secs_f64(),
        };
        log(&e);
        report.epochs.push(e);
    }
    if !test_set.is_empty() {
        let (acc, range) = score(&graph, &test_set, &opts, cfg.batch_size * 4)?;
        report.test_accuracy = Some(acc);
        report.test_in_range_fraction = Some(range);
    }
    Ok((graph, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub surrogate: SurrogateParams,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            optimizer: OptimizerKind::adam(0.5),
            surrogate: SurrogateParams::default(),
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    /// Mean squared error per epoch, before the update of that epoch.
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Trains an LSNN with an auxiliary readout to reproduce a teacher signal,
/// then freezes the LSNN weights and removes the auxiliary readout.
///
/// `teacher[s]` is `[readout neuron][step]` for input `inputs[s]`.
pub fn pretrain_teacher_matching(
    graph: &mut NetworkGraph,
    inputs: &[SpikeMatrix],
    teacher: &[Vec<Vec<f64>>],
    cfg: &TeacherConfig,
) -> Result<TeacherReport> {
    if inputs.is_empty() || inputs.len() != teacher.len() {
        return Err(invalid_input("need one teacher signal per input"));
    }
    let input = graph
        .populations
        .iter()
        .find(|p| p.is_input())
        .map(|p| p.id)
        .ok_or_else(|| invalid_input("graph has no input population"))?;
    let readout = graph
        .populations
        .iter()
        .find(|p| p.is_readout())
        .ok_or_else(|| invalid_input("teacher matching needs an auxiliary readout"))?;
    let dim = readout.size as usize;
    let steps = inputs[0].steps;
    for t in teacher {
        if t.len() != dim || t.iter().any(|row| row.len() != steps as usize) {
            return Err(invalid_input(format!(
                "teacher signal must be {dim} x {steps}, got {} x {}",
                t.len(),
                t.first().map_or(0, |r| r.len())
            )));
        }
    }
    let samples: Vec<Sample> = inputs
        .iter()
        .zip(teacher)
        .map(|(m, t)| Sample { inputs: BTreeMap::from([(input, m.clone())]), active: None, target: Target::Teacher(t.clone()) })
        .collect();
    let opts = BpttOptions {
        steps,
        forward: Forward::Hard,
        surrogate: cfg.surrogate,
        loss: LossConfig { task: TaskLoss::MseTeacher, ..LossConfig::default() },
        readout_scale: 1.0,
        threads: cfg.threads,
    };
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut rng = seed::stream(cfg.seed, "teacher.shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TeacherReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let r = gradients(graph, &batch, &opts)?;
            sum += r.loss.task;
            n += 1;
            opt.step(graph, &r.gradients);
        }
        report.losses.push(sum / n as f64);
    }
    report.final_loss = evaluate(graph, &samples, &opts)?.loss.task;
    graph.retain_populations(|p| !p.is_readout());
    for b in &mut graph.blocks {
        b.frozen = true;
    }
    Ok(report)
}

/// Stories of `m` sentences `[entity, place]` with distinct entities. The
/// question names one entity; the answer is its place. Entities use word
/// ids `0..entities`, places `entities..entities + places`.
pub fn pair_matching_stories(m: u32, entities: u32, places: u32, count: usize, seed_value: u64) -> Result<Vec<Story>> {
    if m == 0 || entities < m || places == 0 {
        return Err(invalid_param("need at least m entities and one place"));
    }
    let mut rng = seed::stream(seed_value, "pair-matching");
    let mut out = Vec::with_capacity(count);
    let mut pool: Vec<u32> = (0..entities).collect();
    for _ in 0..count {
        pool.shuffle(&mut rng);
        let sentences: Vec<Vec<u32>> =
            pool[..m as usize].iter().map(|&e| vec![e, entities + rng.random_range(0..places)]).collect();
        let q = rng.random_range(0..m as usize);
        out.push(Story { question: vec![sentences[q][0]], answer: Some(sentences[q][1]), sentences });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelNetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    pub loss: LossConfig,
    pub surrogate: SurrogateParams,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RelNetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            optimizer: OptimizerKind::adam(0.05),
            clip_norm: None,
            loss: LossConfig { lambda_r: 1e-9, r_target: 300.0, lambda_v: 1.0, ..LossConfig::default() },
            surrogate: SurrogateParams::default(),
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelNetTrainReport {
    pub epochs: Vec<EpochReport>,
    pub eval_accuracy: f64,
    /// Mean hard spikes per g_θ neuron per story on the evaluation set.
    pub gtheta_spikes_per_neuron: f64,
    /// Mean summed g_θ rate per neuron index (Hz), averaged over layers.
    pub gtheta_summed_rate_hz: f64,
}

/// Feed-forward samples of a RelNet: the LSNN embeddings computed by the
/// simulator, clamped, with the answer as class target.
pub fn relnet_samples(graph: &NetworkGraph, stories: &[Story], threads: usize) -> Result<Vec<Sample>> {
    let ix = RelNetIndex::from_graph(graph)?;
    stories
        .iter()
        .map(|s| {
            let (emb, _) = relnet_embeddings(graph, s, Mode::Real, threads)?;
            let inputs = emb.into_iter().map(|(slot, m)| (ix.lsnn_for(slot), m)).collect();
            let n = s.sentences.len() as u32;
            let target = s.answer.map_or(Target::None, |a| Target::Class(a as usize));
            Ok(Sample { inputs, active: Some(feedforward_active(graph, &ix, n)), target })
        })
        .collect()
}

/// Trains the feed-forward part (g_θ, f_φ, readout) of a RelNet with the
/// LSNNs and relays frozen.
pub fn train_relnet_toy(
    graph: &mut NetworkGraph,
    train: &[Story],
    eval: &[Story],
    cfg: &RelNetTrainConfig,
    mut log: impl FnMut(&EpochReport),
) -> Result<RelNetTrainReport> {
    let rc = crate::sim::relnet_config(graph)?.clone();
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(invalid_param("training needs stories and a positive batch size"));
    }
    let roles: Vec<Role> = graph.populations.iter().map(|p| p.role).collect();
    for c in &graph.connections {
        let dst = &roles[c.dst];
        if !is_feedforward(dst) || matches!(dst, Role::Relay { .. }) {
            graph.blocks[c.block].frozen = true;
        }
    }
    let train_set = relnet_samples(graph, train, cfg.threads)?;
    let eval_set = relnet_samples(graph, eval, cfg.threads)?;
    let opts = BpttOptions {
        steps: rc.t_sim,
        forward: Forward::Hard,
        surrogate: cfg.surrogate,
        loss: LossConfig { task: TaskLoss::CrossEntropy, ..cfg.loss },
        readout_scale: rc.readout_scale,
        threads: cfg.threads,
    };
    let mut opt = Optimizer::new(cfg.optimizer)?;
    opt.clip_norm = cfg.clip_norm;
    let mut rng = seed::stream(cfg.seed, "relnet.shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = RelNetTrainReport::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let (mut correct, mut inside, mut all, mut batches) = (0, 0, 0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let r = gradients(graph, &batch, &opts)?;
            accumulate(&mut sum, &r.loss);
            correct += r.correct;
            inside += r.in_range.0;
            all += r.in_range.1;
            batches += 1;
            apply_update(graph, &mut opt, &r, None, 0)?;
        }
        let e = EpochReport {
            epoch,
            loss: mean_loss(sum, batches),
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy: None,
            in_range_fraction: if all == 0 { 1.0 } else { inside as f64 / all as f64 },
            seconds: start.elapsed().as_secs_f64(),
        };
        log(&e);
        report.epochs.push(e);
    }
    if !eval_set.is_empty() {
        let r = evaluate(graph, &eval_set, &opts)?;
        report.eval_accuracy = r.correct as f64 / eval_set.len() as f64;
        let (mut spikes, mut neurons) = (0u64, 0u64);
        let mut layers: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
        for s in &eval_set {
            for &p in s.active.as_deref().unwrap_or(&[]) {
                if let Role::Gtheta { layer, .. } = graph.populations[p].role {
                    neurons += graph.populations[p].size as u64;
                    layers.entry(layer).or_default().1 = graph.populations[p].size as u64;
                }
            }
        }
        for (&p, &n) in &r.spikes {
            if let Role::Gtheta { layer, .. } = graph.populations[p].role {
                spikes += n;
                layers.entry(layer).or_default().0 += n;
            }
        }
        report.gtheta_spikes_per_neuron = if neurons == 0 { 0.0 } else { spikes as f64 / neurons as f64 };
        let hz = 1000.0 / rc.t_sim as f64;
        let per_layer: Vec<f64> = layers
            .values()
            .filter(|(_, k)| *k > 0)
            .map(|(s, k)| *s as f64 / *k as f64 / eval_set.len() as f64 * hz)
            .collect();
        report.gtheta_summed_rate_hz = per_layer.iter().sum::<f64>() / per_layer.len().max(1) as f64;
    }
    Ok(report)
}

/// Slot of every clamped LSNN in a feed-forward sample.
pub fn clamped_slots(graph: &NetworkGraph, sample: &Sample) -> Vec<Slot> {
    sample
        .inputs
        .keys()
        .filter_map(|&p| match graph.populations[p].role {
            Role::Lsnn { slot } => Some(slot),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_lsnn, build_relnet, LsnnSpec, RelNetConfig};
    use crate::neuron::NeuronParams;

    #[test]
    fn pair_matching_answers_are_consistent() {
        let stories = pair_matching_stories(3, 5, 4, 50, 1).unwrap();
        for s in &stories {
            let q = s.question[0];
            let hit: Vec<_> = s.sentences.iter().filter(|x| x[0] == q).collect();
            assert_eq!(hit.len(), 1);
            assert_eq!(Some(hit[0][1]), s.answer);
            assert!((5..9).contains(&s.answer.unwrap()));
        }
        assert!(pair_matching_stories(4, 3, 2, 1, 0).is_err());
    }

    #[test]
    fn teacher_matching_lowers_error_and_drops_readout() {
        let spec = LsnnSpec {
            size: 16,
            inputs: 4,
            readout: 2,
            params: NeuronParams::lif_ahp(20.0, 5.0, 200.0, 4.0, 10.0, 1),
            readout_params: NeuronParams::readout(5.0, 20.0, 40),
            input_gain: 3.0,
            rec_gain: 1.0,
            out_gain: 1.0,
            ..LsnnSpec::default()
        };
        let mut g = build_lsnn(&spec, 2).unwrap();
        let inputs: Vec<SpikeMatrix> = (0..4)
            .map(|s| {
                let mut m = SpikeMatrix::new(4, 40);
                for t in 0..40 {
                    m.set((t + s) % 4, t);
                }
                m
            })
            .collect();
        let teacher: Vec<Vec<Vec<f64>>> =
            (0..4).map(|s| vec![vec![s as f64; 40], (0..40).map(|t| t as f64 / 10.0).collect()]).collect();
        let cfg = TeacherConfig { epochs: 30, batch_size: 4, optimizer: OptimizerKind::adam(0.05), ..TeacherConfig::default() };
        let r = pretrain_teacher_matching(&mut g, &inputs, &teacher, &cfg).unwrap();
        assert!(r.final_loss < r.losses[0], "{:?}", r);
        assert!(g.populations.iter().all(|p| !p.is_readout()));
        assert!(g.blocks.iter().all(|b| b.frozen));

        let mut g = build_lsnn(&spec, 2).unwrap();
        let wrong = vec![vec![vec![0.0; 40]; 3]; 4];
        assert!(matches!(
            pretrain_teacher_matching(&mut g, &inputs, &wrong, &cfg),
            Err(crate::Error::InvalidInput(_))
        ));
    }

    #[test]
    fn relnet_training_freezes_embedding_side() {
        let cfg = RelNetConfig::toy(2, 6);
        let mut g = build_relnet(&cfg, 3).unwrap();
        let stories = pair_matching_stories(2, 3, 3, 4, 0).unwrap();
        let before = g.clone();
        let tc = RelNetTrainConfig { epochs: 1, batch_size: 2, ..RelNetTrainConfig::default() };
        train_relnet_toy(&mut g, &stories, &stories, &tc, |_| {}).unwrap();
        for c in &g.connections {
            if matches!(g.populations[c.dst].role, Role::Lsnn { .. }) {
                assert!(g.blocks[c.block].frozen);
                assert_eq!(g.blocks[c.block].weights, before.blocks[c.block].weights);
            }
        }
        let sample = &relnet_samples(&g, &stories[..1], 0).unwrap()[0];
        assert_eq!(clamped_slots(&g, sample), vec![Slot::Sentence(0), Slot::Sentence(1), Slot::Question]);
    }
}
