use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run, Mode, RunOptions, SimOutput};
use crate::encode::{encode_sentence, extract_embedding, WordEncoderConfig};
use crate::error::{invalid_input, Result};
use crate::network::{GraphKind, NetworkGraph, PopId, RelNetConfig, RelNetIndex, Role, Slot};
use crate::raster::{Raster, SpikeMatrix};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn readout_pop(graph: &NetworkGraph) -> Result<PopId> {
    graph
        .populations
        .iter()
        .find(|p| p.role == Role::Readout)
        .map(|p| p.id)
        .ok_or_else(|| invalid_input("graph has no readout population"))
}

/// Predicted class and final readout voltages for one encoded sample.
pub fn classify_smnist(graph: &NetworkGraph, encoded: &SpikeMatrix, mode: Mode) -> Result<(usize, Vec<f64>)> {
    let input = graph
        .populations
        .iter()
        .find(|p| p.is_input())
        .ok_or_else(|| invalid_input("graph has no input population"))?
        .id;
    let readout = readout_pop(graph)?;
    let opts = RunOptions { steps: encoded.steps, mode, ..RunOptions::default() };
    let out = run(graph, &BTreeMap::from([(input, encoded.clone())]), &opts)?;
    let v = out.readout[&readout].clone();
    Ok((argmax(&v), v))
}

/// A story as word ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub sentences: Vec<Vec<u32>>,
    pub question: Vec<u32>,
    #[serde(default)]
    pub answer: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelNetAnswer {
    pub word: u32,
    pub probabilities: Vec<f64>,
    pub instances_evaluated: usize,
    /// Input and LSNN activity of the embedding phase.
    pub embedding: Raster,
    /// Feed-forward phase with the LSNNs replaying their embeddings.
    pub feedforward: Raster,
}

pub(crate) fn relnet_config(graph: &NetworkGraph) -> Result<&RelNetConfig> {
    match &graph.kind {
        GraphKind::Relnet { config } => Ok(config),
        _ => Err(invalid_input("graph was not built as a RelNet")),
    }
}

/// Embedding phase: runs the used LSNNs on their word inputs and returns the
/// padded embedding of each slot plus the phase raster.
pub fn relnet_embeddings(
    graph: &NetworkGraph,
    story: &Story,
    mode: Mode,
    threads: usize,
) -> Result<(BTreeMap<Slot, SpikeMatrix>, Raster)> {
    let cfg = relnet_config(graph)?;
    let ix = RelNetIndex::from_graph(graph)?;
    let n = story.sentences.len();
    if n == 0 || n > cfg.m as usize {
        return Err(invalid_input(format!("story has {n} sentences, network takes 1..={}", cfg.m)));
    }
    let enc = WordEncoderConfig { t_word: cfg.t_word, n_words: cfg.n_words, vocab: cfg.vocab, ..WordEncoderConfig::new(cfg.vocab) };
    let mut inputs = BTreeMap::new();
    let mut active = Vec::new();
    let mut slots = Vec::new();
    for (i, s) in story.sentences.iter().enumerate() {
        inputs.insert(ix.sentence_inputs[i], encode_sentence(s, &enc)?);
        active.push(ix.sentence_lsnn[i]);
        slots.push(Slot::Sentence(i as u32));
    }
    inputs.insert(ix.question_input, encode_sentence(&story.question, &enc)?);
    active.push(ix.question_lsnn);
    slots.push(Slot::Question);
    let opts = RunOptions { steps: enc.steps(), mode, threads, active: Some(active), trace: Vec::new() };
    let out = run(graph, &inputs, &opts)?;
    let mut emb = BTreeMap::new();
    for slot in slots {
        let pop = ix.lsnn_for(slot);
        let m = out.raster.population(pop, graph.populations[pop].size);
        emb.insert(slot, extract_embedding(&m, cfg.t_inp, cfg.t_sim)?);
    }
    Ok((emb, out.raster))
}

/// Populations simulated in the feed-forward phase of an `n`-sentence story.
pub fn feedforward_active(graph: &NetworkGraph, ix: &RelNetIndex, n: u32) -> Vec<PopId> {
    let mut active = Vec::new();
    for (i, j, layers) in &ix.instances {
        if *i < n && *j < n {
            active.extend(layers);
        }
    }
    for &(relay, source, _) in &ix.relays {
        let used = match graph.populations[source].role {
            Role::Lsnn { slot: Slot::Sentence(i) } => i < n,
            _ => true,
        };
        if used {
            active.push(relay);
        }
    }
    active.push(ix.aggregation);
    active.extend(&ix.fphi);
    active.push(ix.readout);
    active.sort_unstable();
    active
}

/// Feed-forward phase: LSNNs replay their embeddings for T_sim steps.
pub fn relnet_feedforward(
    graph: &NetworkGraph,
    embeddings: &BTreeMap<Slot, SpikeMatrix>,
    mode: Mode,
    threads: usize,
) -> Result<SimOutput> {
    let cfg = relnet_config(graph)?;
    let ix = RelNetIndex::from_graph(graph)?;
    let n = embeddings.keys().filter(|s| matches!(s, Slot::Sentence(_))).count() as u32;
    let inputs: BTreeMap<PopId, SpikeMatrix> = embeddings.iter().map(|(s, m)| (ix.lsnn_for(*s), m.clone())).collect();
    let opts = RunOptions {
        steps: cfg.t_sim,
        mode,
        threads,
        active: Some(feedforward_active(graph, &ix, n)),
        trace: Vec::new(),
    };
    run(graph, &inputs, &opts)
}

/// Staged RelNet evaluation: embedding, feed-forward phase, windowed
/// readout, softmax.
pub fn answer_relnet(graph: &NetworkGraph, story: &Story, mode: Mode, threads: usize) -> Result<RelNetAnswer> {
    let cfg = relnet_config(graph)?;
    let (emb, embedding) = relnet_embeddings(graph, story, mode, threads)?;
    let ff = relnet_feedforward(graph, &emb, mode, threads)?;
    let ix = RelNetIndex::from_graph(graph)?;
    let v = &ff.readout[&ix.readout];
    let scaled: Vec<f64> = v.iter().map(|x| cfg.readout_scale * x).collect();
    let probabilities = softmax(&scaled);
    let n = story.sentences.len();
    Ok(RelNetAnswer {
        word: argmax(&probabilities) as u32,
        probabilities,
        instances_evaluated: n * (n + 1) / 2,
        embedding,
        feedforward: ff.raster,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: u32,
    pub total_spikes: u64,
    /// Per simulated population, spike count of each neuron.
    pub counts: BTreeMap<PopId, Vec<u64>>,
    /// Per simulated population, rate of each neuron in Hz (1 step = 1 ms).
    pub rates_hz: BTreeMap<PopId, Vec<f64>>,
    /// Mean spikes per neuron over the simulated populations of each role.
    pub spikes_per_neuron: BTreeMap<String, f64>,
}

pub fn metrics(raster: &Raster, graph: &NetworkGraph) -> Metrics {
    let mut m = Metrics { steps: raster.steps, ..Metrics::default() };
    for &p in &raster.active {
        m.counts.insert(p, vec![0; graph.populations[p].size as usize]);
    }
    for e in &raster.events {
        if let Some(c) = m.counts.get_mut(&e.pop) {
            c[e.neuron as usize] += 1;
            m.total_spikes += 1;
        }
    }
    let to_hz = if raster.steps == 0 { 0.0 } else { 1000.0 / raster.steps as f64 };
    let mut groups: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (&p, c) in &m.counts {
        m.rates_hz.insert(p, c.iter().map(|&x| x as f64 * to_hz).collect());
        let key = graph.populations[p].role.key();
        let g = groups.entry(key.to_string()).or_default();
        g.0 += c.iter().sum::<u64>();
        g.1 += c.len() as u64;
    }
    for (k, (spikes, neurons)) in groups {
        m.spikes_per_neuron.insert(k, if neurons == 0 { 0.0 } else { spikes as f64 / neurons as f64 });
    }
    m
}
