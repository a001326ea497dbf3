//! Synchronous time-stepped simulation with delayed spike delivery.
//!
//! A spike emitted at step `t` over a synapse with delay `d` is added to the
//! target's PSC input in the update of step `t + d + 1`. Every step first
//! advances all simulated populations, then delivers the new spikes into
//! per-target ring buffers. Each target buffer is written by exactly one
//! worker in a fixed order, so results do not depend on the thread budget.

mod tasks;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::network::{BlockId, NetworkGraph, PopId};
use crate::neuron::fixed::{FixedReadoutState, FixedReadoutStep, FixedState, FixedStep};
use crate::neuron::{LifStep, NeuronKind, NeuronState, ReadoutState, ReadoutStep};
use crate::raster::{Event, Raster, SpikeMatrix};

pub use tasks::{
    answer_relnet, argmax, classify_smnist, feedforward_active, metrics, relnet_embeddings, relnet_feedforward, softmax, Metrics,
    RelNetAnswer, Story,
};

pub(crate) use tasks::relnet_config;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Real,
    /// Signed 24-bit integer state, integer weights.
    Fixed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub steps: u32,
    pub mode: Mode,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Populations to simulate. `None` simulates every population that is
    /// neither an input source nor clamped.
    pub active: Option<Vec<PopId>>,
    /// Neurons whose state is recorded every step.
    pub trace: Vec<(PopId, u32)>,
}

impl RunOptions {
    pub fn steps(steps: u32) -> Self {
        Self { steps, ..Self::default() }
    }
}

/// Per-step state of one traced neuron, recorded after the update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub pop: PopId,
    pub neuron: u32,
    pub i_psc: Vec<f64>,
    pub i_ahp: Vec<f64>,
    pub v_psc: Vec<f64>,
    pub v_ahp: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimOutput {
    pub raster: Raster,
    pub traces: Vec<Trace>,
    /// Final voltage of every simulated readout population.
    pub readout: BTreeMap<PopId, Vec<f64>>,
}

enum Dynamics {
    Real { steps: Vec<LifStep>, state: Vec<NeuronState>, buf: Vec<f64> },
    RealReadout { step: ReadoutStep, state: Vec<ReadoutState>, buf: Vec<f64> },
    Fixed { steps: Vec<FixedStep>, state: Vec<FixedState>, buf: Vec<i64> },
    FixedReadout { step: FixedReadoutStep, state: Vec<FixedReadoutState>, buf: Vec<i64> },
}

struct PopSim {
    id: PopId,
    size: usize,
    depth: usize,
    dynamics: Dynamics,
    incoming: Vec<(PopId, BlockId)>,
    spikes: Vec<u32>,
}

impl PopSim {
    fn advance(&mut self, t: u32, total: u32) {
        let slot = (t as usize % self.depth) * self.size;
        self.spikes.clear();
        match &mut self.dynamics {
            Dynamics::Real { steps, state, buf } => {
                for n in 0..self.size {
                    let x = std::mem::take(&mut buf[slot + n]);
                    if steps[n].advance(&mut state[n], x) {
                        self.spikes.push(n as u32);
                    }
                }
            }
            Dynamics::RealReadout { step, state, buf } => {
                for n in 0..self.size {
                    let x = std::mem::take(&mut buf[slot + n]);
                    step.advance(&mut state[n], x, t, total);
                }
            }
            Dynamics::Fixed { steps, state, buf } => {
                for n in 0..self.size {
                    let x = std::mem::take(&mut buf[slot + n]);
                    if steps[n].advance(&mut state[n], x) {
                        self.spikes.push(n as u32);
                    }
                }
            }
            Dynamics::FixedReadout { step, state, buf } => {
                for n in 0..self.size {
                    let x = std::mem::take(&mut buf[slot + n]);
                    step.advance(&mut state[n], x, t, total);
                }
            }
        }
    }

    fn deliver(&mut self, t: u32, spikes: &[Vec<u32>], graph: &NetworkGraph, qweights: &[Option<Vec<i64>>]) {
        let (depth, size) = (self.depth, self.size);
        for &(src, b) in &self.incoming {
            let block = &graph.blocks[b];
            for &i in &spikes[src] {
                for (k, j) in block.row_synapses(i) {
                    let slot = (t as usize + block.delays[k] as usize + 1) % depth;
                    let at = slot * size + j as usize;
                    match &mut self.dynamics {
                        Dynamics::Real { buf, .. } | Dynamics::RealReadout { buf, .. } => buf[at] += block.weights[k],
                        Dynamics::Fixed { buf, .. } | Dynamics::FixedReadout { buf, .. } => {
                            buf[at] += qweights[b].as_ref().expect("quantized block")[k]
                        }
                    }
                }
            }
        }
    }

    fn record(&self, neuron: u32, tr: &mut Trace) {
        let n = neuron as usize;
        let (i, a, p, q) = match &self.dynamics {
            Dynamics::Real { state, .. } => {
                let s = state[n];
                (s.i_psc, s.i_ahp, s.v_psc, s.v_ahp)
            }
            Dynamics::RealReadout { state, .. } => (state[n].i_psc, 0.0, state[n].v, 0.0),
            Dynamics::Fixed { state, .. } => {
                let s = state[n];
                (s.i_psc as f64, s.i_ahp as f64, s.v_psc as f64, s.v_ahp as f64)
            }
            Dynamics::FixedReadout { state, .. } => (state[n].i_psc as f64, 0.0, state[n].v as f64, 0.0),
        };
        tr.i_psc.push(i);
        tr.i_ahp.push(a);
        tr.v_psc.push(p);
        tr.v_ahp.push(q);
    }

    fn readout_voltage(&self) -> Option<Vec<f64>> {
        match &self.dynamics {
            Dynamics::RealReadout { state, .. } => Some(state.iter().map(|s| s.v).collect()),
            Dynamics::FixedReadout { state, .. } => Some(state.iter().map(|s| s.v as f64).collect()),
            _ => None,
        }
    }
}

/// Populations simulated by a run with the given clamps.
pub fn active_set(graph: &NetworkGraph, inputs: &BTreeMap<PopId, SpikeMatrix>, active: Option<&[PopId]>) -> Vec<PopId> {
    let mut v: Vec<PopId> = match active {
        Some(a) => a.iter().copied().filter(|p| !inputs.contains_key(p)).collect(),
        None => graph
            .populations
            .iter()
            .filter(|p| !p.is_input() && !inputs.contains_key(&p.id))
            .map(|p| p.id)
            .collect(),
    };
    v.sort_unstable();
    v.dedup();
    v
}

fn build_pop(graph: &NetworkGraph, id: PopId, mode: Mode, depth: usize, incoming: Vec<(PopId, BlockId)>) -> Result<PopSim> {
    let p = &graph.populations[id];
    let size = p.size as usize;
    let dynamics = match (p.params.kind, mode) {
        (NeuronKind::InputSource, _) => {
            return Err(invalid_input(format!("input population {} has no spike train", p.name)));
        }
        (NeuronKind::Readout, Mode::Real) => Dynamics::RealReadout {
            step: ReadoutStep::new(&p.params)?,
            state: vec![ReadoutState::default(); size],
            buf: vec![0.0; depth * size],
        },
        (NeuronKind::Readout, Mode::Fixed) => Dynamics::FixedReadout {
            step: FixedReadoutStep::new(&p.params)?,
            state: vec![FixedReadoutState::default(); size],
            buf: vec![0; depth * size],
        },
        (_, Mode::Real) => {
            let with = LifStep::new(&p.params)?;
            let without = LifStep::new(&p.params.without_ahp())?;
            let steps = (0..p.size).map(|n| if p.has_ahp(n) { with } else { without }).collect();
            Dynamics::Real { steps, state: vec![NeuronState::default(); size], buf: vec![0.0; depth * size] }
        }
        (_, Mode::Fixed) => {
            let with = FixedStep::new(&p.params)?;
            let without = FixedStep::new(&p.params.without_ahp())?;
            let steps = (0..p.size).map(|n| if p.has_ahp(n) { with } else { without }).collect();
            Dynamics::Fixed { steps, state: vec![FixedState::default(); size], buf: vec![0; depth * size] }
        }
    };
    Ok(PopSim { id, size, depth, dynamics, incoming, spikes: Vec::new() })
}

/// Runs `graph` for `opts.steps` steps with the given populations clamped
/// to fixed spike trains.
pub fn run(graph: &NetworkGraph, inputs: &BTreeMap<PopId, SpikeMatrix>, opts: &RunOptions) -> Result<SimOutput> {
    for (&pop, m) in inputs {
        let p = graph.populations.get(pop).ok_or_else(|| invalid_input(format!("clamp on missing population {pop}")))?;
        if m.neurons != p.size || m.steps < opts.steps {
            return Err(invalid_input(format!(
                "spike train for {} is {}x{}, need {}x{}",
                p.name, m.neurons, m.steps, p.size, opts.steps
            )));
        }
    }
    let active = active_set(graph, inputs, opts.active.as_deref());
    let is_active = {
        let mut v = vec![false; graph.populations.len()];
        for &a in &active {
            v[a] = true;
        }
        v
    };
    for c in &graph.connections {
        let src = &graph.populations[c.src];
        if is_active[c.dst] && src.is_input() && !inputs.contains_key(&c.src) {
            return Err(invalid_input(format!("input population {} is not covered", src.name)));
        }
    }
    let depth = graph.max_delay() as usize + 2;
    let mut qweights: Vec<Option<Vec<i64>>> = vec![None; graph.blocks.len()];
    let mut pops = Vec::with_capacity(active.len());
    for &id in &active {
        let incoming: Vec<(PopId, BlockId)> = graph
            .incoming(id)
            .filter(|c| is_active[c.src] || inputs.contains_key(&c.src))
            .map(|c| (c.src, c.block))
            .collect();
        if opts.mode == Mode::Fixed {
            for &(_, b) in &incoming {
                qweights[b].get_or_insert_with(|| graph.blocks[b].weights.iter().map(|w| w.round() as i64).collect());
            }
        }
        pops.push(build_pop(graph, id, opts.mode, depth, incoming)?);
    }
    let slot_of: BTreeMap<PopId, usize> = active.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let mut traces: Vec<(usize, Trace)> = Vec::new();
    for &(pop, neuron) in &opts.trace {
        let Some(&k) = slot_of.get(&pop) else {
            return Err(invalid_input(format!("traced population {pop} is not simulated")));
        };
        if neuron >= graph.populations[pop].size {
            return Err(invalid_input(format!("traced neuron {neuron} outside population {pop}")));
        }
        traces.push((k, Trace { pop, neuron, ..Trace::default() }));
    }

    let mut body = || {
        let mut spikes: Vec<Vec<u32>> = vec![Vec::new(); graph.populations.len()];
        let mut events = Vec::new();
        for t in 0..opts.steps {
            pops.par_iter_mut().for_each(|p| p.advance(t, opts.steps));
            for p in &pops {
                spikes[p.id].clone_from(&p.spikes);
            }
            for (&id, m) in inputs {
                spikes[id].clear();
                spikes[id].extend_from_slice(m.at(t));
            }
            for (pop, list) in spikes.iter().enumerate() {
                events.extend(list.iter().map(|&neuron| Event { step: t, pop, neuron }));
            }
            for (k, tr) in traces.iter_mut() {
                pops[*k].record(tr.neuron, tr);
            }
            if t + 1 < opts.steps {
                pops.par_iter_mut().for_each(|p| p.deliver(t, &spikes, graph, &qweights));
            }
        }
        events
    };
    let events = if opts.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| invalid_input(format!("thread pool: {e}")))?;
        pool.install(body)
    } else {
        body()
    };
    let readout = pops.iter().filter_map(|p| p.readout_voltage().map(|v| (p.id, v))).collect();
    Ok(SimOutput {
        raster: Raster::new(opts.steps, events, active),
        traces: traces.into_iter().map(|(_, t)| t).collect(),
        readout,
    })
}
