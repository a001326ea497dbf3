//! Forward pass with a tape, batch-global losses and the backward pass.
//!
//! The forward pass mirrors [`crate::sim::run`] step for step, including the
//! order in which synaptic input is accumulated, so a hard forward pass
//! reproduces the simulator raster bit for bit. In relaxed mode the emitted
//! value is `ramp(vs)` instead of the hard spike; the hard spike still
//! drives reset and refractoriness, which are treated as constants.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pseudo_derivative, ramp, voltage_penalty, voltage_penalty_grad, LossConfig, SurrogateParams, TaskLoss};
use super::{VS_HIGH, VS_LOW};
use crate::error::{invalid_input, Result};
use crate::network::{BlockId, NetworkGraph, PopId, Role};
use crate::neuron::{LifStep, NeuronKind, ReadoutStep};
use crate::raster::SpikeMatrix;
use crate::sim::{active_set, argmax, softmax};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forward {
    /// Binary spikes, surrogate derivative in the backward pass.
    #[default]
    Hard,
    /// Neurons emit `ramp(vs)`; the backward pass is then the exact
    /// gradient of the forward computation.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    /// `[readout neuron][step]`
    Teacher(Vec<Vec<f64>>),
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: BTreeMap<PopId, SpikeMatrix>,
    /// Populations to simulate; `None` simulates every non-input,
    /// non-clamped population.
    pub active: Option<Vec<PopId>>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpttOptions {
    pub steps: u32,
    pub forward: Forward,
    pub surrogate: SurrogateParams,
    pub loss: LossConfig,
    /// Multiplies the final readout voltage before the softmax.
    pub readout_scale: f64,
    /// Worker threads for the per-sample passes; 0 uses the global pool.
    pub threads: usize,
}

impl BpttOptions {
    pub fn new(steps: u32) -> Self {
        Self {
            steps,
            forward: Forward::Hard,
            surrogate: SurrogateParams::default(),
            loss: LossConfig::default(),
            readout_scale: 1.0,
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub rate: f64,
    pub voltage: f64,
    pub gtheta: f64,
    pub total: f64,
}

/// Per-block weight gradients; `None` for frozen or unused blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.blocks.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.blocks.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchResult {
    pub loss: LossBreakdown,
    pub gradients: Gradients,
    /// Samples whose argmax readout matches a class target.
    pub correct: usize,
    /// Non-refractory regularized neuron steps with the scaled voltage in
    /// `[-2, 0.4]`, and all such steps.
    pub in_range: (u64, u64),
    /// Hard spikes summed over the batch, per population.
    pub spikes: BTreeMap<PopId, u64>,
    /// Final readout voltages per sample.
    pub outputs: Vec<Vec<f64>>,
}

impl BatchResult {
    pub fn in_range_fraction(&self) -> f64 {
        if self.in_range.1 == 0 {
            1.0
        } else {
            self.in_range.0 as f64 / self.in_range.1 as f64
        }
    }
}

struct SpikingTape {
    steps: Vec<LifStep>,
    b0: f64,
    inv_g: f64,
    i: Vec<f64>,
    a: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
    s: Vec<bool>,
    refr: Vec<bool>,
}

struct ReadoutTape {
    step: ReadoutStep,
    i: Vec<f64>,
    v: Vec<f64>,
    en: Vec<bool>,
}

enum Node {
    Spiking(SpikingTape),
    Readout(ReadoutTape),
}

struct PopTape {
    id: PopId,
    size: usize,
    role: Role,
    node: Node,
}

/// Connection into an active population.
struct Edge {
    src: PopId,
    dst: usize,
    block: BlockId,
}

struct Tape<'a> {
    steps: usize,
    pops: Vec<PopTape>,
    /// Index into `pops` by population id.
    slot: Vec<Option<usize>>,
    clamps: &'a BTreeMap<PopId, SpikeMatrix>,
    edges: Vec<Edge>,
}

impl Tape<'_> {
    fn readout(&self) -> Option<&PopTape> {
        self.pops.iter().find(|p| matches!(p.node, Node::Readout(_)))
    }

    fn final_readout(&self) -> Vec<f64> {
        match self.readout() {
            Some(PopTape { size, node: Node::Readout(r), .. }) => r.v[(self.steps - 1) * size..].to_vec(),
            _ => Vec::new(),
        }
    }
}

fn regularized(p: &PopTape) -> bool {
    matches!(p.node, Node::Spiking(_)) && !matches!(p.role, Role::Relay { .. })
}

fn rate_regularized(p: &PopTape, loss: &LossConfig) -> bool {
    regularized(p) && !(loss.lambda_r > 0.0 && matches!(p.role, Role::Gtheta { .. }))
}

fn gtheta_layer(p: &PopTape) -> Option<u8> {
    match p.role {
        Role::Gtheta { layer, .. } if regularized(p) => Some(layer),
        _ => None,
    }
}

fn forward<'a>(graph: &NetworkGraph, sample: &'a Sample, opts: &BpttOptions) -> Result<Tape<'a>> {
    let t_total = opts.steps as usize;
    if t_total == 0 {
        return Err(invalid_input("training needs at least one step"));
    }
    for (&pop, m) in &sample.inputs {
        let p = graph.populations.get(pop).ok_or_else(|| invalid_input(format!("clamp on missing population {pop}")))?;
        if m.neurons != p.size || m.steps < opts.steps {
            return Err(invalid_input(format!("spike train for {} has the wrong shape", p.name)));
        }
    }
    let active = active_set(graph, &sample.inputs, sample.active.as_deref());
    let mut slot = vec![None; graph.populations.len()];
    let mut pops = Vec::with_capacity(active.len());
    for &id in &active {
        let p = &graph.populations[id];
        let size = p.size as usize;
        let len = size * t_total;
        let node = match p.params.kind {
            NeuronKind::InputSource => {
                return Err(invalid_input(format!("input population {} has no spike train", p.name)));
            }
            NeuronKind::Readout => Node::Readout(ReadoutTape {
                step: ReadoutStep::new(&p.params)?,
                i: vec![0.0; len],
                v: vec![0.0; len],
                en: vec![false; t_total],
            }),
            _ => {
                let with = LifStep::new(&p.params)?;
                let without = LifStep::new(&p.params.without_ahp())?;
                Node::Spiking(SpikingTape {
                    steps: (0..p.size).map(|n| if p.has_ahp(n) { with } else { without }).collect(),
                    b0: p.params.b0,
                    inv_g: with.inv_g,
                    i: vec![0.0; len],
                    a: vec![0.0; len],
                    p: vec![0.0; len],
                    q: vec![0.0; len],
                    z: vec![0.0; len],
                    s: vec![false; len],
                    refr: vec![false; len],
                })
            }
        };
        slot[id] = Some(pops.len());
        pops.push(PopTape { id, size, role: p.role, node });
    }
    let mut edges = Vec::new();
    for &id in &active {
        for c in graph.incoming(id) {
            let src_spiking = slot[c.src].is_some_and(|k| matches!(pops[k].node, Node::Spiking(_)));
            if src_spiking || sample.inputs.contains_key(&c.src) {
                edges.push(Edge { src: c.src, dst: slot[id].unwrap(), block: c.block });
            } else if graph.populations[c.src].is_input() {
                return Err(invalid_input(format!("input population {} is not covered", graph.populations[c.src].name)));
            }
        }
    }

    let mut x: Vec<Vec<f64>> = pops.iter().map(|p| vec![0.0; p.size * t_total]).collect();
    let mut state: Vec<Vec<(f64, f64, f64, f64, u32, f64)>> =
        pops.iter().map(|p| vec![(0.0, 0.0, 0.0, 0.0, 0, 0.0); p.size]).collect();
    for t in 0..t_total {
        for (k, pt) in pops.iter_mut().enumerate() {
            let base = t * pt.size;
            match &mut pt.node {
                Node::Spiking(tp) => {
                    for n in 0..pt.size {
                        let st = &tp.steps[n];
                        let (ref mut i, ref mut a, ref mut p, ref mut q, ref mut refr, ref mut zprev) = state[k][n];
                        let d = st.decays;
                        *i = d.i * *i + x[k][base + n];
                        *a = d.ahp * *a - st.beta * *zprev;
                        let at = base + n;
                        tp.i[at] = *i;
                        tp.a[at] = *a;
                        if *refr > 0 {
                            *refr -= 1;
                            *p = 0.0;
                            *q = 0.0;
                            tp.refr[at] = true;
                            *zprev = 0.0;
                            continue;
                        }
                        *p = d.v * *p + st.inv_g * *i;
                        *q = d.v * *q + st.inv_g * *a;
                        tp.p[at] = *p;
                        tp.q[at] = *q;
                        let spike = *p + *q > st.b0;
                        let z = match opts.forward {
                            Forward::Hard => {
                                if spike {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Forward::Relaxed => ramp(scaled(*p, *q, st.b0), &opts.surrogate),
                        };
                        tp.z[at] = z;
                        tp.s[at] = spike;
                        *zprev = z;
                        if spike {
                            *p = 0.0;
                            *q = 0.0;
                            *refr = st.refractory;
                        }
                    }
                }
                Node::Readout(r) => {
                    let en = r.step.enabled(t as u32, opts.steps);
                    r.en[t] = en;
                    for n in 0..pt.size {
                        let (ref mut i, _, ref mut v, ..) = state[k][n];
                        *i = r.step.alpha_i * *i + x[k][base + n];
                        if en {
                            *v = r.step.alpha_v * *v + *i;
                        }
                        r.i[base + n] = *i;
                        r.v[base + n] = *v;
                    }
                }
            }
        }
        if t + 1 < t_total {
            for e in &edges {
                let block = &graph.blocks[e.block];
                let dsize = pops[e.dst].size;
                let xd = &mut x[e.dst];
                let mut push = |row: u32, z: f64| {
                    for (k, j) in block.row_synapses(row) {
                        let tt = t + block.delays[k] as usize + 1;
                        if tt < t_total {
                            xd[tt * dsize + j as usize] += block.weights[k] * z;
                        }
                    }
                };
                if let Some(m) = sample.inputs.get(&e.src) {
                    for &row in m.at(t as u32) {
                        push(row, 1.0);
                    }
                } else if let Node::Spiking(sp) = &pops[slot[e.src].unwrap()].node {
                    let size = graph.populations[e.src].size as usize;
                    for row in 0..size {
                        let z = sp.z[t * size + row];
                        if z != 0.0 {
                            push(row as u32, z);
                        }
                    }
                }
            }
        }
    }
    Ok(Tape { steps: t_total, pops, slot, clamps: &sample.inputs, edges })
}

#[inline]
fn scaled(p: f64, q: f64, b0: f64) -> f64 {
    (p + q - b0) / (b0 - q)
}

/// Batch-global quantities the per-sample backward passes need.
#[derive(Default)]
struct Coefficients {
    /// dL/dz per neuron for the rate loss, by population.
    rate: BTreeMap<PopId, Vec<f64>>,
    /// dL/dz per neuron for the g_θ loss, by layer.
    gtheta: BTreeMap<u8, Vec<f64>>,
    /// Multiplies the voltage-penalty derivative.
    voltage: f64,
    /// Task-loss normalizer (samples carrying a target).
    task_norm: f64,
}

fn spike_sums(p: &PopTape, steps: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.size];
    if let Node::Spiking(tp) = &p.node {
        for t in 0..steps {
            for (n, o) in out.iter_mut().enumerate() {
                *o += tp.z[t * p.size + n];
            }
        }
    }
    out
}

fn batch_losses(tapes: &[Tape], samples: &[Sample], opts: &BpttOptions) -> (LossBreakdown, Coefficients) {
    let loss = &opts.loss;
    let hz = 1000.0 / opts.steps as f64;
    let mut co = Coefficients::default();
    let mut out = LossBreakdown::default();

    // rate loss over the mean rate of each neuron across the samples that
    // simulate its population
    let mut rate_sum: BTreeMap<PopId, (Vec<f64>, f64)> = BTreeMap::new();
    let mut layer_sum: BTreeMap<u8, (Vec<f64>, f64)> = BTreeMap::new();
    let (mut pen_sum, mut pen_n) = (0.0, 0u64);
    for tape in tapes {
        let mut per_layer: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for p in &tape.pops {
            if loss.lambda_rho > 0.0 && rate_regularized(p, loss) {
                let e = rate_sum.entry(p.id).or_insert_with(|| (vec![0.0; p.size], 0.0));
                for (acc, s) in e.0.iter_mut().zip(spike_sums(p, tape.steps)) {
                    *acc += s * hz;
                }
                e.1 += 1.0;
            }
            if loss.lambda_r > 0.0 {
                if let Some(layer) = gtheta_layer(p) {
                    let acc = per_layer.entry(layer).or_insert_with(|| vec![0.0; p.size]);
                    for (a, s) in acc.iter_mut().zip(spike_sums(p, tape.steps)) {
                        *a += s * hz;
                    }
                }
            }
            if loss.lambda_v > 0.0 && regularized(p) {
                if let Node::Spiking(tp) = &p.node {
                    for at in 0..tp.z.len() {
                        if !tp.refr[at] {
                            pen_sum += voltage_penalty(scaled(tp.p[at], tp.q[at], tp.b0));
                            pen_n += 1;
                        }
                    }
                }
            }
        }
        for (layer, r) in per_layer {
            let e = layer_sum.entry(layer).or_insert_with(|| (vec![0.0; r.len()], 0.0));
            for (a, x) in e.0.iter_mut().zip(r) {
                *a += x;
            }
            e.1 += 1.0;
        }
    }
    if loss.lambda_rho > 0.0 {
        let s: f64 = rate_sum
            .values()
            .flat_map(|(v, b)| v.iter().map(move |x| (x / b - loss.rho_target).powi(2)))
            .sum();
        out.rate = loss.lambda_rho * s * s;
        for (&pop, (v, b)) in &rate_sum {
            let c = v.iter().map(|x| 4.0 * loss.lambda_rho * s * (x / b - loss.rho_target) * hz / b).collect();
            co.rate.insert(pop, c);
        }
    }
    if loss.lambda_r > 0.0 {
        for (&layer, (v, b)) in &layer_sum {
            let k = v.len() as f64;
            let d = v.iter().map(|x| (x / b - loss.r_target).powi(2)).sum::<f64>() / k;
            out.gtheta += loss.lambda_r * d * d;
            let c = v.iter().map(|x| 4.0 * loss.lambda_r * d * (x / b - loss.r_target) / k * hz / b).collect();
            co.gtheta.insert(layer, c);
        }
    }
    if loss.lambda_v > 0.0 && pen_n > 0 {
        let mean = pen_sum / pen_n as f64;
        out.voltage = loss.lambda_v * mean * mean;
        co.voltage = 2.0 * loss.lambda_v * mean / pen_n as f64;
    }

    let with_target = samples.iter().filter(|s| !matches!(s.target, Target::None)).count();
    co.task_norm = if with_target > 0 { 1.0 / with_target as f64 } else { 0.0 };
    for (tape, s) in tapes.iter().zip(samples) {
        out.task += co.task_norm * sample_task_loss(tape, &s.target, opts);
    }
    out.total = out.task + out.rate + out.voltage + out.gtheta;
    (out, co)
}

fn sample_task_loss(tape: &Tape, target: &Target, opts: &BpttOptions) -> f64 {
    match (opts.loss.task, target) {
        (TaskLoss::CrossEntropy, Target::Class(y)) => {
            let v = tape.final_readout();
            let logits: Vec<f64> = v.iter().map(|x| opts.readout_scale * x).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            lse - logits[*y]
        }
        (TaskLoss::MseTeacher, Target::Teacher(teacher)) => {
            let Some(PopTape { size, node: Node::Readout(r), .. }) = tape.readout() else {
                return 0.0;
            };
            let mut s = 0.0;
            for t in 0..tape.steps {
                for d in 0..*size {
                    s += (r.v[t * size + d] - teacher[d][t]).powi(2);
                }
            }
            s / (*size * tape.steps) as f64
        }
        _ => 0.0,
    }
}

fn check_targets(graph: &NetworkGraph, samples: &[Sample], opts: &BpttOptions) -> Result<()> {
    for s in samples {
        let readout = s
            .active
            .as_ref()
            .map_or_else(
                || graph.populations.iter().find(|p| p.is_readout()),
                |a| a.iter().map(|&id| &graph.populations[id]).find(|p| p.is_readout()),
            )
            .map(|p| p.size as usize);
        match (&s.target, readout) {
            (Target::None, _) => {}
            (_, None) => return Err(invalid_input("sample has a target but no readout population is simulated")),
            (Target::Class(y), Some(n)) if *y >= n => {
                return Err(invalid_input(format!("class {y} outside readout of {n} neurons")));
            }
            (Target::Teacher(t), Some(n))
                if (t.len() != n || t.iter().any(|row| row.len() < opts.steps as usize)) => {
                    return Err(invalid_input(format!(
                        "teacher signal must be {n} x {} to match the readout",
                        opts.steps
                    )));
                }
            _ => {}
        }
    }
    Ok(())
}

fn backward(graph: &NetworkGraph, tape: &Tape, target: &Target, co: &Coefficients, opts: &BpttOptions) -> Vec<Option<Vec<f64>>> {
    let steps = tape.steps;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; graph.blocks.len()];
    for e in &tape.edges {
        let b = &graph.blocks[e.block];
        if !b.frozen {
            grads[e.block].get_or_insert_with(|| vec![0.0; b.len()]);
        }
    }
    let mut g_i: Vec<Vec<f64>> = tape.pops.iter().map(|p| vec![0.0; p.size * steps]).collect();
    let mut g_a: Vec<Vec<f64>> = tape.pops.iter().map(|p| vec![0.0; p.size]).collect();
    let mut g_p: Vec<Vec<f64>> = g_a.clone();
    let mut g_q: Vec<Vec<f64>> = g_a.clone();
    let mut g_v: Vec<Vec<f64>> = g_a.clone();
    let mut g_z: Vec<Vec<f64>> = g_a.clone();

    // task loss derivative with respect to the readout voltage
    let mut final_coef = None;
    if let (TaskLoss::CrossEntropy, Target::Class(y)) = (opts.loss.task, target) {
        let v = tape.final_readout();
        let logits: Vec<f64> = v.iter().map(|x| opts.readout_scale * x).collect();
        let mut p = softmax(&logits);
        p[*y] -= 1.0;
        final_coef = Some(p.into_iter().map(|x| x * opts.readout_scale * co.task_norm).collect::<Vec<_>>());
    }
    let teacher = match (opts.loss.task, target) {
        (TaskLoss::MseTeacher, Target::Teacher(t)) => Some(t),
        _ => None,
    };

    for t in (0..steps).rev() {
        for (k, p) in tape.pops.iter().enumerate() {
            if !matches!(p.node, Node::Spiking(_)) {
                continue;
            }
            let gz = &mut g_z[k];
            gz.fill(0.0);
            if let Some(c) = co.rate.get(&p.id) {
                gz.iter_mut().zip(c).for_each(|(g, c)| *g += c);
            }
            if let Some(c) = gtheta_layer(p).and_then(|l| co.gtheta.get(&l)) {
                gz.iter_mut().zip(c).for_each(|(g, c)| *g += c);
            }
            if let Node::Spiking(tp) = &p.node {
                for n in 0..p.size {
                    gz[n] -= tp.steps[n].beta * g_a[k][n];
                }
            }
        }
        for e in &tape.edges {
            let block = &graph.blocks[e.block];
            let dsize = tape.pops[e.dst].size;
            let gid = &g_i[e.dst];
            let mut gw = grads[e.block].take();
            if let Some(m) = tape.clamps.get(&e.src) {
                if let Some(gw) = gw.as_mut() {
                    for &row in m.at(t as u32) {
                        for (kk, j) in block.row_synapses(row) {
                            let tt = t + block.delays[kk] as usize + 1;
                            if tt < steps {
                                gw[kk] += gid[tt * dsize + j as usize];
                            }
                        }
                    }
                }
            } else {
                let s = tape.slot[e.src].unwrap();
                let (size, Node::Spiking(sp)) = (tape.pops[s].size, &tape.pops[s].node) else {
                    continue;
                };
                for row in 0..size {
                    let z = sp.z[t * size + row];
                    let mut acc = 0.0;
                    for (kk, j) in block.row_synapses(row as u32) {
                        let tt = t + block.delays[kk] as usize + 1;
                        if tt < steps {
                            let g = gid[tt * dsize + j as usize];
                            acc += block.weights[kk] * g;
                            if z != 0.0 {
                                if let Some(gw) = gw.as_mut() {
                                    gw[kk] += z * g;
                                }
                            }
                        }
                    }
                    g_z[s][row] += acc;
                }
            }
            grads[e.block] = gw;
        }

        for (k, p) in tape.pops.iter().enumerate() {
            let base = t * p.size;
            let next = base + p.size;
            match &p.node {
                Node::Spiking(tp) => {
                    let reg_v = co.voltage != 0.0 && regularized(p);
                    for n in 0..p.size {
                        let at = base + n;
                        let st = &tp.steps[n];
                        let d = st.decays;
                        let gi_next = if t + 1 < steps { g_i[k][next + n] } else { 0.0 };
                        if tp.refr[at] {
                            g_p[k][n] = 0.0;
                            g_q[k][n] = 0.0;
                            g_i[k][at] = d.i * gi_next;
                            g_a[k][n] *= d.ahp;
                            continue;
                        }
                        let (pv, qv) = (tp.p[at], tp.q[at]);
                        let denom = tp.b0 - qv;
                        let vs = (pv + qv - tp.b0) / denom;
                        let mut gvs = g_z[k][n] * pseudo_derivative(vs, &opts.surrogate);
                        if reg_v {
                            gvs += co.voltage * voltage_penalty_grad(vs);
                        }
                        let keep = if tp.s[at] { 0.0 } else { d.v };
                        let gp = gvs / denom + keep * g_p[k][n];
                        let gq = gvs * pv / (denom * denom) + keep * g_q[k][n];
                        g_p[k][n] = gp;
                        g_q[k][n] = gq;
                        g_i[k][at] = tp.inv_g * gp + d.i * gi_next;
                        g_a[k][n] = tp.inv_g * gq + d.ahp * g_a[k][n];
                    }
                }
                Node::Readout(r) => {
                    let carry = if t + 1 < steps && r.en[t + 1] { r.step.alpha_v } else { 1.0 };
                    for n in 0..p.size {
                        let at = base + n;
                        let mut dv = 0.0;
                        if t + 1 == steps {
                            if let Some(c) = &final_coef {
                                dv += c[n];
                            }
                        }
                        if let Some(teacher) = teacher {
                            let norm = (p.size * steps) as f64;
                            dv += co.task_norm * 2.0 * (r.v[at] - teacher[n][t]) / norm;
                        }
                        let gv = dv + carry * g_v[k][n];
                        g_v[k][n] = gv;
                        let gi_next = if t + 1 < steps { g_i[k][next + n] } else { 0.0 };
                        g_i[k][at] = if r.en[t] { gv } else { 0.0 } + r.step.alpha_i * gi_next;
                    }
                }
            }
        }
    }
    grads
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid_input(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

fn summarize(tapes: &[Tape], samples: &[Sample], loss: LossBreakdown) -> BatchResult {
    let mut r = BatchResult { loss, ..BatchResult::default() };
    for (tape, s) in tapes.iter().zip(samples) {
        let v = tape.final_readout();
        if let Target::Class(y) = s.target {
            if !v.is_empty() && argmax(&v) == y {
                r.correct += 1;
            }
        }
        r.outputs.push(v);
        for p in &tape.pops {
            if let Node::Spiking(tp) = &p.node {
                *r.spikes.entry(p.id).or_default() += tp.s.iter().filter(|&&s| s).count() as u64;
                if regularized(p) {
                    for at in 0..tp.z.len() {
                        if !tp.refr[at] {
                            let vs = scaled(tp.p[at], tp.q[at], tp.b0);
                            r.in_range.1 += 1;
                            if (VS_LOW..=VS_HIGH).contains(&vs) {
                                r.in_range.0 += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    r
}

/// Loss of a batch without gradients.
pub fn evaluate(graph: &NetworkGraph, samples: &[Sample], opts: &BpttOptions) -> Result<BatchResult> {
    opts.loss.validate()?;
    check_targets(graph, samples, opts)?;
    with_threads(opts.threads, || {
        let tapes = samples.par_iter().map(|s| forward(graph, s, opts)).collect::<Result<Vec<_>>>()?;
        let (loss, _) = batch_losses(&tapes, samples, opts);
        Ok(summarize(&tapes, samples, loss))
    })?
}

/// Loss and weight gradients of a batch.
pub fn gradients(graph: &NetworkGraph, samples: &[Sample], opts: &BpttOptions) -> Result<BatchResult> {
    opts.loss.validate()?;
    opts.surrogate.validate()?;
    check_targets(graph, samples, opts)?;
    with_threads(opts.threads, || {
        let tapes = samples.par_iter().map(|s| forward(graph, s, opts)).collect::<Result<Vec<_>>>()?;
        let (loss, co) = batch_losses(&tapes, samples, opts);
        let per_sample: Vec<Vec<Option<Vec<f64>>>> = tapes
            .par_iter()
            .zip(samples.par_iter())
            .map(|(tape, s)| backward(graph, tape, &s.target, &co, opts))
            .collect();
        let mut total: Vec<Option<Vec<f64>>> = vec![None; graph.blocks.len()];
        for g in per_sample {
            for (acc, g) in total.iter_mut().zip(g) {
                if let Some(g) = g {
                    match acc {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                        None => *acc = Some(g),
                    }
                }
            }
        }
        let mut r = summarize(&tapes, samples, loss);
        r.gradients = Gradients { blocks: total };
        Ok(r)
    })?
}

/// Hard spike trains of a forward pass, for comparison with the simulator.
pub fn forward_spikes(graph: &NetworkGraph, sample: &Sample, opts: &BpttOptions) -> Result<BTreeMap<PopId, SpikeMatrix>> {
    let tape = forward(graph, sample, opts)?;
    let mut out = BTreeMap::new();
    for p in &tape.pops {
        if let Node::Spiking(tp) = &p.node {
            let mut m = SpikeMatrix::new(p.size as u32, opts.steps);
            for (at, &s) in tp.s.iter().enumerate() {
                if s {
                    m.set((at % p.size) as u32, (at / p.size) as u32);
                }
            }
            out.insert(p.id, m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_lsnn, LsnnSpec};
    use crate::neuron::NeuronParams;
    use crate::sim::{run, RunOptions};
    use rand::{Rng, SeedableRng};

    fn small_lsnn(seed: u64) -> NetworkGraph {
        let spec = LsnnSpec {
            size: 12,
            inputs: 6,
            readout: 3,
            params: NeuronParams::lif_ahp(20.0, 5.0, 200.0, 4.0, 10.0, 1),
            readout_params: NeuronParams::readout(5.0, 20.0, 30),
            input_gain: 3.0,
            rec_gain: 1.5,
            out_gain: 1.0,
            ..LsnnSpec::default()
        };
        build_lsnn(&spec, seed).unwrap()
    }

    fn poisson(neurons: u32, steps: u32, p: f64, seed: u64) -> SpikeMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = SpikeMatrix::new(neurons, steps);
        for t in 0..steps {
            for n in 0..neurons {
                if rng.random::<f64>() < p {
                    m.set(n, t);
                }
            }
        }
        m
    }

    fn sample(g: &NetworkGraph, seed: u64, target: Target) -> Sample {
        let input = g.populations.iter().find(|p| p.is_input()).unwrap();
        Sample { inputs: BTreeMap::from([(input.id, poisson(input.size, 40, 0.2, seed))]), active: None, target }
    }

    #[test]
    fn hard_forward_matches_simulator() {
        let g = small_lsnn(3);
        let s = sample(&g, 9, Target::None);
        let opts = BpttOptions::new(40);
        let tape = forward_spikes(&g, &s, &opts).unwrap();
        let out = run(&g, &s.inputs, &RunOptions::steps(40)).unwrap();
        let mut total = 0;
        for (&pop, m) in &tape {
            assert_eq!(*m, out.raster.population(pop, g.populations[pop].size));
            total += m.count();
        }
        assert!(total > 0, "test network is silent");
    }

    #[test]
    fn zero_loss_has_zero_gradient() {
        let g = small_lsnn(4);
        let mut opts = BpttOptions::new(40);
        opts.loss.task = TaskLoss::None;
        let r = gradients(&g, &[sample(&g, 1, Target::None)], &opts).unwrap();
        assert_eq!(r.loss.total, 0.0);
        assert_eq!(r.gradients.norm(), 0.0);
    }

    #[test]
    fn bad_targets_are_rejected() {
        let g = small_lsnn(4);
        let opts = BpttOptions::new(40);
        assert!(gradients(&g, &[sample(&g, 1, Target::Class(3))], &opts).is_err());
        assert!(gradients(&g, &[sample(&g, 1, Target::Teacher(vec![vec![0.0; 40]; 2]))], &opts).is_err());
    }

    #[test]
    fn frozen_blocks_get_no_gradient() {
        let mut g = small_lsnn(5);
        g.blocks[0].frozen = true;
        let r = gradients(&g, &[sample(&g, 2, Target::Class(1))], &BpttOptions::new(40)).unwrap();
        assert!(r.gradients.blocks[0].is_none());
        assert!(r.gradients.blocks.iter().skip(1).any(|b| b.is_some()));
    }
}
