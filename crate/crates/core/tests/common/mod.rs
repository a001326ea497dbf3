//! Independent oracles shared by the integration tests and the acceptance
//! binary. Nothing here calls the library's dynamics or encoder code.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradcheck;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeplace::network::{GraphKind, ParamBlock, Role, Slot};
use spikeplace::neuron::{NeuronKind, NeuronParams};
use spikeplace::raster::SpikeMatrix;
use spikeplace::NetworkGraph;

/// A small random network together with a Poisson stimulus.
pub struct Case {
    pub graph: NetworkGraph,
    pub input: SpikeMatrix,
    pub steps: u32,
}

impl Case {
    pub fn inputs(&self) -> BTreeMap<usize, SpikeMatrix> {
        BTreeMap::from([(0, self.input.clone())])
    }
}

/// At most 50 neurons: one input population, one to three LIF or LIF+AHP
/// populations (AHP on a random subset) and an optional readout. Blocks are
/// masked at random with delays 0..=3. Magnitudes suit both numeric modes.
pub fn random_case(seed: u64, steps: u32) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = NetworkGraph::new(GraphKind::Generic);
    let n_in = rng.random_range(3..=8u32);
    let input = g.add_population("in", n_in, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
    let mut budget = 50 - n_in;
    let with_readout = rng.random_bool(0.6);
    let n_out = if with_readout { rng.random_range(1..=3u32) } else { 0 };
    budget -= n_out;

    let n_hidden = rng.random_range(1..=3usize);
    let mut hidden = Vec::new();
    for h in 0..n_hidden {
        let left = n_hidden - h;
        let size = rng.random_range(1..=(budget / left as u32).clamp(1, 20));
        budget -= size;
        let b0 = rng.random_range(100.0..1000.0f64).round();
        let tau_v = rng.random_range(3.0..40.0);
        let tau_i = rng.random_range(1.0..10.0);
        let refr = rng.random_range(0..=3);
        let (params, subset) = if rng.random_bool(0.6) {
            let beta = (b0 * rng.random_range(0.05..0.5)).round();
            let p = NeuronParams::lif_ahp(tau_v, tau_i, tau_v * rng.random_range(5.0..12.0), beta, b0, refr);
            let subset: Vec<u32> = (0..size).filter(|_| rng.random_bool(0.5)).collect();
            (p, Some(subset))
        } else {
            (NeuronParams::lif(tau_v, tau_i, b0, refr), None)
        };
        let id = g.add_population(format!("h{h}"), size, params.clone(), Role::Hidden);
        g.populations[id].ahp_subset = subset;
        hidden.push((id, size, b0));
    }

    let block = |g: &mut NetworkGraph, rng: &mut ChaCha8Rng, src: usize, rows: u32, dst: usize, cols: u32, scale: f64| {
        let n = (rows * cols) as usize;
        let density = rng.random_range(0.3..1.0);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        let weights: Vec<f64> = mask
            .iter()
            .map(|&on| if on { scale * rng.random_range(-0.4..1.0) } else { 0.0 })
            .collect();
        let delays: Vec<u8> = (0..n).map(|_| rng.random_range(0..=3)).collect();
        let mut b = ParamBlock::dense(format!("{src}-{dst}"), rows, cols, weights, delays);
        b.mask = Some(mask);
        let b = g.add_block(b);
        g.connect(src, dst, b).unwrap();
    };

    for &(id, size, b0) in &hidden {
        block(&mut g, &mut rng, input, n_in, id, size, b0 * 0.3);
    }
    for &(a, sa, _) in &hidden {
        for &(b, sb, b0) in &hidden {
            if rng.random_bool(0.6) {
                block(&mut g, &mut rng, a, sa, b, sb, b0 * 0.15);
            }
        }
    }
    if with_readout {
        let window = rng.random_range(1..=steps);
        let tau_v = if rng.random_bool(0.5) { f64::INFINITY } else { rng.random_range(5.0..50.0) };
        let out = g.add_population("out", n_out, NeuronParams::readout(rng.random_range(2.0..10.0), tau_v, window), Role::Readout);
        for &(id, size, _) in &hidden {
            block(&mut g, &mut rng, id, size, out, n_out, 20.0);
        }
    }
    g.validate().unwrap();

    let rate = rng.random_range(0.05..0.3);
    let mut m = SpikeMatrix::new(n_in, steps);
    for t in 0..steps {
        for n in 0..n_in {
            if rng.random_bool(rate) {
                m.set(n, t);
            }
        }
    }
    Case { graph: g, input: m, steps }
}

/// Per population: spikes[t][n], and state[t][n] = (i_psc, i_ahp, v_psc, v_ahp)
/// (readouts report (i, 0, v, 0)). Input populations carry only spikes.
pub struct Reference {
    pub spikes: Vec<Vec<Vec<bool>>>,
    pub state: Vec<Vec<Vec<[f64; 4]>>>,
}

const FRAC: i64 = 4096;
const HI: i64 = (1 << 23) - 1;
const LO: i64 = -(1 << 23);

fn sat(x: i64) -> i64 {
    x.clamp(LO, HI)
}

fn alpha(tau: f64) -> f64 {
    if tau == f64::INFINITY {
        1.0
    } else {
        (-1.0 / tau).exp()
    }
}

/// `x * a / 4096` rounded to nearest with ties toward +inf.
fn qmul(x: i64, a: i64) -> i64 {
    sat((x * a + FRAC / 2).div_euclid(FRAC))
}

fn qalpha(tau: f64) -> i64 {
    (alpha(tau) * FRAC as f64).round() as i64
}

/// Weighted input to every neuron of `dst` at step `t`, from spikes already
/// recorded for earlier steps.
fn input_at(g: &NetworkGraph, spikes: &[Vec<Vec<bool>>], dst: usize, t: usize, fixed: bool) -> Vec<f64> {
    let size = g.populations[dst].size as usize;
    let mut x = vec![0.0; size];
    for c in g.connections.iter().filter(|c| c.dst == dst) {
        let b = &g.blocks[c.block];
        let cols = b.cols() as usize;
        for i in 0..b.rows() as usize {
            for j in 0..cols {
                let k = i * cols + j;
                if !b.is_active(k) {
                    continue;
                }
                let d = b.delays[k] as usize;
                if t > d && spikes[c.src][t - d - 1][i] {
                    x[j] += if fixed { b.weights[k].round() } else { b.weights[k] };
                }
            }
        }
    }
    x
}

/// Straight-line simulation of every population in one of the two numeric
/// modes. In fixed mode the returned states are the integer registers.
pub fn reference_run(g: &NetworkGraph, input: &SpikeMatrix, steps: u32, fixed: bool) -> Reference {
    let steps = steps as usize;
    let pops = &g.populations;
    let mut spikes: Vec<Vec<Vec<bool>>> = pops.iter().map(|p| vec![vec![false; p.size as usize]; steps]).collect();
    let mut state: Vec<Vec<Vec<[f64; 4]>>> = pops.iter().map(|_| Vec::with_capacity(steps)).collect();
    // i, a, vp, va, refractory counter, spiked last step
    let mut real: Vec<Vec<([f64; 4], u32, bool)>> = pops.iter().map(|p| vec![([0.0; 4], 0, false); p.size as usize]).collect();
    let mut int: Vec<Vec<([i64; 4], u32, bool)>> = pops.iter().map(|p| vec![([0; 4], 0, false); p.size as usize]).collect();

    for t in 0..steps {
        for (pid, p) in pops.iter().enumerate() {
            if p.params.kind == NeuronKind::InputSource {
                for n in 0..p.size {
                    spikes[pid][t][n as usize] = input.get(n, t as u32);
                }
                continue;
            }
            let x = input_at(g, &spikes, pid, t, fixed);
            let mut row = Vec::with_capacity(p.size as usize);
            for n in 0..p.size as usize {
                let pr = &p.params;
                let ahp = pr.kind == NeuronKind::LifAhp && p.ahp_subset.as_ref().is_none_or(|s| s.contains(&(n as u32)));
                let (tau_ahp, beta) = if ahp { (pr.tau_ahp, pr.beta) } else { (f64::INFINITY, 0.0) };
                if pr.kind == NeuronKind::Readout {
                    let on = t + pr.readout_window as usize >= steps;
                    if fixed {
                        let s = &mut int[pid][n].0;
                        s[0] = sat(qmul(s[0], qalpha(pr.tau_i)) + x[n] as i64);
                        if on {
                            s[2] = sat(qmul(s[2], qalpha(pr.tau_v)) + s[0]);
                        }
                        row.push([s[0] as f64, 0.0, s[2] as f64, 0.0]);
                    } else {
                        let s = &mut real[pid][n].0;
                        s[0] = alpha(pr.tau_i) * s[0] + x[n];
                        if on {
                            s[2] = alpha(pr.tau_v) * s[2] + s[0];
                        }
                        row.push([s[0], 0.0, s[2], 0.0]);
                    }
                    continue;
                }
                let fired = if fixed {
                    let (s, refr, last) = &mut int[pid][n];
                    s[0] = sat(qmul(s[0], qalpha(pr.tau_i)) + x[n] as i64);
                    s[1] = sat(qmul(s[1], qalpha(tau_ahp)) - if *last { beta.round() as i64 } else { 0 });
                    let mut f = false;
                    if *refr > 0 {
                        *refr -= 1;
                        s[2] = 0;
                        s[3] = 0;
                    } else {
                        s[2] = sat(qmul(s[2], qalpha(pr.tau_v)) + s[0]);
                        s[3] = sat(qmul(s[3], qalpha(pr.tau_v)) + s[1]);
                        f = s[2] + s[3] > pr.b0.round() as i64;
                    }
                    if f {
                        s[2] = 0;
                        s[3] = 0;
                        *refr = pr.refractory;
                    }
                    *last = f;
                    row.push(s.map(|v| v as f64));
                    f
                } else {
                    let (s, refr, last) = &mut real[pid][n];
                    s[0] = alpha(pr.tau_i) * s[0] + x[n];
                    s[1] = alpha(tau_ahp) * s[1] - if *last { beta } else { 0.0 };
                    let mut f = false;
                    if *refr > 0 {
                        *refr -= 1;
                        s[2] = 0.0;
                        s[3] = 0.0;
                    } else {
                        s[2] = alpha(pr.tau_v) * s[2] + s[0] / pr.g_v;
                        s[3] = alpha(pr.tau_v) * s[3] + s[1] / pr.g_v;
                        f = s[2] + s[3] > pr.b0;
                    }
                    if f {
                        s[2] = 0.0;
                        s[3] = 0.0;
                        *refr = pr.refractory;
                    }
                    *last = f;
                    row.push(*s);
                    f
                };
                spikes[pid][t][n] = fired;
            }
            state[pid].push(row);
        }
    }
    Reference { spikes, state }
}

/// Listing-1 transcription: a pair of neurons per threshold (rising on the
/// even one, falling on the odd one), then the end marker for the tail.
pub fn listing_encode(image: &[u8], neurons: usize, tail: usize) -> Vec<Vec<bool>> {
    let n_thr = neurons / 2;
    let threshold_values: Vec<f64> = (0..n_thr).map(|k| 255.0 * k as f64 / (n_thr - 1) as f64).collect();
    let mut spike_times = vec![vec![false; image.len() + tail]; neurons];
    let mut current_pixel_value = 0.0f64;
    for (time, &px) in image.iter().enumerate() {
        let next_pixel_value = px as f64;
        for (threshold_idx, &threshold) in threshold_values.iter().enumerate() {
            if current_pixel_value <= threshold && next_pixel_value >= threshold {
                spike_times[2 * threshold_idx][time] = true;
            }
            if current_pixel_value >= threshold && next_pixel_value <= threshold {
                spike_times[2 * threshold_idx + 1][time] = true;
            }
        }
        current_pixel_value = next_pixel_value;
    }
    for time in image.len()..image.len() + tail {
        spike_times[neurons - 1][time] = true;
    }
    spike_times
}

/// Runs the library simulator with every neuron traced and compares it with
/// [`reference_run`]. Fixed mode must agree exactly; real mode must agree in
/// spikes and to `1e-9` relative in every state variable.
pub fn compare_with_reference(case: &Case, fixed: bool) -> Result<(), String> {
    use spikeplace::sim::{run, Mode, RunOptions};
    let g = &case.graph;
    let trace: Vec<(usize, u32)> =
        g.populations.iter().filter(|p| !p.is_input()).flat_map(|p| (0..p.size).map(move |n| (p.id, n))).collect();
    let mode = if fixed { Mode::Fixed } else { Mode::Real };
    let opts = RunOptions { mode, trace, ..RunOptions::steps(case.steps) };
    let out = run(g, &case.inputs(), &opts).map_err(|e| e.to_string())?;
    let want = reference_run(g, &case.input, case.steps, fixed);

    let mut got = vec![];
    for e in &out.raster.events {
        got.push((e.step, e.pop, e.neuron));
    }
    let mut exp = vec![];
    for (pop, per_step) in want.spikes.iter().enumerate() {
        for (t, row) in per_step.iter().enumerate() {
            for (n, &s) in row.iter().enumerate() {
                if s {
                    exp.push((t as u32, pop, n as u32));
                }
            }
        }
    }
    got.sort();
    exp.sort();
    if got != exp {
        let first = got.iter().zip(&exp).position(|(a, b)| a != b).unwrap_or(got.len().min(exp.len()));
        return Err(format!(
            "rasters differ ({} vs {} events), first at {:?} vs {:?}",
            got.len(),
            exp.len(),
            got.get(first),
            exp.get(first)
        ));
    }
    for tr in &out.traces {
        let series = [&tr.i_psc, &tr.i_ahp, &tr.v_psc, &tr.v_ahp];
        for t in 0..case.steps as usize {
            let r = want.state[tr.pop][t][tr.neuron as usize];
            for (v, (s, &e)) in series.iter().zip(&r).enumerate() {
                let a = s[t];
                let ok = if fixed { a == e } else { (a - e).abs() <= 1e-9 * e.abs().max(1.0) };
                if !ok {
                    return Err(format!("pop {} neuron {} step {t} var {v}: {a} vs {e}", tr.pop, tr.neuron));
                }
            }
        }
    }
    Ok(())
}

/// MNIST-like mixtures: mostly 0 and 255, some mid-grey, and exact hits on
/// the integer thresholds 85 and 170.
pub fn random_image(rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..784)
        .map(|_| match rng.random_range(0..10) {
            0..=4 => 0,
            5 | 6 => 255,
            7 => [85, 170][rng.random_range(0..2)],
            _ => rng.random(),
        })
        .collect()
}
