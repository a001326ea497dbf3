use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GraphKind, NetworkGraph, ParamBlock, PopId, Role, Sign, Slot};
use crate::error::{invalid_param, Result};
use crate::neuron::NeuronParams;
use crate::seed::{self, Rng};

fn gaussian(rng: &mut Rng, n: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn uniform_delays(rng: &mut Rng, n: usize, lo: u8, hi: u8) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

fn check_delays(lo: u8, hi: u8) -> Result<()> {
    if lo > hi {
        return Err(invalid_param(format!("delay range {lo}..={hi} is empty")));
    }
    Ok(())
}

/// Dense block with N(0, gain * b0 / sqrt(fan_in)) weights and uniform delays.
#[allow(clippy::too_many_arguments)]
fn random_dense(
    rng: &mut Rng,
    tag: &str,
    rows: u32,
    cols: u32,
    gain: f64,
    b0: f64,
    fan_in: f64,
    delays: (u8, u8),
) -> ParamBlock {
    let n = rows as usize * cols as usize;
    let w = gaussian(rng, n, gain * b0 / fan_in.max(1.0).sqrt());
    let d = uniform_delays(rng, n, delays.0, delays.1);
    ParamBlock::dense(tag, rows, cols, w, d)
}

fn ahp_subset(rng: &mut Rng, size: u32, count: u32) -> Option<Vec<u32>> {
    let mut v: Vec<u32> = index::sample(rng, size as usize, count as usize).into_iter().map(|i| i as u32).collect();
    v.sort_unstable();
    Some(v)
}

/// Recurrent LSNN with an input population and optional readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsnnSpec {
    pub size: u32,
    pub ahp_fraction: f64,
    pub delay_min: u8,
    pub delay_max: u8,
    pub inputs: u32,
    pub readout: u32,
    pub self_connections: bool,
    pub params: NeuronParams,
    pub readout_params: NeuronParams,
    pub input_gain: f64,
    pub rec_gain: f64,
    pub out_gain: f64,
}

impl Default for LsnnSpec {
    fn default() -> Self {
        Self {
            size: 200,
            ahp_fraction: 0.5,
            delay_min: 1,
            delay_max: 3,
            inputs: 0,
            readout: 0,
            self_connections: true,
            params: NeuronParams::lif_ahp(20.0, 7.0, 700.0, 96.0, 127.0, 0),
            readout_params: NeuronParams::readout(7.0, f64::INFINITY, 10),
            input_gain: 1.0,
            rec_gain: 0.5,
            out_gain: 0.05,
        }
    }
}

/// Adds an LSNN population plus its recurrent block; returns (pop, block).
fn add_lsnn_population(
    g: &mut NetworkGraph,
    rng: &mut Rng,
    name: &str,
    slot: Slot,
    spec: &LsnnSpec,
    rec_block: Option<usize>,
) -> Result<(PopId, usize)> {
    let n_ahp = (spec.ahp_fraction * spec.size as f64).round() as u32;
    let params = if n_ahp == 0 { spec.params.without_ahp() } else { spec.params.clone() };
    let pop = g.add_population(name, spec.size, params, Role::Lsnn { slot });
    if n_ahp > 0 {
        g.populations[pop].ahp_subset = ahp_subset(rng, spec.size, n_ahp);
    }
    let block = match rec_block {
        Some(b) => b,
        None => {
            let mut b = random_dense(
                rng,
                &format!("{name}.rec"),
                spec.size,
                spec.size,
                spec.rec_gain,
                spec.params.b0,
                spec.size as f64,
                (spec.delay_min, spec.delay_max),
            );
            if !spec.self_connections {
                let n = spec.size as usize;
                let mut mask = vec![true; n * n];
                for i in 0..n {
                    mask[i * n + i] = false;
                    b.weights[i * n + i] = 0.0;
                }
                b.mask = Some(mask);
            }
            g.add_block(b)
        }
    };
    g.connect(pop, pop, block)?;
    Ok((pop, block))
}

/// Standalone LSNN: optional input population feeding it, optional readout.
pub fn build_lsnn(spec: &LsnnSpec, seed_value: u64) -> Result<NetworkGraph> {
    if spec.size == 0 {
        return Err(invalid_param("LSNN size must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.ahp_fraction) {
        return Err(invalid_param(format!("ahp_fraction {} outside [0, 1]", spec.ahp_fraction)));
    }
    check_delays(spec.delay_min, spec.delay_max)?;
    let mut rng = seed::stream(seed_value, "lsnn");
    let mut g = NetworkGraph::new(GraphKind::Lsnn);
    let input = (spec.inputs > 0).then(|| {
        g.add_population("input", spec.inputs, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus })
    });
    let (lsnn, _) = add_lsnn_population(&mut g, &mut rng, "lsnn", Slot::Stimulus, spec, None)?;
    if let Some(input) = input {
        let b = random_dense(
            &mut rng,
            "lsnn.in",
            spec.inputs,
            spec.size,
            spec.input_gain,
            spec.params.b0,
            1.0,
            (spec.delay_min, spec.delay_max),
        );
        let b = g.add_block(b);
        g.connect(input, lsnn, b)?;
    }
    if spec.readout > 0 {
        let out = g.add_population("readout", spec.readout, spec.readout_params.clone(), Role::Readout);
        let b = random_dense(
            &mut rng,
            "lsnn.out",
            spec.size,
            spec.readout,
            spec.out_gain,
            1.0,
            spec.size as f64,
            (spec.delay_min, spec.delay_max),
        );
        let b = g.add_block(b);
        g.connect(lsnn, out, b)?;
    }
    g.validate()?;
    Ok(g)
}

/// Sequential-MNIST network: input, one E/I recurrent population with an
/// AHP subset among the excitatory neurons, and a readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmnistConfig {
    pub n_input: u32,
    pub n_exc: u32,
    pub n_inh: u32,
    pub n_ahp: u32,
    pub n_readout: u32,
    /// Fraction of all possible input, recurrent and readout synapses present.
    pub density: f64,
    pub tau_v: f64,
    pub tau_i: f64,
    pub tau_ahp: f64,
    pub beta: f64,
    pub b0: f64,
    pub refractory: u32,
    pub delay: u8,
    pub readout_tau_i: f64,
    #[serde(with = "crate::neuron::extended_f64")]
    pub readout_tau_v: f64,
    pub readout_window: u32,
    pub input_gain: f64,
    pub rec_gain: f64,
    pub out_gain: f64,
}

impl Default for SmnistConfig {
    fn default() -> Self {
        Self {
            n_input: 80,
            n_exc: 180,
            n_inh: 60,
            n_ahp: 100,
            n_readout: 10,
            density: 0.2,
            tau_v: 20.0,
            tau_i: 5.0,
            tau_ahp: 700.0,
            beta: 96.0,
            b0: 127.0,
            refractory: 1,
            delay: 1,
            readout_tau_i: 20.0,
            readout_tau_v: f64::INFINITY,
            readout_window: 840,
            input_gain: 1.0,
            rec_gain: 0.6,
            out_gain: 0.05,
        }
    }
}

impl SmnistConfig {
    /// Reduced network for the two-class desk task. The small input gain
    /// keeps most scaled voltages inside the surrogate support at init.
    pub fn desk() -> Self {
        Self {
            n_exc: 75,
            n_inh: 25,
            n_ahp: 40,
            n_readout: 2,
            input_gain: 0.05,
            rec_gain: 0.1,
            out_gain: 0.02,
            ..Self::default()
        }
    }

    pub fn n_rec(&self) -> u32 {
        self.n_exc + self.n_inh
    }

    pub fn possible_synapses(&self) -> u64 {
        let r = self.n_rec() as u64;
        self.n_input as u64 * r + r * r + r * self.n_readout as u64
    }
}

pub fn build_smnist_network(config: &SmnistConfig, seed_value: u64) -> Result<NetworkGraph> {
    let c = config;
    if c.n_ahp > c.n_exc {
        return Err(invalid_param("AHP neurons are drawn from the excitatory population"));
    }
    if !(c.density > 0.0 && c.density <= 1.0) {
        return Err(invalid_param(format!("density {} outside (0, 1]", c.density)));
    }
    let mut rng = seed::stream(seed_value, "smnist");
    let mut g = NetworkGraph::new(GraphKind::Smnist { config: c.clone() });
    let n_rec = c.n_rec();
    let input = g.add_population("input", c.n_input, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
    let rec_params = NeuronParams::lif_ahp(c.tau_v, c.tau_i, c.tau_ahp, c.beta, c.b0, c.refractory);
    let rec = g.add_population("recurrent", n_rec, rec_params, Role::Hidden);
    let mut ahp: Vec<u32> =
        index::sample(&mut rng, c.n_exc as usize, c.n_ahp as usize).into_iter().map(|i| i as u32).collect();
    ahp.sort_unstable();
    g.populations[rec].ahp_subset = Some(ahp);
    let readout_params = NeuronParams::readout(c.readout_tau_i, c.readout_tau_v, c.readout_window);
    let out = g.add_population("readout", c.n_readout, readout_params, Role::Readout);

    // One draw over the union of all three blocks so the overall density is exact.
    let sizes = [
        c.n_input as usize * n_rec as usize,
        n_rec as usize * n_rec as usize,
        n_rec as usize * c.n_readout as usize,
    ];
    let total: usize = sizes.iter().sum();
    let k = (c.density * total as f64).round() as usize;
    let mut masks: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![false; n]).collect();
    for flat in index::sample(&mut rng, total, k) {
        let (mut b, mut i) = (0, flat);
        while i >= sizes[b] {
            i -= sizes[b];
            b += 1;
        }
        masks[b][i] = true;
    }
    let fan = |rows: u32| (c.density * rows as f64).max(1.0);
    let signs: Vec<Sign> =
        (0..n_rec).map(|i| if i < c.n_exc { Sign::Excitatory } else { Sign::Inhibitory }).collect();
    let ei_ratio = c.n_exc as f64 / c.n_inh.max(1) as f64;

    let mut blocks = Vec::new();
    for (b, (tag, rows, cols, gain, b0, fan_in)) in [
        ("smnist.in", c.n_input, n_rec, c.input_gain, c.b0, fan(c.n_input)),
        ("smnist.rec", n_rec, n_rec, c.rec_gain, c.b0, fan(n_rec)),
        ("smnist.out", n_rec, c.n_readout, c.out_gain, 1.0, fan(n_rec)),
    ]
    .into_iter()
    .enumerate()
    {
        let n = rows as usize * cols as usize;
        let mut w = gaussian(&mut rng, n, gain * b0 / fan_in.sqrt());
        let mask = std::mem::take(&mut masks[b]);
        for (k, x) in w.iter_mut().enumerate() {
            if !mask[k] {
                *x = 0.0;
            } else if b == 1 {
                let row = (k / cols as usize) as u32;
                *x = if row < c.n_exc { x.abs() } else { -x.abs() * ei_ratio };
            }
        }
        let mut block = ParamBlock::dense(tag, rows, cols, w, vec![c.delay; n]);
        block.mask = Some(mask);
        if b == 1 {
            block.row_signs = Some(signs.clone());
        }
        blocks.push(g.add_block(block));
    }
    g.connect(input, rec, blocks[0])?;
    g.connect(rec, rec, blocks[1])?;
    g.connect(rec, out, blocks[2])?;
    g.validate()?;
    Ok(g)
}

/// Spiking relational network for stories of up to `m` sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelNetConfig {
    pub m: u32,
    pub vocab: u32,
    pub lsnn_size: u32,
    pub lsnn_ahp: u32,
    pub gtheta_layers: Vec<u32>,
    pub fphi_layers: Vec<u32>,
    pub t_word: u32,
    pub n_words: u32,
    pub t_inp: u32,
    pub t_sim: u32,
    pub t_readout: u32,
    pub delay_min: u8,
    pub delay_max: u8,
    pub self_connections: bool,
    pub lsnn_params: NeuronParams,
    pub ff_params: NeuronParams,
    pub readout_params: NeuronParams,
    /// Softmax input = readout_scale * final readout voltage.
    pub readout_scale: f64,
    pub input_gain: f64,
    pub rec_gain: f64,
    pub gtheta_gain: f64,
    pub agg_gain: f64,
    pub fphi_gain: f64,
    pub out_gain: f64,
}

impl Default for RelNetConfig {
    fn default() -> Self {
        Self::new(20, 180)
    }
}

impl RelNetConfig {
    pub fn new(m: u32, vocab: u32) -> Self {
        Self {
            m,
            vocab,
            lsnn_size: 200,
            lsnn_ahp: 100,
            gtheta_layers: vec![256; 4],
            fphi_layers: vec![256, 512, 160],
            t_word: 10,
            n_words: 11,
            t_inp: 14,
            t_sim: 37,
            t_readout: 10,
            delay_min: 1,
            delay_max: 3,
            self_connections: true,
            lsnn_params: NeuronParams::lif_ahp(20.0, 7.0, 700.0, 96.0, 127.0, 0),
            ff_params: NeuronParams::lif(7.0, 7.0, 127.0, 0),
            readout_params: NeuronParams::readout(7.0, f64::INFINITY, 10),
            readout_scale: 0.1,
            input_gain: 0.8,
            rec_gain: 0.6,
            gtheta_gain: 2.5,
            agg_gain: 1.2,
            fphi_gain: 2.5,
            out_gain: 0.2,
        }
    }

    /// Small network for tests and desk-scale training.
    pub fn toy(m: u32, vocab: u32) -> Self {
        Self {
            lsnn_size: 24,
            lsnn_ahp: 12,
            gtheta_layers: vec![24, 24],
            fphi_layers: vec![24],
            ..Self::new(m, vocab)
        }
    }

    pub fn instances(&self) -> u32 {
        self.m * (self.m + 1) / 2
    }

    pub fn embedding_steps(&self) -> u32 {
        self.t_word * self.n_words
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.vocab == 0 {
            return Err(invalid_param("RelNet needs m >= 1 and vocab >= 1"));
        }
        if self.gtheta_layers.is_empty() || self.fphi_layers.is_empty() {
            return Err(invalid_param("g_theta and f_phi need at least one layer"));
        }
        if self.lsnn_ahp > self.lsnn_size {
            return Err(invalid_param("more AHP neurons than LSNN neurons"));
        }
        if self.t_inp > self.t_sim || self.t_inp > self.embedding_steps() {
            return Err(invalid_param("T_inp must not exceed T_sim or the embedding duration"));
        }
        check_delays(self.delay_min, self.delay_max)?;
        self.lsnn_params.validate()?;
        self.ff_params.validate()?;
        self.readout_params.validate()
    }
}

/// All pairs (i, j) with i <= j < m in instance order.
pub fn gtheta_pairs(m: u32) -> Vec<(u32, u32)> {
    (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
}

pub fn build_relnet(config: &RelNetConfig, seed_value: u64) -> Result<NetworkGraph> {
    config.validate()?;
    let c = config;
    let mut rng = seed::stream(seed_value, "relnet");
    let mut g = NetworkGraph::new(GraphKind::Relnet { config: c.clone() });
    let delays = (c.delay_min, c.delay_max);
    let b0 = c.ff_params.b0;
    let lsnn_spec = LsnnSpec {
        size: c.lsnn_size,
        ahp_fraction: c.lsnn_ahp as f64 / c.lsnn_size as f64,
        delay_min: c.delay_min,
        delay_max: c.delay_max,
        self_connections: c.self_connections,
        params: c.lsnn_params.clone(),
        rec_gain: c.rec_gain,
        ..LsnnSpec::default()
    };

    let mut slots: Vec<Slot> = (0..c.m).map(Slot::Sentence).collect();
    slots.push(Slot::Question);
    let in_sentence = g.add_block(random_dense(&mut rng, "sentence.in", c.vocab, c.lsnn_size, c.input_gain, c.lsnn_params.b0, 1.0, delays));
    let in_question = g.add_block(random_dense(&mut rng, "question.in", c.vocab, c.lsnn_size, c.input_gain, c.lsnn_params.b0, 1.0, delays));
    let mut lsnn = Vec::new();
    let mut rec_sentence = None;
    for slot in &slots {
        let name = match slot {
            Slot::Sentence(i) => format!("sentence[{i}]"),
            _ => "question".to_string(),
        };
        let input = g.add_population(format!("{name}.input"), c.vocab, NeuronParams::input_source(), Role::Input { slot: *slot });
        let question = *slot == Slot::Question;
        let shared = if question { None } else { rec_sentence };
        let (pop, rec) = add_lsnn_population(&mut g, &mut rng, &format!("{name}.lsnn"), *slot, &lsnn_spec, shared)?;
        if !question {
            rec_sentence = Some(rec);
        }
        g.connect(input, pop, if question { in_question } else { in_sentence })?;
        lsnn.push(pop);
    }
    g.blocks[rec_sentence.expect("m >= 1")].tag = "sentence.rec".into();
    if let Some(last) = g.blocks.last_mut() {
        last.tag = "question.rec".into();
    }
    let question = *lsnn.last().expect("question LSNN");

    let widths = &c.gtheta_layers;
    let mut gt_blocks = Vec::new();
    for tag in ["i", "j", "q"] {
        gt_blocks.push(g.add_block(random_dense(
            &mut rng,
            &format!("gtheta.l1.{tag}"),
            c.lsnn_size,
            widths[0],
            c.gtheta_gain,
            b0,
            3.0 * c.lsnn_size as f64,
            delays,
        )));
    }
    let mut deep_blocks = Vec::new();
    for l in 1..widths.len() {
        deep_blocks.push(g.add_block(random_dense(
            &mut rng,
            &format!("gtheta.l{}", l + 1),
            widths[l - 1],
            widths[l],
            c.gtheta_gain,
            b0,
            widths[l - 1] as f64,
            delays,
        )));
    }
    let agg_size = *widths.last().expect("nonempty");
    let agg_w = gaussian(&mut rng, agg_size as usize, c.agg_gain * b0);
    let agg_d = uniform_delays(&mut rng, agg_size as usize, c.delay_min, c.delay_max);
    let agg_block = g.add_block(ParamBlock::one_to_one("aggregation", agg_w, agg_d));

    let mut last_layers = Vec::new();
    for (k, (i, j)) in gtheta_pairs(c.m).into_iter().enumerate() {
        let mut prev: Option<PopId> = None;
        for (l, &w) in widths.iter().enumerate() {
            let pop = g.add_population(
                format!("gtheta[{i},{j}].l{}", l + 1),
                w,
                c.ff_params.clone(),
                Role::Gtheta { instance: k as u32, i, j, layer: l as u8 + 1 },
            );
            match prev {
                None => {
                    g.connect(lsnn[i as usize], pop, gt_blocks[0])?;
                    g.connect(lsnn[j as usize], pop, gt_blocks[1])?;
                    g.connect(question, pop, gt_blocks[2])?;
                }
                Some(p) => g.connect(p, pop, deep_blocks[l - 1])?,
            }
            prev = Some(pop);
        }
        last_layers.push(prev.expect("nonempty"));
    }
    let agg = g.add_population("aggregation", agg_size, c.ff_params.clone(), Role::Aggregation);
    for &l in &last_layers {
        g.connect(l, agg, agg_block)?;
    }
    let mut prev = agg;
    let mut prev_size = agg_size;
    for (l, &w) in c.fphi_layers.iter().enumerate() {
        let pop = g.add_population(format!("fphi.l{}", l + 1), w, c.ff_params.clone(), Role::Fphi { layer: l as u8 + 1 });
        let b = g.add_block(random_dense(&mut rng, &format!("fphi.l{}", l + 1), prev_size, w, c.fphi_gain, b0, prev_size as f64, delays));
        g.connect(prev, pop, b)?;
        prev = pop;
        prev_size = w;
    }
    let readout = g.add_population("readout", c.vocab, c.readout_params.clone(), Role::Readout);
    let b = g.add_block(random_dense(&mut rng, "readout", prev_size, c.vocab, c.out_gain, 1.0, prev_size as f64, delays));
    g.connect(prev, readout, b)?;
    g.validate()?;
    Ok(g)
}

/// Locations of the RelNet parts inside a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelNetIndex {
    pub sentence_inputs: Vec<PopId>,
    pub question_input: PopId,
    pub sentence_lsnn: Vec<PopId>,
    pub question_lsnn: PopId,
    /// Per instance: (i, j, layer populations).
    pub instances: Vec<(u32, u32, Vec<PopId>)>,
    pub aggregation: PopId,
    pub fphi: Vec<PopId>,
    pub readout: PopId,
    /// (relay, source, group)
    pub relays: Vec<(PopId, PopId, u32)>,
}

impl RelNetIndex {
    pub fn from_graph(g: &NetworkGraph) -> Result<Self> {
        let mut ix = RelNetIndex::default();
        let (mut qi, mut ql, mut agg, mut ro) = (None, None, None, None);
        let mut sentence_inputs = Vec::new();
        let mut sentence_lsnn = Vec::new();
        let mut fphi = Vec::new();
        let mut inst: Vec<(u32, u32, u32, u8, PopId)> = Vec::new();
        for p in &g.populations {
            match p.role {
                Role::Input { slot: Slot::Sentence(i) } => sentence_inputs.push((i, p.id)),
                Role::Input { slot: Slot::Question } => qi = Some(p.id),
                Role::Lsnn { slot: Slot::Sentence(i) } => sentence_lsnn.push((i, p.id)),
                Role::Lsnn { slot: Slot::Question } => ql = Some(p.id),
                Role::Gtheta { instance, i, j, layer } => inst.push((instance, i, j, layer, p.id)),
                Role::Aggregation => agg = Some(p.id),
                Role::Fphi { layer } => fphi.push((layer, p.id)),
                Role::Readout => ro = Some(p.id),
                Role::Relay { source, group } => ix.relays.push((p.id, source, group)),
                _ => {}
            }
        }
        let missing = |what: &str| invalid_param(format!("graph is not a RelNet: no {what}"));
        sentence_inputs.sort_unstable();
        sentence_lsnn.sort_unstable();
        fphi.sort_unstable();
        inst.sort_unstable();
        ix.sentence_inputs = sentence_inputs.into_iter().map(|x| x.1).collect();
        ix.sentence_lsnn = sentence_lsnn.into_iter().map(|x| x.1).collect();
        ix.question_input = qi.ok_or_else(|| missing("question input"))?;
        ix.question_lsnn = ql.ok_or_else(|| missing("question LSNN"))?;
        ix.aggregation = agg.ok_or_else(|| missing("aggregation"))?;
        ix.readout = ro.ok_or_else(|| missing("readout"))?;
        ix.fphi = fphi.into_iter().map(|x| x.1).collect();
        for (k, i, j, _, pop) in inst {
            if ix.instances.len() <= k as usize {
                ix.instances.resize(k as usize + 1, (0, 0, Vec::new()));
            }
            let e = &mut ix.instances[k as usize];
            e.0 = i;
            e.1 = j;
            e.2.push(pop);
        }
        Ok(ix)
    }

    pub fn lsnn_for(&self, slot: Slot) -> PopId {
        match slot {
            Slot::Sentence(i) => self.sentence_lsnn[i as usize],
            _ => self.question_lsnn,
        }
    }
}

/// True if the population belongs to the feed-forward (post-embedding) part.
pub fn is_feedforward(role: &Role) -> bool {
    matches!(role, Role::Gtheta { .. } | Role::Aggregation | Role::Fphi { .. } | Role::Readout | Role::Relay { .. })
}
