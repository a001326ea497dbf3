//! Neuro-core placement.
//!
//! The hardware is a board of chips, each a block of neuro-cores. A core
//! hosts one contiguous slice of one population. An axon `(i, C)` carries
//! every spike of neuron `i` to core `C`; a core's input axons are the
//! distinct presynaptic neurons feeding it and its output axons are the
//! `(neuron, destination core)` pairs of the neurons it hosts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::network::{
    GraphKind, Layout, NetworkGraph, ParamBlock, PopId, RelNetIndex, Role, Slot,
};
use crate::neuron::NeuronParams;
use crate::TOOL_VERSION;

fn unplaceable(msg: impl Into<String>) -> Error {
    Error::Unplaceable(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreBudget {
    pub max_neurons_1comp: u32,
    pub max_neurons_2comp: u32,
    /// One unit per synapse.
    pub synapse_memory: u64,
    pub input_axons: u64,
    pub output_axons_interchip: u64,
    pub output_axons_intrachip: u64,
    /// Distinct destination cores per neuron.
    pub neuron_core_fanout: u64,
    /// Extra per-core neuron cap for a network class (128 for RelNets).
    #[serde(default)]
    pub class_cap: Option<u32>,
}

impl Default for CoreBudget {
    fn default() -> Self {
        Self {
            max_neurons_1comp: 1024,
            max_neurons_2comp: 512,
            synapse_memory: 40_000,
            input_axons: 4096,
            output_axons_interchip: 2048,
            output_axons_intrachip: 4096,
            neuron_core_fanout: 512,
            class_cap: None,
        }
    }
}

impl CoreBudget {
    pub fn relnet() -> Self {
        Self { class_cap: Some(128), ..Self::default() }
    }

    /// RelNet graphs get the 128-neuron class cap; others the plain budget.
    pub fn for_graph(graph: &NetworkGraph) -> Self {
        match graph.kind {
            GraphKind::Relnet { .. } => Self::relnet(),
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.max_neurons_1comp as u64,
            self.max_neurons_2comp as u64,
            self.synapse_memory,
            self.input_axons,
            self.output_axons_interchip,
            self.output_axons_intrachip,
            self.neuron_core_fanout,
            self.class_cap.unwrap_or(1) as u64,
        ];
        if all.contains(&0) {
            return Err(invalid_param("core budget entries must be positive"));
        }
        Ok(())
    }

    pub fn neuron_cap(&self, any_ahp: bool) -> u32 {
        let base = if any_ahp { self.max_neurons_2comp } else { self.max_neurons_1comp };
        self.class_cap.map_or(base, |c| base.min(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardModel {
    pub chips: u32,
    pub cores_per_chip: u32,
}

impl Default for BoardModel {
    fn default() -> Self {
        Self { chips: 32, cores_per_chip: 128 }
    }
}

impl BoardModel {
    pub fn total_cores(&self) -> u32 {
        self.chips * self.cores_per_chip
    }
}

/// Union of presynaptic rows of one source population.
enum RowSet {
    All(u32),
    Some(Vec<bool>),
}

impl RowSet {
    fn count(&self) -> u64 {
        match self {
            RowSet::All(n) => *n as u64,
            RowSet::Some(b) => b.iter().filter(|&&x| x).count() as u64,
        }
    }
}

/// Resources of one candidate slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceLoad {
    pub neurons: u32,
    pub ahp_neurons: u32,
    pub synapses: u64,
    pub input_axons: u64,
}

/// Synapses and distinct presynaptic neurons of `pop[range]`.
pub fn slice_load(graph: &NetworkGraph, pop: PopId, range: Range<u32>) -> SliceLoad {
    let p = &graph.populations[pop];
    let ahp_neurons = match (&p.ahp_subset, p.ahp_count()) {
        (_, 0) => 0,
        (Some(set), _) => (set.partition_point(|&i| i < range.end) - set.partition_point(|&i| i < range.start)) as u32,
        (None, _) => range.len() as u32,
    };
    let mut sets: BTreeMap<PopId, RowSet> = BTreeMap::new();
    let mut synapses = 0u64;
    let (s, e) = (range.start as usize, range.end as usize);
    for c in graph.incoming(pop) {
        let b = &graph.blocks[c.block];
        let rows = b.rows();
        let entry = sets.entry(c.src).or_insert_with(|| RowSet::Some(vec![false; rows as usize]));
        let mut mark = |r: usize| {
            if let RowSet::Some(bits) = entry {
                bits[r] = true;
            }
        };
        match (b.layout, &b.mask) {
            (Layout::Dense { rows, .. }, None) => {
                synapses += rows as u64 * (e - s) as u64;
                if e > s {
                    *entry = RowSet::All(rows);
                }
            }
            (Layout::Dense { rows, cols }, Some(mask)) => {
                for r in 0..rows as usize {
                    let base = r * cols as usize;
                    let n = mask[base + s..base + e].iter().filter(|&&x| x).count();
                    if n > 0 {
                        synapses += n as u64;
                        mark(r);
                    }
                }
            }
            (Layout::OneToOne { .. }, mask) => {
                for k in s..e {
                    if mask.as_ref().is_none_or(|m| m[k]) {
                        synapses += 1;
                        mark(k);
                    }
                }
            }
        }
    }
    SliceLoad { neurons: range.len() as u32, ahp_neurons, synapses, input_axons: sets.values().map(RowSet::count).sum() }
}

/// Output-axon constraint for a population whose consumers are already
/// placed: `per_neuron[k]` axons for neuron `k`, at most `limit` per core.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputLimit {
    pub per_neuron: Vec<u64>,
    pub limit: u64,
}

fn even_ranges(n: u32, k: u32) -> Vec<Range<u32>> {
    let (q, r) = (n / k, n % k);
    let mut out = Vec::with_capacity(k as usize);
    let mut at = 0;
    for i in 0..k {
        let len = q + u32::from(i < r);
        out.push(at..at + len);
        at += len;
    }
    out
}

/// Splits a population into the fewest equal-as-possible contiguous slices
/// that each respect the neuron cap, synapse memory and input-axon budget
/// (and `out`, if given).
pub fn split_layer(
    graph: &NetworkGraph,
    pop: PopId,
    budget: &CoreBudget,
    out: Option<&OutputLimit>,
) -> Result<Vec<Range<u32>>> {
    let p = &graph.populations[pop];
    let n = p.size;
    if n == 0 {
        return Ok(Vec::new());
    }
    let fits = |r: &Range<u32>| {
        let l = slice_load(graph, pop, r.clone());
        let out_ok = out.is_none_or(|o| o.per_neuron[r.start as usize..r.end as usize].iter().sum::<u64>() <= o.limit);
        l.neurons <= budget.neuron_cap(l.ahp_neurons > 0)
            && l.synapses <= budget.synapse_memory
            && l.input_axons <= budget.input_axons
            && out_ok
    };
    for k in 0..n {
        if !fits(&(k..k + 1)) {
            let l = slice_load(graph, pop, k..k + 1);
            return Err(unplaceable(format!(
                "{} neuron {k} alone needs {} synapses and {} input axons",
                p.name, l.synapses, l.input_axons
            )));
        }
    }
    let whole = slice_load(graph, pop, 0..n);
    let lower = [
        n.div_ceil(budget.neuron_cap(whole.ahp_neurons > 0)),
        whole.synapses.div_ceil(budget.synapse_memory) as u32,
        1,
    ];
    let start = lower.into_iter().max().unwrap_or(1).min(n);
    for k in start..=n {
        let ranges = even_ranges(n, k);
        if ranges.iter().all(&fits) {
            return Ok(ranges);
        }
    }
    Ok(even_ranges(n, n))
}

/// Relay neuron: both decays are exactly zero, so one input spike above
/// threshold yields exactly one output spike on the next step.
pub fn relay_params() -> NeuronParams {
    NeuronParams::lif(1e-3, 1e-3, 1.0, 0)
}

pub const RELAY_WEIGHT: f64 = 2.0;

/// Instances assigned to one chip, with the sentences they draw from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GthetaGroup {
    /// Instance ids in ascending order.
    pub instances: Vec<u32>,
    pub pairs: Vec<(u32, u32)>,
    /// Distinct sentence indices.
    pub sentences: Vec<u32>,
}

impl GthetaGroup {
    fn new(pairs: Vec<(u32, u32)>, m: u32) -> Self {
        let mut pairs = pairs;
        pairs.sort_unstable();
        let instances = pairs.iter().map(|&(i, j)| instance_id(m, i, j)).collect();
        let sentences: BTreeSet<u32> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        Self { instances, pairs, sentences: sentences.into_iter().collect() }
    }

    /// Instances that read sentence `s`.
    pub fn uses(&self, s: u32) -> u32 {
        self.pairs.iter().filter(|&&(i, j)| i == s || j == s).count() as u32
    }
}

/// Index of pair (i, j), i <= j, in the builder's instance order.
pub fn instance_id(m: u32, i: u32, j: u32) -> u32 {
    // rows 0..i contribute m, m-1, ..., m-i+1 instances
    i * m - i * i.saturating_sub(1) / 2 + (j - i)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    /// Side of the square sentence blocks.
    pub side: u32,
    pub groups: Vec<GthetaGroup>,
}

impl Grouping {
    pub fn relay_layers(&self) -> u32 {
        self.groups.iter().map(|g| g.sentences.len() as u32 + 1).sum()
    }

    pub fn max_sentences_per_chip(&self) -> u32 {
        self.groups.iter().map(|g| g.sentences.len() as u32).max().unwrap_or(0)
    }

    /// Group of every instance.
    pub fn group_of(&self, instances: usize) -> Vec<u32> {
        let mut out = vec![u32::MAX; instances];
        for (g, grp) in self.groups.iter().enumerate() {
            for &k in &grp.instances {
                out[k as usize] = g as u32;
            }
        }
        out
    }
}

/// Cores a chip needs to host a group's first layers and relays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCost {
    /// Cores per g_θ first layer.
    pub l1_cores: u32,
    pub relay_size: u32,
    pub budget: CoreBudget,
}

impl GroupCost {
    pub fn from_graph(graph: &NetworkGraph, budget: &CoreBudget) -> Result<Self> {
        let ix = RelNetIndex::from_graph(graph)?;
        let l1 = ix.instances.first().map(|x| x.2[0]).ok_or_else(|| invalid_input("RelNet has no g_θ instances"))?;
        Ok(Self {
            l1_cores: split_layer(graph, l1, budget, None)?.len() as u32,
            relay_size: graph.populations[ix.question_lsnn].size,
            budget: *budget,
        })
    }

    /// Cores of one relay whose neurons each reach `fanout` cores on its chip.
    pub fn relay_cores(&self, fanout: u32) -> Option<u32> {
        if fanout as u64 > self.budget.neuron_core_fanout {
            return None;
        }
        let per_core = (self.budget.output_axons_intrachip / fanout.max(1) as u64).min(self.budget.neuron_cap(false) as u64);
        (per_core > 0).then(|| self.relay_size.div_ceil(per_core as u32))
    }

    pub fn cores(&self, g: &GthetaGroup) -> Option<u32> {
        let mut total = g.pairs.len() as u32 * self.l1_cores;
        for &s in &g.sentences {
            total += self.relay_cores(g.uses(s) * self.l1_cores)?;
        }
        total += self.relay_cores(g.pairs.len() as u32 * self.l1_cores)?;
        Some(total)
    }
}

fn blocks_for_side(m: u32, s: u32, capacity: u32, cost: &GroupCost) -> Option<Vec<GthetaGroup>> {
    let k = m.div_ceil(s);
    let block = |a: u32| (a * s)..((a + 1) * s).min(m);
    let mut pair_groups: Vec<((u32, u32), Vec<(u32, u32)>)> = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let cells = block(a).flat_map(|i| block(b).map(move |j| (i, j))).collect();
            pair_groups.push(((a, b), cells));
        }
    }
    let mut groups: Vec<Vec<(u32, u32)>> = Vec::new();
    let fits = |cells: &[(u32, u32)]| cost.cores(&GthetaGroup::new(cells.to_vec(), m)).is_some_and(|c| c <= capacity);
    if pair_groups.iter().any(|(_, c)| !fits(c)) {
        return None;
    }
    let mut standalone = Vec::new();
    for a in 0..k {
        let tri: Vec<(u32, u32)> = block(a).flat_map(|i| block(a).filter(move |&j| j >= i).map(move |j| (i, j))).collect();
        let next = (a + 1) % k;
        let mut order: Vec<usize> = (0..pair_groups.len()).collect();
        let pref = pair_groups.iter().position(|((x, y), _)| (*x, *y) == (a.min(next), a.max(next)));
        if let Some(p) = pref {
            order.retain(|&i| i != p);
            order.insert(0, p);
        }
        order.retain(|&i| {
            let (x, y) = pair_groups[i].0;
            x == a || y == a
        });
        let host = order.into_iter().find(|&i| {
            let mut cells = pair_groups[i].1.clone();
            cells.extend(&tri);
            fits(&cells)
        });
        match host {
            Some(i) => pair_groups[i].1.extend(tri),
            None if fits(&tri) => standalone.push(tri),
            None => return None,
        }
    }
    groups.extend(pair_groups.into_iter().map(|(_, c)| c));
    groups.extend(standalone);
    Some(groups.into_iter().map(|c| GthetaGroup::new(c, m)).collect())
}

/// Partitions the instances (i, j) into square blocks of the sentence
/// grid, one block per chip. Every pair of sentence blocks forms a group;
/// the triangle of a block joins one of its pair groups when it fits and
/// stands alone otherwise. The side minimizing relay layers, then the
/// distinct sentences per chip, then the chip count, wins.
pub fn group_gtheta_instances(m: u32, capacity: u32, cost: &GroupCost) -> Result<Grouping> {
    if m == 0 {
        return Err(invalid_param("grouping needs m >= 1"));
    }
    let mut best: Option<((u32, u32, usize), Grouping)> = None;
    for side in 1..=m {
        let Some(groups) = blocks_for_side(m, side, capacity, cost) else {
            continue;
        };
        let g = Grouping { side, groups };
        let key = (g.relay_layers(), g.max_sentences_per_chip(), g.groups.len());
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, g));
        }
    }
    best.map(|(_, g)| g).ok_or_else(|| unplaceable(format!("no square grouping of {m} sentences fits {capacity} cores")))
}

/// The grouping used for a RelNet graph under `budget` and `board`.
pub fn relnet_grouping(graph: &NetworkGraph, budget: &CoreBudget, board: &BoardModel) -> Result<Grouping> {
    let m = crate::sim::relnet_config(graph)?.m;
    group_gtheta_instances(m, board.cores_per_chip, &GroupCost::from_graph(graph, budget)?)
}

/// Inserts one relay layer per (LSNN, group) that the group reads, and
/// rewires the group's g_θ first layers to read from their relays.
pub fn insert_relays(graph: &NetworkGraph, grouping: &Grouping) -> Result<NetworkGraph> {
    let ix = RelNetIndex::from_graph(graph)?;
    if !ix.relays.is_empty() {
        return Err(invalid_input("graph already has relay layers"));
    }
    let group_of = grouping.group_of(ix.instances.len());
    if group_of.contains(&u32::MAX) {
        return Err(invalid_input("grouping does not cover every g_θ instance"));
    }
    let mut g = graph.clone();
    let size = g.populations[ix.question_lsnn].size;
    let block = g.add_block(ParamBlock {
        frozen: true,
        ..ParamBlock::one_to_one("relay", vec![RELAY_WEIGHT; size as usize], vec![0; size as usize])
    });
    let mut relay_of: BTreeMap<(PopId, u32), PopId> = BTreeMap::new();
    for (gi, grp) in grouping.groups.iter().enumerate() {
        let sources = grp.sentences.iter().map(|&s| (ix.sentence_lsnn[s as usize], format!("sentence[{s}]"))).chain([(ix.question_lsnn, "question".to_string())]);
        for (src, name) in sources {
            let r = g.add_population(format!("relay[{name}].g{gi}"), size, relay_params(), Role::Relay { source: src, group: gi as u32 });
            g.connect(src, r, block)?;
            relay_of.insert((src, gi as u32), r);
        }
    }
    let l1_group: BTreeMap<PopId, u32> = ix.instances.iter().enumerate().map(|(k, x)| (x.2[0], group_of[k])).collect();
    for c in &mut g.connections {
        if let Some(&grp) = l1_group.get(&c.dst) {
            if matches!(graph.populations[c.src].role, Role::Lsnn { .. }) {
                c.src = relay_of[&(c.src, grp)];
            }
        }
    }
    g.validate()?;
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Naive,
    Optimized,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Naive => "naive",
            Strategy::Optimized => "optimized",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "optimized" => Ok(Strategy::Optimized),
            _ => Err(invalid_input(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub pop: PopId,
    pub start: u32,
    pub end: u32,
    pub chip: u32,
    pub core: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub strategy: Strategy,
    pub board: BoardModel,
    pub slices: Vec<Slice>,
}

impl Placement {
    pub fn empty(strategy: Strategy, board: BoardModel) -> Self {
        Self { strategy, board, slices: Vec::new() }
    }

    pub fn global_core(&self, s: &Slice) -> u32 {
        s.chip * self.board.cores_per_chip + s.core
    }

    pub fn cores_used(&self) -> u32 {
        self.slices.len() as u32
    }

    pub fn chips_used(&self) -> u32 {
        self.slices.iter().map(|s| s.chip).collect::<BTreeSet<_>>().len() as u32
    }

    /// Cores per subsystem (role key).
    pub fn cores_by_role(&self, graph: &NetworkGraph) -> BTreeMap<String, u32> {
        let mut out = BTreeMap::new();
        for s in &self.slices {
            *out.entry(graph.populations[s.pop].role.key().to_string()).or_insert(0) += 1;
        }
        out
    }

    /// Cores not hosting input sources.
    pub fn compute_cores(&self, graph: &NetworkGraph) -> u32 {
        self.slices.iter().filter(|s| !graph.populations[s.pop].is_input()).count() as u32
    }

    fn sort(&mut self) {
        self.slices.sort_by_key(|s| (s.pop, s.start));
    }
}

/// Neuron to core lookup.
struct Locator {
    /// Per population: (start, end, global core), sorted by start.
    by_pop: Vec<Vec<(u32, u32, u32)>>,
    chip_of: BTreeMap<u32, u32>,
    pop_of: BTreeMap<u32, PopId>,
}

impl Locator {
    fn new(p: &Placement, pops: usize) -> Self {
        let mut by_pop = vec![Vec::new(); pops];
        let mut chip_of = BTreeMap::new();
        let mut pop_of = BTreeMap::new();
        for s in &p.slices {
            let gc = p.global_core(s);
            if s.pop < pops {
                by_pop[s.pop].push((s.start, s.end, gc));
            }
            chip_of.insert(gc, s.chip);
            pop_of.insert(gc, s.pop);
        }
        for v in &mut by_pop {
            v.sort_unstable();
        }
        Self { by_pop, chip_of, pop_of }
    }

    fn core_of(&self, pop: PopId, k: u32) -> Option<u32> {
        let v = &self.by_pop[pop];
        let i = v.partition_point(|&(s, _, _)| s <= k);
        (i > 0 && k < v[i - 1].1).then(|| v[i - 1].2)
    }

    fn placed(&self, pop: PopId) -> bool {
        !self.by_pop[pop].is_empty()
    }
}

/// Distinct destination cores of every neuron of `pop`, sorted. Unplaced
/// destinations are skipped.
fn dest_cores(graph: &NetworkGraph, loc: &Locator, pop: PopId) -> Vec<Vec<u32>> {
    let n = graph.populations[pop].size as usize;
    let mut out = vec![Vec::new(); n];
    for c in graph.outgoing(pop) {
        let b = &graph.blocks[c.block];
        let dst = &loc.by_pop[c.dst];
        match (b.layout, &b.mask) {
            (Layout::Dense { .. }, None) => {
                let all: Vec<u32> = dst.iter().map(|x| x.2).collect();
                out.iter_mut().for_each(|v| v.extend(&all));
            }
            (Layout::Dense { cols, .. }, Some(mask)) => {
                for (r, v) in out.iter_mut().enumerate() {
                    let row = &mask[r * cols as usize..(r + 1) * cols as usize];
                    for &(s, e, gc) in dst {
                        if row[s as usize..e as usize].iter().any(|&x| x) {
                            v.push(gc);
                        }
                    }
                }
            }
            (Layout::OneToOne { .. }, mask) => {
                for (k, v) in out.iter_mut().enumerate() {
                    if mask.as_ref().is_none_or(|m| m[k]) {
                        if let Some(gc) = loc.core_of(c.dst, k as u32) {
                            v.push(gc);
                        }
                    }
                }
            }
        }
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

/// Hands out cores chip by chip.
struct Allocator {
    board: BoardModel,
    chip: u32,
    next: u32,
}

impl Allocator {
    fn new(board: BoardModel) -> Self {
        Self { board, chip: 0, next: 0 }
    }

    /// Moves to a fresh chip unless `n` cores fit on the current one; a
    /// request larger than a chip straddles.
    fn reserve(&mut self, n: u32) {
        if n <= self.board.cores_per_chip && self.next + n > self.board.cores_per_chip {
            self.chip += 1;
            self.next = 0;
        }
    }

    fn take(&mut self) -> Result<(u32, u32)> {
        if self.next == self.board.cores_per_chip {
            self.chip += 1;
            self.next = 0;
        }
        if self.chip >= self.board.chips {
            return Err(unplaceable(format!("board capacity of {} cores exceeded", self.board.total_cores())));
        }
        self.next += 1;
        Ok((self.chip, self.next - 1))
    }
}

fn push_ranges(p: &mut Placement, alloc: &mut Allocator, pop: PopId, ranges: &[Range<u32>]) -> Result<()> {
    for r in ranges {
        let (chip, core) = alloc.take()?;
        p.slices.push(Slice { pop, start: r.start, end: r.end, chip, core });
    }
    Ok(())
}

/// Output-axon limit for `pop` when every consumer other than itself is
/// already placed.
fn output_limit(graph: &NetworkGraph, p: &Placement, pop: PopId, limit: u64) -> Option<OutputLimit> {
    let loc = Locator::new(p, graph.populations.len());
    let mut any = false;
    for c in graph.outgoing(pop) {
        if c.dst == pop || !loc.placed(c.dst) {
            return None;
        }
        any = true;
    }
    any.then(|| OutputLimit { per_neuron: dest_cores(graph, &loc, pop).iter().map(|v| v.len() as u64).collect(), limit })
}

/// Places `graph` on the board.
///
/// `Naive` fills cores in population order and ignores chips. `Optimized`
/// keeps populations on one chip where they fit and, for RelNets, puts each
/// g_θ group's first layers and relays on one chip and the remaining layers
/// of each instance together on another.
pub fn place(graph: &NetworkGraph, strategy: Strategy, budget: &CoreBudget, board: &BoardModel) -> Result<Placement> {
    budget.validate()?;
    let mut p = Placement::empty(strategy, *board);
    let mut alloc = Allocator::new(*board);
    match (strategy, &graph.kind) {
        (Strategy::Naive, _) => {
            for pop in 0..graph.populations.len() {
                let out = output_limit(graph, &p, pop, budget.output_axons_interchip);
                let ranges = split_layer(graph, pop, budget, out.as_ref())?;
                push_ranges(&mut p, &mut alloc, pop, &ranges)?;
            }
        }
        (Strategy::Optimized, GraphKind::Relnet { .. }) => place_relnet(graph, budget, board, &mut p, &mut alloc)?,
        (Strategy::Optimized, _) => {
            for pop in 0..graph.populations.len() {
                let ranges = split_layer(graph, pop, budget, None)?;
                alloc.reserve(ranges.len() as u32);
                push_ranges(&mut p, &mut alloc, pop, &ranges)?;
            }
        }
    }
    p.sort();
    Ok(p)
}

fn place_relnet(graph: &NetworkGraph, budget: &CoreBudget, board: &BoardModel, p: &mut Placement, alloc: &mut Allocator) -> Result<()> {
    let ix = RelNetIndex::from_graph(graph)?;
    let grouping = relnet_grouping(graph, budget, board)?;
    let cost = GroupCost::from_graph(graph, budget)?;
    let mut done = vec![false; graph.populations.len()];
    let affine = |p: &mut Placement, alloc: &mut Allocator, pop: PopId, done: &mut Vec<bool>| -> Result<()> {
        let ranges = split_layer(graph, pop, budget, None)?;
        alloc.reserve(ranges.len() as u32);
        push_ranges(p, alloc, pop, &ranges)?;
        done[pop] = true;
        Ok(())
    };

    // embedding side and the output stage share the first chip(s)
    for pop in &graph.populations {
        let early = matches!(pop.role, Role::Input { .. } | Role::Lsnn { .. } | Role::Hidden);
        let late = matches!(pop.role, Role::Aggregation | Role::Fphi { .. } | Role::Readout);
        if early || late {
            affine(p, alloc, pop.id, &mut done)?;
        }
    }

    let mut relays_by_group: BTreeMap<u32, Vec<PopId>> = BTreeMap::new();
    for &(r, _, g) in &ix.relays {
        if g as usize >= grouping.groups.len() {
            return Err(invalid_input(format!("relay {} names group {g}, grouping has {}", graph.populations[r].name, grouping.groups.len())));
        }
        relays_by_group.entry(g).or_default().push(r);
    }
    for (gi, grp) in grouping.groups.iter().enumerate() {
        alloc.reserve(cost.cores(grp).unwrap_or(board.cores_per_chip));
        let chip = alloc.chip;
        for &k in &grp.instances {
            let l1 = ix.instances[k as usize].2[0];
            let ranges = split_layer(graph, l1, budget, None)?;
            push_ranges(p, alloc, l1, &ranges)?;
            done[l1] = true;
        }
        for &r in relays_by_group.get(&(gi as u32)).map(Vec::as_slice).unwrap_or_default() {
            let out = output_limit(graph, p, r, budget.output_axons_intrachip);
            let ranges = split_layer(graph, r, budget, out.as_ref())?;
            push_ranges(p, alloc, r, &ranges)?;
            done[r] = true;
        }
        if alloc.chip != chip {
            return Err(unplaceable(format!("g_θ group {gi} does not fit on one chip")));
        }
        // spare cores take whole instances' later layers
        for &k in &grp.instances {
            let later = later_layers(graph, budget, &ix.instances[k as usize].2[1..])?;
            let need: u32 = later.iter().map(|x| x.1.len() as u32).sum();
            if alloc.next + need <= board.cores_per_chip {
                for (pop, ranges) in later {
                    push_ranges(p, alloc, pop, &ranges)?;
                    done[pop] = true;
                }
            }
        }
    }

    for grp in &grouping.groups {
        for &k in &grp.instances {
            let layers = &ix.instances[k as usize].2[1..];
            if layers.iter().all(|&l| done[l]) {
                continue;
            }
            let later = later_layers(graph, budget, layers)?;
            alloc.reserve(later.iter().map(|x| x.1.len() as u32).sum());
            for (pop, ranges) in later {
                push_ranges(p, alloc, pop, &ranges)?;
                done[pop] = true;
            }
        }
    }
    for pop in 0..graph.populations.len() {
        if !done[pop] {
            affine(p, alloc, pop, &mut done)?;
        }
    }
    Ok(())
}

/// Per-core resource usage derived from the graph and the slices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreTable {
    pub chip: u32,
    pub core: u32,
    pub pop: PopId,
    pub start: u32,
    pub end: u32,
    pub ahp_neurons: u32,
    pub synapses: u64,
    pub input_axons: u64,
    pub output_axons_intra: u64,
    pub output_axons_inter: u64,
}

/// Axon tables: per core usage and per neuron destination cores.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AxonTables {
    /// Same order as the placement's slices.
    pub cores: Vec<CoreTable>,
    /// `dest[pop][neuron]`: sorted global destination cores.
    pub dest: Vec<Vec<Vec<u32>>>,
    /// Global core of every neuron; `None` if unplaced.
    pub home: Vec<Vec<Option<u32>>>,
    pub cores_per_chip: u32,
}

impl AxonTables {
    pub fn build(graph: &NetworkGraph, p: &Placement) -> Self {
        let loc = Locator::new(p, graph.populations.len());
        let dest: Vec<Vec<Vec<u32>>> = (0..graph.populations.len()).map(|pop| dest_cores(graph, &loc, pop)).collect();
        let home: Vec<Vec<Option<u32>>> =
            graph.populations.iter().map(|pp| (0..pp.size).map(|k| loc.core_of(pp.id, k)).collect()).collect();
        let cores = p
            .slices
            .iter()
            .map(|s| {
                let l = if s.pop < graph.populations.len() && s.end <= graph.populations[s.pop].size {
                    slice_load(graph, s.pop, s.start..s.end)
                } else {
                    SliceLoad::default()
                };
                let mut t = CoreTable {
                    chip: s.chip,
                    core: s.core,
                    pop: s.pop,
                    start: s.start,
                    end: s.end,
                    ahp_neurons: l.ahp_neurons,
                    synapses: l.synapses,
                    input_axons: l.input_axons,
                    ..CoreTable::default()
                };
                if let Some(d) = dest.get(s.pop) {
                    for v in d.iter().take(s.end as usize).skip(s.start as usize) {
                        for gc in v {
                            if loc.chip_of.get(gc) == Some(&s.chip) {
                                t.output_axons_intra += 1;
                            } else {
                                t.output_axons_inter += 1;
                            }
                        }
                    }
                }
                t
            })
            .collect();
        Self { cores, dest, home, cores_per_chip: p.board.cores_per_chip }
    }

    pub fn output_axons_inter(&self, pop: PopId) -> Vec<u64> {
        self.cores.iter().filter(|c| c.pop == pop).map(|c| c.output_axons_inter).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NeuronCap,
    SynapseMemory,
    InputAxons,
    OutputAxonsInterChip,
    OutputAxonsIntraChip,
    Fanout,
    Coverage,
    CoreConflict,
    OffBoard,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chip: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pop: Option<PopId>,
    pub value: u64,
    pub limit: u64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} > {}: {}", self.kind, self.value, self.limit, self.message)
    }
}

/// Checks every core and neuron against `budget`. Empty iff legal.
pub fn verify(p: &Placement, graph: &NetworkGraph, budget: &CoreBudget) -> Vec<Violation> {
    let mut out = Vec::new();
    let npop = graph.populations.len();
    let mut seen = BTreeMap::new();
    for s in &p.slices {
        let at = format!("chip {} core {}", s.chip, s.core);
        if s.chip >= p.board.chips || s.core >= p.board.cores_per_chip {
            out.push(Violation {
                kind: ViolationKind::OffBoard,
                chip: Some(s.chip),
                core: Some(s.core),
                pop: Some(s.pop),
                value: (s.chip * p.board.cores_per_chip + s.core) as u64,
                limit: p.board.total_cores() as u64,
                message: format!("{at} is not on the board"),
            });
        }
        if let Some(prev) = seen.insert((s.chip, s.core), s.pop) {
            out.push(Violation {
                kind: ViolationKind::CoreConflict,
                chip: Some(s.chip),
                core: Some(s.core),
                pop: Some(s.pop),
                value: 2,
                limit: 1,
                message: format!("{at} holds slices of populations {prev} and {}", s.pop),
            });
        }
    }
    let mut cover: Vec<Vec<(u32, u32)>> = vec![Vec::new(); npop];
    for s in &p.slices {
        if s.pop >= npop || s.end > graph.populations[s.pop].size || s.start >= s.end {
            out.push(Violation {
                kind: ViolationKind::Coverage,
                chip: Some(s.chip),
                core: Some(s.core),
                pop: Some(s.pop),
                value: s.end as u64,
                limit: graph.populations.get(s.pop).map_or(0, |pp| pp.size as u64),
                message: format!("slice {}..{} of population {} is out of range", s.start, s.end, s.pop),
            });
        } else {
            cover[s.pop].push((s.start, s.end));
        }
    }
    for (pop, ranges) in cover.iter_mut().enumerate() {
        ranges.sort_unstable();
        let mut at = 0;
        let mut ok = true;
        for &(s, e) in ranges.iter() {
            ok &= s == at;
            at = at.max(e);
        }
        let size = graph.populations[pop].size;
        if !ok || at != size {
            out.push(Violation {
                kind: ViolationKind::Coverage,
                chip: None,
                core: None,
                pop: Some(pop),
                value: ranges.len() as u64,
                limit: size as u64,
                message: format!("{} is not placed exactly once", graph.populations[pop].name),
            });
        }
    }
    let tables = AxonTables::build(graph, p);
    for t in &tables.cores {
        let Some(pp) = graph.populations.get(t.pop) else { continue };
        let at = format!("{}[{}..{}] on chip {} core {}", pp.name, t.start, t.end, t.chip, t.core);
        let neurons = (t.end.saturating_sub(t.start)) as u64;
        let cap = budget.neuron_cap(t.ahp_neurons > 0) as u64;
        let checks = [
            (ViolationKind::NeuronCap, neurons, cap),
            (ViolationKind::SynapseMemory, t.synapses, budget.synapse_memory),
            (ViolationKind::InputAxons, t.input_axons, budget.input_axons),
            (ViolationKind::OutputAxonsInterChip, t.output_axons_inter, budget.output_axons_interchip),
            (ViolationKind::OutputAxonsIntraChip, t.output_axons_intra, budget.output_axons_intrachip),
        ];
        for (kind, value, limit) in checks {
            if value > limit {
                out.push(Violation {
                    kind,
                    chip: Some(t.chip),
                    core: Some(t.core),
                    pop: Some(t.pop),
                    value,
                    limit,
                    message: at.clone(),
                });
            }
        }
    }
    let loc = Locator::new(p, npop);
    for (pop, dests) in tables.dest.iter().enumerate() {
        let over: Vec<(usize, &Vec<u32>)> =
            dests.iter().enumerate().filter(|(_, d)| d.len() as u64 > budget.neuron_core_fanout).collect();
        let Some(&(worst, d)) = over.iter().max_by_key(|(_, d)| d.len()) else { continue };
        let external = d.iter().filter(|gc| loc.pop_of.get(gc) != Some(&pop)).count();
        out.push(Violation {
            kind: ViolationKind::Fanout,
            chip: None,
            core: None,
            pop: Some(pop),
            value: d.len() as u64,
            limit: budget.neuron_core_fanout,
            message: format!(
                "{} neurons of {} exceed the fanout limit; neuron {worst} reaches {} cores ({external} outside its population)",
                over.len(),
                graph.populations[pop].name,
                d.len()
            ),
        });
    }
    out
}

/// Largest number of destination cores outside the neuron's own population,
/// over the neurons of `pop`.
pub fn external_fanout(graph: &NetworkGraph, p: &Placement, pop: PopId) -> u64 {
    let loc = Locator::new(p, graph.populations.len());
    dest_cores(graph, &loc, pop)
        .iter()
        .map(|d| d.iter().filter(|gc| loc.pop_of.get(gc) != Some(&pop)).count() as u64)
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub pop: PopId,
    pub name: String,
    pub start: u32,
    pub end: u32,
    pub chip: u32,
    pub core: u32,
    pub synapses: u64,
    pub input_axons: u64,
    pub output_axons_intra: u64,
    pub output_axons_inter: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementSummary {
    pub cores: u32,
    pub compute_cores: u32,
    pub chips: u32,
    pub cores_by_role: BTreeMap<String, u32>,
}

/// On-disk placement: slices plus the derived axon summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementFile {
    pub format: String,
    pub tool: String,
    pub graph_hash: String,
    pub config_hash: String,
    pub strategy: Strategy,
    pub board: BoardModel,
    pub budget: CoreBudget,
    pub summary: PlacementSummary,
    pub slices: Vec<SliceRecord>,
}

pub const PLACEMENT_FORMAT: &str = "spikeplace-placement v1";

impl PlacementFile {
    pub fn new(graph: &NetworkGraph, p: &Placement, budget: &CoreBudget, config_hash: &str) -> Self {
        let tables = AxonTables::build(graph, p);
        let slices = p
            .slices
            .iter()
            .zip(&tables.cores)
            .map(|(s, t)| SliceRecord {
                pop: s.pop,
                name: graph.populations[s.pop].name.clone(),
                start: s.start,
                end: s.end,
                chip: s.chip,
                core: s.core,
                synapses: t.synapses,
                input_axons: t.input_axons,
                output_axons_intra: t.output_axons_intra,
                output_axons_inter: t.output_axons_inter,
            })
            .collect();
        Self {
            format: PLACEMENT_FORMAT.into(),
            tool: TOOL_VERSION.into(),
            graph_hash: graph.hash(),
            config_hash: config_hash.into(),
            strategy: p.strategy,
            board: p.board,
            budget: *budget,
            summary: PlacementSummary {
                cores: p.cores_used(),
                compute_cores: p.compute_cores(graph),
                chips: p.chips_used(),
                cores_by_role: p.cores_by_role(graph),
            },
            slices,
        }
    }

    pub fn placement(&self) -> Placement {
        let mut p = Placement {
            strategy: self.strategy,
            board: self.board,
            slices: self.slices.iter().map(|s| Slice { pop: s.pop, start: s.start, end: s.end, chip: s.chip, core: s.core }).collect(),
        };
        p.sort();
        p
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f: PlacementFile = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Format { what: "placement file", detail: e.to_string() })?;
        if f.format != PLACEMENT_FORMAT {
            return Err(Error::Format { what: "placement file", detail: format!("unknown format {}", f.format) });
        }
        Ok(f)
    }
}

/// LSNN slot of a relay's source, for reports.
pub fn relay_slot(graph: &NetworkGraph, relay: PopId) -> Option<Slot> {
    match graph.populations[relay].role {
        Role::Relay { source, .. } => match graph.populations[source].role {
            Role::Lsnn { slot } => Some(slot),
            _ => None,
        },
        _ => None,
    }
}

fn later_layers(graph: &NetworkGraph, budget: &CoreBudget, layers: &[PopId]) -> Result<Vec<(PopId, Vec<Range<u32>>)>> {
    layers.iter().map(|&pop| Ok((pop, split_layer(graph, pop, budget, None)?))).collect()
}
