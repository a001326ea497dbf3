//! Populations, shared parameter blocks and the connections between them.
//!
//! A connection never owns weights. It names a [`ParamBlock`], and every
//! connection that names the same block sees the same weights and delays;
//! this is how the g_θ instances and the sentence LSNNs share parameters.

mod builders;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid_input, Result};
use crate::neuron::{NeuronKind, NeuronParams};

pub use builders::{
    build_lsnn, build_relnet, build_smnist_network, gtheta_pairs, is_feedforward, LsnnSpec, RelNetConfig, RelNetIndex,
    SmnistConfig,
};

pub type PopId = usize;
pub type BlockId = usize;

/// Which stimulus an input or embedding population carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Stimulus,
    Sentence(u32),
    Question,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Input { slot: Slot },
    /// Recurrent embedding network.
    Lsnn { slot: Slot },
    /// Generic recurrent or hidden population.
    Hidden,
    /// Layer `layer` (1-based) of the g_θ instance for sentence pair (i, j),
    /// both 0-based.
    Gtheta { instance: u32, i: u32, j: u32, layer: u8 },
    Aggregation,
    Fphi { layer: u8 },
    Readout,
    /// One-to-one copy of `source`, serving consumer group `group`.
    Relay { source: PopId, group: u32 },
}

impl Role {
    /// Subsystem name used in reports.
    pub fn key(&self) -> &'static str {
        match self {
            Role::Input { .. } => "input",
            Role::Lsnn { .. } => "lsnn",
            Role::Hidden => "hidden",
            Role::Gtheta { .. } => "gtheta",
            Role::Aggregation => "aggregation",
            Role::Fphi { .. } => "fphi",
            Role::Readout => "readout",
            Role::Relay { .. } => "relay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub id: PopId,
    pub name: String,
    pub size: u32,
    /// Parameters of the AHP neurons when `ahp_subset` is set, of every
    /// neuron otherwise.
    pub params: NeuronParams,
    /// Sorted indices of neurons that carry an AHP current.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ahp_subset: Option<Vec<u32>>,
    pub role: Role,
}

impl Population {
    pub fn has_ahp(&self, neuron: u32) -> bool {
        if self.params.kind != NeuronKind::LifAhp {
            return false;
        }
        match &self.ahp_subset {
            Some(set) => set.binary_search(&neuron).is_ok(),
            None => true,
        }
    }

    pub fn ahp_count(&self) -> u32 {
        if self.params.kind != NeuronKind::LifAhp {
            return 0;
        }
        self.ahp_subset.as_ref().map_or(self.size, |s| s.len() as u32)
    }

    /// Effective parameters of one neuron.
    pub fn neuron_params(&self, neuron: u32) -> NeuronParams {
        if self.params.kind == NeuronKind::LifAhp && !self.has_ahp(neuron) {
            self.params.without_ahp()
        } else {
            self.params.clone()
        }
    }

    pub fn is_input(&self) -> bool {
        self.params.kind == NeuronKind::InputSource
    }

    pub fn is_readout(&self) -> bool {
        self.params.kind == NeuronKind::Readout
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum Layout {
    /// `rows` presynaptic by `cols` postsynaptic, row-major.
    Dense { rows: u32, cols: u32 },
    OneToOne { n: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Free,
    Excitatory,
    Inhibitory,
}

impl Sign {
    pub fn admits(self, w: f64) -> bool {
        match self {
            Sign::Free => true,
            Sign::Excitatory => w >= 0.0,
            Sign::Inhibitory => w <= 0.0,
        }
    }

    pub fn project(self, w: f64) -> f64 {
        match self {
            Sign::Free => w,
            Sign::Excitatory => w.max(0.0),
            Sign::Inhibitory => w.min(0.0),
        }
    }
}

/// Weights and delays shared by every connection that references the block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub tag: String,
    pub layout: Layout,
    pub weights: Vec<f64>,
    pub delays: Vec<u8>,
    /// Active synapses of a sparse block; inactive entries hold weight 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
    /// Sign constraint per presynaptic neuron.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_signs: Option<Vec<Sign>>,
    #[serde(default)]
    pub frozen: bool,
}

impl ParamBlock {
    pub fn dense(tag: impl Into<String>, rows: u32, cols: u32, weights: Vec<f64>, delays: Vec<u8>) -> Self {
        Self {
            tag: tag.into(),
            layout: Layout::Dense { rows, cols },
            weights,
            delays,
            mask: None,
            row_signs: None,
            frozen: false,
        }
    }

    pub fn one_to_one(tag: impl Into<String>, weights: Vec<f64>, delays: Vec<u8>) -> Self {
        let n = weights.len() as u32;
        Self {
            tag: tag.into(),
            layout: Layout::OneToOne { n },
            weights,
            delays,
            mask: None,
            row_signs: None,
            frozen: false,
        }
    }

    pub fn rows(&self) -> u32 {
        match self.layout {
            Layout::Dense { rows, .. } => rows,
            Layout::OneToOne { n } => n,
        }
    }

    pub fn cols(&self) -> u32 {
        match self.layout {
            Layout::Dense { cols, .. } => cols,
            Layout::OneToOne { n } => n,
        }
    }

    pub fn len(&self) -> usize {
        match self.layout {
            Layout::Dense { rows, cols } => rows as usize * cols as usize,
            Layout::OneToOne { n } => n as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[k])
    }

    /// Number of synapses present (masked entries excluded).
    pub fn synapse_count(&self) -> u64 {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count() as u64,
            None => self.len() as u64,
        }
    }

    pub fn max_delay(&self) -> u8 {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    pub fn row_sign(&self, row: u32) -> Sign {
        self.row_signs.as_ref().map_or(Sign::Free, |s| s[row as usize])
    }

    /// Flat index and target neuron of every active synapse of presynaptic
    /// neuron `row`.
    pub fn row_synapses(&self, row: u32) -> impl Iterator<Item = (usize, u32)> + '_ {
        let (start, cols) = match self.layout {
            Layout::Dense { cols, .. } => (row as usize * cols as usize, cols),
            Layout::OneToOne { .. } => (row as usize, 1),
        };
        let one_to_one = matches!(self.layout, Layout::OneToOne { .. });
        (0..cols).filter_map(move |c| {
            let k = start + c as usize;
            if !self.is_active(k) {
                return None;
            }
            Some((k, if one_to_one { row } else { c }))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.weights.len() != n || self.delays.len() != n {
            return Err(invalid_input(format!(
                "block {}: expected {n} weights and delays, found {} and {}",
                self.tag,
                self.weights.len(),
                self.delays.len()
            )));
        }
        if let Some(m) = &self.mask {
            if m.len() != n {
                return Err(invalid_input(format!("block {}: mask length {} != {n}", self.tag, m.len())));
            }
            if m.iter().zip(&self.weights).any(|(&on, &w)| !on && w != 0.0) {
                return Err(invalid_input(format!("block {}: inactive synapse with nonzero weight", self.tag)));
            }
        }
        if let Some(s) = &self.row_signs {
            if s.len() != self.rows() as usize {
                return Err(invalid_input(format!("block {}: {} row signs for {} rows", self.tag, s.len(), self.rows())));
            }
            for r in 0..self.rows() {
                let sign = s[r as usize];
                if self.row_synapses(r).any(|(k, _)| !sign.admits(self.weights[k])) {
                    return Err(invalid_input(format!("block {}: row {r} violates its sign constraint", self.tag)));
                }
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid_input(format!("block {}: non-finite weight", self.tag)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub src: PopId,
    pub dst: PopId,
    pub block: BlockId,
}

/// Which builder produced a graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    #[default]
    Generic,
    Lsnn,
    Smnist { config: SmnistConfig },
    Relnet { config: RelNetConfig },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    #[serde(default)]
    pub kind: GraphKind,
    pub populations: Vec<Population>,
    pub blocks: Vec<ParamBlock>,
    pub connections: Vec<Connection>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCount {
    pub id: PopId,
    pub name: String,
    pub neurons: u64,
    pub ahp_neurons: u64,
    pub incoming_synapses: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCount {
    /// All neurons including input sources.
    pub neurons: u64,
    /// Neurons that are simulated (input sources excluded).
    pub compute_neurons: u64,
    pub input_neurons: u64,
    pub synapses: u64,
    pub per_population: Vec<PopulationCount>,
}

impl NetworkGraph {
    pub fn new(kind: GraphKind) -> Self {
        Self { kind, ..Default::default() }
    }

    pub fn add_population(&mut self, name: impl Into<String>, size: u32, params: NeuronParams, role: Role) -> PopId {
        let id = self.populations.len();
        self.populations.push(Population { id, name: name.into(), size, params, ahp_subset: None, role });
        id
    }

    pub fn add_block(&mut self, block: ParamBlock) -> BlockId {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    /// Adds a connection after checking that the block fits both ends.
    pub fn connect(&mut self, src: PopId, dst: PopId, block: BlockId) -> Result<()> {
        self.check_connection(&Connection { src, dst, block })?;
        self.connections.push(Connection { src, dst, block });
        Ok(())
    }

    fn check_connection(&self, c: &Connection) -> Result<()> {
        let (Some(s), Some(d)) = (self.populations.get(c.src), self.populations.get(c.dst)) else {
            return Err(invalid_input(format!("connection {}->{} references a missing population", c.src, c.dst)));
        };
        let Some(b) = self.blocks.get(c.block) else {
            return Err(invalid_input(format!("connection {}->{} references missing block {}", c.src, c.dst, c.block)));
        };
        if b.rows() != s.size || b.cols() != d.size {
            return Err(invalid_input(format!(
                "block {} is {}x{} but connects {} ({}) to {} ({})",
                b.tag,
                b.rows(),
                b.cols(),
                s.name,
                s.size,
                d.name,
                d.size
            )));
        }
        if d.is_input() {
            return Err(invalid_input(format!("input population {} cannot receive connections", d.name)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.populations.iter().enumerate() {
            if p.id != i {
                return Err(invalid_input(format!("population {} has id {} at index {i}", p.name, p.id)));
            }
            p.params.validate()?;
            if let Some(set) = &p.ahp_subset {
                if set.windows(2).any(|w| w[0] >= w[1]) || set.last().is_some_and(|&l| l >= p.size) {
                    return Err(invalid_input(format!("population {}: AHP subset unsorted or out of range", p.name)));
                }
            }
        }
        for b in &self.blocks {
            b.validate()?;
        }
        for c in &self.connections {
            self.check_connection(c)?;
            let is_relay = matches!(self.populations[c.dst].role, Role::Relay { .. });
            if is_relay && !matches!(self.blocks[c.block].layout, Layout::OneToOne { .. }) {
                return Err(invalid_input("relay populations take one-to-one input only"));
            }
        }
        Ok(())
    }

    pub fn population(&self, name: &str) -> Option<&Population> {
        self.populations.iter().find(|p| p.name == name)
    }

    pub fn incoming(&self, dst: PopId) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(move |c| c.dst == dst)
    }

    pub fn outgoing(&self, src: PopId) -> impl Iterator<Item = &Connection> {
        self.connections.iter().filter(move |c| c.src == src)
    }

    pub fn max_delay(&self) -> u8 {
        self.connections.iter().map(|c| self.blocks[c.block].max_delay()).max().unwrap_or(0)
    }

    pub fn synapse_count(&self, c: &Connection) -> u64 {
        self.blocks[c.block].synapse_count()
    }

    pub fn count_resources(&self) -> ResourceCount {
        let mut incoming = vec![0u64; self.populations.len()];
        for c in &self.connections {
            incoming[c.dst] += self.synapse_count(c);
        }
        let mut out = ResourceCount::default();
        for p in &self.populations {
            let n = p.size as u64;
            out.neurons += n;
            if p.is_input() {
                out.input_neurons += n;
            } else {
                out.compute_neurons += n;
            }
            out.synapses += incoming[p.id];
            out.per_population.push(PopulationCount {
                id: p.id,
                name: p.name.clone(),
                neurons: n,
                ahp_neurons: p.ahp_count() as u64,
                incoming_synapses: incoming[p.id],
            });
        }
        out
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("graph serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Drops every population for which `keep` is false, with its
    /// connections and any block no remaining connection uses. Ids are
    /// renumbered in order.
    pub fn retain_populations(&mut self, keep: impl Fn(&Population) -> bool) {
        let mut remap = vec![None; self.populations.len()];
        let mut pops = Vec::new();
        for p in self.populations.drain(..) {
            if keep(&p) {
                remap[p.id] = Some(pops.len());
                pops.push(p);
            }
        }
        for (i, p) in pops.iter_mut().enumerate() {
            p.id = i;
            if let Role::Relay { source, .. } = &mut p.role {
                if let Some(new) = remap[*source] {
                    *source = new;
                }
            }
        }
        self.populations = pops;
        self.connections.retain(|c| remap[c.src].is_some() && remap[c.dst].is_some());
        let mut used = vec![false; self.blocks.len()];
        for c in &self.connections {
            used[c.block] = true;
        }
        let mut block_map = vec![0; self.blocks.len()];
        let mut blocks = Vec::new();
        for (b, block) in self.blocks.drain(..).enumerate() {
            if used[b] {
                block_map[b] = blocks.len();
                blocks.push(block);
            }
        }
        self.blocks = blocks;
        for c in &mut self.connections {
            c.src = remap[c.src].unwrap();
            c.dst = remap[c.dst].unwrap();
            c.block = block_map[c.block];
        }
    }

    /// Populations of each role kind, in graph order.
    pub fn role_groups(&self) -> BTreeMap<&'static str, Vec<PopId>> {
        let mut m: BTreeMap<&'static str, Vec<PopId>> = BTreeMap::new();
        for p in &self.populations {
            m.entry(p.role.key()).or_default().push(p.id);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_counts_zero() {
        let g = NetworkGraph::default();
        let c = g.count_resources();
        assert_eq!((c.neurons, c.synapses), (0, 0));
    }

    #[test]
    fn dense_three_by_four() {
        let mut g = NetworkGraph::default();
        let a = g.add_population("a", 3, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
        let b = g.add_population("b", 4, NeuronParams::lif(20.0, 5.0, 1.0, 0), Role::Hidden);
        let blk = g.add_block(ParamBlock::dense("w", 3, 4, vec![0.0; 12], vec![1; 12]));
        g.connect(a, b, blk).unwrap();
        let c = g.count_resources();
        assert_eq!(c.synapses, 12);
        assert_eq!(c.neurons, 7);
        assert_eq!(c.compute_neurons, 4);
        g.validate().unwrap();
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = NetworkGraph::default();
        let a = g.add_population("a", 3, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
        let b = g.add_population("b", 4, NeuronParams::lif(20.0, 5.0, 1.0, 0), Role::Hidden);
        let blk = g.add_block(ParamBlock::dense("w", 4, 4, vec![0.0; 16], vec![1; 16]));
        assert!(g.connect(a, b, blk).is_err());
        assert!(g.connect(a, 9, blk).is_err());
    }

    #[test]
    fn row_synapses_respects_mask_and_layout() {
        let mut b = ParamBlock::dense("w", 2, 3, vec![1.0, 0.0, 2.0, 3.0, 4.0, 5.0], vec![1; 6]);
        b.mask = Some(vec![true, false, true, true, true, true]);
        assert_eq!(b.row_synapses(0).collect::<Vec<_>>(), vec![(0, 0), (2, 2)]);
        assert_eq!(b.row_synapses(1).map(|x| x.1).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(b.synapse_count(), 5);
        let o = ParamBlock::one_to_one("r", vec![2.0; 4], vec![0; 4]);
        assert_eq!(o.row_synapses(3).collect::<Vec<_>>(), vec![(3, 3)]);
    }

    #[test]
    fn retain_drops_connections_and_blocks() {
        let mut g = NetworkGraph::default();
        let a = g.add_population("a", 2, NeuronParams::input_source(), Role::Input { slot: Slot::Stimulus });
        let b = g.add_population("b", 2, NeuronParams::lif(20.0, 5.0, 1.0, 0), Role::Hidden);
        let c = g.add_population("c", 1, NeuronParams::readout(5.0, 20.0, 10), Role::Readout);
        let ab = g.add_block(ParamBlock::dense("ab", 2, 2, vec![1.0; 4], vec![1; 4]));
        let bc = g.add_block(ParamBlock::dense("bc", 2, 1, vec![1.0; 2], vec![1; 2]));
        g.connect(a, b, ab).unwrap();
        g.connect(b, c, bc).unwrap();
        g.retain_populations(|p| !p.is_readout());
        assert_eq!(g.populations.len(), 2);
        assert_eq!(g.blocks.len(), 1);
        assert_eq!(g.connections, vec![Connection { src: 0, dst: 1, block: 0 }]);
        g.validate().unwrap();
    }

    #[test]
    fn hash_changes_with_weights() {
        let mut g = NetworkGraph::default();
        g.add_block(ParamBlock::one_to_one("r", vec![1.0; 2], vec![1; 2]));
        let h = g.hash();
        assert_eq!(h, g.clone().hash());
        g.blocks[0].weights[0] = 2.0;
        assert_ne!(h, g.hash());
    }
}
