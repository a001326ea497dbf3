//! Spike-traffic accounting and the parametric energy/latency model.
//!
//! Every spike is delivered once per output axon of its neuron, and each
//! delivery is classed as intra-core, intra-chip (core to core) or
//! inter-chip. Energy and latency are linear in their coefficients; the
//! default coefficients are placeholders, not measurements.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::network::{NetworkGraph, RelNetConfig};
use crate::placement::{
    insert_relays, place, relnet_grouping, verify, AxonTables, BoardModel, CoreBudget, Placement, Strategy,
};
use crate::raster::Raster;
use crate::TOOL_VERSION;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub intra_core: u64,
    pub intra_chip: u64,
    pub inter_chip: u64,
    pub spikes: u64,
    /// Inter-chip deliveries of each step.
    pub per_step_inter: Vec<u64>,
    pub peak_inter_chip: u64,
}

impl TrafficStats {
    pub fn deliveries(&self) -> u64 {
        self.intra_core + self.intra_chip + self.inter_chip
    }

    pub fn steps(&self) -> u32 {
        self.per_step_inter.len() as u32
    }

    /// Appends a later phase or sample.
    pub fn append(&mut self, other: &TrafficStats) {
        self.intra_core += other.intra_core;
        self.intra_chip += other.intra_chip;
        self.inter_chip += other.inter_chip;
        self.spikes += other.spikes;
        self.per_step_inter.extend(&other.per_step_inter);
        self.peak_inter_chip = self.peak_inter_chip.max(other.peak_inter_chip);
    }
}

/// Per-neuron delivery counts by class, precomputed from the axon tables.
pub struct TrafficTable {
    /// `[pop][neuron] = (intra_core, intra_chip, inter_chip)`
    classes: Vec<Vec<[u32; 3]>>,
}

impl TrafficTable {
    pub fn new(graph: &NetworkGraph, placement: &Placement) -> Result<Self> {
        for s in &placement.slices {
            if s.pop >= graph.populations.len() || s.end > graph.populations[s.pop].size {
                return Err(invalid_input(format!("placement slice {}..{} of population {} does not match the graph", s.start, s.end, s.pop)));
            }
        }
        let tables = AxonTables::build(graph, placement);
        let per = tables.cores_per_chip;
        let classes = tables
            .dest
            .iter()
            .zip(&tables.home)
            .map(|(dests, homes)| {
                dests
                    .iter()
                    .zip(homes)
                    .map(|(d, h)| {
                        let mut c = [0u32; 3];
                        if let Some(h) = h {
                            for &gc in d {
                                let k = if gc == *h {
                                    0
                                } else if gc / per == h / per {
                                    1
                                } else {
                                    2
                                };
                                c[k] += 1;
                            }
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        Ok(Self { classes })
    }

    /// Output axons of one neuron by class.
    pub fn classes(&self, pop: usize, neuron: u32) -> [u32; 3] {
        self.classes[pop][neuron as usize]
    }

    pub fn account(&self, raster: &Raster) -> Result<TrafficStats> {
        for e in &raster.events {
            let ok = self.classes.get(e.pop).is_some_and(|c| (e.neuron as usize) < c.len());
            if !ok {
                return Err(invalid_input(format!("raster spike of population {} neuron {} is not in the placed graph", e.pop, e.neuron)));
            }
        }
        let per_step: Vec<[u64; 4]> = (0..raster.steps)
            .into_par_iter()
            .map(|t| {
                let mut acc = [0u64; 4];
                for e in raster.at(t) {
                    let c = self.classes[e.pop][e.neuron as usize];
                    for k in 0..3 {
                        acc[k] += c[k] as u64;
                    }
                    acc[3] += 1;
                }
                acc
            })
            .collect();
        let mut s = TrafficStats { per_step_inter: per_step.iter().map(|a| a[2]).collect(), ..TrafficStats::default() };
        for a in &per_step {
            s.intra_core += a[0];
            s.intra_chip += a[1];
            s.inter_chip += a[2];
            s.spikes += a[3];
        }
        s.peak_inter_chip = s.per_step_inter.iter().copied().max().unwrap_or(0);
        Ok(s)
    }
}

/// Traffic of `raster` under `placement`.
pub fn account_traffic(placement: &Placement, raster: &Raster, graph: &NetworkGraph) -> Result<TrafficStats> {
    TrafficTable::new(graph, placement)?.account(raster)
}

/// Placeholder coefficients, ordered intra-core < intra-chip < inter-chip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// J per delivery
    pub e_intra_core: f64,
    pub e_intra_chip: f64,
    pub e_inter_chip: f64,
    /// J per neuron-step
    pub e_neuron_update: f64,
    /// W
    pub p_static: f64,
    /// s per step
    pub step_time_base: f64,
    /// s per inter-chip delivery above the threshold in a step
    pub congestion_coeff: f64,
    pub congestion_threshold: u64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_intra_core: 2e-12,
            e_intra_chip: 8e-12,
            e_inter_chip: 60e-12,
            e_neuron_update: 0.1e-12,
            p_static: 0.5,
            step_time_base: 10e-6,
            congestion_coeff: 2e-9,
            congestion_threshold: 0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.e_intra_core,
            self.e_intra_chip,
            self.e_inter_chip,
            self.e_neuron_update,
            self.p_static,
            self.step_time_base,
            self.congestion_coeff,
        ];
        if all.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(invalid_param("energy model coefficients must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self {
            e_intra_core: 0.0,
            e_intra_chip: 0.0,
            e_inter_chip: 0.0,
            e_neuron_update: 0.0,
            p_static: 0.0,
            step_time_base: 0.0,
            congestion_coeff: 0.0,
            congestion_threshold: 0,
        }
    }
}

/// `steps * step_time_base + congestion_coeff * sum_t max(0, inter_t - threshold)`
pub fn estimate_latency(traffic: &TrafficStats, model: &EnergyModel, steps: u32) -> f64 {
    let excess: u64 = traffic.per_step_inter.iter().map(|&x| x.saturating_sub(model.congestion_threshold)).sum();
    steps as f64 * model.step_time_base + model.congestion_coeff * excess as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub static_j: f64,
    pub dynamic_j: f64,
    pub total_j: f64,
}

pub fn estimate_energy(traffic: &TrafficStats, model: &EnergyModel, steps: u32, neuron_count: u64, latency: f64) -> Energy {
    let static_j = model.p_static * latency;
    let dynamic_j = traffic.intra_core as f64 * model.e_intra_core
        + traffic.intra_chip as f64 * model.e_intra_chip
        + traffic.inter_chip as f64 * model.e_inter_chip
        + neuron_count as f64 * steps as f64 * model.e_neuron_update;
    Energy { static_j, dynamic_j, total_j: static_j + dynamic_j }
}

pub fn edp(energy_total: f64, latency: f64) -> f64 {
    energy_total * latency
}

/// Per-sample cost of one placement.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub strategy: String,
    pub cores: u32,
    pub chips: u32,
    pub violations: usize,
    pub intra_core: f64,
    pub intra_chip: f64,
    pub inter_chip: f64,
    pub peak_inter_chip: u64,
    pub latency_s: f64,
    pub energy: Energy,
    pub edp: f64,
}

/// Traffic, latency and energy averaged over `rasters` (one per sample).
pub fn evaluate_strategy(
    graph: &NetworkGraph,
    placement: &Placement,
    rasters: &[Raster],
    model: &EnergyModel,
    budget: &CoreBudget,
) -> Result<(StrategyCost, TrafficStats)> {
    model.validate()?;
    if rasters.is_empty() {
        return Err(invalid_input("no rasters to evaluate"));
    }
    let table = TrafficTable::new(graph, placement)?;
    let mut total = TrafficStats::default();
    for r in rasters {
        total.append(&table.account(r)?);
    }
    let n = rasters.len() as f64;
    let steps = total.steps();
    let latency = estimate_latency(&total, model, steps) / n;
    let neurons = graph.count_resources().compute_neurons;
    let e = estimate_energy(&total, model, steps, neurons, latency * n);
    let energy = Energy { static_j: e.static_j / n, dynamic_j: e.dynamic_j / n, total_j: e.total_j / n };
    let cost = StrategyCost {
        strategy: placement.strategy.to_string(),
        cores: placement.cores_used(),
        chips: placement.chips_used(),
        violations: verify(placement, graph, budget).len(),
        intra_core: total.intra_core as f64 / n,
        intra_chip: total.intra_chip as f64 / n,
        inter_chip: total.inter_chip as f64 / n,
        peak_inter_chip: total.peak_inter_chip,
        latency_s: latency,
        energy,
        edp: edp(energy.total_j, latency),
    };
    Ok((cost, total))
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// One configuration: optimized against naive on identical rasters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub m: u32,
    pub neurons: u64,
    pub samples: usize,
    pub spikes_per_neuron: f64,
    pub optimized: StrategyCost,
    pub naive: StrategyCost,
    pub inter_chip_ratio: f64,
    pub latency_ratio: f64,
    pub energy_ratio: f64,
    pub edp_ratio: f64,
}

/// Compares two placements of `graph` (`a` over `b`).
pub fn compare_strategies(
    m: u32,
    graph: &NetworkGraph,
    a: &Placement,
    b: &Placement,
    rasters: &[Raster],
    model: &EnergyModel,
    budget: &CoreBudget,
) -> Result<CompareRow> {
    let (ca, ta) = evaluate_strategy(graph, a, rasters, model, budget)?;
    let (cb, _) = evaluate_strategy(graph, b, rasters, model, budget)?;
    let neurons = graph.count_resources().compute_neurons;
    Ok(CompareRow {
        m,
        neurons,
        samples: rasters.len(),
        spikes_per_neuron: ta.spikes as f64 / rasters.len() as f64 / neurons.max(1) as f64,
        inter_chip_ratio: ratio(ca.inter_chip, cb.inter_chip),
        latency_ratio: ratio(ca.latency_s, cb.latency_s),
        energy_ratio: ratio(ca.energy.total_j, cb.energy.total_j),
        edp_ratio: ratio(ca.edp, cb.edp),
        optimized: ca,
        naive: cb,
    })
}

/// Flat CSV form of a [`CompareRow`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub m: u32,
    pub neurons: u64,
    pub samples: usize,
    pub spikes_per_neuron: f64,
    pub opt_cores: u32,
    pub opt_chips: u32,
    pub opt_violations: usize,
    pub opt_inter_chip: f64,
    pub opt_latency_s: f64,
    pub opt_energy_j: f64,
    pub opt_edp: f64,
    pub naive_cores: u32,
    pub naive_chips: u32,
    pub naive_violations: usize,
    pub naive_inter_chip: f64,
    pub naive_latency_s: f64,
    pub naive_energy_j: f64,
    pub naive_edp: f64,
    pub inter_chip_ratio: f64,
    pub energy_ratio: f64,
    pub latency_ratio: f64,
    pub edp_ratio: f64,
}

impl From<&CompareRow> for CsvRow {
    fn from(r: &CompareRow) -> Self {
        Self {
            m: r.m,
            neurons: r.neurons,
            samples: r.samples,
            spikes_per_neuron: r.spikes_per_neuron,
            opt_cores: r.optimized.cores,
            opt_chips: r.optimized.chips,
            opt_violations: r.optimized.violations,
            opt_inter_chip: r.optimized.inter_chip,
            opt_latency_s: r.optimized.latency_s,
            opt_energy_j: r.optimized.energy.total_j,
            opt_edp: r.optimized.edp,
            naive_cores: r.naive.cores,
            naive_chips: r.naive.chips,
            naive_violations: r.naive.violations,
            naive_inter_chip: r.naive.inter_chip,
            naive_latency_s: r.naive.latency_s,
            naive_energy_j: r.naive.energy.total_j,
            naive_edp: r.naive.edp,
            inter_chip_ratio: r.inter_chip_ratio,
            energy_ratio: r.energy_ratio,
            latency_ratio: r.latency_ratio,
            edp_ratio: r.edp_ratio,
        }
    }
}

pub fn to_csv(rows: &[CompareRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow::from(r)).map_err(|e| invalid_input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| invalid_input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| invalid_input(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_label: String,
    pub series: Vec<Series>,
}

/// EDP, inter-chip traffic and chips against M, for external plotting.
pub fn plot_data(rows: &[CompareRow]) -> PlotData {
    let x: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let series = |name: &str, f: &dyn Fn(&CompareRow) -> f64| Series { name: name.into(), x: x.clone(), y: rows.iter().map(f).collect() };
    PlotData {
        x_label: "M".into(),
        series: vec![
            series("edp_optimized", &|r| r.optimized.edp),
            series("edp_naive", &|r| r.naive.edp),
            series("inter_chip_optimized", &|r| r.optimized.inter_chip),
            series("inter_chip_naive", &|r| r.naive.inter_chip),
            series("chips_optimized", &|r| r.optimized.chips as f64),
            series("spikes_per_neuron", &|r| r.spikes_per_neuron),
        ],
    }
}

pub const REPORT_FORMAT: &str = "spikeplace-cost-report v1";

/// Structured report mirroring the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub format: String,
    pub tool: String,
    pub config_hash: String,
    pub note: String,
    pub model: EnergyModel,
    pub rows: Vec<CompareRow>,
}

impl CostReport {
    pub fn new(rows: Vec<CompareRow>, model: EnergyModel, config_hash: &str) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            tool: TOOL_VERSION.into(),
            config_hash: config_hash.into(),
            note: "energy and latency coefficients are placeholders; only optimized/naive orderings are meaningful".into(),
            model,
            rows,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format { what: "cost report", detail: e.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ms: Vec<u32>,
    /// Entities in the synthetic pair-matching stories; places take the
    /// rest of the vocabulary.
    pub entities: u32,
    pub vocab: u32,
    pub samples: usize,
    pub seed: u64,
    pub threads: usize,
    pub model: EnergyModel,
    pub budget: CoreBudget,
    pub board: BoardModel,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ms: vec![2, 6, 10, 16, 20],
            entities: 40,
            vocab: 180,
            samples: 2,
            seed: 0,
            threads: 0,
            model: EnergyModel::default(),
            budget: CoreBudget::relnet(),
            board: BoardModel::default(),
        }
    }
}

/// Full pipeline per M: build, group, insert relays, place both ways,
/// simulate full-length stories and compare on identical rasters.
pub fn bench(cfg: &BenchConfig, mut log: impl FnMut(&CompareRow)) -> Result<Vec<CompareRow>> {
    use crate::network::build_relnet;
    use crate::sim::{answer_relnet, Mode};
    use crate::train::pair_matching_stories;

    let mut rows = Vec::new();
    for &m in &cfg.ms {
        if cfg.entities >= cfg.vocab {
            return Err(invalid_param("bench needs entities < vocab"));
        }
        let g = build_relnet(&RelNetConfig::new(m, cfg.vocab), cfg.seed)?;
        let grouping = relnet_grouping(&g, &cfg.budget, &cfg.board)?;
        let g = insert_relays(&g, &grouping)?;
        let opt = place(&g, Strategy::Optimized, &cfg.budget, &cfg.board)?;
        let naive = place(&g, Strategy::Naive, &cfg.budget, &cfg.board)?;
        let stories = pair_matching_stories(m, cfg.entities.max(m), cfg.vocab - cfg.entities.max(m), cfg.samples, cfg.seed)?;
        let mut rasters = Vec::new();
        for s in &stories {
            let a = answer_relnet(&g, s, Mode::Real, cfg.threads)?;
            let mut r = a.embedding;
            r.append(&a.feedforward);
            rasters.push(r);
        }
        let row = compare_strategies(m, &g, &opt, &naive, &rasters, &cfg.model, &cfg.budget)?;
        log(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Per-role spike totals of a raster, for reports.
pub fn spikes_by_role(graph: &NetworkGraph, raster: &Raster) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for e in &raster.events {
        *out.entry(graph.populations[e.pop].role.key().to_string()).or_insert(0) += 1;
    }
    out
}
