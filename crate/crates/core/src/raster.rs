//! Spike records.
//!
//! [`SpikeMatrix`] holds one population's spikes (used for inputs and
//! embeddings); [`Raster`] holds network-wide events sorted by
//! (step, population, neuron) and has a line-oriented text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::network::PopId;

/// Binary neurons x steps matrix stored as per-step sorted index lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeMatrix {
    pub neurons: u32,
    pub steps: u32,
    active: Vec<Vec<u32>>,
}

impl SpikeMatrix {
    pub fn new(neurons: u32, steps: u32) -> Self {
        Self { neurons, steps, active: vec![Vec::new(); steps as usize] }
    }

    pub fn from_dense(rows: &[Vec<bool>]) -> Self {
        let neurons = rows.len() as u32;
        let steps = rows.first().map_or(0, |r| r.len() as u32);
        let mut m = Self::new(neurons, steps);
        for (n, row) in rows.iter().enumerate() {
            for (t, &b) in row.iter().enumerate() {
                if b {
                    m.set(n as u32, t as u32);
                }
            }
        }
        m
    }

    pub fn set(&mut self, neuron: u32, step: u32) {
        assert!(neuron < self.neurons && step < self.steps, "spike ({neuron}, {step}) out of range");
        let col = &mut self.active[step as usize];
        if let Err(pos) = col.binary_search(&neuron) {
            col.insert(pos, neuron);
        }
    }

    pub fn get(&self, neuron: u32, step: u32) -> bool {
        self.active.get(step as usize).is_some_and(|c| c.binary_search(&neuron).is_ok())
    }

    /// Neurons spiking at `step`, ascending.
    pub fn at(&self, step: u32) -> &[u32] {
        self.active.get(step as usize).map_or(&[], |c| c.as_slice())
    }

    pub fn count(&self) -> u64 {
        self.active.iter().map(|c| c.len() as u64).sum()
    }

    pub fn neuron_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.neurons as usize];
        for c in &self.active {
            for &n in c {
                out[n as usize] += 1;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let mut rows = vec![vec![false; self.steps as usize]; self.neurons as usize];
        for (t, c) in self.active.iter().enumerate() {
            for &n in c {
                rows[n as usize][t] = true;
            }
        }
        rows
    }

    /// Copy of the matrix delayed by `k` steps, with `k` extra steps.
    pub fn shifted(&self, k: u32) -> Self {
        let mut m = Self::new(self.neurons, self.steps + k);
        for (t, c) in self.active.iter().enumerate() {
            m.active[t + k as usize] = c.clone();
        }
        m
    }

    /// Columns `[from, from + len)` copied to the start of a matrix of
    /// `steps` columns; the rest is silent.
    pub fn window(&self, from: u32, len: u32, steps: u32) -> Result<Self> {
        if from + len > self.steps || len > steps {
            return Err(invalid_input(format!(
                "window [{from}, {}) of a {}-step matrix into {steps} steps",
                from + len,
                self.steps
            )));
        }
        let mut m = Self::new(self.neurons, steps);
        for t in 0..len {
            m.active[t as usize] = self.active[(from + t) as usize].clone();
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub step: u32,
    pub pop: PopId,
    pub neuron: u32,
}

/// Network-wide spike record of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    pub steps: u32,
    /// Sorted by (step, pop, neuron), no duplicates.
    pub events: Vec<Event>,
    /// Populations that were simulated (not clamped) during this run.
    pub active: Vec<PopId>,
}

/// Header fields of a raster file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RasterHeader {
    pub graph_hash: String,
    pub config_hash: String,
    pub tool: String,
}

const RASTER_MAGIC: &str = "# spikeplace raster v1";

impl Raster {
    pub fn new(steps: u32, mut events: Vec<Event>, mut active: Vec<PopId>) -> Self {
        events.sort_unstable();
        events.dedup();
        active.sort_unstable();
        active.dedup();
        Self { steps, events, active }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Events of one step.
    pub fn at(&self, step: u32) -> &[Event] {
        let lo = self.events.partition_point(|e| e.step < step);
        let hi = self.events.partition_point(|e| e.step <= step);
        &self.events[lo..hi]
    }

    pub fn population(&self, pop: PopId, size: u32) -> SpikeMatrix {
        let mut m = SpikeMatrix::new(size, self.steps);
        for e in self.events.iter().filter(|e| e.pop == pop) {
            m.set(e.neuron, e.step);
        }
        m
    }

    /// Spike count per (population, neuron) with at least one spike.
    pub fn counts(&self) -> BTreeMap<(PopId, u32), u64> {
        let mut m = BTreeMap::new();
        for e in &self.events {
            *m.entry((e.pop, e.neuron)).or_insert(0) += 1;
        }
        m
    }

    pub fn is_active(&self, pop: PopId) -> bool {
        self.active.binary_search(&pop).is_ok()
    }

    /// Merges rasters of consecutive phases; `other` starts at `self.steps`.
    pub fn append(&mut self, other: &Raster) {
        let offset = self.steps;
        self.events.extend(other.events.iter().map(|e| Event { step: e.step + offset, ..*e }));
        self.steps += other.steps;
        self.active.extend(&other.active);
        self.active.sort_unstable();
        self.active.dedup();
    }

    pub fn to_text(&self, header: &RasterHeader) -> String {
        let mut s = String::with_capacity(32 + self.events.len() * 12);
        writeln!(s, "{RASTER_MAGIC}").unwrap();
        writeln!(s, "tool {}", header.tool).unwrap();
        writeln!(s, "steps {}", self.steps).unwrap();
        writeln!(s, "graph {}", header.graph_hash).unwrap();
        writeln!(s, "config {}", header.config_hash).unwrap();
        let active: Vec<String> = self.active.iter().map(|p| p.to_string()).collect();
        writeln!(s, "active {}", active.join(" ")).unwrap();
        writeln!(s, "events {}", self.events.len()).unwrap();
        for e in &self.events {
            writeln!(s, "{} {} {}", e.step, e.pop, e.neuron).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<(Self, RasterHeader)> {
        let bad = |detail: String| Error::Format { what: "raster", detail };
        let mut lines = text.lines();
        if lines.next() != Some(RASTER_MAGIC) {
            return Err(bad("missing header line".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            let rest = line.strip_prefix(key).ok_or_else(|| bad(format!("expected {key}, got {line:?}")))?;
            Ok(rest.trim().to_string())
        };
        let tool = field("tool")?;
        let steps: u32 = field("steps")?.parse().map_err(|e| bad(format!("steps: {e}")))?;
        let graph_hash = field("graph")?;
        let config_hash = field("config")?;
        let active = field("active")?
            .split_whitespace()
            .map(|x| x.parse::<PopId>().map_err(|e| bad(format!("active: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = field("events")?.parse().map_err(|e| bad(format!("events: {e}")))?;
        let mut events = Vec::with_capacity(n);
        for line in lines.by_ref().take(n) {
            let mut it = line.split_whitespace().map(|x| x.parse::<u64>());
            let mut next = || -> Result<u64> {
                it.next().ok_or_else(|| bad(format!("short event line {line:?}")))?.map_err(|e| bad(e.to_string()))
            };
            let e = Event { step: next()? as u32, pop: next()? as PopId, neuron: next()? as u32 };
            if e.step >= steps {
                return Err(bad(format!("event at step {} beyond {steps}", e.step)));
            }
            events.push(e);
        }
        if events.len() != n {
            return Err(bad(format!("expected {n} events, found {}", events.len())));
        }
        if events.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("events not sorted by (step, population, neuron)".into()));
        }
        Ok((Self { steps, events, active }, RasterHeader { graph_hash, config_hash, tool }))
    }
}
