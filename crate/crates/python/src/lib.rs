//! Python bindings: encoding, simulation, placement and the bench pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spikeplace::cost::{bench as run_bench, BenchConfig};
use spikeplace::encode::{encode_pixels, ThresholdEncoderConfig};
use spikeplace::io::read_graph;
use spikeplace::network::{build_relnet, RelNetConfig, RelNetIndex};
use spikeplace::placement::{insert_relays, place, relnet_grouping, verify, BoardModel, CoreBudget, Strategy};
use spikeplace::raster::Raster;
use spikeplace::sim::{run, Mode, RunOptions};

fn err(e: spikeplace::Error) -> PyErr {
    match e {
        spikeplace::Error::InvalidInput(_) | spikeplace::Error::InvalidParameter(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mode(name: &str) -> PyResult<Mode> {
    match name {
        "real" => Ok(Mode::Real),
        "fixed" => Ok(Mode::Fixed),
        _ => Err(PyValueError::new_err(format!("mode must be 'real' or 'fixed', not {name:?}"))),
    }
}

/// Encodes 784 pixels; returns (neuron, step) pairs and the step count.
/// (step, population, neuron)
type SpikeEvent = (u32, usize, u32);
type Traces = BTreeMap<String, Vec<f64>>;

#[pyfunction]
fn encode(pixels: Vec<u8>) -> PyResult<(Vec<(u32, u32)>, u32)> {
    let m = encode_pixels(&pixels, &ThresholdEncoderConfig::default()).map_err(err)?;
    let events = (0..m.steps).flat_map(|t| m.at(t).iter().map(move |&n| (n, t))).collect();
    Ok((events, m.steps))
}

/// Simulates a graph file on a raster file; returns (step, pop, neuron)
/// events and the final readout voltages by population name.
#[pyfunction]
#[pyo3(signature = (graph, raster, steps=None, mode_name="real", threads=0))]
fn simulate(
    graph: PathBuf,
    raster: PathBuf,
    steps: Option<u32>,
    mode_name: &str,
    threads: usize,
) -> PyResult<(Vec<SpikeEvent>, Traces)> {
    let g = read_graph(&graph).map_err(err)?;
    let text = std::fs::read_to_string(&raster).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (input, _) = Raster::from_text(&text).map_err(err)?;
    let clamps = g.populations.iter().filter(|p| p.is_input()).map(|p| (p.id, input.population(p.id, p.size))).collect();
    let opts = RunOptions { steps: steps.unwrap_or(input.steps), mode: mode(mode_name)?, threads, ..RunOptions::default() };
    let out = run(&g, &clamps, &opts).map_err(err)?;
    let events = out.raster.events.iter().map(|e| (e.step, e.pop, e.neuron)).collect();
    let readout = out.readout.into_iter().map(|(p, v)| (g.populations[p].name.clone(), v)).collect();
    Ok((events, readout))
}

/// Builds an M-sentence RelNet with relays, places it and verifies it.
#[pyfunction]
#[pyo3(signature = (m, vocab=180, strategy="optimized", seed=0))]
fn place_relnet<'py>(py: Python<'py>, m: u32, vocab: u32, strategy: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let strategy = match strategy {
        "optimized" => Strategy::Optimized,
        "naive" => Strategy::Naive,
        _ => return Err(PyValueError::new_err("strategy must be 'optimized' or 'naive'")),
    };
    let (budget, board) = (CoreBudget::relnet(), BoardModel::default());
    let g = build_relnet(&RelNetConfig::new(m, vocab), seed).map_err(err)?;
    let instances = RelNetIndex::from_graph(&g).map_err(err)?.instances.len();
    let g = insert_relays(&g, &relnet_grouping(&g, &budget, &board).map_err(err)?).map_err(err)?;
    let p = place(&g, strategy, &budget, &board).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("instances", instances)?;
    d.set_item("neurons", g.count_resources().compute_neurons)?;
    d.set_item("cores", p.cores_used())?;
    d.set_item("chips", p.chips_used())?;
    d.set_item("violations", verify(&p, &g, &budget).iter().map(|v| v.to_string()).collect::<Vec<_>>())?;
    Ok(d)
}

/// Optimized-over-naive ratios per M: (m, inter-chip ratio, EDP ratio).
#[pyfunction]
#[pyo3(signature = (ms, samples=1, seed=0))]
fn compare(ms: Vec<u32>, samples: usize, seed: u64) -> PyResult<Vec<(u32, f64, f64)>> {
    let cfg = BenchConfig { ms, samples, seed, ..BenchConfig::default() };
    let rows = run_bench(&cfg, |_| {}).map_err(err)?;
    Ok(rows.iter().map(|r| (r.m, r.inter_chip_ratio, r.edp_ratio)).collect())
}

#[pymodule]
fn pyspikeplace(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(place_relnet, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
