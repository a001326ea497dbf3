//! Deterministic LIF/AHP spiking-network simulation, surrogate-gradient
//! training, neuro-core placement and spike-traffic cost modeling.
//!
//! The crate is organised bottom-up:
//!
//! * [`neuron`] single-neuron transitions (real and fixed-point),
//! * [`network`] population/connection graphs and the LSNN, sMNIST and
//!   RelNet builders,
//! * [`encode`] pixel and word spike encoders,
//! * [`sim`] the time-stepped simulator and task wrappers,
//! * [`train`] BPTT with the rate, voltage and g_θ-rate regularizers,
//! * [`placement`] the core/chip model, layer splitting, relays and
//!   grouping, and the constraint verifier,
//! * [`cost`] traffic accounting and the energy/latency/EDP model,
//! * [`io`] and [`config`] for file formats and run configuration.

// `!(x > 0.0)` is deliberate: it rejects NaN as well.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity,
    clippy::large_enum_variant
)]

pub mod config;
pub mod cost;
pub mod encode;
pub mod error;
pub mod io;
pub mod network;
pub mod neuron;
pub mod placement;
pub mod raster;
pub mod seed;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use network::{NetworkGraph, PopId, Population, Role};
pub use neuron::{NeuronKind, NeuronParams, NeuronState, ReadoutState};
pub use raster::{Raster, SpikeMatrix};

/// Version string embedded in every artifact.
pub const TOOL_VERSION: &str = concat!("spikeplace ", env!("CARGO_PKG_VERSION"));
