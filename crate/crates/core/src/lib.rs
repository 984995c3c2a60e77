//! Closed-loop dynamics and reframing control for bittide clock synchronization.
//!
//! A bittide network is a directed graph of nodes, each running a local
//! oscillator and an elastic buffer per incoming link. Every node measures
//! only its incoming buffer occupancies and adjusts its frequency with a
//! proportional-plus-offset law. This crate builds the linear closed-loop
//! model of that system, predicts its steady states from the spectrum of the
//! closed-loop matrix, simulates it (continuously and frame-by-frame), and
//! checks the predictions against simulation.
//!
//! Modules, bottom-up:
//!
//! * [`graph`]: topologies, incidence matrices, strong connectivity, generators.
//! * [`spectral`]: `A = kDBᵀ`, its Metzler eigenvector, projector and group
//!   inverse, and every closed-form steady-state prediction.
//! * [`dynamics`]: system parameters and the exact / RK4 / Euler integrators.
//! * [`controller`]: per-node proportional law, reframing, auto trigger.
//! * [`framesim`]: integer frame counters, quantized measurement, overflow faults.
//! * [`verify`]: verdicts for each convergence property and the random battery.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dynamics;
mod error;
pub mod framesim;
pub mod graph;
pub mod spectral;
pub mod verify;

pub use controller::{ControllerKind, NodeState, NodeView, ReframeMode, ReframeSchedule};
pub use dynamics::{
    run, IntegratorSettings, Method, Offsets, RunSettings, SimState, SimTrace, SystemParams,
    TraceMode, TraceSample,
};
pub use error::{Error, Result};
pub use framesim::{DiscreteOutcome, DiscreteSettings, Fault, FaultDirection};
pub use graph::{Edge, IncidenceSet, Topology, TopologyKind};
pub use spectral::{ClosedLoopMatrix, SpectralData};

pub use nalgebra::{DMatrix, DVector};
