//! Modeling, stability analysis, and simulation of hybrid ac/dc power systems
//! whose converters run universal dual-port grid-forming (PD v-f droop)
//! control.
//!
//! The crate is organized around the pipeline
//!
//! ```text
//! scenario file -> network graph + devices + gains
//!               -> linearized closed-loop state space (T, A, B)
//!               -> condition checks, certificates, spectra, steady states
//!               -> linear / nonlinear time simulation and frequency metrics
//! ```
//!
//! All values are per-unit on a single system base; everything is immutable
//! after construction and safe to share across threads.

pub mod analysis;
pub mod assembly;
pub mod control;
pub mod devices;
pub mod network;
pub mod run;
pub mod scenario;
pub mod sim;

pub use assembly::{assemble_system, disturbance_vector, StateSpace, Terminal};
pub use control::{ControlGains, GainSet};
pub use devices::{DeviceSet, MachineParams, PvParams, WtParams};
pub use network::{build_graph, kron_reduce, NetworkDescription, NodeKind, SystemGraph};
