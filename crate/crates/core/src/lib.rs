//! Amplify-and-forward relay beamforming for multigroup multicast.
//!
//! The crate builds the quadratic-form data of the rank-one beamformed (BF)
//! and beamformed-Alamouti (BFA) relay design problems, solves their
//! semidefinite relaxations by bisection on the SINR level, rounds the
//! relaxed solutions with Gaussian randomization, and checks the resulting
//! beamformers with a symbol-level link simulator.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default). Every parallel loop has a sequential twin selected through
//! [`Exec`], and both produce bit-identical results for the same seed.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod forms;
pub mod linalg;
pub mod linksim;
pub mod network;
pub mod par;
pub mod randomization;
pub mod sdr;

pub use error::{Error, Result};
pub use forms::{build_forms, BeamformerPair, ProblemForms};
pub use network::{db_to_linear, sample_channels, ChannelSet, NetworkConfig, NetworkKind, ValidatedConfig};
pub use par::Exec;
pub use sdr::{bisect_sdr, SdrSolution, Variant};
