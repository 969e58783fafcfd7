//! Quasi-dynamic system-level simulator for NB-IoT networks.
//!
//! The crate is organized around the simulation pipeline: static
//! [`config`], hexagonal [`topology`] generation, large- and small-scale
//! [`channel`] modelling, link-to-system [`phy`] abstraction, the per-TTI
//! [`mac`] scheduler with HARQ, [`traffic`] and eDRX power-saving state,
//! the [`engine`] main loop, and [`metrics`] post-processing.

pub mod channel;
pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod topology;
pub mod traffic;
