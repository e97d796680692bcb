//! Kolmogorov-Arnold networks with ensemble and split-conformal uncertainty.
//!
//! The crate implements spline-parameterized KANs, their finite-basis
//! domain-decomposed variant (FBKAN), a multi-fidelity composition (MFKAN),
//! deep-ensemble training with seed-indexed members, and split conformal
//! calibration of the ensemble's heuristic uncertainty into intervals with a
//! distribution-free coverage guarantee. The numeric core is generic over the
//! scalar type; concrete `f64` aliases are exported at the crate root.

pub mod checkpoint;
pub mod conformal;
pub mod ensemble;
pub mod experiments;
pub mod fbkan;
pub mod jet;
pub mod mfkan;
pub mod model;
pub mod network;
pub mod scalar;
pub mod spline;
pub mod report;
pub mod train;

pub use model::Model;
pub use scalar::Scalar;

pub type KnotGrid64 = spline::KnotGrid<f64>;
pub type KanNetwork64 = network::KanNetwork<f64>;
pub type FbkanModel64 = fbkan::FbkanModel<f64>;
pub type ScaledKan64 = network::ScaledKan<f64>;
pub type MfkanModel64 = mfkan::MfkanModel<f64>;
