//! Multi-layer thermal model of a laser powder-bed fusion build, a
//! layer-merging reduced model of it, and a finite-horizon LQR that tracks a
//! melt temperature by modulating laser power.
//!
//! The numerical core is generic over the floating-point type (see [`Real`]);
//! the aliases at the bottom of this file fix it to `f64`, which is what the
//! experiment harness and CLI use.

pub mod beam;
pub mod error;
pub mod expm;
pub mod fom;
pub mod grid;
pub mod harness;
pub mod io;
pub mod lqr;
pub mod params;
pub mod plant;
pub mod rom;
mod scalar;

pub use error::{Error, Result};
pub use params::{MaterialParams, ProcessParams};
pub use scalar::Real;

pub type ThermalGraph = grid::ThermalGraph<f64>;
pub type BeamModel = beam::BeamModel<f64>;
pub type BeamPath = beam::BeamPath<f64>;
pub type LtvSystem = fom::LtvSystem<f64>;
pub type SimResult = fom::SimResult<f64>;
pub type RomState = rom::RomState<f64>;
pub type DiscreteLayerModel = lqr::DiscreteLayerModel<f64>;
pub type ModalLayerModel = lqr::ModalLayerModel<f64>;
pub type GainSchedule = lqr::GainSchedule<f64>;
pub type TrackingSpec = lqr::TrackingSpec<f64>;
