//! Momentum-space photon wavefunctions in the two-component Berry-gauge
//! representation: grids, gauges, operators, real-space fields and the
//! spin-Hall centroid shift.

pub mod algebra;
pub mod error;
pub mod fields;
pub mod gauge;
pub mod kgrid;
pub mod operators;
pub mod spinhall;
pub mod stencil;
pub mod wavefunction;

pub use error::{PhotonError, Result};
pub use gauge::BerryGauge;
pub use kgrid::{build_grid, GridSpec, KGrid, ScalarField, SpinorField2, VectorField3};
pub use stencil::Stencil;
pub use wavefunction::{Helicity, TwoComponentWavefunction, VectorWavefunction};
