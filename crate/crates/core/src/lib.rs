//! Gaussian wavepacket dynamics driven by state-dependent quadratic effective
//! potentials: thawed and frozen variants, split-step integrators in Heller and
//! Hagedorn parametrizations, conservation diagnostics, and a grid reference.

pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod methods;
pub mod potentials;
pub mod reference;
pub mod setup;
pub mod state;

pub use error::{GwpdError, Result};
pub use integrators::{BaseScheme, Composition, PropagateOptions, Propagator, SchemeSpec, Trajectory, Wavepacket};
pub use methods::{EffectiveCoefficients, Method, MethodId, MethodSpec};
pub use potentials::{ExpectationEngine, PotentialModel};
pub use setup::PhysicalSetup;
pub use state::{GaussianHagedorn, GaussianHeller, TangentVector};
