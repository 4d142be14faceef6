//! Event-camera star-field simulation and spacecraft angular-rate
//! estimation.
//!
//! An event camera watching a star field under spacecraft rotation emits
//! brightness-change events along each star's apparent track. This crate
//! simulates such streams and recovers the spacecraft angular rates from
//! them: contrast maximization estimates the local image motion field, a
//! least-squares solve maps the field samples to rates, and an orthogonal
//! dual-camera fusion removes the poorly observable roll axis.
//!
//! # Modules
//!
//! * [`catalog`] — star catalog CSV ingestion, a synthetic "desk" catalog
//!   generator, and field-of-view queries.
//! * [`geometry`] — rotations, Euler angles, boresight attitudes, and the
//!   pinhole projection.
//! * [`kinematics`] — the motion-field matrix mapping angular rates to
//!   apparent image velocities.
//! * [`event_sim`] — star-field rendering and the log-intensity threshold
//!   event generator.
//! * [`estimator`] — contrast-maximization flow recovery and the
//!   least-squares rate solver with analytical covariance.
//! * [`fusion`] — dual-camera fusion and inertial-frame transformation.
//! * [`harness`] — Monte Carlo campaign runner, config files, and result
//!   emission.
//!
//! # Getting started
//!
//! The `examples/` directory holds one runnable example per capability;
//! start with `estimate_rates`:
//!
//! ```bash
//! cargo run --release --example estimate_rates
//! ```

pub mod catalog;
pub mod estimator;
pub mod event_sim;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod kinematics;

pub use catalog::{StarCatalog, StarRecord};
pub use estimator::{ContrastResult, EstimateRecord, FlowSettings, RateEstimate};
pub use event_sim::{Event, EventStream, SimSettings};
pub use fusion::{DualMounting, FusedRates};
pub use geometry::{CameraModel, RotationMatrix};
pub use harness::SimulationConfig;
pub use kinematics::{AngularRates, MotionFieldSample};
