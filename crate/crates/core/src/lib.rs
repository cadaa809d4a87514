//! Simulation and analysis toolkit for waveguide-coupled single-photon emitters.
//!
//! * [`emitter`]: three-level photophysics and the closed-form models.
//! * [`linkbudget`]: collection-efficiency chain, spectral overlap, noise and bleaching.
//! * [`montecarlo`]: time-tag stream generation under CW or pulsed excitation.
//! * [`correlator`]: coincidence, lifetime and intensity-trace histograms.
//! * [`fitters`]: Levenberg–Marquardt fits of the models with uncertainties.

pub mod correlator;
pub mod emitter;
pub mod fitters;
pub mod linkbudget;
pub mod montecarlo;
pub mod stream;

pub use stream::{merge_streams, StreamError, TimeTag, TimeTagStream};
