// Validation code writes `!(x > 0.0)` instead of `x <= 0.0` so that NaN
// parameters are rejected too; keep the idiom.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Fixed-step time-domain simulation of a low-voltage distribution feeder
//! protected by a dynamic voltage restorer (DVR).
//!
//! The plant is a Thevenin-equivalent grid behind a step-down transformer,
//! a critical R-L load, a fixed-speed induction-generator wind turbine and a
//! single-diode PV array, all tied to one 400 V bus. The DVR injects a series
//! voltage through an LC-filtered averaged inverter to hold the load bus at
//! nominal magnitude through sags and swells commanded on the source EMF.
//!
//! Module map:
//! - [`signals`]: Park transforms, sliding RMS, positive-sequence extraction,
//!   per-unit bases.
//! - [`events`]: sag/swell scheduling on the source and RMS-trace
//!   classification into power-quality records.
//! - [`network`]: trapezoidal companion models of the source branch, ideal
//!   transformer and load, plus the single-node bus solve.
//! - [`wind`]: rotor aerodynamics and the synchronous-frame induction machine.
//! - [`pv`]: single-diode array model and perturb-and-observe MPPT.
//! - [`dvr`]: averaged VSI, LC filter, injection transformer, PI magnitude
//!   controller and overcurrent bypass.
//! - [`engine`]: scenario description, validation, the step loop and trace
//!   recording.
//! - [`cli`]: command-line front end (also used by the `dvrsim` binary).

pub mod cli;
pub mod dvr;
pub mod engine;
pub mod events;
pub mod network;
pub mod plot;
pub mod pv;
pub mod signals;
pub mod wind;
