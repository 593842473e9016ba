//! Single-diode photovoltaic array model and perturb-and-observe maximum
//! power point tracking.
//!
//! The array is a lumped single-diode source without series or shunt
//! resistance: `i = i_pv * (g / 1000) - i_0 * (exp(v / (alpha * v_t)) - 1)`,
//! with the thermal voltage scaled by the number of series cells. The
//! exponential argument is guarded so hostile inputs fail loudly instead of
//! overflowing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PvError {
    #[error("diode voltage {v} V exceeds the exponential guard ({limit} V)")]
    VoltageOutOfRange { v: f64, limit: f64 },
    #[error("pv parameter out of range: {0}")]
    BadParams(&'static str),
}

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Lumped single-diode array at a fixed cell temperature and irradiance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvModel {
    /// Photo-current at 1000 W/m^2, amperes.
    pub i_pv: f64,
    /// Diode saturation current, amperes.
    pub i_0: f64,
    /// Diode ideality factor.
    pub alpha: f64,
    /// Boltzmann constant, J/K (overridable for reduced-unit tests).
    #[serde(default = "boltzmann")]
    pub k: f64,
    /// Cell temperature, kelvin.
    pub t_cell: f64,
    /// Elementary charge, C.
    #[serde(default = "elementary_charge")]
    pub q_e: f64,
    /// Series-connected cells in the string.
    pub n_cell: u32,
    /// Irradiance, W/m^2.
    pub g: f64,
}

fn boltzmann() -> f64 {
    BOLTZMANN
}

fn elementary_charge() -> f64 {
    ELEMENTARY_CHARGE
}

impl PvModel {
    pub fn validate(&self) -> Result<(), PvError> {
        if !(self.i_pv >= 0.0) {
            return Err(PvError::BadParams("i_pv must be non-negative"));
        }
        if !(self.i_0 > 0.0) {
            return Err(PvError::BadParams("i_0 must be positive"));
        }
        if !(self.alpha >= 1.0) {
            return Err(PvError::BadParams("alpha must be at least 1"));
        }
        if !(self.t_cell > 0.0) {
            return Err(PvError::BadParams("t_cell must be positive"));
        }
        if self.n_cell == 0 {
            return Err(PvError::BadParams("n_cell must be at least 1"));
        }
        if !(self.g >= 0.0) {
            return Err(PvError::BadParams("g must be non-negative"));
        }
        if !(self.k > 0.0 && self.q_e > 0.0) {
            return Err(PvError::BadParams("physical constants must be positive"));
        }
        Ok(())
    }

    /// String thermal voltage `(k * t_cell / q_e) * n_cell`, volts.
    pub fn v_t(&self) -> f64 {
        self.k * self.t_cell / self.q_e * self.n_cell as f64
    }

    /// Effective photo-current at the configured irradiance.
    pub fn photo_current(&self) -> f64 {
        self.i_pv * self.g / 1000.0
    }

    /// Terminal current at voltage `v`.
    pub fn pv_current(&self, v: f64) -> Result<f64, PvError> {
        let avt = self.alpha * self.v_t();
        let limit = 50.0 * avt;
        if v > limit {
            return Err(PvError::VoltageOutOfRange { v, limit });
        }
        Ok(self.photo_current() - self.i_0 * ((v / avt).exp() - 1.0))
    }

    /// Open-circuit voltage in closed form:
    /// `v_oc = alpha * v_t * ln(i_photo / i_0 + 1)`.
    pub fn v_oc(&self) -> f64 {
        self.alpha * self.v_t() * (self.photo_current() / self.i_0 + 1.0).ln()
    }

    /// Grid scan of `p = v * i` over `[0, v_oc]`; the reference answer for
    /// tracker tests, not the runtime tracker.
    pub fn mpp_bruteforce(&self, n_points: usize) -> Result<(f64, f64), PvError> {
        if n_points < 2 {
            return Err(PvError::BadParams("n_points must be at least 2"));
        }
        let v_oc = self.v_oc();
        let mut best = (0.0, 0.0);
        for k in 0..n_points {
            let v = v_oc * k as f64 / (n_points - 1) as f64;
            let p = v * self.pv_current(v)?;
            if p > best.1 {
                best = (v, p);
            }
        }
        Ok(best)
    }
}

/// Perturb-and-observe tracker state. One perturbation per call; the caller
/// sets the cadence (one fundamental cycle in the simulator).
#[derive(Debug, Clone, Copy)]
pub struct MpptState {
    /// Commanded array voltage, volts.
    pub v_ref: f64,
    /// Perturbation size, volts.
    pub step: f64,
    /// Upper clamp for the command (open-circuit voltage at rating).
    pub v_max: f64,
    prev_v: f64,
    prev_p: f64,
}

impl MpptState {
    /// Tracker starting at `v_ref0`, pretending the previous move was one
    /// step upward so the first decision is well defined.
    pub fn new(v_ref0: f64, step: f64, v_max: f64) -> Self {
        Self {
            v_ref: v_ref0,
            step,
            v_max,
            prev_v: v_ref0 - step,
            prev_p: 0.0,
        }
    }

    /// One perturb-and-observe decision from the measured operating point:
    /// keep direction while power rises, reverse when it falls.
    pub fn mppt_step(&mut self, v_meas: f64, i_meas: f64) -> f64 {
        let p = v_meas * i_meas;
        let dv = v_meas - self.prev_v;
        let rising = p >= self.prev_p;
        let dir = match (rising, dv >= 0.0) {
            (true, true) | (false, false) => 1.0,
            (true, false) | (false, true) => -1.0,
        };
        self.v_ref = (v_meas + dir * self.step).clamp(0.0, self.v_max);
        self.prev_v = v_meas;
        self.prev_p = p;
        self.v_ref
    }
}
