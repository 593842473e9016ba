//! Dynamic voltage restorer power stage and control: averaged voltage-source
//! inverter, series LC filter, injection transformer, PI magnitude controller
//! and an overcurrent bypass with hysteresis.
//!
//! The inverter is an averaged model (`v_inv = duty * v_dc / 2`), so there is
//! no switching ripple; the LC filter still shapes the injected voltage and
//! carries the reflected line current. Control acts on the positive-sequence
//! magnitude of the load voltage alone and synthesizes a balanced duty set
//! aligned with the grid reference angle, signed so the DVR can buck swells
//! as well as boost sags.

use crate::network::PHASE_OFFSETS;
use crate::signals::{positive_seq_magnitude, SequenceExtractor, ThreePhaseSample};

/// Averaged half-bridge inverter: `v_inv = duty * v_dc / 2`, with the duty
/// clamped to the physically available range.
#[derive(Debug, Clone, Copy)]
pub struct VsiAverage {
    /// DC-link voltage, volts.
    pub v_dc: f64,
}

impl VsiAverage {
    pub fn output(&self, duty: f64) -> f64 {
        duty.clamp(-1.0, 1.0) * self.v_dc / 2.0
    }
}

/// Series LC output filter with trapezoidal state per phase.
///
/// `l * di_l/dt = v_inv - r*i_l - v_c` and `c * dv_c/dt = i_l - i_out`,
/// where `i_out` is the line current reflected through the injection
/// transformer (held over the step; the line current is solved afterwards).
#[derive(Debug, Clone)]
pub struct LcFilter {
    pub l: f64,
    pub r: f64,
    pub c: f64,
    pub i_l: [f64; 3],
    pub v_c: [f64; 3],
    v_inv_prev: [f64; 3],
    i_out_prev: [f64; 3],
}

impl LcFilter {
    pub fn new(l: f64, r: f64, c: f64) -> Self {
        Self {
            l,
            r,
            c,
            i_l: [0.0; 3],
            v_c: [0.0; 3],
            v_inv_prev: [0.0; 3],
            i_out_prev: [0.0; 3],
        }
    }

    /// Advances one step and returns the capacitor voltages.
    pub fn filter_step(&mut self, v_inv: [f64; 3], i_out: [f64; 3], dt: f64) -> [f64; 3] {
        let a = dt / (2.0 * self.l);
        let b = dt / (2.0 * self.c);
        let det = 1.0 + a * self.r + a * b;
        for ph in 0..3 {
            let rhs1 = (1.0 - a * self.r) * self.i_l[ph]
                + a * (self.v_inv_prev[ph] + v_inv[ph])
                - a * self.v_c[ph];
            let rhs2 =
                self.v_c[ph] + b * self.i_l[ph] - b * (self.i_out_prev[ph] + i_out[ph]);
            let i_next = (rhs1 - a * rhs2) / det;
            self.v_c[ph] = rhs2 + b * i_next;
            self.i_l[ph] = i_next;
            self.v_inv_prev[ph] = v_inv[ph];
            self.i_out_prev[ph] = i_out[ph];
        }
        self.v_c
    }

    /// Analytic transfer `v_c / v_inv` at angular frequency `omega` with the
    /// output unloaded; used by tests to pin the filter response.
    pub fn unloaded_gain(&self, omega: f64) -> num_complex::Complex64 {
        let s = num_complex::Complex64::new(0.0, omega);
        1.0 / (1.0 + s * self.r * self.c + s * s * self.l * self.c)
    }
}

/// Series injection through an ideal transformer of the given ratio:
/// `v_dvr = ratio * v_c`, and the line current reflects back into the filter
/// as `i_out = ratio * i_line`.
pub fn inject(v_c: [f64; 3], ratio: f64) -> [f64; 3] {
    [ratio * v_c[0], ratio * v_c[1], ratio * v_c[2]]
}

/// Line current reflected to the filter side of the injection transformer.
pub fn reflect_line_current(i_line: [f64; 3], ratio: f64) -> [f64; 3] {
    [ratio * i_line[0], ratio * i_line[1], ratio * i_line[2]]
}

/// PI controller with output clamping and conditional (clamped) integration:
/// the integrator freezes while the output is saturated in the direction the
/// error keeps pushing, so recovery after deep events is immediate.
#[derive(Debug, Clone, Copy)]
pub struct PiController {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
    pub out_min: f64,
    pub out_max: f64,
    pub integral: f64,
}

impl PiController {
    pub fn new(kp: f64, ki: f64, out_min: f64, out_max: f64) -> Self {
        Self {
            kp,
            ki,
            out_min,
            out_max,
            integral: 0.0,
        }
    }

    pub fn step(&mut self, e: f64, dt: f64) -> f64 {
        let candidate = self.integral + self.ki * e * dt;
        let raw = self.kp * e + candidate;
        let out = raw.clamp(self.out_min, self.out_max);
        // Accept the new integral only when it does not drive the output
        // further into the active limit.
        if raw == out || (raw - out) * e < 0.0 {
            self.integral = candidate;
        }
        out
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }
}

/// Overcurrent bypass: engages the moment any phase exceeds `i_limit`
/// (instantaneous value) and re-arms only after every phase has stayed below
/// `rearm_fraction * i_limit` for one full fundamental cycle.
#[derive(Debug, Clone)]
pub struct BypassSwitch {
    /// Instantaneous trip level, amperes.
    pub i_limit: f64,
    /// Fraction of the trip level the current must stay under to re-arm.
    pub rearm_fraction: f64,
    /// Consecutive samples required below the re-arm level (one cycle).
    pub rearm_samples: usize,
    engaged: bool,
    ok_count: usize,
}

impl BypassSwitch {
    pub fn new(i_limit: f64, rearm_fraction: f64, rearm_samples: usize) -> Self {
        Self {
            i_limit,
            rearm_fraction,
            rearm_samples,
            engaged: false,
            ok_count: 0,
        }
    }

    pub fn engaged(&self) -> bool {
        self.engaged
    }

    /// Updates the switch from the line currents and returns whether the
    /// bypass is engaged for this step.
    pub fn bypass_check(&mut self, i_line: [f64; 3]) -> bool {
        let peak = i_line[0].abs().max(i_line[1].abs()).max(i_line[2].abs());
        if self.engaged {
            if peak < self.rearm_fraction * self.i_limit {
                self.ok_count += 1;
                if self.ok_count >= self.rearm_samples {
                    self.engaged = false;
                    self.ok_count = 0;
                }
            } else {
                self.ok_count = 0;
            }
        } else if peak > self.i_limit {
            self.engaged = true;
            self.ok_count = 0;
        }
        self.engaged
    }
}

/// Per-step result of [`DvrController::control_step`].
#[derive(Debug, Clone, Copy)]
pub struct ControlOutput {
    /// Balanced duty set aligned with the reference angle.
    pub duty: [f64; 3],
    /// Signed duty amplitude out of the PI.
    pub amplitude: f64,
    /// Measured positive-sequence load-voltage magnitude, pu.
    pub magnitude_pu: f64,
}

/// Magnitude-error PI controller for the DVR.
///
/// Measures the positive-sequence magnitude of the (previous-step) load
/// voltage, compares against the 1 pu reference and drives a balanced duty
/// set in phase with the grid reference angle.
#[derive(Debug, Clone)]
pub struct DvrController {
    pub pi: PiController,
    pub extractor: SequenceExtractor,
    /// Magnitude reference, pu.
    pub v_ref_pu: f64,
    /// Peak phase voltage corresponding to 1 pu.
    pub v_base_peak: f64,
}

impl DvrController {
    pub fn new(pi: PiController, extractor: SequenceExtractor, v_base_peak: f64) -> Self {
        Self {
            pi,
            extractor,
            v_ref_pu: 1.0,
            v_base_peak,
        }
    }

    pub fn control_step(&mut self, v_load: ThreePhaseSample, theta: f64, dt: f64) -> ControlOutput {
        let m = positive_seq_magnitude(&mut self.extractor, v_load, theta) / self.v_base_peak;
        let e = self.v_ref_pu - m;
        let u = self.pi.step(e, dt);
        ControlOutput {
            duty: [
                u * (theta + PHASE_OFFSETS[0]).cos(),
                u * (theta + PHASE_OFFSETS[1]).cos(),
                u * (theta + PHASE_OFFSETS[2]).cos(),
            ],
            amplitude: u,
            magnitude_pu: m,
        }
    }
}
