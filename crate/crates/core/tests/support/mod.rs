//! Helpers shared by the integration tests.
//!
//! The torque oracle here is deliberately independent of the library: it
//! solves the textbook per-phase equivalent circuit with its own complex
//! arithmetic, so a factor slipped into the flux-linkage model cannot hide.

use std::ops::{Add, Div, Mul, Sub};

#[derive(Clone, Copy)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    fn new(re: f64, im: f64) -> Self {
        C { re, im }
    }

    fn abs2(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

impl Add for C {
    type Output = C;
    fn add(self, o: C) -> C {
        C::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for C {
    type Output = C;
    fn sub(self, o: C) -> C {
        C::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for C {
    type Output = C;
    fn mul(self, o: C) -> C {
        C::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

impl Div for C {
    type Output = C;
    fn div(self, o: C) -> C {
        let d = o.abs2();
        C::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
}

/// Steady-state electromagnetic torque of a squirrel-cage induction machine
/// from the per-phase equivalent circuit, generator sign convention
/// (positive when driven above synchronous speed, i.e. `slip < 0`).
///
/// `v_phase_peak` is the peak phase voltage, `omega_e` the electrical
/// synchronous speed in rad/s. Solves stator impedance feeding the
/// magnetizing branch in parallel with the rotor branch, then converts
/// air-gap power to torque on the synchronous mechanical speed:
/// `t = 3 p |I_r,rms|^2 (r_r / slip) / omega_e`, negated for the generator
/// convention.
#[allow(clippy::too_many_arguments)]
pub fn equivalent_circuit_torque(
    r_s: f64,
    r_r: f64,
    l_ls: f64,
    l_lr: f64,
    l_m: f64,
    pole_pairs: u32,
    v_phase_peak: f64,
    slip: f64,
    omega_e: f64,
) -> f64 {
    assert!(slip != 0.0, "torque is undefined at exactly zero slip");
    let v = C::new(v_phase_peak / 2f64.sqrt(), 0.0);
    let z_s = C::new(r_s, omega_e * l_ls);
    let z_m = C::new(0.0, omega_e * l_m);
    let z_r = C::new(r_r / slip, omega_e * l_lr);
    let z_mr = z_m * z_r / (z_m + z_r);
    let i_s = v / (z_s + z_mr);
    let v_gap = v - i_s * z_s;
    let i_r = v_gap / z_r;
    let p_airgap = 3.0 * i_r.abs2() * (r_r / slip);
    -p_airgap * pole_pairs as f64 / omega_e
}
