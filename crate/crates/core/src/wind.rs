//! Fixed-speed wind generation: rotor-disc aerodynamics and a
//! synchronous-frame induction machine model.
//!
//! The machine is expressed in flux-linkage state variables with the
//! amplitude-invariant dq convention of [`crate::signals`]. Currents are in
//! motor convention (positive into the stator), while `t_em` is reported in
//! generator convention (positive when braking the shaft), so the shaft
//! equation `j_r * domega_r/dt = t_g - t_em` is stable with a positive
//! driving turbine torque `t_g`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Betz limit on the power coefficient, 16/27.
pub const BETZ_LIMIT: f64 = 16.0 / 27.0;

#[derive(Debug, Error, PartialEq)]
pub enum WindError {
    #[error("aerodynamic parameter out of range: {0}")]
    BadAero(&'static str),
    #[error("inductance matrix is singular (det = {det})")]
    SingularInductance { det: f64 },
    #[error("no equilibrium slip in (-{span}, 0): turbine torque exceeds machine capability")]
    NoEquilibrium { span: f64 },
}

/// Rotor-disc aerodynamic description at a fixed operating point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeroParams {
    /// Air density in kg/m^3.
    pub rho: f64,
    /// Blade radius in metres.
    pub radius: f64,
    /// Power coefficient; must not exceed the Betz limit.
    pub cp: f64,
    /// Wind speed in m/s.
    pub v_w: f64,
}

impl AeroParams {
    pub fn validate(&self) -> Result<(), WindError> {
        if !(self.rho > 0.0) {
            return Err(WindError::BadAero("rho must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(WindError::BadAero("radius must be positive"));
        }
        if !(self.cp >= 0.0 && self.cp <= BETZ_LIMIT) {
            return Err(WindError::BadAero("cp must lie in [0, 16/27]"));
        }
        if !(self.v_w >= 0.0) {
            return Err(WindError::BadAero("v_w must be non-negative"));
        }
        Ok(())
    }
}

/// Kinetic power in the swept disc and the mechanical power extracted:
/// `p_w = 0.5 * pi * rho * radius^2 * v_w^3`, `p_m = cp * p_w`.
pub fn wind_power(aero: &AeroParams) -> (f64, f64) {
    let p_w = 0.5 * std::f64::consts::PI * aero.rho * aero.radius * aero.radius * aero.v_w.powi(3);
    (p_w, aero.cp * p_w)
}

/// Shaft torque of a fixed-pitch turbine delivering `p_m` watts at rotor
/// electrical speed `omega_r`. The mechanical speed is floored at 1 rad/s so
/// a machine initialized near standstill sees a bounded torque.
pub fn turbine_torque(p_m: f64, omega_r: f64, pole_pairs: u32) -> f64 {
    let omega_mech = (omega_r / pole_pairs as f64).max(1.0);
    p_m / omega_mech
}

/// Stator and rotor currents, motor convention (into the stator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineCurrents {
    pub i_ds: f64,
    pub i_qs: f64,
    pub i_dr: f64,
    pub i_qr: f64,
}

/// Per-step outputs of [`InductionMachine::machine_step`].
#[derive(Debug, Clone, Copy)]
pub struct MachineOutput {
    pub currents: MachineCurrents,
    /// Electromagnetic torque, generator convention.
    pub t_em: f64,
}

/// Steady-state operating point used for initialization and analysis.
#[derive(Debug, Clone, Copy)]
pub struct SteadyState {
    pub lambda: [f64; 4],
    pub currents: MachineCurrents,
    pub t_em: f64,
    pub omega_r: f64,
}

/// Squirrel-cage induction machine in flux-linkage state form.
///
/// Flux order throughout is `[lambda_ds, lambda_qs, lambda_dr, lambda_qr]`.
#[derive(Debug, Clone)]
pub struct InductionMachine {
    /// Stator resistance, ohms.
    pub r_s: f64,
    /// Rotor resistance (referred), ohms.
    pub r_r: f64,
    /// Stator leakage inductance, henries.
    pub l_ls: f64,
    /// Rotor leakage inductance (referred), henries.
    pub l_lr: f64,
    /// Magnetizing inductance, henries.
    pub l_m: f64,
    pub pole_pairs: u32,
    /// Shaft inertia as seen by the electrical speed state
    /// (mechanical inertia divided by pole pairs), kg m^2.
    pub j_r: f64,
    pub lambda: [f64; 4],
    /// Rotor electrical speed, rad/s.
    pub omega_r: f64,
}

impl InductionMachine {
    pub fn new(r_s: f64, r_r: f64, l_ls: f64, l_lr: f64, l_m: f64, pole_pairs: u32, j_r: f64) -> Self {
        Self {
            r_s,
            r_r,
            l_ls,
            l_lr,
            l_m,
            pole_pairs,
            j_r,
            lambda: [0.0; 4],
            omega_r: 0.0,
        }
    }

    fn l_s(&self) -> f64 {
        self.l_ls + self.l_m
    }

    fn l_r(&self) -> f64 {
        self.l_lr + self.l_m
    }

    /// Determinant of each 2x2 block of the flux-current matrix.
    pub fn inductance_det(&self) -> f64 {
        self.l_s() * self.l_r() - self.l_m * self.l_m
    }

    /// Inverts the block-diagonal flux-current relation
    /// `lambda_s = L_s i_s + L_m i_r`, `lambda_r = L_m i_s + L_r i_r`
    /// (one 2x2 block per axis).
    pub fn flux_to_currents(&self) -> Result<MachineCurrents, WindError> {
        let det = self.inductance_det();
        if det.abs() <= 1.0e-15 {
            return Err(WindError::SingularInductance { det });
        }
        Ok(self.currents_unchecked(&self.lambda, det))
    }

    fn currents_unchecked(&self, lambda: &[f64; 4], det: f64) -> MachineCurrents {
        let (l_s, l_r, l_m) = (self.l_s(), self.l_r(), self.l_m);
        MachineCurrents {
            i_ds: (l_r * lambda[0] - l_m * lambda[2]) / det,
            i_qs: (l_r * lambda[1] - l_m * lambda[3]) / det,
            i_dr: (l_s * lambda[2] - l_m * lambda[0]) / det,
            i_qr: (l_s * lambda[3] - l_m * lambda[1]) / det,
        }
    }

    /// Electromagnetic torque in generator convention:
    /// `t_em = 1.5 * pole_pairs * (lambda_qs * i_ds - lambda_ds * i_qs)`.
    /// Positive torque brakes the shaft (power flows out of the stator).
    pub fn electromagnetic_torque(&self, c: &MachineCurrents) -> f64 {
        torque_from(self.pole_pairs, self.lambda[0], self.lambda[1], c.i_ds, c.i_qs)
    }

    #[allow(clippy::too_many_arguments)]
    fn derivatives(
        &self,
        lambda: &[f64; 4],
        omega_r: f64,
        v_ds: f64,
        v_qs: f64,
        t_g: f64,
        omega_sync: f64,
        det: f64,
    ) -> ([f64; 4], f64) {
        let c = self.currents_unchecked(lambda, det);
        let slip_w = omega_sync - omega_r;
        let d_lambda = [
            v_ds - self.r_s * c.i_ds + omega_sync * lambda[1],
            v_qs - self.r_s * c.i_qs - omega_sync * lambda[0],
            -self.r_r * c.i_dr + slip_w * lambda[3],
            -self.r_r * c.i_qr - slip_w * lambda[2],
        ];
        let t_em = torque_from(self.pole_pairs, lambda[0], lambda[1], c.i_ds, c.i_qs);
        let d_omega = (t_g - t_em) / self.j_r;
        (d_lambda, d_omega)
    }

    /// One RK4 step of the coupled electrical and shaft dynamics with the
    /// stator voltage and turbine torque held over the step.
    pub fn machine_step(
        &mut self,
        v_ds: f64,
        v_qs: f64,
        t_g: f64,
        omega_sync: f64,
        dt: f64,
    ) -> Result<MachineOutput, WindError> {
        let det = self.inductance_det();
        if det.abs() <= 1.0e-15 {
            return Err(WindError::SingularInductance { det });
        }
        let f = |lambda: &[f64; 4], omega: f64| {
            self.derivatives(lambda, omega, v_ds, v_qs, t_g, omega_sync, det)
        };

        let (k1_l, k1_w) = f(&self.lambda, self.omega_r);
        let (k2_l, k2_w) = f(
            &advance(&self.lambda, &k1_l, 0.5 * dt),
            self.omega_r + 0.5 * dt * k1_w,
        );
        let (k3_l, k3_w) = f(
            &advance(&self.lambda, &k2_l, 0.5 * dt),
            self.omega_r + 0.5 * dt * k2_w,
        );
        let (k4_l, k4_w) = f(&advance(&self.lambda, &k3_l, dt), self.omega_r + dt * k3_w);

        for j in 0..4 {
            self.lambda[j] += dt / 6.0 * (k1_l[j] + 2.0 * k2_l[j] + 2.0 * k3_l[j] + k4_l[j]);
        }
        self.omega_r += dt / 6.0 * (k1_w + 2.0 * k2_w + 2.0 * k3_w + k4_w);

        let currents = self.currents_unchecked(&self.lambda, det);
        let t_em = self.electromagnetic_torque(&currents);
        Ok(MachineOutput { currents, t_em })
    }

    /// Electrical steady state at a given slip with the stator phasor on the
    /// d axis (`v_ds = v_peak`, `v_qs = 0`). In the synchronous frame the
    /// steady dq pairs are constant, so the solution is a complex 2x2 solve.
    pub fn steady_state(&self, v_peak: f64, slip: f64, omega_sync: f64) -> SteadyState {
        let j = Complex64::new(0.0, 1.0);
        let w = omega_sync;
        let sw = slip * w;
        let v = Complex64::new(v_peak, 0.0);
        // v = (r_s + jw L_s) i_s + jw L_m i_r
        // 0 = js L_m i_s * w + (r_r + js w L_r) i_r  ->  i_r in terms of i_s
        let zr = Complex64::new(self.r_r, sw * self.l_r());
        let ir_of_is = -j * sw * self.l_m / zr;
        let zs = Complex64::new(self.r_s, w * self.l_s()) + j * w * self.l_m * ir_of_is;
        let i_s = v / zs;
        let i_r = ir_of_is * i_s;
        let lam_s = self.l_s() * i_s + self.l_m * i_r;
        let lam_r = self.l_m * i_s + self.l_r() * i_r;
        let lambda = [lam_s.re, lam_s.im, lam_r.re, lam_r.im];
        let currents = MachineCurrents {
            i_ds: i_s.re,
            i_qs: i_s.im,
            i_dr: i_r.re,
            i_qr: i_r.im,
        };
        let t_em = torque_from(self.pole_pairs, lambda[0], lambda[1], currents.i_ds, currents.i_qs);
        SteadyState {
            lambda,
            currents,
            t_em,
            omega_r: (1.0 - slip) * omega_sync,
        }
    }

    /// Finds the stable generating slip where the steady electromagnetic
    /// torque balances the turbine torque for mechanical power `p_m`.
    pub fn equilibrium_slip(
        &self,
        v_peak: f64,
        omega_sync: f64,
        p_m: f64,
    ) -> Result<f64, WindError> {
        let span = 0.2;
        let balance = |s: f64| {
            let ss = self.steady_state(v_peak, s, omega_sync);
            turbine_torque(p_m, ss.omega_r, self.pole_pairs) - ss.t_em
        };
        // Bracket the first crossing walking away from synchronism.
        let mut lo = -1.0e-6;
        let mut hi = lo;
        let mut found = false;
        for k in 1..=400 {
            let s = -span * k as f64 / 400.0;
            if balance(s) < 0.0 {
                hi = s;
                found = true;
                break;
            }
            lo = s;
        }
        if !found {
            return Err(WindError::NoEquilibrium { span });
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if balance(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Loads a steady-state operating point into the machine state.
    pub fn apply_steady_state(&mut self, ss: &SteadyState) {
        self.lambda = ss.lambda;
        self.omega_r = ss.omega_r;
    }
}

fn torque_from(pole_pairs: u32, lambda_ds: f64, lambda_qs: f64, i_ds: f64, i_qs: f64) -> f64 {
    1.5 * pole_pairs as f64 * (lambda_qs * i_ds - lambda_ds * i_qs)
}

fn advance(x: &[f64; 4], dx: &[f64; 4], h: f64) -> [f64; 4] {
    [
        x[0] + h * dx[0],
        x[1] + h * dx[1],
        x[2] + h * dx[2],
        x[3] + h * dx[3],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const OMEGA: f64 = 2.0 * std::f64::consts::PI * 50.0;
    const V_PEAK: f64 = 326.598; // 400 V line-to-line

    /// 25 kW-scale 400 V machine used by the shipped scenarios.
    fn machine() -> InductionMachine {
        InductionMachine::new(0.128, 0.064, 1.63e-3, 1.63e-3, 61.1e-3, 2, 0.5)
    }

    #[test]
    fn disc_power_at_reference_point() {
        let aero = AeroParams {
            rho: 1.225,
            radius: 10.0,
            cp: 0.4,
            v_w: 10.0,
        };
        let (p_w, p_m) = wind_power(&aero);
        assert!((p_w - 192_423.0).abs() < 1.0, "p_w={}", p_w);
        assert!((p_m - 76_969.0).abs() < 1.0, "p_m={}", p_m);
    }

    #[test]
    fn disc_power_scales_with_v_cubed() {
        let mut aero = AeroParams {
            rho: 1.225,
            radius: 10.0,
            cp: 0.4,
            v_w: 5.0,
        };
        let (p1, _) = wind_power(&aero);
        aero.v_w = 10.0;
        let (p2, _) = wind_power(&aero);
        assert!((p2 / p1 - 8.0).abs() < 1.0e-9);
        aero.v_w = 0.0;
        assert_eq!(wind_power(&aero), (0.0, 0.0));
    }

    #[test]
    fn betz_limit_enforced_and_respected() {
        let mut aero = AeroParams {
            rho: 1.225,
            radius: 10.0,
            cp: 0.7,
            v_w: 10.0,
        };
        assert!(aero.validate().is_err());
        for k in 0..100 {
            aero.cp = BETZ_LIMIT * k as f64 / 99.0;
            aero.validate().unwrap();
            let (p_w, p_m) = wind_power(&aero);
            assert!(p_m <= 0.593 * p_w + 1.0e-9);
        }
    }

    #[test]
    fn flux_inversion_reference_values() {
        let mut m = machine();
        m.l_ls = 0.1;
        m.l_lr = 0.1;
        m.l_m = 1.0;
        m.lambda = [1.0, 0.0, 0.0, 0.0];
        assert!((m.inductance_det() - 0.21).abs() < 1.0e-12);
        let c = m.flux_to_currents().unwrap();
        assert!((c.i_ds - 5.238095).abs() < 1.0e-4);
        assert!((c.i_dr - (-4.761905)).abs() < 1.0e-4);
        assert_eq!(c.i_qs, 0.0);
        assert_eq!(c.i_qr, 0.0);
    }

    #[test]
    fn zero_flux_means_zero_current() {
        let m = machine();
        let c = m.flux_to_currents().unwrap();
        assert_eq!((c.i_ds, c.i_qs, c.i_dr, c.i_qr), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn flux_inversion_round_trips() {
        let mut m = machine();
        m.lambda = [0.83, -0.41, 0.56, 0.92];
        let c = m.flux_to_currents().unwrap();
        let back = [
            m.l_s() * c.i_ds + m.l_m * c.i_dr,
            m.l_s() * c.i_qs + m.l_m * c.i_qr,
            m.l_m * c.i_ds + m.l_r() * c.i_dr,
            m.l_m * c.i_qs + m.l_r() * c.i_qr,
        ];
        for j in 0..4 {
            assert!((back[j] - m.lambda[j]).abs() < 1.0e-12);
        }
    }

    #[test]
    fn singular_inductances_are_rejected() {
        let mut m = machine();
        m.l_ls = 0.0;
        m.l_lr = 0.0;
        assert!(matches!(
            m.flux_to_currents(),
            Err(WindError::SingularInductance { .. })
        ));
        assert!(m
            .machine_step(0.0, 0.0, 0.0, OMEGA, 5.0e-5)
            .is_err());
    }

    #[test]
    fn torque_sign_convention() {
        // Pure motoring point (flux on d, current on q) gives negative
        // braking torque; swapping d and q flips the sign.
        let mut m = machine();
        m.lambda = [1.0, 0.0, 0.0, 0.0];
        let c = MachineCurrents {
            i_ds: 0.0,
            i_qs: 1.0,
            i_dr: 0.0,
            i_qr: 0.0,
        };
        assert_eq!(m.electromagnetic_torque(&c), -3.0);
        m.lambda = [0.0, 1.0, 0.0, 0.0];
        let c_swapped = MachineCurrents {
            i_ds: 1.0,
            i_qs: 0.0,
            i_dr: 0.0,
            i_qr: 0.0,
        };
        assert_eq!(m.electromagnetic_torque(&c_swapped), 3.0);
    }

    #[test]
    fn balanced_torques_hold_speed() {
        let mut m = machine();
        m.omega_r = 300.0;
        // No excitation: t_em stays zero, so t_g = 0 balances exactly.
        m.machine_step(0.0, 0.0, 0.0, OMEGA, 5.0e-5).unwrap();
        assert_eq!(m.omega_r, 300.0);
    }

    #[test]
    fn constant_torque_imbalance_integrates_exactly() {
        let mut m = machine();
        m.j_r = 2.0;
        m.omega_r = 100.0;
        // t_em is identically zero without excitation, so t_g - t_em = 2.
        let dt = 1.0e-3;
        for _ in 0..1000 {
            m.machine_step(0.0, 0.0, 2.0, OMEGA, dt).unwrap();
        }
        // domega/dt = 1 rad/s^2 for one second.
        assert!((m.omega_r - 101.0).abs() < 1.0e-9, "omega={}", m.omega_r);
    }

    #[test]
    fn unexcited_fluxes_decay_to_zero() {
        // Shorted, unexcited machine: the stored flux must dissipate. The
        // norm is not monotone sample to sample (the system is non-normal,
        // so brief transient growth is legitimate), but the decay must win.
        let mut m = machine();
        m.lambda = [0.5, -0.2, 0.3, 0.1];
        m.omega_r = OMEGA;
        let norm = |l: &[f64; 4]| l.iter().map(|x| x * x).sum::<f64>().sqrt();
        let initial = norm(&m.lambda);
        let mut peak = initial;
        for _ in 0..30_000 {
            m.machine_step(0.0, 0.0, 0.0, OMEGA, 5.0e-5).unwrap();
            peak = peak.max(norm(&m.lambda));
        }
        let final_norm = norm(&m.lambda);
        assert!(
            final_norm < 0.01 * initial,
            "flux residue {final_norm} after 1.5 s (started at {initial})"
        );
        assert!(
            peak < 1.5 * initial,
            "unexcited flux should not grow appreciably, peaked at {peak}"
        );
        // The decaying flux exerts a brief torque; the speed may move a
        // little but must settle, not run away.
        assert!(
            (m.omega_r - OMEGA).abs() < 10.0,
            "speed drifted to {}",
            m.omega_r
        );
    }

    #[test]
    fn steady_state_is_a_fixed_point_of_the_dynamics() {
        let m = machine();
        let ss = m.steady_state(V_PEAK, -0.01, OMEGA);
        let det = m.inductance_det();
        let (dl, _) = m.derivatives(&ss.lambda, ss.omega_r, V_PEAK, 0.0, ss.t_em, OMEGA, det);
        for (j, d) in dl.iter().enumerate() {
            // Scale: lambda ~ 1 Vs, so derivatives should vanish.
            assert!(d.abs() < 1.0e-6, "d lambda[{j}] = {d}");
        }
    }

    #[test]
    fn generating_steady_state_brakes_and_exports() {
        let m = machine();
        let ss = m.steady_state(V_PEAK, -0.01, OMEGA);
        assert!(ss.t_em > 0.0, "braking torque expected, got {}", ss.t_em);
        // Stator active power, motor convention: negative when exporting.
        let p_s = 1.5 * (V_PEAK * ss.currents.i_ds);
        assert!(p_s < 0.0, "machine should export power, p_s = {}", p_s);
    }

    #[test]
    fn mechanical_power_matches_air_gap_power_at_small_slip() {
        let m = machine();
        let slip = -0.005;
        let ss = m.steady_state(V_PEAK, slip, OMEGA);
        let p_mech = ss.t_em * ss.omega_r / m.pole_pairs as f64;
        let p_stator = 1.5 * (V_PEAK * ss.currents.i_ds);
        let p_cu_s = 1.5 * m.r_s * (ss.currents.i_ds.powi(2) + ss.currents.i_qs.powi(2));
        let air_gap = -(p_stator - p_cu_s); // power arriving from the rotor
        assert!(
            (p_mech - air_gap).abs() < 0.01 * air_gap.abs(),
            "mech {} vs air gap {}",
            p_mech,
            air_gap
        );
    }

    #[test]
    fn equilibrium_slip_is_small_and_negative_at_rated_drive() {
        let m = machine();
        let p_m = 24.0e3;
        let slip = m.equilibrium_slip(V_PEAK, OMEGA, p_m).unwrap();
        assert!(slip < 0.0 && slip > -0.05, "slip={}", slip);
        let ss = m.steady_state(V_PEAK, slip, OMEGA);
        let t_g = turbine_torque(p_m, ss.omega_r, m.pole_pairs);
        assert!((t_g - ss.t_em).abs() < 1.0e-6 * t_g.abs());
    }

    #[test]
    fn overdriven_machine_has_no_equilibrium() {
        let m = machine();
        // Far beyond pull-out for this machine.
        assert!(matches!(
            m.equilibrium_slip(V_PEAK, OMEGA, 5.0e6),
            Err(WindError::NoEquilibrium { .. })
        ));
    }

    #[test]
    fn time_domain_settles_onto_the_steady_state() {
        // Start slightly off the computed operating point and verify the
        // trajectory returns to it (the equilibrium is stable).
        let mut m = machine();
        let p_m = 24.0e3;
        let slip = m.equilibrium_slip(V_PEAK, OMEGA, p_m).unwrap();
        let ss = m.steady_state(V_PEAK, slip, OMEGA);
        m.apply_steady_state(&ss);
        m.omega_r *= 1.002; // 0.2% speed disturbance
        let dt = 5.0e-5;
        let mut t_em = 0.0;
        for _ in 0..20_000 {
            let t_g = turbine_torque(p_m, m.omega_r, m.pole_pairs);
            t_em = m.machine_step(V_PEAK, 0.0, t_g, OMEGA, dt).unwrap().t_em;
        }
        assert!(
            (m.omega_r - ss.omega_r).abs() < 5.0e-4 * ss.omega_r,
            "omega {} vs {}",
            m.omega_r,
            ss.omega_r
        );
        assert!((t_em - ss.t_em).abs() < 0.01 * ss.t_em.abs());
    }
}
