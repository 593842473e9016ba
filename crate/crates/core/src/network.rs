//! Feeder electrical model: Thevenin source behind an ideal step-down
//! transformer, a parallel R-L load, and the single-node bus solve that
//! ties them to the DVR injection and the generator current sources.
//!
//! Inductive branches use trapezoidal companion models: each branch reduces
//! to a Norton equivalent `i = g * v_forcing + h` whose history term `h`
//! depends only on the previous step, so the bus voltage follows from one
//! scalar equation per phase.

use num_complex::Complex64;
use thiserror::Error;

use crate::signals::ThreePhaseSample;

const SHIFT: f64 = 2.0 * std::f64::consts::PI / 3.0;
/// Phase angle offsets for phases a, b, c.
pub const PHASE_OFFSETS: [f64; 3] = [0.0, -SHIFT, SHIFT];

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("singular bus node: total conductance {g} at step {step}")]
    SingularNode { g: f64, step: usize },
    #[error("non-finite bus voltage at step {step} (phase {phase})")]
    NonFinite { step: usize, phase: usize },
}

/// Grid Thevenin equivalent on the primary (HV) side.
#[derive(Debug, Clone)]
pub struct TheveninSource {
    /// Per-phase EMF peak in volts.
    pub e_peak: f64,
    /// Fundamental frequency in hertz.
    pub f: f64,
    /// Series resistance in ohms.
    pub r: f64,
    /// Series inductance in henries.
    pub l: f64,
}

impl TheveninSource {
    /// Source described by its line-to-line RMS EMF.
    pub fn from_line_voltage(v_ll: f64, f: f64, r: f64, l: f64) -> Self {
        Self {
            e_peak: v_ll * (2.0_f64 / 3.0).sqrt(),
            f,
            r,
            l,
        }
    }
}

/// Ideal two-winding transformer: `v2 = v1 / ratio`, `i2 = i1 * ratio`,
/// impedances referred by `ratio^2`. Lossless and saturation-free.
#[derive(Debug, Clone)]
pub struct IdealTransformer {
    /// Primary-to-secondary voltage ratio (e.g. 50 for 20 kV : 400 V).
    pub ratio: f64,
    /// Winding connection label, informational only (e.g. "Yg-Yg").
    pub connection: String,
}

impl IdealTransformer {
    pub fn to_secondary_voltage(&self, v1: f64) -> f64 {
        v1 / self.ratio
    }

    pub fn to_primary_current(&self, i2: f64) -> f64 {
        i2 / self.ratio
    }

    pub fn refer_impedance(&self, z1: f64) -> f64 {
        z1 / (self.ratio * self.ratio)
    }
}

/// Parallel R-L load, per phase (wye). `l` may be infinite for a purely
/// resistive load.
#[derive(Debug, Clone, Copy)]
pub struct RlLoad {
    pub r: f64,
    pub l: f64,
}

/// Sizes a parallel R-L load that draws `p` watts and `q` vars (inductive)
/// at line voltage `v_ll` and frequency `f`.
pub fn load_from_pq(p: f64, q: f64, v_ll: f64, f: f64) -> RlLoad {
    let v2 = v_ll * v_ll;
    let r = if p > 0.0 { v2 / p } else { f64::INFINITY };
    let l = if q > 0.0 {
        v2 / q / (2.0 * std::f64::consts::PI * f)
    } else {
        f64::INFINITY
    };
    RlLoad { r, l }
}

/// Source branch referred to the transformer secondary, with trapezoidal
/// history per phase. The branch integrates
/// `l * di/dt = u - r*i - v_bus`, where `u` is the total series forcing
/// voltage (event-scaled EMF plus any DVR injection).
#[derive(Debug, Clone)]
pub struct SourceBranch {
    pub e_peak: f64,
    pub r: f64,
    pub l: f64,
    /// Branch current into the bus, per phase.
    pub i: [f64; 3],
    /// Inductor voltage, tracked for the series-drop identity.
    pub v_l: [f64; 3],
    u_prev: [f64; 3],
    v_prev: [f64; 3],
}

impl SourceBranch {
    pub fn new(src: &TheveninSource, xfmr: &IdealTransformer) -> Self {
        Self {
            e_peak: xfmr.to_secondary_voltage(src.e_peak),
            r: xfmr.refer_impedance(src.r),
            l: xfmr.refer_impedance(src.l),
            i: [0.0; 3],
            v_l: [0.0; 3],
            u_prev: [0.0; 3],
            v_prev: [0.0; 3],
        }
    }

    /// Referred EMF samples at angle `theta`, scaled per phase by `mult`.
    pub fn emf(&self, theta: f64, mult: [f64; 3]) -> [f64; 3] {
        [
            self.e_peak * mult[0] * (theta + PHASE_OFFSETS[0]).cos(),
            self.e_peak * mult[1] * (theta + PHASE_OFFSETS[1]).cos(),
            self.e_peak * mult[2] * (theta + PHASE_OFFSETS[2]).cos(),
        ]
    }

    /// Norton companion for the next step: `i_next = g*(u_next - v_next) + h`.
    pub fn companion(&self, dt: f64) -> (f64, [f64; 3]) {
        let a = dt / (2.0 * self.l);
        let den = 1.0 + a * self.r;
        let g = a / den;
        let mut h = [0.0; 3];
        for ph in 0..3 {
            h[ph] = ((1.0 - a * self.r) * self.i[ph] + a * (self.u_prev[ph] - self.v_prev[ph]))
                / den;
        }
        (g, h)
    }

    /// Advances the branch to the solved bus voltage and returns the new
    /// branch currents.
    pub fn commit(&mut self, u_next: [f64; 3], v_next: [f64; 3], dt: f64) -> [f64; 3] {
        let (g, h) = self.companion(dt);
        for ph in 0..3 {
            let i_next = g * (u_next[ph] - v_next[ph]) + h[ph];
            // Companion recursion for the inductor voltage.
            self.v_l[ph] = 2.0 * self.l / dt * (i_next - self.i[ph]) - self.v_l[ph];
            self.i[ph] = i_next;
            self.u_prev[ph] = u_next[ph];
            self.v_prev[ph] = v_next[ph];
        }
        self.i
    }

    /// Instantaneous series drop `r*i + l*di/dt` per phase.
    pub fn series_drop(&self, ph: usize) -> f64 {
        self.r * self.i[ph] + self.v_l[ph]
    }

    /// Standalone step with a known bus voltage (no algebraic coupling):
    /// forcing is the event-scaled EMF alone.
    pub fn step(&mut self, theta: f64, mult: [f64; 3], v_bus: [f64; 3], dt: f64) -> [f64; 3] {
        let u = self.emf(theta, mult);
        self.commit(u, v_bus, dt)
    }

    /// Seeds the trapezoidal history from phasor initial conditions.
    pub fn init_state(&mut self, i0: [f64; 3], v_l0: [f64; 3], u0: [f64; 3], v0: [f64; 3]) {
        self.i = i0;
        self.v_l = v_l0;
        self.u_prev = u0;
        self.v_prev = v0;
    }
}

/// Load branch with trapezoidal history for the inductor, per phase.
#[derive(Debug, Clone)]
pub struct LoadBranch {
    pub params: RlLoad,
    /// Inductor current per phase.
    pub i_l: [f64; 3],
    v_prev: [f64; 3],
}

impl LoadBranch {
    pub fn new(params: RlLoad) -> Self {
        Self {
            params,
            i_l: [0.0; 3],
            v_prev: [0.0; 3],
        }
    }

    /// Norton companion: `i_load_next = g * v_next + h`.
    pub fn companion(&self, dt: f64) -> (f64, [f64; 3]) {
        let a = dt / (2.0 * self.params.l); // zero for a resistive load
        let g = 1.0 / self.params.r + a;
        let mut h = [0.0; 3];
        for ph in 0..3 {
            h[ph] = self.i_l[ph] + a * self.v_prev[ph];
        }
        (g, h)
    }

    /// Advances the load to the solved bus voltage and returns the total
    /// load current per phase.
    pub fn commit(&mut self, v_next: [f64; 3], dt: f64) -> [f64; 3] {
        let a = dt / (2.0 * self.params.l);
        let mut i_load = [0.0; 3];
        for ph in 0..3 {
            self.i_l[ph] += a * (self.v_prev[ph] + v_next[ph]);
            self.v_prev[ph] = v_next[ph];
            i_load[ph] = v_next[ph] / self.params.r + self.i_l[ph];
        }
        i_load
    }

    /// Standalone step with a known bus voltage.
    pub fn step(&mut self, v_bus: [f64; 3], dt: f64) -> [f64; 3] {
        self.commit(v_bus, dt)
    }

    pub fn init_state(&mut self, i_l0: [f64; 3], v0: [f64; 3]) {
        self.i_l = i_l0;
        self.v_prev = v0;
    }
}

/// Result of one nodal solve at the load bus.
#[derive(Debug, Clone, Copy)]
pub struct BusSolution {
    pub v_load: [f64; 3],
    pub i_grid: [f64; 3],
    pub i_load: [f64; 3],
    /// KCL residual per phase; zero up to rounding by construction.
    pub kcl_residual: [f64; 3],
}

/// Solves KCL at the load bus for one step and advances both branches.
///
/// `u_next` is the series forcing voltage per phase (event-scaled EMF plus
/// DVR injection); `i_inj` the known generator current injections (wind
/// plus PV). Enforces `i_grid + i_inj = i_load` with
/// `v_load = u_next - z_th_drop`.
pub fn bus_solve(
    source: &mut SourceBranch,
    load: &mut LoadBranch,
    u_next: [f64; 3],
    i_inj: [f64; 3],
    dt: f64,
    step: usize,
) -> Result<BusSolution, NetworkError> {
    let (gs, hs) = source.companion(dt);
    let (gl, hl) = load.companion(dt);
    let g = gs + gl;
    if !(g > 1.0e-12) {
        return Err(NetworkError::SingularNode { g, step });
    }
    let mut v = [0.0; 3];
    for ph in 0..3 {
        v[ph] = (gs * u_next[ph] + hs[ph] + i_inj[ph] - hl[ph]) / g;
        if !v[ph].is_finite() {
            return Err(NetworkError::NonFinite { step, phase: ph });
        }
    }
    let i_grid = source.commit(u_next, v, dt);
    let i_load = load.commit(v, dt);
    let mut kcl = [0.0; 3];
    for ph in 0..3 {
        kcl[ph] = i_grid[ph] + i_inj[ph] - i_load[ph];
    }
    Ok(BusSolution {
        v_load: v,
        i_grid,
        i_load,
        kcl_residual: kcl,
    })
}

/// Series-voltage identity residual for one phase:
/// `v_load - (v_grid - z_th_drop + v_dvr)`, which is zero by construction
/// whenever the solve is consistent.
pub fn series_identity_residual(
    source: &SourceBranch,
    ph: usize,
    v_grid: f64,
    v_dvr: f64,
    v_load: f64,
) -> f64 {
    v_load - (v_grid - source.series_drop(ph) + v_dvr)
}

/// Steady-state phasor of the bus voltage for the linear network:
/// EMF `e` behind `z_th`, shunt admittance `y_load`, plus a current
/// injection `i_inj` at the bus.
pub fn phasor_bus_voltage(
    e: Complex64,
    z_th: Complex64,
    y_load: Complex64,
    i_inj: Complex64,
) -> Complex64 {
    (e / z_th + i_inj) / (1.0 / z_th + y_load)
}

/// Per-phase shunt admittance of a parallel R-L load at angular frequency
/// `omega`.
pub fn load_admittance(load: &RlLoad, omega: f64) -> Complex64 {
    let g = if load.r.is_finite() { 1.0 / load.r } else { 0.0 };
    let b = if load.l.is_finite() {
        -1.0 / (omega * load.l)
    } else {
        0.0
    };
    Complex64::new(g, b)
}

/// Instantaneous value of a phasor on phase `ph` at angle `theta`.
pub fn phasor_sample(x: Complex64, theta: f64, ph: usize) -> f64 {
    (x * Complex64::from_polar(1.0, theta + PHASE_OFFSETS[ph])).re
}

/// Three-phase sample of a phasor at angle `theta`.
pub fn phasor_three_phase(x: Complex64, theta: f64, t: f64) -> ThreePhaseSample {
    ThreePhaseSample::new(
        phasor_sample(x, theta, 0),
        phasor_sample(x, theta, 1),
        phasor_sample(x, theta, 2),
        t,
    )
}
