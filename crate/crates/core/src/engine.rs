//! Fixed-step simulation orchestrator: scenario schema and validation,
//! steady-state (phasor) initialization, the per-step evaluation order,
//! trace recording and post-run RMS channels.
//!
//! Per-step order: advance the reference angle, evaluate event multipliers,
//! run the DVR controller on the previous step's load voltage, advance the
//! inverter filter, advance the wind machine and PV tracker, solve the bus,
//! record. The controller deliberately sees a one-step-old measurement; that
//! breaks the algebraic loop between control and the nodal solve.

use std::io::{BufRead, Write};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvr::{BypassSwitch, DvrController, LcFilter, PiController, VsiAverage};
use crate::events::{overlapping_events, source_multiplier, EventKind, Phase, VoltageEvent};
use crate::network::{
    bus_solve, load_admittance, load_from_pq, phasor_bus_voltage, phasor_sample,
    phasor_three_phase, IdealTransformer, LoadBranch, NetworkError, SourceBranch,
    TheveninSource,
};
use crate::pv::{MpptState, PvError, PvModel};
use crate::signals::{
    abc_to_dq, dq_to_abc, samples_per_period, DqFrame, PerUnitBase, SequenceExtractor,
    SignalError, SlidingRms, ThreePhaseSample,
};
use crate::wind::{turbine_torque, wind_power, AeroParams, InductionMachine, WindError};

/// Canonical channel order of a full trace.
pub const CHANNELS: [&str; 23] = [
    "t", "v_grid_a", "v_grid_b", "v_grid_c", "v_dvr_a", "v_dvr_b", "v_dvr_c", "v_load_a",
    "v_load_b", "v_load_c", "i_load_a", "i_load_b", "i_load_c", "rms_grid_pu", "rms_dvr_pu",
    "rms_load_pu", "rms_wind_pu", "omega_r", "t_em", "v_pv", "p_pv", "duty_mag", "bypass",
];

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario invalid:\n  {}", violations.join("\n  "))]
    Invalid { violations: Vec<String> },
    #[error("signal configuration: {0}")]
    Signal(#[from] SignalError),
    #[error("network solve failed at t = {t} s: {source}")]
    Network { source: NetworkError, t: f64 },
    #[error("wind model failed at t = {t} s: {source}")]
    Wind { source: WindError, t: f64 },
    #[error("pv model failed at t = {t} s: {source}")]
    Pv { source: PvError, t: f64 },
    #[error("trace format: {0}")]
    Csv(String),
}

impl EngineError {
    /// True for errors caused by scenario content rather than by the solve.
    pub fn is_validation(&self) -> bool {
        matches!(self, EngineError::Invalid { .. } | EngineError::Signal(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    /// Line-to-line voltage base at the protected bus, volts.
    pub v_base_ll: f64,
    /// Three-phase apparent power base, VA.
    pub s_base: f64,
    /// Fundamental frequency, Hz.
    pub f_nominal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    /// Step size, seconds.
    pub dt: f64,
    /// End time, seconds; the trace spans [0, t_end].
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceCfg {
    /// Line-to-line EMF on the primary side, volts.
    pub v_ll: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceCfg {
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerCfg {
    /// Primary-to-secondary voltage ratio.
    pub ratio: f64,
    #[serde(default = "default_connection")]
    pub connection: String,
}

fn default_connection() -> String {
    "Yg-Yg".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCfg {
    /// Active power draw at nominal voltage, watts.
    pub p: f64,
    /// Inductive reactive power draw at nominal voltage, vars.
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineCfg {
    pub r_s: f64,
    pub r_r: f64,
    pub l_ls: f64,
    pub l_lr: f64,
    pub l_m: f64,
    pub pole_pairs: u32,
    /// Inertia referred to the electrical speed state, kg m^2.
    pub j_r: f64,
}

impl MachineCfg {
    pub fn build(&self) -> InductionMachine {
        InductionMachine::new(
            self.r_s,
            self.r_r,
            self.l_ls,
            self.l_lr,
            self.l_m,
            self.pole_pairs,
            self.j_r,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindCfg {
    pub aero: AeroParams,
    pub machine: MachineCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpptCfg {
    /// Perturbation size, volts per decision.
    pub step_v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvCfg {
    pub model: PvModel,
    pub mppt: MpptCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterCfg {
    pub l: f64,
    pub r: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerCfg {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
    #[serde(default = "neg_one")]
    pub out_min: f64,
    #[serde(default = "pos_one")]
    pub out_max: f64,
}

fn neg_one() -> f64 {
    -1.0
}

fn pos_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BypassCfg {
    /// Instantaneous trip level in per unit of rated peak line current.
    pub i_limit_pu: f64,
    /// Re-arm hysteresis level as a fraction of the trip level.
    pub rearm_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvrCfg {
    pub enabled: bool,
    pub v_dc: f64,
    pub filter: FilterCfg,
    /// Injection transformer ratio (filter side : line side).
    pub transformer_ratio: f64,
    pub controller: ControllerCfg,
    pub bypass: BypassCfg,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub bases: Bases,
    pub solver: SolverCfg,
    pub source: SourceCfg,
    pub z_th: ImpedanceCfg,
    pub transformer: TransformerCfg,
    pub load: LoadCfg,
    #[serde(default)]
    pub wind: Option<WindCfg>,
    #[serde(default)]
    pub pv: Option<PvCfg>,
    pub dvr: DvrCfg,
    #[serde(default)]
    pub events: Vec<VoltageEvent>,
    /// Optional channel subset for the CSV; `t` is always included.
    #[serde(default)]
    pub record: Option<Vec<String>>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        serde_json::from_str(text).map_err(|e| EngineError::Invalid {
            violations: vec![format!("scenario JSON: {e}")],
        })
    }

    /// Checks every field-level invariant and returns all violations.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != 1 {
            v.push(format!(
                "unsupported schema_version {} (expected 1)",
                self.schema_version
            ));
        }
        if !(self.bases.v_base_ll > 0.0) {
            v.push("bases.v_base_ll must be positive".to_string());
        }
        if !(self.bases.s_base > 0.0) {
            v.push("bases.s_base must be positive".to_string());
        }
        if !(self.bases.f_nominal > 0.0) {
            v.push("bases.f_nominal must be positive".to_string());
        }
        if !(self.solver.dt > 0.0) {
            v.push("dt must be positive".to_string());
        }
        if !(self.solver.t_end >= self.solver.dt) {
            v.push("t_end must be at least one step".to_string());
        }
        if self.solver.dt > 0.0 && self.bases.f_nominal > 0.0 {
            if let Err(e) = samples_per_period(self.bases.f_nominal, self.solver.dt) {
                v.push(format!("solver step: {e}"));
            }
        }
        if !(self.source.v_ll > 0.0) {
            v.push("source.v_ll must be positive".to_string());
        }
        if !(self.z_th.r >= 0.0 && self.z_th.l >= 0.0) {
            v.push("z_th components must be non-negative".to_string());
        }
        if !(self.z_th.l > 0.0) {
            v.push("z_th.l must be positive (the source branch is inductive)".to_string());
        }
        if !(self.transformer.ratio > 0.0) {
            v.push("transformer.ratio must be positive".to_string());
        }
        if !(self.load.p >= 0.0) {
            v.push("load.p must be non-negative".to_string());
        }
        if !(self.load.q >= 0.0) {
            v.push("load.q must be non-negative".to_string());
        }
        if let Some(w) = &self.wind {
            if let Err(e) = w.aero.validate() {
                v.push(format!("wind.aero: {e}"));
            }
            let m = &w.machine;
            if !(m.r_s >= 0.0 && m.r_r > 0.0) {
                v.push("wind.machine resistances: r_s >= 0 and r_r > 0 required".to_string());
            }
            if !(m.l_ls >= 0.0 && m.l_lr >= 0.0 && m.l_m > 0.0) {
                v.push("wind.machine inductances: l_ls, l_lr >= 0 and l_m > 0 required".to_string());
            }
            if m.pole_pairs == 0 {
                v.push("wind.machine.pole_pairs must be at least 1".to_string());
            }
            if !(m.j_r > 0.0) {
                v.push("wind.machine.j_r must be positive".to_string());
            }
            if m.build().inductance_det() <= 1.0e-15 {
                v.push("wind.machine inductance matrix is singular".to_string());
            }
        }
        if let Some(p) = &self.pv {
            if let Err(e) = p.model.validate() {
                v.push(format!("pv.model: {e}"));
            }
            if !(p.mppt.step_v > 0.0) {
                v.push("pv.mppt.step_v must be positive".to_string());
            }
        }
        let d = &self.dvr;
        if !(d.v_dc > 0.0) {
            v.push("dvr.v_dc must be positive".to_string());
        }
        if !(d.filter.l > 0.0 && d.filter.c > 0.0) {
            v.push("dvr.filter.l and dvr.filter.c must be positive".to_string());
        }
        if !(d.filter.r >= 0.0) {
            v.push("dvr.filter.r must be non-negative".to_string());
        }
        if !(d.transformer_ratio > 0.0) {
            v.push("dvr.transformer_ratio must be positive".to_string());
        }
        if !(d.controller.kp >= 0.0 && d.controller.ki >= 0.0) {
            v.push("dvr.controller gains must be non-negative".to_string());
        }
        if !(d.controller.out_min < d.controller.out_max) {
            v.push("dvr.controller.out_min must be below out_max".to_string());
        }
        if !(d.controller.out_min >= -1.0 && d.controller.out_max <= 1.0) {
            v.push("dvr.controller output limits must lie within [-1, 1]".to_string());
        }
        if !(d.bypass.i_limit_pu > 0.0) {
            v.push("dvr.bypass.i_limit_pu must be positive".to_string());
        }
        if !(d.bypass.rearm_fraction > 0.0 && d.bypass.rearm_fraction < 1.0) {
            v.push("dvr.bypass.rearm_fraction must lie in (0, 1)".to_string());
        }
        for (k, ev) in self.events.iter().enumerate() {
            if !(ev.t_start >= 0.0 && ev.t_end > ev.t_start) {
                v.push(format!("events[{k}]: need 0 <= t_start < t_end"));
            }
            match ev.kind {
                EventKind::Sag if !(ev.depth > 0.0 && ev.depth < 1.0) => {
                    v.push(format!("events[{k}]: sag depth must be in (0,1)"));
                }
                EventKind::Swell if !(ev.depth > 0.0) => {
                    v.push(format!("events[{k}]: swell depth must be positive"));
                }
                _ => {}
            }
            if ev.phases.is_empty() {
                v.push(format!("events[{k}]: phase list is empty"));
            }
        }
        for (i, j) in overlapping_events(&self.events) {
            v.push(format!("events[{i}] and events[{j}] overlap on a shared phase"));
        }
        if let Some(names) = &self.record {
            for name in names {
                if !CHANNELS.contains(&name.as_str()) {
                    v.push(format!("unknown record channel '{name}'"));
                }
            }
        }
        v
    }
}

/// Column-major recorded trace with named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl Trace {
    fn with_channels(names: Vec<String>, capacity: usize) -> Self {
        let n = names.len();
        Self {
            names,
            cols: vec![Vec::with_capacity(capacity); n],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.cols.first().map_or(0, Vec::len)
    }

    pub fn col(&self, name: &str) -> Option<&[f64]> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(&self.cols[k])
    }

    fn col_mut(&mut self, name: &str) -> &mut Vec<f64> {
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .expect("channel present");
        &mut self.cols[k]
    }

    /// Keeps `t` plus the listed channels, in canonical order.
    pub fn select(mut self, keep: &[String]) -> Self {
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for (name, col) in self.names.drain(..).zip(self.cols.drain(..)) {
            if name == "t" || keep.contains(&name) {
                names.push(name);
                cols.push(col);
            }
        }
        Self { names, cols }
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.names.join(","))?;
        let mut line = String::new();
        for r in 0..self.rows() {
            line.clear();
            for (k, col) in self.cols.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", col[r]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_csv(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn from_csv<R: BufRead>(r: R) -> Result<Self, EngineError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| EngineError::Csv("empty file".to_string()))?
            .map_err(|e| EngineError::Csv(e.to_string()))?;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut cols = vec![Vec::new(); names.len()];
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| EngineError::Csv(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let mut n = 0;
            for (j, field) in line.split(',').enumerate() {
                if j >= cols.len() {
                    return Err(EngineError::Csv(format!("row {}: too many fields", k + 2)));
                }
                let x: f64 = field.trim().parse().map_err(|_| {
                    EngineError::Csv(format!("row {}: bad number '{field}'", k + 2))
                })?;
                cols[j].push(x);
                n = j + 1;
            }
            if n != cols.len() {
                return Err(EngineError::Csv(format!(
                    "row {}: expected {} fields, got {n}",
                    k + 2,
                    cols.len()
                )));
            }
        }
        Ok(Self { names, cols })
    }
}

/// One-period sliding RMS of a three-phase channel, averaged over phases and
/// expressed in per unit of the phase RMS base. The first window is
/// backfilled with the first fully-windowed value so traces do not start
/// with a spurious ramp from the zero-filled window.
pub fn rms_channel(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    window: usize,
    v_phase_rms: f64,
) -> Vec<f64> {
    let n = a.len();
    let mut rms = vec![0.0; n];
    let mut ra = SlidingRms::new(window);
    let mut rb = SlidingRms::new(window);
    let mut rc = SlidingRms::new(window);
    for k in 0..n {
        let m = (ra.push(a[k]) + rb.push(b[k]) + rc.push(c[k])) / 3.0;
        rms[k] = m / v_phase_rms;
    }
    if n >= window {
        let settled = rms[window - 1];
        for x in rms.iter_mut().take(window - 1) {
            *x = settled;
        }
    }
    rms
}

/// Post-run metadata for one simulation.
#[derive(Debug, Clone, Copy)]
pub struct RunSummary {
    pub rows: usize,
    pub wall_s: f64,
    /// Max per-step residual of the series loop KVL, volts.
    pub kvl_residual_max: f64,
    /// Max per-step nodal current residual, amperes.
    pub kcl_residual_max: f64,
    /// Steps spent with the bypass engaged.
    pub bypass_steps: usize,
}

struct WindRuntime {
    machine: InductionMachine,
    p_m: f64,
    t_em: f64,
}

struct PvRuntime {
    model: PvModel,
    mppt: MpptState,
    v_pv: f64,
    i_pv: f64,
    p_pv: f64,
    countdown: usize,
}

struct DvrRuntime {
    controller: DvrController,
    vsi: VsiAverage,
    filter: LcFilter,
    ratio: f64,
    bypass: BypassSwitch,
}

/// One configured simulation, ready to run.
pub struct Engine {
    scenario: Scenario,
    base: PerUnitBase,
    omega: f64,
    dt: f64,
    n_steps: usize,
    window: usize,
    source: SourceBranch,
    load: LoadBranch,
    wind: Option<WindRuntime>,
    pv: Option<PvRuntime>,
    dvr: Option<DvrRuntime>,
    /// Engine-owned bus measurement for the PV current alignment.
    bus_extractor: SequenceExtractor,
    v_load_prev: ThreePhaseSample,
    i_grid_prev: [f64; 3],
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self, EngineError> {
        let violations = scenario.validate();
        if !violations.is_empty() {
            return Err(EngineError::Invalid { violations });
        }
        let base = PerUnitBase::new(
            scenario.bases.v_base_ll,
            scenario.bases.s_base,
            scenario.bases.f_nominal,
        )?;
        let omega = base.omega();
        let dt = scenario.solver.dt;
        let window = samples_per_period(scenario.bases.f_nominal, dt)?;
        let n_steps = (scenario.solver.t_end / dt).round() as usize;

        let xfmr = IdealTransformer {
            ratio: scenario.transformer.ratio,
            connection: scenario.transformer.connection.clone(),
        };
        let thevenin = TheveninSource::from_line_voltage(
            scenario.source.v_ll,
            scenario.bases.f_nominal,
            scenario.z_th.r,
            scenario.z_th.l,
        );
        let mut source = SourceBranch::new(&thevenin, &xfmr);
        let mut load = LoadBranch::new(load_from_pq(
            scenario.load.p,
            scenario.load.q,
            scenario.bases.v_base_ll,
            scenario.bases.f_nominal,
        ));

        // Steady-state phasor initialization so the trace starts settled.
        // Event multipliers active at t = 0 are assumed balanced here
        // (a per-phase event starting at 0 settles dynamically instead).
        let mult0 = source_multiplier(&scenario.events, 0.0, Phase::A);
        let e_ph = Complex64::new(source.e_peak * mult0, 0.0);
        let z_th = Complex64::new(source.r, omega * source.l);
        let y_load = load_admittance(&load.params, omega);

        let mut wind = scenario.wind.as_ref().map(|cfg| {
            let (_, p_m) = wind_power(&cfg.aero);
            WindRuntime {
                machine: cfg.machine.build(),
                p_m,
                t_em: 0.0,
            }
        });
        let pv = match scenario.pv.as_ref() {
            Some(cfg) => {
                let (v_mpp, p_mpp) = cfg
                    .model
                    .mpp_bruteforce(20_001)
                    .map_err(|source| EngineError::Pv { source, t: 0.0 })?;
                let i_mpp = cfg
                    .model
                    .pv_current(v_mpp)
                    .map_err(|source| EngineError::Pv { source, t: 0.0 })?;
                Some(PvRuntime {
                    model: cfg.model,
                    mppt: MpptState::new(v_mpp, cfg.mppt.step_v, cfg.model.v_oc()),
                    v_pv: v_mpp,
                    i_pv: i_mpp,
                    p_pv: p_mpp,
                    countdown: window,
                })
            }
            None => None,
        };

        // Two refinement passes couple the generator injections back into
        // the bus phasor; the injections are small relative to the source,
        // so this converges quickly.
        let mut v_bus = phasor_bus_voltage(e_ph, z_th, y_load, Complex64::new(0.0, 0.0));
        let mut machine_slip = 0.0;
        for _ in 0..3 {
            let mut i_inj = Complex64::new(0.0, 0.0);
            if let Some(w) = wind.as_mut() {
                let v_mag = v_bus.norm();
                machine_slip = w
                    .machine
                    .equilibrium_slip(v_mag, omega, w.p_m)
                    .map_err(|source| EngineError::Wind { source, t: 0.0 })?;
                let ss = w.machine.steady_state(v_mag, machine_slip, omega);
                let dir = v_bus / v_mag;
                // Stator current is motor-referenced; the bus sees its negative.
                let i_s = Complex64::new(ss.currents.i_ds, ss.currents.i_qs) * dir;
                i_inj -= i_s;
            }
            if let Some(p) = pv.as_ref() {
                // In-phase current delivering the tracked power.
                i_inj += 2.0 * p.p_pv / (3.0 * v_bus.norm_sqr()) * v_bus;
            }
            v_bus = phasor_bus_voltage(e_ph, z_th, y_load, i_inj);
        }

        let i_line = (e_ph - v_bus) / z_th;
        let theta0 = 0.0;
        source.init_state(
            [
                phasor_sample(i_line, theta0, 0),
                phasor_sample(i_line, theta0, 1),
                phasor_sample(i_line, theta0, 2),
            ],
            [
                phasor_sample(i_line * Complex64::new(0.0, omega * source.l), theta0, 0),
                phasor_sample(i_line * Complex64::new(0.0, omega * source.l), theta0, 1),
                phasor_sample(i_line * Complex64::new(0.0, omega * source.l), theta0, 2),
            ],
            source.emf(theta0, [mult0; 3]),
            [
                phasor_sample(v_bus, theta0, 0),
                phasor_sample(v_bus, theta0, 1),
                phasor_sample(v_bus, theta0, 2),
            ],
        );
        let i_l_load = if load.params.l.is_finite() {
            v_bus / Complex64::new(0.0, omega * load.params.l)
        } else {
            Complex64::new(0.0, 0.0)
        };
        load.init_state(
            [
                phasor_sample(i_l_load, theta0, 0),
                phasor_sample(i_l_load, theta0, 1),
                phasor_sample(i_l_load, theta0, 2),
            ],
            [
                phasor_sample(v_bus, theta0, 0),
                phasor_sample(v_bus, theta0, 1),
                phasor_sample(v_bus, theta0, 2),
            ],
        );
        if let Some(w) = wind.as_mut() {
            let mut ss = w.machine.steady_state(v_bus.norm(), machine_slip, omega);
            // Rotate the aligned-voltage solution onto the actual bus angle.
            let dir = v_bus / v_bus.norm();
            let s_pair = Complex64::new(ss.lambda[0], ss.lambda[1]) * dir;
            let r_pair = Complex64::new(ss.lambda[2], ss.lambda[3]) * dir;
            ss.lambda = [s_pair.re, s_pair.im, r_pair.re, r_pair.im];
            w.machine.apply_steady_state(&ss);
            let c = w
                .machine
                .flux_to_currents()
                .map_err(|source| EngineError::Wind { source, t: 0.0 })?;
            w.t_em = w.machine.electromagnetic_torque(&c);
        }

        let dvr = if scenario.dvr.enabled {
            let d = &scenario.dvr;
            let pi = PiController::new(
                d.controller.kp,
                d.controller.ki,
                d.controller.out_min,
                d.controller.out_max,
            );
            let extractor = SequenceExtractor::warmed(window, v_bus.re, v_bus.im);
            Some(DvrRuntime {
                controller: DvrController::new(pi, extractor, base.v_phase_peak()),
                vsi: VsiAverage { v_dc: d.v_dc },
                filter: LcFilter::new(d.filter.l, d.filter.r, d.filter.c),
                ratio: d.transformer_ratio,
                bypass: BypassSwitch::new(
                    d.bypass.i_limit_pu * base.i_peak(),
                    d.bypass.rearm_fraction,
                    window,
                ),
            })
        } else {
            None
        };

        Ok(Self {
            bus_extractor: SequenceExtractor::warmed(window, v_bus.re, v_bus.im),
            v_load_prev: phasor_three_phase(v_bus, theta0, 0.0),
            i_grid_prev: [
                phasor_sample(i_line, theta0, 0),
                phasor_sample(i_line, theta0, 1),
                phasor_sample(i_line, theta0, 2),
            ],
            scenario,
            base,
            omega,
            dt,
            n_steps,
            window,
            source,
            load,
            wind,
            pv,
            dvr,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Runs the full scenario and returns the trace plus solve metadata.
    pub fn run(mut self) -> Result<(Trace, RunSummary), EngineError> {
        let started = Instant::now();
        let names: Vec<String> = CHANNELS.iter().map(|s| s.to_string()).collect();
        let mut trace = Trace::with_channels(names, self.n_steps + 1);
        let mut kvl_max = 0.0_f64;
        let mut kcl_max = 0.0_f64;
        let mut bypass_steps = 0usize;

        // Row 0: the initialized operating point.
        let mult0 = [source_multiplier(&self.scenario.events, 0.0, Phase::A); 3];
        let e0 = self.source.emf(0.0, mult0);
        let v_grid0 = [
            e0[0] - self.source.series_drop(0),
            e0[1] - self.source.series_drop(1),
            e0[2] - self.source.series_drop(2),
        ];
        let i_load0 = [
            self.v_load_prev.a / self.load.params.r + self.load.i_l[0],
            self.v_load_prev.b / self.load.params.r + self.load.i_l[1],
            self.v_load_prev.c / self.load.params.r + self.load.i_l[2],
        ];
        self.push_row(
            &mut trace,
            0.0,
            v_grid0,
            [0.0; 3],
            [self.v_load_prev.a, self.v_load_prev.b, self.v_load_prev.c],
            i_load0,
            0.0,
            false,
        );

        for n in 1..=self.n_steps {
            let t = n as f64 * self.dt;
            let theta = self.omega * t;
            let theta_prev = self.omega * (t - self.dt);

            // Event multipliers and the scaled EMF for this step.
            let mult = [
                source_multiplier(&self.scenario.events, t, Phase::A),
                source_multiplier(&self.scenario.events, t, Phase::B),
                source_multiplier(&self.scenario.events, t, Phase::C),
            ];
            let e = self.source.emf(theta, mult);

            // Control from the previous step's measurement, then actuate.
            let mut v_dvr = [0.0; 3];
            let mut duty_mag = 0.0;
            let mut engaged = false;
            if let Some(d) = self.dvr.as_mut() {
                engaged = d.bypass.bypass_check(self.i_grid_prev);
                let out = d.controller.control_step(self.v_load_prev, theta, self.dt);
                duty_mag = out.amplitude;
                let v_inv = [
                    d.vsi.output(out.duty[0]),
                    d.vsi.output(out.duty[1]),
                    d.vsi.output(out.duty[2]),
                ];
                // The injection acts as an ideal series source, so the
                // filter runs unloaded; a frozen controller then reduces the
                // plant exactly to the no-DVR network.
                let v_c = d.filter.filter_step(v_inv, [0.0; 3], self.dt);
                if engaged {
                    bypass_steps += 1;
                } else {
                    v_dvr = crate::dvr::inject(v_c, d.ratio);
                }
            }

            // Generator updates from the previous bus voltage.
            let mut i_inj = [0.0; 3];
            if let Some(w) = self.wind.as_mut() {
                let f = abc_to_dq(self.v_load_prev, theta_prev);
                let t_g = turbine_torque(w.p_m, w.machine.omega_r, w.machine.pole_pairs);
                let out = w
                    .machine
                    .machine_step(f.d, f.q, t_g, self.omega, self.dt)
                    .map_err(|source| EngineError::Wind { source, t })?;
                w.t_em = out.t_em;
                let i_s = dq_to_abc(DqFrame {
                    d: out.currents.i_ds,
                    q: out.currents.i_qs,
                    theta,
                });
                i_inj[0] -= i_s.a;
                i_inj[1] -= i_s.b;
                i_inj[2] -= i_s.c;
            }
            let (d_bus, q_bus) = self
                .bus_extractor
                .push(abc_to_dq(self.v_load_prev, theta_prev));
            if let Some(p) = self.pv.as_mut() {
                p.countdown -= 1;
                if p.countdown == 0 {
                    p.countdown = self.window;
                    let v_next = p.mppt.mppt_step(p.v_pv, p.i_pv);
                    p.v_pv = v_next;
                    p.i_pv = p
                        .model
                        .pv_current(v_next)
                        .map_err(|source| EngineError::Pv { source, t })?;
                    p.p_pv = p.v_pv * p.i_pv;
                }
                // Inject the tracked power in phase with the measured bus
                // voltage; the floor keeps the current bounded through deep
                // sags.
                let v_meas = (d_bus * d_bus + q_bus * q_bus)
                    .sqrt()
                    .max(0.05 * self.base.v_phase_peak());
                let i_peak = 2.0 * p.p_pv / (3.0 * v_meas);
                let dir = 1.0 / v_meas;
                let i_abc = dq_to_abc(DqFrame {
                    d: i_peak * d_bus * dir,
                    q: i_peak * q_bus * dir,
                    theta,
                });
                i_inj[0] += i_abc.a;
                i_inj[1] += i_abc.b;
                i_inj[2] += i_abc.c;
            }

            // Nodal solve with the DVR as a series EMF on the source branch.
            let u_next = [e[0] + v_dvr[0], e[1] + v_dvr[1], e[2] + v_dvr[2]];
            let sol = bus_solve(&mut self.source, &mut self.load, u_next, i_inj, self.dt, n)
                .map_err(|source| EngineError::Network { source, t })?;
            let mut v_grid = [0.0; 3];
            for ph in 0..3 {
                v_grid[ph] = e[ph] - self.source.series_drop(ph);
                let kvl = sol.v_load[ph] - (v_grid[ph] + v_dvr[ph]);
                kvl_max = kvl_max.max(kvl.abs());
                kcl_max = kcl_max.max(sol.kcl_residual[ph].abs());
            }

            self.push_row(
                &mut trace,
                t,
                v_grid,
                v_dvr,
                sol.v_load,
                sol.i_load,
                duty_mag,
                engaged,
            );
            self.v_load_prev =
                ThreePhaseSample::new(sol.v_load[0], sol.v_load[1], sol.v_load[2], t);
            self.i_grid_prev = sol.i_grid;
        }

        self.fill_rms(&mut trace);
        if let Some(keep) = self.scenario.record.clone() {
            trace = trace.select(&keep);
        }
        let summary = RunSummary {
            rows: trace.rows(),
            wall_s: started.elapsed().as_secs_f64(),
            kvl_residual_max: kvl_max,
            kcl_residual_max: kcl_max,
            bypass_steps,
        };
        Ok((trace, summary))
    }

    #[allow(clippy::too_many_arguments)]
    fn push_row(
        &self,
        trace: &mut Trace,
        t: f64,
        v_grid: [f64; 3],
        v_dvr: [f64; 3],
        v_load: [f64; 3],
        i_load: [f64; 3],
        duty_mag: f64,
        bypass: bool,
    ) {
        let (omega_r, t_em) = self
            .wind
            .as_ref()
            .map_or((0.0, 0.0), |w| (w.machine.omega_r, w.t_em));
        let (v_pv, p_pv) = self.pv.as_ref().map_or((0.0, 0.0), |p| (p.v_pv, p.p_pv));
        let row = [
            t, v_grid[0], v_grid[1], v_grid[2], v_dvr[0], v_dvr[1], v_dvr[2], v_load[0],
            v_load[1], v_load[2], i_load[0], i_load[1], i_load[2], 0.0, 0.0, 0.0, 0.0, omega_r,
            t_em, v_pv, p_pv, duty_mag, if bypass { 1.0 } else { 0.0 },
        ];
        for (col, x) in trace.cols.iter_mut().zip(row) {
            col.push(x);
        }
    }

    /// Fills the four RMS channels from the recorded waveforms. The wind
    /// generator shares the protected bus, so its terminal channel equals
    /// the load-bus one; it is recorded separately to keep the report
    /// explicit about what the machine sees.
    fn fill_rms(&self, trace: &mut Trace) {
        let v_base = self.base.v_phase_rms();
        for (prefix, out) in [
            ("v_grid", "rms_grid_pu"),
            ("v_dvr", "rms_dvr_pu"),
            ("v_load", "rms_load_pu"),
            ("v_load", "rms_wind_pu"),
        ] {
            let rms = rms_channel(
                trace.col(&format!("{prefix}_a")).expect("phase a"),
                trace.col(&format!("{prefix}_b")).expect("phase b"),
                trace.col(&format!("{prefix}_c")).expect("phase c"),
                self.window,
                v_base,
            );
            *trace.col_mut(out) = rms;
        }
    }
}

/// Convenience wrapper: validate, initialize and run a scenario.
pub fn run(scenario: Scenario) -> Result<(Trace, RunSummary), EngineError> {
    Engine::new(scenario)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_scenario() -> Scenario {
        Scenario::from_json(
            r#"{
            "schema_version": 1,
            "name": "unit",
            "bases": { "v_base_ll": 400.0, "s_base": 25000.0, "f_nominal": 50.0 },
            "solver": { "dt": 5.0e-5, "t_end": 0.1 },
            "source": { "v_ll": 20000.0 },
            "z_th": { "r": 3.9223, "l": 0.062426 },
            "transformer": { "ratio": 50.0 },
            "load": { "p": 20000.0, "q": 15000.0 },
            "dvr": {
                "enabled": false,
                "v_dc": 800.0,
                "filter": { "l": 0.5e-3, "r": 0.5, "c": 200.0e-6 },
                "transformer_ratio": 1.0,
                "controller": { "kp": 3.2, "ki": 270.0 },
                "bypass": { "i_limit_pu": 2.0, "rearm_fraction": 0.8 }
            }
        }"#,
        )
        .expect("fixture parses")
    }

    #[test]
    fn fixture_scenario_is_valid() {
        assert!(base_scenario().validate().is_empty());
    }

    #[test]
    fn validation_reports_all_violations() {
        let mut s = base_scenario();
        s.solver.dt = 0.0;
        s.load.p = -5.0;
        s.events.push(VoltageEvent {
            kind: EventKind::Sag,
            t_start: 0.2,
            t_end: 0.4,
            depth: 1.5,
            phases: vec![Phase::A, Phase::B, Phase::C],
        });
        let v = s.validate();
        assert!(v.iter().any(|m| m.contains("dt must be positive")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("load.p must be non-negative")));
        assert!(v.iter().any(|m| m.contains("sag depth must be in (0,1)")));
        assert!(v.len() >= 3);
    }

    #[test]
    fn validation_rejects_overlapping_events() {
        let mut s = base_scenario();
        for t0 in [0.02, 0.03] {
            s.events.push(VoltageEvent {
                kind: EventKind::Sag,
                t_start: t0,
                t_end: t0 + 0.02,
                depth: 0.2,
                phases: vec![Phase::A],
            });
        }
        assert!(s.validate().iter().any(|m| m.contains("overlap")));
    }

    #[test]
    fn invalid_scenario_fails_construction() {
        let mut s = base_scenario();
        s.solver.dt = -1.0;
        match Engine::new(s) {
            Err(EngineError::Invalid { violations }) => assert!(!violations.is_empty()),
            Err(other) => panic!("expected validation failure, got {other}"),
            Ok(_) => panic!("expected validation failure, got an engine"),
        }
    }

    #[test]
    fn row_count_matches_step_arithmetic() {
        let mut s = base_scenario();
        s.solver.t_end = 0.05;
        let (trace, summary) = run(s).expect("runs");
        assert_eq!(trace.rows(), 1001);
        assert_eq!(summary.rows, 1001);
        let t = trace.col("t").unwrap();
        assert_eq!(t[0], 0.0);
        assert!((t[1000] - 0.05).abs() < 1.0e-12);
        assert!(t.windows(2).all(|w| w[1] > w[0]), "time must be monotone");
    }

    #[test]
    fn initialization_suppresses_startup_transients() {
        let (trace, _) = run(base_scenario()).expect("runs");
        let rms = trace.col("rms_load_pu").unwrap();
        for (k, &x) in rms.iter().enumerate() {
            assert!(
                (x - rms[rms.len() - 1]).abs() < 2.0e-3,
                "row {k}: rms {x} vs settled {}",
                rms[rms.len() - 1]
            );
        }
    }

    #[test]
    fn residuals_stay_at_solver_precision() {
        let mut s = base_scenario();
        s.dvr.enabled = true;
        s.events.push(VoltageEvent {
            kind: EventKind::Sag,
            t_start: 0.02,
            t_end: 0.06,
            depth: 0.3,
            phases: vec![Phase::A, Phase::B, Phase::C],
        });
        let (_, summary) = run(s).expect("runs");
        assert!(
            summary.kvl_residual_max < 1.0e-6 * 400.0,
            "series identity residual {}",
            summary.kvl_residual_max
        );
        assert!(
            summary.kcl_residual_max < 1.0e-9 * 51.0,
            "kcl residual {}",
            summary.kcl_residual_max
        );
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut s = base_scenario();
        s.dvr.enabled = true;
        s.events.push(VoltageEvent {
            kind: EventKind::Swell,
            t_start: 0.03,
            t_end: 0.07,
            depth: 0.2,
            phases: vec![Phase::A, Phase::B, Phase::C],
        });
        let (t1, _) = run(s.clone()).expect("first run");
        let (t2, _) = run(s).expect("second run");
        assert_eq!(t1.to_csv_string(), t2.to_csv_string());
    }

    #[test]
    fn frozen_controller_matches_disabled_dvr() {
        let mut off = base_scenario();
        off.events.push(VoltageEvent {
            kind: EventKind::Sag,
            t_start: 0.02,
            t_end: 0.05,
            depth: 0.25,
            phases: vec![Phase::A, Phase::B, Phase::C],
        });
        let mut frozen = off.clone();
        frozen.dvr.enabled = true;
        frozen.dvr.controller.kp = 0.0;
        frozen.dvr.controller.ki = 0.0;
        let (a, _) = run(off).expect("disabled run");
        let (b, _) = run(frozen).expect("frozen run");
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn dvr_holds_load_through_sag() {
        let mut s = base_scenario();
        s.solver.t_end = 0.3;
        s.dvr.enabled = true;
        s.events.push(VoltageEvent {
            kind: EventKind::Sag,
            t_start: 0.1,
            t_end: 0.2,
            depth: 0.2,
            phases: vec![Phase::A, Phase::B, Phase::C],
        });
        let (trace, _) = run(s).expect("runs");
        let t = trace.col("t").unwrap();
        let rms = trace.col("rms_load_pu").unwrap();
        let grid = trace.col("rms_grid_pu").unwrap();
        for k in 0..t.len() {
            let in_transient = (t[k] > 0.1 && t[k] < 0.14) || (t[k] > 0.2 && t[k] < 0.24);
            if !in_transient {
                assert!(
                    (rms[k] - 1.0).abs() < 0.02,
                    "t={} load rms {} out of band",
                    t[k],
                    rms[k]
                );
            }
        }
        // The grid channel must still show the sag.
        let mid = t.iter().position(|&x| x >= 0.17).unwrap();
        assert!((grid[mid] - 0.8).abs() < 0.02, "grid rms {}", grid[mid]);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let mut s = base_scenario();
        s.solver.t_end = 0.02;
        let (trace, _) = run(s).expect("runs");
        let text = trace.to_csv_string();
        let back = Trace::from_csv(text.as_bytes()).expect("parses");
        assert_eq!(trace, back);
    }

    #[test]
    fn record_subset_keeps_time_and_selected() {
        let mut s = base_scenario();
        s.solver.t_end = 0.02;
        s.record = Some(vec!["rms_load_pu".to_string()]);
        let (trace, _) = run(s).expect("runs");
        assert_eq!(trace.names(), ["t".to_string(), "rms_load_pu".to_string()]);
    }

    #[test]
    fn unknown_record_channel_is_a_violation() {
        let mut s = base_scenario();
        s.record = Some(vec!["rms_load".to_string()]);
        assert!(s
            .validate()
            .iter()
            .any(|m| m.contains("unknown record channel")));
    }

    #[test]
    fn rms_channel_handles_nominal_and_zero() {
        let n = 2000;
        let dt = 5.0e-5;
        let omega = 2.0 * std::f64::consts::PI * 50.0;
        let shift = 2.0 * std::f64::consts::FRAC_PI_3;
        let amp = (2.0_f64 / 3.0).sqrt() * 400.0;
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        for k in 0..n {
            let th = omega * k as f64 * dt;
            a.push(amp * th.cos());
            b.push(amp * (th - shift).cos());
            c.push(amp * (th + shift).cos());
        }
        let rms = rms_channel(&a, &b, &c, 400, 400.0 / 3.0_f64.sqrt());
        for (k, &x) in rms.iter().enumerate() {
            assert!((x - 1.0).abs() < 1.0e-6, "row {k}: {x}");
        }
        let zeros = vec![0.0; 500];
        let rz = rms_channel(&zeros, &zeros, &zeros, 400, 230.0);
        assert!(rz.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scenario_json_round_trips() {
        let s = base_scenario();
        let text = serde_json::to_string(&s).expect("serializes");
        let back = Scenario::from_json(&text).expect("parses");
        assert_eq!(
            serde_json::to_string(&back).unwrap(),
            text,
            "serialization must be stable"
        );
    }

    #[test]
    fn unknown_scenario_field_is_rejected() {
        let err = Scenario::from_json(r#"{ "schema_version": 1, "typo_field": 3 }"#);
        match err {
            Err(EngineError::Invalid { violations }) => {
                assert!(violations[0].contains("typo_field"))
            }
            other => panic!("expected parse rejection, got {other:?}"),
        }
    }
}
