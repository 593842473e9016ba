//! Voltage event scheduling on the source EMF and classification of RMS
//! traces into power-quality records.
//!
//! Events act multiplicatively on the EMF amplitude: a sag of depth 0.2
//! scales the affected phases by 0.8, a swell of height 0.2 by 1.2.
//! Classification follows the usual magnitude bands: RMS in [0.10, 0.90] pu
//! is a sag, above 1.10 pu a swell (overvoltage past one minute), below
//! 0.10 pu an interruption. Excursions shorter than half a fundamental
//! cycle are treated as transients and ignored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("rms trace is empty")]
    EmptyTrace,
    #[error("classifier needs positive dt and f_nominal")]
    BadSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Sag,
    Swell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

/// One scheduled amplitude event on the source EMF.
///
/// `depth` is the fractional change: multiplier `1 - depth` for sags and
/// `1 + depth` for swells, applied on `[t_start, t_end)` to the listed phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageEvent {
    pub kind: EventKind,
    pub t_start: f64,
    pub t_end: f64,
    pub depth: f64,
    #[serde(default = "all_phases")]
    pub phases: Vec<Phase>,
}

fn all_phases() -> Vec<Phase> {
    vec![Phase::A, Phase::B, Phase::C]
}

impl VoltageEvent {
    pub fn multiplier(&self) -> f64 {
        match self.kind {
            EventKind::Sag => 1.0 - self.depth,
            EventKind::Swell => 1.0 + self.depth,
        }
    }

    pub fn affects(&self, phase: Phase) -> bool {
        self.phases.contains(&phase)
    }

    pub fn active_at(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// EMF amplitude multiplier for `phase` at time `t`. Events in a schedule
/// are non-overlapping per phase (enforced by scenario validation), so at
/// most one event contributes; outside all events the multiplier is 1.
pub fn source_multiplier(schedule: &[VoltageEvent], t: f64, phase: Phase) -> f64 {
    for ev in schedule {
        if ev.active_at(t) && ev.affects(phase) {
            return ev.multiplier();
        }
    }
    1.0
}

/// Returns pairs of events that overlap in time on a shared phase.
pub fn overlapping_events(schedule: &[VoltageEvent]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..schedule.len() {
        for j in i + 1..schedule.len() {
            let (a, b) = (&schedule[i], &schedule[j]);
            let time_overlap = a.t_start < b.t_end && b.t_start < a.t_end;
            let phase_overlap = a.phases.iter().any(|p| b.affects(*p));
            if time_overlap && phase_overlap {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PqKind {
    Sag,
    Swell,
    Interruption,
    Overvoltage,
}

/// One classified power-quality record from an RMS trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqRecord {
    pub kind: PqKind,
    pub t_start: f64,
    pub t_end: f64,
    /// Worst stable RMS level inside the record, in pu.
    pub extremal_pu: f64,
    pub duration: f64,
}

/// Tunables for [`classify_rms`]. The defaults suit traces produced by the
/// one-period sliding RMS, where level changes ramp over one window.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierConfig {
    /// Minimum record length in fundamental cycles (transient filter).
    pub min_cycles: f64,
    /// |d(rms)/dt| above this (pu/s) marks a sample as transitioning; used
    /// to split multi-stage events and to exclude ramps from the extremal.
    pub slope_threshold: f64,
    /// Plateaus whose levels differ by less than this (pu) are not split.
    pub level_split: f64,
    /// Swells outlasting this become overvoltage records (seconds).
    pub overvoltage_after: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            min_cycles: 0.5,
            slope_threshold: 1.0,
            level_split: 0.05,
            overvoltage_after: 60.0,
        }
    }
}

const SAG_UPPER: f64 = 0.90;
const SWELL_LOWER: f64 = 1.10;
const INTERRUPTION_UPPER: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Low,
    Normal,
    High,
}

fn region(v: f64) -> Region {
    if v <= SAG_UPPER {
        Region::Low
    } else if v > SWELL_LOWER {
        Region::High
    } else {
        Region::Normal
    }
}

/// Classifies a uniformly sampled per-unit RMS trace into power-quality
/// records, in chronological order.
///
/// Within one out-of-band excursion, distinct stable levels (for example a
/// sag that deepens partway through) are reported as separate records, with
/// boundaries at the midpoint of the connecting ramp. The extremal level is
/// taken over steady samples only, so window-length ramps between levels do
/// not contaminate it.
pub fn classify_rms(
    values: &[f64],
    dt: f64,
    f_nominal: f64,
    cfg: &ClassifierConfig,
) -> Result<Vec<PqRecord>, EventError> {
    if values.is_empty() {
        return Err(EventError::EmptyTrace);
    }
    if !(dt > 0.0) || !(f_nominal > 0.0) {
        return Err(EventError::BadSampling);
    }
    let min_len = cfg.min_cycles / f_nominal;
    let mut records = Vec::new();

    // Maximal runs of a single region.
    let mut run_start = 0;
    for i in 1..=values.len() {
        let boundary = i == values.len() || region(values[i]) != region(values[run_start]);
        if !boundary {
            continue;
        }
        let reg = region(values[run_start]);
        if reg != Region::Normal {
            classify_run(values, run_start, i, dt, min_len, reg, cfg, &mut records);
        }
        run_start = i;
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn classify_run(
    values: &[f64],
    start: usize,
    end: usize,
    dt: f64,
    min_len: f64,
    reg: Region,
    cfg: &ClassifierConfig,
    records: &mut Vec<PqRecord>,
) {
    // A sample is steady when the trace is locally flat.
    let steady: Vec<bool> = (start..end)
        .map(|i| {
            let next = if i + 1 < end { values[i + 1] } else { values[i] };
            ((next - values[i]) / dt).abs() <= cfg.slope_threshold
        })
        .collect();

    // Steady stretches at least half a cycle long count as plateaus.
    let min_samples = ((min_len / dt).round() as usize).max(1);
    let mut plateaus: Vec<(usize, usize, f64)> = Vec::new(); // (start, end, level)
    let mut i = 0;
    while i < steady.len() {
        if steady[i] {
            let s = i;
            while i < steady.len() && steady[i] {
                i += 1;
            }
            if i - s >= min_samples {
                let mut seg: Vec<f64> = values[start + s..start + i].to_vec();
                seg.sort_by(|a, b| a.partial_cmp(b).unwrap());
                plateaus.push((s, i, seg[seg.len() / 2]));
            }
        } else {
            i += 1;
        }
    }

    // Split between plateaus whose levels differ; boundary at the midpoint
    // of the gap separating them.
    let mut boundaries = vec![0];
    for w in plateaus.windows(2) {
        let (ref a, ref b) = (w[0], w[1]);
        if (a.2 - b.2).abs() > cfg.level_split {
            boundaries.push((a.1 + b.0) / 2);
        }
    }
    boundaries.push(end - start);

    for w in boundaries.windows(2) {
        let (s, e) = (w[0], w[1]);
        let duration = (e - s) as f64 * dt;
        if duration < min_len {
            continue; // transient
        }
        // Extremal over steady samples; fall back to all samples when the
        // whole segment is moving.
        let mut ext = f64::NAN;
        let pick = |acc: f64, v: f64| {
            if acc.is_nan() {
                v
            } else if reg == Region::Low {
                acc.min(v)
            } else {
                acc.max(v)
            }
        };
        for k in s..e {
            if steady[k] {
                ext = pick(ext, values[start + k]);
            }
        }
        if ext.is_nan() {
            for k in s..e {
                ext = pick(ext, values[start + k]);
            }
        }
        let kind = match reg {
            Region::Low => {
                if ext < INTERRUPTION_UPPER {
                    PqKind::Interruption
                } else {
                    PqKind::Sag
                }
            }
            Region::High => {
                if duration > cfg.overvoltage_after {
                    PqKind::Overvoltage
                } else {
                    PqKind::Swell
                }
            }
            Region::Normal => unreachable!(),
        };
        records.push(PqRecord {
            kind,
            t_start: (start + s) as f64 * dt,
            t_end: (start + e) as f64 * dt,
            extremal_pu: ext,
            duration,
        });
    }
}
