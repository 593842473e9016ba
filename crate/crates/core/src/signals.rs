//! Three-phase signal processing: Park transforms, sliding-window RMS,
//! positive-sequence magnitude extraction and per-unit scaling.
//!
//! The Park transform here is amplitude-invariant (factor 2/3) with the
//! q axis lagging d, so a balanced set of peak amplitude `A` that is
//! phase-aligned with `theta` maps to `d = A, q = 0`. The zero-sequence
//! component is dropped; callers that need it must handle it upstream.

use thiserror::Error;

const TWO_THIRDS: f64 = 2.0 / 3.0;
const SHIFT: f64 = 2.0 * std::f64::consts::PI / 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    /// The RMS/averaging window must span one fundamental period in an
    /// integer number of steps (to 0.1%) and hold at least 8 samples.
    #[error("window of {n_exact:.3} samples at dt={dt} s, f={f_nominal} Hz is unusable: {reason}")]
    BadWindow {
        n_exact: f64,
        dt: f64,
        f_nominal: f64,
        reason: &'static str,
    },
    #[error("per-unit base fields must be positive: {0}")]
    BadBase(&'static str),
}

/// Instantaneous values of the three phase quantities at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhaseSample {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t: f64,
}

impl ThreePhaseSample {
    pub fn new(a: f64, b: f64, c: f64, t: f64) -> Self {
        Self { a, b, c, t }
    }
}

/// Synchronous-frame pair produced by [`abc_to_dq`] at rotor angle `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqFrame {
    pub d: f64,
    pub q: f64,
    pub theta: f64,
}

/// Amplitude-invariant Park transform; the zero-sequence component is dropped.
pub fn abc_to_dq(s: ThreePhaseSample, theta: f64) -> DqFrame {
    let (sin_a, cos_a) = theta.sin_cos();
    let (sin_b, cos_b) = (theta - SHIFT).sin_cos();
    let (sin_c, cos_c) = (theta + SHIFT).sin_cos();
    DqFrame {
        d: TWO_THIRDS * (s.a * cos_a + s.b * cos_b + s.c * cos_c),
        q: -TWO_THIRDS * (s.a * sin_a + s.b * sin_b + s.c * sin_c),
        theta,
    }
}

/// Inverse Park transform. The reconstruction has no zero-sequence content,
/// so `t` on the returned sample is left at zero for the caller to fill.
pub fn dq_to_abc(f: DqFrame) -> ThreePhaseSample {
    let (sin_a, cos_a) = f.theta.sin_cos();
    let (sin_b, cos_b) = (f.theta - SHIFT).sin_cos();
    let (sin_c, cos_c) = (f.theta + SHIFT).sin_cos();
    ThreePhaseSample {
        a: f.d * cos_a - f.q * sin_a,
        b: f.d * cos_b - f.q * sin_b,
        c: f.d * cos_c - f.q * sin_c,
        t: 0.0,
    }
}

/// Number of samples in one fundamental period, rejecting step sizes that do
/// not divide the period to within 0.1% or that undersample it (< 8 points).
pub fn samples_per_period(f_nominal: f64, dt: f64) -> Result<usize, SignalError> {
    if !(f_nominal > 0.0) || !(dt > 0.0) {
        return Err(SignalError::BadWindow {
            n_exact: 0.0,
            dt,
            f_nominal,
            reason: "f_nominal and dt must be positive",
        });
    }
    let n_exact = 1.0 / (f_nominal * dt);
    let n = n_exact.round();
    if (n_exact - n).abs() > 1.0e-3 * n_exact {
        return Err(SignalError::BadWindow {
            n_exact,
            dt,
            f_nominal,
            reason: "dt does not divide the fundamental period to within 0.1%",
        });
    }
    if n < 8.0 {
        return Err(SignalError::BadWindow {
            n_exact,
            dt,
            f_nominal,
            reason: "fewer than 8 samples per period",
        });
    }
    Ok(n as usize)
}

/// Sliding RMS over exactly one fundamental period.
///
/// The window starts filled with zeros, so the output ramps up and is only
/// meaningful after one full period of pushes.
#[derive(Debug, Clone)]
pub struct SlidingRms {
    buf: Vec<f64>,
    head: usize,
    sum_sq: f64,
}

impl SlidingRms {
    pub fn new(window_len: usize) -> Self {
        assert!(window_len >= 1, "window must hold at least one sample");
        Self {
            buf: vec![0.0; window_len],
            head: 0,
            sum_sq: 0.0,
        }
    }

    /// Window sized to one period of `f_nominal` sampled at `dt`.
    pub fn for_fundamental(f_nominal: f64, dt: f64) -> Result<Self, SignalError> {
        Ok(Self::new(samples_per_period(f_nominal, dt)?))
    }

    pub fn window_len(&self) -> usize {
        self.buf.len()
    }

    /// Pushes one sample and returns the RMS of the current window.
    pub fn push(&mut self, x: f64) -> f64 {
        let old = self.buf[self.head];
        self.buf[self.head] = x;
        self.head = (self.head + 1) % self.buf.len();
        self.sum_sq += x * x - old * old;
        // The running sum can drift a few ULPs negative when the window
        // empties; clamp so the sqrt stays real.
        (self.sum_sq.max(0.0) / self.buf.len() as f64).sqrt()
    }
}

/// One-period moving average of d and q in the synchronous frame.
///
/// Averaging over exactly one period rejects negative-sequence content
/// (which lands at twice the fundamental in dq) and all integer harmonics,
/// leaving the positive-sequence magnitude.
#[derive(Debug, Clone)]
pub struct SequenceExtractor {
    d_buf: Vec<f64>,
    q_buf: Vec<f64>,
    head: usize,
    d_sum: f64,
    q_sum: f64,
}

impl SequenceExtractor {
    pub fn new(window_len: usize) -> Self {
        assert!(window_len >= 1, "window must hold at least one sample");
        Self {
            d_buf: vec![0.0; window_len],
            q_buf: vec![0.0; window_len],
            head: 0,
            d_sum: 0.0,
            q_sum: 0.0,
        }
    }

    pub fn for_fundamental(f_nominal: f64, dt: f64) -> Result<Self, SignalError> {
        Ok(Self::new(samples_per_period(f_nominal, dt)?))
    }

    /// Extractor whose window is pre-filled with a known operating point so
    /// the measurement is valid from the first push (no warm-up ramp).
    pub fn warmed(window_len: usize, d0: f64, q0: f64) -> Self {
        let n = window_len as f64;
        Self {
            d_buf: vec![d0; window_len],
            q_buf: vec![q0; window_len],
            head: 0,
            d_sum: d0 * n,
            q_sum: q0 * n,
        }
    }

    pub fn window_len(&self) -> usize {
        self.d_buf.len()
    }

    /// Pushes one dq sample and returns the averaged (d, q) pair.
    pub fn push(&mut self, f: DqFrame) -> (f64, f64) {
        let n = self.d_buf.len() as f64;
        self.d_sum += f.d - self.d_buf[self.head];
        self.q_sum += f.q - self.q_buf[self.head];
        self.d_buf[self.head] = f.d;
        self.q_buf[self.head] = f.q;
        self.head = (self.head + 1) % self.d_buf.len();
        (self.d_sum / n, self.q_sum / n)
    }

    pub fn magnitude(&self) -> f64 {
        let n = self.d_buf.len() as f64;
        let d = self.d_sum / n;
        let q = self.q_sum / n;
        (d * d + q * q).sqrt()
    }
}

/// Pushes one three-phase sample through the extractor and returns the
/// positive-sequence magnitude (peak amplitude of the balanced component).
pub fn positive_seq_magnitude(ex: &mut SequenceExtractor, s: ThreePhaseSample, theta: f64) -> f64 {
    let (d, q) = ex.push(abc_to_dq(s, theta));
    (d * d + q * q).sqrt()
}

/// Quantity selector for [`to_per_unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Line-to-line RMS voltage.
    Voltage,
    /// Line RMS current.
    Current,
    /// Three-phase apparent/active/reactive power.
    Power,
}

/// System base quantities; current and impedance bases are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    /// Line-to-line RMS voltage base in volts.
    pub v_base_ll: f64,
    /// Three-phase apparent power base in volt-amperes.
    pub s_base: f64,
    /// Fundamental frequency in hertz.
    pub f_nominal: f64,
}

impl PerUnitBase {
    pub fn new(v_base_ll: f64, s_base: f64, f_nominal: f64) -> Result<Self, SignalError> {
        if !(v_base_ll > 0.0) {
            return Err(SignalError::BadBase("v_base_ll"));
        }
        if !(s_base > 0.0) {
            return Err(SignalError::BadBase("s_base"));
        }
        if !(f_nominal > 0.0) {
            return Err(SignalError::BadBase("f_nominal"));
        }
        Ok(Self {
            v_base_ll,
            s_base,
            f_nominal,
        })
    }

    /// Line RMS current base in amperes.
    pub fn i_base(&self) -> f64 {
        self.s_base / (3.0_f64.sqrt() * self.v_base_ll)
    }

    /// Per-phase impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base_ll * self.v_base_ll / self.s_base
    }

    /// Phase (line-to-neutral) RMS voltage base in volts.
    pub fn v_phase_rms(&self) -> f64 {
        self.v_base_ll / 3.0_f64.sqrt()
    }

    /// Phase voltage peak base in volts; the natural scale for instantaneous
    /// waveforms and dq magnitudes.
    pub fn v_phase_peak(&self) -> f64 {
        self.v_phase_rms() * 2.0_f64.sqrt()
    }

    /// Line current peak base in amperes.
    pub fn i_peak(&self) -> f64 {
        self.i_base() * 2.0_f64.sqrt()
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_nominal
    }
}

/// Converts an SI quantity to per-unit on the given base.
pub fn to_per_unit(x: f64, base: &PerUnitBase, kind: Quantity) -> f64 {
    match kind {
        Quantity::Voltage => x / base.v_base_ll,
        Quantity::Current => x / base.i_base(),
        Quantity::Power => x / base.s_base,
    }
}
