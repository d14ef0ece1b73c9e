//! The 130-entry parameter vector: unconstrained raw coordinates, the smooth
//! elementwise map to physical units, and the documented neutral point.
//!
//! Layout (raw indices):
//!
//! | range    | block                                                        |
//! |----------|--------------------------------------------------------------|
//! | 0..18    | parametric EQ, 6 bands x (freq, gain dB, Q)                  |
//! | 18..24   | compressor: threshold, ratio, knee, attack, release, makeup  |
//! | 24..30   | ping-pong delay: time, feedback, cross, damping, wet, width  |
//! | 30       | panner position                                              |
//! | 31..34   | sends: delay, reverb, delay->reverb                          |
//! | 34..70   | FDN feedback matrix, row-major 6x6                           |
//! | 70..76   | FDN input gains                                              |
//! | 76..88   | FDN output gains (6 left, then 6 right)                      |
//! | 88..94   | FDN delay times                                              |
//! | 94..118  | FDN absorption, 6 lines x (low dB, high dB, crossover, gain) |
//! | 118..130 | FDN tone EQ, 4 bands x (freq, gain dB, Q)                    |

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PARAM_COUNT: usize = 130;

pub const PEQ_START: usize = 0;
pub const PEQ_BANDS: usize = 6;
pub const DRC_THRESHOLD: usize = 18;
pub const DRC_RATIO: usize = 19;
pub const DRC_KNEE: usize = 20;
pub const DRC_ATTACK: usize = 21;
pub const DRC_RELEASE: usize = 22;
pub const DRC_MAKEUP: usize = 23;
pub const DLY_TIME: usize = 24;
pub const DLY_FEEDBACK: usize = 25;
pub const DLY_CROSS: usize = 26;
pub const DLY_DAMP: usize = 27;
pub const DLY_WET: usize = 28;
pub const DLY_WIDTH: usize = 29;
pub const PAN: usize = 30;
pub const SEND_DELAY: usize = 31;
pub const SEND_REVERB: usize = 32;
pub const SEND_DELAY_TO_REVERB: usize = 33;
pub const FDN_MATRIX: usize = 34;
pub const FDN_LINES: usize = 6;
pub const FDN_INPUT: usize = 70;
pub const FDN_OUTPUT: usize = 76;
pub const FDN_TIME: usize = 88;
pub const FDN_ABSORB: usize = 94;
pub const FDN_TONE: usize = 118;
pub const TONE_BANDS: usize = 4;

/// Smooth strictly monotone scalar maps from raw coordinates to physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    /// `lo + (hi - lo) * sigmoid(r)`
    Range { lo: f64, hi: f64 },
    /// `exp(ln lo + (ln hi - ln lo) * sigmoid(r))`
    LogRange { lo: f64, hi: f64 },
    /// A log range with the sigmoid tempered by `tau`, flattening the slope.
    /// Used for delay times, where a raw-space step maps to a sub-sample
    /// move so the loss stays locally near-quadratic along these axes.
    SoftLogRange { lo: f64, hi: f64, tau: f64 },
    /// `tanh(r / 2)`, the (-1, 1) map with an exact zero at `r = 0`
    CenteredUnit,
    /// `per_unit * r`, for dB-valued fields
    Db { per_unit: f64 },
    /// `1 + span * sigmoid(r)`, for the compressor ratio
    OnePlus { span: f64 },
    /// `-depth * sigmoid(-r)`, strictly negative dB (lossy by construction)
    NegDb { depth: f64 },
    /// raw value passed through (FDN feedback matrix entries)
    Identity,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl MapKind {
    pub fn forward(&self, r: f64) -> f64 {
        match *self {
            MapKind::Range { lo, hi } => lo + (hi - lo) * sigmoid(r),
            MapKind::LogRange { lo, hi } => {
                (lo.ln() + (hi.ln() - lo.ln()) * sigmoid(r)).exp()
            }
            MapKind::SoftLogRange { lo, hi, tau } => {
                (lo.ln() + (hi.ln() - lo.ln()) * sigmoid(r / tau)).exp()
            }
            MapKind::CenteredUnit => (r / 2.0).tanh(),
            MapKind::Db { per_unit } => per_unit * r,
            MapKind::OnePlus { span } => 1.0 + span * sigmoid(r),
            MapKind::NegDb { depth } => -depth * sigmoid(-r),
            MapKind::Identity => r,
        }
    }

    /// d(forward)/dr.
    pub fn deriv(&self, r: f64) -> f64 {
        let s = sigmoid(r);
        let sp = s * (1.0 - s);
        match *self {
            MapKind::Range { lo, hi } => (hi - lo) * sp,
            MapKind::LogRange { lo, hi } => self.forward(r) * (hi.ln() - lo.ln()) * sp,
            MapKind::SoftLogRange { lo, hi, tau } => {
                let st = sigmoid(r / tau);
                self.forward(r) * (hi.ln() - lo.ln()) * st * (1.0 - st) / tau
            }
            MapKind::CenteredUnit => {
                let t = (r / 2.0).tanh();
                0.5 * (1.0 - t * t)
            }
            MapKind::Db { per_unit } => per_unit,
            MapKind::OnePlus { span } => span * sp,
            MapKind::NegDb { depth } => {
                let s = sigmoid(-r);
                depth * s * (1.0 - s)
            }
            MapKind::Identity => 1.0,
        }
    }

    /// Inclusive physical bounds implied by the map (open intervals reported
    /// by their closure).
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            MapKind::Range { lo, hi } => (lo, hi),
            MapKind::LogRange { lo, hi } => (lo, hi),
            MapKind::SoftLogRange { lo, hi, .. } => (lo, hi),
            MapKind::CenteredUnit => (-1.0, 1.0),
            MapKind::Db { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MapKind::OnePlus { span } => (1.0, 1.0 + span),
            MapKind::NegDb { depth } => (-depth, 0.0),
            MapKind::Identity => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FieldSpec {
    pub index: usize,
    pub name: &'static str,
    pub kind: MapKind,
}

const EQ_GAIN_DB_PER_UNIT: f64 = 4.0;

/// Temper for the delay-time sigmoids. The loss oscillates along a delay
/// time as echoes sweep the comb interference pattern, at up to pi radians
/// per sample of delay. Tempering caps the raw-to-samples slope near 100
/// samples per raw unit, so a 1e-4 central-difference probe stays in the
/// near-quadratic regime even for Nyquist-rate structure.
const TIME_TAU: f64 = 48.0;

/// Per-coordinate field table, in layout order.
pub fn layout() -> &'static [FieldSpec] {
    static LAYOUT: OnceLock<Vec<FieldSpec>> = OnceLock::new();
    LAYOUT.get_or_init(|| {
        let mut fields = Vec::with_capacity(PARAM_COUNT);
        let push = |fields: &mut Vec<FieldSpec>, name: &'static str, kind: MapKind| {
            let index = fields.len();
            fields.push(FieldSpec { index, name, kind });
        };
        let band_names: [(&str, &str, &str); PEQ_BANDS] = [
            ("peq.low.freq", "peq.low.gain", "peq.low.q"),
            ("peq.p1.freq", "peq.p1.gain", "peq.p1.q"),
            ("peq.p2.freq", "peq.p2.gain", "peq.p2.q"),
            ("peq.p3.freq", "peq.p3.gain", "peq.p3.q"),
            ("peq.p4.freq", "peq.p4.gain", "peq.p4.q"),
            ("peq.high.freq", "peq.high.gain", "peq.high.q"),
        ];
        for (f, g, q) in band_names {
            push(&mut fields, f, MapKind::LogRange { lo: 20.0, hi: 20000.0 });
            push(&mut fields, g, MapKind::Db { per_unit: EQ_GAIN_DB_PER_UNIT });
            push(&mut fields, q, MapKind::LogRange { lo: 0.1, hi: 10.0 });
        }
        push(&mut fields, "drc.threshold", MapKind::Range { lo: -60.0, hi: 30.0 });
        push(&mut fields, "drc.ratio", MapKind::OnePlus { span: 19.0 });
        push(&mut fields, "drc.knee", MapKind::Range { lo: 0.0, hi: 24.0 });
        push(&mut fields, "drc.attack", MapKind::LogRange { lo: 0.1, hi: 100.0 });
        push(&mut fields, "drc.release", MapKind::LogRange { lo: 10.0, hi: 1000.0 });
        push(&mut fields, "drc.makeup", MapKind::Db { per_unit: EQ_GAIN_DB_PER_UNIT });
        push(&mut fields, "delay.time", MapKind::SoftLogRange { lo: 1.0, hi: 1000.0, tau: TIME_TAU });
        push(&mut fields, "delay.feedback", MapKind::Range { lo: 0.0, hi: 0.95 });
        push(&mut fields, "delay.cross", MapKind::Range { lo: 0.0, hi: 1.0 });
        push(&mut fields, "delay.damp", MapKind::LogRange { lo: 200.0, hi: 20000.0 });
        push(&mut fields, "delay.wet", MapKind::Range { lo: 0.0, hi: 1.0 });
        push(&mut fields, "delay.width", MapKind::Range { lo: 0.0, hi: 1.0 });
        push(&mut fields, "pan.position", MapKind::CenteredUnit);
        push(&mut fields, "send.delay", MapKind::CenteredUnit);
        push(&mut fields, "send.reverb", MapKind::CenteredUnit);
        push(&mut fields, "send.delay_to_reverb", MapKind::CenteredUnit);
        for i in 0..FDN_LINES * FDN_LINES {
            let name: &'static str = Box::leak(format!("fdn.matrix.{i}").into_boxed_str());
            push(&mut fields, name, MapKind::Identity);
        }
        for i in 0..FDN_LINES {
            let name: &'static str = Box::leak(format!("fdn.input.{i}").into_boxed_str());
            push(&mut fields, name, MapKind::CenteredUnit);
        }
        for ch in ["l", "r"] {
            for i in 0..FDN_LINES {
                let name: &'static str =
                    Box::leak(format!("fdn.out_{ch}.{i}").into_boxed_str());
                push(&mut fields, name, MapKind::CenteredUnit);
            }
        }
        for i in 0..FDN_LINES {
            let name: &'static str = Box::leak(format!("fdn.time.{i}").into_boxed_str());
            push(&mut fields, name, MapKind::SoftLogRange { lo: 5.0, hi: 120.0, tau: TIME_TAU });
        }
        for i in 0..FDN_LINES {
            let lo: &'static str = Box::leak(format!("fdn.absorb.{i}.low").into_boxed_str());
            let hi: &'static str = Box::leak(format!("fdn.absorb.{i}.high").into_boxed_str());
            let fc: &'static str = Box::leak(format!("fdn.absorb.{i}.crossover").into_boxed_str());
            let bb: &'static str = Box::leak(format!("fdn.absorb.{i}.gain").into_boxed_str());
            push(&mut fields, lo, MapKind::NegDb { depth: 24.0 });
            push(&mut fields, hi, MapKind::NegDb { depth: 24.0 });
            push(&mut fields, fc, MapKind::LogRange { lo: 200.0, hi: 8000.0 });
            push(&mut fields, bb, MapKind::NegDb { depth: 12.0 });
        }
        let tone_names: [(&str, &str, &str); TONE_BANDS] = [
            ("tone.low.freq", "tone.low.gain", "tone.low.q"),
            ("tone.p1.freq", "tone.p1.gain", "tone.p1.q"),
            ("tone.p2.freq", "tone.p2.gain", "tone.p2.q"),
            ("tone.high.freq", "tone.high.gain", "tone.high.q"),
        ];
        for (f, g, q) in tone_names {
            push(&mut fields, f, MapKind::LogRange { lo: 50.0, hi: 16000.0 });
            push(&mut fields, g, MapKind::Db { per_unit: EQ_GAIN_DB_PER_UNIT });
            push(&mut fields, q, MapKind::LogRange { lo: 0.1, hi: 10.0 });
        }
        assert_eq!(fields.len(), PARAM_COUNT);
        fields
    })
}

/// Unconstrained raw parameter vector (the optimisation variable).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    raw: Vec<f64>,
}

impl ParamVector {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.len() != PARAM_COUNT {
            return Err(Error::ParamCount {
                expected: PARAM_COUNT,
                got: raw.len(),
            });
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { raw })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Mutable view for in-place updates; the length stays fixed and any
    /// non-finite write is caught by the consumers that re-validate.
    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.raw
    }
}

/// Raw vector whose mapped parameters leave the chain transparent: 0 dB EQ
/// bands, ratio 1, zero sends, centre pan. The compressor threshold sits at
/// +12 dB so signals at or below full scale never reach the knee, and the
/// reverb delay lines are staggered over co-prime-ish lengths.
pub fn neutral() -> ParamVector {
    let mut raw = vec![0.0; PARAM_COUNT];
    raw[DRC_THRESHOLD] = logit((12.0 - -60.0) / 90.0); // maps to +12 dB
    raw[DRC_RATIO] = -40.0; // sigmoid tail; 1 + 19*sigmoid(-40) == 1.0 in f64
    let line_ms = [17.0f64, 23.0, 29.0, 37.0, 43.0, 53.0];
    for (i, ms) in line_ms.iter().enumerate() {
        raw[FDN_TIME + i] = TIME_TAU * logit((ms / 5.0).ln() / (120.0f64 / 5.0).ln());
    }
    ParamVector::new(raw).expect("neutral vector is well formed")
}

/// Physical parameter values, indexed identically to the raw layout.
#[derive(Debug, Clone)]
pub struct PhysicalParams {
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandKind {
    LowShelf,
    Peak,
    HighShelf,
}

pub const PEQ_BAND_KINDS: [BandKind; PEQ_BANDS] = [
    BandKind::LowShelf,
    BandKind::Peak,
    BandKind::Peak,
    BandKind::Peak,
    BandKind::Peak,
    BandKind::HighShelf,
];

pub const TONE_BAND_KINDS: [BandKind; TONE_BANDS] = [
    BandKind::LowShelf,
    BandKind::Peak,
    BandKind::Peak,
    BandKind::HighShelf,
];

#[derive(Debug, Clone, Copy)]
pub struct EqBand {
    pub kind: BandKind,
    pub freq_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DrcParams {
    pub threshold_db: f64,
    pub ratio: f64,
    pub knee_db: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub makeup_db: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DelayParams {
    pub time_ms: f64,
    pub feedback: f64,
    pub cross: f64,
    pub damp_hz: f64,
    pub wet: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AbsorbParams {
    pub low_db: f64,
    pub high_db: f64,
    pub crossover_hz: f64,
    pub gain_db: f64,
}

impl PhysicalParams {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn peq_band(&self, b: usize) -> EqBand {
        let base = PEQ_START + 3 * b;
        EqBand {
            kind: PEQ_BAND_KINDS[b],
            freq_hz: self.values[base],
            gain_db: self.values[base + 1],
            q: self.values[base + 2],
        }
    }

    pub fn drc(&self) -> DrcParams {
        DrcParams {
            threshold_db: self.values[DRC_THRESHOLD],
            ratio: self.values[DRC_RATIO],
            knee_db: self.values[DRC_KNEE],
            attack_ms: self.values[DRC_ATTACK],
            release_ms: self.values[DRC_RELEASE],
            makeup_db: self.values[DRC_MAKEUP],
        }
    }

    pub fn delay(&self) -> DelayParams {
        DelayParams {
            time_ms: self.values[DLY_TIME],
            feedback: self.values[DLY_FEEDBACK],
            cross: self.values[DLY_CROSS],
            damp_hz: self.values[DLY_DAMP],
            wet: self.values[DLY_WET],
            width: self.values[DLY_WIDTH],
        }
    }

    pub fn pan_position(&self) -> f64 {
        self.values[PAN]
    }

    pub fn send_delay(&self) -> f64 {
        self.values[SEND_DELAY]
    }

    pub fn send_reverb(&self) -> f64 {
        self.values[SEND_REVERB]
    }

    pub fn send_delay_to_reverb(&self) -> f64 {
        self.values[SEND_DELAY_TO_REVERB]
    }

    pub fn fdn_matrix(&self) -> &[f64] {
        &self.values[FDN_MATRIX..FDN_MATRIX + 36]
    }

    pub fn fdn_input(&self) -> &[f64] {
        &self.values[FDN_INPUT..FDN_INPUT + FDN_LINES]
    }

    pub fn fdn_output_left(&self) -> &[f64] {
        &self.values[FDN_OUTPUT..FDN_OUTPUT + FDN_LINES]
    }

    pub fn fdn_output_right(&self) -> &[f64] {
        &self.values[FDN_OUTPUT + FDN_LINES..FDN_OUTPUT + 2 * FDN_LINES]
    }

    pub fn fdn_times_ms(&self) -> &[f64] {
        &self.values[FDN_TIME..FDN_TIME + FDN_LINES]
    }

    pub fn fdn_absorb(&self, line: usize) -> AbsorbParams {
        let base = FDN_ABSORB + 4 * line;
        AbsorbParams {
            low_db: self.values[base],
            high_db: self.values[base + 1],
            crossover_hz: self.values[base + 2],
            gain_db: self.values[base + 3],
        }
    }

    pub fn tone_band(&self, b: usize) -> EqBand {
        let base = FDN_TONE + 3 * b;
        EqBand {
            kind: TONE_BAND_KINDS[b],
            freq_hz: self.values[base],
            gain_db: self.values[base + 1],
            q: self.values[base + 2],
        }
    }
}

/// Apply every field's map. Infallible for a well-formed [`ParamVector`].
pub fn map_params(theta: &ParamVector) -> PhysicalParams {
    let values = layout()
        .iter()
        .zip(theta.raw())
        .map(|(f, &r)| f.kind.forward(r))
        .collect();
    PhysicalParams { values }
}

/// Elementwise d(physical)/d(raw) at `theta`.
pub fn map_jacobian_diag(theta: &ParamVector) -> Vec<f64> {
    layout()
        .iter()
        .zip(theta.raw())
        .map(|(f, &r)| f.kind.deriv(r))
        .collect()
}
