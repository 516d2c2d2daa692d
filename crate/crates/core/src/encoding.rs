//! Input-to-voltage encoders.
//!
//! Every task input (bit streams, scalar sequences, EEG samples, static
//! features) becomes a [`PulseTrain`]: an ordered list of piecewise-constant
//! voltage segments. Segments flagged `measure` mark where the reservoir
//! samples capacitance (the end of each applied pulse); unflagged segments
//! are rest gaps inserted by duty-cycled encoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default EEG pulse width: one sample period at 173.67 Hz.
pub const EEG_SAMPLE_PERIOD_S: f64 = 1.0 / 173.67;

/// One constant-voltage segment of a drive waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub amplitude_v: f64,
    pub duration_s: f64,
    /// Capacitance is sampled at the final integration step of this segment.
    pub measure: bool,
}

/// Piecewise-constant voltage waveform, the universal device input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub segments: Vec<Segment>,
}

impl PulseTrain {
    /// Build a train, validating that durations are positive and amplitudes finite.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("pulse train must contain segments"));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration_s > 0.0) || !s.duration_s.is_finite() {
                return Err(Error::invalid(format!(
                    "segment {i}: duration must be positive and finite, got {}",
                    s.duration_s
                )));
            }
            if !s.amplitude_v.is_finite() {
                return Err(Error::invalid(format!(
                    "segment {i}: amplitude must be finite"
                )));
            }
        }
        Ok(PulseTrain { segments })
    }

    /// Train of measured pulses from `(volts, seconds)` pairs.
    pub fn from_pulses(pulses: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pulses
                .iter()
                .map(|&(v, d)| Segment {
                    amplitude_v: v,
                    duration_s: d,
                    measure: true,
                })
                .collect(),
        )
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Number of measured (on-pulse) segments.
    pub fn measured_count(&self) -> usize {
        self.segments.iter().filter(|s| s.measure).count()
    }

    /// Truncate to the first `n` measured pulses (and any rest segments between them).
    pub fn truncate_measured(&self, n: usize) -> Result<Self> {
        let mut segs = Vec::new();
        let mut seen = 0;
        for s in &self.segments {
            if seen == n {
                break;
            }
            segs.push(*s);
            if s.measure {
                seen += 1;
            }
        }
        if seen < n {
            return Err(Error::invalid(format!(
                "train has {seen} measured pulses, requested {n}"
            )));
        }
        PulseTrain::new(segs)
    }
}

/// Binary (0/1) encoding: two voltage levels at a fixed pulse width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryLevels {
    pub low_v: f64,
    pub high_v: f64,
    pub width_s: f64,
}

impl Default for BinaryLevels {
    fn default() -> Self {
        // 0-bit -> 10 mV, 1-bit -> 200 mV, 500 ms pulses.
        BinaryLevels {
            low_v: 0.010,
            high_v: 0.200,
            width_s: 0.5,
        }
    }
}

/// Linear amplitude map with a duty-cycled frame: an on-pulse at the mapped
/// voltage followed by a 0 V rest for the remainder of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeMap {
    pub in_min: f64,
    pub in_max: f64,
    pub v_min_v: f64,
    pub v_max_v: f64,
    pub frame_s: f64,
    pub duty: f64,
}

impl AmplitudeMap {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min_v < self.v_max_v) {
            return Err(Error::invalid("amplitude map requires v_min < v_max"));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::invalid("duty must satisfy 0 < duty <= 1"));
        }
        if !(self.in_max > self.in_min) {
            return Err(Error::invalid("amplitude map requires in_min < in_max"));
        }
        if !(self.frame_s > 0.0) {
            return Err(Error::invalid("frame duration must be positive"));
        }
        Ok(())
    }
}

/// Rectified-and-clipped amplitude map used for EEG samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipAbsMap {
    pub clip_uv: f64,
    pub v_min_v: f64,
    pub v_max_v: f64,
    pub width_s: f64,
}

impl Default for ClipAbsMap {
    fn default() -> Self {
        // |x| clipped at 300 uV, mapped to 100..200 mV, one sample period wide.
        ClipAbsMap {
            clip_uv: 300.0,
            v_min_v: 0.100,
            v_max_v: 0.200,
            width_s: EEG_SAMPLE_PERIOD_S,
        }
    }
}

impl ClipAbsMap {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_uv > 0.0) {
            return Err(Error::invalid("clip_uv must be positive"));
        }
        if !(self.v_min_v < self.v_max_v) {
            return Err(Error::invalid("clip-abs map requires v_min < v_max"));
        }
        if !(self.width_s > 0.0) {
            return Err(Error::invalid("width must be positive"));
        }
        Ok(())
    }
}

/// Single long pulse per static feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticMap {
    pub v_min_v: f64,
    pub v_max_v: f64,
    pub width_s: f64,
}

impl Default for StaticMap {
    fn default() -> Self {
        StaticMap {
            v_min_v: 0.100,
            v_max_v: 0.200,
            width_s: 2.5,
        }
    }
}

/// Tagged union of the encoder variants, expressible in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum EncoderSpec {
    Binary(BinaryLevels),
    Amplitude(AmplitudeMap),
    ClipAbs(ClipAbsMap),
    Static(StaticMap),
}

impl EncoderSpec {
    /// Encode a scalar sequence with this spec. Binary inputs must be exactly
    /// 0.0 or 1.0; static specs encode each value as its own segment and are
    /// rejected here (use [`encode_static`] for per-feature trains).
    pub fn encode(&self, values: &[f64]) -> Result<PulseTrain> {
        match self {
            EncoderSpec::Binary(spec) => {
                let bits: Vec<u8> = values
                    .iter()
                    .map(|&v| {
                        if v == 0.0 {
                            Ok(0u8)
                        } else if v == 1.0 {
                            Ok(1u8)
                        } else {
                            Err(Error::invalid(format!("non-binary symbol {v}")))
                        }
                    })
                    .collect::<Result<_>>()?;
                encode_binary(&bits, spec)
            }
            EncoderSpec::Amplitude(spec) => encode_amplitude(values, spec),
            EncoderSpec::ClipAbs(spec) => encode_eeg(values, spec),
            EncoderSpec::Static(_) => Err(Error::invalid(
                "static encoder produces one train per feature; use encode_static",
            )),
        }
    }
}

/// Encode a bit sequence: one measured segment per bit.
pub fn encode_binary(bits: &[u8], spec: &BinaryLevels) -> Result<PulseTrain> {
    if bits.is_empty() {
        return Err(Error::invalid("empty bit sequence"));
    }
    if !(spec.width_s > 0.0) {
        return Err(Error::invalid("pulse width must be positive"));
    }
    let segments = bits
        .iter()
        .map(|&b| {
            let amplitude_v = match b {
                0 => Ok(spec.low_v),
                1 => Ok(spec.high_v),
                other => Err(Error::invalid(format!("non-binary symbol {other}"))),
            }?;
            Ok(Segment {
                amplitude_v,
                duration_s: spec.width_s,
                measure: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PulseTrain::new(segments)
}

fn linear_map(x: f64, in_min: f64, in_max: f64, out_min: f64, out_max: f64) -> f64 {
    out_min + (x - in_min) / (in_max - in_min) * (out_max - out_min)
}

/// Encode a scalar sequence as duty-cycled amplitude frames. Values outside
/// `[in_min, in_max]` are an error, not clamped.
pub fn encode_amplitude(u: &[f64], spec: &AmplitudeMap) -> Result<PulseTrain> {
    spec.validate()?;
    if u.is_empty() {
        return Err(Error::invalid("empty input sequence"));
    }
    let on_s = spec.duty * spec.frame_s;
    let rest_s = (1.0 - spec.duty) * spec.frame_s;
    let mut segments = Vec::with_capacity(u.len() * 2);
    for (i, &x) in u.iter().enumerate() {
        if !x.is_finite() || x < spec.in_min || x > spec.in_max {
            return Err(Error::invalid(format!(
                "input {i} = {x} outside [{}, {}]",
                spec.in_min, spec.in_max
            )));
        }
        segments.push(Segment {
            amplitude_v: linear_map(x, spec.in_min, spec.in_max, spec.v_min_v, spec.v_max_v),
            duration_s: on_s,
            measure: true,
        });
        if rest_s > 0.0 {
            segments.push(Segment {
                amplitude_v: 0.0,
                duration_s: rest_s,
                measure: false,
            });
        }
    }
    PulseTrain::new(segments)
}

/// Encode EEG samples (microvolts): rectify, clip, map linearly. All real
/// sample values are accepted.
pub fn encode_eeg(samples_uv: &[f64], spec: &ClipAbsMap) -> Result<PulseTrain> {
    spec.validate()?;
    if samples_uv.is_empty() {
        return Err(Error::invalid("empty sample sequence"));
    }
    let segments = samples_uv
        .iter()
        .map(|&x| {
            let clipped = x.abs().min(spec.clip_uv);
            Segment {
                amplitude_v: linear_map(clipped, 0.0, spec.clip_uv, spec.v_min_v, spec.v_max_v),
                duration_s: spec.width_s,
                measure: true,
            }
        })
        .collect();
    PulseTrain::new(segments)
}

/// Encode static features: one single-segment train per feature, linearly
/// mapped over that feature's training range. Out-of-range features are
/// clamped; the count of clamped values is returned for diagnostics.
pub fn encode_static(
    features: &[f64],
    in_ranges: &[(f64, f64)],
    spec: &StaticMap,
) -> Result<(Vec<PulseTrain>, usize)> {
    if features.is_empty() {
        return Err(Error::invalid("empty feature list"));
    }
    if features.len() != in_ranges.len() {
        return Err(Error::Dimension(format!(
            "{} features but {} ranges",
            features.len(),
            in_ranges.len()
        )));
    }
    if !(spec.v_min_v < spec.v_max_v) || !(spec.width_s > 0.0) {
        return Err(Error::invalid("static map requires v_min < v_max and width > 0"));
    }
    let mut clamped = 0usize;
    let mut trains = Vec::with_capacity(features.len());
    for (&x, &(lo, hi)) in features.iter().zip(in_ranges) {
        if !(hi > lo) {
            return Err(Error::invalid(format!(
                "degenerate feature range [{lo}, {hi}]"
            )));
        }
        let xc = if x < lo {
            clamped += 1;
            lo
        } else if x > hi {
            clamped += 1;
            hi
        } else {
            x
        };
        trains.push(PulseTrain::new(vec![Segment {
            amplitude_v: linear_map(xc, lo, hi, spec.v_min_v, spec.v_max_v),
            duration_s: spec.width_s,
            measure: true,
        }])?);
    }
    Ok((trains, clamped))
}
