//! Memcapacitor energy accounting.
//!
//! Charging energy is counted at rising voltage edges only: at each segment
//! boundary where the amplitude increases by `dv > 0` the device absorbs
//! `charge_factor * C * dv^2`, with `C` taken from the last integration step
//! before the edge. Falling edges (discharging) contribute nothing, and no
//! static energy is consumed while a pulse is held — the device is purely
//! capacitive. The train is taken to start from a 0 V rest level, so a train
//! whose first segment is nonzero has a rising edge at t = 0.

use serde::{Deserialize, Serialize};

use crate::device::CapacitanceTrace;
use crate::encoding::PulseTrain;
use crate::error::{Error, Result};

/// Energy summary of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Mean charging energy over rising edges, J.
    pub energy_per_spike_j: f64,
    pub total_energy_j: f64,
    /// total_energy / total duration, W.
    pub mean_power_w: f64,
    /// Number of rising edges.
    pub spike_count: usize,
    /// Mean width of the measured pulses in the driving train, s.
    pub pulse_width_s: f64,
    /// 1.0 counts C*dv^2 per edge; 0.5 selects the stored-energy convention.
    pub charge_factor: f64,
    pub total_duration_s: f64,
}

impl EnergyReport {
    fn from_edges(
        total_energy_j: f64,
        spike_count: usize,
        total_duration_s: f64,
        pulse_width_s: f64,
        charge_factor: f64,
    ) -> Self {
        EnergyReport {
            energy_per_spike_j: if spike_count > 0 {
                total_energy_j / spike_count as f64
            } else {
                0.0
            },
            total_energy_j,
            mean_power_w: if total_duration_s > 0.0 {
                total_energy_j / total_duration_s
            } else {
                0.0
            },
            spike_count,
            pulse_width_s,
            charge_factor,
            total_duration_s,
        }
    }

    /// Aggregate several runs (e.g. all test-set reservoir runs of a task).
    pub fn combine(reports: &[EnergyReport]) -> EnergyReport {
        let total: f64 = reports.iter().map(|r| r.total_energy_j).sum();
        let spikes: usize = reports.iter().map(|r| r.spike_count).sum();
        let duration: f64 = reports.iter().map(|r| r.total_duration_s).sum();
        let width = if reports.is_empty() {
            0.0
        } else {
            reports.iter().map(|r| r.pulse_width_s).sum::<f64>() / reports.len() as f64
        };
        let cf = reports.first().map(|r| r.charge_factor).unwrap_or(1.0);
        EnergyReport::from_edges(total, spikes, duration, width, cf)
    }
}

fn mean_pulse_width(train: &PulseTrain) -> f64 {
    let measured: Vec<f64> = train
        .segments
        .iter()
        .filter(|s| s.measure)
        .map(|s| s.duration_s)
        .collect();
    if measured.is_empty() {
        train.total_duration() / train.segments.len() as f64
    } else {
        measured.iter().sum::<f64>() / measured.len() as f64
    }
}

/// Energy from a train plus the capacitances at segment ends.
/// `initial_c` is the capacitance just before the first segment starts;
/// `segment_end_caps[i]` is the capacitance at the end of segment `i`.
pub fn edge_energy(
    train: &PulseTrain,
    initial_c: f64,
    segment_end_caps: &[f64],
    charge_factor: f64,
) -> Result<EnergyReport> {
    if segment_end_caps.len() != train.segments.len() {
        return Err(Error::Dimension(format!(
            "{} segment-end capacitances for {} segments",
            segment_end_caps.len(),
            train.segments.len()
        )));
    }
    if !(charge_factor > 0.0) {
        return Err(Error::invalid("charge_factor must be positive"));
    }
    let mut total = 0.0;
    let mut spikes = 0usize;
    let mut prev_v = 0.0;
    for (i, seg) in train.segments.iter().enumerate() {
        let dv = seg.amplitude_v - prev_v;
        if dv > 0.0 {
            let c = if i == 0 {
                initial_c
            } else {
                segment_end_caps[i - 1]
            };
            total += charge_factor * c * dv * dv;
            spikes += 1;
        }
        prev_v = seg.amplitude_v;
    }
    Ok(EnergyReport::from_edges(
        total,
        spikes,
        train.total_duration(),
        mean_pulse_width(train),
        charge_factor,
    ))
}

/// Energy from a simulated trace aligned with its driving train.
///
/// The trace must come from the same train, sampled either every step or at
/// the end of every segment (both include the initial state). Misaligned
/// inputs are rejected.
pub fn memcap_energy(
    trace: &CapacitanceTrace,
    train: &PulseTrain,
    charge_factor: f64,
) -> Result<EnergyReport> {
    let n_seg = train.segments.len();
    if trace.len() < 2 {
        return Err(Error::invalid("trace too short to align with train"));
    }
    let caps = if trace.len() == n_seg + 1 {
        // one sample per segment end, plus the initial state
        trace.capacitance_f[..n_seg].to_vec()
    } else {
        // every-step trace: constant step dt, segment ends at cumulative
        // rounded step counts
        let dt = trace.times_s[1] - trace.times_s[0];
        if !(dt > 0.0) {
            return Err(Error::invalid("trace times not increasing"));
        }
        let mut idx = 0usize;
        let mut caps = Vec::with_capacity(n_seg);
        for seg in &train.segments {
            caps.push(trace.capacitance_f[idx]);
            idx += ((seg.duration_s / dt).round() as usize).max(1);
        }
        if idx + 1 != trace.len() {
            return Err(Error::Dimension(format!(
                "trace has {} samples, train implies {}",
                trace.len(),
                idx + 1
            )));
        }
        caps
    };
    // caps[i] is the capacitance just before segment i starts
    let mut total = 0.0;
    let mut spikes = 0usize;
    let mut prev_v = 0.0;
    for (seg, &c) in train.segments.iter().zip(&caps) {
        let dv = seg.amplitude_v - prev_v;
        if dv > 0.0 {
            total += charge_factor * c * dv * dv;
            spikes += 1;
        }
        prev_v = seg.amplitude_v;
    }
    Ok(EnergyReport::from_edges(
        total,
        spikes,
        train.total_duration(),
        mean_pulse_width(train),
        charge_factor,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{simulate, MemcapacitorParams, SamplePolicy};
    use crate::encoding::Segment;
    use crate::reservoir::ReservoirDriver;
    use approx::assert_relative_eq;

    fn train(pulses: &[(f64, f64)]) -> PulseTrain {
        PulseTrain::from_pulses(pulses).unwrap()
    }

    #[test]
    fn zero_amplitude_train_consumes_nothing() {
        let t = train(&[(0.0, 0.1), (0.0, 0.1)]);
        let rep = edge_energy(&t, 20e-12, &[20e-12, 20e-12], 1.0).unwrap();
        assert_eq!(rep.total_energy_j, 0.0);
        assert_eq!(rep.spike_count, 0);
        assert_eq!(rep.energy_per_spike_j, 0.0);
    }

    #[test]
    fn single_edge_hand_value() {
        // 0 -> 100 mV at C = 20 pF, factor 1.0: 20e-12 * 0.01 = 2.0e-13 J
        let t = train(&[(0.0, 0.1), (0.1, 0.1)]);
        let rep = edge_energy(&t, 20e-12, &[20e-12, 25e-12], 1.0).unwrap();
        assert_relative_eq!(rep.total_energy_j, 2.0e-13, max_relative = 1e-12);
        assert_eq!(rep.spike_count, 1);
        assert_relative_eq!(rep.mean_power_w, 2.0e-13 / 0.2, max_relative = 1e-12);
    }

    #[test]
    fn falling_edges_are_free() {
        let t = train(&[(0.2, 0.1), (0.05, 0.1), (0.2, 0.1)]);
        let caps = [1e-12, 2e-12, 3e-12];
        let rep = edge_energy(&t, 1e-12, &caps, 1.0).unwrap();
        // rising: 0 -> 0.2 at 1e-12, 0.05 -> 0.2 at 2e-12
        let expect = 1e-12 * 0.04 + 2e-12 * 0.15 * 0.15;
        assert_relative_eq!(rep.total_energy_j, expect, max_relative = 1e-12);
        assert_eq!(rep.spike_count, 2);
    }

    #[test]
    fn charge_factor_scales_linearly() {
        let t = train(&[(0.1, 0.1)]);
        let full = edge_energy(&t, 20e-12, &[20e-12], 1.0).unwrap();
        let half = edge_energy(&t, 20e-12, &[20e-12], 0.5).unwrap();
        assert_relative_eq!(
            half.total_energy_j,
            0.5 * full.total_energy_j,
            max_relative = 1e-12
        );
    }

    #[test]
    fn voltage_scaling_is_quadratic_at_fixed_c() {
        let c = 20e-12;
        let t1 = train(&[(0.05, 0.1)]);
        let t2 = train(&[(0.15, 0.1)]);
        let e1 = edge_energy(&t1, c, &[c], 1.0).unwrap().total_energy_j;
        let e2 = edge_energy(&t2, c, &[c], 1.0).unwrap().total_energy_j;
        assert_relative_eq!(e2 / e1, 9.0, max_relative = 1e-12);
    }

    #[test]
    fn contributions_are_nonnegative_for_any_train() {
        let p = MemcapacitorParams::calibrated_20pf();
        let t = train(&[(0.2, 0.2), (0.05, 0.1), (0.12, 0.3), (0.0, 0.5), (0.18, 0.1)]);
        let mut d = ReservoirDriver::new(p, 1e-3).unwrap();
        let out = d.drive(&t).unwrap();
        let rep = edge_energy(&t, p.rest_capacitance(), &out.segment_end_caps, 1.0).unwrap();
        assert!(rep.total_energy_j >= 0.0);
        assert!(rep.spike_count == 3); // edges 0->0.2, 0.05->0.12, 0->0.18
    }

    #[test]
    fn trace_and_edge_paths_agree() {
        let p = MemcapacitorParams::calibrated_20pf();
        let t = PulseTrain::new(vec![
            Segment {
                amplitude_v: 0.15,
                duration_s: 0.1,
                measure: true,
            },
            Segment {
                amplitude_v: 0.0,
                duration_s: 0.2,
                measure: false,
            },
            Segment {
                amplitude_v: 0.2,
                duration_s: 0.1,
                measure: true,
            },
        ])
        .unwrap();
        let dt = 1e-3;
        let every = simulate(&t, &p, dt, &SamplePolicy::EveryStep).unwrap();
        let ends = simulate(&t, &p, dt, &SamplePolicy::EndOfEachSegment).unwrap();
        let a = memcap_energy(&every, &t, 1.0).unwrap();
        let b = memcap_energy(&ends, &t, 1.0).unwrap();
        let mut d = ReservoirDriver::new(p, dt).unwrap();
        let out = d.drive(&t).unwrap();
        let c = edge_energy(&t, p.rest_capacitance(), &out.segment_end_caps, 1.0).unwrap();
        assert_relative_eq!(a.total_energy_j, b.total_energy_j, max_relative = 1e-12);
        assert_relative_eq!(a.total_energy_j, c.total_energy_j, max_relative = 1e-12);
        assert_eq!(a.spike_count, 2);
    }

    #[test]
    fn misaligned_trace_is_rejected() {
        let p = MemcapacitorParams::calibrated_20pf();
        let t = train(&[(0.1, 0.1), (0.2, 0.1)]);
        let other = train(&[(0.1, 0.1), (0.2, 0.1), (0.3, 0.1)]);
        let tr = simulate(&t, &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        assert!(memcap_energy(&tr, &other, 1.0).is_err());
    }

    #[test]
    fn isolated_pulses_make_energy_width_independent() {
        // Long rests return the device to rest before every rising edge, so
        // per-spike energy is width-independent to well under 0.1%.
        let p = MemcapacitorParams::calibrated_20pf();
        let amplitudes = [0.12, 0.2, 0.05, 0.17];
        let per_spike = |width: f64| {
            let mut segs = Vec::new();
            for &a in &amplitudes {
                segs.push(Segment {
                    amplitude_v: a,
                    duration_s: width,
                    measure: true,
                });
                segs.push(Segment {
                    amplitude_v: 0.0,
                    duration_s: 5.0,
                    measure: false,
                });
            }
            let t = PulseTrain::new(segs).unwrap();
            let mut d = ReservoirDriver::new(p, 1e-3).unwrap();
            let out = d.drive(&t).unwrap();
            edge_energy(&t, p.rest_capacitance(), &out.segment_end_caps, 1.0)
                .unwrap()
                .energy_per_spike_j
        };
        let e100 = per_spike(0.1);
        let e500 = per_spike(0.5);
        assert!(
            (e100 - e500).abs() / e100 < 1e-3,
            "width dependence {} vs {}",
            e100,
            e500
        );
    }

    #[test]
    fn combine_sums_runs() {
        let t = train(&[(0.1, 0.1)]);
        let r = edge_energy(&t, 20e-12, &[20e-12], 1.0).unwrap();
        let sum = EnergyReport::combine(&[r, r]);
        assert_relative_eq!(
            sum.total_energy_j,
            2.0 * r.total_energy_j,
            max_relative = 1e-12
        );
        assert_eq!(sum.spike_count, 2);
        assert_relative_eq!(sum.mean_power_w, r.mean_power_w, max_relative = 1e-12);
        let empty = EnergyReport::combine(&[]);
        assert_eq!(empty.total_energy_j, 0.0);
    }
}
