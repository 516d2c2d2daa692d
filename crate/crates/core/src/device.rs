//! Lipid-bilayer memcapacitor model.
//!
//! Two coupled first-order states drive the device: electrowetting grows the
//! bilayer minor-axis radius `R` and electrocompression thins the hydrophobic
//! core `W`. Both processes are driven by the square of the applied voltage
//! and relax back to the zero-volt geometry `(R0, W0)`:
//!
//! ```text
//! dR/dt = ( a*eps*eps0/(2 W) * v^2 - k_ew (R - R0) ) / zeta_ew
//! dW/dt = ( -a*eps*eps0*pi R^2/(2 W^2) * v^2 + k_ec (W0 - W) ) / zeta_ec
//! C(R, W) = eps*eps0 * (a pi R^2) / W
//! ```
//!
//! Integration is classical fixed-step RK4 with the voltage held constant
//! over each step; the driving waveform is piecewise constant by
//! construction (see [`crate::encoding::PulseTrain`]).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::encoding::PulseTrain;
use crate::error::{Error, Result};

/// Permittivity of free space, F/m.
pub const EPSILON_0: f64 = 8.854187817e-12;

fn default_eps0() -> f64 {
    EPSILON_0
}

fn default_w_floor_frac() -> f64 {
    0.2
}

/// Physical constants of one device. Immutable and freely shareable.
///
/// Serialized keys match the field names below (`a`, `eps`, `eps0`, `R0`,
/// `W0`, `zeta_ew`, `k_ew`, `zeta_ec`, `k_ec`), all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemcapacitorParams {
    /// Dimensionless ellipse shape factor multiplying `pi R^2`.
    pub a: f64,
    /// Relative permittivity of the hydrophobic core.
    pub eps: f64,
    /// Permittivity of free space, F/m (fixed).
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Zero-volt minor-axis radius, m.
    #[serde(rename = "R0")]
    pub r0: f64,
    /// Zero-volt hydrophobic thickness, m.
    #[serde(rename = "W0")]
    pub w0: f64,
    /// Electrowetting damping, N*s/m^2.
    pub zeta_ew: f64,
    /// Electrowetting stiffness, N/m^2.
    pub k_ew: f64,
    /// Electrocompression damping, N*s/m.
    pub zeta_ec: f64,
    /// Electrocompression stiffness, N/m.
    pub k_ec: f64,
    /// Thickness floor as a fraction of `W0`; reaching it sets a diagnostics
    /// flag rather than silently clamping.
    #[serde(default = "default_w_floor_frac")]
    pub w_floor_frac: f64,
}

/// Calibration targets that pin the free coefficients the source model does
/// not tabulate. See [`MemcapacitorParams::calibrated`].
#[derive(Debug, Clone, Copy)]
pub struct CalibrationTargets {
    /// Steady-state C/C0 at the calibration voltage.
    pub c_ratio: f64,
    /// Fractional thickness reduction (1 - W_ss/W0) at the calibration voltage.
    pub thinning: f64,
    /// Calibration voltage, V.
    pub v_cal: f64,
    /// Electrowetting relaxation time zeta_ew/k_ew, s.
    pub tau_ew_s: f64,
    /// Electrocompression relaxation time zeta_ec/k_ec, s.
    pub tau_ec_s: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        // Chosen so that with R0 = 100 um, W0 = 4 nm, eps = 2.2:
        //  - specific capacitance eps*eps0/W0 ~ 0.49 uF/cm^2,
        //  - steady-state C/C0 reaches 2.9 at 200 mV (2-3x band),
        //  - zero-input relaxation to within 1% of rest takes ~1.3 s.
        CalibrationTargets {
            c_ratio: 2.90,
            thinning: 0.03,
            v_cal: 0.200,
            tau_ew_s: 0.30,
            tau_ec_s: 0.08,
        }
    }
}

impl MemcapacitorParams {
    /// Derive stiffness and damping coefficients from calibration targets.
    ///
    /// At steady state with `rho = R/R0` and `omega = W/W0`:
    /// `rho = 1 + alpha/omega` and `omega^2 (1-omega) = beta rho^2`, where
    /// `alpha = a*eps*eps0*v^2 / (2 W0 k_ew R0)` and
    /// `beta = a*eps*eps0*pi R0^2 v^2 / (2 W0^3 k_ec)`. Inverting those two
    /// relations at the calibration point fixes `k_ew` and `k_ec`; the
    /// relaxation times then fix the dampings.
    pub fn calibrated(r0: f64, w0: f64, targets: &CalibrationTargets) -> Self {
        let a = 1.0;
        let eps = 2.2;
        let ee0 = eps * EPSILON_0;
        let v2 = targets.v_cal * targets.v_cal;
        let omega = 1.0 - targets.thinning;
        let rho = (targets.c_ratio * omega).sqrt();
        let alpha = (rho - 1.0) * omega;
        let beta = omega * omega * targets.thinning / (rho * rho);
        let k_ew = a * ee0 * v2 / (2.0 * w0 * r0 * alpha);
        let k_ec = a * ee0 * PI * r0 * r0 * v2 / (2.0 * w0.powi(3) * beta);
        MemcapacitorParams {
            a,
            eps,
            eps0: EPSILON_0,
            r0,
            w0,
            zeta_ew: targets.tau_ew_s * k_ew,
            k_ew,
            zeta_ec: targets.tau_ec_s * k_ec,
            k_ec,
            w_floor_frac: default_w_floor_frac(),
        }
    }

    /// Default calibrated device: 100 um radius bilayer, C0 ~ 153 pF.
    pub fn calibrated_default() -> Self {
        Self::calibrated(1.0e-4, 4.0e-9, &CalibrationTargets::default())
    }

    /// Small-droplet device with C0 = 20 pF, used for the energy analysis.
    /// Same dimensionless steady-state response as the default device.
    pub fn calibrated_20pf() -> Self {
        let w0 = 4.0e-9;
        let ee0 = 2.2 * EPSILON_0;
        let r0 = (20.0e-12 * w0 / (ee0 * PI)).sqrt();
        Self::calibrated(r0, w0, &CalibrationTargets::default())
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("eps", self.eps),
            ("eps0", self.eps0),
            ("R0", self.r0),
            ("W0", self.w0),
            ("zeta_ew", self.zeta_ew),
            ("k_ew", self.k_ew),
            ("zeta_ec", self.zeta_ec),
            ("k_ec", self.k_ec),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        if ((self.eps0 - EPSILON_0) / EPSILON_0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "eps0 is fixed at {EPSILON_0} F/m, got {}",
                self.eps0
            )));
        }
        if !(self.w_floor_frac > 0.0 && self.w_floor_frac < 1.0) {
            return Err(Error::invalid("w_floor_frac must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let params: MemcapacitorParams =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    /// Rest state at t = 0.
    pub fn rest_state(&self) -> MemcapacitorState {
        MemcapacitorState {
            r_m: self.r0,
            w_m: self.w0,
            t_s: 0.0,
        }
    }

    /// Zero-volt rest capacitance C0, F.
    pub fn rest_capacitance(&self) -> f64 {
        self.eps * self.eps0 * (self.a * PI * self.r0 * self.r0) / self.w0
    }

    fn w_floor(&self) -> f64 {
        self.w_floor_frac * self.w0
    }
}

/// Dynamical variables of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemcapacitorState {
    /// Bilayer minor-axis radius, m.
    pub r_m: f64,
    /// Hydrophobic thickness, m.
    pub w_m: f64,
    /// Simulation time, s.
    pub t_s: f64,
}

impl MemcapacitorState {
    fn check(&self) -> Result<()> {
        if !self.r_m.is_finite() || !self.w_m.is_finite() || !self.t_s.is_finite() {
            return Err(Error::invalid("non-finite state"));
        }
        if self.r_m <= 0.0 || self.w_m <= 0.0 {
            return Err(Error::invalid(format!(
                "state requires R > 0 and W > 0, got R = {}, W = {}",
                self.r_m, self.w_m
            )));
        }
        Ok(())
    }
}

#[inline]
fn deriv_raw(r: f64, w: f64, v2: f64, p: &MemcapacitorParams) -> (f64, f64) {
    let ee0 = p.a * p.eps * p.eps0;
    let dr = (ee0 / (2.0 * w) * v2 - p.k_ew * (r - p.r0)) / p.zeta_ew;
    let dw = (-ee0 * PI * r * r / (2.0 * w * w) * v2 + p.k_ec * (p.w0 - w)) / p.zeta_ec;
    (dr, dw)
}

/// Time derivatives (dR/dt, dW/dt) in m/s at the given state and voltage.
pub fn derivatives(
    state: &MemcapacitorState,
    v: f64,
    params: &MemcapacitorParams,
) -> Result<(f64, f64)> {
    state.check()?;
    if !v.is_finite() {
        return Err(Error::invalid("non-finite voltage"));
    }
    Ok(deriv_raw(state.r_m, state.w_m, v * v, params))
}

/// Result of one integration step.
#[derive(Debug, Clone, Copy)]
pub struct Stepped {
    pub state: MemcapacitorState,
    /// True when the thickness floor was reached and clamped this step.
    pub w_floor_hit: bool,
}

/// One classical RK4 step with the voltage held constant over `dt`.
pub fn step(
    state: &MemcapacitorState,
    v: f64,
    dt: f64,
    params: &MemcapacitorParams,
) -> Result<Stepped> {
    state.check()?;
    if !v.is_finite() {
        return Err(Error::invalid("non-finite voltage"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let v2 = v * v;
    let (r, w) = (state.r_m, state.w_m);

    let (k1r, k1w) = deriv_raw(r, w, v2, params);
    let (k2r, k2w) = deriv_raw(r + 0.5 * dt * k1r, w + 0.5 * dt * k1w, v2, params);
    let (k3r, k3w) = deriv_raw(r + 0.5 * dt * k2r, w + 0.5 * dt * k2w, v2, params);
    let (k4r, k4w) = deriv_raw(r + dt * k3r, w + dt * k3w, v2, params);

    let r_next = r + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
    let mut w_next = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    let t_next = state.t_s + dt;

    if !r_next.is_finite() || !w_next.is_finite() {
        return Err(Error::IntegrationDiverged {
            t: state.t_s,
            dt,
        });
    }
    let mut w_floor_hit = false;
    let floor = params.w_floor();
    if w_next < floor {
        w_next = floor;
        w_floor_hit = true;
    }
    if r_next <= 0.0 {
        return Err(Error::IntegrationDiverged { t: state.t_s, dt });
    }
    let mut out = *state;
    out.r_m = r_next;
    out.w_m = w_next;
    out.t_s = t_next;
    Ok(Stepped {
        state: out,
        w_floor_hit,
    })
}

/// Dynamic capacitance C(R, W) in farads.
pub fn capacitance(state: &MemcapacitorState, params: &MemcapacitorParams) -> Result<f64> {
    state.check()?;
    Ok(capacitance_raw(state.r_m, state.w_m, params))
}

#[inline]
pub(crate) fn capacitance_raw(r: f64, w: f64, p: &MemcapacitorParams) -> f64 {
    let area = p.a * PI * r * r;
    p.eps * p.eps0 * area / w
}

/// Guard against steady-state queries beyond the model's fold voltage, V.
pub const DEFAULT_VOLTAGE_GUARD: f64 = 0.35;

/// Solve the zero-derivative fixed point at constant voltage. Returns the
/// physical root `(R_ss, W_ss)` with `W_ss` in `(0, W0]`.
pub fn steady_state(v: f64, params: &MemcapacitorParams) -> Result<(f64, f64)> {
    steady_state_guarded(v, params, DEFAULT_VOLTAGE_GUARD)
}

/// As [`steady_state`] with an explicit blow-up guard voltage.
pub fn steady_state_guarded(
    v: f64,
    params: &MemcapacitorParams,
    guard_v: f64,
) -> Result<(f64, f64)> {
    params.validate()?;
    if !v.is_finite() {
        return Err(Error::invalid("non-finite voltage"));
    }
    if v.abs() > guard_v {
        return Err(Error::invalid(format!(
            "|v| = {} exceeds blow-up guard {guard_v} V",
            v.abs()
        )));
    }
    if v == 0.0 {
        return Ok((params.r0, params.w0));
    }
    let ee0 = params.a * params.eps * params.eps0;
    let v2 = v * v;
    // Dimensionless drives at this voltage.
    let alpha = ee0 * v2 / (2.0 * params.w0 * params.k_ew * params.r0);
    let beta = ee0 * PI * params.r0 * params.r0 * v2 / (2.0 * params.w0.powi(3) * params.k_ec);
    // h(omega) = omega^2 (1 - omega) - beta rho(omega)^2, rho = 1 + alpha/omega.
    let h = |omega: f64| -> f64 {
        let rho = 1.0 + alpha / omega;
        omega * omega * (1.0 - omega) - beta * rho * rho
    };
    // h(1) < 0; the physical (largest-W) root is the first sign change
    // scanning downward from omega = 1.
    let scan_step = 1e-3;
    let mut hi = 1.0;
    let mut lo = f64::NAN;
    let mut omega = 1.0 - scan_step;
    while omega > 1e-3 {
        if h(omega) >= 0.0 {
            lo = omega;
            break;
        }
        hi = omega;
        omega -= scan_step;
    }
    if lo.is_nan() {
        return Err(Error::SolverFailed(format!(
            "no steady state below W0 at v = {v} V (beyond fold)"
        )));
    }
    // Bisection to floating-point resolution.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if h(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let omega_ss = 0.5 * (lo + hi);
    let w_ss = omega_ss * params.w0;
    let r_ss = params.r0 + ee0 * v2 / (2.0 * w_ss * params.k_ew);
    if !(w_ss > 0.0 && w_ss <= params.w0) || !(r_ss > 0.0) {
        return Err(Error::NonPhysical(format!(
            "root R = {r_ss}, W = {w_ss} outside physical range"
        )));
    }
    // Relative residuals of both state equations must reach 1e-12.
    let ew_drive = ee0 / (2.0 * w_ss) * v2;
    let ew_rest = params.k_ew * (r_ss - params.r0);
    let res_ew = (ew_drive - ew_rest).abs() / ew_drive.abs().max(ew_rest.abs());
    let ec_drive = ee0 * PI * r_ss * r_ss / (2.0 * w_ss * w_ss) * v2;
    let ec_rest = params.k_ec * (params.w0 - w_ss);
    let res_ec = (ec_drive - ec_rest).abs() / ec_drive.abs().max(ec_rest.abs());
    if res_ew > 1e-12 || res_ec > 1e-12 {
        return Err(Error::SolverFailed(format!(
            "residuals {res_ew:.3e}/{res_ec:.3e} exceed 1e-12 at v = {v} V"
        )));
    }
    Ok((r_ss, w_ss))
}

/// Where along a pulse train the simulator emits trace samples.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplePolicy {
    /// Initial state plus every integration step.
    EveryStep,
    /// Final integration step of each measured (on-pulse) segment.
    EndOfEachPulse,
    /// Initial state plus the final step of every segment, rest gaps included.
    EndOfEachSegment,
    /// Sample-and-hold at explicit times (emitted at the first step boundary
    /// at or after each requested time). Times must be ascending.
    AtTimes(Vec<f64>),
}

/// Integration diagnostics carried on a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub w_floor_hits: usize,
}

/// Sampled trajectory of a simulation run. All arrays share one length and
/// `capacitance_f[i] == eps*eps0*area_m2[i]/thickness_m[i]` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceTrace {
    pub times_s: Vec<f64>,
    pub volts_v: Vec<f64>,
    pub radius_m: Vec<f64>,
    pub thickness_m: Vec<f64>,
    pub area_m2: Vec<f64>,
    pub capacitance_f: Vec<f64>,
    /// Rest capacitance C0 of the simulated device.
    pub rest_capacitance_f: f64,
    pub diagnostics: TraceDiagnostics,
}

impl CapacitanceTrace {
    fn with_capacity(n: usize, c0: f64) -> Self {
        CapacitanceTrace {
            times_s: Vec::with_capacity(n),
            volts_v: Vec::with_capacity(n),
            radius_m: Vec::with_capacity(n),
            thickness_m: Vec::with_capacity(n),
            area_m2: Vec::with_capacity(n),
            capacitance_f: Vec::with_capacity(n),
            rest_capacitance_f: c0,
            diagnostics: TraceDiagnostics::default(),
        }
    }

    fn push(&mut self, state: &MemcapacitorState, v: f64, params: &MemcapacitorParams) {
        let area = params.a * PI * state.r_m * state.r_m;
        self.times_s.push(state.t_s);
        self.volts_v.push(v);
        self.radius_m.push(state.r_m);
        self.thickness_m.push(state.w_m);
        self.area_m2.push(area);
        self.capacitance_f
            .push(params.eps * params.eps0 * area / state.w_m);
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    /// Normalized capacitance C/C0 per sample.
    pub fn normalized(&self) -> Vec<f64> {
        self.capacitance_f
            .iter()
            .map(|c| c / self.rest_capacitance_f)
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t_s,v_V,R_m,W_m,A_m2,C_F,C_over_C0\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                self.times_s[i],
                self.volts_v[i],
                self.radius_m[i],
                self.thickness_m[i],
                self.area_m2[i],
                self.capacitance_f[i],
                self.capacitance_f[i] / self.rest_capacitance_f,
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Integrate a pulse train from the rest state.
pub fn simulate(
    train: &PulseTrain,
    params: &MemcapacitorParams,
    dt: f64,
    policy: &SamplePolicy,
) -> Result<CapacitanceTrace> {
    simulate_from(params.rest_state(), train, params, dt, policy)
}

/// Integrate a pulse train from an explicit initial state (streaming tasks).
///
/// Segment durations are rounded to whole integration steps (at least one
/// step per segment); choose `dt` so that it divides the pulse widths.
pub fn simulate_from(
    initial: MemcapacitorState,
    train: &PulseTrain,
    params: &MemcapacitorParams,
    dt: f64,
    policy: &SamplePolicy,
) -> Result<CapacitanceTrace> {
    params.validate()?;
    initial.check()?;
    if train.segments.is_empty() {
        return Err(Error::invalid("empty pulse train"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if let SamplePolicy::AtTimes(times) = policy {
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("sample times must be ascending"));
        }
    }

    let mut trace = CapacitanceTrace::with_capacity(16, params.rest_capacitance());
    let mut state = initial;
    let mut next_time_idx = 0usize;

    match policy {
        SamplePolicy::EveryStep | SamplePolicy::EndOfEachSegment => {
            trace.push(&state, train.segments[0].amplitude_v, params);
        }
        SamplePolicy::AtTimes(times) => {
            while next_time_idx < times.len() && times[next_time_idx] <= state.t_s {
                trace.push(&state, train.segments[0].amplitude_v, params);
                next_time_idx += 1;
            }
        }
        SamplePolicy::EndOfEachPulse => {}
    }

    for seg in &train.segments {
        let n_steps = ((seg.duration_s / dt).round() as usize).max(1);
        for k in 0..n_steps {
            let stepped = step(&state, seg.amplitude_v, dt, params)?;
            state = stepped.state;
            if stepped.w_floor_hit {
                trace.diagnostics.w_floor_hits += 1;
            }
            let last = k + 1 == n_steps;
            match policy {
                SamplePolicy::EveryStep => trace.push(&state, seg.amplitude_v, params),
                SamplePolicy::EndOfEachPulse => {
                    if last && seg.measure {
                        trace.push(&state, seg.amplitude_v, params);
                    }
                }
                SamplePolicy::EndOfEachSegment => {
                    if last {
                        trace.push(&state, seg.amplitude_v, params);
                    }
                }
                SamplePolicy::AtTimes(times) => {
                    while next_time_idx < times.len()
                        && times[next_time_idx] <= state.t_s + dt * 1e-9
                    {
                        trace.push(&state, seg.amplitude_v, params);
                        next_time_idx += 1;
                    }
                }
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{PulseTrain, Segment};
    use approx::assert_relative_eq;

    fn params() -> MemcapacitorParams {
        MemcapacitorParams::calibrated_default()
    }

    fn const_train(v: f64, dur: f64) -> PulseTrain {
        PulseTrain::from_pulses(&[(v, dur)]).unwrap()
    }

    #[test]
    fn rest_is_fixed_point_at_zero_volts() {
        let p = params();
        let (dr, dw) = derivatives(&p.rest_state(), 0.0, &p).unwrap();
        assert_eq!(dr, 0.0);
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn pure_restoring_term_at_doubled_radius() {
        let p = params();
        let state = MemcapacitorState {
            r_m: 2.0 * p.r0,
            w_m: p.w0,
            t_s: 0.0,
        };
        let (dr, dw) = derivatives(&state, 0.0, &p).unwrap();
        assert_relative_eq!(dr, -p.k_ew * p.r0 / p.zeta_ew, max_relative = 1e-14);
        assert_eq!(dw, 0.0);
        assert!(dr < 0.0);
    }

    #[test]
    fn voltage_drives_growth_and_thinning() {
        let p = params();
        let (dr, dw) = derivatives(&p.rest_state(), 0.15, &p).unwrap();
        assert!(dr > 0.0);
        assert!(dw < 0.0);
    }

    #[test]
    fn derivatives_reject_bad_inputs() {
        let p = params();
        assert!(derivatives(&p.rest_state(), f64::NAN, &p).is_err());
        let bad = MemcapacitorState {
            r_m: -1.0,
            w_m: p.w0,
            t_s: 0.0,
        };
        assert!(derivatives(&bad, 0.0, &p).is_err());
    }

    #[test]
    fn capacitance_hand_value() {
        // Independent evaluation of eps*eps0*(a*pi*R^2)/W for
        // a = 1, eps = 2.2, R = 1e-4 m, W = 4e-9 m.
        let p = params();
        let state = MemcapacitorState {
            r_m: 1.0e-4,
            w_m: 4.0e-9,
            t_s: 0.0,
        };
        let expected = 2.2 * 8.854187817e-12 * (1.0 * PI * 1.0e-4 * 1.0e-4) / 4.0e-9;
        let c = capacitance(&state, &p).unwrap();
        assert_relative_eq!(c, expected, max_relative = 1e-14);
        assert_relative_eq!(c, 1.53e-10, max_relative = 5e-3);
    }

    #[test]
    fn capacitance_scaling_structure() {
        let p = params();
        let base = capacitance(&p.rest_state(), &p).unwrap();
        let double_r = MemcapacitorState {
            r_m: 2.0 * p.r0,
            w_m: p.w0,
            t_s: 0.0,
        };
        assert_relative_eq!(
            capacitance(&double_r, &p).unwrap(),
            4.0 * base,
            max_relative = 1e-14
        );
        let half_w = MemcapacitorState {
            r_m: p.r0,
            w_m: 0.5 * p.w0,
            t_s: 0.0,
        };
        assert_relative_eq!(
            capacitance(&half_w, &p).unwrap(),
            2.0 * base,
            max_relative = 1e-14
        );
        assert_relative_eq!(base, p.rest_capacitance(), max_relative = 1e-15);
    }

    #[test]
    fn step_at_rest_is_identity() {
        let p = params();
        let s = step(&p.rest_state(), 0.0, 1e-3, &p).unwrap();
        assert_relative_eq!(s.state.r_m, p.r0, max_relative = 1e-15);
        assert_relative_eq!(s.state.w_m, p.w0, max_relative = 1e-15);
        assert!(!s.w_floor_hit);
    }

    #[test]
    fn step_sign_response() {
        let p = params();
        let s = step(&p.rest_state(), 0.15, 1e-4, &p).unwrap();
        assert!(s.state.r_m > p.r0);
        assert!(s.state.w_m < p.w0);
    }

    /// Richardson check: halving dt shrinks the dt-vs-dt/2 solution gap at a
    /// fixed horizon by ~2^4.
    #[test]
    fn rk4_richardson_ratio() {
        let p = params();
        let horizon = 0.5;
        let at = |dt: f64| {
            let tr = simulate(&const_train(0.15, horizon), &p, dt, &SamplePolicy::EveryStep)
                .unwrap();
            *tr.radius_m.last().unwrap()
        };
        let r1 = at(4e-3);
        let r2 = at(2e-3);
        let r3 = at(1e-3);
        let ratio = (r1 - r2).abs() / (r2 - r3).abs();
        assert!(
            (12.0..24.0).contains(&ratio),
            "expected ~16 for order-4, got {ratio}"
        );
    }

    #[test]
    fn rk4_observed_order_at_least_3_5() {
        let p = params();
        let horizon = 0.5;
        let at = |dt: f64| {
            let tr = simulate(&const_train(0.15, horizon), &p, dt, &SamplePolicy::EveryStep)
                .unwrap();
            *tr.radius_m.last().unwrap()
        };
        let reference = at(1e-5);
        let dts = [4e-3, 2e-3, 1e-3];
        let errs: Vec<f64> = dts.iter().map(|&dt| (at(dt) - reference).abs()).collect();
        // Least-squares slope of log(err) vs log(dt).
        let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let xm = xs.iter().sum::<f64>() / 3.0;
        let ym = ys.iter().sum::<f64>() / 3.0;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(slope >= 3.5, "observed order {slope}");
    }

    #[test]
    fn steady_state_zero_volts_is_rest() {
        let p = params();
        let (r, w) = steady_state(0.0, &p).unwrap();
        assert_eq!(r, p.r0);
        assert_eq!(w, p.w0);
    }

    #[test]
    fn steady_state_moves_and_is_even_in_v() {
        let p = params();
        let (r, w) = steady_state(0.15, &p).unwrap();
        assert!(r > p.r0);
        assert!(w < p.w0);
        let (rn, wn) = steady_state(-0.15, &p).unwrap();
        assert_eq!(r, rn);
        assert_eq!(w, wn);
    }

    #[test]
    fn steady_state_guard_rejects_high_voltage() {
        let p = params();
        assert!(steady_state(0.4, &p).is_err());
    }

    #[test]
    fn steady_state_residuals_are_tight() {
        let p = params();
        // Residual check is built into the solver; reaching Ok proves < 1e-12.
        for v in [0.05, 0.1, 0.15, 0.2] {
            steady_state(v, &p).unwrap();
        }
    }

    #[test]
    fn long_horizon_simulation_matches_steady_state() {
        let p = params();
        let (r_ss, w_ss) = steady_state(0.15, &p).unwrap();
        let tr = simulate(&const_train(0.15, 6.0), &p, 1e-3, &SamplePolicy::EndOfEachPulse)
            .unwrap();
        let r_end = *tr.radius_m.last().unwrap();
        let w_end = *tr.thickness_m.last().unwrap();
        assert_relative_eq!(r_end, r_ss, max_relative = 1e-3);
        assert_relative_eq!(w_end, w_ss, max_relative = 1e-3);
    }

    #[test]
    fn calibrated_steady_state_ratio_hits_target() {
        let p = params();
        let (r, w) = steady_state(0.2, &p).unwrap();
        let ratio = capacitance_raw(r, w, &p) / p.rest_capacitance();
        assert_relative_eq!(ratio, 2.90, max_relative = 1e-3);
    }

    #[test]
    fn voltage_parity_of_traces() {
        let p = params();
        let pos = PulseTrain::from_pulses(&[(0.1, 0.2), (0.05, 0.1), (0.2, 0.3)]).unwrap();
        let neg = PulseTrain::from_pulses(&[(-0.1, 0.2), (-0.05, 0.1), (-0.2, 0.3)]).unwrap();
        let a = simulate(&pos, &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        let b = simulate(&neg, &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        assert_eq!(a.radius_m, b.radius_m);
        assert_eq!(a.thickness_m, b.thickness_m);
        assert_eq!(a.capacitance_f, b.capacitance_f);
    }

    #[test]
    fn ppf_end_of_pulse_capacitance_increases() {
        let p = params();
        let mut pulses = Vec::new();
        for _ in 0..4 {
            pulses.push(Segment {
                amplitude_v: 0.2,
                duration_s: 0.3,
                measure: true,
            });
            pulses.push(Segment {
                amplitude_v: 0.0,
                duration_s: 0.2,
                measure: false,
            });
        }
        let train = PulseTrain::new(pulses).unwrap();
        let tr = simulate(&train, &p, 1e-3, &SamplePolicy::EndOfEachPulse).unwrap();
        assert_eq!(tr.len(), 4);
        let c = &tr.capacitance_f;
        for i in 1..4 {
            assert!(c[i] > c[i - 1], "PPF violated at pulse {i}");
        }
    }

    #[test]
    fn relaxation_returns_to_rest_within_one_percent() {
        let p = params();
        let train = PulseTrain::new(vec![
            Segment {
                amplitude_v: 0.15,
                duration_s: 5.0,
                measure: false,
            },
            Segment {
                amplitude_v: 0.0,
                duration_s: 4.0,
                measure: false,
            },
        ])
        .unwrap();
        let tr = simulate(&train, &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        let c0 = tr.rest_capacitance_f;
        // first time after stimulus removal where |C - C0|/C0 <= 1%
        let t_off = 5.0;
        let mut t_1pct = None;
        for i in 0..tr.len() {
            if tr.times_s[i] > t_off && ((tr.capacitance_f[i] - c0) / c0).abs() <= 0.01 {
                t_1pct = Some(tr.times_s[i] - t_off);
                break;
            }
        }
        let t = t_1pct.expect("capacitance never relaxed to 1%");
        assert!((1.0..3.0).contains(&t), "decay time {t} s outside [1, 3] s");
    }

    #[test]
    fn fading_memory_norm_decays_monotonically() {
        let p = params();
        let train = PulseTrain::new(vec![
            Segment {
                amplitude_v: 0.2,
                duration_s: 1.0,
                measure: false,
            },
            Segment {
                amplitude_v: 0.0,
                duration_s: 3.0,
                measure: false,
            },
        ])
        .unwrap();
        let tr = simulate(&train, &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        let norm = |i: usize| {
            let dr = (tr.radius_m[i] - p.r0) / p.r0;
            let dw = (tr.thickness_m[i] - p.w0) / p.w0;
            (dr * dr + dw * dw).sqrt()
        };
        let start = tr.times_s.iter().position(|&t| t > 1.0).unwrap();
        for i in start + 1..tr.len() {
            assert!(
                norm(i) <= norm(i - 1) + 1e-15,
                "norm increased at t = {}",
                tr.times_s[i]
            );
        }
    }

    #[test]
    fn trace_satisfies_capacitance_identity_pointwise() {
        let p = params();
        let tr = simulate(&const_train(0.18, 0.5), &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        for i in 0..tr.len() {
            let expect = p.eps * p.eps0 * tr.area_m2[i] / tr.thickness_m[i];
            assert_eq!(tr.capacitance_f[i], expect);
        }
    }

    #[test]
    fn w_floor_clamp_is_flagged() {
        // Weak EC restoring force so the core collapses to the floor.
        let mut p = params();
        p.k_ec = 1.0;
        p.zeta_ec = 0.01;
        let tr = simulate(&const_train(0.2, 0.1), &p, 1e-4, &SamplePolicy::EveryStep).unwrap();
        assert!(tr.diagnostics.w_floor_hits > 0);
        let floor = p.w_floor_frac * p.w0;
        assert!(tr.thickness_m.iter().all(|&w| w >= floor));
    }

    #[test]
    fn sample_policies_emit_expected_counts() {
        let p = params();
        let train = PulseTrain::new(vec![
            Segment {
                amplitude_v: 0.1,
                duration_s: 0.01,
                measure: true,
            },
            Segment {
                amplitude_v: 0.0,
                duration_s: 0.01,
                measure: false,
            },
            Segment {
                amplitude_v: 0.2,
                duration_s: 0.01,
                measure: true,
            },
        ])
        .unwrap();
        let dt = 1e-3;
        let every = simulate(&train, &p, dt, &SamplePolicy::EveryStep).unwrap();
        assert_eq!(every.len(), 31); // initial + 30 steps
        let pulses = simulate(&train, &p, dt, &SamplePolicy::EndOfEachPulse).unwrap();
        assert_eq!(pulses.len(), 2);
        let segs = simulate(&train, &p, dt, &SamplePolicy::EndOfEachSegment).unwrap();
        assert_eq!(segs.len(), 4); // initial + 3 segment ends
        let at = simulate(
            &train,
            &p,
            dt,
            &SamplePolicy::AtTimes(vec![0.0, 0.015, 0.03]),
        )
        .unwrap();
        assert_eq!(at.len(), 3);
        assert_relative_eq!(at.times_s[1], 0.015, max_relative = 1e-9);
    }

    #[test]
    fn trace_csv_header() {
        let p = params();
        let tr = simulate(&const_train(0.1, 0.01), &p, 1e-3, &SamplePolicy::EveryStep).unwrap();
        let csv = tr.to_csv_string();
        assert!(csv.starts_with("t_s,v_V,R_m,W_m,A_m2,C_F,C_over_C0\n"));
    }

    #[test]
    fn params_toml_roundtrip() {
        let p = params();
        let text = p.to_toml_string();
        let q: MemcapacitorParams = toml::from_str(&text).unwrap();
        assert_eq!(p, q);
        // keys match the documented names
        assert!(text.contains("R0"));
        assert!(text.contains("W0"));
        assert!(text.contains("zeta_ew"));
    }

    #[test]
    fn params_validation_rejects_nonpositive() {
        let mut p = params();
        p.k_ew = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.eps0 = 8.9e-12;
        assert!(p.validate().is_err());
    }
}
