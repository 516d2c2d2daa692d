//! Reservoir layer: drives simulated memcapacitors with encoded pulse trains
//! and extracts virtual-node features into a state matrix.
//!
//! The reservoir state is the normalized capacitance C/C0 sampled at the end
//! of each measured pulse. Feature vectors concatenate runs across all
//! (device, encoding) pairs in a fixed, documented order: device-major,
//! encoding-minor, node index last — column `d<device>_e<encoding>_n<node>`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::{step, MemcapacitorParams, MemcapacitorState};
use crate::encoding::{EncoderSpec, PulseTrain};
use crate::error::{Error, Result};
use crate::rng::substream;

/// A set of nominally identical devices with fabrication spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceBank {
    pub devices: Vec<MemcapacitorParams>,
    pub seed: u64,
    pub rel_sigma: f64,
}

/// Build `n` parameter sets from a base device. `R0` and `W0` are each
/// multiplied by an independent factor `1 + rel_sigma * g` with `g` drawn
/// from a standard normal truncated to +-3 sigma; other fields are copied.
pub fn make_device_bank(
    base: &MemcapacitorParams,
    n: usize,
    rel_sigma: f64,
    seed: u64,
) -> Result<DeviceBank> {
    base.validate()?;
    if n < 1 {
        return Err(Error::invalid("bank needs at least one device"));
    }
    if !(rel_sigma >= 0.0) || rel_sigma.is_nan() {
        return Err(Error::invalid("rel_sigma must be >= 0"));
    }
    let mut rng = substream(seed, "bank");
    let mut truncated_normal = || -> f64 {
        loop {
            let g: f64 = rng.sample(StandardNormal);
            if g.abs() <= 3.0 {
                return g;
            }
        }
    };
    let mut devices = Vec::with_capacity(n);
    for i in 0..n {
        let mut d = *base;
        d.r0 *= 1.0 + rel_sigma * truncated_normal();
        d.w0 *= 1.0 + rel_sigma * truncated_normal();
        d.validate().map_err(|e| {
            Error::invalid(format!("device {i} perturbation produced invalid params: {e}"))
        })?;
        devices.push(d);
    }
    Ok(DeviceBank {
        devices,
        seed,
        rel_sigma,
    })
}

/// Optional zero-mean Gaussian perturbation applied to sampled C/C0 values.
/// Off by default (`sigma = 0`).
#[derive(Debug, Clone)]
pub struct NoiseHook {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl NoiseHook {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseHook {
            sigma,
            rng: substream(seed, "noise"),
        }
    }

    fn perturb(&mut self, x: f64) -> f64 {
        if self.sigma == 0.0 {
            x
        } else {
            let g: f64 = self.rng.sample(StandardNormal);
            x + self.sigma * g
        }
    }
}

/// Output of driving one pulse train through one device.
#[derive(Debug, Clone)]
pub struct DriveOutput {
    /// C/C0 at the end of each measured pulse.
    pub features: Vec<f64>,
    /// Capacitance (F) at the end of every segment, rest gaps included;
    /// used for edge-energy accounting.
    pub segment_end_caps: Vec<f64>,
    pub w_floor_hits: usize,
}

/// Owns one device's integration state across successive trains.
#[derive(Debug, Clone)]
pub struct ReservoirDriver {
    params: MemcapacitorParams,
    dt: f64,
    state: MemcapacitorState,
    c0: f64,
    noise: Option<NoiseHook>,
}

impl ReservoirDriver {
    pub fn new(params: MemcapacitorParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(ReservoirDriver {
            state: params.rest_state(),
            c0: params.rest_capacitance(),
            params,
            dt,
            noise: None,
        })
    }

    pub fn with_noise(mut self, hook: NoiseHook) -> Self {
        self.noise = Some(hook);
        self
    }

    pub fn params(&self) -> &MemcapacitorParams {
        &self.params
    }

    pub fn rest_capacitance(&self) -> f64 {
        self.c0
    }

    pub fn state(&self) -> &MemcapacitorState {
        &self.state
    }

    /// Capacitance at the current state, F.
    pub fn current_capacitance(&self) -> f64 {
        crate::device::capacitance_raw(self.state.r_m, self.state.w_m, &self.params)
    }

    /// Return the device to rest (streaming state cleared; noise stream kept).
    pub fn reset(&mut self) {
        self.state = self.params.rest_state();
    }

    /// Integrate a train from the current state, sampling C/C0 at the end of
    /// each measured pulse. State persists for the next call.
    pub fn drive(&mut self, train: &PulseTrain) -> Result<DriveOutput> {
        let mut features = Vec::with_capacity(train.measured_count());
        let mut segment_end_caps = Vec::with_capacity(train.segments.len());
        let mut w_floor_hits = 0usize;
        for seg in &train.segments {
            let n_steps = ((seg.duration_s / self.dt).round() as usize).max(1);
            for _ in 0..n_steps {
                let stepped = step(&self.state, seg.amplitude_v, self.dt, &self.params)?;
                self.state = stepped.state;
                if stepped.w_floor_hit {
                    w_floor_hits += 1;
                }
            }
            let c = self.current_capacitance();
            segment_end_caps.push(c);
            if seg.measure {
                let mut value = c / self.c0;
                if let Some(noise) = self.noise.as_mut() {
                    value = noise.perturb(value);
                }
                features.push(value);
            }
        }
        Ok(DriveOutput {
            features,
            segment_end_caps,
            w_floor_hits,
        })
    }
}

/// Drive a train through a fresh device at rest; returns C/C0 at the end of
/// each measured pulse.
pub fn run_reservoir(
    train: &PulseTrain,
    params: &MemcapacitorParams,
    dt: f64,
) -> Result<Vec<f64>> {
    let mut driver = ReservoirDriver::new(*params, dt)?;
    Ok(driver.drive(train)?.features)
}

/// Keep the sample at the end of each interval of `every_k` steps.
/// The sequence length must be divisible by `every_k`.
pub fn select_virtual_nodes(seq: &[f64], every_k: usize) -> Result<Vec<f64>> {
    if every_k == 0 {
        return Err(Error::invalid("every_k must be >= 1"));
    }
    if seq.len() % every_k != 0 {
        return Err(Error::invalid(format!(
            "sequence length {} not divisible by {every_k}",
            seq.len()
        )));
    }
    Ok(seq
        .iter()
        .skip(every_k - 1)
        .step_by(every_k)
        .copied()
        .collect())
}

/// Rectangular integration of consecutive windows: each feature is the sum of
/// `window` samples times the sample period. A trailing remainder shorter
/// than `window` is dropped; its length is returned for diagnostics.
pub fn integrate_features(
    seq: &[f64],
    window: usize,
    period_s: f64,
) -> Result<(Vec<f64>, usize)> {
    if window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    if !(period_s > 0.0) {
        return Err(Error::invalid("sample period must be positive"));
    }
    if seq.len() < window {
        return Err(Error::invalid(format!(
            "sequence length {} shorter than window {window}",
            seq.len()
        )));
    }
    let n = seq.len() / window;
    let dropped = seq.len() - n * window;
    let features = (0..n)
        .map(|i| seq[i * window..(i + 1) * window].iter().sum::<f64>() * period_s)
        .collect();
    Ok((features, dropped))
}

/// How raw C/C0 samples become feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NodeSelection {
    /// Every measured sample is a node.
    All,
    /// End-of-interval election every `k` samples.
    EveryK { k: usize },
    /// Windowed rectangular integration.
    Integrate { window: usize, period_s: f64 },
}

impl NodeSelection {
    fn apply(&self, seq: &[f64]) -> Result<Vec<f64>> {
        match self {
            NodeSelection::All => Ok(seq.to_vec()),
            NodeSelection::EveryK { k } => select_virtual_nodes(seq, *k),
            NodeSelection::Integrate { window, period_s } => {
                Ok(integrate_features(seq, *window, *period_s)?.0)
            }
        }
    }
}

/// Examples-by-features matrix fed to the readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    /// Row-major data, `rows x cols`.
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub col_names: Vec<String>,
    pub row_labels: Option<Vec<f64>>,
}

impl StateMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, col_names: Vec<String>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        if col_names.len() != cols {
            return Err(Error::Dimension(format!(
                "{} column names for {cols} columns",
                col_names.len()
            )));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite state matrix entry"));
        }
        Ok(StateMatrix {
            data,
            rows: n,
            cols,
            col_names,
            row_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::Dimension("label count != row count".into()));
        }
        self.row_labels = Some(labels);
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Check the raw-sampling floor: C/C0 entries must stay strictly positive.
    pub fn validate_positive(&self, floor: f64) -> Result<()> {
        if let Some(bad) = self.data.iter().find(|&&x| x < floor) {
            return Err(Error::invalid(format!(
                "state entry {bad} below positive floor {floor}"
            )));
        }
        Ok(())
    }

    /// Select a subset of rows (e.g. a train/test split), labels included.
    pub fn select_rows(&self, idx: &[usize]) -> Result<StateMatrix> {
        let mut rows = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.rows {
                return Err(Error::Dimension(format!("row {i} out of {}", self.rows)));
            }
            rows.push(self.row(i).to_vec());
        }
        let mut out = StateMatrix::from_rows(rows, self.col_names.clone())?;
        if let Some(labels) = &self.row_labels {
            out.row_labels = Some(idx.iter().map(|&i| labels[i]).collect());
        }
        Ok(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if self.row_labels.is_some() {
            out.push_str("label,");
        }
        out.push_str(&self.col_names.join(","));
        out.push('\n');
        for i in 0..self.rows {
            if let Some(labels) = &self.row_labels {
                out.push_str(&format!("{},", labels[i]));
            }
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:.12e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty state matrix CSV"))?;
        let names: Vec<&str> = header.split(',').collect();
        let labelled = names.first() == Some(&"label");
        let col_names: Vec<String> = names
            .iter()
            .skip(if labelled { 1 } else { 0 })
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            if labelled {
                let lab = fields
                    .next()
                    .ok_or_else(|| Error::invalid(format!("line {}: missing label", lineno + 2)))?;
                labels.push(lab.parse::<f64>().map_err(|e| {
                    Error::invalid(format!("line {}: bad label: {e}", lineno + 2))
                })?);
            }
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 2)))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let mut out = StateMatrix::from_rows(rows, col_names)?;
        if labelled {
            out.row_labels = Some(labels);
        }
        Ok(out)
    }
}

/// Canonical column name for (device, encoding, node).
pub fn column_name(device: usize, encoding: usize, node: usize) -> String {
    format!("d{device}_e{encoding}_n{node}")
}

/// Build a state matrix for independent (non-streaming) examples: each
/// example's scalar sequence is encoded by every encoder and run from rest on
/// every device; features concatenate device-major, encoding-minor.
pub fn build_state_matrix(
    examples: &[Vec<f64>],
    bank: &DeviceBank,
    encoders: &[EncoderSpec],
    nodes: &NodeSelection,
    dt: f64,
) -> Result<StateMatrix> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    if encoders.is_empty() {
        return Err(Error::invalid("no encoders"));
    }
    let mut rows = Vec::with_capacity(examples.len());
    let mut col_names: Option<Vec<String>> = None;
    for example in examples {
        let mut row = Vec::new();
        let mut names = Vec::new();
        for (di, dev) in bank.devices.iter().enumerate() {
            for (ei, enc) in encoders.iter().enumerate() {
                let train = enc.encode(example)?;
                let raw = run_reservoir(&train, dev, dt)?;
                let feats = nodes.apply(&raw)?;
                for (ni, f) in feats.iter().enumerate() {
                    row.push(*f);
                    if col_names.is_none() {
                        names.push(column_name(di, ei, ni));
                    }
                }
            }
        }
        if col_names.is_none() {
            col_names = Some(names);
        }
        rows.push(row);
    }
    StateMatrix::from_rows(rows, col_names.unwrap())
}

/// Build a state matrix for a streaming scalar sequence: each (device,
/// encoding) pair is one continuous run over all frames (state persists),
/// contributing one column; rows are time frames.
pub fn build_state_matrix_streaming(
    frames: &[f64],
    bank: &DeviceBank,
    encoders: &[EncoderSpec],
    dt: f64,
) -> Result<StateMatrix> {
    let (matrix, _) = build_state_matrix_streaming_with_energy(frames, bank, encoders, dt)?;
    Ok(matrix)
}

/// Streaming state matrix plus per-(device, encoding) drive outputs for
/// energy accounting.
pub fn build_state_matrix_streaming_with_energy(
    frames: &[f64],
    bank: &DeviceBank,
    encoders: &[EncoderSpec],
    dt: f64,
) -> Result<(StateMatrix, Vec<(PulseTrain, DriveOutput)>)> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames"));
    }
    if encoders.is_empty() {
        return Err(Error::invalid("no encoders"));
    }
    let n = frames.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut col_names = Vec::new();
    let mut runs = Vec::new();
    for (di, dev) in bank.devices.iter().enumerate() {
        for (ei, enc) in encoders.iter().enumerate() {
            let train = enc.encode(frames)?;
            let mut driver = ReservoirDriver::new(*dev, dt)?;
            let out = driver.drive(&train)?;
            if out.features.len() != n {
                return Err(Error::Dimension(format!(
                    "encoder {ei} produced {} features for {n} frames",
                    out.features.len()
                )));
            }
            columns.push(out.features.clone());
            col_names.push(column_name(di, ei, 0));
            runs.push((train, out));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    Ok((StateMatrix::from_rows(rows, col_names)?, runs))
}
