//! Second-order nonlinear system identification.
//!
//! Target recurrence:
//! `y(t) = 0.4 y(t-1) + 0.4 y(t-1) y(t-2) + 0.6 u^3(t) + 0.1` with zero
//! initial history and `u(t)` drawn uniformly from [0, 0.5]. The reservoir
//! encodes each input frame at ten pulse widths across a five-device bank
//! (50 virtual nodes per frame, device state streaming across frames) and a
//! 50-by-1 linear readout predicts `y`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::MemcapacitorParams;
use crate::encoding::{AmplitudeMap, EncoderSpec, PulseTrain};
use crate::energy::{edge_energy, EnergyReport};
use crate::error::{Error, Result};
use crate::readout::{nmse_ratio, nmse_variance, train_linear, Metrics, RegressionCfg};
use crate::reservoir::{
    build_state_matrix_streaming_with_energy, make_device_bank, DriveOutput, StateMatrix,
};
use crate::rng::substream;
use crate::tasks::{TaskReport, TaskTimer};

/// Input/target pair for one run of the recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSeries {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
}

/// Generate `n` frames of the recurrence from a seeded uniform input.
pub fn gen_second_order(n: usize, seed: u64) -> Result<SecondOrderSeries> {
    if n < 1 {
        return Err(Error::invalid("series length must be >= 1"));
    }
    let mut rng = substream(seed, "series");
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
    let mut y = Vec::with_capacity(n);
    let (mut y1, mut y2) = (0.0, 0.0); // y(t-1), y(t-2)
    for &ut in &u {
        let yt = 0.4 * y1 + 0.4 * y1 * y2 + 0.6 * ut.powi(3) + 0.1;
        y.push(yt);
        y2 = y1;
        y1 = yt;
    }
    Ok(SecondOrderSeries { u, y, seed })
}

/// Configuration of the second-order benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderConfig {
    pub seed: u64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub n_devices: usize,
    pub rel_sigma: f64,
    /// Frame widths of the ten encodings, s.
    pub frame_widths_s: Vec<f64>,
    pub duty: f64,
    pub v_min_v: f64,
    pub v_max_v: f64,
    pub dt: f64,
    pub readout: RegressionCfg,
    pub charge_factor: f64,
    /// Feature count of the linear-baseline ablation.
    pub baseline_features: usize,
}

/// Ten frame widths equally spaced over [200, 600] ms.
pub fn default_frame_widths() -> Vec<f64> {
    (0..10).map(|i| 0.2 + i as f64 * (0.4 / 9.0)).collect()
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        SecondOrderConfig {
            seed: 42,
            train_frames: 300,
            test_frames: 100,
            n_devices: 5,
            rel_sigma: 0.02,
            frame_widths_s: default_frame_widths(),
            duty: 0.5,
            v_min_v: 0.050,
            v_max_v: 0.200,
            dt: 1e-3,
            readout: RegressionCfg::default(),
            charge_factor: 1.0,
            baseline_features: 50,
        }
    }
}

impl SecondOrderConfig {
    fn encoders(&self) -> Vec<EncoderSpec> {
        self.frame_widths_s
            .iter()
            .map(|&w| {
                EncoderSpec::Amplitude(AmplitudeMap {
                    in_min: 0.0,
                    in_max: 0.5,
                    v_min_v: self.v_min_v,
                    v_max_v: self.v_max_v,
                    frame_s: w,
                    duty: self.duty,
                })
            })
            .collect()
    }
}

/// Everything a caller may want to inspect or export after a run.
#[derive(Debug, Clone)]
pub struct SecondOrderOutcome {
    pub report: TaskReport,
    pub series: SecondOrderSeries,
    pub matrix: StateMatrix,
    pub readout: crate::readout::LinearReadout,
    pub train_predictions: Vec<f64>,
    pub test_predictions: Vec<f64>,
}

fn split_metrics(
    pred_train: &[f64],
    y_train: &[f64],
    pred_test: &[f64],
    y_test: &[f64],
) -> Result<(Metrics, Metrics)> {
    let train = Metrics {
        nmse_ratio: Some(nmse_ratio(pred_train, y_train)?),
        nmse_variance: Some(nmse_variance(pred_train, y_train)?),
        ..Default::default()
    };
    let test = Metrics {
        nmse_ratio: Some(nmse_ratio(pred_test, y_test)?),
        nmse_variance: Some(nmse_variance(pred_test, y_test)?),
        ..Default::default()
    };
    Ok((train, test))
}

/// Charging energy of the test-frame window of one streaming run.
fn test_window_energy(
    train: &PulseTrain,
    out: &DriveOutput,
    n_frames: usize,
    train_frames: usize,
    charge_factor: f64,
) -> Result<EnergyReport> {
    let segs_per_frame = train.segments.len() / n_frames;
    let start_seg = train_frames * segs_per_frame;
    let test_train = PulseTrain::new(train.segments[start_seg..].to_vec())?;
    // The frame before the test window ends in a rest segment (duty < 1), so
    // the 0 V pre-train level assumed by edge_energy is exact.
    let initial_c = out.segment_end_caps[start_seg - 1];
    edge_energy(
        &test_train,
        initial_c,
        &out.segment_end_caps[start_seg..],
        charge_factor,
    )
}

/// Run the memcapacitive second-order benchmark.
pub fn run_second_order_task(
    cfg: &SecondOrderConfig,
    base_device: &MemcapacitorParams,
) -> Result<SecondOrderOutcome> {
    if cfg.duty >= 1.0 {
        return Err(Error::Config(
            "second-order task requires duty < 1 (rest gap separates frames)".into(),
        ));
    }
    let timer = TaskTimer::start();
    let n = cfg.train_frames + cfg.test_frames;
    let series = gen_second_order(n, cfg.seed)?;
    let bank = make_device_bank(base_device, cfg.n_devices, cfg.rel_sigma, cfg.seed)?;
    let encoders = cfg.encoders();
    let (matrix, runs) =
        build_state_matrix_streaming_with_energy(&series.u, &bank, &encoders, cfg.dt)?;
    matrix.validate_positive(1e-6)?;

    let train_idx: Vec<usize> = (0..cfg.train_frames).collect();
    let test_idx: Vec<usize> = (cfg.train_frames..n).collect();
    let x_train = matrix.select_rows(&train_idx)?;
    let x_test = matrix.select_rows(&test_idx)?;
    let y_train = &series.y[..cfg.train_frames];
    let y_test = &series.y[cfg.train_frames..];

    let readout = train_linear(&x_train, y_train, &cfg.readout)?;
    let train_predictions = readout.predict_scalar(&x_train)?;
    let test_predictions = readout.predict_scalar(&x_test)?;
    let (train_metrics, test_metrics) =
        split_metrics(&train_predictions, y_train, &test_predictions, y_test)?;

    let energy_reports: Vec<EnergyReport> = runs
        .iter()
        .map(|(train, out)| {
            test_window_energy(train, out, n, cfg.train_frames, cfg.charge_factor)
        })
        .collect::<Result<_>>()?;
    let energy = EnergyReport::combine(&energy_reports);

    let report = TaskReport {
        task: "second-order".into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        metrics: test_metrics,
        train_metrics: Some(train_metrics),
        reservoir_energy_j: energy.total_energy_j,
        energy: Some(energy),
        wall_time_s: timer.seconds(),
    };
    Ok(SecondOrderOutcome {
        report,
        series,
        matrix,
        readout,
        train_predictions,
        test_predictions,
    })
}

/// Ablation baseline: the reservoir is replaced by a random linear expansion
/// `x(k) = r * u(k)` (elementwise against a seeded random vector), so no
/// nonlinear transformation happens before the readout.
pub fn run_linear_baseline(cfg: &SecondOrderConfig) -> Result<SecondOrderOutcome> {
    let timer = TaskTimer::start();
    let n = cfg.train_frames + cfg.test_frames;
    let series = gen_second_order(n, cfg.seed)?;
    let mut rng = substream(cfg.seed, "baseline");
    let r: Vec<f64> = (0..cfg.baseline_features)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let rows: Vec<Vec<f64>> = series
        .u
        .iter()
        .map(|&u| r.iter().map(|ri| ri * u).collect())
        .collect();
    let col_names = (0..cfg.baseline_features)
        .map(|i| format!("r{i}"))
        .collect();
    let matrix = StateMatrix::from_rows(rows, col_names)?;

    let train_idx: Vec<usize> = (0..cfg.train_frames).collect();
    let test_idx: Vec<usize> = (cfg.train_frames..n).collect();
    let x_train = matrix.select_rows(&train_idx)?;
    let x_test = matrix.select_rows(&test_idx)?;
    let y_train = &series.y[..cfg.train_frames];
    let y_test = &series.y[cfg.train_frames..];

    // Rank-one features leave the normal matrix singular; ensure ridge.
    let mut readout_cfg = cfg.readout;
    if readout_cfg.ridge_lambda <= 0.0 {
        readout_cfg.ridge_lambda = 1e-6;
    }
    let readout = train_linear(&x_train, y_train, &readout_cfg)?;
    let train_predictions = readout.predict_scalar(&x_train)?;
    let test_predictions = readout.predict_scalar(&x_test)?;
    let (train_metrics, test_metrics) =
        split_metrics(&train_predictions, y_train, &test_predictions, y_test)?;

    let report = TaskReport {
        task: "linear-baseline".into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        metrics: test_metrics,
        train_metrics: Some(train_metrics),
        reservoir_energy_j: 0.0,
        energy: None,
        wall_time_s: timer.seconds(),
    };
    Ok(SecondOrderOutcome {
        report,
        series,
        matrix,
        readout,
        train_predictions,
        test_predictions,
    })
}
