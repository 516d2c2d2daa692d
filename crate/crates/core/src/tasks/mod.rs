//! End-to-end benchmark pipelines.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::readout::Metrics;

pub mod second_order;

pub use second_order::{
    gen_second_order, run_linear_baseline, run_second_order_task, SecondOrderConfig,
    SecondOrderSeries,
};

/// Provenance-carrying result of one benchmark run. Identical config and
/// seed reproduce the report byte-for-byte except for `wall_time_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub seed: u64,
    /// Full resolved configuration snapshot.
    pub config: serde_json::Value,
    /// Test-split metrics.
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_metrics: Option<Metrics>,
    /// Total charging energy over the test-set reservoir runs, J.
    pub reservoir_energy_j: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyReport>,
    pub wall_time_s: f64,
}

impl TaskReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the wall time zeroed, for reproducibility comparisons.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time_s = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_json().as_bytes())
    }
}

/// Wall-clock timer for reports.
pub(crate) struct TaskTimer(Instant);

impl TaskTimer {
    pub fn start() -> Self {
        TaskTimer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Seeded stratified split into (train, test) index sets, both ascending.
/// Every class keeps at least one example on each side when it has two or
/// more; no index appears on both sides.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::invalid("no examples to split"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in classes {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(rng);
        let n = idx.len();
        let mut n_test = (test_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        } else {
            n_test = 0;
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn split_is_disjoint_stratified_and_seeded() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let mut rng = substream(3, "splits");
        let (train, test) = stratified_split(&labels, 0.2, &mut rng).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        for i in &test {
            assert!(!train.contains(i));
        }
        // per-class test counts
        for class in 0..4 {
            let count = test.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(count, 5);
        }
        let mut rng2 = substream(3, "splits");
        let (train2, test2) = stratified_split(&labels, 0.2, &mut rng2).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let mut rng3 = substream(4, "splits");
        let (_, test3) = stratified_split(&labels, 0.2, &mut rng3).unwrap();
        assert_ne!(test, test3);
    }

    #[test]
    fn split_keeps_one_example_per_side() {
        let labels = vec![0, 0, 1, 1];
        let mut rng = substream(1, "splits");
        let (train, test) = stratified_split(&labels, 0.9, &mut rng).unwrap();
        for class in 0..2 {
            assert!(train.iter().any(|&i| labels[i] == class));
            assert!(test.iter().any(|&i| labels[i] == class));
        }
    }
}
