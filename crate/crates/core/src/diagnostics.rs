//! Per-epoch aggregation of optimizer diagnostics and cross-seed summaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::StepDiagnostics;

/// Running means of step diagnostics and the training loss within one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochAccumulator {
    steps: usize,
    alpha: f64,
    update_norm: f64,
    grad_norm: f64,
    gain: f64,
    eta: f64,
    saturation: f64,
    loss_sum: f64,
    examples: usize,
}

impl EpochAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Fold one optimizer step into the running means.
    pub fn record_step(&mut self, d: &StepDiagnostics) {
        self.steps += 1;
        let k = self.steps as f64;
        let upd = |mean: &mut f64, x: f64| *mean += (x - *mean) / k;
        upd(&mut self.alpha, d.mean_alpha);
        upd(&mut self.update_norm, d.update_norm);
        upd(&mut self.grad_norm, d.grad_norm);
        upd(&mut self.gain, d.gain);
        upd(&mut self.eta, d.eta_effective);
        upd(&mut self.saturation, d.alpha_saturation_frac);
    }

    /// Add a mini-batch mean loss, weighted by its size.
    pub fn record_loss(&mut self, batch_loss: f64, batch_size: usize) {
        self.loss_sum += batch_loss * batch_size as f64;
        self.examples += batch_size;
    }

    pub fn mean_alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mean_update_norm(&self) -> f64 {
        self.update_norm
    }

    pub fn mean_grad_norm(&self) -> f64 {
        self.grad_norm
    }

    pub fn mean_gain(&self) -> f64 {
        self.gain
    }

    pub fn mean_eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha_saturation_frac(&self) -> f64 {
        self.saturation
    }

    pub fn train_loss(&self) -> f64 {
        if self.examples == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.examples as f64
        }
    }

    /// Close the epoch with its test-set evaluation.
    pub fn finish(&self, epoch: usize, test_loss: f64, test_accuracy: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: self.train_loss(),
            test_loss,
            test_accuracy,
            mean_alpha: self.alpha,
            mean_update_norm: self.update_norm,
            mean_grad_norm: self.grad_norm,
            mean_gain: self.gain,
            mean_eta: self.eta,
            alpha_saturation_frac: self.saturation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub mean_alpha: f64,
    pub mean_update_norm: f64,
    pub mean_grad_norm: f64,
    pub mean_gain: f64,
    pub mean_eta: f64,
    pub alpha_saturation_frac: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Completed,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "COMPLETED",
            RunStatus::Diverged => "DIVERGED",
        }
    }
}

/// One (optimizer, learning rate, seed, fraction) training run.
///
/// A diverged run keeps its completed epochs plus a final record for the epoch
/// in which it diverged, whose test metrics are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub optimizer: String,
    pub lr: f64,
    pub seed: u64,
    pub data_fraction: f64,
    pub status: RunStatus,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    fn completed_epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|e| e.test_accuracy.is_finite())
    }

    /// Test accuracy after the last epoch, NaN if the run diverged.
    pub fn final_accuracy(&self) -> f64 {
        match (self.status, self.epochs.last()) {
            (RunStatus::Completed, Some(e)) => e.test_accuracy,
            _ => f64::NAN,
        }
    }

    /// Best epoch-end test accuracy seen before any divergence.
    pub fn best_accuracy(&self) -> f64 {
        self.completed_epochs()
            .map(|e| e.test_accuracy)
            .fold(f64::NAN, f64::max)
    }
}

/// Mean and sample standard deviation; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    if sorted.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    // Shifted about the smallest value so identical inputs give an exact mean.
    let base = sorted[0];
    let mean = base + sorted.iter().map(|x| x - base).sum::<f64>() / n;
    if sorted.len() == 1 {
        return (mean, 0.0);
    }
    let var = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub optimizer: String,
    pub lr: f64,
    pub data_fraction: f64,
    pub seeds: Vec<u64>,
    pub diverged: usize,
    #[serde(deserialize_with = "nan_if_null")]
    pub final_accuracy_mean: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub final_accuracy_std: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub best_accuracy_mean: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub best_accuracy_std: f64,
    /// Difference of means against the reference optimizer at the same lr and fraction.
    pub final_delta_vs_reference: Option<f64>,
    pub best_delta_vs_reference: Option<f64>,
}

/// JSON has no NaN; serde_json writes it as `null`.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub reference: Option<String>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, optimizer: &str, lr: f64, fraction: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.optimizer == optimizer && r.lr == lr && r.data_fraction == fraction)
    }
}

/// Grouping key ordered by optimizer name, then learning rate, then fraction.
#[derive(Clone, Debug, PartialEq)]
struct GroupKey {
    optimizer: String,
    lr: f64,
    fraction: f64,
}

impl Eq for GroupKey {}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.optimizer
            .cmp(&other.optimizer)
            .then(self.lr.total_cmp(&other.lr))
            .then(self.fraction.total_cmp(&other.fraction))
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn group(records: &[RunRecord]) -> BTreeMap<GroupKey, Vec<&RunRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = GroupKey {
            optimizer: r.optimizer.clone(),
            lr: r.lr,
            fraction: r.data_fraction,
        };
        groups.entry(key).or_default().push(r);
    }
    for runs in groups.values_mut() {
        runs.sort_by_key(|r| r.seed);
    }
    groups
}

/// Mean ± sample std of final and best accuracy across seeds, per
/// (optimizer, lr, fraction), with deltas against `reference`.
pub fn summarize_seeds(records: &[RunRecord], reference: Option<&str>) -> Result<SummaryTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows: Vec<SummaryRow> = group(records)
        .into_iter()
        .map(|(key, runs)| {
            let finals: Vec<f64> = runs.iter().map(|r| r.final_accuracy()).collect();
            let bests: Vec<f64> = runs.iter().map(|r| r.best_accuracy()).collect();
            let (fm, fs) = mean_std(&finals);
            let (bm, bs) = mean_std(&bests);
            SummaryRow {
                optimizer: key.optimizer,
                lr: key.lr,
                data_fraction: key.fraction,
                seeds: runs.iter().map(|r| r.seed).collect(),
                diverged: runs.iter().filter(|r| r.status == RunStatus::Diverged).count(),
                final_accuracy_mean: fm,
                final_accuracy_std: fs,
                best_accuracy_mean: bm,
                best_accuracy_std: bs,
                final_delta_vs_reference: None,
                best_delta_vs_reference: None,
            }
        })
        .collect();

    if let Some(name) = reference {
        let refs: Vec<(f64, f64, f64, f64)> = rows
            .iter()
            .filter(|r| r.optimizer == name)
            .map(|r| (r.lr, r.data_fraction, r.final_accuracy_mean, r.best_accuracy_mean))
            .collect();
        for row in &mut rows {
            if let Some(&(_, _, f, b)) = refs
                .iter()
                .find(|(lr, frac, _, _)| *lr == row.lr && *frac == row.data_fraction)
            {
                row.final_delta_vs_reference = Some(row.final_accuracy_mean - f);
                row.best_delta_vs_reference = Some(row.best_accuracy_mean - b);
            }
        }
    }
    Ok(SummaryTable {
        reference: reference.map(str::to_string),
        rows,
    })
}

/// Epoch-wise test accuracy across seeds for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub optimizer: String,
    pub lr: f64,
    pub data_fraction: f64,
    pub seeds: usize,
    /// `(epoch, mean, sample std)`; epochs any seed failed to complete are dropped.
    pub points: Vec<(usize, f64, f64)>,
}

pub fn accuracy_curves(records: &[RunRecord]) -> Vec<Curve> {
    group(records)
        .into_iter()
        .map(|(key, runs)| {
            let max_epochs = runs.iter().map(|r| r.epochs.len()).max().unwrap_or(0);
            let points = (0..max_epochs)
                .filter_map(|e| {
                    let vals: Option<Vec<f64>> = runs
                        .iter()
                        .map(|r| {
                            r.epochs
                                .get(e)
                                .map(|rec| rec.test_accuracy)
                                .filter(|a| a.is_finite())
                        })
                        .collect();
                    vals.map(|v| {
                        let (m, s) = mean_std(&v);
                        (e, m, s)
                    })
                })
                .collect();
            Curve {
                optimizer: key.optimizer,
                lr: key.lr,
                data_fraction: key.fraction,
                seeds: runs.len(),
                points,
            }
        })
        .collect()
}
