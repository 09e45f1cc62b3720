//! Glue between dataset records and the two trained estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::{train, TrainedNetwork, TrainingConfig, TrainingData};
use super::Head;
use crate::dataset::DatasetRecord;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Noise spectrum from a clean decay.
    #[default]
    Spectrum,
    /// Clean decay from a noisy one, predicted as `χ = −ln C`.
    Denoise,
}

impl Task {
    pub fn head(self) -> Head {
        Head::Exponential
    }

    pub fn default_config(self) -> TrainingConfig {
        match self {
            Task::Spectrum => TrainingConfig::spectrum_estimator(),
            Task::Denoise => TrainingConfig::denoiser(),
        }
    }

    /// Raw network input and regression target of one record.
    pub fn example(self, r: &DatasetRecord) -> Result<(&[f64], Vec<f64>)> {
        match self {
            Task::Spectrum => Ok((&r.coherence, r.spectrum.clone())),
            Task::Denoise => {
                let noisy = r
                    .noisy_coherence
                    .as_deref()
                    .ok_or_else(|| invalid(format!("record {} has no noisy coherence; run the noise step first", r.id)))?;
                Ok((noisy, r.coherence.iter().map(|c| -c.ln()).collect()))
            }
        }
    }

    /// Curve the network reads at inference time.
    pub fn input(self, r: &DatasetRecord) -> &[f64] {
        match self {
            Task::Spectrum => &r.coherence,
            Task::Denoise => r.noisy_coherence.as_deref().unwrap_or(&r.coherence),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Spectrum => "spectrum",
            Task::Denoise => "denoise",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrum" => Ok(Task::Spectrum),
            "denoise" => Ok(Task::Denoise),
            _ => Err(invalid(format!("unknown task {s:?} (expected spectrum or denoise)"))),
        }
    }
}

pub fn task_data(records: &[DatasetRecord], cfg: &TrainingConfig) -> Result<TrainingData> {
    let first = records.first().ok_or_else(|| Error::EmptyTranche("no records".into()))?;
    let (x, y) = cfg.task.example(first)?;
    let mut data = TrainingData::new(x.len(), y.len());
    for r in records {
        let (x, y) = cfg.task.example(r)?;
        data.push(x, &y, cfg.input)?;
    }
    Ok(data)
}

/// Trains the network for `cfg.task` on record sets.
pub fn train_records(train_set: &[DatasetRecord], validation: &[DatasetRecord], cfg: &TrainingConfig) -> Result<TrainedNetwork> {
    train(&task_data(train_set, cfg)?, &task_data(validation, cfg)?, cfg.task.head(), cfg)
}

/// Copies of `records` carrying the network's estimate: the spectrum for
/// the spectrum task, the cleaned coherence (noisy copy dropped) for the
/// denoiser.
pub fn predict_records(net: &TrainedNetwork, records: &[DatasetRecord]) -> Result<Vec<DatasetRecord>> {
    let task = net.config.task;
    let curves: Vec<Vec<f64>> = records.iter().map(|r| task.input(r).to_vec()).collect();
    let out = net.infer(&curves)?;
    records
        .iter()
        .zip(out)
        .map(|(r, y)| {
            let mut p = r.clone();
            match task {
                Task::Spectrum => {
                    if y.len() != r.spectrum.len() {
                        return Err(Error::GridMismatch(format!(
                            "network emits {} spectrum values, record {} has {}",
                            y.len(),
                            r.id,
                            r.spectrum.len()
                        )));
                    }
                    p.spectrum = y;
                }
                Task::Denoise => {
                    if y.len() != r.coherence.len() {
                        return Err(Error::GridMismatch(format!(
                            "network emits {} points, record {} has {}",
                            y.len(),
                            r.id,
                            r.coherence.len()
                        )));
                    }
                    p.coherence = y.iter().map(|chi| (-chi).exp().max(f64::MIN_POSITIVE)).collect();
                    p.noisy_coherence = None;
                }
            }
            Ok(p)
        })
        .collect()
}
