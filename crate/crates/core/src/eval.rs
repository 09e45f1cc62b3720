//! Error metrics, the stretched-exponential baseline fit and error reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRecord;
use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::forward::{CoherenceCurve, StretchedExpParams};
use crate::io_util::write_atomic;
use crate::nn::mape_loss;
use crate::spectrum::NoiseSpectrum;

fn same_axis(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{what}: {} vs {} points", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-12 * x.abs().max(y.abs()) {
            return Err(Error::GridMismatch(format!("{what}: {x} vs {y}")));
        }
    }
    Ok(())
}

/// MAPE (%) between spectra sampled on the same grid.
pub fn spectrum_error(pred: &NoiseSpectrum, truth: &NoiseSpectrum) -> Result<f64> {
    same_axis(pred.grid.omega(), truth.grid.omega(), "frequency grids differ")?;
    mape_loss(&pred.values, &truth.values)
}

fn log_values(c: &[f64]) -> Result<Vec<f64>> {
    c.iter()
        .map(|&v| if v > 0.0 { Ok(v.ln()) } else { Err(Error::Domain(format!("log error needs C > 0, got {v}"))) })
        .collect()
}

/// MAPE (%) between `ln C` values of two curves on the same time grid.
pub fn log_curve_error(pred: &CoherenceCurve, truth: &CoherenceCurve) -> Result<f64> {
    same_axis(pred.grid.times(), truth.grid.times(), "time grids differ")?;
    mape_loss(&log_values(&pred.coherence)?, &log_values(&truth.coherence)?)
}

#[derive(Debug, Clone)]
pub struct StretchedFit {
    pub params: StretchedExpParams,
    pub curve: CoherenceCurve,
    /// RMS of `C_fit − C_data`.
    pub residual: f64,
}

struct StretchedProblem<'a> {
    times: &'a [f64],
    data: &'a [f64],
}

impl LeastSquares for StretchedProblem<'_> {
    fn residual_count(&self) -> usize {
        self.times.len()
    }
    // x = [ln t2, p]
    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let t2 = x[0].exp();
        for (i, (&t, &c)) in self.times.iter().zip(self.data).enumerate() {
            out[i] = (-(t / t2).powf(x[1])).exp() - c;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let t2 = x[0].exp();
        for (i, &t) in self.times.iter().enumerate() {
            let u = (t / t2).powf(x[1]);
            let e = (-u).exp();
            out[2 * i] = e * u * x[1];
            out[2 * i + 1] = -e * u * (t / t2).ln();
        }
    }
}

/// Seed from a straight line through `ln(−ln C)` against `ln t`, using the
/// points where the decay is resolvable.
fn loglog_seed(times: &[f64], data: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(data)
        .filter(|(_, &c)| c > 0.02 && c < 0.98)
        .map(|(&t, &c)| (t.ln(), (-c.ln()).ln()))
        .collect();
    let fallback = {
        // first 1/e crossing, else the middle of the grid
        let i = data.iter().position(|&c| c < (-1.0f64).exp()).unwrap_or(times.len() / 2);
        (times[i].ln(), 1.0)
    };
    if pts.len() < 2 {
        return fallback;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return fallback;
    }
    let p = (sxy / sxx).clamp(0.2, 6.0);
    // ln(−ln C) = p ln t − p ln t2
    (mx - my / p, p)
}

/// Least-squares fit of `exp(−(t/t2)^p)` to a measured decay.
pub fn stretched_exp_fit(curve: &CoherenceCurve) -> Result<StretchedFit> {
    let times = curve.grid.times();
    let data = &curve.coherence;
    if let Some(bad) = data.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::Domain(format!("stretched fit needs C > 0, got {bad}")));
    }
    let (ln_t2, p) = loglog_seed(times, data);
    let problem = StretchedProblem { times, data };
    let lower = [times[0].ln() - 10.0, 0.1];
    let upper = [times[times.len() - 1].ln() + 10.0, 10.0];
    let opts = LmOptions { max_iterations: 1000, ..LmOptions::default() };
    let out = levenberg_marquardt(&problem, &[ln_t2.clamp(lower[0], upper[0]), p], &lower, &upper, &opts);
    let residual = out.rms();
    if !out.converged || !residual.is_finite() {
        return Err(Error::FitFailure {
            best_residual: residual,
            detail: format!("stopped at t2={:e} p={} after {} iterations", out.x[0].exp(), out.x[1], out.iterations),
        });
    }
    let params = StretchedExpParams::new(out.x[0].exp(), out.x[1])?;
    let chi = times.iter().map(|&t| params.chi(t)).collect();
    let fitted = CoherenceCurve::from_chi(curve.grid.clone(), chi, curve.family.clone())?;
    Ok(StretchedFit { params, curve: fitted, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Spectrum,
    LogCoherence,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrum" => Ok(Metric::Spectrum),
            "logc" => Ok(Metric::LogCoherence),
            _ => Err(invalid(format!("unknown metric {s:?} (expected spectrum or logc)"))),
        }
    }
}

/// Error of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub id: String,
    pub family: String,
    pub error: f64,
}

/// Scores predictions against truth records matched by id. Predictions
/// carry the estimate in `spectrum` or `coherence` depending on the metric.
pub fn score_records(pred: &[DatasetRecord], truth: &[DatasetRecord], metric: Metric) -> Result<Vec<RecordError>> {
    if truth.is_empty() {
        return Err(invalid("no truth records to score"));
    }
    let by_id: HashMap<&str, &DatasetRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    truth
        .par_iter()
        .map(|t| {
            let p = by_id.get(t.id.as_str()).ok_or_else(|| invalid(format!("no prediction for record {}", t.id)))?;
            let error = match metric {
                Metric::Spectrum => {
                    same_axis(&p.freq_grid_rad_s, &t.freq_grid_rad_s, "frequency grids differ")?;
                    mape_loss(&p.spectrum, &t.spectrum)?
                }
                Metric::LogCoherence => log_curve_error(&p.curve()?, &t.curve()?)?,
            };
            Ok(RecordError { id: t.id.clone(), family: t.family.name().to_string(), error })
        })
        .collect()
}

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    /// Record at the median error (nearest rank).
    pub p50_id: String,
    pub p50_error: f64,
}

/// Shared bin edges with stacked per-family counts. The last count of
/// each family is the overflow bin above the final edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: String,
    pub records: Vec<RecordError>,
    pub summaries: Vec<FamilySummary>,
    pub histogram: Histogram,
}

/// Nearest-rank percentile of sorted values.
fn nearest_rank(sorted: &[f64], q: f64) -> usize {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    rank.clamp(1, sorted.len()) - 1
}

fn summarize(family: &str, rows: &[&RecordError]) -> FamilySummary {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.error).sum::<f64>() / n;
    let std = (rows.iter().map(|r| (r.error - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted: Vec<&RecordError> = rows.to_vec();
    sorted.sort_by(|a, b| a.error.total_cmp(&b.error).then_with(|| a.id.cmp(&b.id)));
    let errors: Vec<f64> = sorted.iter().map(|r| r.error).collect();
    let mid = sorted[nearest_rank(&errors, 0.5)];
    FamilySummary {
        family: family.to_string(),
        count: rows.len(),
        mean,
        std,
        max: errors[errors.len() - 1],
        p50_id: mid.id.clone(),
        p50_error: mid.error,
    }
}

impl ErrorReport {
    pub fn build(method: &str, records: Vec<RecordError>) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("cannot report on an empty record set"));
        }
        if let Some(r) = records.iter().find(|r| !r.error.is_finite() || r.error < 0.0) {
            return Err(Error::Numerical(format!("record {} has error {}", r.id, r.error)));
        }
        for r in &records {
            for s in [&r.id, &r.family] {
                if s.contains([',', '\n', '"']) {
                    return Err(invalid(format!("identifier {s:?} cannot be written to CSV")));
                }
            }
        }
        let mut families: BTreeMap<String, Vec<&RecordError>> = BTreeMap::new();
        for r in &records {
            families.entry(r.family.clone()).or_default().push(r);
        }
        let summaries = families.iter().map(|(f, rows)| summarize(f, rows)).collect();

        let mut all: Vec<f64> = records.iter().map(|r| r.error).collect();
        all.sort_by(f64::total_cmp);
        let p99 = all[nearest_rank(&all, 0.99)];
        let top = if p99 > 0.0 { p99 } else { 1.0 };
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| top * i as f64 / HISTOGRAM_BINS as f64).collect();
        let mut counts = BTreeMap::new();
        for (f, rows) in &families {
            let mut c = vec![0usize; HISTOGRAM_BINS + 1];
            for r in rows {
                let b = if r.error > top {
                    HISTOGRAM_BINS
                } else {
                    ((r.error / top * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
                };
                c[b] += 1;
            }
            counts.insert(f.clone(), c);
        }
        Ok(Self { method: method.to_string(), records, summaries, histogram: Histogram { edges, counts } })
    }

    pub fn summary(&self, family: &str) -> Option<&FamilySummary> {
        self.summaries.iter().find(|s| s.family == family)
    }

    /// Writes `errors.csv`, `summary.csv` and `histogram.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut errors = String::from("method,id,family,error\n");
        for r in &self.records {
            writeln!(errors, "{},{},{},{}", self.method, r.id, r.family, r.error).unwrap();
        }
        let mut summary = String::from("method,family,count,mean,std,max,p50_id,p50_error\n");
        for s in &self.summaries {
            writeln!(
                summary,
                "{},{},{},{},{},{},{},{}",
                self.method, s.family, s.count, s.mean, s.std, s.max, s.p50_id, s.p50_error
            )
            .unwrap();
        }
        let mut hist = String::from("method,family,bin,lower,upper,count\n");
        for (f, counts) in &self.histogram.counts {
            for (b, c) in counts.iter().enumerate() {
                let lower = self.histogram.edges[b.min(HISTOGRAM_BINS)];
                let upper = if b < HISTOGRAM_BINS { self.histogram.edges[b + 1] } else { f64::INFINITY };
                writeln!(hist, "{},{f},{b},{lower},{upper},{c}", self.method).unwrap();
            }
        }
        write_atomic(&dir.join("errors.csv"), errors.as_bytes())?;
        write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;
        write_atomic(&dir.join("histogram.csv"), hist.as_bytes())?;
        Ok(())
    }

    /// Parses a report written by [`ErrorReport::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let table = |name: &str, width: usize| -> Result<Vec<Vec<String>>> {
            let text = fs::read_to_string(dir.join(name))?;
            text.lines()
                .skip(1)
                .map(|l| {
                    let cols: Vec<String> = l.split(',').map(str::to_string).collect();
                    if cols.len() == width {
                        Ok(cols)
                    } else {
                        Err(Error::Corruption(format!("{name}: expected {width} columns in {l:?}")))
                    }
                })
                .collect()
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Corruption(format!("bad number {s:?}"))) };
        let count = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Corruption(format!("bad count {s:?}"))) };

        let rows = table("errors.csv", 4)?;
        let method = rows.first().map(|r| r[0].clone()).ok_or_else(|| Error::Corruption("errors.csv is empty".into()))?;
        let records = rows
            .iter()
            .map(|r| Ok(RecordError { id: r[1].clone(), family: r[2].clone(), error: num(&r[3])? }))
            .collect::<Result<Vec<_>>>()?;
        let summaries = table("summary.csv", 8)?
            .iter()
            .map(|r| {
                Ok(FamilySummary {
                    family: r[1].clone(),
                    count: count(&r[2])?,
                    mean: num(&r[3])?,
                    std: num(&r[4])?,
                    max: num(&r[5])?,
                    p50_id: r[6].clone(),
                    p50_error: num(&r[7])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut edges = vec![0.0; HISTOGRAM_BINS + 1];
        let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for r in table("histogram.csv", 6)? {
            let b = count(&r[2])?;
            if b > HISTOGRAM_BINS {
                return Err(Error::Corruption(format!("histogram bin {b} out of range")));
            }
            if b < HISTOGRAM_BINS {
                edges[b] = num(&r[3])?;
                edges[b + 1] = num(&r[4])?;
            }
            counts.entry(r[1].clone()).or_insert_with(|| vec![0; HISTOGRAM_BINS + 1])[b] = count(&r[5])?;
        }
        Ok(Self { method, records, summaries, histogram: Histogram { edges, counts } })
    }
}
