//! Synthetic corpora of (spectrum, coherence curve) pairs: generation,
//! measurement noise, stratified splits and JSON-Lines persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::forward::{CoherenceCurve, ForwardModel, StretchedExpParams};
use crate::inversion::phenomenological_roundtrip;
use crate::io_util::{sha256_hex, with_suffix, write_atomic};
use crate::sequence::{SequenceFamily, TimeGrid};
use crate::spectrum::{
    sample_spectrum, CompositeModel, FrequencyGrid, LorentzianParams, ModelKind, NoiseSpectrum, OneOverFParams,
};

pub const DATASET_VERSION: u32 = 1;

/// Attempts per record before generation gives up on the configuration.
const MAX_ATTEMPTS: usize = 200;
const MAX_REJECTION_RATE: f64 = 0.9;

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub family: ModelKind,
    pub params: CompositeModel,
    pub time_grid_s: Vec<f64>,
    pub coherence: Vec<f64>,
    pub freq_grid_rad_s: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub sequence_family: SequenceFamily,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pi_duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_coherence: Option<Vec<f64>>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl DatasetRecord {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time_grid_s.clone())
    }

    pub fn curve(&self) -> Result<CoherenceCurve> {
        CoherenceCurve::from_coherence(self.time_grid()?, self.coherence.clone(), self.sequence_family.clone())
    }

    pub fn noisy_curve(&self) -> Result<Option<CoherenceCurve>> {
        self.noisy_coherence
            .as_ref()
            .map(|n| CoherenceCurve::from_coherence(self.time_grid()?, n.clone(), self.sequence_family.clone()))
            .transpose()
    }

    pub fn noise_spectrum(&self) -> Result<NoiseSpectrum> {
        NoiseSpectrum::new(FrequencyGrid::new(self.freq_grid_rad_s.clone())?, self.spectrum.clone(), Some(self.params.clone()))
    }
}

/// Everything that determines a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub family: ModelKind,
    pub count: usize,
    pub seed: u64,
    /// Accepted range of the 1/e crossing time (s).
    pub t2_window: (f64, f64),
    pub sequence: SequenceFamily,
    pub time_grid: TimeGrid,
    pub pi_duration: f64,
    /// Records whose χ at the last grid time exceeds this are rejected;
    /// beyond it the coherence underflows.
    pub max_chi: f64,
}

impl GenerationConfig {
    /// Picks the time grid from the window: the short grid for windows
    /// ending below 200 µs, the long one otherwise.
    pub fn new(family: ModelKind, count: usize, seed: u64, t2_window: (f64, f64), sequence: SequenceFamily) -> Self {
        let time_grid = if t2_window.1 <= 200e-6 { TimeGrid::short_window() } else { TimeGrid::long_window() };
        Self { family, count, seed, t2_window, sequence, time_grid, pi_duration: 0.0, max_chi: 700.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("record count must be >= 1"));
        }
        let (lo, hi) = self.t2_window;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid(format!("T2 window must satisfy 0 < lo < hi, got {lo:e}, {hi:e}")));
        }
        if lo <= self.time_grid.t_min() || hi >= self.time_grid.t_max() {
            return Err(invalid(format!(
                "T2 window [{lo:e}, {hi:e}] s must lie inside the time grid ({:e}, {:e}) s",
                self.time_grid.t_min(),
                self.time_grid.t_max()
            )));
        }
        if self.family == ModelKind::White {
            return Err(invalid("white noise is a test fixture, not a generation family"));
        }
        if !(self.max_chi > 1.0) {
            return Err(invalid("max_chi must exceed 1"));
        }
        Ok(())
    }
}

/// Deterministic 64-bit seed from a list of labelled parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn record_seed(global: u64, family: ModelKind, index: usize) -> u64 {
    derive_seed(&[&global.to_le_bytes(), family.name().as_bytes(), &(index as u64).to_le_bytes()])
}

/// Worker count: `QNS_THREADS` if set, else the rayon default.
pub fn worker_threads() -> usize {
    std::env::var("QNS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

const DELTA_RANGE: (f64, f64) = (1e3, 1e6);
const TAU_C_RANGE: (f64, f64) = (1e-6, 1e-2);
const ALPHA_RANGE: (f64, f64) = (0.5, 2.0);
const STRETCH_RANGE: (f64, f64) = (1.0, 3.0);

/// Multiplies every amplitude of `model` by `factor` (spectra are linear in
/// Δ² and in A).
fn scale_model(model: &CompositeModel, factor: f64) -> CompositeModel {
    use crate::spectrum::ModelComponent as C;
    let components = model
        .components
        .iter()
        .map(|c| match *c {
            C::Lorentzian(p) => C::Lorentzian(LorentzianParams { delta: p.delta * factor.sqrt(), ..p }),
            C::OneOverF(p) => C::OneOverF(OneOverFParams { amplitude: p.amplitude * factor, ..p }),
            C::White { level } => C::White { level: level * factor },
            other => other,
        })
        .collect();
    CompositeModel { kind: model.kind, components }
}

/// Unit-scale model of the family; the caller rescales it to hit a T₂.
fn sample_shape<R: Rng>(kind: ModelKind, freq: &FrequencyGrid, rng: &mut R) -> Result<CompositeModel> {
    let lor = |rng: &mut R| LorentzianParams::new(1.0, log_uniform(rng, TAU_C_RANGE.0, TAU_C_RANGE.1));
    Ok(match kind {
        ModelKind::Lorentzian => CompositeModel::lorentzian(lor(rng)?),
        ModelKind::OneOverF => {
            CompositeModel::one_over_f(OneOverFParams::new(1.0, rng.gen_range(ALPHA_RANGE.0..ALPHA_RANGE.1))?)
        }
        ModelKind::DoubleLorentzian => {
            let (a, b) = loop {
                let a = log_uniform(rng, TAU_C_RANGE.0, TAU_C_RANGE.1);
                let b = log_uniform(rng, TAU_C_RANGE.0, TAU_C_RANGE.1);
                if a.max(b) / a.min(b) >= 5.0 {
                    break (a, b);
                }
            };
            let ratio = log_uniform(rng, 0.1, 10.0);
            CompositeModel::double_lorentzian(LorentzianParams::new(1.0, a)?, LorentzianParams::new(ratio, b)?)
        }
        ModelKind::OneOverFPlusLorentzian => {
            let background = OneOverFParams::new(1.0, rng.gen_range(ALPHA_RANGE.0..ALPHA_RANGE.1))?;
            let w = freq.omega();
            let n = w.len();
            let center = log_uniform(rng, w[n / 5], w[4 * n / 5]);
            let rel_width = rng.gen_range(0.15..0.4);
            let tau_c = 1.0 / (rel_width * center);
            let unit = LorentzianParams::shifted(1.0, tau_c, center)?;
            let contrast = log_uniform(rng, 2.0, 20.0);
            let delta = (contrast * background.value(center) / unit.value(center)).sqrt();
            CompositeModel::one_over_f_plus_lorentzian(background, LorentzianParams::shifted(delta, tau_c, center)?)
        }
        ModelKind::StretchedExpDerived | ModelKind::White => {
            return Err(invalid(format!("{kind} has no parametric shape sampler")))
        }
    })
}

fn amplitudes_ok(model: &CompositeModel, freq: &FrequencyGrid) -> bool {
    use crate::spectrum::ModelComponent as C;
    model.components.iter().all(|c| match c {
        C::Lorentzian(p) if p.center == 0.0 => in_range(p.delta, DELTA_RANGE.0, DELTA_RANGE.1),
        C::OneOverF(p) => {
            let mid = freq.omega()[freq.len() / 2];
            in_range(p.value(mid), 1e3, 1e7)
        }
        _ => true,
    })
}

/// Outcome of one generation attempt.
enum Attempt {
    Accepted(Box<DatasetRecord>),
    Rejected,
}

fn attempt<R: Rng>(cfg: &GenerationConfig, fwd: &ForwardModel, rng: &mut R, id: &str, seed: u64) -> Result<Attempt> {
    let grid = &cfg.time_grid;
    let pulses = cfg.sequence.pulses();
    let freq = FrequencyGrid::from_time_grid(grid, pulses)?;
    let (lo, hi) = cfg.t2_window;
    let t2_target = log_uniform(rng, lo, hi);

    let (spectrum, curve) = if cfg.family == ModelKind::StretchedExpDerived {
        let p = rng.gen_range(STRETCH_RANGE.0..STRETCH_RANGE.1);
        let pair = phenomenological_roundtrip(
            &StretchedExpParams::new(t2_target, p)?,
            grid,
            &cfg.sequence,
            cfg.pi_duration,
            fwd,
        )?;
        (pair.spectrum, pair.curve)
    } else {
        let shape = sample_shape(cfg.family, &freq, rng)?;
        let probe = cfg.sequence.build(t2_target, cfg.pi_duration)?;
        let chi_unit = fwd.chi(&sample_spectrum(&shape, &freq)?, &probe);
        if !(chi_unit > 0.0 && chi_unit.is_finite()) {
            return Ok(Attempt::Rejected);
        }
        let model = scale_model(&shape, 1.0 / chi_unit);
        if !amplitudes_ok(&model, &freq) {
            return Ok(Attempt::Rejected);
        }
        let spectrum = sample_spectrum(&model, &freq)?;
        let curve = fwd.coherence_curve(&spectrum, &cfg.sequence, grid, cfg.pi_duration)?;
        (spectrum, curve)
    };

    let chi = curve.chi.as_ref().expect("forward curves carry χ");
    if chi.last().is_some_and(|&c| c > cfg.max_chi) {
        return Ok(Attempt::Rejected);
    }
    match curve.t2_crossing() {
        Some(t2) if t2 >= lo && t2 <= hi => {}
        _ => return Ok(Attempt::Rejected),
    }
    let model = spectrum.model.clone().expect("sampled spectra carry their model");
    Ok(Attempt::Accepted(Box::new(DatasetRecord {
        id: id.to_string(),
        family: cfg.family,
        params: model,
        time_grid_s: grid.times().to_vec(),
        coherence: curve.coherence,
        freq_grid_rad_s: freq.omega().to_vec(),
        spectrum: spectrum.values,
        sequence_family: cfg.sequence.clone(),
        seed,
        pi_duration_s: cfg.pi_duration,
        noisy_coherence: None,
    })))
}

/// Generates record `index` of the corpus described by `cfg`, returning
/// it with the number of attempts used.
pub fn generate_record(cfg: &GenerationConfig, index: usize) -> Result<(DatasetRecord, usize)> {
    let seed = record_seed(cfg.seed, cfg.family, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = format!("{}-{}-{index:06}", cfg.family, cfg.seed);
    let fwd = ForwardModel::default();
    for n in 1..=MAX_ATTEMPTS {
        if let Attempt::Accepted(r) = attempt(cfg, &fwd, &mut rng, &id, seed)? {
            return Ok((*r, n));
        }
    }
    Err(Error::RangeConfiguration {
        rate: 1.0,
        detail: format!("record {id} was rejected {MAX_ATTEMPTS} times in a row"),
    })
}

/// Generates `cfg.count` records in parallel. Each record has its own RNG
/// stream, so output does not depend on the worker count.
pub fn generate(cfg: &GenerationConfig) -> Result<Vec<DatasetRecord>> {
    generate_with_workers(cfg, worker_threads())
}

/// [`generate`] on an explicit number of worker threads.
pub fn generate_with_workers(cfg: &GenerationConfig, workers: usize) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(DatasetRecord, usize)>> =
        pool.install(|| (0..cfg.count).into_par_iter().map(|i| generate_record(cfg, i)).collect());
    let mut records = Vec::with_capacity(cfg.count);
    let mut attempts = 0;
    for r in results {
        let (rec, n) = r?;
        attempts += n;
        records.push(rec);
    }
    let rate = 1.0 - cfg.count as f64 / attempts as f64;
    if rate > MAX_REJECTION_RATE {
        return Err(Error::RangeConfiguration {
            rate,
            detail: format!("{} records needed {attempts} attempts for {}", cfg.count, cfg.family),
        });
    }
    Ok(records)
}

/// Interpretation of the ±5% measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `C + u`, u uniform in ±amplitude.
    #[default]
    Additive,
    /// `C·(1 + u)`.
    Multiplicative,
}

pub const NOISE_AMPLITUDE: f64 = 0.05;
pub const NOISY_FLOOR: f64 = 1e-9;
pub const NOISY_CEILING: f64 = 1.05;

/// Copy of `record` with `noisy_coherence` filled from a stream seeded by
/// `(seed, record.id)`.
pub fn add_measurement_noise(record: &DatasetRecord, seed: u64, mode: NoiseMode) -> DatasetRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&seed.to_le_bytes(), b"noise", record.id.as_bytes()]));
    let noisy = record
        .coherence
        .iter()
        .map(|&c| {
            let u = rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            let v = match mode {
                NoiseMode::Additive => c + u,
                NoiseMode::Multiplicative => c * (1.0 + u),
            };
            v.clamp(NOISY_FLOOR, NOISY_CEILING)
        })
        .collect();
    DatasetRecord { noisy_coherence: Some(noisy), ..record.clone() }
}

/// Train, validation and test tranches.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DatasetRecord>,
    pub validation: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Stratified shuffle split: each family is divided by `ratios`
/// (rounded, remainder to test) independently.
pub fn split(records: &[DatasetRecord], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || ((ratios.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut by_family: BTreeMap<ModelKind, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_family.entry(r.family).or_default().push(i);
    }
    let mut out = Split { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (kind, mut idx) in by_family {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&seed.to_le_bytes(), b"split", kind.name().as_bytes()]));
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let n = idx.len();
        let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        let (a, rest) = idx.split_at(n_train);
        let (b, c) = rest.split_at(n_val);
        out.train.extend(a.iter().map(|&i| records[i].clone()));
        out.validation.extend(b.iter().map(|&i| records[i].clone()));
        out.test.extend(c.iter().map(|&i| records[i].clone()));
    }
    for (name, t) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
        if t.is_empty() {
            return Err(Error::EmptyTranche(format!(
                "{name} tranche is empty for {} records at ratios {ratios:?}",
                records.len()
            )));
        }
    }
    Ok(out)
}

/// Grid description stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub points: usize,
    pub sequence_family: SequenceFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_seed: Option<u64>,
    pub family_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_ratios: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tranche: Option<String>,
    /// Records carry estimates rather than simulated ground truth.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub estimated: bool,
    pub grids: Vec<GridDescriptor>,
    pub records: usize,
    pub records_file: String,
    pub sha256: String,
}

/// Provenance a caller can attach when saving.
#[derive(Debug, Clone, Default)]
pub struct ManifestInfo {
    pub global_seed: Option<u64>,
    pub split_ratios: Option<[f64; 3]>,
    pub tranche: Option<String>,
    /// Skips the χ spot check; set for predictions and reconstructions.
    pub estimated: bool,
}

/// Serializes floats with 17 significant digits.
struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn to_line(record: &DatasetRecord) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    record.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn manifest_path(corpus: &Path) -> PathBuf {
    with_suffix(corpus, ".manifest.json")
}

/// Relative χ tolerance of the save-time consistency check.
pub const SPOT_CHECK_TOLERANCE: f64 = 1e-4;

/// Recomputes χ from the stored model for about 1% of the records.
pub fn spot_check(records: &[DatasetRecord], seed: u64) -> Result<usize> {
    if records.is_empty() {
        return Ok(0);
    }
    let n = records.len().div_ceil(100);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, records.len(), n);
    let fwd = ForwardModel::default();
    for i in picks.iter() {
        let r = &records[i];
        let spectrum = r.noise_spectrum()?;
        let chi = fwd.chi_curve(&spectrum, &r.sequence_family, &r.time_grid()?, r.pi_duration_s)?;
        for (k, (&want, &c)) in chi.iter().zip(&r.coherence).enumerate() {
            let have = -c.ln();
            if (have - want).abs() > SPOT_CHECK_TOLERANCE * want.abs() + 1e-12 {
                return Err(Error::Corruption(format!(
                    "record {} fails the χ consistency check at point {k}: stored {have:e}, recomputed {want:e}",
                    r.id
                )));
            }
        }
    }
    Ok(n)
}

/// Writes `path` (JSON Lines) and `path.manifest.json`, both atomically,
/// after a consistency spot check.
pub fn save(records: &[DatasetRecord], path: &Path, info: &ManifestInfo) -> Result<DatasetManifest> {
    let mut bytes = Vec::new();
    let mut family_counts = BTreeMap::new();
    let mut grids: Vec<GridDescriptor> = Vec::new();
    for r in records {
        bytes.extend(to_line(r)?);
        *family_counts.entry(r.family.name().to_string()).or_insert(0) += 1;
        let g = GridDescriptor {
            t_min_s: r.time_grid_s[0],
            t_max_s: *r.time_grid_s.last().unwrap_or(&0.0),
            points: r.time_grid_s.len(),
            sequence_family: r.sequence_family.clone(),
        };
        if !grids.contains(&g) {
            grids.push(g);
        }
    }
    let sha256 = sha256_hex(&bytes);
    if !info.estimated {
        spot_check(records, derive_seed(&[sha256.as_bytes()]))?;
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        global_seed: info.global_seed,
        family_counts,
        split_ratios: info.split_ratios,
        tranche: info.tranche.clone(),
        estimated: info.estimated,
        grids,
        records: records.len(),
        records_file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256,
    };
    write_atomic(path, &bytes)?;
    write_atomic(&manifest_path(path), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Loads a corpus, verifying format version and digest.
pub fn load(path: &Path) -> Result<(Vec<DatasetRecord>, DatasetManifest)> {
    let mpath = manifest_path(path);
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&mpath)?)
        .map_err(|e| Error::Corruption(format!("manifest {}: {e}", mpath.display())))?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Version { found: manifest.version, expected: DATASET_VERSION });
    }
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(Error::Corruption(format!("digest mismatch for {}", path.display())));
    }
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<DatasetRecord>(l)
                .map_err(|e| Error::Corruption(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    if records.len() != manifest.records {
        return Err(Error::Corruption(format!(
            "{} holds {} records, manifest says {}",
            path.display(),
            records.len(),
            manifest.records
        )));
    }
    Ok((records, manifest))
}

/// File names used for the tranches of a split directory.
pub const TRANCHES: [&str; 3] = ["train", "validation", "test"];

pub fn tranche_path(dir: &Path, tranche: &str) -> PathBuf {
    dir.join(format!("{tranche}.jsonl"))
}

pub fn save_split(split: &Split, dir: &Path, ratios: [f64; 3], seed: u64) -> Result<()> {
    for (name, recs) in TRANCHES.iter().zip([&split.train, &split.validation, &split.test]) {
        let info = ManifestInfo { global_seed: Some(seed), split_ratios: Some(ratios), tranche: Some(name.to_string()), ..Default::default() };
        save(recs, &tranche_path(dir, name), &info)?;
    }
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<Split> {
    let mut t = TRANCHES.iter().map(|n| load(&tranche_path(dir, n)).map(|r| r.0));
    Ok(Split {
        train: t.next().expect("three tranches")?,
        validation: t.next().expect("three tranches")?,
        test: t.next().expect("three tranches")?,
    })
}
