use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use qns_core::dataset::{
    self, add_measurement_noise, generate, load_split, save_split, split, DatasetRecord, GenerationConfig, ManifestInfo,
    NoiseMode,
};
use qns_core::eval::{score_records, ErrorReport, Metric};
use qns_core::inversion::{alvarez_suter, delta_inversion, AlvarezSuterOptions};
use qns_core::nn::{load_checkpoint, predict_records, save_checkpoint, train_records, Task};
use qns_core::optimize::{benchmark, write_bins_csv};
use qns_core::sequence::SequenceFamily;
use qns_core::spectrum::{ModelKind, NoiseSpectrum};
use qns_core::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qns", version, about = "Qubit noise spectroscopy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of spectrum/decay pairs.
    Gen {
        #[arg(long)]
        family: ModelKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Accepted 1/e-time window in seconds, as `lo,hi`.
        #[arg(long, value_parser = parse_window)]
        t2_window: (f64, f64),
        /// `hahn`, `cpmg:N` or `udd:N`.
        #[arg(long, default_value = "hahn")]
        sequence: SequenceFamily,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add ±5% measurement noise to every curve of a corpus.
    Noise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Scale the noise by the local coherence instead of adding it.
        #[arg(long)]
        multiplicative: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified train/validation/test split.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_ratios, default_value = "0.8,0.1,0.1")]
        ratios: [f64; 3],
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a spectrum estimator or a denoiser on a split directory.
    Train {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        max_lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Apply a checkpoint to every record of a corpus.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classical spectrum reconstruction.
    Invert {
        #[arg(long)]
        method: InvertMethod,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 7)]
        as_kmax: usize,
        /// Inter-pulse delays in seconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        as_taus: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize π-pulse positions for each spectrum of a corpus, or for a
    /// single spectrum stored as JSON.
    Optimize {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1e-7)]
        tau_pi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against truth and write an error report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InvertMethod {
    Delta,
    As,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_floats(s)?;
    match v.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(format!("expected lo,hi, got {s:?}")),
    }
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_floats(s)?;
    v.try_into().map_err(|_| format!("expected three ratios, got {s:?}"))
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn save(records: &[DatasetRecord], out: &Path, seed: Option<u64>) -> Result<()> {
    dataset::save(records, out, &ManifestInfo { global_seed: seed, ..Default::default() })?;
    Ok(())
}

fn save_estimates(records: &[DatasetRecord], out: &Path) -> Result<()> {
    dataset::save(records, out, &ManifestInfo { estimated: true, ..Default::default() })?;
    Ok(())
}

fn load(path: &Path) -> Result<Vec<DatasetRecord>> {
    Ok(dataset::load(path)?.0)
}

#[derive(Serialize)]
struct OptimizedLine<'a> {
    id: &'a str,
    target_time: f64,
    c_cpmg: f64,
    c_udd: f64,
    c_opt: f64,
    absolute_enhancement: f64,
    iterations: usize,
    converged: bool,
    centers: &'a [f64],
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { family, count, seed, t2_window, sequence, out } => {
            let start = Instant::now();
            let records = generate(&GenerationConfig::new(family, count, seed, t2_window, sequence))?;
            save(&records, &out, Some(seed))?;
            eprintln!("wrote {} records to {} in {:.1} s", records.len(), out.display(), start.elapsed().as_secs_f64());
        }
        Command::Noise { input, seed, multiplicative, out } => {
            let mode = if multiplicative { NoiseMode::Multiplicative } else { NoiseMode::Additive };
            let noisy: Vec<DatasetRecord> = load(&input)?.iter().map(|r| add_measurement_noise(r, seed, mode)).collect();
            save(&noisy, &out, Some(seed))?;
        }
        Command::Split { input, ratios, seed, out_dir } => {
            let s = split(&load(&input)?, ratios, seed)?;
            save_split(&s, &out_dir, ratios, seed)?;
            eprintln!("train {} / validation {} / test {}", s.train.len(), s.validation.len(), s.test.len());
        }
        Command::Train { task, data, hidden, epochs, max_lr, seed, ckpt } => {
            let s = load_split(&data)?;
            let base = task.default_config();
            let cfg = qns_core::nn::TrainingConfig { hidden, max_lr, seed, epochs: epochs.unwrap_or(base.epochs), ..base };
            let net = train_records(&s.train, &s.validation, &cfg)?;
            if let Some(why) = &net.aborted {
                eprintln!("training stopped early: {why}");
            }
            save_checkpoint(&net, &ckpt)?;
            eprintln!("best validation error {:.3} at epoch {}", net.best_validation, net.best_epoch);
        }
        Command::Infer { ckpt, input, out } => {
            let net = load_checkpoint(&ckpt)?;
            save_estimates(&predict_records(&net, &load(&input)?)?, &out)?;
        }
        Command::Invert { method, input, as_kmax, as_taus, out } => {
            let records = load(&input)?;
            let opts = AlvarezSuterOptions { k_max: as_kmax, tau_grid: as_taus.clone(), ..Default::default() };
            let inverted = records
                .iter()
                .map(|r| {
                    let spectrum = match method {
                        InvertMethod::Delta => delta_inversion(&r.curve()?, r.sequence_family.pulses())?.spectrum,
                        InvertMethod::As => {
                            let opts = AlvarezSuterOptions { tau_pi: r.pi_duration_s, ..opts.clone() };
                            alvarez_suter(&r.noise_spectrum()?, &opts)?.spectrum.ok_or_else(|| {
                                Error::InvalidParameter(format!(
                                    "delays do not cover the frequency grid of record {}",
                                    r.id
                                ))
                            })?
                        }
                    };
                    Ok(DatasetRecord { spectrum: spectrum.values, ..r.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            save_estimates(&inverted, &out)?;
        }
        Command::Optimize { spectrum, n, t, tau_pi, out } => {
            let cases: Vec<(String, NoiseSpectrum)> = if spectrum.extension().is_some_and(|e| e == "json") {
                let s: NoiseSpectrum = serde_json::from_slice(&std::fs::read(&spectrum)?)?;
                vec![("spectrum".to_string(), s)]
            } else {
                load(&spectrum)?.iter().map(|r| Ok((r.id.clone(), r.noise_spectrum()?))).collect::<Result<_>>()?
            };
            let pairs: Vec<(NoiseSpectrum, f64)> = cases.iter().map(|(_, s)| (s.clone(), t)).collect();
            let bench = benchmark(&pairs, n, tau_pi)?;
            let mut lines = String::new();
            for ((id, _), r) in cases.iter().zip(&bench.results) {
                let line = OptimizedLine {
                    id,
                    target_time: t,
                    c_cpmg: r.c_init,
                    c_udd: r.c_udd,
                    c_opt: r.c_opt,
                    absolute_enhancement: r.absolute_enhancement,
                    iterations: r.iterations,
                    converged: r.converged,
                    centers: r.sequence.centers(),
                };
                lines.push_str(&serde_json::to_string(&line)?);
                lines.push('\n');
            }
            std::fs::write(&out, lines)?;
            let mut csv = Vec::new();
            write_bins_csv(&bench.bins, &mut csv)?;
            let mut csv_path = out.clone().into_os_string();
            csv_path.push(".bins.csv");
            std::fs::write(csv_path, csv)?;
        }
        Command::Eval { pred, truth, metric, report } => {
            let errors = score_records(&load(&pred)?, &load(&truth)?, metric)?;
            let method = pred.file_stem().map(|s| s.to_string_lossy().replace([',', '"'], "_")).unwrap_or_default();
            let rep = ErrorReport::build(&method, errors)?;
            rep.write(&report)?;
            for s in &rep.summaries {
                println!(
                    "{:<28} n={:<6} mean={:.3}% std={:.3}% max={:.3}% median-record={}",
                    s.family, s.count, s.mean, s.std, s.max, s.p50_id
                );
            }
        }
    }
    Ok(())
}
