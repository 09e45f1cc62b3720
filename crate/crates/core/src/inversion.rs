//! Classical spectrum reconstructions: the delta-function mapping of a
//! single decay, and the multi-pulse Alvarez-Suter procedure.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{stretched_exponential, CoherenceCurve, ForwardModel, StretchedExpParams};
use crate::quadrature::gauss_legendre;
use crate::sequence::{cpmg, filter_function, SequenceFamily, TimeGrid};
use crate::spectrum::{sample_spectrum, CompositeModel, FrequencyGrid, NoiseSpectrum, SampledSpectrum};

/// Spectrum estimated by the delta-function mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaInversion {
    pub spectrum: NoiseSpectrum,
    /// Points where `C >= 1` forced a zero estimate.
    pub clamped: usize,
}

/// `S(nπ/t) = -π ln C(t) / t` at every grid time. The output grid is the
/// reversed image of the time grid.
pub fn delta_inversion(curve: &CoherenceCurve, pulses: usize) -> Result<DeltaInversion> {
    if let Some(bad) = curve.coherence.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::Domain(format!("delta inversion needs C > 0, got {bad}")));
    }
    let grid = FrequencyGrid::from_time_grid(&curve.grid, pulses)?;
    let mut clamped = 0;
    // Stored χ avoids the precision loss of ln(exp(-χ)) for small χ.
    let chi: Vec<f64> = match &curve.chi {
        Some(chi) => chi.clone(),
        None => curve.coherence.iter().map(|c| -c.ln()).collect(),
    };
    let values = curve
        .grid
        .times()
        .iter()
        .zip(&chi)
        .rev()
        .map(|(&t, &x)| {
            let s = PI * x / t;
            if s > 0.0 {
                s
            } else {
                clamped += 1;
                0.0
            }
        })
        .collect();
    Ok(DeltaInversion { spectrum: NoiseSpectrum::new(grid, values, None)?, clamped })
}

/// A training pair: spectrum and the decay it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurvePair {
    pub spectrum: NoiseSpectrum,
    pub curve: CoherenceCurve,
}

/// Stretched-exponential decay → delta-inverted spectrum → decay regenerated
/// from that spectrum with the full filter function. The spectrum carries a
/// power-law model tag so it extends off-grid analytically.
pub fn phenomenological_roundtrip(
    params: &StretchedExpParams,
    grid: &TimeGrid,
    family: &SequenceFamily,
    tau_pi: f64,
    forward: &ForwardModel,
) -> Result<SpectrumCurvePair> {
    params.validate()?;
    let pulses = family.pulses();
    let model = CompositeModel::stretched_exp(params.t2, params.p, pulses as u32);
    let freq = FrequencyGrid::from_time_grid(grid, pulses)?;
    let spectrum = sample_spectrum(&model, &freq)?;
    let curve = forward.coherence_curve(&spectrum, family, grid, tau_pi)?;
    Ok(SpectrumCurvePair { spectrum, curve })
}

/// Phenomenological decay used as the starting point of the round trip.
pub fn phenomenological_curve(params: &StretchedExpParams, grid: &TimeGrid, family: &SequenceFamily) -> Result<CoherenceCurve> {
    stretched_exponential(params, grid, family.clone())
}

/// Harmonic weights `A_k²` of a CPMG train with inter-pulse delay τ: the
/// long-train decay rate is `R = Σ_k A_k² S(kω₀)` with `ω₀ = π/τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySet {
    pub omega0: f64,
    /// `(k, A_k²)` for retained harmonics, ascending in k.
    pub coefficients: Vec<(usize, f64)>,
    pub k_max: usize,
    /// `Σ_{k≥1} A_k²` over all harmonics.
    pub total: f64,
}

impl SensitivitySet {
    pub fn get(&self, k: usize) -> f64 {
        self.coefficients.iter().find(|c| c.0 == k).map_or(0.0, |c| c.1)
    }

    pub fn retained(&self) -> f64 {
        self.coefficients.iter().map(|c| c.1).sum()
    }
}

fn check_harmonics(k_max: usize) -> Result<()> {
    if k_max == 0 || k_max.is_multiple_of(2) {
        return Err(invalid(format!("k_max must be odd and >= 1, got {k_max}")));
    }
    Ok(())
}

/// Fourier weights of the periodic modulation of a long CPMG train, which
/// switches sign at each pulse and vanishes while a pulse is applied.
pub fn compute_sensitivities(tau: f64, n_ref: usize, tau_pi: f64, k_max: usize) -> Result<SensitivitySet> {
    check_harmonics(k_max)?;
    if n_ref < 4 {
        return Err(invalid(format!("reference train of {n_ref} pulses cannot resolve harmonics; use n_ref >= 4")));
    }
    if !(tau > tau_pi && tau > 0.0 && tau_pi >= 0.0) {
        return Err(Error::InvalidDuration(format!("delay {tau:e} s must exceed the pulse duration {tau_pi:e} s")));
    }
    // One period P = 2τ with pulses centered at τ/2 and 3τ/2; jumps of y.
    let period = 2.0 * tau;
    let h = 0.5 * tau_pi;
    let jumps: Vec<(f64, f64)> = if tau_pi > 0.0 {
        vec![
            (0.5 * tau - h, -1.0),
            (0.5 * tau + h, -1.0),
            (1.5 * tau - h, 1.0),
            (1.5 * tau + h, 1.0),
        ]
    } else {
        vec![(0.5 * tau, -2.0), (1.5 * tau, 2.0)]
    };
    let weight = |k: usize| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for &(x, j) in &jumps {
            let ph = -2.0 * PI * k as f64 * x / period;
            re += j * ph.cos();
            im += j * ph.sin();
        }
        (re * re + im * im) / (4.0 * PI * PI * (k * k) as f64)
    };
    let a1 = weight(1);
    let mut coefficients = Vec::new();
    for k in 1..=k_max {
        let w = weight(k);
        if k % 2 == 1 || w > 1e-12 * a1 {
            coefficients.push((k, w));
        }
    }
    Ok(SensitivitySet {
        omega0: PI / tau,
        coefficients,
        k_max,
        total: 0.5 * (1.0 - tau_pi / tau),
    })
}

/// Cross-check of [`compute_sensitivities`]: integrates
/// `F(ω)/(2π ω² T)` of an `n_ref`-pulse train over `[(k-1)ω₀, (k+1)ω₀]`.
pub fn windowed_sensitivities(tau: f64, n_ref: usize, tau_pi: f64, k_max: usize) -> Result<SensitivitySet> {
    check_harmonics(k_max)?;
    if n_ref < 4 {
        return Err(invalid(format!("reference train of {n_ref} pulses cannot resolve harmonics; use n_ref >= 4")));
    }
    let total = n_ref as f64 * tau;
    let seq = cpmg(n_ref, total, tau_pi)?;
    let omega0 = PI / tau;
    let (gx, gw) = gauss_legendre(12);
    let step = PI / (4.0 * total);
    let integrate = |a: f64, b: f64| -> f64 {
        let m = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let mid = a + (i as f64 + 0.5) * h;
            for (&x, &w) in gx.iter().zip(&gw) {
                let om = mid + 0.5 * h * x;
                acc += 0.5 * h * w * filter_function(&seq, om) / (om * om);
            }
        }
        acc / (2.0 * PI * total)
    };
    let mut coefficients = Vec::new();
    for k in (1..=k_max).step_by(2) {
        let lo = (k as f64 - 1.0) * omega0;
        coefficients.push((k, integrate(lo, lo + 2.0 * omega0)));
    }
    Ok(SensitivitySet {
        omega0,
        coefficients,
        k_max,
        total: 0.5 * (1.0 - tau_pi / tau),
    })
}

/// Decay rate fitted at one inter-pulse delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRateSample {
    pub tau: f64,
    pub rate: f64,
    /// RMS relative misfit of `χ = R·t` over the pulse counts.
    pub fit_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AlvarezSuterOptions {
    /// Inter-pulse delays. `None` aligns one delay with every point of the
    /// output grid and extends the ladder to cover the retained harmonics.
    pub tau_grid: Option<Vec<f64>>,
    pub n_list: Vec<usize>,
    pub tau_pi: f64,
    pub k_max: usize,
    /// Assign the weight of harmonics above `k_max` to `S((k_max+2)ω₀)`.
    pub tail_correction: bool,
    /// Grid of the returned spectrum; defaults to the input spectrum's grid.
    pub output_grid: Option<FrequencyGrid>,
    pub forward: ForwardModel,
}

impl Default for AlvarezSuterOptions {
    fn default() -> Self {
        Self {
            tau_grid: None,
            n_list: vec![4, 8, 16, 32, 64],
            tau_pi: 0.0,
            k_max: 7,
            tail_correction: true,
            output_grid: None,
            forward: ForwardModel::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlvarezSuterResult {
    /// Probe frequencies `π/τ`, ascending.
    pub probe_omega: Vec<f64>,
    pub probe_values: Vec<f64>,
    pub rates: Vec<DecayRateSample>,
    /// Solved values that came out negative and were set to zero.
    pub clamped: usize,
    /// Reconstruction on the output grid, when the probes cover it.
    pub spectrum: Option<NoiseSpectrum>,
}

/// Least-squares slope through the origin of χ against total time.
pub fn fit_rate(times: &[f64], chi: &[f64]) -> (f64, f64) {
    let num: f64 = times.iter().zip(chi).map(|(t, c)| t * c).sum();
    let den: f64 = times.iter().map(|t| t * t).sum();
    let rate = num / den;
    let resid = (times
        .iter()
        .zip(chi)
        .map(|(t, c)| {
            let r = if *c > 0.0 { (c - rate * t) / c } else { 0.0 };
            r * r
        })
        .sum::<f64>()
        / times.len() as f64)
        .sqrt();
    (rate, resid)
}

fn default_tau_ladder(grid: &FrequencyGrid, k_max: usize) -> Vec<f64> {
    let w = grid.omega();
    let step = (w[w.len() - 1] / w[0]).ln() / (w.len() - 1) as f64;
    let mut taus: Vec<f64> = w.iter().map(|om| PI / om).collect();
    let top = w[w.len() - 1] * (k_max + 2) as f64;
    let mut om = w[w.len() - 1];
    while om < top {
        om *= step.exp();
        taus.push(PI / om);
    }
    taus
}

/// Simulates CPMG decays of `spec` at a ladder of delays, fits the decay
/// rate at each and solves for the spectrum from the highest probe
/// frequency downward, substituting already-solved harmonics.
pub fn alvarez_suter(spec: &NoiseSpectrum, opts: &AlvarezSuterOptions) -> Result<AlvarezSuterResult> {
    check_harmonics(opts.k_max)?;
    if opts.n_list.is_empty() || opts.n_list.contains(&0) {
        return Err(invalid("pulse-count list must be non-empty and positive"));
    }
    let out_grid = opts.output_grid.clone().unwrap_or_else(|| spec.grid.clone());
    let mut taus = match &opts.tau_grid {
        Some(t) => t.clone(),
        None => default_tau_ladder(&out_grid, opts.k_max),
    };
    if taus.is_empty() || taus.iter().any(|t| !(t.is_finite() && *t > opts.tau_pi)) {
        return Err(invalid("delays must be finite and longer than the pulse duration"));
    }
    taus.sort_by(|a, b| a.total_cmp(b));
    taus.dedup();

    let n_ref = opts.n_list.iter().copied().max().unwrap_or(4).max(4);
    let rates: Vec<DecayRateSample> = taus
        .par_iter()
        .map(|&tau| {
            let mut times = Vec::with_capacity(opts.n_list.len());
            let mut chis = Vec::with_capacity(opts.n_list.len());
            for &n in &opts.n_list {
                let t = n as f64 * tau;
                let seq = cpmg(n, t, opts.tau_pi)?;
                times.push(t);
                chis.push(opts.forward.chi(spec, &seq));
            }
            let (rate, fit_residual) = fit_rate(&times, &chis);
            Ok(DecayRateSample { tau, rate, fit_residual })
        })
        .collect::<Result<_>>()?;

    // Solve from the smallest delay (highest frequency) down.
    let mut solved_omega: Vec<f64> = Vec::new();
    let mut solved_value: Vec<f64> = Vec::new();
    let mut clamped = 0;
    for sample in &rates {
        let sens = compute_sensitivities(sample.tau, n_ref, opts.tau_pi, opts.k_max)?;
        let w0 = sens.omega0;
        // solved_* are stored descending in ω; build an ascending view.
        let lookup = |om: f64| -> Option<f64> {
            let n = solved_omega.len();
            if n == 0 || om > solved_omega[0] * (1.0 + 1e-12) {
                return None;
            }
            if n == 1 {
                return Some(solved_value[0]);
            }
            let asc_w: Vec<f64> = solved_omega.iter().rev().copied().collect();
            let asc_v: Vec<f64> = solved_value.iter().rev().copied().collect();
            Some(SampledSpectrum::new(&asc_w, &asc_v).value(om))
        };
        let mut known = 0.0;
        let mut unknown_weight = sens.get(1);
        for &(k, a) in &sens.coefficients {
            if k == 1 {
                continue;
            }
            match lookup(k as f64 * w0) {
                Some(s) => known += a * s,
                None => unknown_weight += a,
            }
        }
        if opts.tail_correction {
            let rest = (sens.total - sens.retained()).max(0.0);
            match lookup((opts.k_max + 2) as f64 * w0) {
                Some(s) => known += rest * s,
                None => unknown_weight += rest,
            }
        }
        let mut s = (sample.rate - known) / unknown_weight;
        if !(s > 0.0) {
            clamped += 1;
            s = 0.0;
        }
        solved_omega.push(w0);
        solved_value.push(s);
    }
    let probe_omega: Vec<f64> = solved_omega.iter().rev().copied().collect();
    let probe_values: Vec<f64> = solved_value.iter().rev().copied().collect();

    let lo = probe_omega[0];
    let hi = probe_omega[probe_omega.len() - 1];
    let spectrum = if probe_omega.len() >= 2 && out_grid.min() >= lo * (1.0 - 1e-9) && out_grid.max() <= hi * (1.0 + 1e-9) {
        let interp = SampledSpectrum::new(&probe_omega, &probe_values);
        let values = out_grid.omega().iter().map(|&w| interp.value(w)).collect();
        Some(NoiseSpectrum::new(out_grid, values, None)?)
    } else if opts.output_grid.is_some() {
        return Err(invalid(format!(
            "delays cover probe frequencies [{lo:e}, {hi:e}] rad/s but the output grid spans [{:e}, {:e}]",
            out_grid.min(),
            out_grid.max()
        )));
    } else {
        None
    };

    Ok(AlvarezSuterResult { probe_omega, probe_values, rates, clamped, spectrum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::coherence_curve;
    use crate::spectrum::{LorentzianParams, OneOverFParams};

    #[test]
    fn delta_inversion_examples() {
        let grid = TimeGrid::long_window();
        let ones = CoherenceCurve::from_coherence(grid.clone(), vec![1.0; 151], SequenceFamily::Hahn).unwrap();
        let d = delta_inversion(&ones, 1).unwrap();
        assert!(d.spectrum.values.iter().all(|&v| v == 0.0));
        assert_eq!(d.clamped, 151);

        let times: Vec<f64> = (0..151).map(|i| 0.5 + i as f64 * 0.01).collect();
        let g = TimeGrid::new(times).unwrap();
        let chi: Vec<f64> = g.times().iter().map(|&t| if t == 1.0 { 1.0 } else { 0.3 }).collect();
        let c = CoherenceCurve::from_chi(g.clone(), chi, SequenceFamily::Hahn).unwrap();
        let d = delta_inversion(&c, 1).unwrap();
        let idx = d.spectrum.grid.omega().iter().position(|w| (w - PI).abs() < 1e-12).unwrap();
        assert!((d.spectrum.values[idx] - PI).abs() < 1e-12);
    }

    #[test]
    fn delta_inversion_of_white_hahn_overestimates_by_half_pi() {
        let s0 = 2e4;
        let grid = TimeGrid::long_window();
        let chi = grid.times().iter().map(|t| s0 * t / 2.0).collect();
        let c = CoherenceCurve::from_chi(grid, chi, SequenceFamily::Hahn).unwrap();
        let d = delta_inversion(&c, 1).unwrap();
        for v in d.spectrum.values {
            assert!((v / (PI * s0 / 2.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_inversion_is_exact_for_delta_kernel() {
        // χ(t) = t S(π/t)/π is what a delta-function filter at ω₀ produces.
        let grid = TimeGrid::long_window();
        let p = LorentzianParams::new(1e4, 2e-5).unwrap();
        let chi = grid.times().iter().map(|&t| t * p.value(PI / t) / PI).collect();
        let c = CoherenceCurve::from_chi(grid, chi, SequenceFamily::Hahn).unwrap();
        let d = delta_inversion(&c, 1).unwrap();
        for (w, v) in d.spectrum.grid.omega().iter().zip(&d.spectrum.values) {
            assert!((v / p.value(*w) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_pair_is_self_consistent() {
        let grid = TimeGrid::long_window();
        let fm = ForwardModel::default();
        let params = StretchedExpParams::new(300e-6, 1.0).unwrap();
        let pair = phenomenological_roundtrip(&params, &grid, &SequenceFamily::Hahn, 0.0, &fm).unwrap();
        let again = coherence_curve(&pair.spectrum, &SequenceFamily::Hahn, &grid, 0.0).unwrap();
        assert_eq!(again.coherence, pair.curve.coherence);
        // The tagged spectrum equals the delta inversion of the original decay.
        let original = phenomenological_curve(&params, &grid, &SequenceFamily::Hahn).unwrap();
        let inv = delta_inversion(&original, 1).unwrap();
        for (a, b) in inv.spectrum.values.iter().zip(&pair.spectrum.values) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_sensitivities() {
        let s = compute_sensitivities(1e-5, 64, 0.0, 7).unwrap();
        for &(k, a) in &s.coefficients {
            assert_eq!(k % 2, 1);
            assert!((a - 4.0 / (PI * PI * (k * k) as f64)).abs() < 1e-15);
        }
        assert!((s.total - 0.5).abs() < 1e-15);
        let w = windowed_sensitivities(1e-5, 64, 0.0, 7).unwrap();
        // The windowed weights include the spread of each lobe, so they
        // agree on the leading harmonic only roughly.
        assert!((w.get(1) / s.get(1) - 1.0).abs() < 0.1);
        assert!(compute_sensitivities(1e-5, 2, 0.0, 7).is_err());
        assert!(compute_sensitivities(1e-5, 8, 0.0, 4).is_err());
    }

    #[test]
    fn leading_sensitivity_is_scale_invariant() {
        let a: Vec<f64> = [1e-6, 1e-5, 1e-4]
            .iter()
            .map(|&t| windowed_sensitivities(t, 64, 0.0, 1).unwrap().get(1))
            .collect();
        for v in &a {
            assert!((v / a[0] - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn white_noise_rate_matches_sensitivity_sum() {
        let s0 = 5e3;
        let spec = sample_spectrum(&CompositeModel::white(s0), &FrequencyGrid::log_spaced(1e4, 1e7).unwrap()).unwrap();
        let fm = ForwardModel::default();
        let tau = 2e-6;
        let times: Vec<f64> = [4usize, 8, 16, 32, 64].iter().map(|&n| n as f64 * tau).collect();
        let chis: Vec<f64> = [4usize, 8, 16, 32, 64]
            .iter()
            .zip(&times)
            .map(|(&n, &t)| fm.chi(&spec, &cpmg(n, t, 0.0).unwrap()))
            .collect();
        let (rate, _) = fit_rate(&times, &chis);
        let sens = compute_sensitivities(tau, 64, 0.0, 7).unwrap();
        assert!((sens.total * s0 / rate - 1.0).abs() < 0.02);
    }

    #[test]
    fn white_noise_reconstruction_is_flat() {
        let s0 = 5e3;
        let grid = FrequencyGrid::log_spaced(1e4, 1e6).unwrap();
        let spec = sample_spectrum(&CompositeModel::white(s0), &grid).unwrap();
        let res = alvarez_suter(&spec, &AlvarezSuterOptions::default()).unwrap();
        let out = res.spectrum.unwrap();
        for v in out.values {
            assert!((v / s0 - 1.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn single_delay_first_harmonic_reduces_to_ratio() {
        let grid = FrequencyGrid::log_spaced(1e4, 1e6).unwrap();
        let spec = sample_spectrum(
            &CompositeModel::one_over_f(OneOverFParams::new(1e7, 1.0).unwrap()),
            &grid,
        )
        .unwrap();
        let opts = AlvarezSuterOptions {
            tau_grid: Some(vec![3e-6]),
            k_max: 1,
            tail_correction: false,
            ..AlvarezSuterOptions::default()
        };
        let res = alvarez_suter(&spec, &opts).unwrap();
        let a1 = compute_sensitivities(3e-6, 64, 0.0, 1).unwrap().get(1);
        assert!((res.probe_values[0] - res.rates[0].rate / a1).abs() < 1e-12 * res.probe_values[0]);
        assert!(res.spectrum.is_none());
    }
}
