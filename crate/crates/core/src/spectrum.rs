//! Parametric noise-spectrum families and sampled spectra.
//!
//! All spectra are one-sided power spectral densities in s⁻¹ over angular
//! frequency, normalized so that the decoherence integral
//! `χ = ∫ dω/2π · S(ω) F(ωt)/ω²` is dimensionless.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::sequence::TimeGrid;

/// Number of samples on every time and frequency grid.
pub const GRID_POINTS: usize = 151;

fn check_grid(values: &[f64], what: &str) -> Result<()> {
    if values.len() != GRID_POINTS {
        return Err(Error::GridMismatch(format!(
            "{what} must have {GRID_POINTS} points, got {}",
            values.len()
        )));
    }
    for w in values.windows(2) {
        if !(w[1] > w[0]) {
            return Err(invalid(format!("{what} must be strictly increasing")));
        }
    }
    if !(values[0] > 0.0) || !values[GRID_POINTS - 1].is_finite() {
        return Err(invalid(format!("{what} entries must be positive and finite")));
    }
    Ok(())
}

pub(crate) fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Angular frequencies (rad/s) on which spectra are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid {
    omega: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        check_grid(&omega, "frequency grid")?;
        Ok(Self { omega })
    }

    pub fn log_spaced(omega_min: f64, omega_max: f64) -> Result<Self> {
        if !(omega_min > 0.0 && omega_max > omega_min && omega_max.is_finite()) {
            return Err(invalid("frequency grid bounds must satisfy 0 < min < max"));
        }
        Self::new(log_space(omega_min, omega_max, GRID_POINTS))
    }

    /// Probe frequencies `nπ/t` of an `n`-pulse sequence, ascending, so the
    /// entry at index `i` corresponds to time index `150 - i`.
    pub fn from_time_grid(times: &TimeGrid, pulses: usize) -> Result<Self> {
        if pulses == 0 {
            return Err(invalid("probe frequency needs at least one pulse"));
        }
        let n = pulses as f64;
        let omega = times.times().iter().rev().map(|t| n * PI / t).collect();
        Self::new(omega)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.omega[0]
    }

    pub fn max(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(g: FrequencyGrid) -> Self {
        g.omega
    }
}

/// A Lorentzian bath: coupling strength `delta` (rad/s) and correlation time
/// `tau_c` (s). A nonzero `center` (rad/s) shifts the line away from zero
/// frequency, symmetrized so the spectrum stays even in ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub delta: f64,
    pub tau_c: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub center: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl LorentzianParams {
    pub fn new(delta: f64, tau_c: f64) -> Result<Self> {
        let p = Self { delta, tau_c, center: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn shifted(delta: f64, tau_c: f64, center: f64) -> Result<Self> {
        let p = Self { delta, tau_c, center };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(invalid(format!("Lorentzian delta must be positive, got {}", self.delta)));
        }
        if !(self.tau_c.is_finite() && self.tau_c > 0.0) {
            return Err(invalid(format!("Lorentzian tau_c must be positive, got {}", self.tau_c)));
        }
        if !(self.center.is_finite() && self.center >= 0.0) {
            return Err(invalid(format!("Lorentzian center must be non-negative, got {}", self.center)));
        }
        Ok(())
    }

    /// Unchecked evaluation; parameters are assumed valid.
    #[inline]
    pub fn value(&self, omega: f64) -> f64 {
        let amp = self.delta * self.delta * self.tau_c / PI;
        if self.center == 0.0 {
            let x = omega * self.tau_c;
            amp / (1.0 + x * x)
        } else {
            let a = (omega - self.center) * self.tau_c;
            let b = (omega + self.center) * self.tau_c;
            0.5 * amp * (1.0 / (1.0 + a * a) + 1.0 / (1.0 + b * b))
        }
    }
}

/// `A / f^α` noise with `f = ω/2π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneOverFParams {
    pub amplitude: f64,
    pub alpha: f64,
}

impl OneOverFParams {
    pub fn new(amplitude: f64, alpha: f64) -> Result<Self> {
        let p = Self { amplitude, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(invalid(format!("1/f amplitude must be positive, got {}", self.amplitude)));
        }
        if !self.alpha.is_finite() {
            return Err(invalid("1/f exponent must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, omega: f64) -> f64 {
        self.amplitude * (omega / (2.0 * PI)).powf(-self.alpha)
    }
}

pub fn eval_lorentzian(p: &LorentzianParams, omega: f64) -> Result<f64> {
    p.validate()?;
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("frequency must be finite and >= 0, got {omega}")));
    }
    Ok(p.value(omega))
}

pub fn eval_one_over_f(p: &OneOverFParams, omega: f64) -> Result<f64> {
    p.validate()?;
    if omega == 0.0 {
        return Err(Error::Domain("1/f spectrum diverges at zero frequency".into()));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("frequency must be finite and > 0, got {omega}")));
    }
    Ok(p.value(omega))
}

/// One additive term of a composite spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelComponent {
    Lorentzian(LorentzianParams),
    OneOverF(OneOverFParams),
    /// Power law obtained by the delta-function inversion of the decay
    /// `exp(-(t/t2)^p)` measured with `pulses` π-pulses:
    /// `S(ω) = (ω/n)·(nπ/(ω·t2))^p`.
    StretchedExp { t2: f64, p: f64, pulses: u32 },
    /// Flat spectrum.
    White { level: f64 },
}

impl ModelComponent {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelComponent::Lorentzian(p) => p.validate(),
            ModelComponent::OneOverF(p) => p.validate(),
            ModelComponent::StretchedExp { t2, p, pulses } => {
                if !(t2.is_finite() && *t2 > 0.0 && p.is_finite() && *p > 0.0 && *pulses >= 1) {
                    return Err(invalid("stretched-exponential spectrum needs t2 > 0, p > 0, pulses >= 1"));
                }
                Ok(())
            }
            ModelComponent::White { level } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(invalid("white-noise level must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Unchecked evaluation at `omega > 0`.
    #[inline]
    pub fn value(&self, omega: f64) -> f64 {
        match self {
            ModelComponent::Lorentzian(p) => p.value(omega),
            ModelComponent::OneOverF(p) => p.value(omega),
            ModelComponent::StretchedExp { t2, p, pulses } => {
                let n = *pulses as f64;
                (omega / n) * (n * PI / (omega * t2)).powf(*p)
            }
            ModelComponent::White { level } => *level,
        }
    }

    pub fn eval(&self, omega: f64) -> Result<f64> {
        match self {
            ModelComponent::Lorentzian(p) => eval_lorentzian(p, omega),
            ModelComponent::OneOverF(p) => eval_one_over_f(p, omega),
            _ => {
                self.validate()?;
                if !(omega > 0.0) || !omega.is_finite() {
                    return Err(Error::Domain(format!("frequency must be finite and > 0, got {omega}")));
                }
                Ok(self.value(omega))
            }
        }
    }
}

/// Spectrum families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    StretchedExpDerived,
    OneOverF,
    Lorentzian,
    DoubleLorentzian,
    OneOverFPlusLorentzian,
    White,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::StretchedExpDerived,
        ModelKind::OneOverF,
        ModelKind::Lorentzian,
        ModelKind::DoubleLorentzian,
        ModelKind::OneOverFPlusLorentzian,
        ModelKind::White,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::StretchedExpDerived => "stretched_exp",
            ModelKind::OneOverF => "one_over_f",
            ModelKind::Lorentzian => "lorentzian",
            ModelKind::DoubleLorentzian => "double_lorentzian",
            ModelKind::OneOverFPlusLorentzian => "one_over_f_plus_lorentzian",
            ModelKind::White => "white",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let kind = match norm.as_str() {
            "stretched_exp" | "stretched_exp_derived" | "phenomenological" => ModelKind::StretchedExpDerived,
            "one_over_f" | "1/f" | "1f" => ModelKind::OneOverF,
            "lorentzian" => ModelKind::Lorentzian,
            "double_lorentzian" => ModelKind::DoubleLorentzian,
            "one_over_f_plus_lorentzian" | "1/f+lorentzian" => ModelKind::OneOverFPlusLorentzian,
            "white" => ModelKind::White,
            _ => return Err(invalid(format!("unknown spectrum family '{s}'"))),
        };
        Ok(kind)
    }
}

/// A tagged sum of model components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeModel {
    pub kind: ModelKind,
    pub components: Vec<ModelComponent>,
}

impl CompositeModel {
    pub fn new(kind: ModelKind, components: Vec<ModelComponent>) -> Result<Self> {
        let m = Self { kind, components };
        m.validate()?;
        Ok(m)
    }

    pub fn lorentzian(p: LorentzianParams) -> Self {
        Self { kind: ModelKind::Lorentzian, components: vec![ModelComponent::Lorentzian(p)] }
    }

    pub fn double_lorentzian(a: LorentzianParams, b: LorentzianParams) -> Self {
        Self {
            kind: ModelKind::DoubleLorentzian,
            components: vec![ModelComponent::Lorentzian(a), ModelComponent::Lorentzian(b)],
        }
    }

    pub fn one_over_f(p: OneOverFParams) -> Self {
        Self { kind: ModelKind::OneOverF, components: vec![ModelComponent::OneOverF(p)] }
    }

    pub fn one_over_f_plus_lorentzian(f: OneOverFParams, l: LorentzianParams) -> Self {
        Self {
            kind: ModelKind::OneOverFPlusLorentzian,
            components: vec![ModelComponent::OneOverF(f), ModelComponent::Lorentzian(l)],
        }
    }

    pub fn white(level: f64) -> Self {
        Self { kind: ModelKind::White, components: vec![ModelComponent::White { level }] }
    }

    pub fn stretched_exp(t2: f64, p: f64, pulses: u32) -> Self {
        Self {
            kind: ModelKind::StretchedExpDerived,
            components: vec![ModelComponent::StretchedExp { t2, p, pulses }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            c.validate()?;
        }
        let count = |pred: fn(&ModelComponent) -> bool| self.components.iter().filter(|c| pred(c)).count();
        let lor = count(|c| matches!(c, ModelComponent::Lorentzian(_)));
        let onef = count(|c| matches!(c, ModelComponent::OneOverF(_)));
        let se = count(|c| matches!(c, ModelComponent::StretchedExp { .. }));
        let white = count(|c| matches!(c, ModelComponent::White { .. }));
        let total = self.components.len();
        let ok = match self.kind {
            ModelKind::Lorentzian => lor == 1 && total == 1,
            ModelKind::DoubleLorentzian => lor == 2 && total == 2,
            ModelKind::OneOverF => onef == 1 && total == 1,
            ModelKind::OneOverFPlusLorentzian => onef == 1 && lor == 1 && total == 2,
            ModelKind::StretchedExpDerived => se == 1 && total == 1,
            ModelKind::White => white == 1 && total == 1,
        };
        if !ok {
            return Err(invalid(format!(
                "component list does not match model kind {}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Sum of component values; parameters are assumed valid.
    #[inline]
    pub fn value(&self, omega: f64) -> f64 {
        self.components.iter().map(|c| c.value(omega)).sum()
    }

    pub fn eval(&self, omega: f64) -> Result<f64> {
        let mut s = 0.0;
        for c in &self.components {
            s += c.eval(omega)?;
        }
        Ok(s)
    }

    /// Lorentzian components, if every component is Lorentzian or white.
    pub(crate) fn lorentzian_and_white(&self) -> Option<(Vec<LorentzianParams>, f64)> {
        let mut lor = Vec::new();
        let mut white = 0.0;
        for c in &self.components {
            match c {
                ModelComponent::Lorentzian(p) => lor.push(*p),
                ModelComponent::White { level } => white += level,
                _ => return None,
            }
        }
        Some((lor, white))
    }
}

/// Spectrum samples on a frequency grid, optionally tagged with the model
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub model: Option<CompositeModel>,
}

impl NoiseSpectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, model: Option<CompositeModel>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} spectrum values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("spectrum values must be finite and >= 0, got {bad}")));
        }
        if let Some(m) = &model {
            m.validate()?;
        }
        Ok(Self { grid, values, model })
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values, model: None }
    }

    /// Value at an arbitrary frequency: the model if tagged, otherwise
    /// interpolation of the samples.
    pub fn value_at(&self, omega: f64) -> f64 {
        self.evaluator().value(omega)
    }

    pub fn evaluator(&self) -> SpectrumEvaluator<'_> {
        match &self.model {
            Some(m) => SpectrumEvaluator::Model(m),
            None => SpectrumEvaluator::Sampled(SampledSpectrum::new(self.grid.omega(), &self.values)),
        }
    }
}

/// Fast point evaluation of a spectrum at off-grid frequencies.
pub enum SpectrumEvaluator<'a> {
    Model(&'a CompositeModel),
    Sampled(SampledSpectrum),
}

impl SpectrumEvaluator<'_> {
    #[inline]
    pub fn value(&self, omega: f64) -> f64 {
        match self {
            SpectrumEvaluator::Model(m) => m.value(omega),
            SpectrumEvaluator::Sampled(s) => s.value(omega),
        }
    }
}

/// Log-log interpolation between samples with power-law extrapolation from
/// the end decades.
pub struct SampledSpectrum {
    log_omega: Vec<f64>,
    values: Vec<f64>,
    log_values: Vec<f64>,
    low_slope: f64,
    high_slope: f64,
}

impl SampledSpectrum {
    pub fn new(omega: &[f64], values: &[f64]) -> Self {
        let log_omega: Vec<f64> = omega.iter().map(|w| w.ln()).collect();
        let log_values: Vec<f64> = values
            .iter()
            .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
            .collect();
        let n = omega.len();
        let decade = std::f64::consts::LN_10;
        let lo_far = log_omega.partition_point(|&x| x < log_omega[0] + decade).min(n - 1).max(1);
        let hi_far = log_omega
            .partition_point(|&x| x <= log_omega[n - 1] - decade)
            .saturating_sub(1)
            .min(n - 2);
        let slope = |i: usize, j: usize| {
            let (a, b) = (log_values[i], log_values[j]);
            if a.is_finite() && b.is_finite() {
                (b - a) / (log_omega[j] - log_omega[i])
            } else {
                0.0
            }
        };
        Self {
            low_slope: slope(0, lo_far).clamp(-2.5, 4.0),
            high_slope: slope(hi_far, n - 1).clamp(-6.0, 0.5),
            log_omega,
            values: values.to_vec(),
            log_values,
        }
    }

    pub fn value(&self, omega: f64) -> f64 {
        let x = omega.ln();
        let n = self.log_omega.len();
        if x <= self.log_omega[0] {
            let v = self.values[0];
            return if v > 0.0 { (self.log_values[0] + self.low_slope * (x - self.log_omega[0])).exp() } else { 0.0 };
        }
        if x >= self.log_omega[n - 1] {
            let v = self.values[n - 1];
            return if v > 0.0 {
                (self.log_values[n - 1] + self.high_slope * (x - self.log_omega[n - 1])).exp()
            } else {
                0.0
            };
        }
        let j = self.log_omega.partition_point(|&g| g <= x).clamp(1, n - 1);
        let i = j - 1;
        let t = (x - self.log_omega[i]) / (self.log_omega[j] - self.log_omega[i]);
        if self.values[i] > 0.0 && self.values[j] > 0.0 {
            (self.log_values[i] + t * (self.log_values[j] - self.log_values[i])).exp()
        } else {
            self.values[i] + t * (self.values[j] - self.values[i])
        }
    }
}

/// Samples a model onto a grid.
pub fn sample_spectrum(model: &CompositeModel, grid: &FrequencyGrid) -> Result<NoiseSpectrum> {
    model.validate()?;
    let values = grid.omega().iter().map(|&w| model.eval(w)).collect::<Result<Vec<_>>>()?;
    NoiseSpectrum::new(grid.clone(), values, Some(model.clone()))
}

/// Result of a two-Lorentzian fit; `components[0]` has the longer
/// correlation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleLorentzianFit {
    pub components: [LorentzianParams; 2],
    /// RMS of `ln S_fit - ln S` over the grid.
    pub residual: f64,
    /// Set when one component carries a negligible share of the spectrum or
    /// the two correlation times coincide.
    pub degenerate: bool,
}

struct DoubleLorentzianProblem<'a> {
    omega: &'a [f64],
    log_values: Vec<f64>,
}

impl DoubleLorentzianProblem<'_> {
    fn parts(&self, x: &[f64], w: f64) -> (f64, f64, f64, f64) {
        let (d1, t1, d2, t2) = (x[0].exp(), x[1].exp(), x[2].exp(), x[3].exp());
        let u1 = w * t1;
        let u2 = w * t2;
        let l1 = d1 * d1 * t1 / PI / (1.0 + u1 * u1);
        let l2 = d2 * d2 * t2 / PI / (1.0 + u2 * u2);
        (l1, l2, u1 * u1, u2 * u2)
    }
}

impl LeastSquares for DoubleLorentzianProblem<'_> {
    fn residual_count(&self) -> usize {
        self.omega.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        for (i, &w) in self.omega.iter().enumerate() {
            let (l1, l2, _, _) = self.parts(x, w);
            out[i] = (l1 + l2).ln() - self.log_values[i];
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        for (i, &w) in self.omega.iter().enumerate() {
            let (l1, l2, q1, q2) = self.parts(x, w);
            let m = l1 + l2;
            let row = &mut out[4 * i..4 * i + 4];
            row[0] = 2.0 * l1 / m;
            row[1] = l1 / m * (1.0 - q1) / (1.0 + q1);
            row[2] = 2.0 * l2 / m;
            row[3] = l2 / m * (1.0 - q2) / (1.0 + q2);
        }
    }
}

/// Least-squares fit of a sum of two Lorentzians in log space, multi-start.
pub fn fit_double_lorentzian(spec: &NoiseSpectrum) -> Result<DoubleLorentzianFit> {
    if spec.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("double-Lorentzian fit needs strictly positive spectrum values".into()));
    }
    let omega = spec.grid.omega();
    let problem = DoubleLorentzianProblem {
        omega,
        log_values: spec.values.iter().map(|v| v.ln()).collect(),
    };
    let (w_lo, w_hi) = (spec.grid.min(), spec.grid.max());
    let scale = spec
        .values
        .iter()
        .zip(omega)
        .map(|(s, w)| (s * w).sqrt())
        .fold(0.0f64, f64::max);
    let lower = [
        (scale * 1e-6).ln(),
        (1e-3 / w_hi).ln(),
        (scale * 1e-6).ln(),
        (1e-3 / w_hi).ln(),
    ];
    let upper = [
        (scale * 1e6).ln(),
        (1e3 / w_lo).ln(),
        (scale * 1e6).ln(),
        (1e3 / w_lo).ln(),
    ];

    let interp = SampledSpectrum::new(omega, &spec.values);
    let start_for = |q: f64| {
        // Correlation time whose corner sits at log-quantile q of the grid,
        // with Δ matched to the spectrum level there.
        let w = (w_lo.ln() + q * (w_hi.ln() - w_lo.ln())).exp();
        let tau = 1.0 / w;
        let s = interp.value(w);
        let delta = (PI * s / tau).sqrt();
        (delta.ln(), tau.ln())
    };
    let starts = [(0.1, 0.9), (0.05, 0.6), (0.3, 0.95), (0.2, 0.5), (0.5, 0.8)];
    let opts = LmOptions { max_iterations: 400, ..LmOptions::default() };

    let mut best: Option<crate::fit::LmOutcome> = None;
    let mut any_converged = false;
    for &(qa, qb) in &starts {
        let (da, ta) = start_for(qa);
        let (db, tb) = start_for(qb);
        let x0 = [da, ta, db, tb];
        let out = levenberg_marquardt(&problem, &x0, &lower, &upper, &opts);
        if !out.cost.is_finite() {
            continue;
        }
        any_converged |= out.converged;
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
        if best.as_ref().is_some_and(|b| b.rms() < 1e-10) {
            break;
        }
    }
    let best = best.ok_or_else(|| Error::FitFailure {
        best_residual: f64::INFINITY,
        detail: "no start produced a finite residual".into(),
    })?;
    if !any_converged {
        return Err(Error::FitFailure {
            best_residual: best.rms(),
            detail: "iteration budget exhausted on every start".into(),
        });
    }

    let x = &best.x;
    let mut comps = [
        LorentzianParams { delta: x[0].exp(), tau_c: x[1].exp(), center: 0.0 },
        LorentzianParams { delta: x[2].exp(), tau_c: x[3].exp(), center: 0.0 },
    ];
    if comps[1].tau_c > comps[0].tau_c {
        comps.swap(0, 1);
    }
    let share = |p: &LorentzianParams| {
        omega
            .iter()
            .zip(&spec.values)
            .map(|(&w, &s)| p.value(w) / s)
            .fold(0.0f64, f64::max)
    };
    let degenerate = share(&comps[0]).min(share(&comps[1])) < 1e-4
        || (comps[0].tau_c / comps[1].tau_c - 1.0).abs() < 1e-2;
    Ok(DoubleLorentzianFit { components: comps, residual: best.rms(), degenerate })
}
