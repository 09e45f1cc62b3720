//! Decoherence functional and coherence curves.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{kernel_for, QuadratureConfig};
use crate::sequence::{PulseSequence, SequenceFamily, TimeGrid};
use crate::spectrum::{CompositeModel, LorentzianParams, NoiseSpectrum};

/// Parameters of `C(t) = exp(-(t/t2)^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpParams {
    pub t2: f64,
    pub p: f64,
}

impl StretchedExpParams {
    pub fn new(t2: f64, p: f64) -> Result<Self> {
        let s = Self { t2, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2.is_finite() && self.t2 > 0.0 && self.p.is_finite() && self.p > 0.0) {
            return Err(invalid(format!(
                "stretched exponential needs t2 > 0 and p > 0, got t2={} p={}",
                self.t2, self.p
            )));
        }
        Ok(())
    }

    pub fn chi(&self, t: f64) -> f64 {
        (t / self.t2).powf(self.p)
    }
}

/// Coherence `C(t)` on a time grid, with `χ = -ln C` when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub grid: TimeGrid,
    pub coherence: Vec<f64>,
    pub chi: Option<Vec<f64>>,
    pub family: SequenceFamily,
}

impl CoherenceCurve {
    pub fn from_chi(grid: TimeGrid, chi: Vec<f64>, family: SequenceFamily) -> Result<Self> {
        if chi.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} χ values for {} times", chi.len(), grid.len())));
        }
        if let Some(bad) = chi.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Numerical(format!("decoherence functional must be finite and >= 0, got {bad}")));
        }
        let coherence = chi.iter().map(|c| (-c).exp()).collect();
        Ok(Self { grid, coherence, chi: Some(chi), family })
    }

    /// A measured or predicted curve without χ. Values must be finite.
    pub fn from_coherence(grid: TimeGrid, coherence: Vec<f64>, family: SequenceFamily) -> Result<Self> {
        if coherence.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} coherence values for {} times",
                coherence.len(),
                grid.len()
            )));
        }
        if coherence.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coherence values must be finite"));
        }
        Ok(Self { grid, coherence, chi: None, family })
    }

    /// First time at which the curve crosses `1/e`, interpolated in log time.
    pub fn t2_crossing(&self) -> Option<f64> {
        let target = (-1.0f64).exp();
        let t = self.grid.times();
        let c = &self.coherence;
        if c[0] <= target {
            return None;
        }
        for i in 1..c.len() {
            if c[i] <= target {
                let (a, b) = (c[i - 1], c[i]);
                let f = (a - target) / (a - b);
                return Some((t[i - 1].ln() + f * (t[i].ln() - t[i - 1].ln())).exp());
            }
        }
        None
    }
}

pub fn stretched_exponential(
    params: &StretchedExpParams,
    grid: &TimeGrid,
    family: SequenceFamily,
) -> Result<CoherenceCurve> {
    params.validate()?;
    let chi = grid.times().iter().map(|&t| params.chi(t)).collect();
    CoherenceCurve::from_chi(grid.clone(), chi, family)
}

/// χ at one time together with a refinement check.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiEstimate {
    pub chi: f64,
    /// `|χ_refined - χ| / |χ_refined|` against a rule of twice the density.
    pub relative_change: f64,
    pub warning: Option<String>,
}

/// Evaluates the decoherence integral with the product quadrature.
#[derive(Debug, Clone, Copy)]
pub struct ForwardModel {
    pub config: QuadratureConfig,
    /// Relative refinement change above which an accuracy warning is attached.
    pub tolerance: f64,
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self { config: QuadratureConfig::default(), tolerance: 1e-6 }
    }
}

impl ForwardModel {
    pub fn with_config(config: QuadratureConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn chi(&self, spec: &NoiseSpectrum, seq: &PulseSequence) -> f64 {
        let eval = spec.evaluator();
        let kernel = kernel_for(seq, &self.config);
        kernel.chi(seq.total_time(), |w| eval.value(w)).max(0.0)
    }

    pub fn chi_checked(&self, spec: &NoiseSpectrum, seq: &PulseSequence) -> ChiEstimate {
        let coarse = self.chi(spec, seq);
        let fine = Self { config: self.config.refined(), ..*self }.chi(spec, seq);
        let relative_change = if fine == 0.0 { (coarse - fine).abs() } else { ((coarse - fine) / fine).abs() };
        let warning = (relative_change > self.tolerance).then(|| {
            format!("quadrature refinement changed χ by {relative_change:.2e} (tolerance {:.0e})", self.tolerance)
        });
        ChiEstimate { chi: coarse, relative_change, warning }
    }

    /// χ at every grid time, rebuilding the family's sequence at each.
    pub fn chi_curve(
        &self,
        spec: &NoiseSpectrum,
        family: &SequenceFamily,
        grid: &TimeGrid,
        tau_pi: f64,
    ) -> Result<Vec<f64>> {
        let eval = spec.evaluator();
        grid.times()
            .iter()
            .map(|&t| {
                let seq = family.build(t, tau_pi).map_err(|e| {
                    Error::InvalidDuration(format!("cannot build {family} at t = {t:e} s: {e}"))
                })?;
                let kernel = kernel_for(&seq, &self.config);
                Ok(kernel.chi(t, |w| eval.value(w)).max(0.0))
            })
            .collect()
    }

    pub fn coherence_curve(
        &self,
        spec: &NoiseSpectrum,
        family: &SequenceFamily,
        grid: &TimeGrid,
        tau_pi: f64,
    ) -> Result<CoherenceCurve> {
        let chi = self.chi_curve(spec, family, grid, tau_pi)?;
        CoherenceCurve::from_chi(grid.clone(), chi, family.clone())
    }
}

/// χ for one sequence with the default quadrature and a refinement check.
pub fn chi_of_t(spec: &NoiseSpectrum, seq: &PulseSequence) -> ChiEstimate {
    ForwardModel::default().chi_checked(spec, seq)
}

pub fn coherence_curve(
    spec: &NoiseSpectrum,
    family: &SequenceFamily,
    grid: &TimeGrid,
    tau_pi: f64,
) -> Result<CoherenceCurve> {
    ForwardModel::default().coherence_curve(spec, family, grid, tau_pi)
}

/// `∫_0^d (d - s) e^{-s/τ} cos(ω_c s) ds`.
fn lorentzian_lag_integral(p: &LorentzianParams, d: f64) -> f64 {
    let (zr, zi) = (1.0 / p.tau_c, -p.center);
    let (wr, wi) = (zr * d, zi * d);
    if (wr * wr + wi * wi).sqrt() < 0.1 {
        // d² Σ_m (-zd)^m / (m+2)!
        let (mut tr, mut ti) = (1.0, 0.0);
        let mut sr = 0.0;
        let mut fact = 2.0;
        for m in 0..20 {
            sr += tr / fact;
            let (nr, ni) = (-(tr * wr - ti * wi), -(tr * wi + ti * wr));
            tr = nr;
            ti = ni;
            fact *= (m + 3) as f64;
        }
        return d * d * sr;
    }
    // Re[d/z - (1 - e^{-zd})/z²]
    let den = zr * zr + zi * zi;
    let (ir, ii) = (zr / den, -zi / den);
    let e = (-wr).exp();
    let (er, ei) = (1.0 - e * wi.cos(), e * wi.sin());
    let (i2r, i2i) = (ir * ir - ii * ii, 2.0 * ir * ii);
    let first = d * ir;
    let second = er * i2r - ei * i2i;
    first - second
}

/// Exact χ by summing over pairs of filter impulses, for spectra made of
/// Lorentzian and white components. Returns `None` for other models.
pub fn chi_closed_form(model: &CompositeModel, seq: &PulseSequence) -> Option<f64> {
    let (lor, white) = model.lorentzian_and_white()?;
    let pts = seq.virtual_points();
    let lag_value = |d: f64| -> f64 {
        let mut h = white * d / 4.0;
        for p in &lor {
            h += p.delta * p.delta / (4.0 * PI) * lorentzian_lag_integral(p, d);
        }
        h
    };
    let mut acc = 0.0;
    for v in 0..pts.len() {
        for w in v + 1..pts.len() {
            acc += pts[v].1 * pts[w].1 * lag_value(pts[w].0 - pts[v].0);
        }
    }
    Some((-2.0 * acc).max(0.0))
}
