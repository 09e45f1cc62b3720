//! π-pulse placement that minimizes χ at a fixed total time.
//!
//! Pulse centers are parametrized by the free gaps between pulse edges
//! (less the minimum slack); the gaps are non-negative and sum to a
//! constant, so the feasible set is a scaled simplex. Optimization is
//! projected gradient descent with Barzilai-Borwein steps and an Armijo
//! backtracking line search, so every accepted iterate is feasible and no
//! worse than the previous one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::chi_closed_form;
use crate::quadrature::{build_kernel, QuadratureConfig};
use crate::sequence::{cpmg, udd, PulseSequence};
use crate::spectrum::NoiseSpectrum;

#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub spectrum: NoiseSpectrum,
    pub n: usize,
    pub target_time: f64,
    pub tau_pi: f64,
    /// Starting layout; CPMG-n when `None`.
    pub initial: Option<PulseSequence>,
    /// First-order tolerance on the projected gradient (normalized units).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl OptimizationProblem {
    pub fn new(spectrum: NoiseSpectrum, n: usize, target_time: f64, tau_pi: f64) -> Self {
        Self { spectrum, n, target_time, tau_pi, initial: None, tolerance: 1e-7, max_iterations: 300 }
    }

    /// Minimum extra slack between pulses and at the sequence ends.
    pub fn min_slack(&self) -> f64 {
        if self.tau_pi > 0.0 {
            self.tau_pi / 10.0
        } else {
            1e-6 * self.target_time
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub sequence: PulseSequence,
    pub c_init: f64,
    pub c_udd: f64,
    pub c_opt: f64,
    pub absolute_enhancement: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// χ as a function of pulse centers at fixed total time.
struct Objective<'a> {
    spectrum: &'a NoiseSpectrum,
    total: f64,
    tau_pi: f64,
    closed: bool,
    quad: QuadratureConfig,
}

impl<'a> Objective<'a> {
    fn new(spectrum: &'a NoiseSpectrum, total: f64, tau_pi: f64) -> Self {
        let closed = spectrum.model.as_ref().is_some_and(|m| m.lorentzian_and_white().is_some());
        Self { spectrum, total, tau_pi, closed, quad: QuadratureConfig::default() }
    }

    fn chi_seq(&self, seq: &PulseSequence) -> f64 {
        if self.closed {
            if let Some(v) = self.spectrum.model.as_ref().and_then(|m| chi_closed_form(m, seq)) {
                return v;
            }
        }
        // Uncached kernel: every trial layout is new.
        let t = seq.total_time();
        let pts: Vec<(f64, f64)> = seq.virtual_points().into_iter().map(|(x, b)| (x / t, b)).collect();
        let eval = self.spectrum.evaluator();
        build_kernel(&pts, &self.quad).chi(t, |w| eval.value(w)).max(0.0)
    }

    fn chi(&self, centers: &[f64]) -> Result<f64> {
        let seq = PulseSequence::new(self.total, centers.to_vec(), self.tau_pi)?;
        Ok(self.chi_seq(&seq))
    }
}

/// Gap coordinates of a layout, normalized by the total time.
struct Gaps {
    lead: f64,
    spacing: f64,
    total: f64,
}

impl Gaps {
    fn new(p: &OptimizationProblem) -> Result<Self> {
        let delta = p.min_slack();
        let lead = 0.5 * p.tau_pi + delta;
        let spacing = p.tau_pi + delta;
        let budget = p.target_time - 2.0 * lead - (p.n as f64 - 1.0) * spacing;
        if !(budget > 0.0) {
            return Err(Error::InvalidDuration(format!(
                "{} pulses of {:e} s with slack {delta:e} s do not fit in {:e} s",
                p.n, p.tau_pi, p.target_time
            )));
        }
        Ok(Self { lead, spacing, total: p.target_time })
    }

    fn budget(&self, n: usize) -> f64 {
        (self.total - 2.0 * self.lead - (n as f64 - 1.0) * self.spacing) / self.total
    }

    fn to_centers(&self, g: &[f64]) -> Vec<f64> {
        let n = g.len() - 1;
        let mut c = Vec::with_capacity(n);
        let mut pos = self.lead;
        for (k, gk) in g[..n].iter().enumerate() {
            pos += gk * self.total;
            c.push(pos);
            if k + 1 < n {
                pos += self.spacing;
            }
        }
        c
    }

    fn gaps_of(&self, c: &[f64]) -> Vec<f64> {
        let n = c.len();
        let mut g = Vec::with_capacity(n + 1);
        g.push((c[0] - self.lead) / self.total);
        for w in c.windows(2) {
            g.push((w[1] - w[0] - self.spacing) / self.total);
        }
        g.push((self.total - self.lead - c[n - 1]) / self.total);
        g
    }
}

/// Euclidean projection onto `{x ≥ 0, Σx = s}`.
fn project_simplex(v: &[f64], s: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - s) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Central-difference gradient of χ in gap coordinates.
fn gap_gradient(obj: &Objective, gaps: &Gaps, g: &[f64]) -> Result<Vec<f64>> {
    let centers = gaps.to_centers(g);
    let n = centers.len();
    let h0 = 1e-4 * gaps.total;
    let half = 0.5 * obj.tau_pi;
    let mut dc = vec![0.0; n];
    for k in 0..n {
        let left = if k == 0 { centers[0] - half } else { centers[k] - centers[k - 1] - 2.0 * half };
        let right = if k + 1 == n { gaps.total - centers[k] - half } else { centers[k + 1] - centers[k] - 2.0 * half };
        // stay inside the non-overlap region
        let h = h0.min(0.5 * left).min(0.5 * right);
        if !(h > 0.0) {
            continue;
        }
        let mut c = centers.clone();
        c[k] = centers[k] + h;
        let up = obj.chi(&c)?;
        c[k] = centers[k] - h;
        let dn = obj.chi(&c)?;
        dc[k] = (up - dn) / (2.0 * h);
    }
    // center k moves with every gap before it
    let mut dg = vec![0.0; n + 1];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc += dc[k];
        dg[k] = acc * gaps.total;
    }
    Ok(dg)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Local descent from `start`; returns (centers, χ, iterations, converged).
fn descend(p: &OptimizationProblem, obj: &Objective, start: &[f64]) -> Result<(Vec<f64>, f64, usize, bool)> {
    let gaps = Gaps::new(p)?;
    let budget = gaps.budget(p.n);
    let mut g = project_simplex(&gaps.gaps_of(start), budget);
    let mut f = obj.chi(&gaps.to_centers(&g))?;
    let mut grad = gap_gradient(obj, &gaps, &g)?;
    let mut step = 1e-3 * budget / grad.iter().map(|x| x.abs()).fold(1e-300, f64::max);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < p.max_iterations {
        let pg = project_simplex(&g.iter().zip(&grad).map(|(x, d)| x - d).collect::<Vec<_>>(), budget);
        let stationarity = g.iter().zip(&pg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if stationarity <= p.tolerance * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut a = step;
        for _ in 0..40 {
            let trial = project_simplex(&g.iter().zip(&grad).map(|(x, d)| x - a * d).collect::<Vec<_>>(), budget);
            let d: Vec<f64> = trial.iter().zip(&g).map(|(t, x)| t - x).collect();
            let decrease = -dot(&grad, &d);
            if decrease <= 0.0 {
                a *= 0.5;
                continue;
            }
            match obj.chi(&gaps.to_centers(&trial)) {
                Ok(ft) if ft <= f - 1e-4 * decrease => {
                    accepted = Some((trial, ft));
                    break;
                }
                _ => a *= 0.5,
            }
        }
        let Some((next, fn_)) = accepted else {
            // no descent along the projected gradient: stationary to precision
            converged = true;
            break;
        };
        let new_grad = gap_gradient(obj, &gaps, &next)?;
        let s: Vec<f64> = next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { a * 2.0 };
        g = next;
        f = fn_;
        grad = new_grad;
    }
    Ok((gaps.to_centers(&g), f, iterations, converged))
}

fn coherence(chi: f64) -> f64 {
    (-chi).exp()
}

/// Optimizes pulse centers from the problem's initial layout (CPMG-n by
/// default). Falls back to the initial layout if descent fails or does not
/// improve on it.
pub fn optimize_pulses(p: &OptimizationProblem) -> Result<OptimizationResult> {
    if p.n == 0 {
        return Err(invalid("need at least one pulse"));
    }
    let obj = Objective::new(&p.spectrum, p.target_time, p.tau_pi);
    let init = match &p.initial {
        Some(s) => {
            if s.n() != p.n || s.total_time() != p.target_time || s.pi_duration() != p.tau_pi {
                return Err(invalid("initial sequence does not match the problem's n, time and pulse duration"));
            }
            s.clone()
        }
        None => cpmg(p.n, p.target_time, p.tau_pi)?,
    };
    let udd_seq = udd(p.n, p.target_time, p.tau_pi)?;
    let chi_init = obj.chi_seq(&init);
    let chi_udd = obj.chi_seq(&udd_seq);
    let (mut best, mut chi_best, iterations, converged) = match descend(p, &obj, init.centers()) {
        Ok(r) => r,
        Err(e) if e.is_numerical() => (init.centers().to_vec(), chi_init, 0, false),
        Err(e) => return Err(e),
    };
    if !(chi_best <= chi_init) {
        best = init.centers().to_vec();
        chi_best = chi_init;
    }
    let sequence = PulseSequence::new(p.target_time, best, p.tau_pi)?;
    let (c_init, c_opt) = (coherence(chi_init), coherence(chi_best));
    Ok(OptimizationResult {
        sequence,
        c_init,
        c_udd: coherence(chi_udd),
        c_opt,
        absolute_enhancement: c_opt - c_init,
        iterations,
        converged,
    })
}

/// Optimization started from both CPMG and UDD layouts, keeping the better.
pub fn optimize_multistart(p: &OptimizationProblem) -> Result<OptimizationResult> {
    let from_cpmg = optimize_pulses(&OptimizationProblem { initial: None, ..p.clone() })?;
    let udd_start = udd(p.n, p.target_time, p.tau_pi)?;
    let from_udd = optimize_pulses(&OptimizationProblem { initial: Some(udd_start), ..p.clone() })?;
    // report against CPMG regardless of which start won
    let best = if from_udd.c_opt > from_cpmg.c_opt { from_udd } else { from_cpmg.clone() };
    Ok(OptimizationResult {
        c_init: from_cpmg.c_init,
        c_udd: from_cpmg.c_udd,
        absolute_enhancement: best.c_opt - from_cpmg.c_init,
        ..best
    })
}

/// One spectrum of a benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub c_cpmg: f64,
    pub c_udd: f64,
    pub c_opt: f64,
    pub enh_udd: f64,
    pub enh_opt: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Aggregated enhancements in one initial-coherence bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementBin {
    pub initial_coherence_bin: String,
    pub mean_enh_udd: f64,
    pub mean_enh_opt: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub rows: Vec<BenchmarkRow>,
    pub results: Vec<OptimizationResult>,
    pub bins: Vec<EnhancementBin>,
}

/// Runs the multi-start optimization for every `(spectrum, target_time)`
/// pair in parallel and bins enhancements by CPMG coherence in steps of 0.1.
pub fn benchmark(cases: &[(NoiseSpectrum, f64)], n: usize, tau_pi: f64) -> Result<Benchmark> {
    let results: Vec<OptimizationResult> = cases
        .par_iter()
        .map(|(s, t)| optimize_multistart(&OptimizationProblem::new(s.clone(), n, *t, tau_pi)))
        .collect::<Result<_>>()?;
    let rows: Vec<BenchmarkRow> = results
        .iter()
        .map(|r| BenchmarkRow {
            c_cpmg: r.c_init,
            c_udd: r.c_udd,
            c_opt: r.c_opt,
            enh_udd: r.c_udd - r.c_init,
            enh_opt: r.c_opt - r.c_init,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();
    Ok(Benchmark { bins: bin_enhancements(&rows), rows, results })
}

pub fn bin_enhancements(rows: &[BenchmarkRow]) -> Vec<EnhancementBin> {
    let mut acc = [(0.0, 0.0, 0usize); 10];
    for r in rows {
        let b = ((r.c_cpmg * 10.0).ceil() as usize).clamp(1, 10) - 1;
        acc[b].0 += r.enh_udd;
        acc[b].1 += r.enh_opt;
        acc[b].2 += 1;
    }
    acc.iter()
        .enumerate()
        .filter(|(_, a)| a.2 > 0)
        .map(|(i, a)| EnhancementBin {
            initial_coherence_bin: format!("{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0),
            mean_enh_udd: a.0 / a.2 as f64,
            mean_enh_opt: a.1 / a.2 as f64,
            count: a.2,
        })
        .collect()
}

pub fn write_bins_csv<W: std::io::Write>(bins: &[EnhancementBin], mut out: W) -> Result<()> {
    writeln!(out, "initial_coherence_bin,mean_enh_udd,mean_enh_opt,count")?;
    for b in bins {
        writeln!(out, "{},{:e},{:e},{}", b.initial_coherence_bin, b.mean_enh_udd, b.mean_enh_opt, b.count)?;
    }
    Ok(())
}
