//! Product quadrature for the decoherence integral.
//!
//! With `u = ωT` the integral becomes `χ(T) = T/2π ∫ S(u/T) K(u) du` where
//! `K(u) = F(u)/u²` depends only on the sequence shape normalized to unit
//! length. `S` is interpolated by a polynomial in `ln u` on each panel, so
//! the integral reduces to a fixed weighted sum over spectrum samples; the
//! weights are moments of `K` against the interpolation basis, computed once
//! per shape with fine Gauss-Legendre rules that resolve every oscillation.
//!
//! Writing `K = (Σb² + Σ_{pairs} c·cos(u d))/u²`, each pair frequency `d`
//! is integrated explicitly up to `u·d ≈ oscillation_cutoff` and its
//! remaining tail is added in closed form, attached to the sample at the
//! cutoff. Above `u_max` only the mean `Σb²/u²` remains.

use std::collections::HashMap;
use std::f64::consts::{LN_10, PI};
use std::sync::{Arc, Mutex, OnceLock};

use crate::sequence::PulseSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Interpolation panels per decade of `u`.
    pub panels_per_decade: usize,
    /// Gauss-Legendre nodes (spectrum samples) per panel.
    pub nodes_per_panel: usize,
    /// Order of the fine rule used for the kernel moments.
    pub fine_order: usize,
    /// Largest phase advance `u·d` across one fine subpanel.
    pub max_phase_step: f64,
    /// Phase `u·d` beyond which a pair's oscillating tail is taken analytically.
    pub oscillation_cutoff: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            panels_per_decade: 12,
            nodes_per_panel: 16,
            fine_order: 12,
            max_phase_step: 1.5,
            oscillation_cutoff: 2000.0,
            u_min: 1e-8,
            u_max: 1e8,
        }
    }
}

impl QuadratureConfig {
    /// Twice the panel density and twice the fine resolution.
    pub fn refined(&self) -> Self {
        Self {
            panels_per_decade: 2 * self.panels_per_decade,
            max_phase_step: 0.5 * self.max_phase_step,
            ..*self
        }
    }

    fn key(&self) -> [u64; 7] {
        [
            self.panels_per_decade as u64,
            self.nodes_per_panel as u64,
            self.fine_order as u64,
            self.max_phase_step.to_bits(),
            self.oscillation_cutoff.to_bits(),
            self.u_min.to_bits(),
            self.u_max.to_bits(),
        ]
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature weights over `u` for one normalized sequence shape.
#[derive(Debug, Clone)]
pub struct ChiKernel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChiKernel {
    /// `χ(T) = T/2π Σ w_i S(u_i/T)`.
    #[inline]
    pub fn chi(&self, total_time: f64, spectrum: impl Fn(f64) -> f64) -> f64 {
        let inv = 1.0 / total_time;
        let mut acc = 0.0;
        for (&u, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * spectrum(u * inv);
        }
        total_time / (2.0 * PI) * acc
    }

    /// Nodes in `u = ωT`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ K(u) du`, i.e. the response to a flat unit spectrum times 2π/T.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

struct Lag {
    d: f64,
    c: f64,
    cutoff_edge: usize,
}

/// `∫_a^∞ cos x / x² dx` for large `a`.
fn cos_over_square_tail(a: f64) -> f64 {
    let a2 = a * a;
    // π/2 - Si(a) = f cos a + g sin a
    let f = (1.0 - 2.0 / a2 + 24.0 / (a2 * a2) - 720.0 / (a2 * a2 * a2)) / a;
    let g = (1.0 - 6.0 / a2 + 120.0 / (a2 * a2) - 5040.0 / (a2 * a2 * a2)) / a2;
    let (s, c) = a.sin_cos();
    c / a - (f * c + g * s)
}

/// Builds the kernel for impulses `(s, b)` with positions normalized to
/// [0, 1] and weights summing to zero.
pub fn build_kernel(points: &[(f64, f64)], cfg: &QuadratureConfig) -> ChiKernel {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (s, b) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == s => last.1 += b,
            _ => merged.push((s, b)),
        }
    }
    merged.retain(|p| p.1 != 0.0);
    let pts = merged;
    if pts.len() < 2 {
        return ChiKernel { nodes: vec![], weights: vec![] };
    }

    let sum_b2: f64 = pts.iter().map(|p| p.1 * p.1).sum();
    let sum_abs: f64 = pts.iter().map(|p| p.1.abs()).sum();
    const SERIES_TERMS: usize = 30;
    let mut moments = [0.0f64; SERIES_TERMS];
    for &(s, b) in &pts {
        let mut pw = 1.0;
        for m in moments.iter_mut() {
            *m += b * pw;
            pw *= s;
        }
    }
    moments[0] = 0.0;
    let mut inv_fact = [1.0f64; SERIES_TERMS];
    for j in 1..SERIES_TERMS {
        inv_fact[j] = inv_fact[j - 1] / j as f64;
    }
    let filter = |u: f64| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        if u < 0.5 {
            let mut pw = 1.0;
            for j in 0..SERIES_TERMS {
                let term = moments[j] * pw * inv_fact[j];
                match j % 4 {
                    0 => re += term,
                    1 => im += term,
                    2 => re -= term,
                    _ => im -= term,
                }
                pw *= u;
            }
        } else {
            for &(s, b) in &pts {
                let (sn, cs) = (u * s).sin_cos();
                re += b * cs;
                im += b * sn;
            }
        }
        re * re + im * im
    };

    let h = LN_10 / cfg.panels_per_decade as f64;
    let x0 = cfg.u_min.ln();

    let mut lags: Vec<Lag> = Vec::new();
    {
        let mut raw: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
        for v in 0..pts.len() {
            for w in v + 1..pts.len() {
                raw.push((pts[w].0 - pts[v].0, 2.0 * pts[v].1 * pts[w].1));
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (d, c) in raw {
            match lags.last_mut() {
                Some(last) if d - last.d <= 1e-13 => last.c += c,
                _ => lags.push(Lag { d, c, cutoff_edge: 0 }),
            }
        }
        lags.retain(|l| l.c != 0.0 && l.d > 0.0);
    }
    for lag in lags.iter_mut() {
        let u_cut = cfg.oscillation_cutoff / lag.d;
        lag.cutoff_edge = (((u_cut.ln() - x0) / h).ceil().max(1.0)) as usize;
    }
    let last_needed = lags.iter().map(|l| l.cutoff_edge).max().unwrap_or(1);
    let panels = (((cfg.u_max.ln() - x0) / h).ceil() as usize).max(last_needed);
    let d_max = lags.last().map_or(0.0, |l| l.d);

    let np = cfg.nodes_per_panel;
    let (gx, _) = gauss_legendre(np);
    let (fx, fw) = gauss_legendre(cfg.fine_order);
    let mut bary = vec![0.0; np];
    for j in 0..np {
        let mut p = 1.0;
        for k in 0..np {
            if k != j {
                p *= gx[j] - gx[k];
            }
        }
        bary[j] = 1.0 / p;
    }

    let mut nodes = Vec::with_capacity(panels * np + 4);
    let mut weights = Vec::with_capacity(panels * np + 4);
    let mut basis = vec![0.0; np];

    for p in 0..panels {
        let xa = x0 + p as f64 * h;
        let xb = xa + h;
        let mid = 0.5 * (xa + xb);
        let half = 0.5 * h;
        let active = lags.partition_point(|l| l.cutoff_edge > p);
        let full = active == lags.len();
        let d_act = if full { d_max } else if active > 0 { lags[active - 1].d } else { 0.0 };
        let width_u = xb.exp() - xa.exp();
        let subpanels = ((width_u * d_act / cfg.max_phase_step).ceil() as usize).max(1);
        let base = weights.len();
        for &x in gx.iter().take(np) {
            nodes.push((mid + half * x).exp());
            weights.push(0.0);
        }
        let sub_h = h / subpanels as f64;
        for q in 0..subpanels {
            let ya = xa + q as f64 * sub_h;
            let sub_mid = ya + 0.5 * sub_h;
            for (&fxi, &fwi) in fx.iter().zip(&fw) {
                let y = sub_mid + 0.5 * sub_h * fxi;
                let u = y.exp();
                let k = if full {
                    filter(u) / (u * u)
                } else {
                    let mut acc = sum_b2;
                    for lag in &lags[..active] {
                        acc += lag.c * (u * lag.d).cos();
                    }
                    acc / (u * u)
                };
                let val = 0.5 * sub_h * fwi * u * k;
                // Barycentric Lagrange basis in the panel's local coordinate.
                let z = (y - mid) / half;
                let mut exact = None;
                let mut denom = 0.0;
                for j in 0..np {
                    let diff = z - gx[j];
                    if diff == 0.0 {
                        exact = Some(j);
                        break;
                    }
                    basis[j] = bary[j] / diff;
                    denom += basis[j];
                }
                match exact {
                    Some(j) => weights[base + j] += val,
                    None => {
                        let scale = val / denom;
                        for j in 0..np {
                            weights[base + j] += scale * basis[j];
                        }
                    }
                }
            }
        }
    }

    // Below u_min: K ~ u^γ with γ = 2 when the first moment vanishes.
    let balanced = moments[1].abs() <= 1e-9 * sum_abs;
    let gamma = if balanced { 2.0 } else { 0.0 };
    let u_lo = cfg.u_min;
    nodes.push(u_lo);
    weights.push(filter(u_lo) / (u_lo * u_lo) * u_lo / (gamma + 1.0));

    // Oscillating tails of pairs whose cutoff lies inside the panel range.
    let mut tails: HashMap<usize, f64> = HashMap::new();
    for lag in &lags {
        let u_cut = (x0 + lag.cutoff_edge as f64 * h).exp();
        *tails.entry(lag.cutoff_edge).or_insert(0.0) += lag.c * lag.d * cos_over_square_tail(u_cut * lag.d);
    }
    let mut tail_edges: Vec<_> = tails.into_iter().collect();
    tail_edges.sort_by_key(|e| e.0);
    for (edge, w) in tail_edges {
        nodes.push((x0 + edge as f64 * h).exp());
        weights.push(w);
    }

    let u_end = (x0 + panels as f64 * h).exp();
    nodes.push(u_end);
    weights.push(sum_b2 / u_end);

    ChiKernel { nodes, weights }
}

#[derive(Hash, PartialEq, Eq)]
struct KernelKey {
    points: Vec<(i64, i64)>,
    config: [u64; 7],
}

const POSITION_SCALE: f64 = (1u64 << 40) as f64;
const CACHE_LIMIT: usize = 2048;

fn cache() -> &'static Mutex<HashMap<KernelKey, Arc<ChiKernel>>> {
    static CACHE: OnceLock<Mutex<HashMap<KernelKey, Arc<ChiKernel>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Kernel for a sequence, shared across calls with the same normalized shape.
pub fn kernel_for(seq: &PulseSequence, cfg: &QuadratureConfig) -> Arc<ChiKernel> {
    let t = seq.total_time();
    let points: Vec<(i64, i64)> = seq
        .virtual_points()
        .into_iter()
        .map(|(x, b)| ((x / t * POSITION_SCALE).round() as i64, b.round() as i64))
        .collect();
    let key = KernelKey { points, config: cfg.key() };
    if let Some(k) = cache().lock().expect("kernel cache poisoned").get(&key) {
        return Arc::clone(k);
    }
    let normalized: Vec<(f64, f64)> = key
        .points
        .iter()
        .map(|&(s, b)| (s as f64 / POSITION_SCALE, b as f64))
        .collect();
    let kernel = Arc::new(build_kernel(&normalized, cfg));
    let mut map = cache().lock().expect("kernel cache poisoned");
    if map.len() >= CACHE_LIMIT {
        map.clear();
    }
    Arc::clone(map.entry(key).or_insert(kernel))
}
