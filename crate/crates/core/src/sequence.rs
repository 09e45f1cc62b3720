//! π-pulse sequences, time grids and filter functions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectrum::{log_space, GRID_POINTS};

/// Total sequence durations (s) at which a coherence curve is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() != GRID_POINTS {
            return Err(Error::GridMismatch(format!(
                "time grid must have {GRID_POINTS} points, got {}",
                times.len()
            )));
        }
        if !(times[0] > 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("time grid entries must be positive and finite"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn log_spaced(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(invalid("time grid bounds must satisfy 0 < t_min < t_max"));
        }
        Self::new(log_space(t_min, t_max, GRID_POINTS))
    }

    /// 1 µs to 1 ms, for decays with T₂ of a few hundred microseconds.
    pub fn long_window() -> Self {
        Self::log_spaced(1e-6, 1e-3).expect("valid preset")
    }

    /// 0.5 µs to 200 µs, for decays with T₂ of tens of microseconds.
    pub fn short_window() -> Self {
        Self::log_spaced(0.5e-6, 200e-6).expect("valid preset")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

/// `n` π-pulses of duration `pi_duration` centered at `centers` within a
/// sequence of length `total_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceJson", into = "SequenceJson")]
pub struct PulseSequence {
    total_time: f64,
    centers: Vec<f64>,
    pi_duration: f64,
}

#[derive(Serialize, Deserialize)]
struct SequenceJson {
    n: usize,
    total_time_s: f64,
    centers_s: Vec<f64>,
    pi_duration_s: f64,
}

impl TryFrom<SequenceJson> for PulseSequence {
    type Error = Error;
    fn try_from(j: SequenceJson) -> Result<Self> {
        if j.n != j.centers_s.len() {
            return Err(invalid(format!("n = {} but {} centers given", j.n, j.centers_s.len())));
        }
        PulseSequence::new(j.total_time_s, j.centers_s, j.pi_duration_s)
    }
}

impl From<PulseSequence> for SequenceJson {
    fn from(s: PulseSequence) -> Self {
        SequenceJson {
            n: s.centers.len(),
            total_time_s: s.total_time,
            centers_s: s.centers,
            pi_duration_s: s.pi_duration,
        }
    }
}

impl PulseSequence {
    pub fn new(total_time: f64, centers: Vec<f64>, pi_duration: f64) -> Result<Self> {
        check_layout(total_time, &centers, pi_duration, 0.0)?;
        Ok(Self { total_time, centers, pi_duration })
    }

    pub fn n(&self) -> usize {
        self.centers.len()
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn pi_duration(&self) -> f64 {
        self.pi_duration
    }

    /// Smallest free gap between pulse edges (or sequence ends).
    pub fn min_slack(&self) -> f64 {
        let half = 0.5 * self.pi_duration;
        let mut edges = Vec::with_capacity(self.centers.len() + 2);
        edges.push((0.0, 0.0));
        for &c in &self.centers {
            edges.push((c - half, c + half));
        }
        edges.push((self.total_time, self.total_time));
        edges.windows(2).map(|w| w[1].0 - w[0].1).fold(f64::INFINITY, f64::min)
    }

    /// Signed impulses whose Fourier sum gives the filter function: the
    /// modulation `y(t)` jumps at the sequence ends and at each pulse edge.
    /// Coincident points are merged and zero weights dropped.
    pub fn virtual_points(&self) -> Vec<(f64, f64)> {
        let n = self.centers.len();
        let mut pts = Vec::with_capacity(2 * n + 2);
        pts.push((0.0, 1.0));
        let half = 0.5 * self.pi_duration;
        for (k, &c) in self.centers.iter().enumerate() {
            let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
            if half > 0.0 {
                pts.push((c - half, sign));
                pts.push((c + half, sign));
            } else {
                pts.push((c, 2.0 * sign));
            }
        }
        pts.push((self.total_time, if n.is_multiple_of(2) { -1.0 } else { 1.0 }));
        let tol = 1e-12 * self.total_time;
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for (x, b) in pts {
            match merged.last_mut() {
                Some(last) if (x - last.0).abs() <= tol => last.1 += b,
                _ => merged.push((x, b)),
            }
        }
        merged.retain(|p| p.1 != 0.0);
        merged
    }
}

pub(crate) fn check_layout(total_time: f64, centers: &[f64], pi_duration: f64, slack: f64) -> Result<()> {
    if !(total_time.is_finite() && total_time > 0.0) {
        return Err(Error::InvalidDuration(format!("total time must be positive, got {total_time}")));
    }
    if !(pi_duration.is_finite() && pi_duration >= 0.0) {
        return Err(Error::InvalidDuration(format!("pulse duration must be >= 0, got {pi_duration}")));
    }
    let half = 0.5 * pi_duration;
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidDuration("pulse centers must be finite".into()));
    }
    if let Some(&first) = centers.first() {
        if !(first - half > slack) {
            return Err(Error::InvalidDuration(format!(
                "first pulse at {first:e} s overlaps the sequence start"
            )));
        }
    }
    if let Some(&last) = centers.last() {
        if !(last + half < total_time - slack) {
            return Err(Error::InvalidDuration(format!(
                "last pulse at {last:e} s overlaps the sequence end {total_time:e} s"
            )));
        }
    }
    for (k, w) in centers.windows(2).enumerate() {
        if !(w[0] + half + slack <= w[1] - half) {
            return Err(Error::InvalidDuration(format!(
                "pulses {} and {} overlap or are out of order",
                k + 1,
                k + 2
            )));
        }
    }
    Ok(())
}

pub fn hahn(t: f64, tau_pi: f64) -> Result<PulseSequence> {
    if !(t > 2.0 * tau_pi) {
        return Err(Error::InvalidDuration(format!(
            "sequence of {t:e} s too short for a {tau_pi:e} s pulse"
        )));
    }
    PulseSequence::new(t, vec![0.5 * t], tau_pi)
}

pub fn cpmg(n: usize, t: f64, tau_pi: f64) -> Result<PulseSequence> {
    if n == 0 {
        return Err(invalid("CPMG needs at least one pulse"));
    }
    let centers = (1..=n).map(|k| (2 * k - 1) as f64 * t / (2 * n) as f64).collect();
    PulseSequence::new(t, centers, tau_pi)
}

pub fn udd(n: usize, t: f64, tau_pi: f64) -> Result<PulseSequence> {
    if n == 0 {
        return Err(invalid("UDD needs at least one pulse"));
    }
    let denom = (2 * n + 2) as f64;
    let centers = (1..=n)
        .map(|k| {
            let s = (k as f64 * PI / denom).sin();
            t * s * s
        })
        .collect();
    PulseSequence::new(t, centers, tau_pi)
}

/// Where the sum over pulses in the filter function starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumConvention {
    /// Sum over the n pulses only; `F(0) = 0`.
    #[default]
    FromOne,
    /// Includes an extra `k = 0` term at `t = 0`.
    FromZero,
}

/// `F(ωt) = |1 + (−1)^{n+1} e^{iωt} + 2 Σ_k (−1)^k e^{iωt_k} cos(ωτ_π/2)|²`.
pub fn filter_function(seq: &PulseSequence, omega: f64) -> f64 {
    filter_function_with(seq, omega, SumConvention::FromOne)
}

pub fn filter_function_with(seq: &PulseSequence, omega: f64, convention: SumConvention) -> f64 {
    let n = seq.n();
    let end_sign = if n.is_multiple_of(2) { -1.0 } else { 1.0 };
    let (s_end, c_end) = (omega * seq.total_time).sin_cos();
    let mut re = 1.0 + end_sign * c_end;
    let mut im = end_sign * s_end;
    let pulse = 2.0 * (0.5 * omega * seq.pi_duration).cos();
    if convention == SumConvention::FromZero {
        re += pulse;
    }
    for (k, &tk) in seq.centers.iter().enumerate() {
        let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let (s, c) = (omega * tk).sin_cos();
        re += sign * pulse * c;
        im += sign * pulse * s;
    }
    re * re + im * im
}

/// Sequence family descriptor, rebuilt at each total time of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SequenceFamily {
    Hahn,
    Cpmg(usize),
    Udd(usize),
    /// Pulse centers as fractions of the total time.
    Explicit(Vec<f64>),
}

impl SequenceFamily {
    pub fn pulses(&self) -> usize {
        match self {
            SequenceFamily::Hahn => 1,
            SequenceFamily::Cpmg(n) | SequenceFamily::Udd(n) => *n,
            SequenceFamily::Explicit(f) => f.len(),
        }
    }

    pub fn build(&self, t: f64, tau_pi: f64) -> Result<PulseSequence> {
        match self {
            SequenceFamily::Hahn => hahn(t, tau_pi),
            SequenceFamily::Cpmg(n) => cpmg(*n, t, tau_pi),
            SequenceFamily::Udd(n) => udd(*n, t, tau_pi),
            SequenceFamily::Explicit(f) => {
                PulseSequence::new(t, f.iter().map(|x| x * t).collect(), tau_pi)
            }
        }
    }
}

impl fmt::Display for SequenceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceFamily::Hahn => f.write_str("hahn"),
            SequenceFamily::Cpmg(n) => write!(f, "cpmg:{n}"),
            SequenceFamily::Udd(n) => write!(f, "udd:{n}"),
            SequenceFamily::Explicit(v) => {
                f.write_str("explicit:")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x:?}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for SequenceFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s.as_str(), None),
        };
        let count = |a: Option<&str>| -> Result<usize> {
            let n: usize = a
                .ok_or_else(|| invalid(format!("sequence '{s}' needs a pulse count")))?
                .parse()
                .map_err(|_| invalid(format!("bad pulse count in '{s}'")))?;
            if n == 0 {
                return Err(invalid("pulse count must be >= 1"));
            }
            Ok(n)
        };
        match head {
            "hahn" if arg.is_none() => Ok(SequenceFamily::Hahn),
            "cpmg" => Ok(SequenceFamily::Cpmg(count(arg)?)),
            "udd" => Ok(SequenceFamily::Udd(count(arg)?)),
            "explicit" => {
                let fr = arg
                    .unwrap_or("")
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| p.trim().parse::<f64>().map_err(|_| invalid(format!("bad fraction '{p}'"))))
                    .collect::<Result<Vec<_>>>()?;
                if fr.iter().any(|x| !(*x > 0.0 && *x < 1.0)) || fr.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("explicit fractions must be increasing within (0, 1)"));
                }
                Ok(SequenceFamily::Explicit(fr))
            }
            _ => Err(invalid(format!("unknown sequence family '{s}'"))),
        }
    }
}

impl TryFrom<String> for SequenceFamily {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SequenceFamily> for String {
    fn from(f: SequenceFamily) -> Self {
        f.to_string()
    }
}
