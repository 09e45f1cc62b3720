//! Single-layer LSTM with a dense output head, trained by backpropagation
//! through time.
//!
//! Gate pre-activations use one fused matrix of shape
//! `(input_dim + hidden) × 4·hidden` whose column blocks are ordered
//! forget, input, output, candidate. Row 0..input_dim multiplies the
//! input, the remaining rows multiply the previous hidden state.

mod checkpoint;
mod real;
mod tasks;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_VERSION};
pub use real::Real;
pub use tasks::{predict_records, task_data, train_records, Task};
pub use train::{
    evaluate, fine_tune, one_cycle_lr, train, Adam, EpochRecord, InputEncoding, TrainedNetwork, TrainingConfig,
    TrainingData,
};

use crate::error::{Error, Result};
use crate::forward::CoherenceCurve;

/// Output activation of the dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `exp(xᵀW + b)`, strictly positive.
    Exponential,
    /// `xᵀW + b` clamped to `[1e-9, 1.1]`.
    LinearClamped,
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean absolute percentage error.
    #[default]
    Mape,
    /// `100·|ln pred − ln target|` averaged; equal to MAPE to first order
    /// but with gradients that do not vanish for under-predictions.
    LogAbs,
}

pub const CLAMP_LO: f64 = 1e-9;
pub const CLAMP_HI: f64 = 1.1;

/// Cell state and hidden output of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub c: Vec<T>,
    pub h: Vec<T>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self { c: vec![T::ZERO; hidden], h: vec![T::ZERO; hidden] }
    }
}

/// Network parameters, stored flat as
/// `[W_gates | b_gates | W_dense | b_dense]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub head: Head,
    pub params: Vec<T>,
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub w_gates: usize,
    pub b_gates: usize,
    pub w_dense: usize,
    pub b_dense: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        let w_gates = 0;
        let b_gates = w_gates + (input_dim + hidden) * 4 * hidden;
        let w_dense = b_gates + 4 * hidden;
        let b_dense = w_dense + hidden * output_dim;
        Self { w_gates, b_gates, w_dense, b_dense, len: b_dense + output_dim }
    }
}

impl<T: Real> Network<T> {
    pub fn zeros(input_dim: usize, hidden: usize, output_dim: usize, head: Head) -> Self {
        let len = Layout::new(input_dim, hidden, output_dim).len;
        Self { input_dim, hidden, output_dim, head, params: vec![T::ZERO; len] }
    }

    /// Uniform `±1/√hidden` weights, forget-gate bias 1, zero elsewhere.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, output_dim: usize, head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, hidden, output_dim, head);
        let lay = net.layout();
        let bound = 1.0 / (hidden as f64).sqrt();
        for p in &mut net.params[lay.w_gates..lay.b_gates] {
            *p = T::from_f64(rng.gen_range(-bound..bound));
        }
        for p in &mut net.params[lay.b_gates..lay.b_gates + hidden] {
            *p = T::ONE;
        }
        for p in &mut net.params[lay.w_dense..lay.b_dense] {
            *p = T::from_f64(rng.gen_range(-bound..bound));
        }
        net
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.input_dim, self.hidden, self.output_dim)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_dim: self.input_dim,
            hidden: self.hidden,
            output_dim: self.output_dim,
            head: self.head,
            params: self.params.iter().map(|p| U::from_f64(p.to_f64())).collect(),
        }
    }

    /// One step of the recurrence for a single sample.
    pub fn cell_forward(&self, x: &[T], prev: &CellState<T>) -> Result<CellState<T>> {
        let h = self.hidden;
        if x.len() != self.input_dim || prev.c.len() != h || prev.h.len() != h {
            return Err(Error::Config(format!(
                "cell expects input {} and state {h}, got input {} and state {}/{}",
                self.input_dim,
                x.len(),
                prev.c.len(),
                prev.h.len()
            )));
        }
        let lay = self.layout();
        let w = &self.params[lay.w_gates..lay.b_gates];
        let b = &self.params[lay.b_gates..lay.w_dense];
        let mut z: Vec<T> = b.to_vec();
        for (r, &xr) in x.iter().chain(prev.h.iter()).enumerate() {
            let row = &w[r * 4 * h..(r + 1) * 4 * h];
            for (zj, &wj) in z.iter_mut().zip(row) {
                *zj += xr * wj;
            }
        }
        let mut next = CellState::zeros(h);
        for j in 0..h {
            let f = z[j].sigmoid();
            let i = z[h + j].sigmoid();
            let o = z[2 * h + j].sigmoid();
            let g = z[3 * h + j].tanh();
            next.c[j] = f * prev.c[j] + i * g;
            next.h[j] = o * next.c[j].tanh();
        }
        Ok(next)
    }

    fn apply_head(&self, y: T) -> T {
        match self.head {
            Head::Exponential => y.exp(),
            Head::LinearClamped => {
                let (lo, hi) = (T::from_f64(CLAMP_LO), T::from_f64(CLAMP_HI));
                if y < lo {
                    lo
                } else if y > hi {
                    hi
                } else {
                    y
                }
            }
        }
    }

    /// Runs the cell over a sequence from a zero state and applies the head
    /// to the final hidden output. `inputs` holds `steps × input_dim` values.
    pub fn forward(&self, inputs: &[T]) -> Result<Vec<T>> {
        if !inputs.len().is_multiple_of(self.input_dim) || inputs.is_empty() {
            return Err(Error::Config(format!(
                "input length {} is not a positive multiple of {}",
                inputs.len(),
                self.input_dim
            )));
        }
        let mut ws = Workspace::default();
        let steps = inputs.len() / self.input_dim;
        self.forward_batch(inputs, 1, steps, &mut ws)
    }

    /// Batched forward pass; `inputs` is `batch × steps × input_dim`,
    /// the result is `batch × output_dim`. Intermediate activations are kept
    /// in `ws` for a following backward pass.
    pub fn forward_batch(&self, inputs: &[T], batch: usize, steps: usize, ws: &mut Workspace<T>) -> Result<Vec<T>> {
        let (h, nin) = (self.hidden, self.input_dim);
        if inputs.len() != batch * steps * nin {
            return Err(Error::Config(format!(
                "expected {} inputs for batch {batch} × {steps} steps, got {}",
                batch * steps * nin,
                inputs.len()
            )));
        }
        ws.prepare(batch, steps, h);
        let lay = self.layout();
        let w = &self.params[lay.w_gates..lay.b_gates];
        let bias = &self.params[lay.b_gates..lay.w_dense];
        let w_rec = &w[nin * 4 * h..];
        let bh = batch * h;
        let bg = batch * 4 * h;

        for t in 0..steps {
            let z = &mut ws.gates[t * bg..(t + 1) * bg];
            for b in 0..batch {
                let zr = &mut z[b * 4 * h..(b + 1) * 4 * h];
                zr.copy_from_slice(bias);
                for r in 0..nin {
                    let xr = inputs[(b * steps + t) * nin + r];
                    for (zj, &wj) in zr.iter_mut().zip(&w[r * 4 * h..(r + 1) * 4 * h]) {
                        *zj += xr * wj;
                    }
                }
            }
            if t > 0 {
                let h_prev = &ws.h[(t - 1) * bh..t * bh];
                // z += h_prev (batch × h) · w_rec (h × 4h)
                unsafe {
                    T::gemm(
                        batch, h, 4 * h, T::ONE,
                        h_prev.as_ptr(), h as isize, 1,
                        w_rec.as_ptr(), 4 * h as isize, 1,
                        T::ONE,
                        z.as_mut_ptr(), 4 * h as isize, 1,
                    );
                }
            }
            for b in 0..batch {
                let zr = &mut z[b * 4 * h..(b + 1) * 4 * h];
                T::sigmoid_slice(&mut zr[..3 * h]);
                T::tanh_slice(&mut zr[3 * h..]);
            }
            let (c_done, c_rest) = ws.c.split_at_mut(t * bh);
            let c_now = &mut c_rest[..bh];
            let tc_now = &mut ws.tc[t * bh..(t + 1) * bh];
            for b in 0..batch {
                let zr = &z[b * 4 * h..(b + 1) * 4 * h];
                for j in 0..h {
                    let cp = if t > 0 { c_done[(t - 1) * bh + b * h + j] } else { T::ZERO };
                    c_now[b * h + j] = zr[j] * cp + zr[h + j] * zr[3 * h + j];
                }
            }
            tc_now.copy_from_slice(c_now);
            T::tanh_slice(tc_now);
            let h_now = &mut ws.h[t * bh..(t + 1) * bh];
            for b in 0..batch {
                let zr = &z[b * 4 * h..(b + 1) * 4 * h];
                for j in 0..h {
                    h_now[b * h + j] = zr[2 * h + j] * tc_now[b * h + j];
                }
            }
        }

        let o = self.output_dim;
        let mut y = vec![T::ZERO; batch * o];
        let wd = &self.params[lay.w_dense..lay.b_dense];
        let bd = &self.params[lay.b_dense..];
        for b in 0..batch {
            y[b * o..(b + 1) * o].copy_from_slice(bd);
        }
        let h_last = &ws.h[(steps - 1) * bh..steps * bh];
        unsafe {
            T::gemm(
                batch, h, o, T::ONE,
                h_last.as_ptr(), h as isize, 1,
                wd.as_ptr(), o as isize, 1,
                T::ONE,
                y.as_mut_ptr(), o as isize, 1,
            );
        }
        ws.pre_head = y.clone();
        for v in y.iter_mut() {
            *v = self.apply_head(*v);
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            let step = (0..steps)
                .find(|&t| ws.h[t * bh..(t + 1) * bh].iter().any(|v| !v.is_finite()))
                .map_or(steps, |t| t + 1);
            return Err(Error::Divergence {
                context: format!("step {step} (non-finite output at index {})", pos % o),
            });
        }
        Ok(y)
    }

    /// Mean batch MAPE and its gradient (written into `grad`, which must
    /// have the parameter length).
    pub fn loss_and_grad(
        &self,
        inputs: &[T],
        targets: &[T],
        batch: usize,
        steps: usize,
        ws: &mut Workspace<T>,
        grad: &mut [T],
    ) -> Result<f64> {
        self.loss_and_grad_with(Loss::Mape, inputs, targets, batch, steps, ws, grad)
    }

    /// Batch loss of the given kind and its gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad_with(
        &self,
        loss_kind: Loss,
        inputs: &[T],
        targets: &[T],
        batch: usize,
        steps: usize,
        ws: &mut Workspace<T>,
        grad: &mut [T],
    ) -> Result<f64> {
        let o = self.output_dim;
        if targets.len() != batch * o || grad.len() != self.params.len() {
            return Err(Error::Config("target or gradient buffer has the wrong size".into()));
        }
        if loss_kind == Loss::LogAbs && self.head != Head::Exponential {
            return Err(Error::Config("log-space loss needs the exponential head".into()));
        }
        let pred = self.forward_batch(inputs, batch, steps, ws)?;
        let (h, nin) = (self.hidden, self.input_dim);
        let lay = self.layout();
        grad.iter_mut().for_each(|g| *g = T::ZERO);

        // d loss / d pre-head output.
        let mut dy = vec![T::ZERO; batch * o];
        let mut loss = 0.0;
        let scale = 100.0 / (batch * o) as f64;
        for b in 0..batch {
            let tr = &targets[b * o..(b + 1) * o];
            let eps = mape_epsilon(tr)?;
            for j in 0..o {
                let p = pred[b * o + j].to_f64();
                let tv = tr[j].to_f64();
                if loss_kind == Loss::LogAbs {
                    let diff = ws.pre_head[b * o + j].to_f64() - tv.abs().max(eps).ln();
                    loss += scale * diff.abs();
                    dy[b * o + j] = T::from_f64(scale * diff.signum() * (diff != 0.0) as u8 as f64);
                    continue;
                }
                let den = tv.abs().max(eps);
                loss += scale * (p - tv).abs() / den;
                let sign = if p > tv { 1.0 } else if p < tv { -1.0 } else { 0.0 };
                let dp = scale * sign / den;
                let dpre = match self.head {
                    Head::Exponential => dp * p,
                    Head::LinearClamped => {
                        let raw = ws.pre_head[b * o + j].to_f64();
                        if (CLAMP_LO..=CLAMP_HI).contains(&raw) { dp } else { 0.0 }
                    }
                };
                dy[b * o + j] = T::from_f64(dpre);
            }
        }

        let bh = batch * h;
        let bg = batch * 4 * h;
        {
            let (g_head, g_dense_bias) = grad[lay.w_dense..].split_at_mut(h * o);
            let h_last = &ws.h[(steps - 1) * bh..steps * bh];
            // dW_dense = h_lastᵀ · dy
            unsafe {
                T::gemm(
                    h, batch, o, T::ONE,
                    h_last.as_ptr(), 1, h as isize,
                    dy.as_ptr(), o as isize, 1,
                    T::ZERO,
                    g_head.as_mut_ptr(), o as isize, 1,
                );
            }
            for b in 0..batch {
                for j in 0..o {
                    g_dense_bias[j] += dy[b * o + j];
                }
            }
        }
        // dh = dy · W_denseᵀ
        let wd = &self.params[lay.w_dense..lay.b_dense];
        let mut dh = vec![T::ZERO; bh];
        unsafe {
            T::gemm(
                batch, o, h, T::ONE,
                dy.as_ptr(), o as isize, 1,
                wd.as_ptr(), 1, o as isize,
                T::ZERO,
                dh.as_mut_ptr(), h as isize, 1,
            );
        }

        let w = &self.params[lay.w_gates..lay.b_gates];
        let w_rec = &w[nin * 4 * h..];
        let mut dc = vec![T::ZERO; bh];
        let mut dz = vec![T::ZERO; bg];
        let (g_w, g_rest) = grad[lay.w_gates..].split_at_mut(lay.b_gates - lay.w_gates);
        let g_b = &mut g_rest[..4 * h];
        for t in (0..steps).rev() {
            let gates = &ws.gates[t * bg..(t + 1) * bg];
            let tc = &ws.tc[t * bh..(t + 1) * bh];
            for b in 0..batch {
                let gr = &gates[b * 4 * h..(b + 1) * 4 * h];
                let dzr = &mut dz[b * 4 * h..(b + 1) * 4 * h];
                for j in 0..h {
                    let k = b * h + j;
                    let (f, i, og, g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tcv = tc[k];
                    let dhv = dh[k];
                    let d_o = dhv * tcv;
                    let dcv = dc[k] + dhv * og * (T::ONE - tcv * tcv);
                    let c_prev = if t > 0 { ws.c[(t - 1) * bh + k] } else { T::ZERO };
                    dzr[j] = dcv * c_prev * f * (T::ONE - f);
                    dzr[h + j] = dcv * g * i * (T::ONE - i);
                    dzr[2 * h + j] = d_o * og * (T::ONE - og);
                    dzr[3 * h + j] = dcv * i * (T::ONE - g * g);
                    dc[k] = dcv * f;
                }
            }
            for b in 0..batch {
                let dzr = &dz[b * 4 * h..(b + 1) * 4 * h];
                for (gb, &d) in g_b.iter_mut().zip(dzr) {
                    *gb += d;
                }
                for r in 0..nin {
                    let xr = inputs[(b * steps + t) * nin + r];
                    for (gw, &d) in g_w[r * 4 * h..(r + 1) * 4 * h].iter_mut().zip(dzr) {
                        *gw += xr * d;
                    }
                }
            }
            if t > 0 {
                let h_prev = &ws.h[(t - 1) * bh..t * bh];
                let g_rec = &mut g_w[nin * 4 * h..];
                unsafe {
                    // dW_rec += h_prevᵀ · dz
                    T::gemm(
                        h, batch, 4 * h, T::ONE,
                        h_prev.as_ptr(), 1, h as isize,
                        dz.as_ptr(), 4 * h as isize, 1,
                        T::ONE,
                        g_rec.as_mut_ptr(), 4 * h as isize, 1,
                    );
                    // dh_prev = dz · W_recᵀ
                    T::gemm(
                        batch, 4 * h, h, T::ONE,
                        dz.as_ptr(), 4 * h as isize, 1,
                        w_rec.as_ptr(), 1, 4 * h as isize,
                        T::ZERO,
                        dh.as_mut_ptr(), h as isize, 1,
                    );
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { context: "backward pass (non-finite gradient)".into() });
        }
        Ok(loss)
    }

    /// Predictions for many sequences, processed in chunks.
    pub fn predict(&self, inputs: &[T], steps: usize, chunk: usize) -> Result<Vec<T>> {
        let per = steps * self.input_dim;
        let count = inputs.len() / per;
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(count * self.output_dim);
        let mut start = 0;
        while start < count {
            let n = chunk.min(count - start);
            out.extend(self.forward_batch(&inputs[start * per..(start + n) * per], n, steps, &mut ws)?);
            start += n;
        }
        Ok(out)
    }
}

/// Reusable activation storage for batched passes.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    gates: Vec<T>,
    c: Vec<T>,
    tc: Vec<T>,
    h: Vec<T>,
    pre_head: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn prepare(&mut self, batch: usize, steps: usize, hidden: usize) {
        let n = batch * steps * hidden;
        self.gates.resize(4 * n, T::ZERO);
        self.c.resize(n, T::ZERO);
        self.tc.resize(n, T::ZERO);
        self.h.resize(n, T::ZERO);
    }

    /// Hidden outputs of the last forward pass, `steps × batch × hidden`.
    pub fn hidden_states(&self) -> &[T] {
        &self.h
    }
}

fn mape_epsilon<T: Real>(target: &[T]) -> Result<f64> {
    let max = target.iter().map(|v| v.to_f64().abs()).fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateTarget("target is identically zero".into()));
    }
    Ok(1e-12 * max)
}

/// `100/N Σ |pred − target| / max(|target|, ε)` with `ε = 1e-12·max|target|`.
pub fn mape_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::GridMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let eps = mape_epsilon(target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs() / t.abs().max(eps))
        .sum();
    Ok(100.0 * sum / pred.len() as f64)
}

/// Cleans a noisy coherence curve. A clamped-linear network predicts `C`
/// directly; an exponential-head network predicts `χ = −ln C`.
pub fn denoise(denoiser: &TrainedNetwork, noisy: &CoherenceCurve) -> Result<CoherenceCurve> {
    let out = denoiser.infer(std::slice::from_ref(&noisy.coherence))?.remove(0);
    if out.len() != noisy.coherence.len() {
        return Err(Error::GridMismatch(format!(
            "denoiser emits {} points for a {}-point curve",
            out.len(),
            noisy.coherence.len()
        )));
    }
    match denoiser.network.head {
        Head::LinearClamped => CoherenceCurve::from_coherence(noisy.grid.clone(), out, noisy.family.clone()),
        Head::Exponential => CoherenceCurve::from_chi(noisy.grid.clone(), out, noisy.family.clone()),
    }
}

#[cfg(test)]
mod tests;
