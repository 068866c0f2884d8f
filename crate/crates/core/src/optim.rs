//! AdamW with decoupled weight decay and a warmup + cosine learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub lr_min: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_peak: 3e-3,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            eps: 1e-8,
            warmup_steps: 50,
            total_steps: 2000,
            lr_min: 3e-4,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..1.0).contains(&self.beta1), Config, "beta1 must lie in [0, 1)");
        ensure!((0.0..1.0).contains(&self.beta2), Config, "beta2 must lie in [0, 1)");
        ensure!(
            self.warmup_steps <= self.total_steps,
            Config,
            "warmup {} exceeds total {}",
            self.warmup_steps,
            self.total_steps
        );
        ensure!(self.lr_min <= self.lr_peak, Config, "lr_min exceeds lr_peak");
        ensure!(self.eps > 0.0 && self.weight_decay >= 0.0, Config, "eps and weight decay must be non-negative");
        Ok(())
    }

    /// Same hyper-parameters with a different schedule length and peak
    /// (`lr_min` keeps its ratio to the peak).
    pub fn for_stage(&self, total_steps: usize, lr_peak: f64) -> Self {
        let ratio = if self.lr_peak > 0.0 { self.lr_min / self.lr_peak } else { 0.1 };
        OptimConfig {
            lr_peak,
            lr_min: lr_peak * ratio,
            total_steps,
            warmup_steps: self.warmup_steps.min(total_steps),
            ..self.clone()
        }
    }
}

/// Linear warmup from 0 to `lr_peak`, cosine decay to `lr_min` at
/// `total_steps`, constant afterwards.
pub fn lr_at(step: usize, cfg: &OptimConfig) -> f64 {
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return cfg.lr_peak;
        }
        return cfg.lr_peak * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.total_steps {
        return cfg.lr_min;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    cfg.lr_min + 0.5 * (cfg.lr_peak - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        OptimState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    /// Named tensors for a training-run checkpoint.
    pub fn to_tensors(&self, names: &[String]) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::with_capacity(2 * names.len() + 1);
        for ((name, m), v) in names.iter().zip(&self.m).zip(&self.v) {
            let cast = |x: &Vec<T>| x.iter().map(|e| e.as_f32()).collect::<Vec<f32>>();
            out.push((format!("optim.m.{name}"), Tensor::new(vec![m.len()], cast(m)).expect("flat")));
            out.push((format!("optim.v.{name}"), Tensor::new(vec![v.len()], cast(v)).expect("flat")));
        }
        // The step counter is stored as two 24-bit halves to stay exact in f32.
        let lo = (self.step & 0xff_ffff) as f32;
        let hi = (self.step >> 24) as f32;
        out.push(("optim.step".into(), Tensor::new(vec![2], vec![lo, hi]).expect("flat")));
        out
    }

    pub fn from_tensors(names: &[String], tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let find = |key: String| {
            tensors
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.data().iter().map(|&x| T::from_f32_bits(x)).collect::<Vec<T>>())
                .ok_or_else(|| Error::Format(format!("missing optimizer tensor {key}")))
        };
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in names {
            m.push(find(format!("optim.m.{name}"))?);
            v.push(find(format!("optim.v.{name}"))?);
        }
        let step = find("optim.step".into())?;
        ensure!(step.len() == 2, Format, "optimizer step tensor must hold 2 values");
        let step = step[0].as_f64() as u64 | ((step[1].as_f64() as u64) << 24);
        Ok(OptimState { m, v, step })
    }
}

/// One AdamW update. Gradients are validated before any parameter changes,
/// so a NaN gradient aborts the step with the parameters untouched.
pub fn adamw_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.m.len(),
        Dimension,
        "{} params, {} grads, {} moment slots",
        params.len(),
        grads.len(),
        state.m.len()
    );
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        ensure!(p.shape() == g.shape(), Dimension, "param {i}: grad shape {:?} vs {:?}", g.shape(), p.shape());
        ensure!(state.m[i].len() == p.numel(), Dimension, "param {i}: optimizer state size mismatch");
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr_t = T::lit(lr);
    let decay = T::one() - lr_t * T::lit(cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w = *w * decay;
            *mi = b1 * *mi + (T::one() - b1) * gr;
            *vi = b2 * *vi + (T::one() - b2) * gr * gr;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
