//! Denoising diffusion decoder for mel-spectrograms.
//!
//! The schedule is linear in beta. Training noises a clean (normalized) mel
//! in closed form, `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, and
//! minimizes the mean absolute error between the true noise and the
//! denoiser's estimate. Sampling runs the ancestral reverse process from
//! Gaussian noise with `sigma_t = sqrt(beta_t)`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::acoustic::INIT_SCALE;
use crate::dsp::LOG_FLOOR;
use crate::nn::{join, relu, relu_backward, sinusoid, Conv1d, Linear, Param, Parameters};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear betas from `beta_min` to `beta_max`. With `beta_min == beta_max`
    /// the schedule is constant; a one-step schedule uses `beta_max`.
    pub fn linear(n_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min} and {beta_max}"
            )));
        }
        let betas = if n_steps == 1 {
            vec![beta_max]
        } else {
            let step = (beta_max - beta_min) / (n_steps - 1) as f64;
            (0..n_steps).map(|i| beta_min + i as f64 * step).collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=n_steps`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.n_steps() {
            return Err(Error::InvalidInput(format!(
                "diffusion step {t} outside 1..={}",
                self.n_steps()
            )));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(x0: &Array2<f64>, t: usize, eps: &Array2<f64>, schedule: &DiffusionSchedule) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    if x0.dim() != eps.dim() {
        return Err(Error::InvalidInput(format!(
            "x0 {:?} and noise {:?} differ in shape",
            x0.dim(),
            eps.dim()
        )));
    }
    let ab = schedule.alpha_bar(t);
    Ok(x0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Affine map between log-mel values and the `[-1, 1]` range the diffusion
/// process works in. The lower end is the log floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelScaler {
    pub log_min: f64,
    pub log_max: f64,
}

impl Default for MelScaler {
    fn default() -> Self {
        Self {
            log_min: LOG_FLOOR,
            log_max: 6.0,
        }
    }
}

impl MelScaler {
    pub fn normalize(&self, mel: &Array2<f64>) -> Array2<f64> {
        let half = (self.log_max - self.log_min) / 2.0;
        mel.mapv(|v| (v - self.log_min) / half - 1.0)
    }

    /// Inverse map, clamped to `[log_min, log_max]`.
    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let half = (self.log_max - self.log_min) / 2.0;
        x.mapv(|v| (v.clamp(-1.0, 1.0) + 1.0) * half + self.log_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub n_mels: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    pub n_layers: usize,
    pub kernel: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            hidden: 256,
            cond_dim: 256,
            n_layers: 4,
            kernel: 3,
        }
    }
}

/// Residual convolution stack predicting the added noise.
///
/// Each layer adds the step embedding to its input, convolves over time, adds
/// a projection of the conditioning sequence, applies ReLU and a 1x1 mixing
/// projection, and adds the result back to the residual stream. The input
/// projection is linear so `x_t` reaches the output undistorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub input: Linear,
    pub step_mlp1: Linear,
    pub step_mlp2: Linear,
    pub convs: Vec<Conv1d>,
    pub conds: Vec<Linear>,
    pub mixes: Vec<Linear>,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct DenoiserCache {
    x: Array2<f64>,
    cond: Array2<f64>,
    step_feat: Array2<f64>,
    step_pre: Array2<f64>,
    step_act: Array2<f64>,
    layer_in: Vec<Array2<f64>>,
    layer_pre: Vec<Array2<f64>>,
    layer_act: Vec<Array2<f64>>,
    last: Array2<f64>,
}

impl Denoiser {
    pub fn new<R: Rng>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 || config.n_mels == 0 || config.cond_dim == 0 || config.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("invalid denoiser config {config:?}")));
        }
        let h = config.hidden;
        let s = INIT_SCALE;
        Ok(Self {
            input: Linear::new(config.n_mels, h, s, rng),
            step_mlp1: Linear::new(h, h, s, rng),
            step_mlp2: Linear::new(h, h, s, rng),
            convs: (0..config.n_layers).map(|_| Conv1d::new(config.kernel, h, h, s, rng)).collect(),
            conds: (0..config.n_layers).map(|_| Linear::new(config.cond_dim, h, s, rng)).collect(),
            mixes: (0..config.n_layers).map(|_| Linear::new(h, h, s, rng)).collect(),
            output: Linear::new(h, config.n_mels, s, rng),
            config,
        })
    }

    /// Predicts the noise in `x_t` (`T x n_mels`) at step `t` given the
    /// conditioning sequence (`T x cond_dim`).
    pub fn forward(&self, x: &Array2<f64>, t: usize, cond: &Array2<f64>) -> Result<(Array2<f64>, DenoiserCache)> {
        if x.ncols() != self.config.n_mels || cond.ncols() != self.config.cond_dim || x.nrows() != cond.nrows() {
            return Err(Error::InvalidInput(format!(
                "denoiser input {:?} / conditioning {:?} do not match config {:?}",
                x.dim(),
                cond.dim(),
                self.config
            )));
        }
        let mut h = self.input.forward(x);
        let step_feat = sinusoid(t as f64, self.config.hidden).insert_axis(ndarray::Axis(0));
        let step_pre = self.step_mlp1.forward(&step_feat);
        let step_act = relu(&step_pre);
        let step_emb = self.step_mlp2.forward(&step_act);
        let mut layer_in = Vec::with_capacity(self.convs.len());
        let mut layer_pre = Vec::with_capacity(self.convs.len());
        let mut layer_act = Vec::with_capacity(self.convs.len());
        for ((conv, proj), mix) in self.convs.iter().zip(&self.conds).zip(&self.mixes) {
            let z = &h + &step_emb.row(0);
            let pre = conv.forward(&z) + proj.forward(cond);
            let act = relu(&pre);
            h += &mix.forward(&act);
            layer_in.push(z);
            layer_pre.push(pre);
            layer_act.push(act);
        }
        let out = self.output.forward(&h);
        let cache = DenoiserCache {
            x: x.clone(),
            cond: cond.clone(),
            step_feat,
            step_pre,
            step_act,
            layer_in,
            layer_pre,
            layer_act,
            last: h,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients and returns `dL/dcond`.
    pub fn backward(&mut self, cache: &DenoiserCache, d_out: &Array2<f64>) -> Array2<f64> {
        let mut dh = self.output.backward(&cache.last, d_out);
        let mut d_cond = Array2::zeros(cache.cond.raw_dim());
        let mut d_step = Array2::zeros((1, self.config.hidden));
        for l in (0..self.convs.len()).rev() {
            let d_act = self.mixes[l].backward(&cache.layer_act[l], &dh);
            let d_pre = relu_backward(&cache.layer_pre[l], &d_act);
            d_cond += &self.conds[l].backward(&cache.cond, &d_pre);
            let dz = self.convs[l].backward(&cache.layer_in[l], &d_pre);
            {
                let mut ds = d_step.row_mut(0);
                ds += &dz.sum_axis(ndarray::Axis(0));
            }
            dh += &dz;
        }
        self.input.backward(&cache.x, &dh);
        let d_act = self.step_mlp2.backward(&cache.step_act, &d_step);
        let d_pre = relu_backward(&cache.step_pre, &d_act);
        self.step_mlp1.backward(&cache.step_feat, &d_pre);
        d_cond
    }
}

impl Parameters for Denoiser {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.input.visit(&join(prefix, "input"), f);
        self.step_mlp1.visit(&join(prefix, "step_mlp1"), f);
        self.step_mlp2.visit(&join(prefix, "step_mlp2"), f);
        for (i, ((conv, cond), mix)) in self.convs.iter_mut().zip(self.conds.iter_mut()).zip(self.mixes.iter_mut()).enumerate() {
            conv.visit(&join(prefix, &format!("layer{i}.conv")), f);
            cond.visit(&join(prefix, &format!("layer{i}.cond")), f);
            mix.visit(&join(prefix, &format!("layer{i}.mix")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
    }
}

/// Mean absolute error between `eps` and `pred` plus its (sub)gradient with
/// respect to `pred`; ties get gradient zero.
pub fn l1_loss(eps: &Array2<f64>, pred: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = eps.len() as f64;
    let diff = eps - pred;
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            -1.0 / n
        } else if d < 0.0 {
            1.0 / n
        } else {
            0.0
        }
    });
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient of the loss with respect to the conditioning sequence.
    pub d_cond: Array2<f64>,
}

/// Noises `x0` at step `t`, predicts the noise and returns the L1 objective.
/// Denoiser gradients are accumulated in place.
pub fn ddpm_loss(
    x0: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    cond: &Array2<f64>,
    denoiser: &mut Denoiser,
    schedule: &DiffusionSchedule,
) -> Result<LossOutput> {
    let xt = forward_noise(x0, t, eps, schedule)?;
    let (pred, cache) = denoiser.forward(&xt, t, cond)?;
    let (loss, d_pred) = l1_loss(eps, &pred);
    let d_cond = denoiser.backward(&cache, &d_pred);
    Ok(LossOutput { loss, d_cond })
}

/// Ancestral reverse process from `x_start` at step `n_steps` down to 0:
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t) + sqrt(beta_t) z`,
/// with `z = 0` on the final step.
pub fn reverse_process<R: Rng>(
    x_start: Array2<f64>,
    schedule: &DiffusionSchedule,
    rng: &mut R,
    mut predict: impl FnMut(&Array2<f64>, usize) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let mut x = x_start;
    for t in (1..=schedule.n_steps()).rev() {
        let beta = schedule.beta(t);
        let eps_hat = predict(&x, t)?;
        let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
        x = (&x - &(eps_hat * coef)) / (1.0 - beta).sqrt();
        if t > 1 {
            let z = standard_normal(x.nrows(), x.ncols(), rng);
            x += &(z * beta.sqrt());
        }
    }
    Ok(x)
}

/// Draws `x_T ~ N(0, I)` from `rng` and denoises it under the conditioning.
/// The result is in the normalized `[-1, 1]` domain (unclamped).
pub fn sample<R: Rng>(cond: &Array2<f64>, denoiser: &Denoiser, schedule: &DiffusionSchedule, rng: &mut R) -> Result<Array2<f64>> {
    let x_start = standard_normal(cond.nrows(), denoiser.config.n_mels, rng);
    reverse_process(x_start, schedule, rng, |x, t| Ok(denoiser.forward(x, t, cond)?.0))
}
