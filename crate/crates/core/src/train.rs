//! Training loop: random crops, Adam with global-norm clipping, per-step
//! logging and periodic checkpoints. Every random draw comes from one seeded
//! generator, so a run is reproducible bit for bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_example, EnergyConditioning, PhonemeInventory, TrainingExample, UtteranceRecord};
use crate::diffusion::standard_normal;
use crate::dsp::{DspConfig, EnergyLevel};
use crate::dynamics::{expand_phoneme_energy, EnergyQuantizer, DEFAULT_ENERGY_BINS};
use crate::model::{Mode, SvsModel, TrainWindow};
use crate::nn::{Param, Parameters};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Windows per step; their gradients are averaged.
    pub batch_size: usize,
    /// Longest training window in frames; shorter utterances are used whole.
    pub crop_frames: usize,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            batch_size: 1,
            crop_frames: 128,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop_frames == 0 {
            return Err(Error::InvalidConfig("batch size and crop length must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("gradient clip must be non-negative".into()));
        }
        Ok(())
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Parameters) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        let eps = self.eps;
        let moments = &mut self.moments;
        let mut i = 0;
        model.visit("", &mut |_, p: &mut Param| {
            if moments.len() == i {
                moments.push((Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            }
            let (m, v) = &mut moments[i];
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            i += 1;
        });
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(model: &mut dyn Parameters) -> f64 {
    let mut sq = 0.0;
    model.visit("", &mut |_, p| sq += p.grad.iter().map(|g| g * g).sum::<f64>());
    sq.sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(model: &mut dyn Parameters, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        model.visit("", &mut |_, p| p.grad *= s);
    }
    norm
}

pub fn scale_grads(model: &mut dyn Parameters, s: f64) {
    model.visit("", &mut |_, p| p.grad *= s);
}

/// Energy bins for `example` under `mode`.
pub fn conditioning_bins(example: &TrainingExample, mode: Mode, quantizer: &EnergyQuantizer) -> Result<Option<Vec<usize>>> {
    Ok(match mode.conditioning() {
        None => None,
        Some(EnergyLevel::Frame) => Some(quantizer.quantize_all(&example.frame_energy)),
        Some(EnergyLevel::Phoneme) => Some(
            quantizer.quantize_all(&expand_phoneme_energy(&example.phoneme_energy, &example.alignment)?),
        ),
    })
}

/// Quantizer over the energies of `examples` at `level`.
pub fn fit_quantizer(examples: &[TrainingExample], level: EnergyLevel) -> Result<EnergyQuantizer> {
    let values = examples.iter().flat_map(|e| match level {
        EnergyLevel::Frame => e.frame_energy.values().iter().copied(),
        EnergyLevel::Phoneme => e.phoneme_energy.values().iter().copied(),
    });
    EnergyQuantizer::fit(values, DEFAULT_ENERGY_BINS)
}

/// Loads and aligns every record. Failures name the utterance.
pub fn load_examples(records: &[&UtteranceRecord], dsp: &DspConfig, inventory: &PhonemeInventory, resample: bool) -> Result<Vec<TrainingExample>> {
    records
        .iter()
        .map(|r| {
            let with_id = |e: Error| Error::InvalidCorpus(format!("utterance {}: {e}", r.id));
            let clip = r.load_audio(dsp, resample).map_err(with_id)?;
            build_example(r, &clip, dsp, inventory, EnergyConditioning::None).map_err(with_id)
        })
        .collect()
}

/// Sets each example's energy bins for `mode`.
pub fn condition_examples(examples: &mut [TrainingExample], mode: Mode, quantizer: &EnergyQuantizer) -> Result<()> {
    for e in examples.iter_mut() {
        e.inputs.energy_bins = conditioning_bins(e, mode, quantizer)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainSummary {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

/// Optimizes `model` on `examples`, which must already carry the energy bins
/// for the model's mode. With `checkpoint_dir`, writes `step_<n>.ckpt` every
/// `checkpoint_every` steps and `final.ckpt` at the end.
pub fn train(
    model: &mut SvsModel,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidCorpus("no training examples".into()));
    }
    for e in examples {
        if e.inputs.energy_bins.is_some() != model.mode().conditioning().is_some() {
            return Err(Error::Mode(format!(
                "utterance {}: energy bins do not match a {} model",
                e.id,
                model.mode()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(cfg);
    let n_steps = model.schedule().n_steps();
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    for step in 1..=cfg.steps {
        model.zero_grad();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let ex = &examples[rng.gen_range(0..examples.len())];
            let total = ex.inputs.len();
            let len = total.min(cfg.crop_frames);
            let off = rng.gen_range(0..=total - len);
            let inputs = ex.inputs.slice(off, off + len);
            let target = ex.target.data().slice(ndarray::s![off..off + len, ..]).to_owned();
            let energy = &ex.frame_energy.values()[off..off + len];
            let t = rng.gen_range(1..=n_steps);
            let eps = standard_normal(len, target.ncols(), &mut rng);
            let window = TrainWindow {
                inputs: &inputs,
                target: &target,
                frame_energy: energy,
                position_offset: off,
            };
            let l = model
                .forward(window, t, &eps)
                .map_err(|e| Error::InvalidCorpus(format!("utterance {}: {e}", ex.id)))?;
            model.backward()?;
            loss += l.total;
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::InvalidState(format!("loss became {loss} at step {step}")));
        }
        if cfg.batch_size > 1 {
            scale_grads(model, 1.0 / cfg.batch_size as f64);
        }
        clip_grad_norm(model, cfg.grad_clip);
        adam.step(model);
        let row = LogRow {
            step,
            loss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_step(&row);
        log.push(row);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps {
                let p = dir.join(format!("step_{step}.ckpt"));
                model.save(&p, step, seed)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        let p = dir.join("final.ckpt");
        model.save(&p, cfg.steps, seed)?;
        checkpoints.push(p);
    }
    Ok(TrainSummary { log, checkpoints })
}

/// Writes the loss log as CSV with a `step,loss,wall_ms` header.
pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
