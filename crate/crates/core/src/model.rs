//! The full acoustic model: encoder, optional energy predictor and diffusion
//! decoder, bundled with everything needed to reproduce inputs at synthesis
//! time (phoneme inventory, energy quantizer, mel scaling), plus checkpoints.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{mse, Encoder, EncoderCache, EnergyPredictor, FrameInputs, ModelConfig, PredictorCache};
use crate::corpus::PhonemeInventory;
use crate::diffusion::{
    forward_noise, l1_loss, sample, DenoiserCache, Denoiser, DenoiserConfig, DiffusionSchedule, MelScaler,
    DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_STEPS,
};
use crate::dsp::{DspConfig, EnergyLevel, EnergySequence, MelSpectrogram};
use crate::dynamics::{durations_to_frames, expand_phoneme_energy, length_regulate, EnergyQuantizer, FrameAlignment, PhonemeScore};
use crate::nn::{Param, Parameters};
use crate::{Error, Result};

/// The four trained systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    PhonemeLevel,
    FrameLevel,
    BaselinePlusPredictor,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::PhonemeLevel, Mode::FrameLevel, Mode::BaselinePlusPredictor];

    /// Energy granularity the model is conditioned on, if any.
    pub fn conditioning(self) -> Option<EnergyLevel> {
        match self {
            Mode::PhonemeLevel => Some(EnergyLevel::Phoneme),
            Mode::FrameLevel => Some(EnergyLevel::Frame),
            Mode::Baseline | Mode::BaselinePlusPredictor => None,
        }
    }

    pub fn has_predictor(self) -> bool {
        self == Mode::BaselinePlusPredictor
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::PhonemeLevel => "phoneme-level",
            Mode::FrameLevel => "frame-level",
            Mode::BaselinePlusPredictor => "baseline-plus-predictor",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            n_steps: DEFAULT_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.n_steps, self.beta_min, self.beta_max)
    }
}

/// Denoiser width and depth; its input and conditioning sizes follow the
/// mel and encoder configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserLayout {
    pub hidden: usize,
    pub n_layers: usize,
    pub kernel: usize,
}

impl Default for DenoiserLayout {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            hidden: d.hidden,
            n_layers: d.n_layers,
            kernel: d.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvsConfig {
    pub mode: Mode,
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub denoiser: DenoiserLayout,
    pub diffusion: DiffusionConfig,
    pub scaler: MelScaler,
    /// Weight of the predictor's MSE in the total loss.
    pub predictor_weight: f64,
}

impl Default for SvsConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PhonemeLevel,
            dsp: DspConfig::default(),
            model: ModelConfig::default(),
            denoiser: DenoiserLayout::default(),
            diffusion: DiffusionConfig::default(),
            scaler: MelScaler::default(),
            predictor_weight: 0.1,
        }
    }
}

impl SvsConfig {
    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            n_mels: self.dsp.mel.n_mels,
            hidden: self.denoiser.hidden,
            cond_dim: self.model.hidden,
            n_layers: self.denoiser.n_layers,
            kernel: self.denoiser.kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.stft.validate()?;
        self.dsp.mel.validate(self.dsp.sample_rate)?;
        self.model.validate()?;
        self.diffusion.schedule()?;
        if !(self.scaler.log_min < self.scaler.log_max) {
            return Err(Error::InvalidConfig("mel scaler range is empty".into()));
        }
        if !(self.predictor_weight >= 0.0 && self.predictor_weight.is_finite()) {
            return Err(Error::InvalidConfig("predictor weight must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub diffusion: f64,
    pub predictor: Option<f64>,
}

struct TrainCache {
    encoder: EncoderCache,
    denoiser: DenoiserCache,
    d_pred: Array2<f64>,
    predictor: Option<(PredictorCache, Array1<f64>)>,
}

/// One cropped training window.
#[derive(Debug, Clone, Copy)]
pub struct TrainWindow<'a> {
    pub inputs: &'a FrameInputs,
    /// Log-mel target rows for the window.
    pub target: &'a Array2<f64>,
    pub frame_energy: &'a [f64],
    /// Absolute index of the window's first frame.
    pub position_offset: usize,
}

pub struct SvsModel {
    pub config: SvsConfig,
    pub encoder: Encoder,
    pub denoiser: Denoiser,
    pub predictor: Option<EnergyPredictor>,
    pub quantizer: EnergyQuantizer,
    pub inventory: PhonemeInventory,
    schedule: DiffusionSchedule,
    cache: Option<TrainCache>,
}

impl fmt::Debug for SvsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SvsModel")
            .field("mode", &self.config.mode)
            .field("inventory", &self.inventory.len())
            .field("quantizer", &self.quantizer)
            .finish_non_exhaustive()
    }
}

impl SvsModel {
    /// Fresh model. The phoneme table is sized to the inventory.
    pub fn new<R: Rng>(
        mut config: SvsConfig,
        inventory: PhonemeInventory,
        quantizer: EnergyQuantizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.model.phoneme_vocab = inventory.len();
        config.model.energy_vocab = quantizer.n_bins;
        config.validate()?;
        let encoder = Encoder::new(config.model.clone(), rng)?;
        let denoiser = Denoiser::new(config.denoiser_config(), rng)?;
        let predictor = config.mode.has_predictor().then(|| EnergyPredictor::new(&config.model, rng));
        let schedule = config.diffusion.schedule()?;
        Ok(Self {
            config,
            encoder,
            denoiser,
            predictor,
            quantizer,
            inventory,
            schedule,
            cache: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    /// Noises the normalized target at step `t` with `eps`, runs every head
    /// and keeps the activations for [`SvsModel::backward`].
    pub fn forward(&mut self, window: TrainWindow<'_>, t: usize, eps: &Array2<f64>) -> Result<StepLoss> {
        self.cache = None;
        let (cond, encoder_cache) = self.encoder.forward(window.inputs, window.position_offset)?;
        let x0 = self.config.scaler.normalize(window.target);
        let xt = forward_noise(&x0, t, eps, &self.schedule)?;
        let (pred, denoiser_cache) = self.denoiser.forward(&xt, t, &cond)?;
        let (diffusion, d_pred) = l1_loss(eps, &pred);
        let mut total = diffusion;
        let mut predictor_loss = None;
        let mut predictor_cache = None;
        if let Some(p) = &self.predictor {
            let (e_hat, pc) = p.forward(encoder_cache.summed_embedding());
            let target: Vec<f64> = window.frame_energy.iter().map(|&e| self.quantizer.normalize(e)).collect();
            let (loss, grad) = mse(&e_hat, &target)?;
            total += self.config.predictor_weight * loss;
            predictor_loss = Some(loss);
            predictor_cache = Some((pc, grad * self.config.predictor_weight));
        }
        self.cache = Some(TrainCache {
            encoder: encoder_cache,
            denoiser: denoiser_cache,
            d_pred,
            predictor: predictor_cache,
        });
        Ok(StepLoss {
            total,
            diffusion,
            predictor: predictor_loss,
        })
    }

    /// Accumulates gradients of the last forward pass into every parameter.
    pub fn backward(&mut self) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidState("backward called without a preceding forward pass".into()))?;
        let d_cond = self.denoiser.backward(&cache.denoiser, &cache.d_pred);
        let d_summed = match (&mut self.predictor, &cache.predictor) {
            (Some(p), Some((pc, grad))) => Some(p.backward(pc, grad)),
            _ => None,
        };
        self.encoder.backward(&cache.encoder, &d_cond, d_summed.as_ref());
        Ok(())
    }

    /// Frame-level inputs for `score` under this model's mode. Energy must be
    /// supplied exactly when the mode is energy-conditioned: phoneme-level
    /// models take a length-L sequence, frame-level models take length T or
    /// a length-L sequence that is expanded through the alignment.
    pub fn prepare_inputs(&self, score: &PhonemeScore, energy: Option<&EnergySequence>) -> Result<(FrameInputs, FrameAlignment)> {
        let dsp = &self.config.dsp;
        let alignment = durations_to_frames(&score.durations_sec, dsp.sample_rate, dsp.stft.hop_size)?;
        let ids = self.inventory.encode(&score.phonemes)?;
        let notes: Vec<usize> = score.notes.iter().map(|&n| n as usize).collect();
        let frame_energy = match (self.mode().conditioning(), energy) {
            (None, None) => None,
            (None, Some(_)) => {
                return Err(Error::Mode(format!("a {} model takes no energy input", self.mode())));
            }
            (Some(level), None) => {
                return Err(Error::Mode(format!("a {} model needs a {level}-level energy input", self.mode())));
            }
            (Some(EnergyLevel::Phoneme), Some(e)) => {
                if e.level() != EnergyLevel::Phoneme {
                    return Err(Error::Mode(format!(
                        "a phoneme-level model cannot take {}-level energy",
                        e.level()
                    )));
                }
                Some(expand_checked(e, &alignment)?)
            }
            (Some(EnergyLevel::Frame), Some(e)) => match e.level() {
                EnergyLevel::Frame => {
                    if e.len() != alignment.total_frames() {
                        return Err(Error::Alignment(format!(
                            "frame energy has {} values but the score spans {} frames",
                            e.len(),
                            alignment.total_frames()
                        )));
                    }
                    Some(e.clone())
                }
                EnergyLevel::Phoneme => Some(expand_checked(e, &alignment)?),
            },
        };
        let inputs = FrameInputs {
            phoneme_ids: length_regulate(&ids, &alignment)?,
            note_ids: length_regulate(&notes, &alignment)?,
            energy_bins: frame_energy.map(|e| self.quantizer.quantize_all(&e)),
        };
        Ok((inputs, alignment))
    }

    /// Runs the reverse diffusion under the encoded inputs and returns a
    /// log-mel spectrogram of the same length.
    pub fn synthesize<R: Rng>(&self, inputs: &FrameInputs, rng: &mut R) -> Result<MelSpectrogram> {
        let (cond, _) = self.encoder.forward(inputs, 0)?;
        let x = sample(&cond, &self.denoiser, &self.schedule, rng)?;
        let dsp = &self.config.dsp;
        MelSpectrogram::new(self.config.scaler.denormalize(&x), dsp.stft.hop_size, dsp.sample_rate)
    }

    /// Predicted frame energy of the predictor head, mapped back to energy
    /// units. `None` for models without a predictor.
    pub fn predict_energy(&self, inputs: &FrameInputs) -> Result<Option<Vec<f64>>> {
        let Some(p) = &self.predictor else { return Ok(None) };
        let summed = self.encoder.embed_and_sum(inputs)?;
        let (e, _) = p.forward(&summed);
        let q = &self.quantizer;
        Ok(Some(e.iter().map(|v| q.e_min + v * (q.e_max - q.e_min)).collect()))
    }

    /// Checkpoint file: `DYNSVS\x01`, a little-endian `u64` header length,
    /// the JSON header and the parameters as little-endian `f32` in declared
    /// order.
    pub fn save(&mut self, path: &Path, step: usize, seed: u64) -> Result<()> {
        let mut shapes = Vec::new();
        let mut blob = Vec::new();
        self.visit("", &mut |name, p| {
            shapes.push(ParamShape {
                name: name.to_string(),
                shape: [p.value.nrows(), p.value.ncols()],
            });
            for v in p.value.iter() {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        });
        let header = CheckpointHeader {
            config: self.config.clone(),
            quantizer: self.quantizer,
            step,
            seed,
            inventory: self.inventory.tokens().to_vec(),
            params: shapes,
        };
        let json = serde_json::to_vec(&header)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        f.write_all(MAGIC).map_err(io)?;
        f.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        f.write_all(&json).map_err(io)?;
        f.write_all(&blob).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let corrupt = |m: &str| Error::InvalidInput(format!("{}: {m}", path.display()));
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("not a checkpoint"));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let start = MAGIC.len() + 8;
        let end = start
            .checked_add(u64::from_le_bytes(len) as usize)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[start..end])?;
        let inventory = PhonemeInventory::from_tokens(header.inventory.clone())?;
        // The rng only fills values that are overwritten below.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = SvsModel::new(header.config.clone(), inventory, header.quantizer, &mut rng)?;
        let mut blob = bytes[end..].chunks_exact(4);
        let mut expected = header.params.iter();
        let mut failure = None;
        model.visit("", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            match expected.next() {
                Some(s) if s.name == name && s.shape == [p.value.nrows(), p.value.ncols()] => {}
                _ => {
                    failure = Some(format!("parameter {name} does not match the header"));
                    return;
                }
            }
            for v in p.value.iter_mut() {
                match blob.next() {
                    Some(c) => *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                    None => {
                        failure = Some("parameter data is truncated".into());
                        return;
                    }
                }
            }
        });
        if let Some(m) = failure {
            return Err(corrupt(&m));
        }
        if expected.next().is_some() || blob.next().is_some() || !blob.remainder().is_empty() {
            return Err(corrupt("parameter count differs from the header"));
        }
        Ok((model, header))
    }
}

fn expand_checked(e: &EnergySequence, alignment: &FrameAlignment) -> Result<EnergySequence> {
    if e.len() != alignment.n_phonemes() {
        return Err(Error::Alignment(format!(
            "phoneme energy has {} values for {} phonemes",
            e.len(),
            alignment.n_phonemes()
        )));
    }
    expand_phoneme_energy(e, alignment)
}

const MAGIC: &[u8] = b"DYNSVS\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: SvsConfig,
    pub quantizer: EnergyQuantizer,
    pub step: usize,
    pub seed: u64,
    pub inventory: Vec<String>,
    pub params: Vec<ParamShape>,
}

impl Parameters for SvsModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit(&crate::nn::join(prefix, "encoder"), f);
        if let Some(p) = &mut self.predictor {
            p.visit(&crate::nn::join(prefix, "predictor"), f);
        }
        self.denoiser.visit(&crate::nn::join(prefix, "denoiser"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::REST_TOKEN;
    use crate::nn::tests::{random, rng};

    pub(super) fn tiny_pub(mode: Mode) -> SvsModel {
        tiny(mode)
    }

    fn tiny(mode: Mode) -> SvsModel {
        let config = SvsConfig {
            mode,
            model: ModelConfig {
                hidden: 8,
                n_fft_blocks: 1,
                conv_filter: 8,
                predictor_filter: 6,
                ..ModelConfig::default()
            },
            denoiser: DenoiserLayout {
                hidden: 8,
                n_layers: 2,
                kernel: 3,
            },
            diffusion: DiffusionConfig {
                n_steps: 4,
                ..DiffusionConfig::default()
            },
            dsp: DspConfig {
                mel: crate::dsp::MelConfig {
                    n_mels: 10,
                    ..Default::default()
                },
                ..DspConfig::default()
            },
            ..SvsConfig::default()
        };
        let inv = PhonemeInventory::from_tokens(vec![REST_TOKEN.into(), "a".into(), "n".into()]).unwrap();
        let q = EnergyQuantizer::new(16, 0.0, 10.0).unwrap();
        SvsModel::new(config, inv, q, &mut rng(3)).unwrap()
    }

    fn score() -> PhonemeScore {
        PhonemeScore::new(
            vec!["n".into(), "a".into(), REST_TOKEN.into()],
            vec![60, 62, 0],
            vec![0.02, 0.03, 0.01],
            None,
        )
        .unwrap()
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("loud".parse::<Mode>().is_err());
    }

    #[test]
    fn backward_without_forward_is_invalid_state() {
        let mut m = tiny(Mode::Baseline);
        assert!(matches!(m.backward(), Err(Error::InvalidState(_))));
    }

    #[test]
    fn backward_consumes_the_cache() {
        let mut m = tiny(Mode::BaselinePlusPredictor);
        let (inputs, _) = m.prepare_inputs(&score(), None).unwrap();
        let t = inputs.len();
        let target = random(t, 10, &mut rng(1)) - 5.0;
        let eps = random(t, 10, &mut rng(2));
        let energy = vec![1.0; t];
        let window = TrainWindow {
            inputs: &inputs,
            target: &target,
            frame_energy: &energy,
            position_offset: 0,
        };
        let loss = m.forward(window, 2, &eps).unwrap();
        assert!(loss.predictor.is_some() && loss.total > loss.diffusion);
        m.backward().unwrap();
        assert!(matches!(m.backward(), Err(Error::InvalidState(_))));
    }

    #[test]
    fn mode_input_matrix() {
        let s = score();
        let pe = EnergySequence::new(vec![1.0, 2.0, 0.1], EnergyLevel::Phoneme).unwrap();
        let n_frames = durations_to_frames(&s.durations_sec, 48000, 256).unwrap().total_frames();
        let fe = EnergySequence::new(vec![1.0; n_frames], EnergyLevel::Frame).unwrap();
        let is_mode = |r: Result<(FrameInputs, FrameAlignment)>| matches!(r, Err(Error::Mode(_)));

        let base = tiny(Mode::Baseline);
        assert!(base.prepare_inputs(&s, None).unwrap().0.energy_bins.is_none());
        assert!(is_mode(base.prepare_inputs(&s, Some(&pe))));
        assert!(is_mode(base.prepare_inputs(&s, Some(&fe))));
        assert!(is_mode(tiny(Mode::BaselinePlusPredictor).prepare_inputs(&s, Some(&pe))));

        let phon = tiny(Mode::PhonemeLevel);
        assert!(is_mode(phon.prepare_inputs(&s, None)));
        assert!(is_mode(phon.prepare_inputs(&s, Some(&fe))));
        let (inputs, al) = phon.prepare_inputs(&s, Some(&pe)).unwrap();
        let bins = inputs.energy_bins.unwrap();
        assert_eq!(bins.len(), al.total_frames());
        assert_eq!(bins[0], phon.quantizer.quantize(1.0));
        assert_eq!(*bins.last().unwrap(), phon.quantizer.quantize(0.1));

        let frame = tiny(Mode::FrameLevel);
        assert!(is_mode(frame.prepare_inputs(&s, None)));
        assert!(frame.prepare_inputs(&s, Some(&fe)).is_ok());
        assert_eq!(
            frame.prepare_inputs(&s, Some(&pe)).unwrap().0,
            phon.prepare_inputs(&s, Some(&pe)).unwrap().0
        );
        let short = EnergySequence::new(vec![1.0; n_frames - 1], EnergyLevel::Frame).unwrap();
        assert!(matches!(frame.prepare_inputs(&s, Some(&short)), Err(Error::Alignment(_))));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact_for_f32_values() {
        let mut m = tiny(Mode::BaselinePlusPredictor);
        m.visit("", &mut |_, p| p.value.mapv_inplace(|v| v as f32 as f64));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path, 17, 99).unwrap();
        let (mut back, header) = SvsModel::load(&path).unwrap();
        assert_eq!(header.step, 17);
        assert_eq!(header.seed, 99);
        assert_eq!(back.config, m.config);
        assert_eq!(back.quantizer, m.quantizer);
        let mut a = vec![];
        m.visit("", &mut |n, p| a.push((n.to_string(), p.value.clone())));
        let mut b = vec![];
        back.visit("", &mut |n, p| b.push((n.to_string(), p.value.clone())));
        assert_eq!(a, b);
        assert!(a.iter().any(|(n, _)| n.starts_with("predictor.")));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut m = tiny(Mode::Baseline);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path, 0, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(SvsModel::load(&path).is_err());
        std::fs::write(&path, b"nope").unwrap();
        assert!(SvsModel::load(&path).is_err());
    }

    #[test]
    fn synthesis_is_seeded() {
        use rand::SeedableRng;
        let m = tiny(Mode::PhonemeLevel);
        let pe = EnergySequence::new(vec![1.0, 2.0, 0.1], EnergyLevel::Phoneme).unwrap();
        let (inputs, al) = m.prepare_inputs(&score(), Some(&pe)).unwrap();
        let a = m.synthesize(&inputs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = m.synthesize(&inputs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_frames(), al.total_frames());
        assert_eq!(a.n_mels(), 10);
    }
}
