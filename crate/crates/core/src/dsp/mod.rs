//! Deterministic signal processing: framing, mel analysis and energy.

mod audio;
pub mod audition;
mod energy;
mod mel;
mod stft;

pub use audio::{read_wav, resample_linear, to_pcm16, write_wav, AudioClip};
pub use energy::{frame_energy, EnergyLevel, EnergySequence};
pub use mel::{
    hz_to_mel, log_mel, mel_filterbank, mel_to_hz, read_mel, write_mel, MelConfig,
    MelSpectrogram, MelSidecar, LOG_FLOOR, MEL_FLOOR,
};
pub use stft::{stft_magnitude, StftConfig};

use serde::{Deserialize, Serialize};

/// Sample rate plus framing and filterbank settings shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub mel: MelConfig,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48000,
            stft: StftConfig::default(),
            mel: MelConfig::default(),
        }
    }
}

impl DspConfig {
    pub fn log_mel(&self, clip: &AudioClip) -> crate::Result<MelSpectrogram> {
        log_mel(clip, &self.stft, &self.mel)
    }

    /// Seconds covered by one hop.
    pub fn frame_period(&self) -> f64 {
        self.stft.hop_size as f64 / self.sample_rate as f64
    }
}
