use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{stft_magnitude, AudioClip, StftConfig};
use crate::{Error, Result};

/// Filterbank outputs are floored at `1e-5` before the natural log.
pub const MEL_FLOOR: f64 = 1e-5;
/// `ln(MEL_FLOOR)`, the smallest value a log-mel entry can take.
pub const LOG_FLOOR: f64 = -11.512925464970229;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min_hz: 20.0,
            f_max_hz: 24000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.n_mels < 2 {
            return Err(Error::InvalidConfig("need at least two mel bins".into()));
        }
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz) {
            return Err(Error::InvalidConfig(format!(
                "mel band [{}, {}] is empty",
                self.f_min_hz, self.f_max_hz
            )));
        }
        if self.f_max_hz > nyquist {
            return Err(Error::InvalidConfig(format!(
                "f_max {} Hz exceeds Nyquist {} Hz",
                self.f_max_hz, nyquist
            )));
        }
        Ok(())
    }

    /// Center frequency in Hz of every filter, ascending.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edge_mels()[1..=self.n_mels].iter().map(|&m| mel_to_hz(m)).collect()
    }

    /// `n_mels + 2` equally spaced points on the mel axis.
    pub(crate) fn edge_mels(&self) -> Vec<f64> {
        let lo = hz_to_mel(self.f_min_hz);
        let hi = hz_to_mel(self.f_max_hz);
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        (0..self.n_mels + 2).map(|i| lo + step * i as f64).collect()
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak on the HTK mel axis, shape `N x K`.
pub fn mel_filterbank(stft: &StftConfig, mel: &MelConfig, sample_rate: u32) -> Result<Array2<f64>> {
    stft.validate()?;
    mel.validate(sample_rate)?;
    let n_bins = stft.n_bins();
    let edges: Vec<f64> = mel.edge_mels().into_iter().map(mel_to_hz).collect();
    let bin_hz = sample_rate as f64 / stft.fft_size as f64;
    let mut fb = Array2::zeros((mel.n_mels, n_bins));
    for n in 0..mel.n_mels {
        let (lo, center, hi) = (edges[n], edges[n + 1], edges[n + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[[n, k]] = rising.min(falling).max(0.0);
        }
        if fb.row(n).sum() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mel filter {n} ({lo:.1}-{hi:.1} Hz) covers no STFT bin; lower n_mels or raise fft_size"
            )));
        }
    }
    Ok(fb)
}

/// Log-mel spectrogram, `T x N`, natural log of the floored filterbank output.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Array2<f64>,
    hop_size: usize,
    sample_rate: u32,
}

impl MelSpectrogram {
    /// Wraps a `T x N` matrix. Entries must be finite; values below the log
    /// floor by less than `1e-6` (f32 storage round-off) are clamped up to it.
    pub fn new(mut data: Array2<f64>, hop_size: usize, sample_rate: u32) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("mel spectrogram has no frames or bins".into()));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite mel entry".into()));
            }
            if *v < LOG_FLOOR {
                if *v < LOG_FLOOR - 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "mel entry {v} below log floor {LOG_FLOOR}"
                    )));
                }
                *v = LOG_FLOOR;
            }
        }
        Ok(Self {
            data,
            hop_size,
            sample_rate,
        })
    }

    /// An all-silent spectrogram.
    pub fn silence(n_frames: usize, n_mels: usize, hop_size: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::from_elem((n_frames, n_mels), LOG_FLOOR), hop_size, sample_rate)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.ncols()
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Truncates or pads (with the log floor) to exactly `n_frames`.
    pub fn fit_to_frames(&self, n_frames: usize) -> Result<Self> {
        let mut data = Array2::from_elem((n_frames, self.n_mels()), LOG_FLOOR);
        let keep = n_frames.min(self.n_frames());
        data.slice_mut(ndarray::s![..keep, ..])
            .assign(&self.data.slice(ndarray::s![..keep, ..]));
        Self::new(data, self.hop_size, self.sample_rate)
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.data.slice(ndarray::s![start..end, ..]).to_owned(),
            self.hop_size,
            self.sample_rate,
        )
    }
}

/// `S[t, n] = ln(max(sum_k M[n, k] |STFT[t, k]|, 1e-5))`.
pub fn log_mel(clip: &AudioClip, stft: &StftConfig, mel: &MelConfig) -> Result<MelSpectrogram> {
    let fb = mel_filterbank(stft, mel, clip.sample_rate())?;
    let mag = stft_magnitude(clip, stft)?;
    let data = mag.dot(&fb.t()).mapv(|v| v.max(MEL_FLOOR).ln());
    MelSpectrogram::new(data, stft.hop_size, clip.sample_rate())
}

/// JSON sidecar written next to a binary mel file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MelSidecar {
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes row-major little-endian f32 data to `path` and the shape sidecar to
/// `path.json`.
pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut bytes = Vec::with_capacity(mel.data.len() * 4);
    for &v in mel.data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = MelSidecar {
        n_frames: mel.n_frames(),
        n_mels: mel.n_mels(),
        hop_size: mel.hop_size,
        sample_rate: mel.sample_rate,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let side = sidecar_path(path);
    let meta: MelSidecar =
        serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != meta.n_frames * meta.n_mels * 4 {
        return Err(Error::InvalidInput(format!(
            "{}: expected {} bytes for {}x{} mel, found {}",
            path.display(),
            meta.n_frames * meta.n_mels * 4,
            meta.n_frames,
            meta.n_mels,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((meta.n_frames, meta.n_mels), values)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    MelSpectrogram::new(data, meta.hop_size, meta.sample_rate)
}
