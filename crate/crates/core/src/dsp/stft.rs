use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::{Error, Result};

/// Framing parameters. The window is always a periodic Hann of `win_size`
/// samples centered inside the `fft_size` frame, and the signal is
/// reflect-padded by `fft_size / 2` on both sides so frame `t` is centered on
/// sample `t * hop_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_size: usize,
    pub hop_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            win_size: 1024,
            hop_size: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 || self.win_size == 0 || self.fft_size == 0 {
            return Err(Error::InvalidConfig("STFT sizes must be positive".into()));
        }
        if !(self.hop_size <= self.win_size && self.win_size <= self.fft_size) {
            return Err(Error::InvalidConfig(format!(
                "need hop <= win <= fft, got {} / {} / {}",
                self.hop_size, self.win_size, self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of frequency bins `K`.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames `T` produced for a clip of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_size + 1
    }

    /// Periodic Hann window zero-padded to `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.fft_size];
        let offset = (self.fft_size - self.win_size) / 2;
        for n in 0..self.win_size {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / self.win_size as f64;
            w[offset + n] = 0.5 - 0.5 * phase.cos();
        }
        w
    }
}

/// Maps an index of the padded signal back into `[0, len)` by mirror
/// reflection without repeating the edge sample.
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Magnitude STFT, shape `T x K`.
pub fn stft_magnitude(clip: &AudioClip, cfg: &StftConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let x = clip.samples();
    let n_frames = cfg.n_frames(x.len());
    let n_bins = cfg.n_bins();
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let pad = (cfg.fft_size / 2) as isize;

    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for t in 0..n_frames {
        let start = (t * cfg.hop_size) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + n as isize, x.len())];
            *slot = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = buf[k].norm();
        }
    }
    Ok(out)
}
