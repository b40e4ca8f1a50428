//! Listening aid: turns a log-mel spectrogram back into a waveform with
//! iterative phase reconstruction. The result is for audition only and never
//! feeds any metric.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rustfft::{num_complex::Complex, FftPlanner};

use super::stft::reflect_index;
use super::{mel_filterbank, AudioClip, MelConfig, MelSpectrogram, StftConfig};
use crate::Result;

pub const DEFAULT_ITERATIONS: usize = 32;

/// Approximate linear magnitude from log-mel: each filter's amplitude is spread
/// over its bins in proportion to the filter weights.
pub fn mel_to_magnitude(mel: &MelSpectrogram, stft: &StftConfig, cfg: &MelConfig) -> Result<Array2<f64>> {
    let fb = mel_filterbank(stft, cfg, mel.sample_rate())?;
    let row_sums = fb.sum_axis(ndarray::Axis(1));
    let amp = mel.data().mapv(f64::exp);
    let mut spread = fb.clone();
    for (mut row, s) in spread.rows_mut().into_iter().zip(row_sums.iter()) {
        row.mapv_inplace(|w| w / s);
    }
    Ok(amp.dot(&spread))
}

fn stft_complex(x: &[f64], cfg: &StftConfig, n_frames: usize, window: &[f64]) -> Vec<Vec<Complex<f64>>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let pad = (cfg.fft_size / 2) as isize;
    (0..n_frames)
        .map(|t| {
            let start = (t * cfg.hop_size) as isize - pad;
            let mut buf: Vec<Complex<f64>> = (0..cfg.fft_size)
                .map(|n| Complex::new(x[reflect_index(start + n as isize, x.len())] * window[n], 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(cfg.n_bins());
            buf
        })
        .collect()
}

fn istft(spec: &[Vec<Complex<f64>>], cfg: &StftConfig, n_samples: usize, window: &[f64]) -> Vec<f64> {
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size);
    let pad = cfg.fft_size / 2;
    let total = n_samples + cfg.fft_size;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    for (t, frame) in spec.iter().enumerate() {
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        buf[..frame.len()].copy_from_slice(frame);
        for k in 1..cfg.fft_size - frame.len() + 1 {
            buf[cfg.fft_size - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_size;
        for n in 0..cfg.fft_size {
            if start + n < total {
                acc[start + n] += buf[n].re / cfg.fft_size as f64 * window[n];
                norm[start + n] += window[n] * window[n];
            }
        }
    }
    (0..n_samples)
        .map(|i| {
            let w = norm[i + pad];
            if w > 1e-8 {
                acc[i + pad] / w
            } else {
                0.0
            }
        })
        .collect()
}

/// Griffin-Lim reconstruction of a mel spectrogram.
pub fn griffin_lim(
    mel: &MelSpectrogram,
    stft: &StftConfig,
    cfg: &MelConfig,
    iterations: usize,
    seed: u64,
) -> Result<AudioClip> {
    let mag = mel_to_magnitude(mel, stft, cfg)?;
    let n_frames = mel.n_frames();
    let n_samples = ((n_frames - 1) * stft.hop_size).max(1);
    let window = stft.window();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex<f64>>> = mag
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .map(|&m| Complex::from_polar(m, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let mut signal = istft(&spec, stft, n_samples, &window);
    for _ in 0..iterations {
        let rebuilt = stft_complex(&signal, stft, n_frames, &window);
        for (t, frame) in spec.iter_mut().enumerate() {
            for (k, bin) in frame.iter_mut().enumerate() {
                let c = rebuilt[t][k];
                let phase = if c.norm() > 0.0 { c / c.norm() } else { Complex::new(1.0, 0.0) };
                *bin = phase * mag[[t, k]];
            }
        }
        signal = istft(&spec, stft, n_samples, &window);
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        signal.iter_mut().for_each(|v| *v /= peak);
    }
    AudioClip::new(signal, mel.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel, stft_magnitude};

    #[test]
    fn istft_inverts_stft() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..4096).map(|n| (n as f64 * 0.05).sin() * 0.3).collect();
        let w = cfg.window();
        let frames = cfg.n_frames(x.len());
        let spec = stft_complex(&x, &cfg, frames, &w);
        let y = istft(&spec, &cfg, x.len(), &w);
        for (a, b) in x.iter().zip(&y).skip(600).take(2800) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_keeps_the_tone() {
        let stft = StftConfig::default();
        let mel_cfg = MelConfig::default();
        let x: Vec<f64> = (0..9600)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 48000.0).sin())
            .collect();
        let clip = AudioClip::new(x, 48000).unwrap();
        let mel = log_mel(&clip, &stft, &mel_cfg).unwrap();
        let out = griffin_lim(&mel, &stft, &mel_cfg, 8, 0).unwrap();
        assert_eq!(out.len(), (mel.n_frames() - 1) * 256);
        let mag = stft_magnitude(&out, &stft).unwrap();
        let mid = mag.row(mag.nrows() / 2);
        let peak = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((peak as isize - 9).abs() <= 1);
    }
}
