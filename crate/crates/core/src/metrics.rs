//! Mel-domain objective metrics: energy MAE, F0 MAE and mel cepstral
//! distortion, plus the correlation helpers used by the controllability
//! analysis.

use serde::{Deserialize, Serialize};

use crate::dsp::{frame_energy, hz_to_mel, mel_to_hz, MelConfig, MelSpectrogram, MEL_FLOOR};
use crate::{Error, Result};

/// Lowest and highest filter center frequency considered for F0.
pub const F0_MIN_HZ: f64 = 65.0;
pub const F0_MAX_HZ: f64 = 1050.0;
/// Frames with energy below this are unvoiced.
pub const VOICING_ENERGY: f64 = 10.0 * MEL_FLOOR;
/// Cepstral coefficients `c_1..=c_13` enter the distortion; `c_0` is dropped.
pub const MCD_ORDER: usize = 13;

fn same_frames(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<()> {
    if a.n_frames() != b.n_frames() || a.n_mels() != b.n_mels() {
        return Err(Error::InvalidInput(format!(
            "spectrogram shapes differ: {}x{} vs {}x{}",
            a.n_frames(),
            a.n_mels(),
            b.n_frames(),
            b.n_mels()
        )));
    }
    Ok(())
}

/// Mean absolute difference of the frame energies.
pub fn energy_mae(generated: &MelSpectrogram, reference: &MelSpectrogram) -> Result<f64> {
    same_frames(generated, reference)?;
    let a = frame_energy(generated);
    let b = frame_energy(reference);
    Ok(mean_abs_diff(a.values(), b.values()))
}

pub(crate) fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Per-frame fundamental frequency estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn voiced_hz(&self) -> Vec<f64> {
        self.hz.iter().zip(&self.voiced).filter(|(_, v)| **v).map(|(h, _)| *h).collect()
    }
}

/// Picks the strongest mel bin whose center lies in 65-1050 Hz, refines it
/// with a parabola through its neighbours on the log-mel values, and maps the
/// fractional bin back to Hz on the mel axis.
pub fn extract_f0(mel: &MelSpectrogram, cfg: &MelConfig) -> Result<F0Track> {
    if mel.n_mels() != cfg.n_mels {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {} bins, config {}",
            mel.n_mels(),
            cfg.n_mels
        )));
    }
    let edges = cfg.edge_mels();
    let step = edges[1] - edges[0];
    let candidates: Vec<usize> = (0..cfg.n_mels)
        .filter(|&n| {
            let c = mel_to_hz(edges[n + 1]);
            (F0_MIN_HZ..=F0_MAX_HZ).contains(&c)
        })
        .collect();
    let energy = frame_energy(mel);
    let mut hz = Vec::with_capacity(mel.n_frames());
    let mut voiced = Vec::with_capacity(mel.n_frames());
    for (row, &e) in mel.data().rows().into_iter().zip(energy.values()) {
        if e < VOICING_ENERGY || candidates.is_empty() {
            hz.push(0.0);
            voiced.push(false);
            continue;
        }
        let peak = *candidates
            .iter()
            .max_by(|&&a, &&b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .expect("non-empty");
        let mut offset = 0.0;
        if peak > 0 && peak + 1 < cfg.n_mels {
            let (a, b, c) = (row[peak - 1], row[peak], row[peak + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        hz.push(mel_to_hz(edges[peak + 1] + offset * step));
        voiced.push(true);
    }
    Ok(F0Track { hz, voiced })
}

/// F0 error over frames voiced in both tracks. With no such frame the MAE is
/// NaN and `defined` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Comparison {
    pub mae_hz: f64,
    pub frames_compared: usize,
    pub defined: bool,
}

pub fn f0_mae(generated: &MelSpectrogram, reference: &MelSpectrogram, cfg: &MelConfig) -> Result<F0Comparison> {
    same_frames(generated, reference)?;
    let a = extract_f0(generated, cfg)?;
    let b = extract_f0(reference, cfg)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..a.hz.len() {
        if a.voiced[i] && b.voiced[i] {
            sum += (a.hz[i] - b.hz[i]).abs();
            n += 1;
        }
    }
    Ok(if n == 0 {
        F0Comparison {
            mae_hz: f64::NAN,
            frames_compared: 0,
            defined: false,
        }
    } else {
        F0Comparison {
            mae_hz: sum / n as f64,
            frames_compared: n,
            defined: true,
        }
    })
}

/// Orthonormal DCT-II coefficients `1..=order` of one log-mel row.
pub fn mel_cepstrum(row: &[f64], order: usize) -> Vec<f64> {
    let n = row.len() as f64;
    (1..=order)
        .map(|d| {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(k, x)| x * (std::f64::consts::PI * d as f64 * (k as f64 + 0.5) / n).cos())
                .sum();
            s * (2.0 / n).sqrt()
        })
        .collect()
}

/// Mean over frames of `10 / ln 10 * sqrt(2 * sum_d (c_d - c'_d)^2)`.
pub fn mcd(generated: &MelSpectrogram, reference: &MelSpectrogram) -> Result<f64> {
    same_frames(generated, reference)?;
    let k = 10.0 / std::f64::consts::LN_10;
    let total: f64 = generated
        .data()
        .rows()
        .into_iter()
        .zip(reference.data().rows())
        .map(|(a, b)| {
            let ca = mel_cepstrum(a.as_slice().expect("contiguous rows"), MCD_ORDER);
            let cb = mel_cepstrum(b.as_slice().expect("contiguous rows"), MCD_ORDER);
            let sq: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum();
            k * (2.0 * sq).sqrt()
        })
        .sum();
    Ok(total / generated.n_frames() as f64)
}

/// Metrics for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub n_frames: usize,
    pub energy_mae: f64,
    /// `None` when no frame is voiced in both spectrograms.
    pub f0_mae_hz: Option<f64>,
    pub f0_frames_compared: usize,
    pub mcd_db: f64,
    /// Pearson correlation between input (reference) and output frame energy.
    pub energy_pearson: f64,
}

pub fn evaluate_pair(id: &str, generated: &MelSpectrogram, reference: &MelSpectrogram, cfg: &MelConfig) -> Result<UtteranceMetrics> {
    let f0 = f0_mae(generated, reference, cfg)?;
    let eg = frame_energy(generated);
    let er = frame_energy(reference);
    Ok(UtteranceMetrics {
        id: id.to_string(),
        n_frames: generated.n_frames(),
        energy_mae: mean_abs_diff(eg.values(), er.values()),
        f0_mae_hz: f0.defined.then_some(f0.mae_hz),
        f0_frames_compared: f0.frames_compared,
        mcd_db: mcd(generated, reference)?,
        energy_pearson: pearson(er.values(), eg.values()),
    })
}

/// Frame-weighted summary over utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub energy_mae: f64,
    pub f0_mae_hz: Option<f64>,
    pub mcd_db: f64,
    pub energy_pearson: f64,
    pub n_frames_compared: usize,
    pub f0_frames_compared: usize,
    pub utterances: Vec<UtteranceMetrics>,
}

impl EvalReport {
    /// Aggregates per-utterance metrics; utterances are sorted by id so the
    /// result does not depend on evaluation order.
    pub fn from_utterances(mut utterances: Vec<UtteranceMetrics>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidInput("nothing to evaluate".into()));
        }
        utterances.sort_by(|a, b| a.id.cmp(&b.id));
        let frames: usize = utterances.iter().map(|u| u.n_frames).sum();
        let weighted = |f: fn(&UtteranceMetrics) -> f64| {
            utterances.iter().map(|u| f(u) * u.n_frames as f64).sum::<f64>() / frames as f64
        };
        let f0_frames: usize = utterances.iter().map(|u| u.f0_frames_compared).sum();
        let f0 = (f0_frames > 0).then(|| {
            utterances
                .iter()
                .filter_map(|u| u.f0_mae_hz.map(|m| m * u.f0_frames_compared as f64))
                .sum::<f64>()
                / f0_frames as f64
        });
        Ok(Self {
            energy_mae: weighted(|u| u.energy_mae),
            f0_mae_hz: f0,
            mcd_db: weighted(|u| u.mcd_db),
            energy_pearson: utterances.iter().map(|u| u.energy_pearson).sum::<f64>() / utterances.len() as f64,
            n_frames_compared: frames,
            f0_frames_compared: f0_frames,
            utterances,
        })
    }
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Average ranks (ties share the mean rank).
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Hz distance between the centers of adjacent mel filters around `hz`.
pub fn mel_bandwidth_hz(hz: f64, cfg: &MelConfig) -> f64 {
    let edges = cfg.edge_mels();
    let step = edges[1] - edges[0];
    let m = hz_to_mel(hz);
    mel_to_hz(m + step / 2.0) - mel_to_hz(m - step / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{log_mel, AudioClip, StftConfig, LOG_FLOOR};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn random_mel(seed: u64, t: usize) -> MelSpectrogram {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        MelSpectrogram::new(Array2::from_shape_simple_fn((t, 80), || r.gen_range(-8.0..3.0)), 256, 48000).unwrap()
    }

    fn tone(hz: f64, seconds: f64) -> AudioClip {
        let n = (seconds * 48000.0) as usize;
        let x = (0..n)
            .map(|i| {
                let ph = 2.0 * std::f64::consts::PI * hz * i as f64 / 48000.0;
                (1..=6).map(|k| (ph * k as f64).sin() / k as f64).sum::<f64>() * 0.2
            })
            .collect();
        AudioClip::new(x, 48000).unwrap()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn identical_inputs_score_zero() {
        let m = random_mel(1, 12);
        let cfg = MelConfig::default();
        assert_eq!(energy_mae(&m, &m).unwrap(), 0.0);
        assert_eq!(mcd(&m, &m).unwrap(), 0.0);
        let f0 = f0_mae(&m, &m, &cfg).unwrap();
        assert!(f0.defined && f0.mae_hz == 0.0);
    }

    #[test]
    fn log2_shift_doubles_energy() {
        let gt = random_mel(2, 10);
        let shifted = MelSpectrogram::new(gt.data() + 2f64.ln(), 256, 48000).unwrap();
        let mean_e = frame_energy(&gt).values().iter().sum::<f64>() / 10.0;
        assert!((energy_mae(&shifted, &gt).unwrap() - mean_e).abs() < 1e-12);
    }

    #[test]
    fn mcd_ignores_global_offset_and_matches_scalar_loop() {
        let a = random_mel(3, 2);
        let b = MelSpectrogram::new(a.data() + 1.7, 256, 48000).unwrap();
        assert!(mcd(&a, &b).unwrap().abs() < 1e-9);
        let c = random_mel(4, 2);
        // Scalar-loop oracle.
        let mut total = 0.0;
        for t in 0..2 {
            let mut sq = 0.0;
            for d in 1..=13 {
                let (mut ca, mut cc) = (0.0, 0.0);
                for k in 0..80 {
                    let w = (std::f64::consts::PI * d as f64 * (k as f64 + 0.5) / 80.0).cos();
                    ca += a.data()[[t, k]] * w;
                    cc += c.data()[[t, k]] * w;
                }
                let diff = (ca - cc) * (2.0f64 / 80.0).sqrt();
                sq += diff * diff;
            }
            total += 10.0 / 10f64.ln() * (2.0 * sq).sqrt();
        }
        assert!((mcd(&a, &c).unwrap() - total / 2.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_are_symmetric_and_reject_mismatch() {
        let a = random_mel(5, 6);
        let b = random_mel(6, 6);
        let cfg = MelConfig::default();
        assert_eq!(energy_mae(&a, &b).unwrap(), energy_mae(&b, &a).unwrap());
        assert!((mcd(&a, &b).unwrap() - mcd(&b, &a).unwrap()).abs() < 1e-12);
        assert_eq!(f0_mae(&a, &b, &cfg).unwrap().mae_hz, f0_mae(&b, &a, &cfg).unwrap().mae_hz);
        let short = random_mel(7, 5);
        assert!(matches!(energy_mae(&a, &short), Err(Error::InvalidInput(_))));
        assert!(mcd(&a, &short).is_err());
        assert!(f0_mae(&a, &short, &cfg).is_err());
    }

    #[test]
    fn silence_is_unvoiced() {
        let m = MelSpectrogram::silence(8, 80, 256, 48000).unwrap();
        let cfg = MelConfig::default();
        let track = extract_f0(&m, &cfg).unwrap();
        assert!(track.voiced.iter().all(|v| !v));
        let cmp = f0_mae(&m, &m, &cfg).unwrap();
        assert!(!cmp.defined && cmp.mae_hz.is_nan() && cmp.frames_compared == 0);
    }

    #[test]
    fn harmonic_tone_pitch_is_recovered() {
        let cfg = MelConfig::default();
        let stft = StftConfig::default();
        let m440 = log_mel(&tone(440.0, 0.5), &stft, &cfg).unwrap();
        let f440 = median(extract_f0(&m440, &cfg).unwrap().voiced_hz());
        let tol = mel_bandwidth_hz(440.0, &cfg) / 2.0;
        assert!((f440 - 440.0).abs() <= tol, "{f440} vs 440 +- {tol}");
        let m220 = log_mel(&tone(220.0, 0.5), &stft, &cfg).unwrap();
        let f220 = median(extract_f0(&m220, &cfg).unwrap().voiced_hz());
        assert!(f220 < f440);
    }

    #[test]
    fn one_bin_shift_costs_one_bandwidth() {
        let cfg = MelConfig::default();
        let centers = cfg.center_frequencies();
        // A symmetric peak at bin n sits exactly on the filter center.
        let peak_at = |bins: &[usize]| {
            let mut d = Array2::from_elem((bins.len(), 80), LOG_FLOOR);
            for (t, &n) in bins.iter().enumerate() {
                d[[t, n - 1]] = -1.0;
                d[[t, n]] = 1.0;
                d[[t, n + 1]] = -1.0;
            }
            MelSpectrogram::new(d, 256, 48000).unwrap()
        };
        let gt_bins = [3usize, 6, 10, 14];
        let gt = peak_at(&gt_bins);
        let up: Vec<usize> = gt_bins.iter().map(|n| n + 1).collect();
        let gen = peak_at(&up);
        let expected = gt_bins.iter().map(|&n| centers[n + 1] - centers[n]).sum::<f64>() / 4.0;
        let got = f0_mae(&gen, &gt, &cfg).unwrap();
        assert_eq!(got.frames_compared, 4);
        assert!((got.mae_hz - expected).abs() < 1e-9, "{} vs {expected}", got.mae_hz);
    }

    #[test]
    fn report_aggregates_by_frames() {
        let u = |id: &str, n, e| UtteranceMetrics {
            id: id.into(),
            n_frames: n,
            energy_mae: e,
            f0_mae_hz: None,
            f0_frames_compared: 0,
            mcd_db: 1.0,
            energy_pearson: 0.5,
        };
        let r = EvalReport::from_utterances(vec![u("b", 30, 2.0), u("a", 10, 6.0)]).unwrap();
        assert_eq!(r.utterances[0].id, "a");
        assert!((r.energy_mae - 3.0).abs() < 1e-12);
        assert_eq!(r.f0_mae_hz, None);
        assert_eq!(r.n_frames_compared, 40);
        assert!(EvalReport::from_utterances(vec![]).is_err());
    }

    #[test]
    fn rank_correlations() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), vec![3.0, 0.5, 2.0, 0.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 1000.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
    }
}
