use std::path::Path;

use dynsvs::acoustic::{Encoder, FrameInputs, ModelConfig};
use dynsvs::corpus::{generate_synthetic_corpus, parse_annotation_str, to_annotation_line, SynthSpec, UtteranceRecord};
use dynsvs::diffusion::{forward_noise, l1_loss, standard_normal, DiffusionSchedule};
use dynsvs::dsp::{frame_energy, AudioClip, DspConfig, EnergyLevel, EnergySequence, MelSpectrogram, LOG_FLOOR};
use dynsvs::dynamics::PhonemeScore;
use dynsvs::metrics::{energy_mae, mcd, evaluate_pair};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clip_from(seed: u64, len: usize, amp: f64) -> AudioClip {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.gen_range(100.0..4000.0);
    let samples = (0..len)
        .map(|n| amp * (0.7 * (std::f64::consts::TAU * f * n as f64 / 48000.0).sin() + 0.3 * rng.gen_range(-1.0..1.0)))
        .collect();
    AudioClip::new(samples, 48000).unwrap()
}

fn mel_from(data: Array2<f64>) -> MelSpectrogram {
    MelSpectrogram::new(data.mapv(|v| v.max(LOG_FLOOR)), 256, 48000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_count_and_energy_positivity(seed in 0u64..1000, len in 1usize..6000, amp in 0.0f64..1.0) {
        let dsp = DspConfig::default();
        let mel = dsp.log_mel(&clip_from(seed, len, amp)).unwrap();
        prop_assert_eq!(mel.n_frames(), len / 256 + 1);
        prop_assert_eq!(dsp.stft.n_bins(), dsp.stft.fft_size / 2 + 1);
        prop_assert!(mel.data().iter().all(|&v| v.is_finite() && v >= LOG_FLOOR));
        prop_assert!(frame_energy(&mel).values().iter().all(|&e| e > 0.0 && e.is_finite()));
    }

    #[test]
    fn energy_scales_with_amplitude(seed in 0u64..1000, len in 2000usize..6000, g in prop::sample::select(vec![0.5, 2.0])) {
        let dsp = DspConfig::default();
        let clip = clip_from(seed, len, 0.2);
        let base = dsp.log_mel(&clip).unwrap();
        let scaled = dsp.log_mel(&clip.scaled(g)).unwrap();
        let e0 = frame_energy(&base);
        let e1 = frame_energy(&scaled);
        for t in 0..base.n_frames() {
            let above = base.data().row(t).iter().chain(scaled.data().row(t).iter()).all(|&v| v > LOG_FLOOR);
            if above {
                let want = g * e0.values()[t];
                prop_assert!((e1.values()[t] - want).abs() <= 1e-6 * want, "frame {}: {} vs {}", t, e1.values()[t], want);
            }
        }
    }

    #[test]
    fn schedule_invariants(n in 1usize..200, lo in 1e-5f64..0.1, span in 1e-4f64..0.4) {
        let s = DiffusionSchedule::linear(n, lo, lo + span).unwrap();
        let mut prod = 1.0;
        for t in 1..=n {
            let b = s.beta(t);
            prop_assert!(b > 0.0 && b < 1.0);
            if t > 1 {
                prop_assert!(b > s.beta(t - 1));
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
            prod *= 1.0 - b;
            prop_assert!((s.alpha_bar(t) - prod).abs() <= 1e-12);
            prop_assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
    }

    #[test]
    fn l1_loss_is_non_negative_and_zero_only_on_match(seed in 0u64..1000, bump in 1e-6f64..1.0, r in 0usize..5, c in 0usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = standard_normal(5, 7, &mut rng);
        let pred = standard_normal(5, 7, &mut rng);
        prop_assert!(l1_loss(&eps, &pred).0 >= 0.0);
        prop_assert_eq!(l1_loss(&eps, &eps).0, 0.0);
        let mut near = eps.clone();
        near[[r, c]] += bump;
        prop_assert!(l1_loss(&eps, &near).0 > 0.0);
    }

    #[test]
    fn metrics_are_symmetric_and_vanish_on_identity(seed in 0u64..1000, t in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = mel_from(standard_normal(t, 80, &mut rng) * 2.0 - 4.0);
        let b = mel_from(standard_normal(t, 80, &mut rng) * 2.0 - 4.0);
        let cfg = DspConfig::default().mel;
        let ab = evaluate_pair("x", &a, &b, &cfg).unwrap();
        let ba = evaluate_pair("x", &b, &a, &cfg).unwrap();
        prop_assert!(ab.energy_mae >= 0.0 && ab.mcd_db >= 0.0);
        prop_assert!((ab.energy_mae - ba.energy_mae).abs() <= 1e-12);
        prop_assert!((ab.mcd_db - ba.mcd_db).abs() <= 1e-12);
        prop_assert_eq!(ab.f0_mae_hz.is_some(), ba.f0_mae_hz.is_some());
        if let (Some(x), Some(y)) = (ab.f0_mae_hz, ba.f0_mae_hz) {
            prop_assert!((x - y).abs() <= 1e-12 && x >= 0.0);
        }
        let aa = evaluate_pair("x", &a, &a, &cfg).unwrap();
        prop_assert_eq!(aa.energy_mae, 0.0);
        prop_assert_eq!(aa.mcd_db, 0.0);
        prop_assert!(aa.f0_mae_hz.is_none_or(|v| v == 0.0));
    }

    #[test]
    fn energy_mae_homogeneity_and_mcd_offset(seed in 0u64..1000, g in 0.1f64..10.0, c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = standard_normal(12, 80, &mut rng) - 3.0;
        let b = standard_normal(12, 80, &mut rng) - 3.0;
        let base = energy_mae(&mel_from(a.clone()), &mel_from(b.clone())).unwrap();
        let shifted = energy_mae(&mel_from(&a + g.ln()), &mel_from(&b + g.ln())).unwrap();
        prop_assert!((shifted - g * base).abs() <= 1e-6 * g * base);
        let m0 = mcd(&mel_from(a.clone()), &mel_from(b.clone())).unwrap();
        let m1 = mcd(&mel_from(&a + c), &mel_from(&b + c)).unwrap();
        prop_assert!((m0 - m1).abs() <= 1e-9);
    }

    #[test]
    fn annotation_lines_roundtrip(
        phon in prop::collection::vec(prop::sample::select(vec!["a", "o", "sh", "<AP>", "ng"]), 1..12),
        seed in 0u64..1000,
        with_energy in any::<bool>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let notes: Vec<u8> = phon.iter().map(|&p| if p == "<AP>" { 0 } else { rng.gen_range(21..=108) }).collect();
        let durations: Vec<f64> = phon.iter().map(|_| rng.gen_range(0.01..1.0)).collect();
        let energy = with_energy.then(|| {
            EnergySequence::new(phon.iter().map(|_| rng.gen_range(0.0..20.0)).collect(), EnergyLevel::Phoneme).unwrap()
        });
        let score = PhonemeScore::new(phon.iter().map(|s| s.to_string()).collect(), notes, durations, energy).unwrap();
        let record = UtteranceRecord { id: format!("u{seed}"), score, audio: None, split: None };
        let line = serde_json::to_string(&to_annotation_line(&record, Path::new("."))).unwrap();
        let parsed = parse_annotation_str(&line, Path::new("."), None).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0].score, &record.score);
        prop_assert_eq!(&parsed[0].id, &record.id);
    }

    #[test]
    fn encoder_forward_is_bitwise_deterministic(seed in 0u64..1000, t in 1usize..20, offset in 0usize..50) {
        let cfg = ModelConfig { hidden: 8, conv_filter: 8, predictor_filter: 8, n_fft_blocks: 2, phoneme_vocab: 5, energy_vocab: 16, ..ModelConfig::default() };
        let inputs = FrameInputs {
            phoneme_ids: (0..t).map(|i| i % 5).collect(),
            note_ids: (0..t).map(|i| 40 + i).collect(),
            energy_bins: Some((0..t).map(|i| (i * 3) % 16).collect()),
        };
        let a = Encoder::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (ya, _) = a.forward(&inputs, offset).unwrap();
        let (yb, _) = b.forward(&inputs, offset).unwrap();
        prop_assert_eq!(ya.dim(), (t, 8));
        prop_assert!(ya.iter().zip(yb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn forward_noise_preserves_unit_variance() {
    let s = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let x0 = standard_normal(n, 1, &mut rng);
    let eps = standard_normal(n, 1, &mut rng);
    let tol = 3.0 * (2.0 / n as f64).sqrt();
    for t in [1, 10, 50, 100] {
        let xt = forward_noise(&x0, t, &eps, &s).unwrap();
        let mean = xt.mean().unwrap();
        let var = xt.mapv(|v| (v - mean).powi(2)).sum() / (n - 1) as f64;
        assert!((var - 1.0).abs() < tol, "t={t}: var {var}");
    }
}

#[test]
fn synthetic_corpus_is_seeded_and_splits_are_disjoint() {
    let dsp = DspConfig::default();
    let spec = SynthSpec {
        n_train: 6,
        n_val: 2,
        n_test: 3,
        phonemes_per_utterance: [2, 4],
        seed: 4,
        ..SynthSpec::default()
    };
    let a = generate_synthetic_corpus(&spec, &dsp).unwrap();
    let b = generate_synthetic_corpus(&spec, &dsp).unwrap();
    assert_eq!(a.len(), 11);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.record, y.record);
        assert_eq!(x.clip, y.clip);
    }
    let mut ids: Vec<&str> = a.iter().map(|u| u.record.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 11);
    let splits: Vec<_> = a.iter().map(|u| u.record.split).collect();
    assert_eq!(splits.iter().flatten().count(), 11);

    let tmp = tempfile::tempdir().unwrap();
    let ha = dynsvs::corpus::write_corpus(&tmp.path().join("a"), &a, &dsp).unwrap();
    let hb = dynsvs::corpus::write_corpus(&tmp.path().join("b"), &b, &dsp).unwrap();
    assert_eq!(ha.hash, hb.hash);
    let map = ha.split_of().unwrap();
    assert_eq!(map.len(), 11);
}
