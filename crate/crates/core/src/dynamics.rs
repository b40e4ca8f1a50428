//! Alignment-aware energy manipulation.
//!
//! Durations in seconds become integer frame counts by rounding cumulative
//! boundaries, so the total frame count never drifts with sequence length.
//! Phoneme-level energy is the mean of frame energy over each phoneme's
//! frames, and expanding it back through the length regulator gives a
//! piecewise-constant frame sequence with the same phoneme means.

use serde::{Deserialize, Serialize};

use crate::dsp::{EnergyLevel, EnergySequence};
use crate::{Error, Result};

/// Lyric token that marks a rest.
pub const REST_TOKEN: &str = "<AP>";
/// MIDI value used for rests.
pub const REST_NOTE: u8 = 0;

/// One utterance's aligned lyric, note and duration sequences, plus an
/// optional phoneme-level energy sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeScore {
    pub phonemes: Vec<String>,
    pub notes: Vec<u8>,
    pub durations_sec: Vec<f64>,
    pub energy: Option<EnergySequence>,
}

impl PhonemeScore {
    pub fn new(
        phonemes: Vec<String>,
        notes: Vec<u8>,
        durations_sec: Vec<f64>,
        energy: Option<EnergySequence>,
    ) -> Result<Self> {
        let score = Self {
            phonemes,
            notes,
            durations_sec,
            energy,
        };
        score.validate()?;
        Ok(score)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.phonemes.len();
        if l == 0 {
            return Err(Error::InvalidInput("score has no phonemes".into()));
        }
        if self.notes.len() != l || self.durations_sec.len() != l {
            return Err(Error::InvalidInput(format!(
                "sequence lengths differ: {} phonemes, {} notes, {} durations",
                l,
                self.notes.len(),
                self.durations_sec.len()
            )));
        }
        if let Some(e) = &self.energy {
            if e.len() != l || e.level() != EnergyLevel::Phoneme {
                return Err(Error::InvalidInput(format!(
                    "score energy must be phoneme-level of length {l}, got {} {} values",
                    e.len(),
                    e.level()
                )));
            }
        }
        if let Some(d) = self.durations_sec.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidInput(format!("duration {d} is not positive")));
        }
        if let Some(n) = self.notes.iter().find(|&&n| n != REST_NOTE && !(21..=108).contains(&n)) {
            return Err(Error::InvalidInput(format!("note {n} outside 0 or 21..=108")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn total_duration_sec(&self) -> f64 {
        self.durations_sec.iter().sum()
    }
}

/// Integer frame counts per phoneme, contiguous and covering `[0, T)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAlignment {
    frames_per_phoneme: Vec<usize>,
    starts: Vec<usize>,
    total_frames: usize,
}

impl FrameAlignment {
    pub fn from_frames(frames_per_phoneme: Vec<usize>) -> Result<Self> {
        if frames_per_phoneme.is_empty() {
            return Err(Error::InvalidInput("alignment needs at least one phoneme".into()));
        }
        if frames_per_phoneme.contains(&0) {
            return Err(Error::InvalidInput("every phoneme needs at least one frame".into()));
        }
        let mut starts = Vec::with_capacity(frames_per_phoneme.len());
        let mut acc = 0;
        for &f in &frames_per_phoneme {
            starts.push(acc);
            acc += f;
        }
        Ok(Self {
            frames_per_phoneme,
            starts,
            total_frames: acc,
        })
    }

    pub fn frames_per_phoneme(&self) -> &[usize] {
        &self.frames_per_phoneme
    }

    pub fn n_phonemes(&self) -> usize {
        self.frames_per_phoneme.len()
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    /// Half-open `[start, end)` frame range of phoneme `i`.
    pub fn span(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i] + self.frames_per_phoneme[i]
    }

    pub fn spans(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n_phonemes()).map(|i| self.span(i))
    }

    /// Phoneme index owning each frame.
    pub fn phoneme_of_frame(&self) -> Vec<usize> {
        let idx: Vec<usize> = (0..self.n_phonemes()).collect();
        length_regulate(&idx, self).expect("lengths match by construction")
    }
}

/// Converts durations in seconds to frame counts by rounding cumulative
/// boundaries. A phoneme that rounds to zero frames takes one frame from its
/// larger neighbour (or the nearest phoneme that can spare one).
pub fn durations_to_frames(durations_sec: &[f64], sample_rate: u32, hop_size: usize) -> Result<FrameAlignment> {
    if durations_sec.is_empty() {
        return Err(Error::InvalidInput("no durations".into()));
    }
    if hop_size == 0 || sample_rate == 0 {
        return Err(Error::InvalidInput("sample rate and hop size must be positive".into()));
    }
    if let Some(d) = durations_sec.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::InvalidInput(format!("duration {d} is not positive")));
    }
    let frames_per_sec = sample_rate as f64 / hop_size as f64;
    let mut cum = 0.0;
    let mut prev = 0usize;
    let mut frames: Vec<usize> = durations_sec
        .iter()
        .map(|d| {
            cum += d;
            let boundary = (cum * frames_per_sec).round() as usize;
            let f = boundary - prev;
            prev = boundary;
            f
        })
        .collect();
    let total = prev;
    if total < frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} phonemes cannot fit in {total} frames",
            frames.len()
        )));
    }
    while let Some(i) = frames.iter().position(|&f| f == 0) {
        let left = i.checked_sub(1).map(|j| (frames[j], j));
        let right = frames.get(i + 1).map(|&f| (f, i + 1));
        let neighbour = match (left, right) {
            (Some(l), Some(r)) => if r.0 > l.0 { r } else { l },
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("total >= len guarantees a donor"),
        };
        let donor = if neighbour.0 >= 2 {
            neighbour.1
        } else {
            (1..frames.len())
                .flat_map(|dist| [i.checked_sub(dist), Some(i + dist)])
                .flatten()
                .find(|&j| j < frames.len() && frames[j] >= 2)
                .expect("total >= len guarantees a donor")
        };
        frames[donor] -= 1;
        frames[i] += 1;
    }
    FrameAlignment::from_frames(frames)
}

/// Repeats `tokens[i]` for `frames_per_phoneme[i]` frames.
pub fn length_regulate<T: Clone>(tokens: &[T], alignment: &FrameAlignment) -> Result<Vec<T>> {
    if tokens.len() != alignment.n_phonemes() {
        return Err(Error::InvalidInput(format!(
            "{} tokens for an alignment of {} phonemes",
            tokens.len(),
            alignment.n_phonemes()
        )));
    }
    let mut out = Vec::with_capacity(alignment.total_frames());
    for (tok, &n) in tokens.iter().zip(alignment.frames_per_phoneme()) {
        out.extend(std::iter::repeat_n(tok.clone(), n));
    }
    Ok(out)
}

/// Mean frame energy over each phoneme's frames.
pub fn phoneme_energy(frame_energy: &EnergySequence, alignment: &FrameAlignment) -> Result<EnergySequence> {
    if frame_energy.level() != EnergyLevel::Frame {
        return Err(Error::InvalidInput("expected frame-level energy".into()));
    }
    if frame_energy.len() != alignment.total_frames() {
        return Err(Error::InvalidInput(format!(
            "{} frame energies for an alignment of {} frames",
            frame_energy.len(),
            alignment.total_frames()
        )));
    }
    let e = frame_energy.values();
    let values = alignment
        .spans()
        .map(|span| {
            let n = span.len() as f64;
            e[span].iter().sum::<f64>() / n
        })
        .collect();
    EnergySequence::new(values, EnergyLevel::Phoneme)
}

/// Piecewise-constant frame energy from phoneme energy.
pub fn expand_phoneme_energy(phoneme_energy: &EnergySequence, alignment: &FrameAlignment) -> Result<EnergySequence> {
    if phoneme_energy.level() != EnergyLevel::Phoneme {
        return Err(Error::InvalidInput("expected phoneme-level energy".into()));
    }
    let values = length_regulate(phoneme_energy.values(), alignment)?;
    EnergySequence::new(values, EnergyLevel::Frame)
}

/// Linear map from continuous energy to an embedding row index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyQuantizer {
    pub n_bins: usize,
    pub e_min: f64,
    pub e_max: f64,
}

pub const DEFAULT_ENERGY_BINS: usize = 256;

impl EnergyQuantizer {
    pub fn new(n_bins: usize, e_min: f64, e_max: f64) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::InvalidConfig("quantizer needs at least two bins".into()));
        }
        if !(e_min.is_finite() && e_max.is_finite() && e_min < e_max) {
            return Err(Error::InvalidConfig(format!("energy range [{e_min}, {e_max}] is empty")));
        }
        Ok(Self { n_bins, e_min, e_max })
    }

    /// Range from the corpus minimum to maximum.
    pub fn fit(values: impl IntoIterator<Item = f64>, n_bins: usize) -> Result<Self> {
        let (mut lo, mut hi, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
        for v in values {
            if !v.is_finite() {
                return Err(Error::InvalidCorpus(format!("non-finite energy {v}")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
        }
        if count == 0 || lo == hi {
            return Err(Error::InvalidCorpus(
                "energy corpus needs at least two distinct values".into(),
            ));
        }
        Self::new(n_bins, lo, hi)
    }

    /// `clamp(floor((e - e_min) / (e_max - e_min) * n_bins), 0, n_bins - 1)`.
    pub fn quantize(&self, e: f64) -> usize {
        let x = (e - self.e_min) / (self.e_max - self.e_min) * self.n_bins as f64;
        if x.is_nan() || x <= 0.0 {
            0
        } else {
            (x.floor() as usize).min(self.n_bins - 1)
        }
    }

    pub fn quantize_all(&self, energy: &EnergySequence) -> Vec<usize> {
        energy.values().iter().map(|&e| self.quantize(e)).collect()
    }

    /// Maps energy onto `[0, 1]` over the fitted range (unclamped).
    pub fn normalize(&self, e: f64) -> f64 {
        (e - self.e_min) / (self.e_max - self.e_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn seq(v: &[f64], level: EnergyLevel) -> EnergySequence {
        EnergySequence::new(v.to_vec(), level).unwrap()
    }

    #[test]
    fn half_second_rounds_up() {
        let a = durations_to_frames(&[0.5], 48000, 256).unwrap();
        assert_eq!(a.frames_per_phoneme(), &[94]);
        assert_eq!(a.total_frames(), 94);
        let b = durations_to_frames(&[0.5, 0.5], 48000, 256).unwrap();
        assert_eq!(b.frames_per_phoneme(), &[94, 94]);
        assert_eq!(b.total_frames(), 188);
        for (fs, hop) in [(48000u32, 256usize), (22050, 256), (16000, 160)] {
            let c = durations_to_frames(&[1.0], fs, hop).unwrap();
            assert_eq!(c.total_frames(), (fs as f64 / hop as f64).round() as usize);
        }
    }

    #[test]
    fn zero_frame_phoneme_steals_from_larger_neighbour() {
        // 1 ms rounds to zero frames; neighbours have 19 and 38 frames.
        let a = durations_to_frames(&[0.1, 0.001, 0.2], 48000, 256).unwrap();
        assert!(a.frames_per_phoneme().iter().all(|&f| f >= 1));
        assert_eq!(a.frames_per_phoneme()[1], 1);
        let raw_right = ((0.301 * 187.5f64).round() - (0.101 * 187.5f64).round()) as usize;
        assert_eq!(a.frames_per_phoneme()[2], raw_right - 1);
        assert_eq!(a.total_frames(), (0.301f64 * 187.5).round() as usize);
    }

    #[test]
    fn run_of_tiny_phonemes_borrows_from_far_donor() {
        let a = durations_to_frames(&[0.001, 0.001, 0.001, 0.5], 48000, 256).unwrap();
        assert_eq!(a.frames_per_phoneme()[..3], [1, 1, 1]);
        assert_eq!(a.total_frames(), (0.503f64 * 187.5).round() as usize);
    }

    #[test]
    fn bad_durations_are_rejected() {
        assert!(matches!(durations_to_frames(&[0.2, 0.0], 48000, 256), Err(Error::InvalidInput(_))));
        assert!(matches!(durations_to_frames(&[-0.1], 48000, 256), Err(Error::InvalidInput(_))));
        assert!(matches!(durations_to_frames(&[0.001; 3], 48000, 256), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn length_regulator_examples() {
        let a = FrameAlignment::from_frames(vec![2, 3]).unwrap();
        assert_eq!(length_regulate(&['a', 'b'], &a).unwrap(), vec!['a', 'a', 'b', 'b', 'b']);
        let ones = FrameAlignment::from_frames(vec![1; 4]).unwrap();
        assert_eq!(length_regulate(&[3, 1, 4, 1], &ones).unwrap(), vec![3, 1, 4, 1]);
        assert!(length_regulate(&[1, 2, 3], &a).is_err());
    }

    #[test]
    fn length_regulator_run_lengths() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let l = rng.gen_range(1..15);
            let frames: Vec<usize> = (0..l).map(|_| rng.gen_range(1..9)).collect();
            // Adjacent tokens differ so runs are unambiguous.
            let tokens: Vec<usize> = (0..l).collect();
            let a = FrameAlignment::from_frames(frames.clone()).unwrap();
            let out = length_regulate(&tokens, &a).unwrap();
            assert_eq!(out.len(), frames.iter().sum::<usize>());
            let mut runs: Vec<(usize, usize)> = Vec::new();
            for t in out {
                match runs.last_mut() {
                    Some((tok, n)) if *tok == t => *n += 1,
                    _ => runs.push((t, 1)),
                }
            }
            let expected: Vec<(usize, usize)> = tokens.into_iter().zip(frames).collect();
            assert_eq!(runs, expected);
        }
    }

    #[test]
    fn phoneme_energy_examples() {
        let a = FrameAlignment::from_frames(vec![3]).unwrap();
        let p = phoneme_energy(&seq(&[1.0, 2.0, 3.0], EnergyLevel::Frame), &a).unwrap();
        assert_eq!(p.values(), &[2.0]);
        assert_eq!(p.level(), EnergyLevel::Phoneme);
        let b = FrameAlignment::from_frames(vec![1, 1, 1]).unwrap();
        let q = phoneme_energy(&seq(&[4.0, 5.0, 6.0], EnergyLevel::Frame), &b).unwrap();
        assert_eq!(q.values(), &[4.0, 5.0, 6.0]);
        assert!(phoneme_energy(&seq(&[1.0, 2.0], EnergyLevel::Frame), &a).is_err());
        assert!(phoneme_energy(&seq(&[1.0, 2.0, 3.0], EnergyLevel::Phoneme), &a).is_err());
    }

    #[test]
    fn phoneme_energy_matches_scalar_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<usize> = (0..12).map(|_| rng.gen_range(1..20)).collect();
        let a = FrameAlignment::from_frames(frames.clone()).unwrap();
        let e: Vec<f64> = (0..a.total_frames()).map(|_| rng.gen_range(0.0..5.0)).collect();
        let got = phoneme_energy(&seq(&e, EnergyLevel::Frame), &a).unwrap();
        let mut start = 0;
        for (i, &n) in frames.iter().enumerate() {
            let mut acc = 0.0;
            for t in start..start + n {
                acc += e[t];
            }
            assert!((got.values()[i] - acc / n as f64).abs() < 1e-12);
            start += n;
        }
    }

    #[test]
    fn expand_examples() {
        let a = FrameAlignment::from_frames(vec![3]).unwrap();
        let f = expand_phoneme_energy(&seq(&[2.0], EnergyLevel::Phoneme), &a).unwrap();
        assert_eq!(f.values(), &[2.0, 2.0, 2.0]);
        assert!(expand_phoneme_energy(&seq(&[2.0, 1.0], EnergyLevel::Phoneme), &a).is_err());
    }

    #[test]
    fn expansion_error_is_zero_only_for_piecewise_constant_frames() {
        let a = FrameAlignment::from_frames(vec![2, 3]).unwrap();
        let mae = |frame: &[f64]| {
            let fe = seq(frame, EnergyLevel::Frame);
            let back = expand_phoneme_energy(&phoneme_energy(&fe, &a).unwrap(), &a).unwrap();
            frame.iter().zip(back.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / frame.len() as f64
        };
        assert_eq!(mae(&[1.0, 1.0, 4.0, 4.0, 4.0]), 0.0);
        // Means 1.5 and 4; deviations 0.5,0.5,1,0,1 -> 3/5.
        assert!((mae(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn quantizer_examples() {
        let q = EnergyQuantizer::fit([0.0, 1.0, 2.0], 256).unwrap();
        assert_eq!((q.e_min, q.e_max), (0.0, 2.0));
        assert_eq!(q.quantize(0.0), 0);
        assert_eq!(q.quantize(2.0), 255);
        assert_eq!(q.quantize(1.0), 128);
        assert_eq!(q.quantize(-5.0), 0);
        assert_eq!(q.quantize(50.0), 255);
        assert!(matches!(EnergyQuantizer::fit([3.0, 3.0], 256), Err(Error::InvalidCorpus(_))));
        assert!(matches!(EnergyQuantizer::fit([], 256), Err(Error::InvalidCorpus(_))));
    }

    #[test]
    fn quantizer_fit_matches_sort_and_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-3.0..40.0)).collect();
        let q = EnergyQuantizer::fit(v.iter().copied(), 256).unwrap();
        let probes: Vec<f64> = (0..1000).map(|_| rng.gen_range(-10.0..50.0)).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(q.e_min, v[0]);
        assert_eq!(q.e_max, v[v.len() - 1]);
        for e in probes {
            let raw = ((e - q.e_min) / (q.e_max - q.e_min) * 256.0).floor();
            let expected = raw.clamp(0.0, 255.0) as usize;
            assert_eq!(q.quantize(e), expected);
        }
    }

    proptest! {
        #[test]
        fn alignment_conserves_frames(durs in prop::collection::vec(0.01f64..1.0, 1..30)) {
            let a = durations_to_frames(&durs, 48000, 256).unwrap();
            let total: f64 = durs.iter().sum::<f64>() * 48000.0 / 256.0;
            prop_assert_eq!(a.frames_per_phoneme().iter().sum::<usize>(), a.total_frames());
            prop_assert!((a.total_frames() as f64 - total).abs() <= 0.5 + 1e-9);
            prop_assert!(a.frames_per_phoneme().iter().all(|&f| f >= 1));
            let spans: Vec<_> = a.spans().collect();
            prop_assert_eq!(spans[0].start, 0);
            prop_assert_eq!(spans.last().unwrap().end, a.total_frames());
            for w in spans.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
        }

        #[test]
        fn expand_then_average_is_identity(
            vals in prop::collection::vec(0.0f64..30.0, 1..20),
            seed in any::<u64>(),
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<usize> = vals.iter().map(|_| rng.gen_range(1..40)).collect();
            let a = FrameAlignment::from_frames(frames).unwrap();
            let p = seq(&vals, EnergyLevel::Phoneme);
            let back = phoneme_energy(&expand_phoneme_energy(&p, &a).unwrap(), &a).unwrap();
            for (x, y) in vals.iter().zip(back.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn duration_weighted_mean_is_frame_mean(
            frames in prop::collection::vec(1usize..30, 1..15),
            seed in any::<u64>(),
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = FrameAlignment::from_frames(frames.clone()).unwrap();
            let e: Vec<f64> = (0..a.total_frames()).map(|_| rng.gen_range(0.0..10.0)).collect();
            let p = phoneme_energy(&seq(&e, EnergyLevel::Frame), &a).unwrap();
            let t = a.total_frames() as f64;
            let weighted: f64 = p.values().iter().zip(&frames).map(|(v, &n)| v * n as f64 / t).sum();
            let mean = e.iter().sum::<f64>() / t;
            prop_assert!((weighted - mean).abs() < 1e-9);
        }

        #[test]
        fn quantize_is_monotone(a in -5.0f64..50.0, b in -5.0f64..50.0) {
            let q = EnergyQuantizer::new(256, 0.0, 40.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo) <= q.quantize(hi));
        }

        #[test]
        fn length_regulator_preserves_multiset(frames in prop::collection::vec(1usize..10, 1..12)) {
            let a = FrameAlignment::from_frames(frames.clone()).unwrap();
            let tokens: Vec<usize> = (0..frames.len()).map(|i| i % 3).collect();
            let out = length_regulate(&tokens, &a).unwrap();
            for sym in 0..3 {
                let expected: usize = tokens.iter().zip(&frames).filter(|(t, _)| **t == sym).map(|(_, n)| n).sum();
                prop_assert_eq!(out.iter().filter(|&&t| t == sym).count(), expected);
            }
        }
    }
}
