//! Annotation files, the synthetic harmonic corpus and training examples.
//!
//! Annotations are UTF-8 JSON lines with parallel `phonemes`, `notes` and
//! `durations` arrays (plus optional phoneme-level `energy` and a relative
//! `wav` path). A corpus directory holds `annotations.jsonl`, `wavs/` and a
//! `manifest.json` with the split lists and a SHA-256 content hash.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::FrameInputs;
use crate::dsp::{
    frame_energy, read_wav, to_pcm16, write_wav, AudioClip, DspConfig, EnergyLevel, EnergySequence, MelSpectrogram,
};
use crate::dynamics::{
    durations_to_frames, expand_phoneme_energy, length_regulate, phoneme_energy, EnergyQuantizer, FrameAlignment,
    PhonemeScore, REST_NOTE, REST_TOKEN,
};
use crate::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WAV_DIR: &str = "wavs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    File(PathBuf),
    Inline(AudioClip),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub score: PhonemeScore,
    pub audio: Option<AudioSource>,
    /// `None` until a manifest assigns the utterance to a split.
    pub split: Option<Split>,
}

impl UtteranceRecord {
    pub fn load_audio(&self, dsp: &DspConfig, resample: bool) -> Result<AudioClip> {
        match &self.audio {
            Some(AudioSource::Inline(clip)) => Ok(clip.clone()),
            Some(AudioSource::File(path)) => read_wav(path, dsp.sample_rate, resample),
            None => Err(Error::InvalidInput(format!("utterance {} has no audio", self.id))),
        }
    }
}

/// One annotation line, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationLine {
    pub id: String,
    pub phonemes: Vec<String>,
    pub notes: Vec<i64>,
    pub durations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<String>,
}

/// Token table. The rest token always takes index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeInventory {
    tokens: Vec<String>,
}

impl PhonemeInventory {
    /// Sorted unique tokens of `records`, after the rest token.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> Self {
        let mut set: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for r in records {
            set.extend(r.score.phonemes.iter().map(String::as_str));
        }
        set.remove(REST_TOKEN);
        let tokens = std::iter::once(REST_TOKEN.to_string())
            .chain(set.into_iter().map(str::to_string))
            .collect();
        Self { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(REST_TOKEN) {
            return Err(Error::InvalidInput(format!("inventory must start with {REST_TOKEN}")));
        }
        let unique: HashSet<&String> = tokens.iter().collect();
        if unique.len() != tokens.len() {
            return Err(Error::InvalidInput("inventory tokens must be unique".into()));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn encode(&self, phonemes: &[String]) -> Result<Vec<usize>> {
        phonemes
            .iter()
            .map(|p| {
                self.index_of(p)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown phoneme `{p}`")))
            })
            .collect()
    }
}

fn line_to_record(line: AnnotationLine, base: &Path, lineno: usize, inventory: Option<&PhonemeInventory>) -> Result<UtteranceRecord> {
    let parse_err = |message: String| Error::Parse { line: lineno, message };
    if line.id.is_empty() {
        return Err(parse_err("empty id".into()));
    }
    if let Some(inv) = inventory {
        let unknown: Vec<&str> = line
            .phonemes
            .iter()
            .filter(|p| inv.index_of(p).is_none())
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(parse_err(format!("unknown phoneme(s): {}", unknown.join(", "))));
        }
    }
    let mut notes = Vec::with_capacity(line.notes.len());
    for (&n, p) in line.notes.iter().zip(line.phonemes.iter().chain(std::iter::repeat(&String::new()))) {
        if p == REST_TOKEN {
            notes.push(REST_NOTE);
        } else {
            let n = u8::try_from(n).map_err(|_| parse_err(format!("note {n} out of range")))?;
            notes.push(n);
        }
    }
    let energy = line
        .energy
        .map(|e| EnergySequence::new(e, EnergyLevel::Phoneme))
        .transpose()
        .map_err(|e| parse_err(e.to_string()))?;
    let score = PhonemeScore::new(line.phonemes, notes, line.durations, energy).map_err(|e| parse_err(e.to_string()))?;
    Ok(UtteranceRecord {
        id: line.id,
        score,
        audio: line.wav.map(|w| AudioSource::File(base.join(w))),
        split: None,
    })
}

/// Parses a JSON-lines annotation file. Blank lines are skipped; `wav` paths
/// resolve relative to the file's directory. When `inventory` is given,
/// tokens outside it are rejected.
pub fn parse_annotations(path: &Path, inventory: Option<&PhonemeInventory>) -> Result<Vec<UtteranceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_annotation_str(&text, base, inventory)
}

pub fn parse_annotation_str(text: &str, base: &Path, inventory: Option<&PhonemeInventory>) -> Result<Vec<UtteranceRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: AnnotationLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if !seen.insert(line.id.clone()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate id {}", line.id),
            });
        }
        out.push(line_to_record(line, base, lineno, inventory)?);
    }
    Ok(out)
}

/// The annotation line for `record`, with `wav` relative to `base` when the
/// audio lives under it.
pub fn to_annotation_line(record: &UtteranceRecord, base: &Path) -> AnnotationLine {
    let wav = match &record.audio {
        Some(AudioSource::File(p)) => Some(
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/"),
        ),
        _ => None,
    };
    AnnotationLine {
        id: record.id.clone(),
        phonemes: record.score.phonemes.clone(),
        notes: record.score.notes.iter().map(|&n| n as i64).collect(),
        durations: record.score.durations_sec.clone(),
        energy: record.score.energy.as_ref().map(|e| e.values().to_vec()),
        wav,
    }
}

pub fn annotations_to_string(records: &[UtteranceRecord], base: &Path) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(&to_annotation_line(r, base))?);
        s.push('\n');
    }
    Ok(s)
}

/// Parameters of the synthetic corpus: each phoneme is a harmonic stack at its
/// note's pitch with a target amplitude; rests are silent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub inventory_size: usize,
    pub phonemes_per_utterance: [usize; 2],
    pub note_range: [u8; 2],
    pub duration_range_sec: [f64; 2],
    pub harmonics: usize,
    pub amplitude_range: [f64; 2],
    pub ramp_ms: f64,
    pub rest_probability: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 10,
            n_test: 20,
            inventory_size: 12,
            phonemes_per_utterance: [5, 20],
            note_range: [48, 72],
            duration_range_sec: [0.1, 0.6],
            harmonics: 6,
            amplitude_range: [0.05, 0.9],
            ramp_ms: 10.0,
            rest_probability: 0.1,
            seed: 0,
        }
    }
}

const SYNTH_TOKENS: [&str; 24] = [
    "a", "e", "i", "o", "u", "n", "m", "l", "r", "s", "k", "t", "ang", "en", "ai", "ou", "sh", "zh", "ch", "x", "q",
    "j", "y", "w",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let [lmin, lmax] = self.phonemes_per_utterance;
        if lmin == 0 || lmin > lmax {
            return bad("phoneme count range must be non-empty and start at 1 or more");
        }
        let [nlo, nhi] = self.note_range;
        if nlo < 21 || nhi > 108 || nlo > nhi {
            return bad("note range must lie in 21..=108 and be ordered");
        }
        let [dlo, dhi] = self.duration_range_sec;
        if !(dlo > 0.0 && dlo <= dhi) {
            return bad("duration range must be positive and ordered");
        }
        let [alo, ahi] = self.amplitude_range;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return bad("amplitude range must lie in (0, 1] and be ordered");
        }
        if self.harmonics == 0 {
            return bad("need at least one harmonic");
        }
        if self.inventory_size == 0 || self.inventory_size > SYNTH_TOKENS.len() {
            return bad("inventory size must be between 1 and 24");
        }
        if !(0.0..=1.0).contains(&self.rest_probability) {
            return bad("rest probability must lie in [0, 1]");
        }
        if self.ramp_ms < 0.0 {
            return bad("ramp length must be non-negative");
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

pub fn midi_to_hz(note: u8) -> f64 {
    440.0 * 2f64.powf((note as f64 - 69.0) / 12.0)
}

/// One rendered synthetic utterance with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub record: UtteranceRecord,
    pub clip: AudioClip,
    /// Amplitude each phoneme was rendered at (0 for rests).
    pub target_amplitudes: Vec<f64>,
}

/// Renders a score: phoneme `i` occupies exactly its aligned frames, pitch is
/// phase-continuous, and the amplitude envelope crossfades linearly over
/// `ramp_ms` around each boundary (and fades in and out at the ends). The
/// waveform is rounded to 16-bit PCM so it matches what a WAV round trip
/// returns.
pub fn render_score(
    notes: &[u8],
    amplitudes: &[f64],
    alignment: &FrameAlignment,
    harmonics: usize,
    ramp_ms: f64,
    dsp: &DspConfig,
) -> Result<AudioClip> {
    let hop = dsp.stft.hop_size;
    let fs = dsp.sample_rate as f64;
    let n_samples = alignment.total_frames() * hop;
    let ramp = (ramp_ms * 1e-3 * fs).round() as isize;
    let half = ramp / 2;
    let norm: f64 = (1..=harmonics).map(|k| 1.0 / k as f64).sum();
    let spans: Vec<_> = alignment.spans().map(|s| (s.start * hop, s.end * hop)).collect();
    let level = |n: isize| -> f64 {
        if n < 0 || n as usize >= n_samples {
            return 0.0;
        }
        let i = spans.partition_point(|&(_, end)| end <= n as usize);
        amplitudes[i]
    };
    let mut phase = 0.0f64;
    let mut freq = notes
        .iter()
        .find(|&&n| n != REST_NOTE)
        .map(|&n| midi_to_hz(n))
        .unwrap_or(0.0);
    let mut samples = Vec::with_capacity(n_samples);
    let mut seg = 0;
    for n in 0..n_samples {
        while n >= spans[seg].1 {
            seg += 1;
        }
        if notes[seg] != REST_NOTE {
            freq = midi_to_hz(notes[seg]);
        }
        // Crossfade around the nearest boundary (segment start or end).
        let ni = n as isize;
        let (start, end) = (spans[seg].0 as isize, spans[seg].1 as isize);
        let env = if ramp > 0 && ni - start < half {
            let b = start;
            let w = (ni - (b - half)) as f64 / ramp as f64;
            level(b - 1) * (1.0 - w) + level(b) * w
        } else if ramp > 0 && end - ni <= half {
            let b = end;
            let w = (ni - (b - half)) as f64 / ramp as f64;
            level(b - 1) * (1.0 - w) + level(b) * w
        } else {
            amplitudes[seg]
        };
        let tone: f64 = (1..=harmonics)
            .filter(|&k| k as f64 * freq < fs / 2.0)
            .map(|k| (phase * k as f64).sin() / k as f64)
            .sum();
        samples.push(to_pcm16(env * tone / norm) as f64 / 32768.0);
        phase = (phase + 2.0 * std::f64::consts::PI * freq / fs) % (2.0 * std::f64::consts::PI * 1e6);
    }
    AudioClip::new(samples, dsp.sample_rate)
}

fn utterance_id(index: usize) -> String {
    format!("utt{index:04}")
}

/// Deterministically draws and renders `spec.total()` utterances. Phoneme
/// energies measured from the rendered audio are attached to every score.
pub fn generate_synthetic_corpus(spec: &SynthSpec, dsp: &DspConfig) -> Result<Vec<SynthUtterance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tokens = &SYNTH_TOKENS[..spec.inventory_size];
    let mut out = Vec::with_capacity(spec.total());
    for index in 0..spec.total() {
        let split = if index < spec.n_train {
            Split::Train
        } else if index < spec.n_train + spec.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let l = rng.gen_range(spec.phonemes_per_utterance[0]..=spec.phonemes_per_utterance[1]);
        let (mut phonemes, mut notes, mut durations, mut amps) = (vec![], vec![], vec![], vec![]);
        for _ in 0..l {
            let rest = rng.gen_bool(spec.rest_probability);
            let token = tokens[rng.gen_range(0..tokens.len())];
            let note = rng.gen_range(spec.note_range[0]..=spec.note_range[1]);
            let dur = rng.gen_range(spec.duration_range_sec[0]..=spec.duration_range_sec[1]);
            let amp = rng.gen_range(spec.amplitude_range[0]..=spec.amplitude_range[1]);
            durations.push((dur * 1000.0).round() / 1000.0);
            if rest {
                phonemes.push(REST_TOKEN.to_string());
                notes.push(REST_NOTE);
                amps.push(0.0);
            } else {
                phonemes.push(token.to_string());
                notes.push(note);
                amps.push(amp);
            }
        }
        let alignment = durations_to_frames(&durations, dsp.sample_rate, dsp.stft.hop_size)?;
        let clip = render_score(&notes, &amps, &alignment, spec.harmonics, spec.ramp_ms, dsp)?;
        let mel = dsp.log_mel(&clip)?.fit_to_frames(alignment.total_frames())?;
        let energy = phoneme_energy(&frame_energy(&mel), &alignment)?;
        let score = PhonemeScore::new(phonemes, notes, durations, Some(energy))?;
        out.push(SynthUtterance {
            record: UtteranceRecord {
                id: utterance_id(index),
                score,
                audio: Some(AudioSource::Inline(clip.clone())),
                split: Some(split),
            },
            clip,
            target_amplitudes: amps,
        });
    }
    Ok(out)
}

/// Split lists and a content hash over annotations and audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub sample_rate: u32,
    pub hash: String,
}

impl Manifest {
    pub fn split_of(&self) -> Result<BTreeMap<String, Split>> {
        let mut map = BTreeMap::new();
        for (split, ids) in [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)] {
            for id in ids {
                if map.insert(id.clone(), split).is_some() {
                    return Err(Error::InvalidCorpus(format!("id {id} appears in more than one split")));
                }
            }
        }
        Ok(map)
    }
}

/// Writes annotations, WAVs and the manifest to `dir`; returns the manifest.
pub fn write_corpus(dir: &Path, utterances: &[SynthUtterance], dsp: &DspConfig) -> Result<Manifest> {
    let wav_dir = dir.join(WAV_DIR);
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::with_capacity(utterances.len());
    let mut hasher = Sha256::new();
    let mut manifest = Manifest {
        train: vec![],
        val: vec![],
        test: vec![],
        sample_rate: dsp.sample_rate,
        hash: String::new(),
    };
    for u in utterances {
        let path = wav_dir.join(format!("{}.wav", u.record.id));
        write_wav(&path, &u.clip)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(u.record.id.as_bytes());
        hasher.update(&bytes);
        let mut r = u.record.clone();
        r.audio = Some(AudioSource::File(path));
        match r.split {
            Some(Split::Train) => manifest.train.push(r.id.clone()),
            Some(Split::Val) => manifest.val.push(r.id.clone()),
            Some(Split::Test) => manifest.test.push(r.id.clone()),
            None => return Err(Error::InvalidCorpus(format!("utterance {} has no split", r.id))),
        }
        records.push(r);
    }
    let text = annotations_to_string(&records, dir)?;
    hasher.update(text.as_bytes());
    manifest.hash = hex::encode(hasher.finalize());
    let ann = dir.join(ANNOTATIONS_FILE);
    std::fs::write(&ann, text).map_err(|e| Error::io(&ann, e))?;
    let man = dir.join(MANIFEST_FILE);
    std::fs::write(&man, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&man, e))?;
    Ok(manifest)
}

/// A corpus loaded from disk with splits applied.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<UtteranceRecord>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let man = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(&man).map_err(|e| Error::io(&man, e))?)?;
        let splits = manifest.split_of()?;
        let mut records = parse_annotations(&dir.join(ANNOTATIONS_FILE), None)?;
        for r in &mut records {
            r.split = splits.get(&r.id).copied();
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            records,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&UtteranceRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }
}

/// How the energy channel of a training example is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyConditioning<'a> {
    None,
    Frame(&'a EnergyQuantizer),
    Phoneme(&'a EnergyQuantizer),
}

/// Aligned frame-level inputs and target for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub inputs: FrameInputs,
    pub target: MelSpectrogram,
    pub alignment: FrameAlignment,
    pub frame_energy: EnergySequence,
    pub phoneme_energy: EnergySequence,
}

/// Frame alignment of a score, checked against the audio length.
pub fn align_with_audio(score: &PhonemeScore, clip: &AudioClip, dsp: &DspConfig) -> Result<FrameAlignment> {
    let alignment = durations_to_frames(&score.durations_sec, dsp.sample_rate, dsp.stft.hop_size)?;
    let slack = 0.5 * dsp.frame_period();
    let diff = (clip.duration_sec() - score.total_duration_sec()).abs();
    if diff > slack + 1e-9 {
        return Err(Error::Alignment(format!(
            "audio lasts {:.4} s but durations sum to {:.4} s (tolerance {:.4} s)",
            clip.duration_sec(),
            score.total_duration_sec(),
            slack
        )));
    }
    Ok(alignment)
}

/// Extracts the target mel (truncated or floor-padded to the aligned length),
/// its frame and phoneme energies, and frame-level index sequences.
pub fn build_example(
    record: &UtteranceRecord,
    clip: &AudioClip,
    dsp: &DspConfig,
    inventory: &PhonemeInventory,
    conditioning: EnergyConditioning<'_>,
) -> Result<TrainingExample> {
    let alignment = align_with_audio(&record.score, clip, dsp)?;
    let target = dsp.log_mel(clip)?.fit_to_frames(alignment.total_frames())?;
    let fe = frame_energy(&target);
    let pe = phoneme_energy(&fe, &alignment)?;
    let ids = inventory.encode(&record.score.phonemes)?;
    let notes: Vec<usize> = record.score.notes.iter().map(|&n| n as usize).collect();
    let energy_bins = match conditioning {
        EnergyConditioning::None => None,
        EnergyConditioning::Frame(q) => Some(q.quantize_all(&fe)),
        EnergyConditioning::Phoneme(q) => Some(q.quantize_all(&expand_phoneme_energy(&pe, &alignment)?)),
    };
    Ok(TrainingExample {
        id: record.id.clone(),
        inputs: FrameInputs {
            phoneme_ids: length_regulate(&ids, &alignment)?,
            note_ids: length_regulate(&notes, &alignment)?,
            energy_bins,
        },
        target,
        alignment,
        frame_energy: fe,
        phoneme_energy: pe,
    })
}
