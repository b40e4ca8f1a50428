//! Batch commands: corpus generation, energy extraction, training,
//! synthesis, evaluation and the controllability sweep. The `dynsvs` binary
//! is a thin argument parser over these functions.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::ModelConfig;
use crate::corpus::{
    align_with_audio, parse_annotations, write_corpus, Corpus, Manifest, PhonemeInventory, Split, SynthSpec,
    TrainingExample, UtteranceRecord,
};
use crate::diffusion::MelScaler;
use crate::dsp::{audition, frame_energy, read_mel, read_wav, write_mel, write_wav, DspConfig, EnergyLevel, EnergySequence, MelSpectrogram};
use crate::dynamics::{phoneme_energy, FrameAlignment};
use crate::metrics::{evaluate_pair, spearman, EvalReport, UtteranceMetrics};
use crate::model::{DenoiserLayout, DiffusionConfig, Mode, SvsConfig, SvsModel};
use crate::train::{condition_examples, fit_quantizer, load_examples, train, write_log, LogRow, TrainConfig, TrainSummary};
use crate::{Error, Result};

/// Caps the number of utterances evaluated concurrently.
pub const THREADS_ENV: &str = "DYNSVS_THREADS";
pub const CHECKPOINT_NAME: &str = "final.ckpt";
pub const LOSS_LOG_NAME: &str = "loss.csv";

/// Everything a run needs, as one JSON document. Missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub denoiser: DenoiserLayout,
    pub diffusion: DiffusionConfig,
    pub scaler: MelScaler,
    pub predictor_weight: f64,
    pub train: TrainConfig,
    pub corpus: SynthSpec,
    pub level: EnergyLevel,
    pub resample: bool,
    pub audition: bool,
    pub audition_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let svs = SvsConfig::default();
        Self {
            mode: svs.mode,
            seed: 0,
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("runs"),
            dsp: svs.dsp,
            model: svs.model,
            denoiser: svs.denoiser,
            diffusion: svs.diffusion,
            scaler: svs.scaler,
            predictor_weight: svs.predictor_weight,
            train: TrainConfig::default(),
            corpus: SynthSpec::default(),
            level: EnergyLevel::Phoneme,
            resample: false,
            audition: false,
            audition_iterations: audition::DEFAULT_ITERATIONS,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn svs(&self) -> SvsConfig {
        SvsConfig {
            mode: self.mode,
            dsp: self.dsp,
            model: self.model.clone(),
            denoiser: self.denoiser,
            diffusion: self.diffusion,
            scaler: self.scaler,
            predictor_weight: self.predictor_weight,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders the synthetic corpus into `out_dir`.
pub fn gen_corpus(spec: &SynthSpec, dsp: &DspConfig, out_dir: &Path) -> Result<Manifest> {
    let utterances = crate::corpus::generate_synthetic_corpus(spec, dsp)?;
    write_corpus(out_dir, &utterances, dsp)
}

fn pick_record(records: Vec<UtteranceRecord>, id: Option<&str>, source: &Path) -> Result<UtteranceRecord> {
    match id {
        Some(id) => records
            .into_iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no utterance {id} in {}", source.display()))),
        None if records.len() == 1 => Ok(records.into_iter().next().expect("one record")),
        None => Err(Error::InvalidInput(format!(
            "{} holds {} utterances; name one with an id",
            source.display(),
            records.len()
        ))),
    }
}

/// Energy of a recording. Frame level returns one value per STFT frame of
/// the whole clip, or per score frame when an annotation is given; phoneme
/// level averages over the annotated phonemes. When an annotation is
/// supplied its durations must match the audio.
pub fn extract_energy(
    wav: &Path,
    annotations: Option<&Path>,
    id: Option<&str>,
    level: EnergyLevel,
    dsp: &DspConfig,
    resample: bool,
) -> Result<EnergySequence> {
    let clip = read_wav(wav, dsp.sample_rate, resample)?;
    let mel = dsp.log_mel(&clip)?;
    let record = annotations
        .map(|a| parse_annotations(a, None).and_then(|r| pick_record(r, id, a)))
        .transpose()?;
    let alignment = record
        .as_ref()
        .map(|r| align_with_audio(&r.score, &clip, dsp))
        .transpose()?;
    match (level, alignment) {
        (EnergyLevel::Frame, None) => Ok(frame_energy(&mel)),
        (EnergyLevel::Frame, Some(al)) => Ok(frame_energy(&mel.fit_to_frames(al.total_frames())?)),
        (EnergyLevel::Phoneme, Some(al)) => {
            let fitted = mel.fit_to_frames(al.total_frames())?;
            phoneme_energy(&frame_energy(&fitted), &al)
        }
        (EnergyLevel::Phoneme, None) => Err(Error::InvalidInput(
            "phoneme-level energy needs an annotation with durations".into(),
        )),
    }
}

pub fn write_energy(path: &Path, energy: &EnergySequence) -> Result<()> {
    write_json(path, &energy.values())
}

/// Reads a JSON array of energies and tags it with `level`.
pub fn read_energy(path: &Path, level: EnergyLevel) -> Result<EnergySequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = serde_json::from_slice(&bytes)?;
    EnergySequence::new(values, level)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub summary: TrainSummary,
}

/// Trained model plus its conditioned training set, for callers that keep
/// working in memory.
pub fn prepare_training(cfg: &RunConfig, corpus: &Corpus) -> Result<(SvsModel, Vec<TrainingExample>)> {
    let train_records = corpus.split(Split::Train);
    if train_records.is_empty() {
        return Err(Error::InvalidCorpus("training split is empty".into()));
    }
    let inventory = PhonemeInventory::from_records(train_records.iter().copied());
    let mut examples = load_examples(&train_records, &cfg.dsp, &inventory, cfg.resample)?;
    let level = cfg.mode.conditioning().unwrap_or(EnergyLevel::Frame);
    let quantizer = fit_quantizer(&examples, level)?;
    condition_examples(&mut examples, cfg.mode, &quantizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = SvsModel::new(cfg.svs(), inventory, quantizer, &mut rng)?;
    Ok((model, examples))
}

/// Trains `cfg.mode` on the corpus training split. Writes `loss.csv`,
/// `config.json` and checkpoints into `out_dir`.
pub fn train_model(cfg: &RunConfig, corpus_dir: &Path, out_dir: &Path, on_step: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    let corpus = Corpus::load(corpus_dir)?;
    let (mut model, examples) = prepare_training(cfg, &corpus)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join("config.json"), cfg)?;
    let summary = train(&mut model, &examples, &cfg.train, cfg.seed, Some(out_dir), on_step)?;
    write_log(&out_dir.join(LOSS_LOG_NAME), &summary.log)?;
    Ok(TrainOutcome {
        checkpoint: out_dir.join(CHECKPOINT_NAME),
        summary,
    })
}

/// Per-utterance generator: depends on the run seed and the utterance id
/// only, so results do not depend on processing order.
pub fn utterance_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// One synthesized utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub id: String,
    pub mel: MelSpectrogram,
    pub alignment: FrameAlignment,
}

/// Synthesizes a single score under the model's mode rules.
pub fn synthesize_score(model: &SvsModel, record: &UtteranceRecord, energy: Option<&EnergySequence>, seed: u64) -> Result<Synthesis> {
    let (inputs, alignment) = model.prepare_inputs(&record.score, energy)?;
    let mel = model.synthesize(&inputs, &mut utterance_rng(seed, &record.id))?;
    Ok(Synthesis {
        id: record.id.clone(),
        mel,
        alignment,
    })
}

/// Options of [`synthesize`].
#[derive(Debug, Clone, Default)]
pub struct SynthesizeOptions {
    /// Energy file overriding the annotations; only valid for a single
    /// utterance.
    pub energy: Option<EnergySequence>,
    pub id: Option<String>,
    pub seed: u64,
    /// Also write a phase-reconstruction WAV for listening. It is never used
    /// by any metric.
    pub audition: bool,
    pub audition_iterations: usize,
}

/// Synthesizes every utterance of `annotations` (or the one named by
/// `opts.id`) and writes `<id>.mel` files into `out_dir`. Energy-conditioned
/// models read the `energy` field of each annotation unless an explicit
/// energy file is given.
pub fn synthesize(checkpoint: &Path, annotations: &Path, out_dir: &Path, opts: &SynthesizeOptions) -> Result<Vec<PathBuf>> {
    let (model, _) = SvsModel::load(checkpoint)?;
    let mut records = parse_annotations(annotations, Some(&model.inventory))?;
    if let Some(id) = &opts.id {
        records = vec![pick_record(records, Some(id), annotations)?];
    }
    if opts.energy.is_some() && records.len() != 1 {
        return Err(Error::InvalidInput(
            "an energy file applies to exactly one utterance; select it by id".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for record in &records {
        let energy = match (&opts.energy, model.mode().conditioning()) {
            (Some(e), _) => Some(e),
            (None, Some(_)) => record.score.energy.as_ref(),
            (None, None) => None,
        };
        let s = synthesize_score(&model, record, energy, opts.seed)?;
        let path = out_dir.join(format!("{}.mel", s.id));
        write_mel(&path, &s.mel)?;
        written.push(path);
        if opts.audition {
            let dsp = &model.config.dsp;
            let clip = audition::griffin_lim(&s.mel, &dsp.stft, &dsp.mel, opts.audition_iterations, opts.seed)?;
            let wav = out_dir.join(format!("{}.audition.wav", s.id));
            write_wav(&wav, &clip)?;
            written.push(wav);
        }
    }
    Ok(written)
}

/// Conditioning energy derived from the reference recording, in the form
/// the model expects.
pub fn reference_energy(mode: Mode, example: &TrainingExample) -> Option<EnergySequence> {
    match mode.conditioning() {
        Some(EnergyLevel::Frame) => Some(example.frame_energy.clone()),
        Some(EnergyLevel::Phoneme) => Some(example.phoneme_energy.clone()),
        None => None,
    }
}

/// Per-frame energy trace of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow<'a> {
    pub id: &'a str,
    pub t: usize,
    pub input_energy: f64,
    pub output_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEvaluation {
    pub metrics: UtteranceMetrics,
    /// Energy the model was asked for at each frame (the reference frame
    /// energy for unconditioned models).
    pub input_energy: Vec<f64>,
    pub output_energy: Vec<f64>,
    pub generated: MelSpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Sorted by id, like the report.
    pub utterances: Vec<UtteranceEvaluation>,
}

/// Number of evaluation workers: `requested`, else `DYNSVS_THREADS`, else
/// every available core.
pub fn evaluation_threads(requested: Option<usize>) -> Result<usize> {
    if let Some(n) = requested {
        return if n == 0 {
            Err(Error::InvalidConfig("thread count must be positive".into()))
        } else {
            Ok(n)
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Synthesizes each example and scores it against its reference mel.
pub fn evaluate_examples(model: &SvsModel, examples: &[TrainingExample], seed: u64, threads: usize) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("evaluation split is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} workers: {e}")))?;
    let mel_cfg = model.config.dsp.mel;
    let mut results: Vec<UtteranceEvaluation> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                let mut inputs = ex.inputs.clone();
                inputs.energy_bins = crate::train::conditioning_bins(ex, model.mode(), &model.quantizer)?;
                let generated = model.synthesize(&inputs, &mut utterance_rng(seed, &ex.id))?;
                let metrics = evaluate_pair(&ex.id, &generated, &ex.target, &mel_cfg)?;
                let input_energy = match model.mode().conditioning() {
                    Some(EnergyLevel::Phoneme) => {
                        crate::dynamics::expand_phoneme_energy(&ex.phoneme_energy, &ex.alignment)?.into_values()
                    }
                    _ => ex.frame_energy.values().to_vec(),
                };
                Ok(UtteranceEvaluation {
                    metrics,
                    input_energy,
                    output_energy: frame_energy(&generated).into_values(),
                    generated,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.metrics.id.cmp(&b.metrics.id));
    let report = EvalReport::from_utterances(results.iter().map(|r| r.metrics.clone()).collect())?;
    Ok(Evaluation {
        report,
        utterances: results,
    })
}

/// Options of [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub seed: u64,
    pub threads: Option<usize>,
    pub resample: bool,
    /// Per-utterance metrics as CSV.
    pub csv: Option<PathBuf>,
    /// Per-frame `{id, t, input_energy, output_energy}` CSV.
    pub plot_data: Option<PathBuf>,
    /// Directory for the generated mels.
    pub mel_dir: Option<PathBuf>,
}

/// Evaluates a checkpoint on the corpus test split and writes the JSON
/// report to `report_path`.
pub fn evaluate(checkpoint: &Path, corpus_dir: &Path, report_path: &Path, opts: &EvaluateOptions) -> Result<Evaluation> {
    let (model, _) = SvsModel::load(checkpoint)?;
    let corpus = Corpus::load(corpus_dir)?;
    let test = corpus.split(Split::Test);
    if test.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let examples = load_examples(&test, &model.config.dsp, &model.inventory, opts.resample)?;
    let eval = evaluate_examples(&model, &examples, opts.seed, evaluation_threads(opts.threads)?)?;
    write_json(report_path, &eval.report)?;
    if let Some(path) = &opts.csv {
        write_metrics_csv(path, &eval.report)?;
    }
    if let Some(path) = &opts.plot_data {
        write_plot_data(path, &eval)?;
    }
    if let Some(dir) = &opts.mel_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for u in &eval.utterances {
            write_mel(&dir.join(format!("{}.mel", u.metrics.id)), &u.generated)?;
        }
    }
    Ok(eval)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, e.into())
}

pub fn write_metrics_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["id", "n_frames", "energy_mae", "f0_mae_hz", "f0_frames_compared", "mcd_db", "energy_pearson"])
        .map_err(|e| csv_error(path, e))?;
    for u in &report.utterances {
        w.write_record([
            u.id.clone(),
            u.n_frames.to_string(),
            u.energy_mae.to_string(),
            u.f0_mae_hz.map(|v| v.to_string()).unwrap_or_default(),
            u.f0_frames_compared.to_string(),
            u.mcd_db.to_string(),
            u.energy_pearson.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_plot_data(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for u in &eval.utterances {
        for (t, (&i, &o)) in u.input_energy.iter().zip(&u.output_energy).enumerate() {
            w.serialize(PlotRow {
                id: &u.metrics.id,
                t,
                input_energy: i,
                output_energy: o,
            })
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Measured output phoneme energies of one utterance under each gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrace {
    pub id: String,
    pub input: Vec<f64>,
    /// `output[g][i]`: phoneme `i` synthesized with input scaled by `gains[g]`.
    pub output: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub gains: Vec<f64>,
    pub traces: Vec<ControlTrace>,
    /// Share of phonemes whose output energy is non-decreasing in the gain.
    pub monotone_fraction: f64,
    /// Rank correlation of input and output phoneme energy at unit gain.
    pub spearman_unit_gain: Option<f64>,
}

/// Scales each example's reference phoneme energy by every gain (ascending),
/// synthesizes with the same per-utterance noise and measures the output
/// phoneme energies.
pub fn controllability(model: &SvsModel, examples: &[TrainingExample], gains: &[f64], seed: u64, threads: usize) -> Result<ControlReport> {
    if model.mode().conditioning().is_none() {
        return Err(Error::Mode(format!("a {} model takes no energy input", model.mode())));
    }
    if gains.is_empty() || gains.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("gains must be non-empty and strictly ascending".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} workers: {e}")))?;
    let mut traces: Vec<ControlTrace> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                let output = gains
                    .iter()
                    .map(|&g| {
                        let scaled = ex.phoneme_energy.scaled(g)?;
                        let energy = crate::dynamics::expand_phoneme_energy(&scaled, &ex.alignment)?;
                        let mut inputs = ex.inputs.clone();
                        inputs.energy_bins = Some(model.quantizer.quantize_all(&energy));
                        let mel = model.synthesize(&inputs, &mut utterance_rng(seed, &ex.id))?;
                        Ok(phoneme_energy(&frame_energy(&mel), &ex.alignment)?.into_values())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ControlTrace {
                    id: ex.id.clone(),
                    input: ex.phoneme_energy.values().to_vec(),
                    output,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    traces.sort_by(|a, b| a.id.cmp(&b.id));
    let (mut monotone, mut total) = (0usize, 0usize);
    for tr in &traces {
        for i in 0..tr.input.len() {
            total += 1;
            if tr.output.windows(2).all(|w| w[0][i] <= w[1][i]) {
                monotone += 1;
            }
        }
    }
    let spearman_unit_gain = gains.iter().position(|&g| g == 1.0).map(|g| {
        let input: Vec<f64> = traces.iter().flat_map(|t| t.input.iter().copied()).collect();
        let output: Vec<f64> = traces.iter().flat_map(|t| t.output[g].iter().copied()).collect();
        spearman(&input, &output)
    });
    Ok(ControlReport {
        gains: gains.to_vec(),
        traces,
        monotone_fraction: monotone as f64 / total.max(1) as f64,
        spearman_unit_gain,
    })
}

/// Reads a mel written by [`synthesize`].
pub fn load_mel(path: &Path) -> Result<MelSpectrogram> {
    read_mel(path)
}
