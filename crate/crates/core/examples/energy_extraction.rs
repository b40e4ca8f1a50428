//! Render a two-note phrase, then measure its frame- and phoneme-level energy.

use dynsvs::corpus::render_score;
use dynsvs::dsp::{frame_energy, DspConfig};
use dynsvs::dynamics::{durations_to_frames, phoneme_energy};

fn main() -> dynsvs::Result<()> {
    let dsp = DspConfig::default();
    let durations = [0.25, 0.4, 0.15];
    let alignment = durations_to_frames(&durations, dsp.sample_rate, dsp.stft.hop_size)?;
    // loud A4, quiet C5, then a rest
    let clip = render_score(&[69, 72, 0], &[0.8, 0.15, 0.0], &alignment, 6, 10.0, &dsp)?;

    let mel = dsp.log_mel(&clip)?.fit_to_frames(alignment.total_frames())?;
    let frames = frame_energy(&mel);
    let phonemes = phoneme_energy(&frames, &alignment)?;

    println!("{} samples -> {} frames x {} mel bins", clip.len(), mel.n_frames(), mel.n_mels());
    println!("frames per phoneme: {:?}", alignment.frames_per_phoneme());
    for (i, e) in phonemes.values().iter().enumerate() {
        println!("phoneme {i}: energy {e:.4}");
    }
    let peak = frames.values().iter().cloned().fold(0.0, f64::max);
    println!("peak frame energy {peak:.4}");
    Ok(())
}
