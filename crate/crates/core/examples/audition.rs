//! Phase reconstruction of a mel spectrogram to a listenable WAV. This is
//! for listening only; no metric reads audition output.
//!
//! Usage: cargo run --example audition [out.wav]

use dynsvs::corpus::render_score;
use dynsvs::dsp::{audition::griffin_lim, write_wav, DspConfig};
use dynsvs::dynamics::durations_to_frames;

fn main() -> dynsvs::Result<()> {
    let dsp = DspConfig::default();
    let al = durations_to_frames(&[0.3, 0.3, 0.5], dsp.sample_rate, dsp.stft.hop_size)?;
    let clip = render_score(&[67, 69, 72], &[0.6, 0.3, 0.8], &al, 6, 10.0, &dsp)?;
    let mel = dsp.log_mel(&clip)?;

    let rebuilt = griffin_lim(&mel, &dsp.stft, &dsp.mel, 32, 0)?;
    let again = dsp.log_mel(&rebuilt)?;
    let n = mel.n_frames().min(again.n_frames());
    let err = (&mel.data().slice(ndarray::s![..n, ..]) - &again.data().slice(ndarray::s![..n, ..]))
        .mapv(f64::abs)
        .mean()
        .unwrap_or(0.0);
    println!("{} samples rebuilt, mean log-mel error {err:.3}", rebuilt.len());

    if let Some(path) = std::env::args().nth(1) {
        write_wav(std::path::Path::new(&path), &rebuilt)?;
        println!("wrote {path}");
    }
    Ok(())
}
