//! Energy MAE, F0 MAE and MCD between a reference and a louder, detuned copy.

use dynsvs::corpus::render_score;
use dynsvs::dsp::DspConfig;
use dynsvs::dynamics::durations_to_frames;
use dynsvs::metrics::{evaluate_pair, EvalReport};

fn main() -> dynsvs::Result<()> {
    let dsp = DspConfig::default();
    let al = durations_to_frames(&[0.3, 0.3, 0.2], dsp.sample_rate, dsp.stft.hop_size)?;
    let render = |notes: &[u8], amps: &[f64]| -> dynsvs::Result<_> {
        let clip = render_score(notes, amps, &al, 6, 10.0, &dsp)?;
        dsp.log_mel(&clip)?.fit_to_frames(al.total_frames())
    };
    let reference = render(&[60, 64, 67], &[0.5, 0.3, 0.6])?;
    let louder = render(&[60, 64, 67], &[0.7, 0.45, 0.6])?;
    let detuned = render(&[61, 65, 67], &[0.5, 0.3, 0.6])?;

    let mut rows = Vec::new();
    for (id, mel) in [("same", &reference), ("louder", &louder), ("detuned", &detuned)] {
        let m = evaluate_pair(id, mel, &reference, &dsp.mel)?;
        println!(
            "{id:>8}: energy MAE {:.4}  F0 MAE {}  MCD {:.3} dB",
            m.energy_mae,
            m.f0_mae_hz.map_or("n/a".into(), |v| format!("{v:.2} Hz")),
            m.mcd_db
        );
        rows.push(m);
    }
    let report = EvalReport::from_utterances(rows)?;
    println!("pooled energy MAE {:.4}", report.energy_mae);
    Ok(())
}
