//! Durations to frames, the length regulator and energy quantization.

use dynsvs::dsp::{EnergyLevel, EnergySequence};
use dynsvs::dynamics::{durations_to_frames, expand_phoneme_energy, length_regulate, phoneme_energy, EnergyQuantizer};

fn main() -> dynsvs::Result<()> {
    let phonemes = ["n", "i", "<AP>", "h", "ao"];
    let durations = [0.12, 0.31, 0.004, 0.05, 0.42];
    let al = durations_to_frames(&durations, 48000, 256)?;
    println!("frames per phoneme {:?} (total {})", al.frames_per_phoneme(), al.total_frames());

    let frames = length_regulate(&phonemes, &al)?;
    println!("first frames: {:?}", &frames[..12]);

    let target = EnergySequence::new(vec![3.0, 9.5, 0.0, 1.2, 6.4], EnergyLevel::Phoneme)?;
    let expanded = expand_phoneme_energy(&target, &al)?;
    let back = phoneme_energy(&expanded, &al)?;
    for (a, b) in back.values().iter().zip(target.values()) {
        assert!((a - b).abs() < 1e-9);
    }

    let q = EnergyQuantizer::fit(expanded.values().iter().copied(), 256)?;
    let bins: Vec<usize> = target.values().iter().map(|&e| q.quantize(e)).collect();
    println!("quantizer [{:.2}, {:.2}] -> bins {bins:?}", q.e_min, q.e_max);
    Ok(())
}
