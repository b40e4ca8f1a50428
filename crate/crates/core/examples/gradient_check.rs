//! Finite-difference check of the full model's hand-written gradients.

use dynsvs::acoustic::FrameInputs;
use dynsvs::corpus::PhonemeInventory;
use dynsvs::diffusion::standard_normal;
use dynsvs::dynamics::EnergyQuantizer;
use dynsvs::model::{Mode, SvsConfig, SvsModel, TrainWindow};
use dynsvs::nn::Parameters;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dynsvs::Result<()> {
    let mut cfg = SvsConfig {
        mode: Mode::BaselinePlusPredictor,
        ..SvsConfig::default()
    };
    cfg.model.hidden = 8;
    cfg.model.conv_filter = 8;
    cfg.model.predictor_filter = 8;
    cfg.model.n_fft_blocks = 1;
    cfg.denoiser.hidden = 8;
    cfg.dsp.mel.n_mels = 10;
    let inventory = PhonemeInventory::from_tokens(["<AP>", "a", "o"].map(String::from).to_vec())?;
    let quantizer = EnergyQuantizer::new(16, 0.0, 10.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = SvsModel::new(cfg, inventory, quantizer, &mut rng)?;

    let inputs = FrameInputs {
        phoneme_ids: vec![1, 1, 2, 2, 0],
        note_ids: vec![60, 60, 64, 64, 0],
        energy_bins: None,
    };
    let target = standard_normal(5, 10, &mut rng) - 4.0;
    let eps = standard_normal(5, 10, &mut rng);
    let energy = [2.0, 2.5, 6.0, 5.0, 0.0];
    let window = TrainWindow {
        inputs: &inputs,
        target: &target,
        frame_energy: &energy,
        position_offset: 0,
    };

    model.zero_grad();
    model.forward(window, 40, &eps)?;
    model.backward()?;
    let mut probes = Vec::new();
    model.visit("", &mut |name, p| probes.push((name.to_string(), p.grad[[0, 0]])));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, analytic) in &probes {
        let nudge = |m: &mut SvsModel, d: f64| {
            m.visit("", &mut |n, p| {
                if n == name {
                    p.value[[0, 0]] += d;
                }
            })
        };
        nudge(&mut model, h);
        let plus = model.forward(window, 40, &eps)?.total;
        nudge(&mut model, -2.0 * h);
        let minus = model.forward(window, 40, &eps)?.total;
        nudge(&mut model, h);
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{name:<40} analytic {analytic:>12.4e}  numeric {numeric:>12.4e}");
    }
    println!("{} tensors, worst relative error {worst:.2e}", probes.len());
    Ok(())
}
