//! The noise schedule, forward noising and a teacher-forced reverse pass.

use dynsvs::diffusion::{forward_noise, reverse_process, standard_normal, DiffusionSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dynsvs::Result<()> {
    let schedule = DiffusionSchedule::default();
    let n = schedule.n_steps();
    println!("{n} steps, beta {:.4} .. {:.4}", schedule.beta(1), schedule.beta(n));
    for t in [1, 25, 50, 75, 100] {
        println!("  t={t:>3}  alpha_bar={:.6}", schedule.alpha_bar(t));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = standard_normal(4, 8, &mut rng).mapv(|v| 0.3 * v);
    let eps = standard_normal(4, 8, &mut rng);
    let xt = forward_noise(&x0, 50, &eps, &schedule)?;
    println!("|x_50 - x0| mean {:.4}", (&xt - &x0).mapv(f64::abs).mean().unwrap_or(0.0));

    // An oracle that knows x0 predicts the noise exactly; the sampler then
    // walks back to x0.
    let one = DiffusionSchedule::linear(1, 0.3, 0.3)?;
    let x1 = forward_noise(&x0, 1, &eps, &one)?;
    let rec = reverse_process(x1, &one, &mut rng, |_, _| Ok(eps.clone()))?;
    println!("teacher-forced max error {:.2e}", (&rec - &x0).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    Ok(())
}
