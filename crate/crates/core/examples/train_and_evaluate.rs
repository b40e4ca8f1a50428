//! End to end on a toy corpus: generate, train a small phoneme-level model,
//! synthesize the test split and score it.
//!
//! Usage: cargo run --release --example train_and_evaluate [steps]

use dynsvs::app::{evaluate_examples, gen_corpus, prepare_training, RunConfig};
use dynsvs::corpus::{Corpus, Split};
use dynsvs::model::Mode;
use dynsvs::train::{load_examples, train};

fn main() -> dynsvs::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let dir = tempfile::tempdir().expect("temp dir");

    let mut cfg = RunConfig::default();
    cfg.mode = Mode::PhonemeLevel;
    cfg.corpus.n_train = 16;
    cfg.corpus.n_val = 2;
    cfg.corpus.n_test = 4;
    cfg.corpus.phonemes_per_utterance = [4, 8];
    cfg.model.hidden = 32;
    cfg.model.conv_filter = 32;
    cfg.model.predictor_filter = 32;
    cfg.model.n_fft_blocks = 2;
    cfg.denoiser.hidden = 96;
    cfg.train.steps = steps;
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch_size = 2;
    cfg.train.crop_frames = 96;

    gen_corpus(&cfg.corpus, &cfg.dsp, dir.path())?;
    let corpus = Corpus::load(dir.path())?;
    let (mut model, examples) = prepare_training(&cfg, &corpus)?;
    let summary = train(&mut model, &examples, &cfg.train, cfg.seed, None, |row| {
        if row.step % 50 == 0 {
            println!("step {:>5}  loss {:.4}", row.step, row.loss);
        }
    })?;
    println!("final loss {:.4}", summary.final_loss().unwrap_or(f64::NAN));

    let test = load_examples(&corpus.split(Split::Test), &cfg.dsp, &model.inventory, false)?;
    let eval = evaluate_examples(&model, &test, cfg.seed, 1)?;
    for u in &eval.report.utterances {
        println!("{}: energy MAE {:.3}  MCD {:.2} dB", u.id, u.energy_mae, u.mcd_db);
    }
    println!("energy MAE {:.3}, MCD {:.2} dB", eval.report.energy_mae, eval.report.mcd_db);
    Ok(())
}
