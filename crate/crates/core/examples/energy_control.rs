//! Loudness control: synthesize the same score with its phoneme energy
//! scaled by several gains and measure what comes out.
//!
//! Usage: cargo run --release --example energy_control <checkpoint> <corpus_dir>
//! Without arguments a tiny model is trained first (fast, but barely controllable).

use std::path::PathBuf;

use dynsvs::app::{controllability, gen_corpus, prepare_training, RunConfig};
use dynsvs::corpus::{Corpus, Split};
use dynsvs::model::{Mode, SvsModel};
use dynsvs::train::{load_examples, train};

fn main() -> dynsvs::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let (model, corpus) = match args.as_slice() {
        [ckpt, corpus] => (SvsModel::load(ckpt)?.0, Corpus::load(corpus)?),
        _ => {
            let mut cfg = RunConfig::default();
            cfg.mode = Mode::PhonemeLevel;
            cfg.corpus.n_train = 8;
            cfg.corpus.n_test = 2;
            cfg.corpus.n_val = 1;
            cfg.model.hidden = 32;
            cfg.model.conv_filter = 32;
            cfg.model.n_fft_blocks = 1;
            cfg.denoiser.hidden = 96;
            cfg.train.steps = 200;
            cfg.train.learning_rate = 1e-3;
            gen_corpus(&cfg.corpus, &cfg.dsp, tmp.path())?;
            let corpus = Corpus::load(tmp.path())?;
            let (mut model, examples) = prepare_training(&cfg, &corpus)?;
            train(&mut model, &examples, &cfg.train, 0, None, |_| {})?;
            (model, corpus)
        }
    };

    let mut test = load_examples(&corpus.split(Split::Test), &model.config.dsp, &model.inventory, false)?;
    test.truncate(2);
    let report = controllability(&model, &test, &[0.5, 1.0, 2.0], 0, 1)?;
    for tr in &report.traces {
        println!("{}", tr.id);
        for (i, e) in tr.input.iter().enumerate() {
            let outs: Vec<String> = tr.output.iter().map(|o| format!("{:7.3}", o[i])).collect();
            println!("  in {e:7.3}  out x0.5/x1/x2 {}", outs.join(" "));
        }
    }
    println!("monotone fraction {:.2}", report.monotone_fraction);
    if let Some(r) = report.spearman_unit_gain {
        println!("rank correlation at unit gain {r:.3}");
    }
    Ok(())
}
