use dynsvs::app::{gen_corpus, prepare_training, RunConfig};
use dynsvs::corpus::Corpus;
use dynsvs::model::Mode;
use dynsvs::train::train;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn loss_falls_over_a_thousand_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.mode = Mode::PhonemeLevel;
    cfg.corpus.n_train = 10;
    cfg.corpus.n_val = 1;
    cfg.corpus.n_test = 1;
    cfg.corpus.phonemes_per_utterance = [3, 8];
    cfg.model.hidden = 16;
    cfg.model.conv_filter = 16;
    cfg.model.n_fft_blocks = 1;
    cfg.denoiser.hidden = 96;
    cfg.denoiser.n_layers = 2;
    cfg.train.steps = 1000;
    cfg.train.crop_frames = 32;
    gen_corpus(&cfg.corpus, &cfg.dsp, tmp.path()).unwrap();
    let corpus = Corpus::load(tmp.path()).unwrap();

    let run = || {
        let (mut model, examples) = prepare_training(&cfg, &corpus).unwrap();
        train(&mut model, &examples, &cfg.train, cfg.seed, None, |_| {}).unwrap()
    };
    let summary = run();
    let losses: Vec<f64> = summary.log.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 1000);
    assert!(losses.iter().all(|l| l.is_finite()));
    let early = median(losses[..100].to_vec());
    let late = median(losses[900..].to_vec());
    assert!(late < early, "median loss {early} -> {late}");

    assert_eq!(run().final_loss().unwrap().to_bits(), summary.final_loss().unwrap().to_bits());
}
