//! Write a small synthetic corpus and read it back.
//!
//! Usage: cargo run --example synthetic_corpus [out_dir]

use dynsvs::corpus::{generate_synthetic_corpus, write_corpus, Corpus, Split, SynthSpec};
use dynsvs::dsp::DspConfig;

fn main() -> dynsvs::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = out.as_deref().unwrap_or(tmp.path());

    let dsp = DspConfig::default();
    let spec = SynthSpec {
        n_train: 8,
        n_val: 2,
        n_test: 2,
        seed: 3,
        ..SynthSpec::default()
    };
    let utterances = generate_synthetic_corpus(&spec, &dsp)?;
    let manifest = write_corpus(dir, &utterances, &dsp)?;
    println!("wrote {} utterances to {}", utterances.len(), dir.display());
    println!("manifest hash {}", manifest.hash);

    let corpus = Corpus::load(dir)?;
    let first = corpus.split(Split::Train)[0];
    println!("{}: {:?}", first.id, first.score.phonemes);
    println!("  notes     {:?}", first.score.notes);
    if let Some(e) = &first.score.energy {
        let rounded: Vec<String> = e.values().iter().map(|v| format!("{v:.2}")).collect();
        println!("  energy    [{}]", rounded.join(", "));
    }
    Ok(())
}
