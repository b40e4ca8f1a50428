use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynsvs::app::{self, EvaluateOptions, RunConfig, SynthesizeOptions};
use dynsvs::dsp::EnergyLevel;
use dynsvs::model::Mode;

#[derive(Parser)]
#[command(name = "dynsvs", version, about = "Energy-conditioned diffusion singing voice synthesis")]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accept WAVs at other sample rates and resample them.
    #[arg(long, global = true)]
    resample: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus.
    GenCorpus {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure frame- or phoneme-level energy of a recording.
    ExtractEnergy {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        level: Option<EnergyLevel>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant on the corpus training split.
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate mels for annotated scores.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// JSON energy array replacing the annotation energy.
        #[arg(long)]
        energy: Option<PathBuf>,
        #[arg(long)]
        level: Option<EnergyLevel>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a phase-reconstruction WAV (listening only).
        #[arg(long)]
        audition: bool,
    },
    /// Score a checkpoint on the corpus test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long)]
        mel_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> dynsvs::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.resample |= cli.resample;
    match cli.command {
        Command::GenCorpus { out } => {
            if let Some(s) = cli.seed {
                cfg.corpus.seed = s;
            }
            let out = out.unwrap_or(cfg.corpus_dir);
            let m = app::gen_corpus(&cfg.corpus, &cfg.dsp, &out)?;
            println!("{}", m.hash);
        }
        Command::ExtractEnergy {
            wav,
            annotations,
            id,
            level,
            out,
        } => {
            let level = level.unwrap_or(cfg.level);
            let e = app::extract_energy(&wav, annotations.as_deref(), id.as_deref(), level, &cfg.dsp, cfg.resample)?;
            app::write_energy(&out, &e)?;
        }
        Command::Train {
            mode,
            steps,
            corpus,
            out,
        } => {
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.train.steps = steps.unwrap_or(cfg.train.steps);
            let corpus = corpus.unwrap_or(cfg.corpus_dir.clone());
            let out = out.unwrap_or(cfg.out_dir.join(cfg.mode.name()));
            let outcome = app::train_model(&cfg, &corpus, &out, |_| {})?;
            println!(
                "{} final loss {:.6}",
                outcome.checkpoint.display(),
                outcome.summary.final_loss().unwrap_or(f64::NAN)
            );
        }
        Command::Synthesize {
            checkpoint,
            annotations,
            energy,
            level,
            id,
            out,
            audition,
        } => {
            let energy = energy
                .map(|p| app::read_energy(&p, level.unwrap_or(cfg.level)))
                .transpose()?;
            let opts = SynthesizeOptions {
                energy,
                id,
                seed: cfg.seed,
                audition: audition || cfg.audition,
                audition_iterations: cfg.audition_iterations,
            };
            for p in app::synthesize(&checkpoint, &annotations, &out, &opts)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            out,
            csv,
            plot_data,
            mel_dir,
        } => {
            let opts = EvaluateOptions {
                seed: cfg.seed,
                threads: None,
                resample: cfg.resample,
                csv,
                plot_data,
                mel_dir,
            };
            let corpus = corpus.unwrap_or(cfg.corpus_dir.clone());
            let eval = app::evaluate(&checkpoint, &corpus, &out, &opts)?;
            let r = &eval.report;
            println!(
                "energy_mae {:.4}  f0_mae_hz {}  mcd_db {:.3}",
                r.energy_mae,
                r.f0_mae_hz.map_or("n/a".to_string(), |v| format!("{v:.2}")),
                r.mcd_db
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
