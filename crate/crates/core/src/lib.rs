//! Energy-conditioned singing voice synthesis.
//!
//! The crate extracts frame- and phoneme-level energy from audio, feeds a
//! quantized energy embedding into a feed-forward transformer encoder by
//! summation with lyric and note embeddings, and decodes mel-spectrograms
//! with a denoising diffusion model. Everything runs in 64-bit floats on the
//! CPU with hand-derived gradients, so every layer can be checked against
//! finite differences.
//!
//! Module map:
//!
//! * [`dsp`]: STFT, mel filterbank, log-mel, frame energy, WAV and mel file IO,
//!   phase-reconstruction audition.
//! * [`dynamics`]: duration-to-frame alignment, length regulator, phoneme-level
//!   energy and energy quantization.
//! * [`acoustic`]: embedding summation, positional encoding, FFT blocks and
//!   the optional energy predictor.
//! * [`diffusion`]: noise schedule, forward noising, denoiser, L1 objective and
//!   ancestral sampler.
//! * [`metrics`]: energy MAE, F0 MAE and mel cepstral distortion.
//! * [`corpus`]: annotation parsing, synthetic corpus generation and training
//!   example assembly.
//! * [`model`], [`train`]: the full conditioned model, checkpoints and the
//!   training loop.
//! * [`app`]: the batch commands behind the `dynsvs` binary.

pub mod acoustic;
pub mod app;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod dynamics;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
