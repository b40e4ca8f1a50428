//! Conditioning encoder.
//!
//! Frame-level lyric, note and (optionally) quantized energy indices are looked
//! up in three embedding tables and summed. A fixed sinusoidal position code is
//! added and a stack of feed-forward transformer blocks produces the
//! conditioning sequence consumed by the diffusion decoder. An optional energy
//! predictor head reads the summed embedding and regresses frame energy; it
//! only contributes an auxiliary loss.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    join, relu, relu_backward, sinusoid, AttentionCache, Conv1d, LayerNorm, LayerNormCache, Linear,
    MultiHeadAttention, Param, Parameters,
};
use crate::{Error, Result};

pub const NOTE_VOCAB: usize = 128;
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_fft_blocks: usize,
    pub n_heads: usize,
    pub conv_kernels: [usize; 2],
    /// Inner width of the block convolutions.
    pub conv_filter: usize,
    pub phoneme_vocab: usize,
    pub note_vocab: usize,
    pub energy_vocab: usize,
    /// Width of the energy predictor convolutions.
    pub predictor_filter: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            n_fft_blocks: 4,
            n_heads: 2,
            conv_kernels: [9, 1],
            conv_filter: 256,
            phoneme_vocab: 16,
            note_vocab: NOTE_VOCAB,
            energy_vocab: crate::dynamics::DEFAULT_ENERGY_BINS,
            predictor_filter: 256,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return bad(format!("hidden {} must be a positive multiple of n_heads {}", self.hidden, self.n_heads));
        }
        if !self.hidden.is_multiple_of(2) {
            return bad("hidden size must be even for the sinusoidal position code".into());
        }
        if self.phoneme_vocab == 0 || self.note_vocab == 0 || self.energy_vocab == 0 {
            return bad("vocabulary sizes must be at least 1".into());
        }
        if self.conv_kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!("conv kernels {:?} must be odd", self.conv_kernels));
        }
        if self.conv_filter == 0 || self.predictor_filter == 0 {
            return bad("filter sizes must be positive".into());
        }
        if self.dropout != 0.0 {
            return bad("dropout is not supported; set it to 0".into());
        }
        Ok(())
    }
}

/// Frame-level index sequences fed to the encoder, all of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInputs {
    pub phoneme_ids: Vec<usize>,
    pub note_ids: Vec<usize>,
    pub energy_bins: Option<Vec<usize>>,
}

impl FrameInputs {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            phoneme_ids: self.phoneme_ids[start..end].to_vec(),
            note_ids: self.note_ids[start..end].to_vec(),
            energy_bins: self.energy_bins.as_ref().map(|e| e[start..end].to_vec()),
        }
    }
}

fn check_ids(name: &str, ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&i| i >= vocab) {
        Some(i) => Err(Error::InvalidInput(format!("{name} id {i} outside table of {vocab} rows"))),
        None => Ok(()),
    }
}

fn lookup_add(out: &mut Array2<f64>, table: &Param, ids: &[usize]) {
    for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
        row += &table.value.row(id);
    }
}

fn scatter_add(table: &mut Param, ids: &[usize], d: &Array2<f64>) {
    for (row, &id) in d.rows().into_iter().zip(ids) {
        let mut g = table.grad.row_mut(id);
        g += &row;
    }
}

/// Fixed sinusoidal position code for positions `offset..offset + t`.
pub fn positional_encoding(t: usize, hidden: usize, offset: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((t, hidden));
    for (i, mut row) in pe.rows_mut().into_iter().enumerate() {
        row.assign(&sinusoid((offset + i) as f64, hidden));
    }
    pe
}

/// Adds the position code in place of a copy.
pub fn positional_encode(h: &Array2<f64>, offset: usize) -> Array2<f64> {
    h + &positional_encoding(h.nrows(), h.ncols(), offset)
}

/// Self-attention and a two-layer convolution, each wrapped in a residual
/// connection followed by layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FftBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct FftBlockCache {
    input: Array2<f64>,
    attention: AttentionCache,
    norm1: LayerNormCache,
    mid: Array2<f64>,
    conv1_pre: Array2<f64>,
    conv1_act: Array2<f64>,
    norm2: LayerNormCache,
}

impl FftBlock {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        Self {
            attention: MultiHeadAttention::new(h, cfg.n_heads, INIT_SCALE, rng),
            norm1: LayerNorm::new(h),
            conv1: Conv1d::new(cfg.conv_kernels[0], h, cfg.conv_filter, INIT_SCALE, rng),
            conv2: Conv1d::new(cfg.conv_kernels[1], cfg.conv_filter, h, INIT_SCALE, rng),
            norm2: LayerNorm::new(h),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FftBlockCache) {
        let (att, att_cache) = self.attention.forward(x);
        let (mid, norm1) = self.norm1.forward(&(x + &att));
        let conv1_pre = self.conv1.forward(&mid);
        let conv1_act = relu(&conv1_pre);
        let conv2 = self.conv2.forward(&conv1_act);
        let (out, norm2) = self.norm2.forward(&(&mid + &conv2));
        let cache = FftBlockCache {
            input: x.clone(),
            attention: att_cache,
            norm1,
            mid,
            conv1_pre,
            conv1_act,
            norm2,
        };
        (out, cache)
    }

    pub fn backward(&mut self, cache: &FftBlockCache, dy: &Array2<f64>) -> Array2<f64> {
        let dsum2 = self.norm2.backward(&cache.norm2, dy);
        let dact = self.conv2.backward(&cache.conv1_act, &dsum2);
        let dpre = relu_backward(&cache.conv1_pre, &dact);
        let mut dmid = self.conv1.backward(&cache.mid, &dpre);
        dmid += &dsum2;
        let dsum1 = self.norm1.backward(&cache.norm1, &dmid);
        let mut dx = self.attention.backward(&cache.input, &cache.attention, &dsum1);
        dx += &dsum1;
        dx
    }
}

impl Parameters for FftBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }
}

/// Embedding tables plus the FFT block stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: ModelConfig,
    pub phoneme_table: Param,
    pub note_table: Param,
    pub energy_table: Param,
    pub blocks: Vec<FftBlock>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: FrameInputs,
    summed: Array2<f64>,
    blocks: Vec<FftBlockCache>,
}

impl EncoderCache {
    /// The summed embedding `h^m` before the position code.
    pub fn summed_embedding(&self) -> &Array2<f64> {
        &self.summed
    }
}

impl Encoder {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let phoneme_table = Param::uniform(config.phoneme_vocab, h, INIT_SCALE, rng);
        let note_table = Param::uniform(config.note_vocab, h, INIT_SCALE, rng);
        let energy_table = Param::uniform(config.energy_vocab, h, INIT_SCALE, rng);
        let blocks = (0..config.n_fft_blocks).map(|_| FftBlock::new(&config, rng)).collect();
        Ok(Self {
            config,
            phoneme_table,
            note_table,
            energy_table,
            blocks,
        })
    }

    /// `h^m[t] = phoneme[p_t] + note[n_t] (+ energy[e_t])`; the energy term is
    /// left out entirely when `energy_bins` is `None`.
    pub fn embed_and_sum(&self, inputs: &FrameInputs) -> Result<Array2<f64>> {
        let t = inputs.len();
        if t == 0 {
            return Err(Error::InvalidInput("empty frame sequence".into()));
        }
        if inputs.note_ids.len() != t || inputs.energy_bins.as_ref().is_some_and(|e| e.len() != t) {
            return Err(Error::InvalidInput("frame-level input sequences differ in length".into()));
        }
        check_ids("phoneme", &inputs.phoneme_ids, self.config.phoneme_vocab)?;
        check_ids("note", &inputs.note_ids, self.config.note_vocab)?;
        let mut h = Array2::zeros((t, self.config.hidden));
        lookup_add(&mut h, &self.phoneme_table, &inputs.phoneme_ids);
        lookup_add(&mut h, &self.note_table, &inputs.note_ids);
        if let Some(bins) = &inputs.energy_bins {
            check_ids("energy", bins, self.config.energy_vocab)?;
            lookup_add(&mut h, &self.energy_table, bins);
        }
        Ok(h)
    }

    /// Returns the conditioning sequence `H_c` (`T x H`) and the activation
    /// cache. `position_offset` shifts the position code for cropped windows.
    pub fn forward(&self, inputs: &FrameInputs, position_offset: usize) -> Result<(Array2<f64>, EncoderCache)> {
        let summed = self.embed_and_sum(inputs)?;
        let mut x = positional_encode(&summed, position_offset);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&x);
            caches.push(c);
            x = y;
        }
        let cache = EncoderCache {
            inputs: inputs.clone(),
            summed,
            blocks: caches,
        };
        Ok((x, cache))
    }

    /// Accumulates parameter gradients given `dL/dH_c` and, optionally, an
    /// extra gradient arriving directly at the summed embedding.
    pub fn backward(&mut self, cache: &EncoderCache, d_out: &Array2<f64>, d_summed: Option<&Array2<f64>>) {
        let mut d = d_out.clone();
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = block.backward(c, &d);
        }
        if let Some(extra) = d_summed {
            d += extra;
        }
        scatter_add(&mut self.phoneme_table, &cache.inputs.phoneme_ids, &d);
        scatter_add(&mut self.note_table, &cache.inputs.note_ids, &d);
        if let Some(bins) = &cache.inputs.energy_bins {
            scatter_add(&mut self.energy_table, bins, &d);
        }
    }
}

impl Parameters for Encoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "phoneme_table"), &mut self.phoneme_table);
        f(&join(prefix, "note_table"), &mut self.note_table);
        f(&join(prefix, "energy_table"), &mut self.energy_table);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Two convolutions with ReLU and a per-frame scalar projection.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyPredictor {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct PredictorCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    act2: Array2<f64>,
}

pub const PREDICTOR_KERNEL: usize = 3;

impl EnergyPredictor {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let f = cfg.predictor_filter;
        Self {
            conv1: Conv1d::new(PREDICTOR_KERNEL, cfg.hidden, f, INIT_SCALE, rng),
            conv2: Conv1d::new(PREDICTOR_KERNEL, f, f, INIT_SCALE, rng),
            proj: Linear::new(f, 1, INIT_SCALE, rng),
        }
    }

    pub fn forward(&self, h: &Array2<f64>) -> (Array1<f64>, PredictorCache) {
        let pre1 = self.conv1.forward(h);
        let act1 = relu(&pre1);
        let pre2 = self.conv2.forward(&act1);
        let act2 = relu(&pre2);
        let out = self.proj.forward(&act2).column(0).to_owned();
        let cache = PredictorCache {
            input: h.clone(),
            pre1,
            act1,
            pre2,
            act2,
        };
        (out, cache)
    }

    /// Returns the gradient with respect to the predictor input.
    pub fn backward(&mut self, cache: &PredictorCache, d_pred: &Array1<f64>) -> Array2<f64> {
        let dy = d_pred.view().insert_axis(ndarray::Axis(1)).to_owned();
        let dact2 = self.proj.backward(&cache.act2, &dy);
        let dpre2 = relu_backward(&cache.pre2, &dact2);
        let dact1 = self.conv2.backward(&cache.act1, &dpre2);
        let dpre1 = relu_backward(&cache.pre1, &dact1);
        self.conv1.backward(&cache.input, &dpre1)
    }
}

impl Parameters for EnergyPredictor {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse(pred: &Array1<f64>, target: &[f64]) -> Result<(f64, Array1<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let diff: Array1<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}
