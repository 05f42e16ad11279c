//! The contextual stack: BLSTM context encoder, multi-head biasing
//! attention, combiner and the two posterior heads (CTC linear and the
//! context-phrase prediction network that shares it).
//!
//! All forward passes are pure functions of immutable weights; calling them
//! concurrently is safe.

use crate::error::{Error, Result};
use crate::nn::{layer_norm, linear, lstm_cell, softmax, LstmState, LstmWeights, Matrix};
use crate::posterior::PosteriorMatrix;
use crate::vocab::{BiasingList, ContextPhrase};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Model dimensions. `n_heads` must divide `embed_dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Shared embedding width d of audio frames and context embeddings.
    pub embed_dim: usize,
    /// Per-direction hidden size h of the context-encoder BLSTM.
    pub lstm_hidden: usize,
    /// Vocabulary size V (including blank).
    pub vocab_size: usize,
    /// Attention heads in the biasing layer.
    pub n_heads: usize,
    /// Layer-norm epsilon for the combiner.
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn new(embed_dim: usize, lstm_hidden: usize, vocab_size: usize, n_heads: usize) -> Self {
        ModelConfig {
            embed_dim,
            lstm_hidden,
            vocab_size,
            n_heads,
            ln_eps: crate::nn::DEFAULT_LN_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.lstm_hidden == 0 || self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "bad dimensions: d={} h={} vocab={}",
                self.embed_dim, self.lstm_hidden, self.vocab_size
            )));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads={} must divide embed_dim={}",
                self.n_heads, self.embed_dim
            )));
        }
        if !self.ln_eps.is_finite() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Fixed-length embedding of one context phrase (h_i in the biasing layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding(Vec<f64>);

impl ContextEmbedding {
    pub fn new(v: Vec<f64>) -> Self {
        ContextEmbedding(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// T x d sequence of audio embeddings as produced by an acoustic encoder.
/// The toolkit never computes these itself; they arrive from files or the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbeddingSeq(Matrix);

impl AudioEmbeddingSeq {
    pub fn new(frames: Matrix) -> Self {
        AudioEmbeddingSeq(frames)
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// All parameters of the contextual stack.
///
/// `ctc_w`/`ctc_b` are the CTC linear. The CPP network's second layer is
/// this same parameter object — [`cpp_forward`] and [`ctc_head`] both read
/// it, so an update through one is visible through the other.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModelWeights {
    pub config: ModelConfig,

    /// Forward/backward context-encoder LSTMs over one-hot token inputs.
    pub ce_fwd: LstmWeights,
    pub ce_bwd: LstmWeights,
    /// Readout of the concatenated last states [h_fwd, c_fwd, h_bwd, c_bwd]
    /// (4h) down to the embedding width d.
    pub ce_readout_w: Matrix,
    pub ce_readout_b: Vec<f64>,

    /// Biasing-layer projections (d x d, no biases).
    pub attn_wq: Matrix,
    pub attn_wk: Matrix,
    pub attn_wv: Matrix,
    pub attn_wo: Matrix,

    /// Combiner: one layer norm per input, then a 2d -> d feed-forward.
    pub ln_audio_gain: Vec<f64>,
    pub ln_audio_bias: Vec<f64>,
    pub ln_ctx_gain: Vec<f64>,
    pub ln_ctx_bias: Vec<f64>,
    pub ff_w: Matrix,
    pub ff_b: Vec<f64>,

    /// CPP network first layer (d -> d, tanh follows).
    pub cpp_w: Matrix,
    pub cpp_b: Vec<f64>,

    /// CTC linear (V x d), shared with the CPP second layer.
    pub ctc_w: Matrix,
    pub ctc_b: Vec<f64>,
}

impl BiasModelWeights {
    /// All-zero weights except identity attention projections and unit
    /// layer-norm gains. Useful as a deterministic base for tests.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let h = config.lstm_hidden;
        let v = config.vocab_size;
        Ok(BiasModelWeights {
            config,
            ce_fwd: LstmWeights::zeros(v, h),
            ce_bwd: LstmWeights::zeros(v, h),
            ce_readout_w: Matrix::zeros(d, 4 * h),
            ce_readout_b: vec![0.0; d],
            attn_wq: Matrix::identity(d),
            attn_wk: Matrix::identity(d),
            attn_wv: Matrix::identity(d),
            attn_wo: Matrix::identity(d),
            ln_audio_gain: vec![1.0; d],
            ln_audio_bias: vec![0.0; d],
            ln_ctx_gain: vec![1.0; d],
            ln_ctx_bias: vec![0.0; d],
            ff_w: Matrix::zeros(d, 2 * d),
            ff_b: vec![0.0; d],
            cpp_w: Matrix::zeros(d, d),
            cpp_b: vec![0.0; d],
            ctc_w: Matrix::zeros(v, d),
            ctc_b: vec![0.0; v],
        })
    }

    /// Small random weights, reproducible from the seed. Attention value and
    /// output projections stay at identity (the default biasing-layer form);
    /// pass `project_values = true` to randomize them too.
    pub fn random(config: ModelConfig, seed: u64, project_values: bool) -> Result<Self> {
        let mut w = BiasModelWeights::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Matrix| {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    m.set(r, c, rng.random_range(-0.5..0.5));
                }
            }
        };
        fill(&mut w.ce_fwd.w_input);
        fill(&mut w.ce_fwd.w_hidden);
        fill(&mut w.ce_bwd.w_input);
        fill(&mut w.ce_bwd.w_hidden);
        fill(&mut w.ce_readout_w);
        fill(&mut w.attn_wq);
        fill(&mut w.attn_wk);
        if project_values {
            fill(&mut w.attn_wv);
            fill(&mut w.attn_wo);
        }
        fill(&mut w.ff_w);
        fill(&mut w.cpp_w);
        fill(&mut w.ctc_w);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut fill_vec = |v: &mut Vec<f64>| {
            for x in v.iter_mut() {
                *x = rng2.random_range(-0.1..0.1);
            }
        };
        fill_vec(&mut w.ce_fwd.bias);
        fill_vec(&mut w.ce_bwd.bias);
        fill_vec(&mut w.ce_readout_b);
        fill_vec(&mut w.ff_b);
        fill_vec(&mut w.cpp_b);
        fill_vec(&mut w.ctc_b);
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.config.embed_dim;
        let h = self.config.lstm_hidden;
        let v = self.config.vocab_size;
        let check = |name: &str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::shape(format!(
                    "{name}: expected {rows}x{cols}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        let check_vec = |name: &str, vv: &[f64], len: usize| -> Result<()> {
            if vv.len() != len {
                return Err(Error::shape(format!(
                    "{name}: expected {len} entries, got {}",
                    vv.len()
                )));
            }
            Ok(())
        };
        for (name, lstm) in [("ce.fwd", &self.ce_fwd), ("ce.bwd", &self.ce_bwd)] {
            check(&format!("{name}.w_ih"), &lstm.w_input, 4 * h, v)?;
            check(&format!("{name}.w_hh"), &lstm.w_hidden, 4 * h, h)?;
            check_vec(&format!("{name}.bias"), &lstm.bias, 4 * h)?;
        }
        check("ce.readout.weight", &self.ce_readout_w, d, 4 * h)?;
        check_vec("ce.readout.bias", &self.ce_readout_b, d)?;
        check("attn.w_q", &self.attn_wq, d, d)?;
        check("attn.w_k", &self.attn_wk, d, d)?;
        check("attn.w_v", &self.attn_wv, d, d)?;
        check("attn.w_o", &self.attn_wo, d, d)?;
        check_vec("combiner.ln_audio.gain", &self.ln_audio_gain, d)?;
        check_vec("combiner.ln_audio.bias", &self.ln_audio_bias, d)?;
        check_vec("combiner.ln_ctx.gain", &self.ln_ctx_gain, d)?;
        check_vec("combiner.ln_ctx.bias", &self.ln_ctx_bias, d)?;
        check("combiner.ff.weight", &self.ff_w, d, 2 * d)?;
        check_vec("combiner.ff.bias", &self.ff_b, d)?;
        check("cpp.hidden.weight", &self.cpp_w, d, d)?;
        check_vec("cpp.hidden.bias", &self.cpp_b, d)?;
        check("ctc_linear.weight", &self.ctc_w, v, d)?;
        check_vec("ctc_linear.bias", &self.ctc_b, v)?;
        Ok(())
    }
}

fn one_hot(id: usize, size: usize) -> Vec<f64> {
    let mut v = vec![0.0; size];
    v[id] = 1.0;
    v
}

/// Encode one phrase: run the forward and backward LSTMs over one-hot token
/// inputs, concatenate the final [hidden, cell] of each direction (4h) and
/// project to the embedding width.
pub fn encode_phrase(phrase: &ContextPhrase, w: &BiasModelWeights) -> Result<ContextEmbedding> {
    let v = w.config.vocab_size;
    let h = w.config.lstm_hidden;
    for &id in phrase.token_ids() {
        if id >= v {
            return Err(Error::domain(format!(
                "phrase token id {id} out of range for vocab size {v}"
            )));
        }
    }

    let run = |ids: &mut dyn Iterator<Item = usize>, weights: &LstmWeights| -> Result<LstmState> {
        let mut state = LstmState::zeros(h);
        for id in ids {
            state = lstm_cell(&one_hot(id, v), &state, weights)?;
        }
        Ok(state)
    };
    let fwd = run(&mut phrase.token_ids().iter().copied(), &w.ce_fwd)?;
    let bwd = run(&mut phrase.token_ids().iter().rev().copied(), &w.ce_bwd)?;

    let mut concat = Vec::with_capacity(4 * h);
    concat.extend_from_slice(&fwd.hidden);
    concat.extend_from_slice(&fwd.cell);
    concat.extend_from_slice(&bwd.hidden);
    concat.extend_from_slice(&bwd.cell);
    Ok(ContextEmbedding::new(linear(
        &concat,
        &w.ce_readout_w,
        &w.ce_readout_b,
    )?))
}

/// Encode every list entry, order preserved (no-bias first).
pub fn encode_biasing_list(
    list: &BiasingList,
    w: &BiasModelWeights,
) -> Result<Vec<ContextEmbedding>> {
    list.iter().map(|p| encode_phrase(p, w)).collect()
}

/// Output of the biasing layer.
#[derive(Debug, Clone)]
pub struct BiasingAttention {
    /// T x d context representations (one per audio frame).
    pub context: Matrix,
    /// Per-head T x (K+1) attention weights; each row is a distribution
    /// over list entries.
    pub attn_heads: Vec<Matrix>,
}

impl BiasingAttention {
    /// Head-averaged T x (K+1) attention matrix (rows still sum to 1).
    pub fn mean_attention(&self) -> Matrix {
        let t = self.attn_heads[0].rows();
        let k1 = self.attn_heads[0].cols();
        let n = self.attn_heads.len() as f64;
        let mut out = Matrix::zeros(t, k1);
        for head in &self.attn_heads {
            for r in 0..t {
                for c in 0..k1 {
                    out.set(r, c, out.get(r, c) + head.get(r, c) / n);
                }
            }
        }
        out
    }
}

/// Scaled dot-product attention of audio frames (queries) over context
/// embeddings (keys and values), multi-head with per-head width d/n_heads.
/// With one head and identity value/output projections this is exactly the
/// softmax-weighted sum of the raw context embeddings.
pub fn biasing_attention(
    audio: &AudioEmbeddingSeq,
    ctx: &[ContextEmbedding],
    w: &BiasModelWeights,
) -> Result<BiasingAttention> {
    let d = w.config.embed_dim;
    let n_heads = w.config.n_heads;
    if !d.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "n_heads={n_heads} must divide embed_dim={d}"
        )));
    }
    if audio.dim() != d {
        return Err(Error::shape(format!(
            "audio frames have dim {}, model expects {d}",
            audio.dim()
        )));
    }
    if ctx.is_empty() {
        return Err(Error::domain("needs at least the no-bias embedding"));
    }
    for e in ctx {
        if e.dim() != d {
            return Err(Error::shape(format!(
                "context embedding has dim {}, model expects {d}",
                e.dim()
            )));
        }
    }

    let head_dim = d / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let t_frames = audio.frames();
    let k1 = ctx.len();

    let keys: Vec<Vec<f64>> = ctx
        .iter()
        .map(|e| w.attn_wk.matvec(e.as_slice()))
        .collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = ctx
        .iter()
        .map(|e| w.attn_wv.matvec(e.as_slice()))
        .collect::<Result<_>>()?;

    let mut context = Matrix::zeros(t_frames, d);
    let mut attn_heads = vec![Matrix::zeros(t_frames, k1); n_heads];

    for t in 0..t_frames {
        let query = w.attn_wq.matvec(audio.frame(t))?;
        let mut concat = vec![0.0; d];
        for (head, head_attn) in attn_heads.iter_mut().enumerate() {
            let lo = head * head_dim;
            let hi = lo + head_dim;
            let mut scores = Vec::with_capacity(k1);
            for key in &keys {
                let dot: f64 = query[lo..hi]
                    .iter()
                    .zip(&key[lo..hi])
                    .map(|(a, b)| a * b)
                    .sum();
                scores.push(dot * scale);
            }
            let alpha = softmax(&scores)?;
            for (i, &a) in alpha.iter().enumerate() {
                head_attn.set(t, i, a);
                for (slot, vv) in concat[lo..hi].iter_mut().zip(&values[i][lo..hi]) {
                    *slot += a * vv;
                }
            }
        }
        let projected = w.attn_wo.matvec(&concat)?;
        context.row_mut(t).copy_from_slice(&projected);
    }

    Ok(BiasingAttention {
        context,
        attn_heads,
    })
}

/// Combiner: layer-norm each input, concatenate to 2d, feed-forward to d.
pub fn combine(
    audio: &AudioEmbeddingSeq,
    context: &Matrix,
    w: &BiasModelWeights,
) -> Result<Matrix> {
    let d = w.config.embed_dim;
    if audio.dim() != d || context.cols() != d {
        return Err(Error::shape(format!(
            "combine: audio dim {} / context dim {} vs model {d}",
            audio.dim(),
            context.cols()
        )));
    }
    if audio.frames() != context.rows() {
        return Err(Error::shape(format!(
            "combine: {} audio frames vs {} context rows",
            audio.frames(),
            context.rows()
        )));
    }
    let eps = w.config.ln_eps;
    let mut out = Matrix::zeros(audio.frames(), d);
    for t in 0..audio.frames() {
        let a = layer_norm(audio.frame(t), &w.ln_audio_gain, &w.ln_audio_bias, eps)?;
        let c = layer_norm(context.row(t), &w.ln_ctx_gain, &w.ln_ctx_bias, eps)?;
        let mut concat = Vec::with_capacity(2 * d);
        concat.extend_from_slice(&a);
        concat.extend_from_slice(&c);
        out.row_mut(t)
            .copy_from_slice(&linear(&concat, &w.ff_w, &w.ff_b)?);
    }
    Ok(out)
}

/// CPP network forward: d -> d linear, tanh, then the shared CTC linear and
/// a log-softmax. Produces the bias posterior used for the CPP loss.
pub fn cpp_forward(context: &Matrix, w: &BiasModelWeights) -> Result<PosteriorMatrix> {
    let d = w.config.embed_dim;
    if context.cols() != d {
        return Err(Error::shape(format!(
            "cpp_forward: input dim {} vs model {d}",
            context.cols()
        )));
    }
    let mut logits = Matrix::zeros(context.rows(), w.config.vocab_size);
    for t in 0..context.rows() {
        let hidden = linear(context.row(t), &w.cpp_w, &w.cpp_b)?;
        let activated: Vec<f64> = hidden.iter().map(|x| x.tanh()).collect();
        logits
            .row_mut(t)
            .copy_from_slice(&linear(&activated, &w.ctc_w, &w.ctc_b)?);
    }
    PosteriorMatrix::from_logits(&logits)
}

/// CTC head: the shared CTC linear over context-aware frames, log-softmaxed.
pub fn ctc_head(frames: &Matrix, w: &BiasModelWeights) -> Result<PosteriorMatrix> {
    let d = w.config.embed_dim;
    if frames.cols() != d {
        return Err(Error::shape(format!(
            "ctc_head: input dim {} vs model {d}",
            frames.cols()
        )));
    }
    let mut logits = Matrix::zeros(frames.rows(), w.config.vocab_size);
    for t in 0..frames.rows() {
        logits
            .row_mut(t)
            .copy_from_slice(&linear(frames.row(t), &w.ctc_w, &w.ctc_b)?);
    }
    PosteriorMatrix::from_logits(&logits)
}

/// One full contextual forward pass over retained audio embeddings:
/// encode list -> biasing attention -> combine -> CTC head.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub posterior: PosteriorMatrix,
    pub attention: BiasingAttention,
    pub combined: Matrix,
}

pub fn forward(
    audio: &AudioEmbeddingSeq,
    list: &BiasingList,
    w: &BiasModelWeights,
) -> Result<ForwardPass> {
    let ctx = encode_biasing_list(list, w)?;
    let attention = biasing_attention(audio, &ctx, w)?;
    let combined = combine(audio, &attention.context, w)?;
    let posterior = ctc_head(&combined, w)?;
    Ok(ForwardPass {
        posterior,
        attention,
        combined,
    })
}
