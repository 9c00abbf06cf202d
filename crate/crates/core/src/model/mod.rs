//! Sentence-to-formula transducer: a bidirectional recurrent encoder shared
//! by a constrained formula decoder (the parser) and a sentence decoder (the
//! generator that reconstructs the input).

pub mod adam;
pub mod checkpoint;
pub mod decode;
pub mod gru;
pub mod tensor;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ltl::{continuation_mask, Token, BOS_INDEX, NUM_TOKENS};
use gru::{GruCache, GruIdx};
use tensor::{axpy, dot, masked_log_softmax, Tensor};

pub use adam::Adam;
pub use decode::{beam_decode, greedy_decode, sample_formula_eps, sample_formulas_eps, sample_uniform_formula};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("target sequence is not a valid formula under the length bound")]
    InvalidTarget,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 32,
            token_dim: 32,
            hidden: 64,
            layers: 1,
            dropout: 0.2,
            lr: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Larger setting: two layers of width 1000.
    pub fn full_scale() -> ModelConfig {
        ModelConfig {
            hidden: 1000,
            layers: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.word_dim == 0 || self.token_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Block indices of one decoder.
#[derive(Debug, Clone)]
struct DecIdx {
    /// Input embeddings, `(vocab + 1) × dim`; the last row is the start symbol.
    emb: usize,
    init_w: Vec<usize>,
    init_b: Vec<usize>,
    cells: Vec<GruIdx>,
    /// Attention key projection, `H × 2H`.
    key: usize,
    /// Output projection over `[prev embedding; context; state]`.
    out_w: usize,
    out_b: usize,
    bos: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    word_emb: usize,
    enc_fwd: Vec<GruIdx>,
    enc_bwd: Vec<GruIdx>,
    parser: DecIdx,
    generator: DecIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Parser,
    Generator,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, f64)>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, scale: f64) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols, scale));
        self.names.len() - 1
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruIdx {
        let s = 1.0 / (hidden as f64).sqrt();
        GruIdx {
            w: self.add(format!("{prefix}.w"), 3 * hidden, input, s),
            u: self.add(format!("{prefix}.u"), 3 * hidden, hidden, s),
            b: self.add(format!("{prefix}.b"), 3 * hidden, 1, 0.0),
        }
    }

    fn decoder(&mut self, prefix: &str, cfg: &ModelConfig, vocab: usize, dim: usize) -> DecIdx {
        let h = cfg.hidden;
        let emb = self.add(format!("{prefix}.embedding"), vocab + 1, dim, 0.1);
        let mut init_w = Vec::new();
        let mut init_b = Vec::new();
        let mut cells = Vec::new();
        for l in 0..cfg.layers {
            init_w.push(self.add(format!("{prefix}.init.{l}.w"), h, 2 * h, 1.0 / (2.0 * h as f64).sqrt()));
            init_b.push(self.add(format!("{prefix}.init.{l}.b"), h, 1, 0.0));
            let input = if l == 0 { dim } else { h };
            cells.push(self.gru(&format!("{prefix}.cell.{l}"), input, h));
        }
        let key = self.add(
            format!("{prefix}.attention.key"),
            h,
            2 * h,
            1.0 / (2.0 * h as f64).sqrt(),
        );
        let feat = dim + 3 * h;
        let out_w = self.add(format!("{prefix}.out.w"), vocab, feat, 1.0 / (feat as f64).sqrt());
        let out_b = self.add(format!("{prefix}.out.b"), vocab, 1, 0.0);
        DecIdx {
            emb,
            init_w,
            init_b,
            cells,
            key,
            out_w,
            out_b,
            bos: vocab,
        }
    }
}

fn build_layout(cfg: &ModelConfig, vocab_size: usize) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let h = cfg.hidden;
    let word_emb = b.add("encoder.embedding".into(), vocab_size, cfg.word_dim, 0.1);
    let mut enc_fwd = Vec::new();
    let mut enc_bwd = Vec::new();
    for l in 0..cfg.layers {
        let input = if l == 0 { cfg.word_dim } else { 2 * h };
        enc_fwd.push(b.gru(&format!("encoder.fwd.{l}"), input, h));
        enc_bwd.push(b.gru(&format!("encoder.bwd.{l}"), input, h));
    }
    let parser = b.decoder("parser", cfg, NUM_TOKENS, cfg.token_dim);
    let generator = b.decoder("generator", cfg, vocab_size, cfg.word_dim);
    (
        Layout {
            word_emb,
            enc_fwd,
            enc_bwd,
            parser,
            generator,
        },
        b,
    )
}

/// Gradient buffers with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub blocks: Vec<Tensor>,
}

impl Grads {
    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            axpy(1.0, &b.data, &mut a.data);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(Tensor::is_zero)
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm().powi(2)).sum::<f64>().sqrt()
    }
}

/// Per-decoder precomputation over the encoder features.
#[derive(Debug, Clone)]
struct DecCtx {
    keys: Vec<Vec<f64>>,
    init: Vec<Vec<f64>>,
}

/// Encoder output for one sentence.
#[derive(Debug, Clone)]
pub struct Encoding {
    /// One `2H` feature vector per word.
    pub h: Vec<Vec<f64>>,
    mean: Vec<f64>,
    parser: DecCtx,
    generator: DecCtx,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    fn ctx(&self, head: Head) -> &DecCtx {
        match head {
            Head::Parser => &self.parser,
            Head::Generator => &self.generator,
        }
    }
}

/// Parser decoder state after consuming `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// Hidden state of every layer.
    pub hidden: Vec<Vec<f64>>,
    /// Attention context of the last step; empty before the first.
    pub context: Vec<f64>,
    pub prefix: Vec<Token>,
    pub depth: usize,
    pub max_len: usize,
}

impl DecoderState {
    pub fn budget(&self) -> usize {
        self.max_len.saturating_sub(self.prefix.len())
    }

    pub fn mask(&self) -> [bool; NUM_TOKENS] {
        continuation_mask(self.depth, self.budget())
    }

    fn prev_index(&self) -> usize {
        self.prefix.last().map_or(BOS_INDEX, |t| t.index())
    }
}

/// One decoder step in the forward direction.
struct StepCache {
    prev: usize,
    cells: Vec<GruCache>,
    alpha: Vec<f64>,
    /// Output features after dropout.
    f: Vec<f64>,
    drop: Option<Vec<f64>>,
    /// Softmax probabilities (masked entries are zero).
    probs: Vec<f64>,
    target: usize,
}

struct EncCache {
    words: Vec<usize>,
    /// Per layer: forward-direction and backward-direction caches, indexed by
    /// position.
    layers: Vec<(Vec<GruCache>, Vec<GruCache>)>,
}

/// Loss terms of one example.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Weighted sum of parser negative log-likelihoods.
    pub parser: f64,
    /// Generator negative log-likelihood (unweighted).
    pub generator: f64,
}

/// One encoder, two decoders.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Model, ModelError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::InvalidConfig("empty lexicon".into()));
        }
        let (layout, b) = build_layout(&config, vocab_size);
        let params = b
            .shapes
            .iter()
            .map(|&(r, c, s)| {
                if s == 0.0 {
                    Tensor::zeros(r, c)
                } else {
                    Tensor::uniform(r, c, s, rng)
                }
            })
            .collect();
        let model = Model {
            config,
            vocab_size,
            names: b.names,
            params,
            layout,
        };
        log::info!(
            "model with {} parameters in {} blocks",
            model.num_params(),
            model.params.len()
        );
        Ok(model)
    }

    /// Rebuild from named blocks; every block must be present with the right
    /// shape.
    pub fn from_blocks(
        config: ModelConfig,
        vocab_size: usize,
        blocks: Vec<(String, Tensor)>,
    ) -> Result<Model, ModelError> {
        config.validate()?;
        let (layout, b) = build_layout(&config, vocab_size);
        let mut by_name: std::collections::HashMap<String, Tensor> = blocks.into_iter().collect();
        let mut params = Vec::with_capacity(b.names.len());
        for (name, &(r, c, _)) in b.names.iter().zip(&b.shapes) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing block `{name}`")))?;
            if t.rows != r || t.cols != c || t.data.len() != r * c {
                return Err(ModelError::Checkpoint(format!("block `{name}` has the wrong shape")));
            }
            params.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected block `{extra}`")));
        }
        Ok(Model {
            config,
            vocab_size,
            names: b.names,
            params,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn block_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            blocks: self.params.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    fn dec(&self, head: Head) -> &DecIdx {
        match head {
            Head::Parser => &self.layout.parser,
            Head::Generator => &self.layout.generator,
        }
    }

    /// Whether a block belongs to the parser decoder.
    pub fn is_parser_block(&self, i: usize) -> bool {
        self.names[i].starts_with("parser.")
    }

    pub fn is_generator_block(&self, i: usize) -> bool {
        self.names[i].starts_with("generator.")
    }

    fn encode_inner(&self, words: &[usize], keep: bool) -> Result<(Encoding, Option<EncCache>), ModelError> {
        if words.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let p = &self.params;
        let hs = self.config.hidden;
        let n = words.len();
        let mut inputs: Vec<Vec<f64>> = words
            .iter()
            .map(|&w| p[self.layout.word_emb].row(w.min(self.vocab_size - 1)).to_vec())
            .collect();
        let mut caches = Vec::new();
        for l in 0..self.config.layers {
            let mut fwd: Vec<GruCache> = Vec::with_capacity(n);
            let mut h = vec![0.0; hs];
            for x in &inputs {
                let c = gru::forward(p, self.layout.enc_fwd[l], x, &h);
                h.clone_from(&c.h);
                fwd.push(c);
            }
            let mut bwd: Vec<Option<GruCache>> = vec![None; n];
            let mut h = vec![0.0; hs];
            for t in (0..n).rev() {
                let c = gru::forward(p, self.layout.enc_bwd[l], &inputs[t], &h);
                h.clone_from(&c.h);
                bwd[t] = Some(c);
            }
            let bwd: Vec<GruCache> = bwd.into_iter().map(|c| c.expect("filled")).collect();
            inputs = (0..n)
                .map(|t| {
                    let mut v = fwd[t].h.clone();
                    v.extend_from_slice(&bwd[t].h);
                    v
                })
                .collect();
            if keep {
                caches.push((fwd, bwd));
            }
        }
        let h = inputs;
        let mut mean = vec![0.0; 2 * hs];
        for v in &h {
            axpy(1.0 / n as f64, v, &mut mean);
        }
        let parser = self.dec_ctx(Head::Parser, &h, &mean);
        let generator = self.dec_ctx(Head::Generator, &h, &mean);
        let enc = Encoding {
            h,
            mean,
            parser,
            generator,
        };
        let cache = keep.then(|| EncCache {
            words: words.to_vec(),
            layers: caches,
        });
        Ok((enc, cache))
    }

    fn dec_ctx(&self, head: Head, h: &[Vec<f64>], mean: &[f64]) -> DecCtx {
        let d = self.dec(head);
        let p = &self.params;
        let keys = h
            .iter()
            .map(|hj| {
                let mut k = vec![0.0; self.config.hidden];
                p[d.key].matvec_add(hj, &mut k);
                k
            })
            .collect();
        let init = (0..self.config.layers)
            .map(|l| {
                let mut s = p[d.init_b[l]].data.clone();
                p[d.init_w[l]].matvec_add(mean, &mut s);
                s.iter_mut().for_each(|x| *x = x.tanh());
                s
            })
            .collect();
        DecCtx { keys, init }
    }

    /// Encode lexicon ids; out-of-range ids are read as unknown words.
    pub fn encode(&self, words: &[usize]) -> Result<Encoding, ModelError> {
        let words: Vec<usize> = words.iter().map(|&w| if w < self.vocab_size { w } else { 0 }).collect();
        Ok(self.encode_inner(&words, false)?.0)
    }

    /// Recurrent update, attention and output features for one step.
    fn step_forward(
        &self,
        head: Head,
        enc: &Encoding,
        hidden: &[Vec<f64>],
        prev: usize,
    ) -> (Vec<GruCache>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dec(head);
        let ctx = enc.ctx(head);
        let p = &self.params;
        let emb = p[d.emb].row(prev);
        let mut cells = Vec::with_capacity(hidden.len());
        let mut x = emb.to_vec();
        for (l, h) in hidden.iter().enumerate() {
            let c = gru::forward(p, d.cells[l], &x, h);
            x.clone_from(&c.h);
            cells.push(c);
        }
        let s = &x;
        let scores: Vec<f64> = ctx.keys.iter().map(|k| dot(s, k)).collect();
        let alpha: Vec<f64> = masked_log_softmax(&scores, None).iter().map(|v| v.exp()).collect();
        let mut c = vec![0.0; 2 * self.config.hidden];
        for (a, hj) in alpha.iter().zip(&enc.h) {
            axpy(*a, hj, &mut c);
        }
        let mut f = emb.to_vec();
        f.extend_from_slice(&c);
        f.extend_from_slice(s);
        (cells, alpha, c, f)
    }

    fn logits(&self, head: Head, f: &[f64]) -> Vec<f64> {
        let d = self.dec(head);
        let mut out = self.params[d.out_b].data.clone();
        self.params[d.out_w].matvec_add(f, &mut out);
        out
    }

    pub fn parser_start(&self, enc: &Encoding, max_len: usize) -> DecoderState {
        DecoderState {
            hidden: enc.parser.init.clone(),
            context: Vec::new(),
            prefix: Vec::new(),
            depth: 0,
            max_len,
        }
    }

    /// Masked log-probabilities of the next token and the hidden state the
    /// step produced (to be stored by `advance`).
    pub fn parser_step(&self, enc: &Encoding, state: &DecoderState) -> ([f64; NUM_TOKENS], Vec<Vec<f64>>, Vec<f64>) {
        let (cells, _, c, f) = self.step_forward(Head::Parser, enc, &state.hidden, state.prev_index());
        let logits = self.logits(Head::Parser, &f);
        let mask = state.mask();
        let lp = masked_log_softmax(&logits, Some(&mask));
        let mut out = [f64::NEG_INFINITY; NUM_TOKENS];
        out.copy_from_slice(&lp);
        (out, cells.into_iter().map(|c| c.h).collect(), c)
    }

    /// Append `token` to the state given the step output from `parser_step`.
    pub fn advance(state: &DecoderState, token: Token, hidden: Vec<Vec<f64>>, context: Vec<f64>) -> DecoderState {
        let mut prefix = state.prefix.clone();
        prefix.push(token);
        let depth = match token.arity() {
            Some(a) => state.depth + 1 - a,
            None => state.depth,
        };
        DecoderState {
            hidden,
            context,
            prefix,
            depth,
            max_len: state.max_len,
        }
    }

    /// Distribution over the next formula token with invalid tokens at zero.
    pub fn decode_distribution(&self, enc: &Encoding, state: &DecoderState) -> [f64; NUM_TOKENS] {
        let (lp, _, _) = self.parser_step(enc, state);
        lp.map(f64::exp)
    }

    /// Log-probability of the complete formula `tokens` followed by EOS.
    pub fn sequence_log_prob(&self, enc: &Encoding, tokens: &[Token], max_len: usize) -> f64 {
        let mut state = self.parser_start(enc, max_len.max(tokens.len()));
        let mut total = 0.0;
        for &t in tokens.iter().chain(std::iter::once(&Token::Eos)) {
            let (lp, hidden, c) = self.parser_step(enc, &state);
            total += lp[t.index()];
            if t == Token::Eos {
                break;
            }
            state = Model::advance(&state, t, hidden, c);
        }
        total
    }

    /// Reconstruction negative log-likelihood of the sentence under the
    /// generator, teacher-forced, with dropout off.
    pub fn reconstruction_loss(&self, words: &[usize]) -> Result<f64, ModelError> {
        let enc = self.encode(words)?;
        Ok(self.generator_nll(&enc, words))
    }

    fn generator_nll(&self, enc: &Encoding, words: &[usize]) -> f64 {
        let d = self.dec(Head::Generator);
        let mut hidden = enc.generator.init.clone();
        let mut prev = d.bos;
        let mut total = 0.0;
        for &w in words {
            let w = if w < self.vocab_size { w } else { 0 };
            let (cells, _, _, f) = self.step_forward(Head::Generator, enc, &hidden, prev);
            let lp = masked_log_softmax(&self.logits(Head::Generator, &f), None);
            total -= lp[w];
            hidden = cells.into_iter().map(|c| c.h).collect();
            prev = w;
        }
        total
    }

    /// Parser negative log-likelihood of `tokens` (+ EOS), dropout off.
    pub fn mle_loss(&self, words: &[usize], tokens: &[Token], max_len: usize) -> Result<f64, ModelError> {
        let enc = self.encode(words)?;
        Ok(-self.sequence_log_prob(&enc, tokens, max_len))
    }

    /// Full training loss of one example with dropout off:
    /// `Σ w·NLL(parser target) + gen_weight·NLL(x)`.
    pub fn example_loss(
        &self,
        words: &[usize],
        targets: &[(Vec<Token>, f64)],
        max_len: usize,
        gen_weight: f64,
    ) -> Result<f64, ModelError> {
        let enc = self.encode(words)?;
        let mut total = 0.0;
        for (t, w) in targets {
            total -= w * self.sequence_log_prob(&enc, t, max_len);
        }
        if gen_weight != 0.0 {
            total += gen_weight * self.generator_nll(&enc, words);
        }
        Ok(total)
    }

    /// Accumulate into `g` the gradient of
    /// `Σ w·NLL(parser target) + gen_weight·NLL(x)` for one sentence. Dropout
    /// is applied when `rng` is given.
    pub fn accumulate_example(
        &self,
        words: &[usize],
        targets: &[(Vec<Token>, f64)],
        max_len: usize,
        gen_weight: f64,
        mut rng: Option<&mut dyn RngCore>,
        g: &mut Grads,
    ) -> Result<LossParts, ModelError> {
        let words: Vec<usize> = words.iter().map(|&w| if w < self.vocab_size { w } else { 0 }).collect();
        let (enc, cache) = self.encode_inner(&words, true)?;
        let cache = cache.expect("cache requested");
        let mut dh = vec![vec![0.0; 2 * self.config.hidden]; words.len()];
        let mut parts = LossParts::default();
        for (tokens, w) in targets {
            if *w == 0.0 {
                continue;
            }
            let budget = max_len.max(tokens.len());
            let mut inputs = vec![BOS_INDEX];
            inputs.extend(tokens.iter().map(|t| t.index()));
            let mut tgt: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
            tgt.push(Token::Eos.index());
            let mut masks = Vec::with_capacity(tgt.len());
            let mut depth = 0usize;
            for (i, t) in tokens.iter().chain(std::iter::once(&Token::Eos)).enumerate() {
                let m = continuation_mask(depth, budget - i.min(budget));
                if !m[t.index()] {
                    return Err(ModelError::InvalidTarget);
                }
                masks.push(m.to_vec());
                if let Some(a) = t.arity() {
                    depth = depth + 1 - a;
                }
            }
            let nll = self.sequence_grad(
                Head::Parser,
                &enc,
                &inputs,
                &tgt,
                Some(&masks),
                *w,
                &mut rng,
                g,
                &mut dh,
            );
            parts.parser += w * nll;
        }
        if gen_weight != 0.0 {
            let d = self.dec(Head::Generator);
            let mut inputs = vec![d.bos];
            inputs.extend_from_slice(&words[..words.len() - 1]);
            parts.generator = self.sequence_grad(
                Head::Generator,
                &enc,
                &inputs,
                &words,
                None,
                gen_weight,
                &mut rng,
                g,
                &mut dh,
            );
        }
        self.encoder_backward(&cache, &dh, g);
        Ok(parts)
    }

    /// Teacher-forced forward and backward pass of one decoder over one
    /// sequence; returns the unweighted negative log-likelihood and adds the
    /// encoder-feature gradient to `dh`.
    #[allow(clippy::too_many_arguments)]
    fn sequence_grad(
        &self,
        head: Head,
        enc: &Encoding,
        inputs: &[usize],
        targets: &[usize],
        masks: Option<&[Vec<bool>]>,
        weight: f64,
        rng: &mut Option<&mut dyn RngCore>,
        g: &mut Grads,
        dh: &mut [Vec<f64>],
    ) -> f64 {
        let d = self.dec(head).clone();
        let ctx = enc.ctx(head);
        let p = &self.params;
        let hs = self.config.hidden;
        let layers = self.config.layers;
        let rate = self.config.dropout;

        let mut steps: Vec<StepCache> = Vec::with_capacity(targets.len());
        let mut hidden = ctx.init.clone();
        let mut nll = 0.0;
        for (i, (&prev, &target)) in inputs.iter().zip(targets).enumerate() {
            let (cells, alpha, _, mut f) = self.step_forward(head, enc, &hidden, prev);
            let drop = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..f.len())
                        .map(|_| if r.gen::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    f.iter_mut().zip(&m).for_each(|(x, k)| *x *= k);
                    Some(m)
                }
                _ => None,
            };
            let logits = self.logits(head, &f);
            let lp = masked_log_softmax(&logits, masks.map(|m| m[i].as_slice()));
            nll -= lp[target];
            hidden = cells.iter().map(|c| c.h.clone()).collect();
            steps.push(StepCache {
                prev,
                cells,
                alpha,
                f,
                drop,
                probs: lp.iter().map(|v| v.exp()).collect(),
                target,
            });
        }

        let emb_dim = p[d.emb].cols;
        let mut dkeys = vec![vec![0.0; hs]; enc.len()];
        let mut dnext = vec![vec![0.0; hs]; layers];
        for st in steps.iter().rev() {
            let mut dlogits = st.probs.clone();
            dlogits[st.target] -= 1.0;
            dlogits.iter_mut().for_each(|x| *x *= weight);
            g.blocks[d.out_w].outer_add(&dlogits, &st.f);
            axpy(1.0, &dlogits, &mut g.blocks[d.out_b].data);
            let mut df = vec![0.0; st.f.len()];
            p[d.out_w].matvec_t_add(&dlogits, &mut df);
            if let Some(m) = &st.drop {
                df.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
            }
            let (d_emb, rest) = df.split_at(emb_dim);
            let (d_c, d_s_out) = rest.split_at(2 * hs);
            axpy(1.0, d_emb, g.blocks[d.emb].row_mut(st.prev));

            // attention
            let s = &st.cells[layers - 1].h;
            let mut ds_top = d_s_out.to_vec();
            let dalpha: Vec<f64> = enc.h.iter().map(|hj| dot(d_c, hj)).collect();
            let avg: f64 = st.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
            for j in 0..enc.len() {
                axpy(st.alpha[j], d_c, &mut dh[j]);
                let de = st.alpha[j] * (dalpha[j] - avg);
                axpy(de, &ctx.keys[j], &mut ds_top);
                axpy(de, s, &mut dkeys[j]);
            }

            // recurrent layers, top down
            let mut dx_above = ds_top;
            for l in (0..layers).rev() {
                let mut dhl = std::mem::take(&mut dnext[l]);
                axpy(1.0, &dx_above, &mut dhl);
                let (dx, dprev) = gru::backward(p, &mut g.blocks, d.cells[l], &st.cells[l], &dhl);
                dnext[l] = dprev;
                dx_above = dx;
            }
            axpy(1.0, &dx_above, g.blocks[d.emb].row_mut(st.prev));
        }

        // attention keys
        for (j, dk) in dkeys.iter().enumerate() {
            g.blocks[d.key].outer_add(dk, &enc.h[j]);
            p[d.key].matvec_t_add(dk, &mut dh[j]);
        }
        // initial states from the mean feature
        let n = enc.len() as f64;
        let mut dmean = vec![0.0; 2 * hs];
        for l in 0..layers {
            let da: Vec<f64> = dnext[l]
                .iter()
                .zip(&ctx.init[l])
                .map(|(dv, s)| dv * (1.0 - s * s))
                .collect();
            g.blocks[d.init_w[l]].outer_add(&da, &enc.mean);
            axpy(1.0, &da, &mut g.blocks[d.init_b[l]].data);
            p[d.init_w[l]].matvec_t_add(&da, &mut dmean);
        }
        for dj in dh.iter_mut() {
            axpy(1.0 / n, &dmean, dj);
        }
        nll
    }

    fn encoder_backward(&self, cache: &EncCache, dh: &[Vec<f64>], g: &mut Grads) {
        let p = &self.params;
        let hs = self.config.hidden;
        let n = dh.len();
        let mut dout: Vec<Vec<f64>> = dh.to_vec();
        for l in (0..self.config.layers).rev() {
            let (fwd, bwd) = &cache.layers[l];
            let in_dim = fwd[0].x.len();
            let mut din = vec![vec![0.0; in_dim]; n];
            let mut dnext = vec![0.0; hs];
            for t in (0..n).rev() {
                let mut gh = dout[t][..hs].to_vec();
                axpy(1.0, &dnext, &mut gh);
                let (dx, dp) = gru::backward(p, &mut g.blocks, self.layout.enc_fwd[l], &fwd[t], &gh);
                axpy(1.0, &dx, &mut din[t]);
                dnext = dp;
            }
            let mut dnext = vec![0.0; hs];
            for t in 0..n {
                let mut gh = dout[t][hs..].to_vec();
                axpy(1.0, &dnext, &mut gh);
                let (dx, dp) = gru::backward(p, &mut g.blocks, self.layout.enc_bwd[l], &bwd[t], &gh);
                axpy(1.0, &dx, &mut din[t]);
                dnext = dp;
            }
            dout = din;
        }
        for (t, &w) in cache.words.iter().enumerate() {
            axpy(1.0, &dout[t], g.blocks[self.layout.word_emb].row_mut(w));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{Formula, Predicate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(layers: usize) -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            token_dim: 4,
            hidden: 4,
            layers,
            dropout: 0.2,
            lr: 1e-3,
        }
    }

    fn model(cfg: ModelConfig, vocab: usize, seed: u64) -> Model {
        // larger init than the default so every block gets a sizeable gradient
        let mut m = Model::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for t in m.params_mut() {
            for x in &mut t.data {
                *x = rng.gen_range(-0.8..0.8);
            }
        }
        m
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let m = model(tiny(1), 8, 0);
        let enc = m.encode(&[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(enc.len(), 6);
        assert!(enc.h.iter().all(|v| v.len() == 8));
        assert_eq!(m.encode(&[1, 2, 3, 4, 5, 6]).unwrap().h, enc.h);
        assert!(matches!(m.encode(&[]), Err(ModelError::EmptySentence)));
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let m = model(tiny(2), 8, 1);
        let a = m.encode(&[1, 2, 3]).unwrap();
        let b = m.encode(&[2, 1, 3]).unwrap();
        assert_ne!(a.h, b.h);
    }

    #[test]
    fn first_step_only_atoms() {
        let m = model(tiny(1), 8, 2);
        let enc = m.encode(&[1, 2]).unwrap();
        let st = m.parser_start(&enc, 5);
        let p = m.decode_distribution(&enc, &st);
        for t in Token::ALL {
            if t.arity() != Some(0) {
                assert_eq!(p[t.index()], 0.0, "{t}");
            }
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sequence_log_prob_matches_loss() {
        let m = model(tiny(1), 8, 3);
        let f = Formula::eventually(Formula::atom(Predicate::Tree));
        let toks = f.to_tokens();
        let enc = m.encode(&[3, 4]).unwrap();
        let lp = m.sequence_log_prob(&enc, &toks, 5);
        assert!(lp < 0.0);
        assert!((m.mle_loss(&[3, 4], &toks, 5).unwrap() + lp).abs() < 1e-12);
        let mut g = m.zero_grads();
        let parts = m
            .accumulate_example(&[3, 4], &[(toks, 1.0)], 5, 0.0, None, &mut g)
            .unwrap();
        assert!((parts.parser + lp).abs() < 1e-12);
    }

    #[test]
    fn uniform_generator_closed_form() {
        let mut m = model(tiny(1), 6, 4);
        let out_w = m.layout.generator.out_w;
        let out_b = m.layout.generator.out_b;
        m.params_mut()[out_w].fill(0.0);
        m.params_mut()[out_b].fill(0.0);
        let words = [1, 2, 3, 4, 5];
        let loss = m.reconstruction_loss(&words).unwrap();
        assert!((loss - 5.0 * (6f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn certain_generator_has_zero_loss() {
        let mut m = model(tiny(1), 3, 5);
        let out_w = m.layout.generator.out_w;
        let out_b = m.layout.generator.out_b;
        m.params_mut()[out_w].fill(0.0);
        m.params_mut()[out_b].data = vec![-1e6, 1e6, -1e6];
        assert_eq!(m.reconstruction_loss(&[1]).unwrap(), 0.0);
    }

    #[test]
    fn invalid_target_rejected() {
        let m = model(tiny(1), 4, 6);
        let bad = vec![Token::And];
        let mut g = m.zero_grads();
        assert!(matches!(
            m.accumulate_example(&[1], &[(bad, 1.0)], 5, 0.0, None, &mut g),
            Err(ModelError::InvalidTarget)
        ));
    }

    #[test]
    fn block_names_are_unique() {
        let m = model(tiny(2), 4, 7);
        let mut names = m.block_names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.block_names().len());
        assert!(m.num_params() > 0);
    }
}
