use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{block_mask, positions, segment_matrix, Ctx};
use super::tape::{Matrix, Tape, Var};
use super::vocab::{Vocabs, BOS_ID, EOS_ID, PAD_ID};
use crate::dataset::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Recurrent,
    SelfAttention,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Recurrent => "recurrent",
            Arch::SelfAttention => "self_attention",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" | "lstm" => Ok(Arch::Recurrent),
            "self_attention" | "transformer" => Ok(Arch::SelfAttention),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Layers in each of encoder and decoder.
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Inner width of the transformer feed-forward blocks.
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::SelfAttention,
            layers: 2,
            hidden_dim: 128,
            embed_dim: 128,
            heads: 4,
            ff_dim: 256,
            dropout: 0.1,
            max_decode_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn desk_lstm() -> Self {
        ModelConfig {
            arch: Arch::Recurrent,
            ..Self::default()
        }
    }

    /// Full-size transformer for long runs.
    pub fn large_transformer() -> Self {
        ModelConfig {
            arch: Arch::SelfAttention,
            layers: 3,
            hidden_dim: 256,
            embed_dim: 256,
            heads: 4,
            ff_dim: 512,
            dropout: 0.1,
            max_decode_len: 64,
        }
    }

    /// Full-size LSTM for long runs.
    pub fn large_lstm() -> Self {
        ModelConfig {
            arch: Arch::Recurrent,
            layers: 2,
            hidden_dim: 512,
            embed_dim: 512,
            heads: 1,
            ff_dim: 512,
            dropout: 0.4,
            max_decode_len: 64,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "desk_transformer" => Ok(Self::default()),
            "desk_lstm" => Ok(Self::desk_lstm()),
            "large_transformer" => Ok(Self::large_transformer()),
            "large_lstm" => Ok(Self::large_lstm()),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_decode_len == 0 {
            return bad("max_decode_len must be positive");
        }
        if self.arch == Arch::SelfAttention && (self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads)) {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl Params {
    fn new() -> Self {
        Params {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_parts(names: Vec<String>, values: Vec<Matrix>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::Checkpoint("parameter name/value count mismatch".into()));
        }
        let mut p = Params::new();
        for (n, v) in names.into_iter().zip(values) {
            if p.index.contains_key(&n) {
                return Err(Error::Checkpoint(format!("duplicate parameter {n}")));
            }
            p.add(n, v);
        }
        Ok(p)
    }

    fn add(&mut self, name: String, value: Matrix) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn index(&self) -> &HashMap<String, usize> {
        &self.index
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct Init {
    rng: ChaCha8Rng,
    params: Params,
}

impl Init {
    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        let bound = 1.0 / (rows as f64).sqrt();
        let rng = &mut self.rng;
        let m = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound));
        self.params.add(name, m);
    }

    fn linear(&mut self, name: &str, rows: usize, cols: usize) {
        self.weight(format!("{name}.w"), rows, cols);
        self.params.add(format!("{name}.b"), Array2::zeros((1, cols)));
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) {
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let rng = &mut self.rng;
        let m = Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng));
        self.params.add(name.to_string(), m);
    }

    fn layer_norm(&mut self, name: &str, dim: usize) {
        self.params.add(format!("{name}.g"), Array2::ones((1, dim)));
        self.params.add(format!("{name}.b"), Array2::zeros((1, dim)));
    }

    fn attention(&mut self, name: &str, dim: usize) {
        for part in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{part}"), dim, dim);
        }
    }
}

/// Token ids of a batch of examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Teacher-forced scores of a batch. `per_token` stacks the log-probability
/// of every gold token (EOS included), example after example; `totals` holds
/// the per-example sums.
#[derive(Debug, Clone)]
pub struct Scored<'t> {
    pub per_token: Var<'t>,
    pub totals: Var<'t>,
    pub lengths: Vec<usize>,
}

impl<'t> Scored<'t> {
    /// Scores from stacked per-token log-probabilities (`N x 1`) and the
    /// length of each example's segment.
    pub fn from_per_token(per_token: Var<'t>, lengths: Vec<usize>) -> Self {
        assert_eq!(per_token.shape(), (lengths.iter().sum(), 1), "segment lengths do not cover the tokens");
        let seg = per_token.tape().constant(segment_matrix(&lengths, |_| 1.0));
        Scored {
            per_token,
            totals: seg.matmul(per_token),
            lengths,
        }
    }
}

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    /// No EOS was produced within the length limit.
    pub overflow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocabs: Vocabs,
    pub params: Params,
    pub seed: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig, vocabs: Vocabs, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Params::new(),
        };
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let (vs, vt) = (vocabs.source.len(), vocabs.target.len());
        init.embedding("src.embed", vs, e);
        init.embedding("tgt.embed", vt, e);
        match config.arch {
            Arch::SelfAttention => {
                if e != h {
                    init.weight("src.proj".into(), e, h);
                    init.weight("tgt.proj".into(), e, h);
                }
                for l in 0..config.layers {
                    let p = format!("enc.{l}");
                    init.layer_norm(&format!("{p}.ln1"), h);
                    init.attention(&format!("{p}.attn"), h);
                    init.layer_norm(&format!("{p}.ln2"), h);
                    init.linear(&format!("{p}.ff1"), h, config.ff_dim);
                    init.linear(&format!("{p}.ff2"), config.ff_dim, h);
                }
                init.layer_norm("enc.ln", h);
                for l in 0..config.layers {
                    let p = format!("dec.{l}");
                    init.layer_norm(&format!("{p}.ln1"), h);
                    init.attention(&format!("{p}.self"), h);
                    init.layer_norm(&format!("{p}.ln2"), h);
                    init.attention(&format!("{p}.cross"), h);
                    init.layer_norm(&format!("{p}.ln3"), h);
                    init.linear(&format!("{p}.ff1"), h, config.ff_dim);
                    init.linear(&format!("{p}.ff2"), config.ff_dim, h);
                }
                init.layer_norm("dec.ln", h);
            }
            Arch::Recurrent => {
                for l in 0..config.layers {
                    let input = if l == 0 { e } else { h };
                    init.linear(&format!("enc.{l}.lstm"), input + h, 4 * h);
                    init.linear(&format!("dec.{l}.lstm"), input + h, 4 * h);
                }
                init.weight("dec.attn.w".into(), h, h);
                init.linear("dec.combine", 2 * h, h);
            }
        }
        init.linear("out", h, vt);
        Ok(ModelState {
            config,
            vocabs,
            params: init.params,
            seed,
        })
    }

    /// Every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.values().iter().map(|v| tape.leaf(v.clone())).collect()
    }

    pub fn encode_example(&self, e: &Example) -> Result<(Vec<usize>, Vec<usize>)> {
        Ok((self.vocabs.source.encode(&e.source)?, self.vocabs.target.encode(&e.target)?))
    }

    pub fn encode_batch<'e>(&self, examples: impl IntoIterator<Item = &'e Example>) -> Result<EncodedBatch> {
        let mut batch = EncodedBatch {
            sources: Vec::new(),
            targets: Vec::new(),
        };
        for e in examples {
            let (s, t) = self.encode_example(e)?;
            batch.sources.push(s);
            batch.targets.push(t);
        }
        Ok(batch)
    }

    fn ctx<'a, 't>(&'a self, tape: &'t Tape, vars: &'a [Var<'t>], rng: Option<&'a mut dyn RngCore>) -> Ctx<'a, 't> {
        assert_eq!(vars.len(), self.params.len(), "parameter count mismatch");
        Ctx::new(tape, vars, self.params.index(), rng, self.config.dropout)
    }

    /// Teacher-forced log-probabilities of each target (followed by EOS)
    /// given its source, computed with parameters `vars`. Dropout is active
    /// only when `rng` is supplied.
    pub fn score<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Var<'t>],
        batch: &EncodedBatch,
        rng: Option<&mut dyn RngCore>,
    ) -> Scored<'t> {
        assert!(!batch.is_empty(), "empty batch");
        let rng = rng.map(|r| -> &mut dyn RngCore { r });
        let mut ctx = self.ctx(tape, vars, rng);
        let gold: Vec<usize> = batch
            .targets
            .iter()
            .flat_map(|t| t.iter().copied().chain([EOS_ID]))
            .collect();
        let lengths: Vec<usize> = batch.targets.iter().map(|t| t.len() + 1).collect();
        let logits = match self.config.arch {
            Arch::SelfAttention => {
                let memory = self.tf_encode(&mut ctx, &batch.sources);
                let inputs: Vec<Vec<usize>> = batch
                    .targets
                    .iter()
                    .map(|t| std::iter::once(BOS_ID).chain(t.iter().copied()).collect())
                    .collect();
                let src_lens: Vec<usize> = batch.sources.iter().map(Vec::len).collect();
                self.tf_decode(&mut ctx, memory, &src_lens, &inputs)
            }
            Arch::Recurrent => self.rnn_teacher_forced(&mut ctx, batch),
        };
        Scored::from_per_token(logits.log_softmax_rows().pick_cols(&gold), lengths)
    }

    /// Total and per-token probabilities of `y` (followed by EOS) given `x`,
    /// in evaluation mode.
    pub fn sequence_logprob<S: AsRef<str>>(&self, x: &[S], y: &[S]) -> Result<(f64, Vec<f64>)> {
        let batch = EncodedBatch {
            sources: vec![self.vocabs.source.encode(x)?],
            targets: vec![self.vocabs.target.encode(y)?],
        };
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let s = self.score(&tape, &vars, &batch, None);
        let per_token = s.per_token.value().iter().map(|lp| lp.exp()).collect();
        Ok((s.totals.item(), per_token))
    }

    pub fn greedy_decode<S: AsRef<str>>(&self, x: &[S], max_len: usize) -> Result<Decoded> {
        let src = vec![self.vocabs.source.encode(x)?];
        Ok(self.greedy_decode_ids(&src, max_len).remove(0))
    }

    /// Greedy decoding of several inputs at once.
    pub fn greedy_decode_batch<S: AsRef<str>>(&self, xs: &[Vec<S>], max_len: usize) -> Result<Vec<Decoded>> {
        const CHUNK: usize = 64;
        let ids: Vec<Vec<usize>> = xs
            .iter()
            .map(|x| self.vocabs.source.encode(x))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in ids.chunks(CHUNK) {
            out.extend(self.greedy_decode_ids(chunk, max_len));
        }
        Ok(out)
    }

    fn greedy_decode_ids(&self, sources: &[Vec<usize>], max_len: usize) -> Vec<Decoded> {
        let n = sources.len();
        let mut generated: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        let pick = |logits: &Matrix, generated: &mut [Vec<usize>], done: &mut [bool]| {
            for (i, row) in logits.rows().into_iter().enumerate() {
                if done[i] {
                    continue;
                }
                let best = argmax(row.iter().copied());
                if best == EOS_ID {
                    done[i] = true;
                } else {
                    generated[i].push(best);
                }
            }
        };
        match self.config.arch {
            Arch::SelfAttention => {
                let memory = {
                    let tape = Tape::new();
                    let vars = self.bind(&tape);
                    let mut ctx = self.ctx(&tape, &vars, None);
                    self.tf_encode(&mut ctx, sources).value()
                };
                let src_lens: Vec<usize> = sources.iter().map(Vec::len).collect();
                for _ in 0..max_len {
                    if done.iter().all(|&d| d) {
                        break;
                    }
                    let tape = Tape::new();
                    let vars = self.bind(&tape);
                    let mut ctx = self.ctx(&tape, &vars, None);
                    let mem = tape.constant((*memory).clone());
                    let inputs: Vec<Vec<usize>> = generated
                        .iter()
                        .map(|g| std::iter::once(BOS_ID).chain(g.iter().copied()).collect())
                        .collect();
                    let logits = self.tf_decode(&mut ctx, mem, &src_lens, &inputs);
                    let last: Vec<usize> = inputs
                        .iter()
                        .scan(0, |off, i| {
                            *off += i.len();
                            Some(*off - 1)
                        })
                        .collect();
                    let last_logits = logits.gather_rows(&last).value();
                    pick(&last_logits, &mut generated, &mut done);
                }
            }
            Arch::Recurrent => {
                let tape = Tape::new();
                let vars = self.bind(&tape);
                let mut ctx = self.ctx(&tape, &vars, None);
                let (memory, mut state) = self.rnn_encode(&mut ctx, sources);
                let src_lens: Vec<usize> = sources.iter().map(Vec::len).collect();
                let mask = tape.constant(block_mask(&vec![1; n], &src_lens, false));
                for _ in 0..max_len {
                    if done.iter().all(|&d| d) {
                        break;
                    }
                    let prev: Vec<usize> = generated.iter().map(|g| g.last().copied().unwrap_or(BOS_ID)).collect();
                    let (logits, next) = self.rnn_decoder_step(&mut ctx, &prev, state, memory, mask);
                    state = next;
                    pick(&logits.value(), &mut generated, &mut done);
                }
            }
        }
        generated
            .into_iter()
            .zip(done)
            .map(|(g, d)| Decoded {
                tokens: self.vocabs.target.decode(&g),
                overflow: !d,
            })
            .collect()
    }

    // Transformer.

    fn tf_encode<'t>(&self, ctx: &mut Ctx<'_, 't>, sources: &[Vec<usize>]) -> Var<'t> {
        let heads = self.config.heads;
        let lens: Vec<usize> = sources.iter().map(Vec::len).collect();
        let mut x = self.tf_input(ctx, "src", sources);
        let mask = ctx.tape.constant(block_mask(&lens, &lens, false));
        for l in 0..self.config.layers {
            let p = format!("enc.{l}");
            let h = ctx.layer_norm(&format!("{p}.ln1"), x);
            let a = ctx.attention(&format!("{p}.attn"), heads, h, h, mask);
            x = x + ctx.dropout(a);
            let h = ctx.layer_norm(&format!("{p}.ln2"), x);
            let f = self.feed_forward(ctx, &p, h);
            x = x + f;
        }
        ctx.layer_norm("enc.ln", x)
    }

    fn tf_decode<'t>(
        &self,
        ctx: &mut Ctx<'_, 't>,
        memory: Var<'t>,
        src_lens: &[usize],
        inputs: &[Vec<usize>],
    ) -> Var<'t> {
        let heads = self.config.heads;
        let lens: Vec<usize> = inputs.iter().map(Vec::len).collect();
        let mut x = self.tf_input(ctx, "tgt", inputs);
        let self_mask = ctx.tape.constant(block_mask(&lens, &lens, true));
        let cross_mask = ctx.tape.constant(block_mask(&lens, src_lens, false));
        for l in 0..self.config.layers {
            let p = format!("dec.{l}");
            let h = ctx.layer_norm(&format!("{p}.ln1"), x);
            let a = ctx.attention(&format!("{p}.self"), heads, h, h, self_mask);
            x = x + ctx.dropout(a);
            let h = ctx.layer_norm(&format!("{p}.ln2"), x);
            let a = ctx.attention(&format!("{p}.cross"), heads, h, memory, cross_mask);
            x = x + ctx.dropout(a);
            let h = ctx.layer_norm(&format!("{p}.ln3"), x);
            let f = self.feed_forward(ctx, &p, h);
            x = x + f;
        }
        let h = ctx.layer_norm("dec.ln", x);
        ctx.linear("out", h)
    }

    fn tf_input<'t>(&self, ctx: &mut Ctx<'_, 't>, side: &str, seqs: &[Vec<usize>]) -> Var<'t> {
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let e = self.config.embed_dim;
        let mut x = ctx.p(&format!("{side}.embed")).gather_rows(&ids).scale((e as f64).sqrt());
        if e != self.config.hidden_dim {
            x = x.matmul(ctx.p(&format!("{side}.proj")));
        }
        let x = x + ctx.tape.constant(positions(&lens, self.config.hidden_dim));
        ctx.dropout(x)
    }

    fn feed_forward<'t>(&self, ctx: &mut Ctx<'_, 't>, prefix: &str, x: Var<'t>) -> Var<'t> {
        let h = ctx.linear(&format!("{prefix}.ff1"), x).relu();
        let h = ctx.dropout(h);
        let out = ctx.linear(&format!("{prefix}.ff2"), h);
        ctx.dropout(out)
    }

    // LSTM.

    fn rnn_teacher_forced<'t>(&self, ctx: &mut Ctx<'_, 't>, batch: &EncodedBatch) -> Var<'t> {
        let (memory, state) = self.rnn_encode(ctx, &batch.sources);
        let src_lens: Vec<usize> = batch.sources.iter().map(Vec::len).collect();
        let b = batch.len();
        let attn_mask = ctx.tape.constant(block_mask(&vec![1; b], &src_lens, false));
        let steps = batch.targets.iter().map(|t| t.len() + 1).max().unwrap_or(0);
        let mut state = state;
        let mut step_logits = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Vec<usize> = batch
                .targets
                .iter()
                .map(|y| match t {
                    0 => BOS_ID,
                    _ => y.get(t - 1).copied().unwrap_or(PAD_ID),
                })
                .collect();
            let (logits, next) = self.rnn_decoder_step(ctx, &prev, state, memory, attn_mask);
            state = next;
            step_logits.push(logits);
        }
        // Reorder (step, example) rows into example-major order.
        let mut order = Vec::new();
        for (i, y) in batch.targets.iter().enumerate() {
            for t in 0..=y.len() {
                order.push(t * b + i);
            }
        }
        Var::concat_rows(&step_logits).gather_rows(&order)
    }

    /// Encoder memory (example-major rows) and final per-layer `(h, c)`.
    fn rnn_encode<'t>(&self, ctx: &mut Ctx<'_, 't>, sources: &[Vec<usize>]) -> (Var<'t>, Vec<(Var<'t>, Var<'t>)>) {
        let b = sources.len();
        let h = self.config.hidden_dim;
        let steps = sources.iter().map(Vec::len).max().unwrap_or(0);
        let zero = ctx.tape.constant(Array2::zeros((b, h)));
        let mut state = vec![(zero, zero); self.config.layers];
        let mut tops = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = sources.iter().map(|s| s.get(t).copied().unwrap_or(PAD_ID)).collect();
            let live = Array2::from_shape_fn((b, 1), |(i, _)| if t < sources[i].len() { 1.0 } else { 0.0 });
            let live = ctx.tape.constant(live);
            let dead = live.affine(-1.0, 1.0);
            let mut x = ctx.p("src.embed").gather_rows(&ids);
            x = ctx.dropout(x);
            for (l, st) in state.iter_mut().enumerate() {
                let (hn, cn) = lstm_cell(ctx, &format!("enc.{l}.lstm"), x, *st);
                *st = (hn * live + st.0 * dead, cn * live + st.1 * dead);
                x = if l + 1 < self.config.layers { ctx.dropout(st.0) } else { st.0 };
            }
            tops.push(x);
        }
        let mut order = Vec::new();
        for (i, s) in sources.iter().enumerate() {
            for t in 0..s.len() {
                order.push(t * b + i);
            }
        }
        let memory = Var::concat_rows(&tops).gather_rows(&order);
        (memory, state)
    }

    fn rnn_decoder_step<'t>(
        &self,
        ctx: &mut Ctx<'_, 't>,
        prev: &[usize],
        mut state: Vec<(Var<'t>, Var<'t>)>,
        memory: Var<'t>,
        attn_mask: Var<'t>,
    ) -> (Var<'t>, Vec<(Var<'t>, Var<'t>)>) {
        let mut x = ctx.p("tgt.embed").gather_rows(prev);
        x = ctx.dropout(x);
        for (l, st) in state.iter_mut().enumerate() {
            *st = lstm_cell(ctx, &format!("dec.{l}.lstm"), x, *st);
            x = if l + 1 < self.config.layers { ctx.dropout(st.0) } else { st.0 };
        }
        let scores = x.matmul(ctx.p("dec.attn.w")).matmul(memory.t()) + attn_mask;
        let context = scores.softmax_rows().matmul(memory);
        let combined = ctx.linear("dec.combine", Var::concat_cols(&[x, context])).tanh();
        let combined = ctx.dropout(combined);
        (ctx.linear("out", combined), state)
    }
}

fn lstm_cell<'t>(ctx: &Ctx<'_, 't>, name: &str, x: Var<'t>, (h, c): (Var<'t>, Var<'t>)) -> (Var<'t>, Var<'t>) {
    let d = h.shape().1;
    let gates = ctx.linear(name, Var::concat_cols(&[x, h]));
    let i = gates.slice_cols(0, d).sigmoid();
    let f = gates.slice_cols(d, d).sigmoid();
    let g = gates.slice_cols(2 * d, d).tanh();
    let o = gates.slice_cols(3 * d, d).sigmoid();
    let c = f * c + i * g;
    (o * c.tanh(), c)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
