//! Training objectives (MLE, MET, MET-Meta, MAML-MLE) and the training loop
//! with dev-accuracy checkpoint selection.

pub mod losses;
pub mod meta;
pub mod optim;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};
use crate::eval::exact_match_accuracy;
use crate::nn::checkpoint::{self, CheckpointMeta};
use crate::nn::{gradients, EncodedBatch, Matrix, ModelConfig, ModelState, Tape, Vocabs};
use crate::perturb::{induce_word_classes, make_negative_filtered, ClassMode, KnownPairs, WordClasses};

pub use losses::{mle, ul, ul_sentence, ul_word_avg, ul_word_min, UlVariant, PROB_EPS};
pub use meta::{meta_gradient, mine_neighbor_indices, mine_neighbors_levenshtein, MetaGradient};
pub use optim::{noam_lr, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    /// Plain maximum likelihood.
    None,
    /// MLE plus unlikelihood on perturbed inputs, summed.
    Met,
    /// MLE, then unlikelihood after one inner MLE step.
    MetMeta,
    /// MLE, then MLE on Levenshtein neighbors after one inner step.
    MamlMle,
}

impl MetaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetaMode::None => "none",
            MetaMode::Met => "met",
            MetaMode::MetMeta => "met_meta",
            MetaMode::MamlMle => "maml_mle",
        }
    }
}

impl fmt::Display for MetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "mle" => Ok(MetaMode::None),
            "met" => Ok(MetaMode::Met),
            "met_meta" => Ok(MetaMode::MetMeta),
            "maml_mle" | "maml" => Ok(MetaMode::MamlMle),
            other => Err(Error::Config(format!("unknown meta mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Noam,
    Constant,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Noam => "noam",
            Schedule::Constant => "constant",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noam" => Ok(Schedule::Noam),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner (plain SGD) step size of the two-step objectives.
    pub alpha: f64,
    /// Outer step size; the peak rate under the Noam schedule.
    pub beta: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub ul_variant: UlVariant,
    pub ul_weight: f64,
    pub meta_mode: MetaMode,
    pub second_order: bool,
    pub eval_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    /// Neighbors mined per example for MAML-MLE.
    pub maml_neighbors: usize,
    /// Where to write the best checkpoint, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.01,
            beta: 1e-3,
            warmup_steps: 200,
            total_steps: 2000,
            batch_size: 32,
            ul_variant: UlVariant::Sentence,
            ul_weight: 1.0,
            meta_mode: MetaMode::None,
            second_order: false,
            eval_every: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Noam,
            maml_neighbors: 1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta > 0.0) || !(self.alpha >= 0.0) {
            return bad("step sizes must be positive (alpha may be 0)");
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1");
        }
        if self.total_steps > 0 && self.total_steps < self.warmup_steps {
            return bad("total_steps must be 0 or at least warmup_steps");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if !(self.ul_weight >= 0.0) {
            return bad("ul_weight must be non-negative");
        }
        Ok(())
    }

    /// Outer learning rate for 1-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Noam => noam_lr(step, self.beta, self.warmup_steps),
            Schedule::Constant => self.beta,
        }
    }
}

/// Loss components of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub mle: f64,
    pub ul: Option<f64>,
    pub meta: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_step: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainLog {
    /// Plain-text run log, one line per step and per evaluation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut evals = self.evals.iter().peekable();
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        for r in &self.steps {
            writeln!(
                s,
                "step={} lr={:.6e} mle={:.6} ul={} meta={} total={:.6}",
                r.step,
                r.lr,
                r.mle,
                opt(r.ul),
                opt(r.meta),
                r.total
            )
            .unwrap();
            while let Some(e) = evals.next_if(|e| e.step <= r.step) {
                writeln!(s, "eval step={} dev_accuracy={:.6}", e.step, e.dev_accuracy).unwrap();
            }
        }
        for e in evals {
            writeln!(s, "eval step={} dev_accuracy={:.6}", e.step, e.dev_accuracy).unwrap();
        }
        if let (Some(step), Some(acc)) = (self.best_step, self.best_dev_accuracy) {
            writeln!(s, "best step={step} dev_accuracy={acc:.6}").unwrap();
        }
        s
    }
}

/// A model together with its optimizer state and randomness.
pub struct Learner {
    pub model: ModelState,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    step: usize,
}

impl Learner {
    pub fn new(model: ModelState, cfg: &TrainConfig) -> Self {
        let optimizer = Optimizer::new(cfg.optimizer, &model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Learner {
            model,
            optimizer,
            rng,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn apply(&mut self, grads: Vec<Matrix>, cfg: &TrainConfig) -> Result<f64> {
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteLoss(f64::NAN));
        }
        self.step += 1;
        let lr = cfg.lr(self.step);
        self.optimizer.step(&mut self.model.params, &grads, lr);
        Ok(lr)
    }

    pub fn mle_step(&mut self, batch: &EncodedBatch, cfg: &TrainConfig) -> Result<StepRecord> {
        let tape = Tape::new();
        let vars = self.model.bind(&tape);
        let loss = mle(&self.model.score(&tape, &vars, batch, Some(&mut self.rng)));
        let value = loss.item();
        let grads = gradients(&tape, loss, &vars)?;
        let lr = self.apply(grads, cfg)?;
        Ok(StepRecord {
            step: self.step,
            lr,
            mle: value,
            ul: None,
            meta: None,
            total: value,
        })
    }

    /// One update on `L_MLE(batch) + ul_weight * L_UL(negatives)`.
    pub fn met_step(&mut self, batch: &EncodedBatch, negatives: &EncodedBatch, cfg: &TrainConfig) -> Result<StepRecord> {
        if negatives.is_empty() || cfg.ul_weight == 0.0 {
            if negatives.is_empty() {
                warn!("no eligible negatives in this batch; taking an MLE step");
            }
            return self.mle_step(batch, cfg);
        }
        let tape = Tape::new();
        let vars = self.model.bind(&tape);
        let l_mle = mle(&self.model.score(&tape, &vars, batch, Some(&mut self.rng)));
        let l_ul = ul(&self.model.score(&tape, &vars, negatives, Some(&mut self.rng)), cfg.ul_variant);
        let (m, u) = (l_mle.item(), l_ul.item());
        let total = l_mle + l_ul.scale(cfg.ul_weight);
        let grads = gradients(&tape, total, &vars)?;
        let lr = self.apply(grads, cfg)?;
        Ok(StepRecord {
            step: self.step,
            lr,
            mle: m,
            ul: Some(u),
            meta: None,
            total: m + cfg.ul_weight * u,
        })
    }

    /// One update on `L_MLE(θ) + ul_weight * L_UL(θ')` with
    /// `θ' = θ - α ∇L_MLE(θ)`.
    pub fn met_meta_step(
        &mut self,
        batch: &EncodedBatch,
        negatives: &EncodedBatch,
        cfg: &TrainConfig,
    ) -> Result<StepRecord> {
        if negatives.is_empty() {
            warn!("no eligible negatives in this batch; taking an MLE step");
            return self.mle_step(batch, cfg);
        }
        let tape = Tape::new();
        let vars = self.model.bind(&tape);
        let model = &self.model;
        let rng_cell = std::cell::RefCell::new(&mut self.rng);
        let g = meta_gradient(
            &tape,
            &vars,
            |p| mle(&model.score(&tape, p, batch, Some(&mut **rng_cell.borrow_mut()))),
            |p| {
                let scored = model.score(&tape, p, negatives, Some(&mut **rng_cell.borrow_mut()));
                ul(&scored, cfg.ul_variant).scale(cfg.ul_weight)
            },
            cfg.alpha,
            cfg.second_order,
        )?;
        drop(rng_cell);
        let lr = self.apply(g.grads, cfg)?;
        let ul_value = if cfg.ul_weight > 0.0 { g.outer_loss / cfg.ul_weight } else { 0.0 };
        Ok(StepRecord {
            step: self.step,
            lr,
            mle: g.inner_loss,
            ul: Some(ul_value),
            meta: Some(g.outer_loss),
            total: g.inner_loss + g.outer_loss,
        })
    }

    /// One update on `L_MLE(θ; batch) + L_MLE(θ'; meta_test)`.
    pub fn maml_mle_step(&mut self, batch: &EncodedBatch, meta_test: &EncodedBatch, cfg: &TrainConfig) -> Result<StepRecord> {
        if meta_test.is_empty() {
            warn!("no neighbors mined for this batch; taking an MLE step");
            return self.mle_step(batch, cfg);
        }
        let tape = Tape::new();
        let vars = self.model.bind(&tape);
        let model = &self.model;
        let rng_cell = std::cell::RefCell::new(&mut self.rng);
        let g = meta_gradient(
            &tape,
            &vars,
            |p| mle(&model.score(&tape, p, batch, Some(&mut **rng_cell.borrow_mut()))),
            |p| mle(&model.score(&tape, p, meta_test, Some(&mut **rng_cell.borrow_mut()))),
            cfg.alpha,
            cfg.second_order,
        )?;
        drop(rng_cell);
        let lr = self.apply(g.grads, cfg)?;
        Ok(StepRecord {
            step: self.step,
            lr,
            mle: g.inner_loss,
            ul: None,
            meta: Some(g.outer_loss),
            total: g.inner_loss + g.outer_loss,
        })
    }
}

/// Perturbed copies `(x̃, y)` of a batch; examples without an eligible
/// perturbation are skipped.
pub fn make_negatives<'e>(
    batch: impl IntoIterator<Item = &'e Example>,
    classes: &WordClasses,
    known: &KnownPairs<'_>,
    rng: &mut ChaCha8Rng,
) -> Vec<Example> {
    let mut out = Vec::new();
    for e in batch {
        match make_negative_filtered(&e.source, classes, rng, |x| known.is_negative_for(x, &e.target)) {
            Ok(x) => out.push(Example::new(x, e.target.clone())),
            Err(Error::NoEligibleToken) => {}
            Err(other) => unreachable!("negative sampling failed: {other}"),
        }
    }
    out
}

/// Exact-match accuracy of greedy decodes on `data`.
pub fn dev_accuracy(model: &ModelState, data: &Dataset) -> Result<f64> {
    let sources: Vec<Vec<String>> = data.iter().map(|e| e.source.clone()).collect();
    let golds: Vec<Vec<String>> = data.iter().map(|e| e.target.clone()).collect();
    let preds: Vec<Vec<String>> = model
        .greedy_decode_batch(&sources, model.config.max_decode_len)?
        .into_iter()
        .map(|d| d.tokens)
        .collect();
    exact_match_accuracy(&preds, &golds)
}

/// Consecutive non-finite losses tolerated before training aborts.
pub const MAX_NONFINITE: usize = 3;

/// Train a freshly initialized model whose vocabularies cover `train_set`
/// and `dev_set`.
pub fn train(
    train_set: &Dataset,
    dev_set: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    classes: Option<&WordClasses>,
) -> Result<(ModelState, TrainLog)> {
    let vocabs = Vocabs::from_datasets([train_set, dev_set]);
    let model = ModelState::new(model_cfg.clone(), vocabs, cfg.seed)?;
    train_model(model, train_set, dev_set, cfg, classes)
}

/// Train `model` and return the parameters with the best dev accuracy
/// (earliest on ties) together with the run log.
pub fn train_model(
    model: ModelState,
    train_set: &Dataset,
    dev_set: &Dataset,
    cfg: &TrainConfig,
    classes: Option<&WordClasses>,
) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.total_steps == 0 {
        return Ok((model, log));
    }
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let induced;
    let classes = match (cfg.meta_mode, classes) {
        (MetaMode::Met | MetaMode::MetMeta, None) => {
            induced = induce_word_classes(train_set, ClassMode::Context, None, 1)?;
            Some(&induced)
        }
        (_, c) => c,
    };
    let known = KnownPairs::new(train_set);
    let mut neighbor_cache: HashMap<usize, Vec<usize>> = HashMap::new();

    let mut learner = Learner::new(model, cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut nonfinite = 0;

    for step in 1..=cfg.total_steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(learner.rng());
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let examples: Vec<&Example> = idx.iter().map(|&i| &train_set.examples[i]).collect();
        let batch = learner.model.encode_batch(examples.iter().copied())?;

        let outcome = match cfg.meta_mode {
            MetaMode::None => learner.mle_step(&batch, cfg),
            MetaMode::Met | MetaMode::MetMeta => {
                let classes = classes.expect("classes resolved above");
                let negs = make_negatives(examples.iter().copied(), classes, &known, learner.rng());
                let negs = learner.model.encode_batch(&negs)?;
                if cfg.meta_mode == MetaMode::Met {
                    learner.met_step(&batch, &negs, cfg)
                } else {
                    learner.met_meta_step(&batch, &negs, cfg)
                }
            }
            MetaMode::MamlMle => {
                let mut meta_idx = Vec::new();
                for &i in &idx {
                    let n = neighbor_cache.entry(i).or_insert_with(|| {
                        mine_neighbor_indices(train_set, &train_set.examples[i].source, cfg.maml_neighbors)
                    });
                    meta_idx.extend_from_slice(n);
                }
                let meta_test = learner.model.encode_batch(meta_idx.iter().map(|&i| &train_set.examples[i]))?;
                learner.maml_mle_step(&batch, &meta_test, cfg)
            }
        };

        match outcome {
            Ok(mut record) => {
                nonfinite = 0;
                record.step = step;
                debug!("step {step}: total {:.4}", record.total);
                log.steps.push(record);
            }
            Err(Error::NonFiniteLoss(v)) => {
                nonfinite += 1;
                warn!("non-finite loss ({v}) at step {step}; update skipped");
                if nonfinite >= MAX_NONFINITE {
                    return Err(Error::NonFiniteLoss(v));
                }
            }
            Err(e) => return Err(e),
        }

        if !dev_set.is_empty() && (step % cfg.eval_every == 0 || step == cfg.total_steps) {
            let acc = dev_accuracy(&learner.model, dev_set)?;
            info!("step {step}: dev accuracy {:.4}", acc);
            log.evals.push(EvalRecord { step, dev_accuracy: acc });
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                if let Some(dir) = &cfg.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join("best.bin");
                    let meta = CheckpointMeta {
                        step,
                        dev_accuracy: Some(acc),
                        seed: cfg.seed,
                    };
                    checkpoint::save(&learner.model, &meta, &path)?;
                    log.best_checkpoint = Some(path);
                }
                best = Some((acc, step, learner.model.clone()));
            }
        }
    }

    match best {
        Some((acc, step, model)) => {
            log.best_step = Some(step);
            log.best_dev_accuracy = Some(acc);
            Ok((model, log))
        }
        None => Ok((learner.model, log)),
    }
}
