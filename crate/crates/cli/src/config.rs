//! Run configuration: a flat `section.key=value` map resolved from, in
//! increasing precedence, built-in defaults, `COMPGEN_SEED`, a config file and
//! command-line flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use compgen::augment::AugmentConfig;
use compgen::dataset::SplitSpec;
use compgen::lexicon::MaxFreq;
use compgen::nn::ModelConfig;
use compgen::perturb::ClassMode;
use compgen::scan::Primitive;
use compgen::toy::ToyConfig;
use compgen::training::TrainConfig;
use compgen::{LexiconConfig, TokenAlphabet};
use thiserror::Error;

pub const SEED_ENV: &str = "COMPGEN_SEED";

/// User-facing configuration errors.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{origin}: bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        origin: Origin,
        reason: String,
    },
    #[error("{path}:{line}: expected `key=value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("flag --{0} needs a value")]
    MissingValue(String),
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    Env,
    File,
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Default => "default",
            Origin::Env => "env",
            Origin::File => "file",
            Origin::Flag => "flag",
        })
    }
}

struct Key {
    name: &'static str,
    default: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const BOOL_KEYS: [&str; 4] = ["lexicon.strict", "augment.dedupe", "train.second_order", "eval.consistent"];

const KEYS: &[Key] = &[
    key("seed", "0", "global seed; every random choice derives from it"),
    key("data.split", "jump", "jump | around_right | dax"),
    key("data.dev_fraction", "0.1", "share of the heldout set used as dev"),
    key("data.alphabet", "short", "target spelling: short (WALK, TL) | official (I_WALK)"),
    key("data.jump_copies", "1", "copies of the standalone jump example in the jump split"),
    key("data.dax_copies", "1", "copies of the standalone dax example in the dax split"),
    key("lexicon.strict", "false", "sufficient and necessary pairs only"),
    key("lexicon.psi", "auto", "no-winner threshold (auto: 1 strict, 4 relaxed)"),
    key("lexicon.min_freq", "auto", "minimum token frequency (auto: 0 strict, 2 relaxed)"),
    key("lexicon.max_freq", "auto", "none | N | pX percentile (auto: none strict, p90 relaxed)"),
    key("augment.n", "5", "new variants per primitive"),
    key("augment.dedupe", "true", "drop mutated copies identical to their original"),
    key("perturb.class_mode", "context", "context | tagmap"),
    key("perturb.tagmap", "", "token<TAB>tag file for tagmap classes"),
    key("perturb.min_context_count", "1", "ignore rarer (left, right) contexts"),
    key("perturb.k", "10", "negatives shown by perturb-preview"),
    key("model.arch", "self_attention", "self_attention | recurrent"),
    key("model.layers", "2", "encoder and decoder layers"),
    key("model.hidden_dim", "128", "hidden width"),
    key("model.embed_dim", "128", "embedding width"),
    key("model.heads", "4", "attention heads"),
    key("model.ff_dim", "256", "feed-forward width"),
    key("model.dropout", "0.1", "dropout rate"),
    key("model.max_decode_len", "64", "greedy decoding limit"),
    key("train.alpha", "0.01", "inner step size of the two-step objectives"),
    key("train.beta", "0.001", "outer (peak) learning rate"),
    key("train.warmup_steps", "200", "Noam warm-up steps"),
    key("train.total_steps", "2000", "optimizer updates"),
    key("train.batch_size", "32", "examples per update"),
    key("train.ul_variant", "sentence", "sentence | word_avg | word_min"),
    key("train.ul_weight", "1.0", "weight of the unlikelihood term"),
    key("train.meta_mode", "none", "none | met | met_meta | maml_mle"),
    key("train.second_order", "false", "differentiate through the inner step"),
    key("train.eval_every", "100", "steps between dev evaluations"),
    key("train.optimizer", "adam", "adam | sgd"),
    key("train.schedule", "noam", "noam | constant"),
    key("train.maml_neighbors", "1", "Levenshtein neighbors per example for maml_mle"),
    key("toy.size_s1", "20", "first-slot vocabulary size"),
    key("toy.size_s2", "10", "second-slot vocabulary size"),
    key("toy.gen_fraction", "0.25", "share of s1 tokens seen only alone in training"),
    key("eval.consistent", "true", "a primitive swap must rename every occurrence the same way"),
];

fn normalize(name: &str) -> String {
    name.replace('-', "_")
}

/// Resolve a flag name to a config key: either a full `section.key` or a
/// suffix that names exactly one key (`--dev-fraction`, `--strict`).
fn resolve(name: &str) -> Option<&'static str> {
    let name = normalize(name);
    if let Some(k) = KEYS.iter().find(|k| k.name == name) {
        return Some(k.name);
    }
    if name.contains('.') {
        return None;
    }
    let mut hits = KEYS
        .iter()
        .filter(|k| k.name.rsplit_once('.').is_some_and(|(_, s)| s == name));
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k.name),
        _ => None,
    }
}

fn is_bool(key: &str) -> bool {
    BOOL_KEYS.contains(&key)
}

/// One-line-per-key description of every config key.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (set in --config FILE as key=value, or as --key VALUE):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "\"\"" } else { k.default };
        writeln!(s, "  {:<28} {} [default: {}]", k.name, k.help, default).unwrap();
    }
    s.push_str("\nPrecedence: flags > config file > COMPGEN_SEED (seed only) > defaults.\n");
    s
}

/// Split `argv` into config assignments and everything else.
///
/// A `--name value` or `--name=value` pair is taken when `name` resolves to a
/// config key. Boolean keys may be given bare (`--strict`). A dotted name that
/// is not a key is an error; other flags are left for the argument parser.
pub fn extract_flags(argv: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::new();
    let mut sets = Vec::new();
    let mut it = argv.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--").filter(|b| !b.is_empty()) else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        let Some(key) = resolve(name) else {
            if name.contains('.') {
                return Err(ConfigError::UnknownKey(normalize(name)));
            }
            rest.push(arg);
            continue;
        };
        let value = match inline {
            Some(v) => v,
            None if is_bool(key) && it.peek().is_none_or(|n| n.starts_with("--")) => "true".to_string(),
            None => it.next().ok_or_else(|| ConfigError::MissingValue(name.to_string()))?,
        };
        sets.push((key.to_string(), value));
    }
    Ok((rest, sets))
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    entries: BTreeMap<&'static str, Entry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let entries = KEYS
            .iter()
            .map(|k| {
                (
                    k.name,
                    Entry {
                        value: k.default.to_string(),
                        origin: Origin::Default,
                    },
                )
            })
            .collect();
        RunConfig { entries }
    }
}

impl RunConfig {
    /// Merge every source in precedence order and validate the result.
    pub fn resolve(
        env_seed: Option<String>,
        file: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(seed) = env_seed {
            cfg.set("seed", seed.trim(), Origin::Env)?;
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            for (key, value) in parse_file(&text, path)? {
                cfg.set(&key, &value, Origin::File)?;
            }
        }
        for (key, value) in flags {
            cfg.set(key, value, Origin::Flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let key = normalize(key);
        let entry = self
            .entries
            .get_mut(key.as_str())
            .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
        entry.value = value.to_string();
        entry.origin = origin;
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.entries.get(key).unwrap_or_else(|| panic!("no config key {key}")).value
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.entries[key].origin
    }

    fn bad(&self, key: &str, reason: impl fmt::Display) -> ConfigError {
        ConfigError::BadValue {
            key: key.to_string(),
            value: self.get(key).to_string(),
            origin: self.origin(key),
            reason: reason.to_string(),
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key).trim().parse().map_err(|e| self.bad(key, e))
    }

    pub fn seed(&self) -> u64 {
        self.parse("seed").expect("validated")
    }

    /// Check that every value parses into its typed config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.parse::<u64>("seed")?;
        self.split_spec()?;
        self.dev_fraction()?;
        self.lexicon()?;
        self.augment()?;
        self.class_mode()?;
        self.parse::<usize>("perturb.min_context_count")?;
        self.parse::<usize>("perturb.k")?;
        self.model()?;
        self.train()?;
        self.toy()?;
        self.parse::<bool>("eval.consistent")?;
        Ok(())
    }

    pub fn alphabet(&self) -> Result<TokenAlphabet, ConfigError> {
        match self.get("data.alphabet") {
            "short" => Ok(TokenAlphabet::Short),
            "official" => Ok(TokenAlphabet::Official),
            _ => Err(self.bad("data.alphabet", "expected short or official")),
        }
    }

    pub fn dev_fraction(&self) -> Result<f64, ConfigError> {
        let f: f64 = self.parse("data.dev_fraction")?;
        if f > 0.0 && f < 1.0 {
            Ok(f)
        } else {
            Err(self.bad("data.dev_fraction", "must lie strictly between 0 and 1"))
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec, ConfigError> {
        let alphabet = self.alphabet()?;
        let spec = SplitSpec::by_name(self.get("data.split")).map_err(|e| self.bad("data.split", e))?;
        Ok(match spec {
            SplitSpec::Jump { .. } => SplitSpec::Jump {
                jump_copies: self.parse("data.jump_copies")?,
            },
            SplitSpec::Dax { primitive, .. } => SplitSpec::Dax {
                primitive: match alphabet {
                    TokenAlphabet::Short => primitive,
                    TokenAlphabet::Official => Primitive::action(&primitive.surface, "I_DAX"),
                },
                copies: self.parse("data.dax_copies")?,
                alphabet,
            },
            other => other,
        })
    }

    pub fn lexicon(&self) -> Result<LexiconConfig, ConfigError> {
        let strict: bool = self.parse("lexicon.strict")?;
        let mut cfg = if strict {
            LexiconConfig::strict()
        } else {
            LexiconConfig::relaxed()
        };
        if self.get("lexicon.psi") != "auto" {
            cfg.psi = self.parse("lexicon.psi")?;
        }
        if self.get("lexicon.min_freq") != "auto" {
            cfg.min_freq = self.parse("lexicon.min_freq")?;
        }
        let max = self.get("lexicon.max_freq").trim();
        if max != "auto" {
            cfg.max_freq = if max == "none" {
                MaxFreq::Unbounded
            } else if let Some(p) = max.strip_prefix('p') {
                MaxFreq::Percentile(p.parse().map_err(|e| self.bad("lexicon.max_freq", e))?)
            } else {
                MaxFreq::Fixed(self.parse("lexicon.max_freq")?)
            };
        }
        cfg.validate().map_err(|e| self.bad("lexicon.strict", e))?;
        Ok(cfg)
    }

    pub fn augment(&self) -> Result<AugmentConfig, ConfigError> {
        let n: usize = self.parse("augment.n")?;
        if n == 0 {
            return Err(self.bad("augment.n", "must be at least 1"));
        }
        Ok(AugmentConfig {
            n,
            seed: self.parse("seed")?,
            dedupe: self.parse("augment.dedupe")?,
        })
    }

    pub fn class_mode(&self) -> Result<ClassMode, ConfigError> {
        match self.get("perturb.class_mode") {
            "context" => Ok(ClassMode::Context),
            "tagmap" if self.get("perturb.tagmap").is_empty() => {
                Err(self.bad("perturb.class_mode", "tagmap needs perturb.tagmap"))
            }
            "tagmap" => Ok(ClassMode::TagMap),
            _ => Err(self.bad("perturb.class_mode", "expected context or tagmap")),
        }
    }

    pub fn tagmap(&self) -> Option<PathBuf> {
        let p = self.get("perturb.tagmap");
        (!p.is_empty()).then(|| PathBuf::from(p))
    }

    pub fn model(&self) -> Result<ModelConfig, ConfigError> {
        let cfg = ModelConfig {
            arch: self.parse("model.arch")?,
            layers: self.parse("model.layers")?,
            hidden_dim: self.parse("model.hidden_dim")?,
            embed_dim: self.parse("model.embed_dim")?,
            heads: self.parse("model.heads")?,
            ff_dim: self.parse("model.ff_dim")?,
            dropout: self.parse("model.dropout")?,
            max_decode_len: self.parse("model.max_decode_len")?,
        };
        cfg.validate().map_err(|e| self.bad("model.arch", e))?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            alpha: self.parse("train.alpha")?,
            beta: self.parse("train.beta")?,
            warmup_steps: self.parse("train.warmup_steps")?,
            total_steps: self.parse("train.total_steps")?,
            batch_size: self.parse("train.batch_size")?,
            ul_variant: self.parse("train.ul_variant")?,
            ul_weight: self.parse("train.ul_weight")?,
            meta_mode: self.parse("train.meta_mode")?,
            second_order: self.parse("train.second_order")?,
            eval_every: self.parse("train.eval_every")?,
            seed: self.parse("seed")?,
            optimizer: self.parse("train.optimizer")?,
            schedule: self.parse("train.schedule")?,
            maml_neighbors: self.parse("train.maml_neighbors")?,
            checkpoint_dir: None,
        };
        cfg.validate().map_err(|e| self.bad("train.total_steps", e))?;
        Ok(cfg)
    }

    pub fn toy(&self) -> Result<ToyConfig, ConfigError> {
        let cfg = ToyConfig {
            size_s1: self.parse("toy.size_s1")?,
            size_s2: self.parse("toy.size_s2")?,
            gen_fraction: self.parse("toy.gen_fraction")?,
            seed: self.parse("seed")?,
        };
        cfg.validate().map_err(|e| self.bad("toy.size_s1", e))?;
        Ok(cfg)
    }

    /// The resolved configuration as a loadable config file, with the origin
    /// of each value as a trailing comment.
    pub fn to_file_text(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, e) in &self.entries {
            writeln!(s, "{k}={}  # {}", e.value, e.origin).unwrap();
        }
        s
    }
}

/// Parse `key=value` lines. `#` starts a comment at line start or after
/// whitespace; blank lines are skipped.
pub fn parse_file(text: &str, path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}
