use std::collections::{BTreeSet, HashMap};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Which side of an example a vocabulary encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Source => "source",
            Side::Target => "target",
        }
    }
}

/// Token <-> id table. Ids 0..3 are the reserved PAD, BOS and EOS entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    side: Side,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(side: Side, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            side,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD, BOS, EOS] {
            v.insert(t.to_string());
        }
        let rest: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        for t in rest {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken {
            side: self.side.as_str(),
            token: token.to_string(),
        })
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// Source and target vocabularies of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    pub source: Vocab,
    pub target: Vocab,
}

impl Vocabs {
    /// Vocabularies covering every token of the given datasets.
    pub fn from_datasets<'a>(sets: impl IntoIterator<Item = &'a Dataset>) -> Self {
        let mut src = BTreeSet::new();
        let mut tgt = BTreeSet::new();
        for d in sets {
            src.extend(d.source_vocab());
            tgt.extend(d.target_vocab());
        }
        Vocabs {
            source: Vocab::new(Side::Source, src),
            target: Vocab::new(Side::Target, tgt),
        }
    }
}
