//! Exact-match scoring and the primitive / structural error taxonomy.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Correct,
    /// Right structure, wrong primitive(s).
    Primitive,
    Structural,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Correct => "correct",
            ErrorClass::Primitive => "primitive_error",
            ErrorClass::Structural => "structural_error",
        }
    }
}

pub fn exact_match_accuracy<S: AsRef<[String]>>(preds: &[S], golds: &[S]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Classify one prediction.
///
/// A primitive error has the gold length and differs only where the gold holds
/// a lexicon target token, each replaced by a lexicon target of the same
/// kind. With `consistent`, every occurrence of a gold primitive must also be
/// rewritten to one and the same token.
pub fn classify_error(pred: &[String], gold: &[String], lex: &Lexicon, consistent: bool) -> ErrorClass {
    if pred == gold {
        return ErrorClass::Correct;
    }
    if pred.len() != gold.len() {
        return ErrorClass::Structural;
    }
    let mut rewrite: HashMap<&str, &str> = HashMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let gold_kind = lex.target_kind(g);
        if p != g {
            match (gold_kind, lex.target_kind(p)) {
                (Some(a), Some(b)) if a == b => {}
                _ => return ErrorClass::Structural,
            }
        }
        if consistent && gold_kind.is_some() {
            if let Some(prev) = rewrite.insert(g, p) {
                if prev != p {
                    return ErrorClass::Structural;
                }
            }
        }
    }
    ErrorClass::Primitive
}

/// Share of wrong predictions that reproduce some training target verbatim.
/// The flag is set when there are no wrong predictions (the rate is then 0).
pub fn seen_output_rate(preds: &[Vec<String>], golds: &[Vec<String>], train: &Dataset) -> Result<(f64, bool)> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let seen: HashSet<&[String]> = train.iter().map(|e| e.target.as_slice()).collect();
    let mut wrong = 0;
    let mut repeated = 0;
    for (p, g) in preds.iter().zip(golds) {
        if p != g {
            wrong += 1;
            if seen.contains(p.as_slice()) {
                repeated += 1;
            }
        }
    }
    if wrong == 0 {
        return Ok((0.0, true));
    }
    Ok((repeated as f64 / wrong as f64, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub primitive_error: usize,
    pub structural_error: usize,
    pub seen_output_rate: f64,
    /// No wrong predictions, so `seen_output_rate` is vacuous.
    pub seen_output_vacuous: bool,
    /// Decodes that hit the length limit without EOS.
    pub overflow: usize,
    pub classes: Vec<ErrorClass>,
}

impl EvalReport {
    pub fn new(
        preds: &[Vec<String>],
        golds: &[Vec<String>],
        lex: &Lexicon,
        train: &Dataset,
        consistent: bool,
    ) -> Result<Self> {
        let accuracy = exact_match_accuracy(preds, golds)?;
        let (seen, vacuous) = seen_output_rate(preds, golds, train)?;
        let classes: Vec<ErrorClass> = preds
            .iter()
            .zip(golds)
            .map(|(p, g)| classify_error(p, g, lex, consistent))
            .collect();
        let count = |c: ErrorClass| classes.iter().filter(|&&x| x == c).count();
        Ok(EvalReport {
            total: preds.len(),
            accuracy,
            correct: count(ErrorClass::Correct),
            primitive_error: count(ErrorClass::Primitive),
            structural_error: count(ErrorClass::Structural),
            seen_output_rate: seen,
            seen_output_vacuous: vacuous,
            overflow: 0,
            classes,
        })
    }

    pub fn with_overflow(mut self, overflow: usize) -> Self {
        self.overflow = overflow;
        self
    }

    fn rate(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            n as f64 / self.total as f64
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        let mut row = |k: &str, v: String| writeln!(s, "{k}\t{v}").expect("string write");
        row("total", self.total.to_string());
        row("accuracy", format!("{:.6}", self.accuracy));
        row("correct", self.correct.to_string());
        row("primitive_error", self.primitive_error.to_string());
        row("structural_error", self.structural_error.to_string());
        row("primitive_error_rate", format!("{:.6}", self.rate(self.primitive_error)));
        row("structural_error_rate", format!("{:.6}", self.rate(self.structural_error)));
        row("seen_output_rate", format!("{:.6}", self.seen_output_rate));
        row("seen_output_vacuous", self.seen_output_vacuous.to_string());
        row("decode_overflow", self.overflow.to_string());
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |x: f64| 100.0 * x;
        writeln!(s, "examples          {}", self.total).unwrap();
        writeln!(s, "exact match       {:.2}%", pct(self.accuracy)).unwrap();
        writeln!(
            s,
            "primitive errors  {} ({:.2}%)",
            self.primitive_error,
            pct(self.rate(self.primitive_error))
        )
        .unwrap();
        writeln!(
            s,
            "structural errors {} ({:.2}%)",
            self.structural_error,
            pct(self.rate(self.structural_error))
        )
        .unwrap();
        if self.seen_output_vacuous {
            writeln!(s, "seen outputs      n/a (no wrong predictions)").unwrap();
        } else {
            writeln!(s, "seen outputs      {:.2}% of wrong predictions", pct(self.seen_output_rate)).unwrap();
        }
        if self.overflow > 0 {
            writeln!(s, "decode overflow   {}", self.overflow).unwrap();
        }
        s
    }
}
