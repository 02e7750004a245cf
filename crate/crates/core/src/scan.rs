//! The SCAN command language.
//!
//! Commands are built from action primitives (`walk`, `run`, ...), direction
//! primitives (`left`, `right`) and a closed set of function words. A command
//! parses into a [`Program`], a three-level tree: a conjunction (`and`/`after`)
//! of at most two clauses, each clause an optionally repeated phrase, each
//! phrase a primitive with an optional direction modifier. The layering makes
//! it impossible to build a program with nested repetition or an inner
//! conjunction.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::dataset::{Dataset, Example};
use crate::error::{Error, Result};

pub const OPPOSITE: &str = "opposite";
pub const AROUND: &str = "around";
pub const TWICE: &str = "twice";
pub const THRICE: &str = "thrice";
pub const AND: &str = "and";
pub const AFTER: &str = "after";

/// Words that only shape the output structure and can never be primitives.
pub const FUNCTION_WORDS: [&str; 6] = [OPPOSITE, AROUND, TWICE, THRICE, AND, AFTER];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    Action,
    Direction,
}

impl PrimitiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::Action => "action",
            PrimitiveKind::Direction => "direction",
        }
    }
}

impl std::str::FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "action" => Ok(PrimitiveKind::Action),
            "direction" => Ok(PrimitiveKind::Direction),
            other => Err(format!("unknown primitive kind {other:?}")),
        }
    }
}

/// A lexical argument of the grammar.
///
/// An action with an empty `target` is silent: it contributes nothing on its
/// own, which is how `turn` behaves (`turn left` is just the turn). Silent
/// actions only occur under a direction modifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Primitive {
    pub surface: String,
    pub target: String,
    pub kind: PrimitiveKind,
}

impl Primitive {
    pub fn new(surface: &str, target: &str, kind: PrimitiveKind) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidPrimitive {
            surface: surface.to_string(),
            reason: reason.to_string(),
        };
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(invalid("surface must be a nonempty whitespace-free token"));
        }
        if target.chars().any(char::is_whitespace) {
            return Err(invalid("target must be whitespace-free"));
        }
        if target.is_empty() && kind == PrimitiveKind::Direction {
            return Err(invalid("a direction needs a target token"));
        }
        if FUNCTION_WORDS.contains(&surface) {
            return Err(invalid("function words cannot be primitives"));
        }
        Ok(Primitive {
            surface: surface.to_string(),
            target: target.to_string(),
            kind,
        })
    }

    pub fn action(surface: &str, target: &str) -> Self {
        Self::new(surface, target, PrimitiveKind::Action).expect("valid action primitive")
    }

    pub fn direction(surface: &str, target: &str) -> Self {
        Self::new(surface, target, PrimitiveKind::Direction).expect("valid direction primitive")
    }

    pub fn is_silent(&self) -> bool {
        self.target.is_empty()
    }

    fn realize(&self) -> &[String] {
        if self.is_silent() {
            &[]
        } else {
            std::slice::from_ref(&self.target)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Phrase {
    Identity(Primitive),
    /// `x left`: turn, then act.
    Rev(Primitive, Primitive),
    Oppo(Primitive, Primitive),
    Around(Primitive, Primitive),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Clause {
    Once(Phrase),
    Twice(Phrase),
    Thrice(Phrase),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Program {
    Single(Clause),
    And(Clause, Clause),
    After(Clause, Clause),
}

/// Target token sequence produced by interpreting a program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionSeq(pub Vec<String>);

impl ActionSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ActionSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl Phrase {
    fn interpret_into(&self, out: &mut Vec<String>) {
        match self {
            Phrase::Identity(a) => out.extend_from_slice(a.realize()),
            Phrase::Rev(a, d) => {
                out.extend_from_slice(d.realize());
                out.extend_from_slice(a.realize());
            }
            Phrase::Oppo(a, d) => {
                out.extend_from_slice(d.realize());
                out.extend_from_slice(d.realize());
                out.extend_from_slice(a.realize());
            }
            Phrase::Around(a, d) => {
                for _ in 0..4 {
                    out.extend_from_slice(d.realize());
                    out.extend_from_slice(a.realize());
                }
            }
        }
    }

    fn surface_into(&self, out: &mut Vec<String>) {
        match self {
            Phrase::Identity(a) => out.push(a.surface.clone()),
            Phrase::Rev(a, d) => out.extend([a.surface.clone(), d.surface.clone()]),
            Phrase::Oppo(a, d) => {
                out.extend([a.surface.clone(), OPPOSITE.to_string(), d.surface.clone()])
            }
            Phrase::Around(a, d) => {
                out.extend([a.surface.clone(), AROUND.to_string(), d.surface.clone()])
            }
        }
    }

    pub fn primitives(&self) -> Vec<&Primitive> {
        match self {
            Phrase::Identity(a) => vec![a],
            Phrase::Rev(a, d) | Phrase::Oppo(a, d) | Phrase::Around(a, d) => vec![a, d],
        }
    }
}

impl Clause {
    pub fn phrase(&self) -> &Phrase {
        match self {
            Clause::Once(p) | Clause::Twice(p) | Clause::Thrice(p) => p,
        }
    }

    fn repeats(&self) -> usize {
        match self {
            Clause::Once(_) => 1,
            Clause::Twice(_) => 2,
            Clause::Thrice(_) => 3,
        }
    }

    fn interpret_into(&self, out: &mut Vec<String>) {
        let mut once = Vec::new();
        self.phrase().interpret_into(&mut once);
        for _ in 0..self.repeats() {
            out.extend_from_slice(&once);
        }
    }

    fn surface_into(&self, out: &mut Vec<String>) {
        self.phrase().surface_into(out);
        match self {
            Clause::Once(_) => {}
            Clause::Twice(_) => out.push(TWICE.to_string()),
            Clause::Thrice(_) => out.push(THRICE.to_string()),
        }
    }
}

impl Program {
    /// The surface command that parses to this program.
    pub fn surface(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Program::Single(c) => c.surface_into(&mut out),
            Program::And(a, b) => {
                a.surface_into(&mut out);
                out.push(AND.to_string());
                b.surface_into(&mut out);
            }
            Program::After(a, b) => {
                a.surface_into(&mut out);
                out.push(AFTER.to_string());
                b.surface_into(&mut out);
            }
        }
        out
    }

    pub fn clauses(&self) -> Vec<&Clause> {
        match self {
            Program::Single(c) => vec![c],
            Program::And(a, b) | Program::After(a, b) => vec![a, b],
        }
    }
}

/// Interpret a program into its action sequence.
pub fn interpret(program: &Program) -> ActionSeq {
    let mut out = Vec::new();
    match program {
        Program::Single(c) => c.interpret_into(&mut out),
        Program::And(a, b) => {
            a.interpret_into(&mut out);
            b.interpret_into(&mut out);
        }
        Program::After(a, b) => {
            b.interpret_into(&mut out);
            a.interpret_into(&mut out);
        }
    }
    ActionSeq(out)
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phrase::Identity(a) => write!(f, "Identity({})", a.surface),
            Phrase::Rev(a, d) => write!(f, "Rev({}, {})", a.surface, d.surface),
            Phrase::Oppo(a, d) => write!(f, "Oppo({}, {})", a.surface, d.surface),
            Phrase::Around(a, d) => write!(f, "Around({}, {})", a.surface, d.surface),
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Once(p) => write!(f, "{p}"),
            Clause::Twice(p) => write!(f, "Twice({p})"),
            Clause::Thrice(p) => write!(f, "Thrice({p})"),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Program::Single(c) => write!(f, "{c}"),
            Program::And(a, b) => write!(f, "And({a}, {b})"),
            Program::After(a, b) => write!(f, "After({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Rev,
    Oppo,
    Around,
    Twice,
    Thrice,
    And,
    After,
}

impl Function {
    pub const ALL: [Function; 7] = [
        Function::Rev,
        Function::Oppo,
        Function::Around,
        Function::Twice,
        Function::Thrice,
        Function::And,
        Function::After,
    ];
}

/// Target-token spelling used when building the standard SCAN grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenAlphabet {
    /// `WALK`, `TL`, `TR`, ...
    Short,
    /// The released corpus spelling: `I_WALK`, `I_TURN_LEFT`, ...
    Official,
}

impl TokenAlphabet {
    fn action(self, surface: &str) -> String {
        match self {
            TokenAlphabet::Short => surface.to_uppercase(),
            TokenAlphabet::Official => format!("I_{}", surface.to_uppercase()),
        }
    }

    fn direction(self, surface: &str) -> String {
        match (self, surface) {
            (TokenAlphabet::Short, "left") => "TL".to_string(),
            (TokenAlphabet::Short, "right") => "TR".to_string(),
            (TokenAlphabet::Official, s) => format!("I_TURN_{}", s.to_uppercase()),
            (TokenAlphabet::Short, s) => format!("T{}", s.to_uppercase()),
        }
    }

    /// Map a short-alphabet token to the official spelling.
    pub fn to_official(token: &str) -> String {
        match token {
            "TL" => "I_TURN_LEFT".to_string(),
            "TR" => "I_TURN_RIGHT".to_string(),
            t => format!("I_{t}"),
        }
    }
}

/// Primitive inventory plus the set of enabled syntactic functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    primitives: Vec<Primitive>,
    functions: BTreeSet<Function>,
}

impl Grammar {
    pub fn new(primitives: Vec<Primitive>, functions: impl IntoIterator<Item = Function>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &primitives {
            if !seen.insert(p.surface.as_str()) {
                return Err(Error::PrimitiveCollision(p.surface.clone()));
            }
        }
        Ok(Grammar {
            primitives,
            functions: functions.into_iter().collect(),
        })
    }

    /// The standard SCAN grammar with every function enabled.
    pub fn scan(alphabet: TokenAlphabet) -> Self {
        let mut prims: Vec<Primitive> = ["walk", "look", "run", "jump"]
            .iter()
            .map(|s| Primitive::action(s, &alphabet.action(s)))
            .collect();
        prims.push(Primitive::action("turn", ""));
        for d in ["left", "right"] {
            prims.push(Primitive::direction(d, &alphabet.direction(d)));
        }
        Grammar::new(prims, Function::ALL).expect("standard grammar is well formed")
    }

    /// Read a grammar description: one `surface<TAB>target<TAB>kind` line per
    /// primitive. Blank lines and `#` comments are skipped; all functions are
    /// enabled.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_description(&text, path)
    }

    pub fn parse_description(text: &str, path: &Path) -> Result<Self> {
        let mut prims = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let kind = fields[2].parse::<PrimitiveKind>().map_err(err)?;
            let prim = Primitive::new(fields[0], fields[1], kind).map_err(|e| err(e.to_string()))?;
            prims.push(prim);
        }
        Grammar::new(prims, Function::ALL)
    }

    pub fn to_description(&self) -> String {
        self.primitives
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.surface, p.target, p.kind.as_str()))
            .collect()
    }

    pub fn with_functions(mut self, functions: impl IntoIterator<Item = Function>) -> Self {
        self.functions = functions.into_iter().collect();
        self
    }

    pub fn with_primitive(mut self, prim: Primitive) -> Result<Self> {
        if self.primitive(&prim.surface).is_some() {
            return Err(Error::PrimitiveCollision(prim.surface));
        }
        self.primitives.push(prim);
        Ok(self)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn enables(&self, f: Function) -> bool {
        self.functions.contains(&f)
    }

    pub fn primitive(&self, surface: &str) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.surface == surface)
    }

    fn actions(&self) -> impl Iterator<Item = &Primitive> {
        self.primitives.iter().filter(|p| p.kind == PrimitiveKind::Action)
    }

    fn directions(&self) -> impl Iterator<Item = &Primitive> {
        self.primitives.iter().filter(|p| p.kind == PrimitiveKind::Direction)
    }

    /// Parse a command into its program.
    pub fn parse_command<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Program> {
        let words: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
        let fail = || Error::UnparsableCommand(words.join(" "));

        let split = words.iter().position(|w| *w == AND || *w == AFTER);
        match split {
            None => Ok(Program::Single(self.parse_clause(&words).ok_or_else(fail)?)),
            Some(i) => {
                let conj = if words[i] == AND { Function::And } else { Function::After };
                if !self.enables(conj) {
                    return Err(fail());
                }
                let left = self.parse_clause(&words[..i]).ok_or_else(fail)?;
                let right = self.parse_clause(&words[i + 1..]).ok_or_else(fail)?;
                Ok(match conj {
                    Function::And => Program::And(left, right),
                    _ => Program::After(left, right),
                })
            }
        }
    }

    fn parse_clause(&self, words: &[&str]) -> Option<Clause> {
        let (last, head) = words.split_last()?;
        match *last {
            TWICE if self.enables(Function::Twice) => self.parse_phrase(head).map(Clause::Twice),
            THRICE if self.enables(Function::Thrice) => self.parse_phrase(head).map(Clause::Thrice),
            _ => self.parse_phrase(words).map(Clause::Once),
        }
    }

    fn parse_phrase(&self, words: &[&str]) -> Option<Phrase> {
        let action = |w: &str| self.primitive(w).filter(|p| p.kind == PrimitiveKind::Action).cloned();
        let direction =
            |w: &str| self.primitive(w).filter(|p| p.kind == PrimitiveKind::Direction).cloned();
        match *words {
            [a] => action(a).filter(|p| !p.is_silent()).map(Phrase::Identity),
            [a, d] if self.enables(Function::Rev) => Some(Phrase::Rev(action(a)?, direction(d)?)),
            [a, OPPOSITE, d] if self.enables(Function::Oppo) => {
                Some(Phrase::Oppo(action(a)?, direction(d)?))
            }
            [a, AROUND, d] if self.enables(Function::Around) => {
                Some(Phrase::Around(action(a)?, direction(d)?))
            }
            _ => None,
        }
    }

    /// Every phrase the grammar licenses.
    pub fn phrases(&self) -> Vec<Phrase> {
        let mut out = Vec::new();
        for a in self.actions() {
            if !a.is_silent() {
                out.push(Phrase::Identity(a.clone()));
            }
            for d in self.directions() {
                if self.enables(Function::Rev) {
                    out.push(Phrase::Rev(a.clone(), d.clone()));
                }
                if self.enables(Function::Oppo) {
                    out.push(Phrase::Oppo(a.clone(), d.clone()));
                }
                if self.enables(Function::Around) {
                    out.push(Phrase::Around(a.clone(), d.clone()));
                }
            }
        }
        out
    }

    pub fn clauses(&self) -> Vec<Clause> {
        let phrases = self.phrases();
        let mut out: Vec<Clause> = phrases.iter().cloned().map(Clause::Once).collect();
        if self.enables(Function::Twice) {
            out.extend(phrases.iter().cloned().map(Clause::Twice));
        }
        if self.enables(Function::Thrice) {
            out.extend(phrases.iter().cloned().map(Clause::Thrice));
        }
        out
    }

    /// Every program the grammar licenses (unordered).
    pub fn programs(&self) -> Vec<Program> {
        let clauses = self.clauses();
        let mut out: Vec<Program> = clauses.iter().cloned().map(Program::Single).collect();
        for a in &clauses {
            for b in &clauses {
                if self.enables(Function::And) {
                    out.push(Program::And(a.clone(), b.clone()));
                }
                if self.enables(Function::After) {
                    out.push(Program::After(a.clone(), b.clone()));
                }
            }
        }
        out
    }

    /// Every distinct command paired with its interpretation, sorted
    /// lexicographically by source tokens.
    pub fn enumerate_commands(&self) -> Dataset {
        let mut pairs: Vec<(Vec<String>, Vec<String>)> = self
            .programs()
            .iter()
            .map(|p| (p.surface(), interpret(p).0))
            .collect();
        pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        Dataset::new(
            pairs
                .into_iter()
                .map(|(s, t)| Example::new(s, t))
                .collect(),
        )
    }
}

/// Parse with the standard short-alphabet grammar.
pub fn parse_command<S: AsRef<str>>(tokens: &[S]) -> Result<Program> {
    Grammar::scan(TokenAlphabet::Short).parse_command(tokens)
}
