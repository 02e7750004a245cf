//! Paired token-sequence datasets, their on-disk formats and the benchmark
//! splits built from an enumerated corpus.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scan::{Grammar, Primitive, TokenAlphabet};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// Generalization category, e.g. the third column of COGS files.
    pub tag: Option<String>,
}

impl Example {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        Example {
            source,
            target,
            tag: None,
        }
    }

    /// Build from whitespace-separated strings.
    pub fn from_strs(source: &str, target: &str) -> Self {
        Example::new(split(source), split(target))
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn source_str(&self) -> String {
        self.source.join(" ")
    }

    pub fn target_str(&self) -> String {
        self.target.join(" ")
    }

    pub fn source_contains(&self, token: &str) -> bool {
        self.source.iter().any(|t| t == token)
    }
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn source_vocab(&self) -> BTreeSet<String> {
        self.examples.iter().flat_map(|e| e.source.iter().cloned()).collect()
    }

    pub fn target_vocab(&self) -> BTreeSet<String> {
        self.examples.iter().flat_map(|e| e.target.iter().cloned()).collect()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.examples.extend(other.examples);
    }

    /// Seeded subsample keeping `round(fraction * len)` examples in their
    /// original relative order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Dataset {
        let keep = ((fraction * self.len() as f64).round() as usize).min(self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = idx[..keep].to_vec();
        chosen.sort_unstable();
        Dataset::new(chosen.into_iter().map(|i| self.examples[i].clone()).collect())
    }
}

impl FromIterator<Example> for Dataset {
    fn from_iter<I: IntoIterator<Item = Example>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    /// `IN: <src> OUT: <tgt>` lines.
    ScanTxt,
    /// `src<TAB>tgt[<TAB>tag]` lines.
    Tsv,
}

impl FileFormat {
    /// `.tsv` files are tab separated, anything else is SCAN text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => FileFormat::Tsv,
            _ => FileFormat::ScanTxt,
        }
    }
}

pub fn read_dataset(path: &Path, format: FileFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, format, path)
}

pub fn parse_dataset(text: &str, format: FileFormat, path: &Path) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        let example = match format {
            FileFormat::ScanTxt => {
                let rest = line.strip_prefix("IN: ").ok_or_else(|| err("missing `IN: ` prefix"))?;
                let (src, tgt) = rest
                    .split_once(" OUT: ")
                    .ok_or_else(|| err("missing ` OUT: ` separator"))?;
                Example::from_strs(src, tgt)
            }
            FileFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                match fields.as_slice() {
                    [src, tgt] => Example::from_strs(src, tgt),
                    [src, tgt, tag] => Example::from_strs(src, tgt).with_tag(*tag),
                    _ => return Err(err("expected 2 or 3 tab-separated fields")),
                }
            }
        };
        if example.source.is_empty() || example.target.is_empty() {
            return Err(err("empty source or target"));
        }
        examples.push(example);
    }
    Ok(Dataset::new(examples))
}

pub fn write_dataset(dataset: &Dataset, path: &Path, format: FileFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(format_dataset(dataset, format).as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn format_dataset(dataset: &Dataset, format: FileFormat) -> String {
    let mut s = String::new();
    for e in dataset {
        match format {
            FileFormat::ScanTxt => {
                s.push_str("IN: ");
                s.push_str(&e.source_str());
                s.push_str(" OUT: ");
                s.push_str(&e.target_str());
            }
            FileFormat::Tsv => {
                s.push_str(&e.source_str());
                s.push('\t');
                s.push_str(&e.target_str());
                if let Some(tag) = &e.tag {
                    s.push('\t');
                    s.push_str(tag);
                }
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Standalone `jump` (repeated `jump_copies` times) and every command
    /// without `jump` train; compound `jump` commands are held out.
    Jump { jump_copies: usize },
    /// Commands containing `<primitive> around right` are held out.
    AroundRight,
    /// The jump split plus `copies` standalone examples of an unseen
    /// primitive; heldout is every compound command over that primitive
    /// (and not `jump`), i.e. the jump heldout with `jump` renamed.
    Dax {
        primitive: Primitive,
        copies: usize,
        alphabet: TokenAlphabet,
    },
    /// Precomputed train / heldout files (MCD, COGS).
    FromFiles { train: PathBuf, heldout: PathBuf },
}

impl SplitSpec {
    pub fn by_name(name: &str) -> Result<SplitSpec> {
        match name {
            "jump" => Ok(SplitSpec::Jump { jump_copies: 1 }),
            "around_right" | "around-right" => Ok(SplitSpec::AroundRight),
            "dax" => Ok(SplitSpec::Dax {
                primitive: Primitive::action("dax", "DAX"),
                copies: 1,
                alphabet: TokenAlphabet::Short,
            }),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitSpec::Jump { .. } => "jump",
            SplitSpec::AroundRight => "around_right",
            SplitSpec::Dax { .. } => "dax",
            SplitSpec::FromFiles { .. } => "from_files",
        }
    }
}

fn is_standalone(e: &Example, token: &str) -> bool {
    e.source.len() == 1 && e.source[0] == token
}

fn contains_around_right(e: &Example, grammar: &Grammar) -> bool {
    e.source.windows(3).any(|w| {
        w[1] == "around"
            && w[2] == "right"
            && grammar
                .primitive(&w[0])
                .is_some_and(|p| p.kind == crate::scan::PrimitiveKind::Action)
    })
}

/// Partition a corpus into (train, heldout) according to `spec`.
pub fn build_split(all: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    match spec {
        SplitSpec::Jump { jump_copies } => {
            let mut train = Vec::new();
            let mut heldout = Vec::new();
            for e in all {
                if is_standalone(e, "jump") {
                    for _ in 0..(*jump_copies).max(1) {
                        train.push(e.clone());
                    }
                } else if e.source_contains("jump") {
                    heldout.push(e.clone());
                } else {
                    train.push(e.clone());
                }
            }
            Ok((Dataset::new(train), Dataset::new(heldout)))
        }
        SplitSpec::AroundRight => {
            let grammar = Grammar::scan(TokenAlphabet::Short);
            let (heldout, train): (Vec<Example>, Vec<Example>) = all
                .examples
                .iter()
                .cloned()
                .partition(|e| contains_around_right(e, &grammar));
            Ok((Dataset::new(train), Dataset::new(heldout)))
        }
        SplitSpec::Dax {
            primitive,
            copies,
            alphabet,
        } => {
            let (jump_train, _) = build_split(all, &SplitSpec::Jump { jump_copies: 1 })?;
            let train = add_standalone_primitive(&jump_train, primitive, *copies)?;
            let grammar = Grammar::scan(*alphabet).with_primitive(primitive.clone())?;
            let heldout = grammar
                .enumerate_commands()
                .examples
                .into_iter()
                .filter(|e| {
                    e.source_contains(&primitive.surface)
                        && !e.source_contains("jump")
                        && e.source.len() > 1
                })
                .collect();
            Ok((train, heldout))
        }
        SplitSpec::FromFiles { train, heldout } => Ok((
            read_dataset(train, FileFormat::from_path(train))?,
            read_dataset(heldout, FileFormat::from_path(heldout))?,
        )),
    }
}

/// Seeded Fisher–Yates shuffle of `heldout`, then the first
/// `round(dev_fraction * n)` examples become dev and the rest test.
pub fn resplit_dev_test(heldout: &Dataset, dev_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidFraction(dev_fraction));
    }
    if heldout.is_empty() {
        return Err(Error::EmptyHeldout);
    }
    let mut shuffled = heldout.examples.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (dev_fraction * heldout.len() as f64).round() as usize;
    let test = shuffled.split_off(n_dev);
    Ok((Dataset::new(shuffled), Dataset::new(test)))
}

/// Append `count` copies of the standalone example `surface -> target`.
pub fn add_standalone_primitive(train: &Dataset, prim: &Primitive, count: usize) -> Result<Dataset> {
    if train.iter().any(|e| e.source_contains(&prim.surface)) {
        return Err(Error::PrimitiveCollision(prim.surface.clone()));
    }
    if count == 0 {
        return Err(Error::Config("standalone primitive count must be positive".into()));
    }
    let mut out = train.clone();
    let example = Example::new(vec![prim.surface.clone()], vec![prim.target.clone()]);
    out.examples.extend(std::iter::repeat_n(example, count));
    Ok(out)
}

/// Number of examples whose source is exactly `token`.
pub fn standalone_count(dataset: &Dataset, token: &str) -> usize {
    dataset.iter().filter(|e| is_standalone(e, token)).count()
}

/// Examples of `a` whose source also occurs in `b`.
pub fn source_overlap(a: &Dataset, b: &Dataset) -> usize {
    let sources: HashSet<&Vec<String>> = b.iter().map(|e| &e.source).collect();
    a.iter().filter(|e| sources.contains(&e.source)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan() -> Dataset {
        Grammar::scan(TokenAlphabet::Short).enumerate_commands()
    }

    #[test]
    fn parses_scan_line() {
        let d = parse_dataset("IN: jump OUT: JUMP\n", FileFormat::ScanTxt, Path::new("x")).unwrap();
        assert_eq!(d.examples, vec![Example::from_strs("jump", "JUMP")]);
        let empty = parse_dataset("", FileFormat::ScanTxt, Path::new("x")).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_dataset("IN: jump\n", FileFormat::ScanTxt, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }), "{err}");
        let err = parse_dataset(
            "IN: walk OUT: WALK\nwalk WALK\n",
            FileFormat::ScanTxt,
            Path::new("x"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
        let err = parse_dataset("a\tb\tc\td\n", FileFormat::Tsv, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn tsv_with_tags() {
        let d = parse_dataset(
            "A rose was helped\tx y\tin_distribution\nthe dog\tdog\n",
            FileFormat::Tsv,
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(d.examples[0].tag.as_deref(), Some("in_distribution"));
        assert_eq!(d.examples[1].tag, None);
        let text = format_dataset(&d, FileFormat::Tsv);
        assert_eq!(text, "A rose was helped\tx y\tin_distribution\nthe dog\tdog\n");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = scan().subsample(0.01, 3);
        for format in [FileFormat::ScanTxt, FileFormat::Tsv] {
            let path = dir.path().join("d.txt");
            write_dataset(&d, &path, format).unwrap();
            assert_eq!(read_dataset(&path, format).unwrap(), d);
        }
    }

    #[test]
    fn jump_split() {
        let all = scan();
        let (train, heldout) = build_split(&all, &SplitSpec::Jump { jump_copies: 1 }).unwrap();
        assert_eq!(train.len() + heldout.len(), all.len());
        assert_eq!(heldout.len(), 7706);
        assert!(train.examples.contains(&Example::from_strs("jump", "JUMP")));
        assert!(heldout.iter().any(|e| e.source_str() == "jump around left"));
        assert!(train.iter().any(|e| e.source_str() == "walk around left"));
        assert!(heldout.iter().all(|e| e.source_contains("jump")));
        assert!(train
            .iter()
            .all(|e| !e.source_contains("jump") || is_standalone(e, "jump")));
        assert_eq!(source_overlap(&train, &heldout), 0);

        let (train3, _) = build_split(&all, &SplitSpec::Jump { jump_copies: 3 }).unwrap();
        assert_eq!(standalone_count(&train3, "jump"), 3);
    }

    #[test]
    fn around_right_split() {
        let all = scan();
        let (train, heldout) = build_split(&all, &SplitSpec::AroundRight).unwrap();
        assert_eq!(train.len() + heldout.len(), all.len());
        assert!(heldout.iter().any(|e| e.source_str() == "jump around right"));
        assert!(heldout
            .iter()
            .any(|e| e.source_str() == "walk left and turn around right twice"));
        assert!(train.iter().any(|e| e.source_str() == "jump around left"));
        assert!(train.iter().any(|e| e.source_str() == "walk right"));
        for e in &train {
            assert!(!e.source_str().contains("around right"), "{}", e.source_str());
        }
    }

    #[test]
    fn dax_split() {
        let all = scan();
        let spec = SplitSpec::Dax {
            primitive: Primitive::action("dax", "DAX"),
            copies: 2,
            alphabet: TokenAlphabet::Short,
        };
        let (train, heldout) = build_split(&all, &spec).unwrap();
        assert_eq!(standalone_count(&train, "dax"), 2);
        let hard = heldout
            .iter()
            .find(|e| e.source_str() == "dax around left twice")
            .unwrap();
        assert_eq!(hard.target_str(), "TL DAX TL DAX TL DAX TL DAX TL DAX TL DAX TL DAX TL DAX");
        // Same count as the compound jump commands.
        assert_eq!(heldout.len(), 7706);
    }

    #[test]
    fn unknown_split_name() {
        assert!(matches!(SplitSpec::by_name("mcd9"), Err(Error::UnknownSplit(_))));
    }

    #[test]
    fn resplit_sizes() {
        let d: Dataset = (0..100)
            .map(|i| Example::from_strs(&format!("w{i}"), "X"))
            .collect();
        let (dev, test) = resplit_dev_test(&d, 0.1, 7).unwrap();
        assert_eq!((dev.len(), test.len()), (10, 90));
        let (dev2, test2) = resplit_dev_test(&d, 0.1, 7).unwrap();
        assert_eq!(dev, dev2);
        assert_eq!(test, test2);
        let mut all: Vec<_> = dev.iter().chain(test.iter()).cloned().collect();
        all.sort_by_key(|e| e.source_str());
        let mut orig = d.examples.clone();
        orig.sort_by_key(|e| e.source_str());
        assert_eq!(all, orig);

        let two: Dataset = d.examples[..2].iter().cloned().collect();
        let (a, b) = resplit_dev_test(&two, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));

        assert!(matches!(
            resplit_dev_test(&Dataset::default(), 0.1, 1),
            Err(Error::EmptyHeldout)
        ));
        assert!(resplit_dev_test(&d, 1.0, 1).is_err());
    }

    #[test]
    fn standalone_primitive() {
        let all = scan();
        let (train, _) = build_split(&all, &SplitSpec::Jump { jump_copies: 1 }).unwrap();
        let k = standalone_count(&train, "jump");
        let dax = Primitive::action("dax", "DAX");
        let out = add_standalone_primitive(&train, &dax, k).unwrap();
        assert_eq!(out.len(), train.len() + k);
        assert_eq!(standalone_count(&out, "dax"), k);
        assert!(matches!(
            add_standalone_primitive(&train, &Primitive::action("walk", "WALK"), 1),
            Err(Error::PrimitiveCollision(_))
        ));
    }
}
