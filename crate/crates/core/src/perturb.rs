//! Grammatical word classes and class-preserving single-token perturbation,
//! used to build the negative inputs for mutual-exclusivity training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::augment::strip_mutation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const BOS_CONTEXT: &str = "<s>";
pub const EOS_CONTEXT: &str = "</s>";

type Context = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassMode {
    /// Tokens with identical sets of (left, right) neighbours share a class.
    Context,
    /// Classes read from a `token<TAB>tag` file.
    TagMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordClasses {
    classes: Vec<BTreeSet<String>>,
    class_of: HashMap<String, usize>,
    context_index: BTreeMap<String, BTreeSet<Context>>,
}

impl WordClasses {
    pub fn from_groups(groups: impl IntoIterator<Item = BTreeSet<String>>) -> Self {
        let mut classes: Vec<BTreeSet<String>> = Vec::new();
        let mut class_of = HashMap::new();
        for group in groups {
            if group.is_empty() {
                continue;
            }
            let id = classes.len();
            for t in &group {
                // A token claimed twice stays with its first class.
                class_of.entry(t.clone()).or_insert(id);
            }
            let members: BTreeSet<String> = group.into_iter().filter(|t| class_of[t] == id).collect();
            if !members.is_empty() {
                classes.push(members);
            }
        }
        WordClasses {
            classes,
            class_of,
            context_index: BTreeMap::new(),
        }
    }

    pub fn classes(&self) -> &[BTreeSet<String>] {
        &self.classes
    }

    pub fn class_of(&self, token: &str) -> Option<&BTreeSet<String>> {
        self.class_of.get(token).map(|&i| &self.classes[i])
    }

    pub fn contexts(&self, token: &str) -> Option<&BTreeSet<Context>> {
        self.context_index.get(token)
    }

    /// Add every token of `vocab` that is a suffixed variant (`walk3`) of a
    /// classed token to that token's class.
    pub fn absorb_mutations<'a>(&mut self, vocab: impl IntoIterator<Item = &'a String>) {
        for token in vocab {
            if self.class_of.contains_key(token) {
                continue;
            }
            let stem = strip_mutation(token, |s| self.class_of.contains_key(s));
            if stem != token {
                let id = self.class_of[stem];
                self.classes[id].insert(token.clone());
                self.class_of.insert(token.clone(), id);
            }
        }
    }
}

/// Induce word classes over the source side of `train`.
///
/// In context mode, suffixed variants of other tokens (`walk0`) are collapsed
/// onto their stem before contexts are collected and then rejoin the stem's
/// class. Context pairs seen fewer than `min_context_count` times for a token
/// are ignored.
pub fn induce_word_classes(
    train: &Dataset,
    mode: ClassMode,
    tagmap: Option<&Path>,
    min_context_count: usize,
) -> Result<WordClasses> {
    match mode {
        ClassMode::TagMap => {
            let path = tagmap.ok_or(Error::MissingTagMap)?;
            read_tag_map(path)
        }
        ClassMode::Context => Ok(context_classes(train, min_context_count)),
    }
}

fn context_classes(train: &Dataset, min_context_count: usize) -> WordClasses {
    let vocab = train.source_vocab();
    let stem = |t: &str| -> String { strip_mutation(t, |s| vocab.contains(s)).to_string() };

    let mut counts: BTreeMap<String, BTreeMap<Context, usize>> = BTreeMap::new();
    for e in train {
        let toks: Vec<String> = e.source.iter().map(|t| stem(t)).collect();
        for i in 0..toks.len() {
            let left = if i == 0 { BOS_CONTEXT.to_string() } else { toks[i - 1].clone() };
            let right = toks.get(i + 1).cloned().unwrap_or_else(|| EOS_CONTEXT.to_string());
            *counts
                .entry(toks[i].clone())
                .or_default()
                .entry((left, right))
                .or_insert(0) += 1;
        }
    }
    let context_index: BTreeMap<String, BTreeSet<Context>> = counts
        .into_iter()
        .map(|(tok, ctx)| {
            let kept = ctx
                .into_iter()
                .filter(|(_, n)| *n >= min_context_count.max(1))
                .map(|(c, _)| c)
                .collect();
            (tok, kept)
        })
        .collect();

    let mut groups: BTreeMap<&BTreeSet<Context>, BTreeSet<String>> = BTreeMap::new();
    for (tok, ctx) in &context_index {
        groups.entry(ctx).or_default().insert(tok.clone());
    }
    let mut classes = WordClasses::from_groups(groups.into_values());
    classes.context_index = context_index;
    classes.absorb_mutations(vocab.iter());
    classes
}

pub fn read_tag_map(path: &Path) -> Result<WordClasses> {
    let text = fs::read_to_string(path)?;
    parse_tag_map(&text, path)
}

pub fn parse_tag_map(text: &str, path: &Path) -> Result<WordClasses> {
    let mut by_tag: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>().as_slice() {
            [tok, tag] if !tok.is_empty() && !tag.is_empty() => {
                by_tag.entry(tag.to_string()).or_default().insert(tok.to_string());
            }
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `token<TAB>tag`".into(),
                })
            }
        }
    }
    Ok(WordClasses::from_groups(by_tag.into_values()))
}

/// Replace one token of `x` by another member of its class.
///
/// The position is uniform over positions whose class has another member; the
/// replacement is uniform over the rest of the class.
pub fn make_negative(x: &[String], classes: &WordClasses, rng: &mut impl Rng) -> Result<Vec<String>> {
    make_negative_filtered(x, classes, rng, |_| true)
}

/// [`make_negative`] restricted to candidates accepted by `accept`.
///
/// Candidates are enumerated up front, so the choice stays uniform (position
/// first, then replacement) over the accepted set.
pub fn make_negative_filtered(
    x: &[String],
    classes: &WordClasses,
    rng: &mut impl Rng,
    accept: impl Fn(&[String]) -> bool,
) -> Result<Vec<String>> {
    let mut options: Vec<(usize, Vec<&String>)> = Vec::new();
    let mut candidate = x.to_vec();
    for (pos, tok) in x.iter().enumerate() {
        let Some(class) = classes.class_of(tok) else {
            continue;
        };
        let mut ok = Vec::new();
        for alt in class.iter().filter(|a| *a != tok) {
            candidate[pos] = alt.clone();
            if accept(&candidate) {
                ok.push(alt);
            }
        }
        candidate[pos] = tok.clone();
        if !ok.is_empty() {
            options.push((pos, ok));
        }
    }
    if options.is_empty() {
        return Err(Error::NoEligibleToken);
    }
    let (pos, alts) = &options[rng.random_range(0..options.len())];
    let mut out = x.to_vec();
    out[*pos] = alts[rng.random_range(0..alts.len())].clone();
    Ok(out)
}

/// Acceptance filter rejecting perturbations that are themselves known
/// inputs for the same target, which would make the negative a positive.
pub struct KnownPairs<'a> {
    targets: HashMap<&'a [String], Vec<&'a [String]>>,
}

impl<'a> KnownPairs<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        let mut targets: HashMap<&[String], Vec<&[String]>> = HashMap::new();
        for e in data {
            targets.entry(e.source.as_slice()).or_default().push(e.target.as_slice());
        }
        KnownPairs { targets }
    }

    /// True when `x` is not known to map to `y`.
    pub fn is_negative_for(&self, x: &[String], y: &[String]) -> bool {
        self.targets.get(x).is_none_or(|ts| ts.iter().all(|t| *t != y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Example;
    use crate::scan::{Grammar, TokenAlphabet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn scan_left_right_share_class() {
        let all = Grammar::scan(TokenAlphabet::Short).enumerate_commands();
        let wc = induce_word_classes(&all, ClassMode::Context, None, 1).unwrap();
        assert_eq!(wc.class_of("left"), Some(&set(&["left", "right"])));
        assert_eq!(wc.class_of("walk"), Some(&set(&["jump", "look", "run", "walk"])));
        assert_eq!(wc.class_of("twice"), Some(&set(&["thrice", "twice"])));
        assert_eq!(wc.class_of("turn"), Some(&set(&["turn"])));
        assert_eq!(wc.contexts("left"), wc.contexts("right"));
    }

    #[test]
    fn single_example_gives_singletons() {
        let d = Dataset::new(vec![Example::from_strs("a b", "A B")]);
        let wc = induce_word_classes(&d, ClassMode::Context, None, 1).unwrap();
        assert_eq!(wc.classes(), &[set(&["a"]), set(&["b"])]);
    }

    #[test]
    fn tag_map_groups() {
        let wc = parse_tag_map("walk\tV\nrun\tV\nleft\tD\n", Path::new("t")).unwrap();
        assert_eq!(wc.class_of("run"), Some(&set(&["run", "walk"])));
        assert_eq!(wc.class_of("left"), Some(&set(&["left"])));
        assert!(parse_tag_map("walk V\n", Path::new("t")).is_err());
        assert!(matches!(
            induce_word_classes(&Dataset::default(), ClassMode::TagMap, None, 1),
            Err(Error::MissingTagMap)
        ));
    }

    #[test]
    fn mutated_tokens_join_their_stem() {
        let d = Dataset::new(vec![
            Example::from_strs("walk left", "TL WALK"),
            Example::from_strs("run left", "TL RUN"),
            Example::from_strs("walk0 left", "TL WALK0"),
            Example::from_strs("walk", "WALK"),
            Example::from_strs("run", "RUN"),
        ]);
        let wc = induce_word_classes(&d, ClassMode::Context, None, 1).unwrap();
        assert_eq!(wc.class_of("walk0"), Some(&set(&["run", "walk", "walk0"])));
    }

    #[test]
    fn hapax_contexts_can_be_ignored() {
        let d = Dataset::new(vec![
            Example::from_strs("a x", "A"),
            Example::from_strs("a x", "A"),
            Example::from_strs("b x", "B"),
            Example::from_strs("b x", "B"),
            Example::from_strs("b y", "B"),
        ]);
        let strict = induce_word_classes(&d, ClassMode::Context, None, 1).unwrap();
        assert_ne!(strict.class_of("a"), strict.class_of("b"));
        let loose = induce_word_classes(&d, ClassMode::Context, None, 2).unwrap();
        assert_eq!(loose.class_of("a"), Some(&set(&["a", "b"])));
    }

    #[test]
    fn negative_examples() {
        let wc = WordClasses::from_groups([set(&["walk", "run"])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(make_negative(&toks("walk"), &wc, &mut rng).unwrap(), toks("run"));
        assert!(matches!(
            make_negative(&toks("and"), &wc, &mut rng),
            Err(Error::NoEligibleToken)
        ));

        let wc = WordClasses::from_groups([set(&["walk", "run", "look", "jump"])]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let neg = make_negative(&toks("jump left twice"), &wc, &mut rng).unwrap();
            assert_eq!(&neg[1..], &toks("left twice")[..]);
            assert!(["walk", "run", "look"].contains(&neg[0].as_str()));
        }
    }

    #[test]
    fn known_pairs_filter() {
        let d = Dataset::new(vec![
            Example::from_strs("walk and walk", "WALK WALK"),
            Example::from_strs("walk after walk", "WALK WALK"),
        ]);
        let known = KnownPairs::new(&d);
        let wc = WordClasses::from_groups([set(&["and", "after"])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = toks("walk and walk");
        let y = toks("WALK WALK");
        let r = make_negative_filtered(&x, &wc, &mut rng, |c| known.is_negative_for(c, &y));
        assert!(matches!(r, Err(Error::NoEligibleToken)));
        assert!(known.is_negative_for(&toks("walk after walk"), &toks("WALK")));
    }
}
