use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compgen::augment::{mutate_by, strip_mutation, unmutate};
use compgen::dataset::{build_split, format_dataset, parse_dataset, FileFormat, SplitSpec};
use compgen::eval::{classify_error, EvalReport, ErrorClass};
use compgen::lexicon::{induce_lexicon, verify_sufficiency, MaxFreq};
use compgen::nn::{Matrix, Scored, Tape};
use compgen::perturb::{induce_word_classes, make_negative_filtered, ClassMode, KnownPairs};
use compgen::scan::interpret;
use compgen::toy::{generate_toy, ToyConfig};
use compgen::training::{mle, ul_sentence, ul_word_avg, ul_word_min};
use compgen::{Dataset, Example, Grammar, Lexicon, LexiconConfig, TokenAlphabet};

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar::scan(TokenAlphabet::Short))
}

fn all_commands() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| grammar().enumerate_commands())
}

fn jump() -> &'static (Dataset, Dataset) {
    static S: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    S.get_or_init(|| build_split(all_commands(), &SplitSpec::Jump { jump_copies: 1 }).unwrap())
}

fn run(cmd: &str) -> Vec<String> {
    let toks: Vec<&str> = cmd.split_whitespace().collect();
    interpret(&grammar().parse_command(&toks).unwrap()).0
}

/// Conjunction-free commands, i.e. single clauses.
fn clauses() -> &'static Vec<String> {
    static C: OnceLock<Vec<String>> = OnceLock::new();
    C.get_or_init(|| {
        all_commands()
            .iter()
            .filter(|e| !e.source_contains("and") && !e.source_contains("after"))
            .map(|e| e.source_str())
            .collect()
    })
}

fn clause() -> impl Strategy<Value = &'static String> {
    (0..clauses().len()).prop_map(|i| &clauses()[i])
}

/// Clauses without a repetition modifier.
fn phrase() -> impl Strategy<Value = &'static String> {
    clause().prop_filter("already repeated", |c| !c.ends_with("twice") && !c.ends_with("thrice"))
}

fn token(alphabet: &'static [&'static str]) -> impl Strategy<Value = String> {
    proptest::sample::select(alphabet).prop_map(String::from)
}

const ACTIONS: [&str; 4] = ["walk", "run", "look", "jump"];
const TARGETS: [&str; 7] = ["TL", "TR", "WALK", "RUN", "LOOK", "JUMP", "X"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn enumerated_commands_round_trip(i in 0..20_910usize) {
        let e = &all_commands().examples[i];
        let program = grammar().parse_command(&e.source).unwrap();
        prop_assert_eq!(interpret(&program).0, e.target.clone());
        prop_assert_eq!(program.surface(), e.source.clone());
    }

    #[test]
    fn around_has_eight_actions(a in proptest::sample::select(&ACTIONS[..]), d in proptest::sample::select(&["left", "right"][..])) {
        prop_assert_eq!(run(&format!("{a} around {d}")).len(), 8);
    }

    #[test]
    fn repetition_multiplies_length(p in phrase()) {
        let n = run(p).len();
        prop_assert_eq!(run(&format!("{p} twice")).len(), 2 * n);
        prop_assert_eq!(run(&format!("{p} thrice")).len(), 3 * n);
    }

    #[test]
    fn after_swaps_order(p in clause(), q in clause()) {
        let and = run(&format!("{p} and {q}"));
        let after = run(&format!("{p} after {q}"));
        prop_assert_eq!(and.len(), after.len());
        prop_assert_eq!(after, run(&format!("{q} and {p}")));
    }

    #[test]
    fn dataset_text_round_trip(
        rows in prop::collection::vec(
            (prop::collection::vec("[a-z]{1,5}", 1..6), prop::collection::vec("[A-Z_]{1,5}", 1..6)),
            0..20,
        ),
        tsv in any::<bool>(),
    ) {
        let ds = Dataset::new(rows.into_iter().map(|(s, t)| Example::new(s, t)).collect());
        let format = if tsv { FileFormat::Tsv } else { FileFormat::ScanTxt };
        let back = parse_dataset(&format_dataset(&ds, format), format, Path::new("mem")).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn returned_lexicon_pairs_verify(seed in any::<u64>(), fraction in 0.05f64..0.5, strict in any::<bool>()) {
        let sub = jump().0.subsample(fraction, seed);
        let cfg = LexiconConfig { strict, ..LexiconConfig::strict() };
        let lex = induce_lexicon(&sub, &cfg).unwrap();
        prop_assert!(verify_sufficiency(&lex, &sub).is_empty());
    }

    #[test]
    fn wider_frequency_bounds_keep_pairs(seed in any::<u64>(), lo in 0usize..200, width in 0usize..2000, widen in 0usize..500) {
        let sub = jump().0.subsample(0.2, seed);
        let narrow = LexiconConfig { psi: 2, min_freq: lo + widen, max_freq: MaxFreq::Fixed(lo + widen + width), strict: false };
        let wide = LexiconConfig { min_freq: lo, max_freq: MaxFreq::Fixed(lo + 2 * widen + width), ..narrow.clone() };
        let a = induce_lexicon(&sub, &narrow).unwrap();
        let b = induce_lexicon(&sub, &wide).unwrap();
        for (v, w) in a.pairs() {
            prop_assert!(b.contains(v, w), "{v}:{w} lost");
        }
    }

    #[test]
    fn strict_lexicon_is_subset_of_relaxed(seed in any::<u64>(), psi in 1usize..4) {
        let sub = jump().0.subsample(0.2, seed);
        let relaxed = LexiconConfig { psi, ..LexiconConfig::strict() }.clone();
        let relaxed = LexiconConfig { strict: false, ..relaxed };
        let strict = LexiconConfig { strict: true, ..relaxed.clone() };
        let a = induce_lexicon(&sub, &strict).unwrap();
        let b = induce_lexicon(&sub, &relaxed).unwrap();
        for (v, w) in a.pairs() {
            prop_assert!(b.contains(v, w));
        }
    }

    #[test]
    fn mutation_is_consistent_and_reversible(i in 0..13_204usize, draws in prop::collection::vec(0usize..6, 8)) {
        let lex = strict_lexicon();
        let e = &jump().0.examples[i % jump().0.len()];
        let mut it = draws.into_iter().cycle();
        let m = mutate_by(e, lex, || it.next().unwrap());
        prop_assert_eq!(&unmutate(&m, lex), e);
        prop_assert_eq!(m.source.len(), e.source.len());
        prop_assert_eq!(m.target.len(), e.target.len());
        // Each base token gets one suffix everywhere, on both sides.
        let mut suffix: BTreeMap<&str, &str> = BTreeMap::new();
        let targets = lex.target_tokens();
        for (orig, tok) in e.source.iter().zip(&m.source) {
            prop_assert_eq!(strip_mutation(tok, |s| lex.is_source(s)), orig.as_str());
            let s = &tok[orig.len()..];
            prop_assert_eq!(*suffix.entry(orig).or_insert(s), s);
            for w in lex.targets(orig) {
                for (g, t) in e.target.iter().zip(&m.target) {
                    if g == w {
                        prop_assert_eq!(&t[g.len()..], s);
                    }
                }
            }
        }
        for t in &m.target {
            prop_assert!(targets.contains(strip_mutation(t, |s| targets.contains(s))));
        }
        // No compound command mentions the held-out primitive.
        if m.source.len() > 1 {
            prop_assert!(!m.source.iter().any(|t| t == "jump"));
        }
    }

    #[test]
    fn negatives_parse_and_change_meaning(i in 0..13_204usize, seed in any::<u64>()) {
        let (train, _) = jump();
        let classes = jump_classes();
        let e = &train.examples[i % train.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // "walk and walk" and "walk after walk" mean the same; the training-set
        // filter is what rules such swaps out.
        let known = KnownPairs::new(train);
        if let Ok(x) = make_negative_filtered(&e.source, classes, &mut rng, |x| known.is_negative_for(x, &e.target)) {
            prop_assert_eq!(x.len(), e.source.len());
            prop_assert_eq!(x.iter().zip(&e.source).filter(|(a, b)| a != b).count(), 1);
            let p = grammar().parse_command(&x).unwrap();
            prop_assert_ne!(interpret(&p).0, e.target.clone());
        }
    }

    #[test]
    fn losses_are_ordered_and_nonnegative(
        rows in prop::collection::vec(prop::collection::vec(-20.0f64..-1e-9, 1..6), 1..5),
    ) {
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let flat: Vec<f64> = rows.concat();
        let tape = Tape::new();
        let lp = tape.leaf(Matrix::from_shape_vec((flat.len(), 1), flat).unwrap());
        let scored = Scored::from_per_token(lp, lengths);
        let (m, s, lo, avg) = (mle(&scored).item(), ul_sentence(&scored).item(), ul_word_min(&scored).item(), ul_word_avg(&scored).item());
        for v in [m, s, lo, avg] {
            prop_assert!(v >= 0.0 && v.is_finite());
        }
        prop_assert!(s <= lo + 1e-12, "sentence {s} > min {lo}");
        prop_assert!(lo <= avg + 1e-12, "min {lo} > avg {avg}");
    }

    #[test]
    fn error_classes_partition(
        pairs in prop::collection::vec(
            (prop::collection::vec(token(&TARGETS), 0..6), prop::collection::vec(token(&TARGETS), 1..6)),
            1..30,
        ),
        consistent in any::<bool>(),
    ) {
        let lex = taxonomy_lexicon();
        let (preds, golds): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let rep = EvalReport::new(&preds, &golds, lex, &Dataset::default(), consistent).unwrap();
        prop_assert_eq!(rep.correct + rep.primitive_error + rep.structural_error, rep.total);
        prop_assert_eq!(rep.total, preds.len());
        prop_assert!((0.0..=1.0).contains(&rep.accuracy) && (0.0..=1.0).contains(&rep.seen_output_rate));
        for ((p, g), c) in preds.iter().zip(&golds).zip(&rep.classes) {
            prop_assert_eq!(*c, classify_error(p, g, lex, consistent));
            prop_assert_eq!(*c == ErrorClass::Correct, p == g);
            if *c == ErrorClass::Primitive {
                prop_assert_eq!(p.len(), g.len());
            }
        }
    }

    #[test]
    fn toy_task_is_bijective(seed in any::<u64>(), s1 in 4usize..24, s2 in 1usize..12, gen in 0.25f64..0.6) {
        let task = generate_toy(&ToyConfig { seed, size_s1: s1, size_s2: s2, gen_fraction: gen }).unwrap();
        let mut meaning: BTreeMap<&str, &str> = BTreeMap::new();
        let mut seen_targets: BTreeSet<&str> = BTreeSet::new();
        for e in task.train.iter().chain(task.test.iter()) {
            for (x, y) in e.source.iter().zip(&e.target) {
                prop_assert_eq!(*meaning.entry(x).or_insert(y), y.as_str());
            }
        }
        for y in meaning.values() {
            prop_assert!(seen_targets.insert(y), "{y} has two sources");
        }
        prop_assert_eq!(meaning.len(), s1 + s2);
        for e in task.test.iter().filter(|e| task.s1_gen.contains(&e.source[0])) {
            prop_assert!(!task.train.iter().any(|t| t.source == e.source));
        }
    }
}

fn strict_lexicon() -> &'static Lexicon {
    static L: OnceLock<Lexicon> = OnceLock::new();
    L.get_or_init(|| induce_lexicon(&jump().0, &LexiconConfig::strict()).unwrap())
}

fn jump_classes() -> &'static compgen::perturb::WordClasses {
    static C: OnceLock<compgen::perturb::WordClasses> = OnceLock::new();
    C.get_or_init(|| induce_word_classes(&jump().0, ClassMode::Context, None, 1).unwrap())
}

fn taxonomy_lexicon() -> &'static Lexicon {
    static L: OnceLock<Lexicon> = OnceLock::new();
    L.get_or_init(|| {
        Lexicon::from_pairs(
            [("walk", "WALK"), ("run", "RUN"), ("look", "LOOK"), ("jump", "JUMP"), ("left", "TL"), ("right", "TR")]
                .map(|(a, b)| (a.to_string(), b.to_string())),
        )
        .with_kinds_from(grammar())
    })
}
