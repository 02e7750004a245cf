use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use compgen::augment::{prim2primx, AugmentConfig};
use compgen::dataset::{build_split, SplitSpec};
use compgen::lexicon::induce_lexicon;
use compgen::perturb::{induce_word_classes, ClassMode};
use compgen::{Grammar, LexiconConfig, TokenAlphabet};

fn data(c: &mut Criterion) {
    let grammar = Grammar::scan(TokenAlphabet::Short);
    c.bench_function("enumerate_commands", |b| b.iter(|| black_box(grammar.enumerate_commands())));

    let all = grammar.enumerate_commands();
    c.bench_function("parse_and_interpret_all", |b| {
        b.iter(|| {
            for e in all.iter() {
                black_box(compgen::scan::interpret(&grammar.parse_command(&e.source).unwrap()));
            }
        })
    });

    let (train, _) = build_split(&all, &SplitSpec::Jump { jump_copies: 1 }).unwrap();
    c.bench_function("induce_lexicon_strict_jump", |b| {
        b.iter(|| black_box(induce_lexicon(&train, &LexiconConfig::strict()).unwrap()))
    });

    let lex = induce_lexicon(&train, &LexiconConfig::strict()).unwrap();
    c.bench_function("prim2primx_jump", |b| {
        b.iter(|| black_box(prim2primx(&train, &lex, &AugmentConfig::scan(0)).unwrap()))
    });

    c.bench_function("word_classes_jump", |b| {
        b.iter(|| black_box(induce_word_classes(&train, ClassMode::Context, None, 1).unwrap()))
    });
}

criterion_group!(benches, data);
criterion_main!(benches);
