//! One toy-task training run with a short diagnostic summary.
//!
//! `cargo run --release -p compgen-core --example toy_trial -- <none|met|met_meta> <seed> <steps> <beta> [test|train|none] [dropout]`
//!
//! The last positional picks the checkpoint-selection set: a dev slice of the
//! test set, the training set, or none (final model).

use std::time::Instant;

use compgen::dataset::resplit_dev_test;
use compgen::nn::ModelConfig;
use compgen::toy::{generate_toy, ToyConfig};
use compgen::training::{dev_accuracy, train, MetaMode, TrainConfig};
use compgen::Dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode: MetaMode = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(MetaMode::None);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1000);
    let beta: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let select = args.get(5).map(String::as_str).unwrap_or("test");
    let dropout: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let task = generate_toy(&ToyConfig { seed, ..ToyConfig::default() }).unwrap();
    let (dev, test) = match select {
        "test" => resplit_dev_test(&task.test, 0.1, seed).unwrap(),
        "train" => (task.train.clone(), task.test.clone()),
        _ => (Dataset::default(), task.test.clone()),
    };
    let cfg = TrainConfig {
        meta_mode: mode,
        seed,
        total_steps: steps,
        warmup_steps: steps / 10,
        eval_every: 50,
        beta,
        ..TrainConfig::default()
    };
    let mcfg = ModelConfig { dropout, ..ModelConfig::default() };
    let t = Instant::now();
    let (model, log) = train(&task.train, &dev, &mcfg, &cfg, Some(&task.classes)).unwrap();
    let acc = dev_accuracy(&model, &test).unwrap();
    let gen: Dataset = test.iter().filter(|e| task.s1_gen.contains(&e.source[0])).cloned().collect();
    let gacc = dev_accuracy(&model, &gen).unwrap();
    let last = log.steps.last().unwrap();
    println!(
        "mode={mode} seed={seed} steps={steps} beta={beta} sel={select} drop={dropout} test={acc:.4} gen={gacc:.4} best_step={:?} dev={:?} last_mle={:.4} ul={:?} time={:.1}s",
        log.best_step, log.best_dev_accuracy, last.mle, last.ul, t.elapsed().as_secs_f64()
    );
    for e in &log.evals {
        print!("{}:{:.2} ", e.step, e.dev_accuracy);
    }
    println!();
    let mut shown = 0;
    for e in &gen {
        let d = model.greedy_decode(&e.source, 8).unwrap();
        if d.tokens != e.target && shown < 6 {
            println!("  {} => {} (gold {})", e.source_str(), d.tokens.join(" "), e.target_str());
            shown += 1;
        }
    }
}
