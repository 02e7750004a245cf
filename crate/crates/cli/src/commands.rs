use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use log::info;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use compgen::augment::prim2primx;
use compgen::dataset::{build_split, read_dataset, resplit_dev_test, write_dataset, FileFormat};
use compgen::eval::EvalReport;
use compgen::lexicon::induce_lexicon;
use compgen::nn::checkpoint::{self, CheckpointMeta};
use compgen::perturb::{induce_word_classes, make_negative_filtered, KnownPairs, WordClasses};
use compgen::toy::generate_toy;
use compgen::training::train;
use compgen::{Dataset, Error, Grammar, Lexicon};

use crate::config::RunConfig;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate the SCAN grammar, split it and resplit the heldout part into dev and test.
    GenScan {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write the synthetic two-bijection task.
    GenToy {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Align source and target primitives of a training set.
    InduceLexicon {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Lexicon file (`source<TAB>target`); printed to stdout when absent.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Add prim2primX copies to a training set.
    Augment {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Lexicon file; induced from the input when absent.
        #[arg(long, value_name = "FILE")]
        lexicon: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print sampled class-preserving perturbations of training inputs.
    PerturbPreview {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
    },
    /// Train a model and keep the checkpoint with the best dev accuracy.
    Train(TrainArgs),
    /// Decode a test set and classify every error.
    Evaluate(EvalArgs),
    /// Tabulate error classes of one or more evaluation runs.
    Report {
        /// Evaluation output directories or predictions.tsv files.
        #[arg(long = "in", value_name = "PATH", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Training set, for the seen-output rate and lexicon induction.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::GenScan { out } => gen_scan(cfg, &out),
        Command::GenToy { out } => gen_toy(cfg, &out),
        Command::InduceLexicon { input, out } => induce(cfg, &input, out.as_deref()),
        Command::Augment { input, lexicon, out } => augment(cfg, &input, lexicon.as_deref(), &out),
        Command::PerturbPreview { input } => perturb_preview(cfg, &input),
        Command::Train(args) => train_cmd(cfg, &args),
        Command::Evaluate(args) => evaluate(cfg, &args),
        Command::Report { inputs } => report(&inputs),
    }
}

fn load(path: &Path) -> Result<Dataset> {
    read_dataset(path, FileFormat::from_path(path)).with_context(|| format!("cannot load {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// `<path>.config.txt` beside a single-file output.
fn config_beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.txt");
    PathBuf::from(s)
}

fn gen_scan(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.split_spec()?;
    let all = Grammar::scan(cfg.alphabet()?).enumerate_commands();
    let (train_set, heldout) = build_split(&all, &spec)?;
    let (dev, test) = resplit_dev_test(&heldout, cfg.dev_fraction()?, cfg.seed())?;
    create_dir(out)?;
    write_dataset(&train_set, &out.join("train.txt"), FileFormat::ScanTxt)?;
    write_dataset(&dev, &out.join("dev.txt"), FileFormat::ScanTxt)?;
    write_dataset(&test, &out.join("test.txt"), FileFormat::ScanTxt)?;
    let mut meta = String::new();
    writeln!(meta, "# split={} commands={}", spec.name(), all.len())?;
    writeln!(meta, "# train={} dev={} test={}", train_set.len(), dev.len(), test.len())?;
    meta.push_str(&cfg.to_file_text());
    fs::write(out.join("meta.txt"), meta)?;
    println!(
        "{}: train {} / dev {} / test {} -> {}",
        spec.name(),
        train_set.len(),
        dev.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn gen_toy(cfg: &RunConfig, out: &Path) -> Result<()> {
    let task = generate_toy(&cfg.toy()?)?;
    let (dev, test) = resplit_dev_test(&task.test, cfg.dev_fraction()?, cfg.seed())?;
    create_dir(out)?;
    write_dataset(&task.train, &out.join("train.txt"), FileFormat::ScanTxt)?;
    write_dataset(&dev, &out.join("dev.txt"), FileFormat::ScanTxt)?;
    write_dataset(&test, &out.join("test.txt"), FileFormat::ScanTxt)?;
    fs::write(out.join("classes.tsv"), tag_map(&task.classes))?;
    let mut meta = String::new();
    writeln!(meta, "# train={} dev={} test={}", task.train.len(), dev.len(), test.len())?;
    let gen: Vec<&str> = task.s1_gen.iter().map(String::as_str).collect();
    writeln!(meta, "# s1_gen={}", gen.join(" "))?;
    meta.push_str(&cfg.to_file_text());
    fs::write(out.join("meta.txt"), meta)?;
    println!(
        "toy: train {} / dev {} / test {} -> {}",
        task.train.len(),
        dev.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn tag_map(classes: &WordClasses) -> String {
    let mut s = String::new();
    for (i, class) in classes.classes().iter().enumerate() {
        for tok in class {
            writeln!(s, "{tok}\tc{i}").unwrap();
        }
    }
    s
}

fn lexicon_for(cfg: &RunConfig, train_set: &Dataset, path: Option<&Path>) -> Result<Lexicon> {
    let lex = match path {
        Some(p) => Lexicon::read(p)?,
        None => induce_lexicon(train_set, &cfg.lexicon()?)?,
    };
    Ok(lex.with_kinds_from(&Grammar::scan(cfg.alphabet()?)))
}

fn induce(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<()> {
    let lex = induce_lexicon(&load(input)?, &cfg.lexicon()?)?;
    match out {
        Some(path) => {
            lex.write(path)?;
            fs::write(config_beside(path), cfg.to_file_text())?;
            println!("{} pairs -> {}", lex.len(), path.display());
        }
        None => print!("{}", lex.to_tsv()),
    }
    Ok(())
}

fn augment(cfg: &RunConfig, input: &Path, lexicon: Option<&Path>, out: &Path) -> Result<()> {
    let train_set = load(input)?;
    let lex = lexicon_for(cfg, &train_set, lexicon)?;
    let augmented = prim2primx(&train_set, &lex, &cfg.augment()?)?;
    write_dataset(&augmented, out, FileFormat::from_path(out))?;
    fs::write(config_beside(out), cfg.to_file_text())?;
    println!(
        "{} -> {} examples ({} lexicon pairs) -> {}",
        train_set.len(),
        augmented.len(),
        lex.len(),
        out.display()
    );
    Ok(())
}

fn word_classes(cfg: &RunConfig, train_set: &Dataset) -> Result<WordClasses> {
    let tagmap = cfg.tagmap();
    Ok(induce_word_classes(
        train_set,
        cfg.class_mode()?,
        tagmap.as_deref(),
        cfg.parse("perturb.min_context_count")?,
    )?)
}

fn perturb_preview(cfg: &RunConfig, input: &Path) -> Result<()> {
    let train_set = load(input)?;
    if train_set.is_empty() {
        bail!("{} holds no examples", input.display());
    }
    let classes = word_classes(cfg, &train_set)?;
    let known = KnownPairs::new(&train_set);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let k: usize = cfg.parse("perturb.k")?;
    let mut shown = 0;
    // Inputs without an eligible token are skipped; give up after a fixed
    // number of draws so a class-free corpus terminates.
    for _ in 0..k.saturating_mul(100) {
        if shown == k {
            break;
        }
        let e = train_set.examples.choose(&mut rng).expect("non-empty");
        match make_negative_filtered(&e.source, &classes, &mut rng, |x| known.is_negative_for(x, &e.target)) {
            Ok(x) => {
                println!("{}\t{}\t{}", e.source_str(), x.join(" "), e.target_str());
                shown += 1;
            }
            Err(Error::NoEligibleToken) => {}
            Err(other) => return Err(other.into()),
        }
    }
    if shown < k {
        eprintln!("only {shown} of {k} negatives found");
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let train_set = load(&args.train)?;
    let dev = load(&args.dev)?;
    let mut tcfg = cfg.train()?;
    tcfg.checkpoint_dir = Some(args.out.clone());
    create_dir(&args.out)?;
    fs::write(args.out.join("config.txt"), cfg.to_file_text())?;
    let classes = word_classes(cfg, &train_set)?;
    info!("training {} on {} examples", tcfg.meta_mode, train_set.len());
    let (model, log) = train(&train_set, &dev, &cfg.model()?, &tcfg, Some(&classes))?;
    let best = args.out.join("best.bin");
    if log.best_checkpoint.is_none() {
        let meta = CheckpointMeta {
            step: log.steps.len(),
            dev_accuracy: None,
            seed: tcfg.seed,
        };
        checkpoint::save(&model, &meta, &best)?;
    }
    fs::write(args.out.join("run.log"), log.to_text())?;
    match (log.best_step, log.best_dev_accuracy) {
        (Some(step), Some(acc)) => println!("best dev accuracy {:.4} at step {step} -> {}", acc, best.display()),
        _ => println!("no dev evaluation; model -> {}", best.display()),
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let test = load(&args.test)?;
    let train_set = match &args.train {
        Some(p) => load(p)?,
        None => Dataset::default(),
    };
    let lex = match (&args.lexicon, train_set.is_empty()) {
        (None, true) => Lexicon::default(),
        (path, _) => lexicon_for(cfg, &train_set, path.as_deref())?,
    };
    let sources: Vec<Vec<String>> = test.iter().map(|e| e.source.clone()).collect();
    let golds: Vec<Vec<String>> = test.iter().map(|e| e.target.clone()).collect();
    let decoded = model.greedy_decode_batch(&sources, model.config.max_decode_len)?;
    let overflow = decoded.iter().filter(|d| d.overflow).count();
    let preds: Vec<Vec<String>> = decoded.into_iter().map(|d| d.tokens).collect();
    let report = EvalReport::new(&preds, &golds, &lex, &train_set, cfg.parse("eval.consistent")?)?.with_overflow(overflow);

    create_dir(&args.out)?;
    let mut tsv = String::from("source\tgold\tprediction\tclass\n");
    for (((src, gold), pred), class) in sources.iter().zip(&golds).zip(&preds).zip(&report.classes) {
        writeln!(tsv, "{}\t{}\t{}\t{}", src.join(" "), gold.join(" "), pred.join(" "), class.as_str())?;
    }
    fs::write(args.out.join("predictions.tsv"), tsv)?;
    fs::write(args.out.join("report.tsv"), report.to_tsv())?;
    fs::write(args.out.join("report.txt"), report.to_text())?;
    fs::write(args.out.join("config.txt"), cfg.to_file_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(inputs: &[PathBuf]) -> Result<()> {
    println!("run\ttotal\taccuracy\tprimitive_error\tstructural_error\tprimitive_share");
    for input in inputs {
        let path = if input.is_dir() {
            input.join("predictions.tsv")
        } else {
            input.clone()
        };
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0;
        for (i, line) in text.lines().enumerate().skip(1) {
            let Some(class) = line.split('\t').nth(3) else {
                bail!("{}:{}: expected 4 tab-separated fields", path.display(), i + 1);
            };
            if !matches!(class, "correct" | "primitive_error" | "structural_error") {
                bail!("{}:{}: unknown error class {class:?}", path.display(), i + 1);
            }
            *counts.entry(class.to_string()).or_default() += 1;
            total += 1;
        }
        let n = |c: &str| counts.get(c).copied().unwrap_or(0);
        let rate = |x: usize, of: usize| if of == 0 { 0.0 } else { x as f64 / of as f64 };
        let wrong = n("primitive_error") + n("structural_error");
        println!(
            "{}\t{}\t{:.4}\t{}\t{}\t{:.4}",
            input.display(),
            total,
            rate(n("correct"), total),
            n("primitive_error"),
            n("structural_error"),
            rate(n("primitive_error"), wrong)
        );
    }
    Ok(())
}

