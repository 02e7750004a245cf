use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn compgen(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_compgen"));
    cmd.args(args).env_remove("COMPGEN_SEED");
    if let Some(s) = env_seed {
        cmd.env("COMPGEN_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = compgen(args, None);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_scan_writes_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("jump");
    ok(&["gen-scan", "--split", "jump", "--dev-fraction", "0.1", "--seed", "1", "--out", p(&out)]);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["dev.txt", "meta.txt", "test.txt", "train.txt"]);
    let heldout = lines(&out.join("dev.txt")) + lines(&out.join("test.txt"));
    assert_eq!(heldout, 7706);
    assert_eq!(lines(&out.join("dev.txt")), 771);
    let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("seed=1  # flag"));
    assert!(meta.contains("data.dev_fraction=0.1  # flag"));
}

#[test]
fn gen_scan_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["gen-scan", "--seed", "4", "--out", p(&a)]);
    ok(&["gen-scan", "--seed", "4", "--out", p(&b)]);
    ok(&["gen-scan", "--seed", "5", "--out", p(&c)]);
    for f in ["train.txt", "dev.txt", "test.txt", "meta.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("dev.txt")).unwrap(), fs::read(c.join("dev.txt")).unwrap());
}

#[test]
fn env_seed_is_lowest_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (env, flag, cfgd) = (dir.path().join("env"), dir.path().join("flag"), dir.path().join("cfg"));
    let out = compgen(&["gen-scan", "--out", p(&env)], Some("4"));
    assert_eq!(out.status.code(), Some(0));
    let meta = fs::read_to_string(env.join("meta.txt")).unwrap();
    assert!(meta.contains("seed=4  # env"), "{meta}");

    let out = compgen(&["gen-scan", "--seed", "6", "--out", p(&flag)], Some("4"));
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(flag.join("meta.txt")).unwrap().contains("seed=6  # flag"));

    let file = dir.path().join("run.cfg");
    fs::write(&file, "seed=7\ndata.split=around_right\n").unwrap();
    let out = compgen(&["gen-scan", "--config", p(&file), "--out", p(&cfgd)], Some("4"));
    assert_eq!(out.status.code(), Some(0));
    let meta = fs::read_to_string(cfgd.join("meta.txt")).unwrap();
    assert!(meta.contains("seed=7  # file"));
    assert!(meta.contains("data.split=around_right  # file"));
}

#[test]
fn strict_lexicon_on_jump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("jump");
    ok(&["gen-scan", "--out", p(&data)]);
    let lex = dir.path().join("lex.tsv");
    ok(&["induce-lexicon", "--in", p(&data.join("train.txt")), "--strict", "--out", p(&lex)]);
    let text = fs::read_to_string(&lex).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().any(|l| l == "run\tRUN"));
    assert!(text.lines().any(|l| l == "jump\tJUMP"));
    assert!(dir.path().join("lex.tsv.config.txt").exists());
}

#[test]
fn usage_errors_exit_one_with_synopsis() {
    for args in [
        vec!["frobnicate"],
        vec![],
        vec!["gen-scan"],
        vec!["gen-scan", "--out", "x", "--model.width", "3"],
    ] {
        let out = compgen(&args, None);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("Usage:"), "{args:?}: {err}");
    }
}

#[test]
fn user_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let missing = dir.path().join("missing.txt");
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "model.width=3\n").unwrap();
    for args in [
        vec!["gen-scan", "--split", "nope", "--out", p(&out)],
        vec!["gen-scan", "--dev-fraction", "1.5", "--out", p(&out)],
        vec!["induce-lexicon", "--in", p(&missing)],
        vec!["gen-scan", "--config", p(&bad_cfg), "--out", p(&out)],
    ] {
        let res = compgen(&args, None);
        assert_eq!(res.status.code(), Some(1), "{args:?}");
        assert!(!res.stderr.is_empty());
    }
}

#[test]
fn help_exits_zero() {
    let out = compgen(&["--help"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gen-scan") && text.contains("model.hidden_dim"));
}

#[test]
fn augment_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("jump");
    ok(&["gen-scan", "--out", p(&data)]);
    let train = data.join("train.txt");
    let aug = dir.path().join("aug.txt");
    ok(&["augment", "--in", p(&train), "--strict", "--augment.n", "5", "--out", p(&aug)]);
    let n = lines(&train);
    let m = lines(&aug);
    assert!(m > n && m <= 2 * n, "{n} -> {m}");

    let preview = ok(&["perturb-preview", "--in", p(&train), "--k", "5", "--seed", "2"]);
    let rows: Vec<&str> = preview.lines().collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let f: Vec<&str> = row.split('\t').collect();
        let (x, xt): (Vec<&str>, Vec<&str>) = (f[0].split(' ').collect(), f[1].split(' ').collect());
        assert_eq!(x.len(), xt.len());
        assert_eq!(x.iter().zip(&xt).filter(|(a, b)| a != b).count(), 1);
    }
    assert_eq!(preview, ok(&["perturb-preview", "--in", p(&train), "--k", "5", "--seed", "2"]));
}

const TINY: [&str; 18] = [
    "--model.layers",
    "1",
    "--model.hidden_dim",
    "16",
    "--model.embed_dim",
    "16",
    "--model.heads",
    "2",
    "--model.ff_dim",
    "32",
    "--train.total_steps",
    "12",
    "--train.warmup_steps",
    "4",
    "--train.eval_every",
    "6",
    "--train.batch_size",
    "8",
];

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    ok(&["gen-toy", "--seed", "3", "--out", p(&data)]);
    assert_eq!(lines(&data.join("train.txt")), 170);
    assert_eq!(lines(&data.join("dev.txt")) + lines(&data.join("test.txt")), 200);

    let (train, dev, tags) = (data.join("train.txt"), data.join("dev.txt"), data.join("classes.tsv"));
    let mut runs = Vec::new();
    for name in ["run_a", "run_b"] {
        let run = dir.path().join(name);
        let mut args = vec![
            "train",
            "--train",
            p(&train),
            "--dev",
            p(&dev),
            "--out",
            p(&run),
            "--seed",
            "3",
            "--meta-mode",
            "met",
            "--perturb.class_mode",
            "tagmap",
            "--perturb.tagmap",
            p(&tags),
        ];
        args.extend(TINY);
        ok(&args);
        for f in ["best.bin", "best.bin.meta", "run.log", "config.txt"] {
            assert!(run.join(f).exists(), "{f}");
        }
        runs.push(run);
    }
    assert_eq!(
        fs::read(runs[0].join("run.log")).unwrap(),
        fs::read(runs[1].join("run.log")).unwrap()
    );
    let log = fs::read_to_string(runs[0].join("run.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("step=")).count(), 12);
    assert_eq!(log.lines().filter(|l| l.starts_with("eval ")).count(), 2);

    let eval = dir.path().join("eval");
    let stdout = ok(&[
        "evaluate",
        "--checkpoint",
        p(&runs[0].join("best.bin")),
        "--test",
        p(&data.join("test.txt")),
        "--train",
        p(&data.join("train.txt")),
        "--out",
        p(&eval),
    ]);
    assert!(stdout.contains("exact match"));
    let preds = fs::read_to_string(eval.join("predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + lines(&data.join("test.txt")));
    for f in ["report.tsv", "report.txt", "config.txt"] {
        assert!(eval.join(f).exists(), "{f}");
    }

    let table = ok(&["report", "--in", p(&eval)]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2);
    let f: Vec<&str> = rows[1].split('\t').collect();
    let total: usize = f[1].parse().unwrap();
    assert_eq!(total, lines(&data.join("test.txt")));
}

#[test]
fn library_entry_point() {
    assert_eq!(compgen_cli::run(["compgen", "no-such-command"]), compgen_cli::EXIT_USER);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    assert_eq!(
        compgen_cli::run(["compgen", "gen-toy", "--toy.size_s1", "8", "--out", p(&out)]),
        compgen_cli::EXIT_OK
    );
    assert_eq!(lines(&out.join("train.txt")), 8 + 6 * 10);
}
