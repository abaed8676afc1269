use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nonar_mmi::app::{load_system, CHECKPOINT_FILE};
use nonar_mmi::config::RunConfig;
use nonar_mmi::decoding::{ar_greedy, read_dump};
use nonar_mmi::metrics::MetricsReport;

const BASE: &str = "data.source = copy
data.vocab_size = 6
data.min_len = 2
data.max_len = 3
data.n_train = 200
data.n_dev = 10
data.n_test = 8
model.d_model = 8
model.heads = 2
model.d_ff = 16
model.blocks = 1
model.max_positions = 16
train.steps = 10
train.batch_tokens = 60
decode.n_best = 3
decode.k_tok = 2
decode.length_candidates = 2
decode.beam = 3
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonar-mmi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

/// Writes a config with `extra` lines appended and trains it.
fn trained(dir: &Path, extra: &str) -> String {
    let cfg = dir.join("run.txt");
    fs::write(&cfg, format!("{BASE}{extra}out.dir = {}\n", dir.join("out").display())).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{:?}", text(&o));
    cfg.to_str().unwrap().to_owned()
}

#[test]
fn train_decode_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), "");
    let out = dir.path().join("out");
    for f in [CHECKPOINT_FILE, "vocab.txt", "config.txt", "train.log", "test.tsv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let dump = dir.path().join("d.tsv");
    let o = run(&["decode", "--config", &cfg, "--out", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{:?}", text(&o));
    assert_eq!(read_dump(&dump).unwrap().len(), 8);
    let o = run(&["eval", "--dump", dump.to_str().unwrap(), "--refs", out.join("test.tsv").to_str().unwrap()]);
    assert!(o.status.success());
    let (stdout, _) = text(&o);
    for k in MetricsReport::KEYS {
        assert!(stdout.contains(&format!("{k}=")), "{stdout}");
    }
    assert!(MetricsReport::parse(&stdout).is_ok());
}

#[test]
fn config_is_read_from_the_checkpoint_directory() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "");
    let ckpt = dir.path().join("out").join(CHECKPOINT_FILE);
    let dump = dir.path().join("d.tsv");
    let o = run(&["decode", "--checkpoint", ckpt.to_str().unwrap(), "--mode", "ar", "--out", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{:?}", text(&o));
    assert_eq!(read_dump(&dump).unwrap().len(), 8);
}

#[test]
fn width_one_beam_dump_is_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), "decode.beam = 1\ndecode.max_len_offset = 2\n");
    let dump = dir.path().join("d.tsv");
    let o = run(&["decode", "--config", &cfg, "--mode", "ar", "--out", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{:?}", text(&o));
    let rc = RunConfig::load(Path::new(&cfg)).unwrap();
    let sys = load_system(&rc, &dir.path().join("out").join(CHECKPOINT_FILE)).unwrap();
    for rec in read_dump(&dump).unwrap() {
        let x = sys.vocab.encode(&rec.input);
        let g = ar_greedy(&sys.ar_forward, &sys.store, &x, x.len() + 2).unwrap();
        assert_eq!(rec.output, sys.vocab.decode(&g.tokens));
        assert!((rec.total - g.logprob).abs() < 1e-5);
    }
}

#[test]
fn lambda_is_ignored_with_a_warning_for_forward_only_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), "");
    let dump = dir.path().join("d.tsv");
    let o = run(&["decode", "--config", &cfg, "--mode", "nonar", "--lambda", "0.9", "--out", dump.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(text(&o).1.contains("ignoring lambda"), "{:?}", text(&o));
}

#[test]
fn sweep_reports_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path(), "");
    let o = run(&["eval", "--sweep", "--config", &cfg, "--mode", "ar+mmi", "--sweep-metric", "distinct2"]);
    assert!(o.status.success(), "{:?}", text(&o));
    let (stdout, _) = text(&o);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("lambda=")).count(), 11);
    assert!(stdout.lines().last().unwrap().starts_with("best_lambda="));
}

#[test]
fn oracle_passes_and_catches_a_wrong_tie_break() {
    let dir = tempfile::tempdir().unwrap();
    // an all-zero model makes every score tie
    let cfg = trained(dir.path(), "train.steps = 0\ntrain.init_scale = 0\n");
    let o = run(&["oracle", "--config", &cfg, "--limit", "5"]);
    assert_eq!(o.status.code(), Some(0), "{:?}", text(&o));
    assert!(text(&o).0.starts_with("oracle: PASS"));
    let o = run(&["oracle", "--config", &cfg, "--limit", "5", "--corrupt-tie-break"]);
    assert_eq!(o.status.code(), Some(3));
    let (stdout, _) = text(&o);
    assert!(stdout.contains("oracle: FAIL") && stdout.contains("first mismatch"), "{stdout}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "model.d_model = 7\nmodel.heads = 2\n").unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    fs::write(&bad, "no.such.key = 1\n").unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("nowhere").join(CHECKPOINT_FILE);
    let o = run(&["decode", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{:?}", text(&o));
    let dump = dir.path().join("d.tsv");
    let refs = dir.path().join("r.txt");
    fs::write(&dump, "").unwrap();
    fs::write(&refs, "a\nb\n").unwrap();
    let o = run(&["eval", "--dump", dump.to_str().unwrap(), "--refs", refs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("error:"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
