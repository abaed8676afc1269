mod common;

use std::fs;
use std::path::Path;

use nonar_mmi::app::{self, batch_for_step, cmd_decode, cmd_eval, cmd_train, load_data, load_system, read_references, Trainer};
use nonar_mmi::config::{DataSource, RunConfig};
use nonar_mmi::data::Task;
use nonar_mmi::decoding::{read_dump, Mode};
use nonar_mmi::metrics::StopwordList;
use nonar_mmi::transformer::BlockConfig;
use nonar_mmi::Error;

fn small(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.source = DataSource::Synthetic(Task::Copy);
    c.data.vocab_size = 8;
    c.data.min_len = 2;
    c.data.max_len = 4;
    c.data.n_train = 100;
    c.data.n_dev = 10;
    c.data.n_test = 10;
    c.model = BlockConfig::tiny();
    c.train.batch_tokens = 40;
    c.train.steps = 6;
    c.train.checkpoint_every = 3;
    c.decode.beam = 3;
    c.decode.n_best = 3;
    c.decode.length_candidates = 2;
    c.decode.k_tok = 2;
    c.decode.max_len_offset = 2;
    c.out_dir = out.to_path_buf();
    c.workers = 2;
    c
}

#[test]
fn batches_depend_only_on_seed_and_step() {
    let cfg = small(Path::new("unused"));
    let data = load_data(&cfg).unwrap();
    let train = &data.splits.train.pairs;
    let a = batch_for_step(train, 40, 1, 5).unwrap();
    assert_eq!(a, batch_for_step(train, 40, 1, 5).unwrap());
    assert_ne!(a, batch_for_step(train, 40, 1, 6).unwrap());
    let tokens: usize = a.iter().map(|p| p.source.len() + p.target.len()).sum();
    let last = a.last().map(|p| p.source.len() + p.target.len()).unwrap();
    assert!(tokens >= 40 && tokens - last < 40);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    cmd_train(&small(full.path()), false, None).unwrap();
    let cfg = small(split.path());
    let first = cmd_train(&cfg, false, Some(3)).unwrap();
    assert_eq!(first.steps, 3);
    let second = cmd_train(&cfg, true, None).unwrap();
    assert_eq!(second.steps, 6);
    let a = fs::read(full.path().join(app::CHECKPOINT_FILE)).unwrap();
    let b = fs::read(split.path().join(app::CHECKPOINT_FILE)).unwrap();
    assert!(a == b, "checkpoints differ after resume");
    let log = fs::read_to_string(split.path().join(app::LOG_FILE)).unwrap();
    assert!(log.contains("# resumed at step 3"));
    let strip = |s: String| s.lines().filter(|l| l.starts_with("step=")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(log), strip(fs::read_to_string(full.path().join(app::LOG_FILE)).unwrap()));
}

#[test]
fn same_seed_same_checkpoint_with_dropout() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let with = |p: &Path, seed: u64| {
        let mut cfg = small(p);
        cfg.model.dropout = 0.1;
        cfg.train.seed = seed;
        cmd_train(&cfg, false, None).unwrap();
        fs::read(p.join(app::CHECKPOINT_FILE)).unwrap()
    };
    let x = with(a.path(), 1);
    assert_eq!(x, with(b.path(), 1));
    assert_ne!(x, with(c.path(), 2));
}

#[test]
fn loss_falls_on_the_copy_task() {
    let mut cfg = small(Path::new("unused"));
    cfg.train.steps = 40;
    cfg.train.ar = false;
    let data = load_data(&cfg).unwrap();
    let mut t = Trainer::new(&cfg, data.vocab.clone()).unwrap();
    let first = t.step_once(&data.splits.train.pairs).unwrap();
    let mut last = first;
    for _ in 1..40 {
        last = t.step_once(&data.splits.train.pairs).unwrap();
    }
    assert!(last.fwd_loss < 0.8 * first.fwd_loss, "{} -> {}", first.fwd_loss, last.fwd_loss);
    assert!(last.ar.is_none());
}

#[test]
fn checkpoint_from_another_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_train(&cfg, false, Some(1)).unwrap();
    let mut other = cfg.clone();
    other.model.d_ff = 12;
    let err = load_system(&other, &dir.path().join(app::CHECKPOINT_FILE)).unwrap_err();
    assert!(matches!(err, Error::Load(_)));
    assert!(err.to_string().contains("ff"), "{err}");
}

#[test]
fn decode_and_eval_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_train(&cfg, false, None).unwrap();
    let ckpt = dir.path().join(app::CHECKPOINT_FILE);
    let refs = read_references(&dir.path().join("test.tsv")).unwrap();
    assert_eq!(refs.len(), 10);
    for mode in Mode::ALL {
        let out = dir.path().join(format!("decode.{mode}.tsv"));
        let recs = cmd_decode(&cfg, &ckpt, mode, None, &out).unwrap();
        assert_eq!(recs.len(), 10);
        let back = read_dump(&out).unwrap();
        assert_eq!(back.len(), 10);
        for r in &back {
            assert!(!r.output.is_empty());
            assert!(r.per_token.iter().all(|v| v.is_finite()));
        }
        let report = cmd_eval(&back, &refs, &StopwordList::builtin()).unwrap();
        assert!((0.0..=1.0).contains(&report.bleu));
        assert!(matches!(cmd_eval(&back, &refs[1..], &StopwordList::builtin()), Err(Error::Alignment(_))));
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_train(&cfg, false, None).unwrap();
    let ckpt = dir.path().join(app::CHECKPOINT_FILE);
    let mut dumps = Vec::new();
    for workers in [1, 3] {
        let mut c = cfg.clone();
        c.workers = workers;
        let out = dir.path().join(format!("w{workers}.tsv"));
        cmd_decode(&c, &ckpt, Mode::NonArMmi, None, &out).unwrap();
        dumps.push(fs::read(out).unwrap());
    }
    assert_eq!(dumps[0], dumps[1]);
}
