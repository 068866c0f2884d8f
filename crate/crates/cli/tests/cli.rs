use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lxtts::metrics::quality_pass;
use lxtts::world::read_corpus;

fn lxtts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lxtts")).args(args).env("RUST_LOG", "warn").output().expect("spawn lxtts")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&lxtts(&["bogus"])), 2);
    assert_eq!(code(&lxtts(&[])), 2);
    assert_eq!(code(&lxtts(&["world-gen", "--format", "pdf"])), 2);
    assert_eq!(code(&lxtts(&["world-gen", "--seed", "minus-one"])), 2);
    assert_eq!(code(&lxtts(&["--help"])), 0);
}

#[test]
fn bad_config_files_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "pretrain.steps = 10\nmodel.depth = 3\n").unwrap();
    let out = lxtts(&["world-gen", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));

    fs::write(&cfg, "pretrain.steps = ten\n").unwrap();
    assert_eq!(code(&lxtts(&["world-gen", "--config", path(&cfg)])), 2);
    let missing = dir.path().join("absent.conf");
    assert_eq!(code(&lxtts(&["world-gen", "--config", path(&missing)])), 2);
}

#[test]
fn missing_stage_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(code(&lxtts(&["filter", "--out", out])), 1);
    assert_eq!(code(&lxtts(&["sft", "--out", out])), 1);
    assert_eq!(code(&lxtts(&["report", "--out", out])), 1);
}

#[test]
fn world_gen_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&lxtts(&["world-gen", "--seed", "7", "--out", path(d.path())])), 0);
    }
    for f in ["world.json", "corpus.jsonl"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn filter_keeps_only_passing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(code(&lxtts(&["world-gen", "--out", out])), 0);
    let corpus = dir.path().join("corpus.jsonl");
    let moved = dir.path().join("elsewhere.jsonl");
    fs::rename(&corpus, &moved).unwrap();
    assert_eq!(code(&lxtts(&["filter", "--in", path(&moved), "--out", out])), 0);

    let all = read_corpus(std::io::BufReader::new(fs::File::open(&moved).unwrap())).unwrap();
    let kept = read_corpus(std::io::BufReader::new(fs::File::open(dir.path().join("filtered.jsonl")).unwrap())).unwrap();
    assert!(!kept.is_empty() && kept.len() < all.len());
    assert!(kept.iter().all(|u| quality_pass(&u.quality)));
    assert_eq!(kept.len(), all.iter().filter(|u| quality_pass(&u.quality)).count());
}

#[test]
fn stage_steps_override_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# tiny\ncorpus.utterances_per_speaker = 4\ncheckpoint.every = 2\n").unwrap();
    let c = path(&cfg);
    assert_eq!(code(&lxtts(&["world-gen", "--config", c, "--out", out])), 0);
    assert_eq!(code(&lxtts(&["filter", "--config", c, "--out", out])), 0);
    assert_eq!(code(&lxtts(&["pretrain", "--config", c, "--out", out, "--stage-steps", "5"])), 0);

    let metrics = fs::read_to_string(dir.path().join("pretrain/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "step,lr,loss,margin,win_rate");
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[1].ends_with(",,"));
    for s in [2, 4] {
        assert!(dir.path().join(format!("pretrain/step_{s:06}.lxck")).exists());
    }
    assert!(dir.path().join("pretrain/model.lxck").exists());
    let snapshot = fs::read_to_string(dir.path().join("pretrain/config.txt")).unwrap();
    assert!(snapshot.contains("corpus.utterances_per_speaker = 4"));
}
