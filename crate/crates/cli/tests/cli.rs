use std::fs;
use std::path::Path;

use cgnmt_cli::{run_command, scale_file_name};

const SMALL: &str = "\
task = copy
task_vocab = 10
min_len = 3
max_len = 6
train_size = 200
dev_size = 20
test_size = 20
emb_dim = 8
hidden_dim = 8
gate = both
max_epochs = 2
beam = 3
model = model.cgnm
";

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("cgnmt").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["train"]), 1);
    assert_eq!(run(&["translate", "--config", "x.cfg", "--beam"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "task = copy\n");
    assert_eq!(run(&["train", "--config", &cfg]), 1, "no model path");
    assert_eq!(run(&["evaluate", "--config", &cfg]), 1, "no hypothesis file");
    assert_eq!(run(&["translate", "--config", &cfg, "--model", "m", "--beam", "0"]), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--config", &p(dir.path(), "missing.cfg")]), 2);
    let cfg = write_config(dir.path(), "colour = red\n");
    assert_eq!(run(&["train", "--config", &cfg]), 2);
    let cfg = write_config(dir.path(), "task = copy\nmodel = nothing.cgnm\n");
    assert_eq!(run(&["translate", "--config", &cfg]), 2);
    fs::write(dir.path().join("nothing.cgnm"), b"not a model").unwrap();
    assert_eq!(run(&["translate", "--config", &cfg]), 2);
}

fn train_and_translate(dir: &Path) -> [Vec<u8>; 4] {
    let cfg = write_config(dir, SMALL);
    assert_eq!(run(&["train", "--config", &cfg]), 0);
    let out = p(dir, "out.txt");
    assert_eq!(run(&["translate", "--config", &cfg, "--output", &out, "--trace"]), 0);
    [
        fs::read(dir.join("model.cgnm")).unwrap(),
        fs::read(dir.join("model.cgnm.log.csv")).unwrap(),
        fs::read(&out).unwrap(),
        fs::read(p(dir, "out.txt.trace.jsonl")).unwrap(),
    ]
}

#[test]
fn train_translate_outputs_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = train_and_translate(a.path());
    let second = train_and_translate(b.path());
    assert_eq!(first, second);

    let log = String::from_utf8(first[1].clone()).unwrap();
    assert!(log.starts_with("epoch,train_loss_per_token,dev_bleu,clipped_fraction\n"));
    assert_eq!(log.lines().count(), 3);
    let translations = String::from_utf8(first[2].clone()).unwrap();
    assert_eq!(translations.lines().count(), 20);
    let traces = String::from_utf8(first[3].clone()).unwrap();
    for line in traces.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let w = v["sentence_gate_weight"].as_f64().unwrap();
        assert!(w > 0.0 && w < 1.0);
        assert_eq!(v["alpha"].as_array().unwrap().len(), v["tokens"].as_array().unwrap().len());
    }
    assert!(a.path().join("model.cgnm.src.vocab").exists());
}

#[test]
fn seed_flag_changes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("max_epochs = 2", "max_epochs = 1"));
    let m1 = p(dir.path(), "m1.cgnm");
    let m2 = p(dir.path(), "m2.cgnm");
    assert_eq!(run(&["train", "--config", &cfg, "--model", &m1, "--seed", "5"]), 0);
    assert_eq!(run(&["train", "--config", &cfg, "--model", &m2, "--seed", "6"]), 0);
    assert_ne!(fs::read(m1).unwrap(), fs::read(m2).unwrap());
}

#[test]
fn unit_scale_row_matches_translate() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}output_dir = sweep\n");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(run(&["train", "--config", &cfg]), 0);
    let plain = p(dir.path(), "plain.txt");
    assert_eq!(run(&["translate", "--config", &cfg, "--output", &plain]), 0);
    let csv = p(dir.path(), "scale.csv");
    assert_eq!(run(&["scale-experiment", "--config", &cfg, "--output", &csv]), 0);

    let table = fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.starts_with("a,b,mean_length,bleu,cap_fraction\n"));
    let unit = fs::read(dir.path().join("sweep").join(scale_file_name(1.0, 1.0))).unwrap();
    assert_eq!(unit, fs::read(&plain).unwrap());
    for (a, b) in cgnmt_cli::config::DEFAULT_SCALES {
        assert!(dir.path().join("sweep").join(scale_file_name(a, b)).exists());
    }
}

#[test]
fn evaluate_and_align_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(run(&["train", "--config", &cfg]), 0);
    let hyp = p(dir.path(), "hyp.txt");
    assert_eq!(run(&["translate", "--config", &cfg, "--output", &hyp, "--trace"]), 0);
    let base = p(dir.path(), "base.txt");
    assert_eq!(run(&["translate", "--config", &cfg, "--output", &base, "--beam", "1"]), 0);

    let text = format!("{SMALL}baseline_hyp = base.txt\ngate_trace = hyp.txt.trace.jsonl\n");
    let cfg2 = write_config(dir.path(), &text);
    let metrics = p(dir.path(), "metrics.csv");
    assert_eq!(run(&["evaluate", "--config", &cfg2, "--input", &hyp, "--output", &metrics]), 0);
    let m = fs::read_to_string(&metrics).unwrap();
    assert!(m.starts_with("metric,value\nbleu,"));
    assert!(m.contains("\nsign_test_p,"));
    let buckets = fs::read_to_string(p(dir.path(), "metrics.csv.buckets.csv")).unwrap();
    let counted: usize = buckets.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(counted, 20);

    let links = p(dir.path(), "links.txt");
    assert_eq!(run(&["align", "--config", &cfg, "--output", &links]), 0);
    assert_eq!(fs::read_to_string(&links).unwrap().lines().count(), 20);
    let am = fs::read_to_string(p(dir.path(), "links.txt.metrics.csv")).unwrap();
    let values: Vec<f64> = am.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 2);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));

    // the hard links read back as a perfect-score alignment hypothesis
    let text = format!("{SMALL}test_alignments = links.txt\nalignment_hyp = links.txt\n");
    let cfg3 = write_config(dir.path(), &text);
    let m3 = p(dir.path(), "m3.csv");
    assert_eq!(run(&["evaluate", "--config", &cfg3, "--input", &hyp, "--output", &m3]), 0);
    assert!(fs::read_to_string(&m3).unwrap().contains("\naer,0.000000\n"));
}

#[test]
fn ablate_emits_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "task = copy\ntask_vocab = 6\nmin_len = 2\nmax_len = 4\ntrain_size = 30\ndev_size = 5\ntest_size = 5\n\
         emb_dim = 3\nhidden_dim = 3\nmax_epochs = 1\nbeam = 2\n",
    );
    let out = p(dir.path(), "grid.csv");
    assert_eq!(run(&["ablate", "--config", &cfg, "--output", &out]), 0);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 5);
    assert!(csv.starts_with("system,parameters,"));
}
