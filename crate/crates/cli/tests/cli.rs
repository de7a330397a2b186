use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cxformer::config::Config;
use cxformer::signal::read_dataset;

const TINY: &str = "\
n_encoder_layers = 1
n_decoder_layers = 1
d_model = 8
n_heads = 2
d_ff = 16
epochs = 2
batch_size = 8
n_examples = 24
holdout = 8
time_steps = 5
n_bins = 9
n_labels = 3
";

fn cxformer(config: &Path, out: &Path, command: &str, seed: u64) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxformer"))
        .args(["--config", config.to_str().unwrap(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap(), "--command", command])
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn metrics_without_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.rsplit_once('\t').unwrap().0.to_string()).collect()
}

#[test]
fn synth_train_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let out = dir.path().join("run");
    assert_ok(&cxformer(&cfg, &out, "synth", 3));
    let data = read_dataset(out.join("dataset.cxs1")).unwrap();
    assert_eq!((data.len(), data.t, data.f, data.n_labels), (24, 5, 9, 3));

    assert_ok(&cxformer(&cfg, &out, "train", 3));
    let metrics = fs::read_to_string(out.join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch\tloss\tmetric\twall_seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 4));
    assert!(out.join("checkpoint.cxck").exists());

    assert_ok(&cxformer(&cfg, &out, "eval", 3));
    let eval = fs::read_to_string(out.join("eval.tsv")).unwrap();
    assert!(eval.starts_with("split\texamples\tloss\tmetric\ntrain\t16\t"));
    assert!(eval.contains("\nheld_out\t8\t"));

    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.starts_with("# command = eval\n# seed = 3\n"));
    assert_eq!(Config::parse(&echoed).unwrap(), Config::parse(TINY).unwrap());
}

#[test]
fn training_is_reproducible_from_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_ok(&cxformer(&cfg, out, "synth", 9));
        assert_ok(&cxformer(&cfg, out, "train", 9));
    }
    assert_eq!(metrics_without_time(&a.join("metrics.tsv")), metrics_without_time(&b.join("metrics.tsv")));
    assert_eq!(fs::read(a.join("checkpoint.cxck")).unwrap(), fs::read(b.join("checkpoint.cxck")).unwrap());
    // The echoed config and seed alone reproduce the run.
    let c = dir.path().join("c");
    let echoed = a.join("config.txt");
    assert_ok(&cxformer(&echoed, &c, "synth", 9));
    assert_ok(&cxformer(&echoed, &c, "train", 9));
    assert_eq!(metrics_without_time(&a.join("metrics.tsv")), metrics_without_time(&c.join("metrics.tsv")));
}

#[test]
fn generate_writes_frames_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gen.cfg", &format!("{TINY}task = conditional_generate\ntime_steps = 10\n").replace("time_steps = 5\n", ""));
    let out = dir.path().join("run");
    assert_ok(&cxformer(&cfg, &out, "synth", 1));
    assert_ok(&cxformer(&cfg, &out, "train", 1));
    assert_ok(&cxformer(&cfg, &out, "generate", 1));
    let g = read_dataset(out.join("generated.cxs1")).unwrap();
    assert_eq!((g.len(), g.t, g.f), (8, 4, 9));
    assert!(g.examples.iter().flat_map(|e| &e.labels).all(|&v| v == 0.0 || v == 1.0));
    let preds = fs::read_to_string(out.join("predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 8 * 4 * 3);
}

#[test]
fn generate_needs_a_generation_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let out = dir.path().join("run");
    assert_ok(&cxformer(&cfg, &out, "synth", 0));
    assert_ok(&cxformer(&cfg, &out, "train", 0));
    assert_eq!(cxformer(&cfg, &out, "generate", 0).status.code(), Some(1));
}

#[test]
fn verification_commands_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.cfg", "");
    let out = dir.path().join("run");
    assert_ok(&cxformer(&cfg, &out, "gradcheck", 0));
    assert_ok(&cxformer(&cfg, &out, "oracle", 0));
    for file in ["gradcheck.tsv", "oracle.tsv"] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with("\tpass")), "{text}");
    }
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    let bad = write_config(dir.path(), "bad.cfg", "d_model = 64\nn_heads = 7\n");
    let o = cxformer(&bad, &out, "synth", 0);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divisible"));

    let typo = write_config(dir.path(), "typo.cfg", "epochs = 2\nepoch = 3\n");
    let o = cxformer(&typo, &out, "synth", 0);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(cxformer(&dir.path().join("missing.cfg"), &out, "synth", 0).status.code(), Some(1));

    let good = write_config(dir.path(), "tiny.cfg", TINY);
    let o = cxformer(&good, &out, "train", 0);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth"));

    assert_ok(&cxformer(&good, &out, "synth", 0));
    let path = out.join("dataset.cxs1");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    let o = cxformer(&good, &out, "train", 0);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    let diverge = write_config(dir.path(), "lr.cfg", &format!("{TINY}lr = 1e300\n"));
    let run = dir.path().join("div");
    assert_ok(&cxformer(&diverge, &run, "synth", 0));
    let o = cxformer(&diverge, &run, "train", 0);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("checkpoint.cxck").exists());
}

#[test]
fn bad_flags_are_config_errors() {
    let o = Command::new(env!("CARGO_BIN_EXE_cxformer")).args(["--command", "dance"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
