use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const TOY: &str = "\
data.source = synthetic
stack.layers = 3
stack.hidden = 4
features.word_dim = 4
features.char_dim = 2
features.chars_per_side = 2
train.max_epochs = 2
train.lr0 = 0.1
synthetic.train = 8
synthetic.dev = 4
synthetic.test = 4
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shortcut-stack"));
    c.env_remove("SHORTCUT_STACK_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_toy(dir: &Path, out: &str) -> (Output, PathBuf) {
    let cfg = write_config(dir, "toy.cfg", TOY);
    let out = dir.join(out);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    (o, out)
}

#[test]
fn missing_data_path_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.train"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "c.cfg", "data.train = /no/such/file\ndata.dev = /no/such/dev\n");
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data.train"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "stack.layers = 3\nstack.colour = red\n");
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stack.colour"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "bad2.cfg", "stack.layers = three\n");
    assert_eq!(code(&run(&["train", "--config", s(&cfg)])), 2);
    assert_eq!(code(&run(&["train", "--config", s(&dir.path().join("absent.cfg"))])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["init-config"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("stack.layers = 9"));
    let path = dir.path().join("default.cfg");
    assert_eq!(code(&run(&["init-config", "--out", s(&path)])), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    // The written file parses: gen-data accepts it.
    let o = run(&["gen-data", "--config", s(&path), "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn training_writes_log_config_and_checkpoint_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = train_toy(dir.path(), "a");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("dev accuracy"));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    let records: Vec<&&str> = lines.iter().filter(|l| l.split(',').count() == 4 && l.split(',').next().unwrap().parse::<usize>().is_ok()).collect();
    assert!(!records.is_empty() && records.len() <= 2, "{log}");
    assert!(out.join("config.txt").exists());

    let (o2, out2) = train_toy(dir.path(), "b");
    assert_eq!(code(&o2), 0);
    assert_eq!(std::fs::read(out.join("model.ckpt")).unwrap(), std::fs::read(out2.join("model.ckpt")).unwrap());
    assert_eq!(log, std::fs::read_to_string(out2.join("train.log")).unwrap());
}

#[test]
fn eval_and_predict_use_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = train_toy(dir.path(), "run");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = out.join("model.ckpt");
    let cfg = dir.path().join("toy.cfg");
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["gen-data", "--config", s(&cfg), "--out", s(&data)])), 0);

    let o = run(&["eval", s(&ckpt), s(&data.join("test.txt"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy "), "{}", stdout(&o));

    let input = dir.path().join("in.txt");
    std::fs::write(&input, "wa wb wc\n").unwrap();
    let o = run(&["predict", s(&ckpt), s(&input)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("wa "));
    assert_eq!(lines[3], "");

    let mut child = bin()
        .args(["predict", s(&ckpt)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

#[test]
fn damaged_checkpoint_fails_with_a_shape_message() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = train_toy(dir.path(), "run");
    assert_eq!(code(&o), 0);
    let ckpt = out.join("model.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let head_len = text.find("\ndata\n").unwrap() + 6;
    let mut damaged = text[..head_len].replacen("param output.b ", "param output.b 1", 1).into_bytes();
    damaged.extend_from_slice(&bytes[head_len..]);
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, damaged).unwrap();
    let data = dir.path().join("d.txt");
    std::fs::write(&data, "wa TA\n\n").unwrap();
    let o = run(&["eval", s(&bad), s(&data)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("output.b") && err.contains("expected"), "{err}");
}

#[test]
fn sweeps_have_one_row_per_axis_value() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = TOY.replace("train.max_epochs = 2", "train.max_epochs = 1");
    let cfg = write_config(dir.path(), "tiny.cfg", &tiny);
    for (axis, extra, rows) in [("topology", vec![], 5), ("gate", vec![], 7), ("depth", vec!["--depths", "1,2,3,4"], 4)] {
        let mut args = vec!["sweep", "--config", s(&cfg), "--axis", axis];
        args.extend(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{axis}: {}", stderr(&o));
        let text = stdout(&o);
        assert_eq!(text.lines().count(), rows + 1, "{axis}:\n{text}");
    }
    let table = dir.path().join("t.txt");
    let o = run(&["sweep", "--config", s(&cfg), "--axis", "depth", "--depths", "2,3", "--seeds", "2", "--out", s(&table)]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("(mean over 2 seeds)"), "{text}");
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_rule() {
    let o = run(&["gradcheck", "--max-entries", "1"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = run(&["gradcheck", "--max-entries", "2", "--corrupt-backward"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let o = bin().env("SHORTCUT_STACK_THREADS", "zero").arg("init-config").output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("SHORTCUT_STACK_THREADS"));
    let o = bin().env("SHORTCUT_STACK_THREADS", "1").arg("init-config").output().unwrap();
    assert_eq!(code(&o), 0);
}
