//! Command implementations. Each returns the text it prints on success.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use shortcut_stack::data::{gen_synthetic, load_conll, save_conll};
use shortcut_stack::features::load_pretrained;
use shortcut_stack::gradcheck::{run_gradcheck, GradcheckConfig};
use shortcut_stack::train::{checkpoint_load, checkpoint_save, train, EpochRecord};
use shortcut_stack::{seeded_rng, CellRule, GateKind, Tagger, TaggedCorpus, Topology};

use crate::config::{ConfigError, DataSource, RunConfig};

/// A failed command with its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("config: {e}"))
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failure(format!("{}: {e}", path.display()))
}

pub struct Splits {
    pub train: TaggedCorpus,
    pub dev: TaggedCorpus,
    pub test: Option<TaggedCorpus>,
}

fn required<'a>(key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    let path = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required key {key} (data.source = files)")))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("{key}: no such file {}", path.display())));
    }
    Ok(path)
}

pub fn load_splits(config: &RunConfig) -> Result<Splits, CliError> {
    match config.source {
        DataSource::Synthetic => {
            let (train, dev, test) = gen_synthetic(&config.synthetic).map_err(failure)?;
            Ok(Splits {
                train,
                dev,
                test: Some(test),
            })
        }
        DataSource::Files => {
            let train = load_conll(required("data.train", &config.train_path)?).map_err(failure)?;
            let dev = load_conll(required("data.dev", &config.dev_path)?).map_err(failure)?;
            let test = match &config.test_path {
                Some(_) => Some(load_conll(required("data.test", &config.test_path)?).map_err(failure)?),
                None => None,
            };
            Ok(Splits { train, dev, test })
        }
    }
}

pub struct TrainOutcome {
    pub model: Tagger,
    pub history: Vec<EpochRecord>,
    pub dev_acc: f64,
    pub test_acc: Option<f64>,
}

/// Trains one model and returns it with the best-dev parameters restored.
pub fn train_model(
    config: &RunConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, CliError> {
    let mut model = Tagger::from_corpus(config.model, &splits.train, &mut seeded_rng(config.seed)).map_err(failure)?;
    if let Some(path) = &config.embeddings {
        let features = model.net.features.clone();
        load_pretrained(path, &mut model.params, &features).map_err(failure)?;
    }
    let state = train(&mut model, &splits.train, &splits.dev, &config.train_config(), &mut on_epoch).map_err(failure)?;
    model.params = state.best_params;
    let test_acc = match &splits.test {
        Some(t) if !t.is_empty() => Some(model.evaluate(t).map_err(failure)?),
        _ => None,
    };
    Ok(TrainOutcome {
        dev_acc: state.best_dev_acc,
        test_acc,
        history: state.history,
        model,
    })
}

pub fn cmd_train(config: &RunConfig) -> Result<String, CliError> {
    let splits = load_splits(config)?;
    fs::create_dir_all(&config.out).map_err(io_failure(&config.out))?;
    let log_path = config.out.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(io_failure(&log_path))?;
    let mut log_err = None;
    let outcome = train_model(config, &splits, |r| {
        eprintln!("{r}");
        if let Err(e) = writeln!(log, "{r}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(io_failure(&log_path)(e));
    }
    let config_path = config.out.join("config.txt");
    fs::write(&config_path, config.to_string()).map_err(io_failure(&config_path))?;
    let ckpt = config.out.join("model.ckpt");
    checkpoint_save(&outcome.model, &ckpt).map_err(failure)?;

    let mut out = String::new();
    writeln!(out, "dev accuracy {:.6}", outcome.dev_acc).unwrap();
    match outcome.test_acc {
        Some(t) => writeln!(out, "test accuracy {t:.6}").unwrap(),
        None => writeln!(out, "test accuracy -").unwrap(),
    }
    writeln!(out, "checkpoint {}", ckpt.display()).unwrap();
    Ok(out)
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<String, CliError> {
    let model: Tagger = checkpoint_load(checkpoint).map_err(failure)?;
    let corpus = load_conll(data).map_err(failure)?;
    let acc = model.evaluate(&corpus).map_err(failure)?;
    Ok(format!("accuracy {acc:.6} over {} tokens\n", corpus.num_tokens()))
}

/// One sentence per input line; blank lines produce no output.
pub fn cmd_predict(checkpoint: &Path, input: &str) -> Result<String, CliError> {
    let model: Tagger = checkpoint_load(checkpoint).map_err(failure)?;
    let mut out = String::new();
    for line in input.lines() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let tags = model.predict_tags(&tokens).map_err(failure)?;
        for (tok, tag) in tokens.iter().zip(tags) {
            writeln!(out, "{tok} {tag}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_gradcheck(config: &GradcheckConfig) -> Result<String, CliError> {
    let summary = run_gradcheck(config).map_err(failure)?;
    let mut out = String::new();
    for entry in &summary.entries {
        writeln!(out, "{entry}").unwrap();
    }
    writeln!(
        out,
        "{} checks, max relative error {:.3e}, tolerance {:e}",
        summary.entries.len(),
        summary.max_relative_error(),
        summary.tolerance
    )
    .unwrap();
    let failed: Vec<String> = summary.failures().map(|e| e.name()).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(CliError::Failure(format!(
            "{} combinations exceed the tolerance:\n  {}",
            failed.len(),
            failed.join("\n  ")
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Topology,
    Gate,
    Rule,
    Depth,
}

pub const DEFAULT_DEPTHS: [usize; 4] = [7, 9, 11, 13];

/// Config variants for one sweep axis, labelled.
pub fn sweep_rows(base: &RunConfig, axis: Axis, depths: &[usize]) -> Vec<(String, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        Axis::Topology => Topology::ALL
            .iter()
            .map(|&t| (t.to_string(), with(&|c| c.model.stack.topology = t)))
            .collect(),
        Axis::Gate => GateKind::all(0.5)
            .iter()
            .map(|&g| (g.to_string(), with(&|c| c.model.stack.gate = g)))
            .collect(),
        Axis::Rule => CellRule::ALL
            .iter()
            .map(|&r| (r.to_string(), with(&|c| c.model.stack.rule = r)))
            .collect(),
        Axis::Depth => depths
            .iter()
            .map(|&d| (format!("{d}-layer"), with(&|c| c.model.stack.layers = d)))
            .collect(),
    }
}

pub struct SweepRow {
    pub label: String,
    pub dev: f64,
    pub test: Option<f64>,
}

/// Trains every row with `seeds` consecutive seeds starting at the
/// configured one and averages the accuracies.
pub fn run_sweep(base: &RunConfig, axis: Axis, depths: &[usize], seeds: usize) -> Result<Vec<SweepRow>, CliError> {
    let splits = load_splits(base)?;
    let rows = sweep_rows(base, axis, depths);
    for (_, c) in &rows {
        c.validate()?;
    }
    rows.into_par_iter()
        .map(|(label, config)| {
            let mut dev = 0.0;
            let mut test = Some(0.0);
            for k in 0..seeds as u64 {
                let c = RunConfig {
                    seed: config.seed + k,
                    ..config.clone()
                };
                let o = train_model(&c, &splits, |_| ())?;
                dev += o.dev_acc;
                test = test.zip(o.test_acc).map(|(a, b)| a + b);
            }
            let n = seeds as f64;
            Ok(SweepRow {
                label,
                dev: dev / n,
                test: test.map(|t| t / n),
            })
        })
        .collect()
}

pub fn format_table(axis: Axis, rows: &[SweepRow], seeds: usize) -> String {
    let head = format!("{axis:?}").to_lowercase();
    let width = rows.iter().map(|r| r.label.len()).chain([head.len()]).max().unwrap_or(0);
    let mut out = String::new();
    writeln!(out, "{head:<width$}  {:>8}  {:>8}", "dev", "test").unwrap();
    for r in rows {
        let test = r.test.map(|t| format!("{:.2}", 100.0 * t)).unwrap_or_else(|| "-".into());
        writeln!(out, "{:<width$}  {:>8.2}  {:>8}", r.label, 100.0 * r.dev, test).unwrap();
    }
    if seeds > 1 {
        writeln!(out, "(mean over {seeds} seeds)").unwrap();
    }
    out
}

pub fn cmd_gen_data(config: &RunConfig, out_dir: &Path) -> Result<String, CliError> {
    config.synthetic.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let (train, dev, test) = gen_synthetic(&config.synthetic).map_err(failure)?;
    fs::create_dir_all(out_dir).map_err(io_failure(out_dir))?;
    let mut out = String::new();
    for (name, corpus) in [("train.txt", &train), ("dev.txt", &dev), ("test.txt", &test)] {
        let path = out_dir.join(name);
        save_conll(corpus, &path).map_err(failure)?;
        writeln!(out, "{} {} sentences, {} tokens", path.display(), corpus.len(), corpus.num_tokens()).unwrap();
    }
    Ok(out)
}
