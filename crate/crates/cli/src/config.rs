//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shortcut_stack::data::SyntheticSpec;
use shortcut_stack::{ModelConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', found '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value '{value}' for {key}")]
    BadValue { line: usize, key: String, value: String },
    #[error("line {line}: {key} is set twice")]
    Duplicate { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Files,
    Synthetic,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Files => "files",
            DataSource::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DataSource {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "files" => Ok(DataSource::Files),
            "synthetic" => Ok(DataSource::Synthetic),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Feature dims, stack shape and dropout rates.
    pub model: ModelConfig,
    /// Dropout rates and seed here are overwritten from `model` and `seed`.
    pub train: TrainConfig,
    pub seed: u64,
    pub source: DataSource,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
            source: DataSource::Files,
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings: None,
            synthetic: SyntheticSpec::default(),
            out: PathBuf::from("run"),
        }
    }
}

const RUN_KEYS: [&str; 22] = [
    "train.lr0",
    "train.lr_halt",
    "train.improve_thresh",
    "train.anneal",
    "train.max_epochs",
    "train.shuffle",
    "run.seed",
    "run.out",
    "data.source",
    "data.train",
    "data.dev",
    "data.test",
    "data.embeddings",
    "synthetic.vocab",
    "synthetic.tags",
    "synthetic.min_len",
    "synthetic.max_len",
    "synthetic.distance",
    "synthetic.train",
    "synthetic.dev",
    "synthetic.test",
    "synthetic.seed",
];

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        ModelConfig::KEYS.into_iter().chain(RUN_KEYS)
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let s = &self.synthetic;
        let mut out = self.model.to_pairs();
        out.extend([
            ("train.lr0", t.lr0.to_string()),
            ("train.lr_halt", t.lr_halt.to_string()),
            ("train.improve_thresh", t.improve_thresh.to_string()),
            ("train.anneal", t.anneal.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.shuffle", t.shuffle.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.out", self.out.display().to_string()),
            ("data.source", self.source.to_string()),
            ("data.train", path_str(&self.train_path)),
            ("data.dev", path_str(&self.dev_path)),
            ("data.test", path_str(&self.test_path)),
            ("data.embeddings", path_str(&self.embeddings)),
            ("synthetic.vocab", s.vocab.to_string()),
            ("synthetic.tags", s.tags.to_string()),
            ("synthetic.min_len", s.min_len.to_string()),
            ("synthetic.max_len", s.max_len.to_string()),
            ("synthetic.distance", s.distance.to_string()),
            ("synthetic.train", s.train.to_string()),
            ("synthetic.dev", s.dev.to_string()),
            ("synthetic.test", s.test.to_string()),
            ("synthetic.seed", s.seed.to_string()),
        ]);
        out
    }

    /// Sets one key. `Err(true)` means the key is unknown, `Err(false)` that
    /// the value does not parse.
    fn set(&mut self, key: &str, value: &str) -> Result<(), bool> {
        fn p<V: FromStr>(value: &str) -> Result<V, bool> {
            value.parse().map_err(|_| false)
        }
        let path = |value: &str| (!value.is_empty()).then(|| PathBuf::from(value));
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "train.lr0" => t.lr0 = p(value)?,
            "train.lr_halt" => t.lr_halt = p(value)?,
            "train.improve_thresh" => t.improve_thresh = p(value)?,
            "train.anneal" => t.anneal = p(value)?,
            "train.max_epochs" => t.max_epochs = p(value)?,
            "train.shuffle" => t.shuffle = p(value)?,
            "run.seed" => self.seed = p(value)?,
            "run.out" if !value.is_empty() => self.out = PathBuf::from(value),
            "run.out" => return Err(false),
            "data.source" => self.source = p(value)?,
            "data.train" => self.train_path = path(value),
            "data.dev" => self.dev_path = path(value),
            "data.test" => self.test_path = path(value),
            "data.embeddings" => self.embeddings = path(value),
            "synthetic.vocab" => s.vocab = p(value)?,
            "synthetic.tags" => s.tags = p(value)?,
            "synthetic.min_len" => s.min_len = p(value)?,
            "synthetic.max_len" => s.max_len = p(value)?,
            "synthetic.distance" => s.distance = p(value)?,
            "synthetic.train" => s.train = p(value)?,
            "synthetic.dev" => s.dev = p(value)?,
            "synthetic.test" => s.test = p(value)?,
            "synthetic.seed" => s.seed = p(value)?,
            _ if ModelConfig::KEYS.contains(&key) => {
                return self.model.set(key, value).map_err(|_| false);
            }
            _ => return Err(true),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Keys may appear in any
    /// order but at most once.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            config.set(key, value).map_err(|unknown| {
                if unknown {
                    ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    }
                } else {
                    ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                    }
                }
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.dims.validate().map_err(|e| invalid(&e))?;
        self.model.stack.validate().map_err(|e| invalid(&e))?;
        self.train_config().validate().map_err(|e| invalid(&e))?;
        if self.source == DataSource::Synthetic {
            self.synthetic.validate().map_err(|e| invalid(&e))?;
        }
        Ok(())
    }

    /// Training settings with the model's dropout rates and the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            window_drop: self.model.window_drop,
            hidden_drop: self.model.hidden_drop,
            seed: self.seed,
            ..self.train
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut section = "";
        for (key, value) in self.to_pairs() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    writeln!(f)?;
                }
                writeln!(f, "# {head}")?;
                section = head;
            }
            if value.is_empty() {
                writeln!(f, "{key} =")?;
            } else {
                writeln!(f, "{key} = {value}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shortcut_stack::{CellRule, GateKind, Topology};

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.model.dims.input_dim(), 465);
        assert_eq!(c.model.stack.hidden, 465);
        assert_eq!(c.model.stack.layers, 9);
        assert_eq!(c.model.stack.topology, Topology::T2);
        assert_eq!(c.model.stack.gate, GateKind::NonlinearPrev);
        assert_eq!(c.model.stack.rule, CellRule::ShortcutBlock);
        assert_eq!(c.train.lr0, 0.02);
        assert_eq!((c.model.window_drop, c.model.hidden_drop), (0.25, 0.5));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.model.stack.gate = GateKind::BernoulliFixed(0.3);
        c.model.stack.topology = Topology::T5;
        c.train.lr0 = 0.123_456_789_012_345_6;
        c.train_path = Some("a b/train.txt".into());
        c.source = DataSource::Synthetic;
        c.synthetic.seed = 99;
        let text = c.to_string();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(c.to_pairs().len(), RunConfig::keys().count());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nstack.layers = 3  # shallow\n").unwrap();
        assert_eq!(c.model.stack.layers, 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(RunConfig::parse("stack.depth = 3"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\nstack.layers = x"), Err(ConfigError::BadValue { line: 2, .. })));
        assert!(matches!(RunConfig::parse("stack.layers"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(
            RunConfig::parse("run.seed = 1\nrun.seed = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(RunConfig::parse("dropout.hidden = 1.5"), Err(ConfigError::Invalid(_))));
    }
}
