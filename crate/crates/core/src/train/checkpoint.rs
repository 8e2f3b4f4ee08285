//! Checkpoint files.
//!
//! Layout: a line holding the format version, a text header (config
//! entries, vocabularies, then one `param <name> <rows> <cols>` line per
//! parameter), a `data` line, and finally every parameter's entries as
//! little-endian `f64` in header order.

use std::fmt::Write as _;
use std::path::Path;

use crate::features::Vocab;
use crate::model::{ModelConfig, ModelError, TagVocab, TaggerModel, Vocabularies};
use crate::scalar::Scalar;
use crate::seeded_rng;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "shortcut-stack checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("parameter '{name}': expected {expected}, file has {found}")]
    Shape { name: String, expected: String, found: String },
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after the parameter data")]
    TrailingBytes(usize),
    #[error("config in header: {0}")]
    Config(#[from] ModelError),
}

pub fn to_bytes<T: Scalar>(model: &TaggerModel<T>) -> Vec<u8> {
    let mut head = String::new();
    let w = &mut head;
    writeln!(w, "{FORMAT_VERSION}").unwrap();
    writeln!(w, "{MAGIC}").unwrap();
    for (k, v) in model.config().to_pairs() {
        writeln!(w, "config {k} {v}").unwrap();
    }
    let f = &model.net.features;
    for (name, items) in [
        ("words", f.words.items()),
        ("chars", f.chars.items()),
        ("tags", model.tags().tags()),
    ] {
        writeln!(w, "vocab {name} {}", items.len()).unwrap();
        for item in items {
            writeln!(w, "{item}").unwrap();
        }
    }
    for (_, p) in model.params.iter() {
        writeln!(w, "param {} {} {}", p.name, p.value.rows(), p.value.cols()).unwrap();
    }
    writeln!(w, "data").unwrap();

    let mut bytes = head.into_bytes();
    bytes.reserve(8 * model.params.num_entries());
    for (_, p) in model.params.iter() {
        for &x in p.value.as_slice() {
            bytes.extend_from_slice(&x.to_f64_lossless().to_le_bytes());
        }
    }
    bytes
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        self.line += 1;
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| self.err("unexpected end of header"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header is not UTF-8"))
    }

    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Header {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn expect_fields(&mut self, tag: &str, count: usize) -> Result<Vec<&'a str>, CheckpointError> {
        let line = self.next()?;
        let fields: Vec<&str> = line.splitn(count, ' ').collect();
        if fields.len() != count || fields[0] != tag {
            return Err(self.err(format!("expected a '{tag}' line, found '{line}'")));
        }
        Ok(fields)
    }

    fn vocab(&mut self, name: &str) -> Result<Vec<String>, CheckpointError> {
        let fields = self.expect_fields("vocab", 3)?;
        if fields[1] != name {
            return Err(self.err(format!("expected vocabulary '{name}', found '{}'", fields[1])));
        }
        let count: usize = fields[2].parse().map_err(|_| self.err(format!("bad count '{}'", fields[2])))?;
        (0..count).map(|_| self.next().map(str::to_string)).collect()
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<TaggerModel<T>, CheckpointError> {
    let mut lines = Lines { bytes, pos: 0, line: 0 };
    let version = lines.next().map_err(|_| CheckpointError::Version {
        found: "<missing>".into(),
    })?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(CheckpointError::Version {
            found: version.chars().take(32).collect(),
        });
    }
    if lines.next()? != MAGIC {
        return Err(lines.err("missing checkpoint marker"));
    }
    let mut config = ModelConfig::default();
    for key in ModelConfig::KEYS {
        let fields = lines.expect_fields("config", 3)?;
        if fields[1] != key {
            return Err(lines.err(format!("expected config key '{key}', found '{}'", fields[1])));
        }
        config.set(key, fields[2])?;
    }
    let words = Vocab::from_list(lines.vocab("words")?);
    let chars = Vocab::from_list(lines.vocab("chars")?);
    let tags = TagVocab::from_list(lines.vocab("tags")?).ok_or_else(|| lines.err("tag list must end with the rare tag"))?;

    // The initializer only fixes the layout; every value is overwritten.
    let mut model = TaggerModel::<T>::new(config, Vocabularies { words, chars, tags }, &mut seeded_rng(0))?;
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let fields = lines.expect_fields("param", 4)?;
        let p = model.params.get(id);
        let expected = format!("{} {}×{}", p.name, p.value.rows(), p.value.cols());
        let found = format!("{} {}×{}", fields[1], fields[2], fields[3]);
        if expected != found {
            return Err(CheckpointError::Shape {
                name: p.name.clone(),
                expected,
                found,
            });
        }
    }
    if lines.next()? != "data" {
        return Err(lines.err("expected 'data' after the parameter list"));
    }

    let data = &bytes[lines.pos..];
    let expected = 8 * model.params.num_entries();
    if data.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(CheckpointError::TrailingBytes(data.len() - expected));
    }
    let mut chunks = data.chunks_exact(8);
    for id in ids {
        for v in model.params.value_mut(id).as_mut_slice() {
            let raw: [u8; 8] = chunks.next().expect("length checked").try_into().expect("8 bytes");
            *v = T::lit(f64::from_le_bytes(raw));
        }
    }
    Ok(model)
}

pub fn checkpoint_save<T: Scalar>(model: &TaggerModel<T>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn checkpoint_load<T: Scalar>(path: &Path) -> Result<TaggerModel<T>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
