//! Tagged corpora: two-column text files and a synthetic long-range task.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::seeded_rng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: expected 2 columns (token tag), found {found}")]
    Malformed { line: usize, found: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl Sentence {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let (tokens, tags) = pairs.into_iter().unzip();
        Self { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tokens.iter().map(String::as_str).zip(self.tags.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaggedCorpus {
    pub sentences: Vec<Sentence>,
}

impl TaggedCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tags.iter().map(String::as_str))
    }
}

/// Parses whitespace-separated `token tag` lines; a blank line ends a sentence.
pub fn parse_conll(text: &str) -> Result<TaggedCorpus, DataError> {
    let mut corpus = TaggedCorpus::default();
    let mut current = Sentence::default();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => {
                if !current.is_empty() {
                    corpus.sentences.push(std::mem::take(&mut current));
                }
            }
            [tok, tag] => {
                current.tokens.push(tok.to_string());
                current.tags.push(tag.to_string());
            }
            _ => {
                return Err(DataError::Malformed {
                    line: i + 1,
                    found: cols.len(),
                })
            }
        }
    }
    if !current.is_empty() {
        corpus.sentences.push(current);
    }
    Ok(corpus)
}

pub fn load_conll(path: &Path) -> Result<TaggedCorpus, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conll(&text)
}

pub fn format_conll(corpus: &TaggedCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (tok, tag) in s.pairs() {
            writeln!(out, "{tok} {tag}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn save_conll(corpus: &TaggedCorpus, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, format_conll(corpus)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Synthetic task: the tag at position `t` is `F[token(t)][token(t − k)]`
/// for a fixed seeded table `F`. Positions with `t < k` read a virtual
/// boundary token in the second slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab: usize,
    pub tags: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub distance: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab: 12,
            tags: 4,
            min_len: 10,
            max_len: 14,
            distance: 8,
            train: 64,
            dev: 32,
            test: 32,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Spec(m));
        if self.vocab == 0 || self.tags == 0 {
            return fail("vocab and tags must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.distance >= self.min_len {
            return fail(format!(
                "distance {} must be below the minimum length {}",
                self.distance, self.min_len
            ));
        }
        Ok(())
    }
}

/// Letters-only name for index `i` (bijective base 26), so normalization
/// leaves generated tokens intact.
fn letters(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn synthetic_token(i: usize) -> String {
    format!("w{}", letters(i))
}

pub fn synthetic_tag(i: usize) -> String {
    format!("T{}", letters(i).to_uppercase())
}

/// The generator's tag table, indexed `[current][previous]`; column `vocab`
/// is the boundary token.
pub fn synthetic_table(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = seeded_rng(spec.seed);
    (0..spec.vocab)
        .map(|_| (0..=spec.vocab).map(|_| rng.random_range(0..spec.tags)).collect())
        .collect()
}

/// Tag ids for a token-id sequence under the generator's rule.
pub fn synthetic_tags(table: &[Vec<usize>], ids: &[usize], distance: usize) -> Vec<usize> {
    let boundary = table.first().map_or(0, |row| row.len() - 1);
    (0..ids.len())
        .map(|t| {
            let prev = t.checked_sub(distance).map_or(boundary, |p| ids[p]);
            table[ids[t]][prev]
        })
        .collect()
}

/// Deterministic train/dev/test corpora with no sentence shared between splits.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(TaggedCorpus, TaggedCorpus, TaggedCorpus), DataError> {
    spec.validate()?;
    let table = synthetic_table(spec);
    let mut rng = seeded_rng(spec.seed.wrapping_add(1));
    let total = spec.train + spec.dev + spec.test;
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(total);
    let mut sentences = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while sentences.len() < total {
        attempts += 1;
        if attempts > 100 * total + 1000 {
            return Err(DataError::Spec(format!(
                "cannot draw {total} distinct sentences from this vocabulary and length range"
            )));
        }
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.vocab)).collect();
        if !seen.insert(ids.clone()) {
            continue;
        }
        let tags = synthetic_tags(&table, &ids, spec.distance);
        sentences.push(Sentence {
            tokens: ids.iter().map(|&i| synthetic_token(i)).collect(),
            tags: tags.iter().map(|&i| synthetic_tag(i)).collect(),
        });
    }
    let test = sentences.split_off(spec.train + spec.dev);
    let dev = sentences.split_off(spec.train);
    Ok((
        TaggedCorpus { sentences },
        TaggedCorpus { sentences: dev },
        TaggedCorpus { sentences: test },
    ))
}

/// Seeded shuffle, then a partition by `fractions` (train, dev, test).
pub fn split(
    corpus: &TaggedCorpus,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(TaggedCorpus, TaggedCorpus, TaggedCorpus), DataError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::Fractions(fractions));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let n = corpus.len() as f64;
    let n_train = ((fractions[0] * n).round() as usize).min(corpus.len());
    let n_dev = ((fractions[1] * n).round() as usize).min(corpus.len() - n_train);
    let take = |idx: &[usize]| TaggedCorpus {
        sentences: idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_dev]),
        take(&order[n_train + n_dev..]),
    ))
}
