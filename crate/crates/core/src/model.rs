//! End-to-end tagger: features, the bidirectional stack, and a softmax layer.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};
use crate::cells::{CellRule, GateKind};
use crate::data::TaggedCorpus;
use crate::features::{normalize, EncodedToken, FeatureDims, FeatureError, FeatureParams, Vocab};
use crate::linalg::{argmax, gaussian_init, softmax_slice, Matrix};
use crate::sampling::Sampler;
use crate::scalar::Scalar;
use crate::stack::{stack_forward, Combine, StackConfig, StackError, StackParams, Topology};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("empty sentence")]
    EmptySentence,
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("gold tag id {id} out of range for {tags} tags")]
    GoldOutOfRange { id: usize, tags: usize },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}': cannot parse '{value}'")]
    BadValue { key: String, value: String },
}

pub const RARE: &str = "<rare>";

/// Training tags in sorted order followed by the reserved rare tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab {
    tags: Vec<String>,
}

impl TagVocab {
    pub fn build<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let distinct: BTreeSet<String> = tags.into_iter().map(Into::into).filter(|t| t != RARE).collect();
        let mut tags: Vec<String> = distinct.into_iter().collect();
        tags.push(RARE.to_string());
        Self { tags }
    }

    /// Rebuilds from an explicit list whose last entry is the rare tag.
    pub fn from_list(tags: Vec<String>) -> Option<Self> {
        (tags.last().map(String::as_str) == Some(RARE)).then_some(Self { tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn rare_id(&self) -> usize {
        self.tags.len() - 1
    }

    /// Tags absent from training map to the rare id.
    pub fn id(&self, tag: &str) -> usize {
        self.tags[..self.rare_id()]
            .binary_search_by(|t| t.as_str().cmp(tag))
            .unwrap_or(self.rare_id())
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// Word, character and tag vocabularies of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub words: Vocab,
    pub chars: Vocab,
    pub tags: TagVocab,
}

impl Vocabularies {
    /// Every normalized training token, every character of those tokens,
    /// and every training tag.
    pub fn from_corpus(corpus: &TaggedCorpus) -> Result<Self, FeatureError> {
        let words: Vec<String> = corpus.tokens().map(normalize).collect::<Result<_, _>>()?;
        let chars: BTreeSet<String> = words.iter().flat_map(|w| w.chars().map(String::from)).collect();
        Ok(Self {
            chars: Vocab::build(chars),
            words: Vocab::build(words),
            tags: TagVocab::build(corpus.tags()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: FeatureDims,
    pub stack: StackConfig,
    /// Dropout rate on the window input.
    pub window_drop: f64,
    /// Dropout rate on the first and last hidden outputs.
    pub hidden_drop: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: FeatureDims::default(),
            stack: StackConfig::default(),
            window_drop: 0.25,
            hidden_drop: 0.5,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 13] = [
        "features.word_dim",
        "features.cap_dim",
        "features.char_dim",
        "features.chars_per_side",
        "features.window",
        "stack.layers",
        "stack.hidden",
        "stack.topology",
        "stack.rule",
        "stack.gate",
        "stack.combine",
        "dropout.window",
        "dropout.hidden",
    ];

    /// Flat `(key, value)` pairs in [`ModelConfig::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.dims;
        let s = &self.stack;
        let values = [
            d.word_dim.to_string(),
            d.cap_dim.to_string(),
            d.char_dim.to_string(),
            d.chars_per_side.to_string(),
            d.window.to_string(),
            s.layers.to_string(),
            s.hidden.to_string(),
            s.topology.to_string(),
            s.rule.to_string(),
            s.gate.to_string(),
            s.combine.to_string(),
            self.window_drop.to_string(),
            self.hidden_drop.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, ModelError> {
            value.trim().parse().map_err(|_| ModelError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let d = &mut self.dims;
        let s = &mut self.stack;
        match key {
            "features.word_dim" => d.word_dim = parse(key, value)?,
            "features.cap_dim" => d.cap_dim = parse(key, value)?,
            "features.char_dim" => d.char_dim = parse(key, value)?,
            "features.chars_per_side" => d.chars_per_side = parse(key, value)?,
            "features.window" => d.window = parse(key, value)?,
            "stack.layers" => s.layers = parse(key, value)?,
            "stack.hidden" => s.hidden = parse(key, value)?,
            "stack.topology" => s.topology = parse::<Topology>(key, value)?,
            "stack.rule" => s.rule = parse::<CellRule>(key, value)?,
            "stack.gate" => s.gate = parse::<GateKind>(key, value)?,
            "stack.combine" => s.combine = parse::<Combine>(key, value)?,
            "dropout.window" => self.window_drop = parse(key, value)?,
            "dropout.hidden" => self.hidden_drop = parse(key, value)?,
            other => return Err(ModelError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// Parameter handles and vocabularies: everything but the values.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub features: FeatureParams,
    pub stack: StackParams,
    pub tags: TagVocab,
    pub w_hy: ParamId,
    pub b_y: ParamId,
}

impl Network {
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<EncodedToken>, ModelError> {
        tokens
            .iter()
            .map(|t| self.features.encode(t.as_ref()).map_err(ModelError::from))
            .collect()
    }

    pub fn gold_ids<S: AsRef<str>>(&self, tags: &[S]) -> Vec<usize> {
        tags.iter().map(|t| self.tags.id(t.as_ref())).collect()
    }

    /// Pre-softmax scores per token.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: &[EncodedToken],
        sampler: &mut Sampler<'_, T>,
    ) -> Result<Vec<NodeId>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let inputs = self.features.sentence_inputs(tape, tokens, self.config.window_drop, sampler);
        let hs = stack_forward(
            tape,
            &self.stack,
            &self.config.stack,
            &inputs,
            self.config.hidden_drop,
            sampler,
        )?;
        let b = tape.param(self.b_y);
        Ok(hs
            .into_iter()
            .map(|h| {
                let z = tape.matvec(self.w_hy, h);
                tape.add(z, b)
            })
            .collect())
    }

    /// Mean negative log-likelihood of `gold` over the sentence.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: &[EncodedToken],
        gold: &[usize],
        sampler: &mut Sampler<'_, T>,
    ) -> Result<NodeId, ModelError> {
        if tokens.len() != gold.len() {
            return Err(ModelError::LengthMismatch {
                tokens: tokens.len(),
                tags: gold.len(),
            });
        }
        if let Some(&id) = gold.iter().find(|&&g| g >= self.tags.len()) {
            return Err(ModelError::GoldOutOfRange {
                id,
                tags: self.tags.len(),
            });
        }
        let logits = self.logits(tape, tokens, sampler)?;
        let terms: Vec<NodeId> = logits.iter().zip(gold).map(|(&z, &g)| tape.softmax_nll(z, g)).collect();
        let total = tape.sum(&terms);
        Ok(tape.scale(total, T::lit(1.0 / gold.len() as f64)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel<T> {
    pub params: ParamSet<T>,
    pub net: Network,
}

impl<T: Scalar> TaggerModel<T> {
    /// Registers features, then the stack, then the output layer (`W_hy`
    /// Gaussian with fan-in `2n`, `b_y` zero).
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocabs: Vocabularies, rng: &mut R) -> Result<Self, ModelError> {
        let mut params = ParamSet::new();
        let features = FeatureParams::register(&mut params, config.dims, vocabs.words, vocabs.chars, rng)?;
        let stack = StackParams::register(&mut params, &config.stack, config.dims.input_dim(), rng)?;
        let two_n = 2 * config.stack.hidden;
        let w_hy = params.add("output.W", gaussian_init(vocabs.tags.len(), two_n, two_n, rng));
        let b_y = params.add("output.b", Matrix::zeros(vocabs.tags.len(), 1));
        Ok(Self {
            params,
            net: Network {
                config,
                features,
                stack,
                tags: vocabs.tags,
                w_hy,
                b_y,
            },
        })
    }

    pub fn from_corpus<R: Rng + ?Sized>(
        config: ModelConfig,
        corpus: &TaggedCorpus,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Self::new(config, Vocabularies::from_corpus(corpus)?, rng)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn tags(&self) -> &TagVocab {
        &self.net.tags
    }

    pub fn logits<S: AsRef<str>>(&self, tokens: &[S], sampler: &mut Sampler<'_, T>) -> Result<Vec<Vec<T>>, ModelError> {
        let enc = self.net.encode(tokens)?;
        let mut tape = Tape::new(&self.params);
        let ids = self.net.logits(&mut tape, &enc, sampler)?;
        Ok(ids.iter().map(|&z| tape.value(z).to_vec()).collect())
    }

    /// Per-token tag distributions.
    pub fn forward<S: AsRef<str>>(&self, tokens: &[S], sampler: &mut Sampler<'_, T>) -> Result<Vec<Vec<T>>, ModelError> {
        Ok(self.logits(tokens, sampler)?.iter().map(|z| softmax_slice(z)).collect())
    }

    /// Test-mode argmax tag ids, lowest id on ties.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, ModelError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        Ok(predict_from_logits(&self.logits(tokens, &mut Sampler::test())?))
    }

    pub fn predict_tags<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<&str>, ModelError> {
        Ok(self.predict(tokens)?.into_iter().map(|id| self.net.tags.tag(id)).collect())
    }

    /// Token accuracy over a corpus. Gold tags unseen in training count as
    /// rare, and a rare prediction is never correct.
    pub fn evaluate(&self, corpus: &TaggedCorpus) -> Result<f64, ModelError> {
        let counts = corpus
            .sentences
            .par_iter()
            .map(|s| {
                let pred = self.predict(&s.tokens)?;
                let rare = self.net.tags.rare_id();
                let correct = pred
                    .iter()
                    .zip(&s.tags)
                    .filter(|(&p, g)| p != rare && p == self.net.tags.id(g))
                    .count();
                Ok((correct, pred.len()))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let (correct, total) = counts.iter().fold((0, 0), |(c, t), &(a, b)| (c + a, t + b));
        Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
    }

    /// Mean test-mode loss per sentence.
    pub fn sentence_loss<S: AsRef<str>, G: AsRef<str>>(&self, tokens: &[S], tags: &[G]) -> Result<T, ModelError> {
        let enc = self.net.encode(tokens)?;
        let gold = self.net.gold_ids(tags);
        let mut tape = Tape::new(&self.params);
        let loss = self.net.loss(&mut tape, &enc, &gold, &mut Sampler::test())?;
        Ok(tape.scalar(loss))
    }
}

pub fn predict_from_logits<T: Scalar>(logits: &[Vec<T>]) -> Vec<usize> {
    logits.iter().map(|z| argmax(z).expect("at least one tag")).collect()
}

/// `−(1/N) Σ_t log probs[t][gold[t]]`.
pub fn nll_loss<T: Scalar>(probs: &[Vec<T>], gold: &[usize]) -> Result<T, ModelError> {
    if probs.len() != gold.len() {
        return Err(ModelError::LengthMismatch {
            tokens: probs.len(),
            tags: gold.len(),
        });
    }
    let mut total = T::zero();
    for (p, &g) in probs.iter().zip(gold) {
        let pg = *p.get(g).ok_or(ModelError::GoldOutOfRange { id: g, tags: p.len() })?;
        total -= pg.ln();
    }
    Ok(if gold.is_empty() { T::zero() } else { total / T::lit(gold.len() as f64) })
}

/// Fraction of positions where the two sequences agree. Panics on a length
/// mismatch; empty input gives 0.
pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lengths differ");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
