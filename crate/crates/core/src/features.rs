//! Token to input-vector pipeline: normalization, word / capitalization /
//! character lookups, and the gated context window.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};
use crate::linalg::{gaussian_init, Matrix};
use crate::sampling::{Mode, Sampler};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("empty token")]
    EmptyToken,
    #[error("window size must be odd and >= 1, got {0}")]
    EvenWindow(usize),
    #[error("{path}:{line}: {msg}")]
    Embeddings { path: String, line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Digits become `9`, then everything is lowercased.
pub fn normalize(token: &str) -> Result<String, FeatureError> {
    if token.is_empty() {
        return Err(FeatureError::EmptyToken);
    }
    let digits: String = token
        .chars()
        .map(|c| if c.is_ascii_digit() { '9' } else { c })
        .collect();
    Ok(digits.to_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CapCategory {
    AllLower,
    AllCaps,
    InitialCap,
    Mixed,
    NonAlpha,
}

impl CapCategory {
    pub const COUNT: usize = 5;
    /// Row of the capitalization table reserved for the padding token.
    pub const PAD_ROW: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CapCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapCategory::AllLower => "all-lower",
            CapCategory::AllCaps => "all-caps",
            CapCategory::InitialCap => "initial-cap",
            CapCategory::Mixed => "mixed",
            CapCategory::NonAlpha => "non-alpha",
        })
    }
}

/// Casing class of a raw (not yet lowercased) token. Only alphabetic
/// characters are considered.
pub fn cap_category(token: &str) -> CapCategory {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return CapCategory::NonAlpha;
    }
    if letters.iter().all(|c| !c.is_uppercase()) {
        return CapCategory::AllLower;
    }
    if letters.iter().all(|c| !c.is_lowercase()) {
        return CapCategory::AllCaps;
    }
    let first = token.chars().next().expect("non-empty");
    if first.is_uppercase() && letters[1..].iter().all(|c| !c.is_uppercase()) {
        CapCategory::InitialCap
    } else {
        CapCategory::Mixed
    }
}

/// Dense string-to-id map with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Builds from distinct items in sorted order, after the reserved ids.
    pub fn build<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let distinct: BTreeSet<String> = items.into_iter().map(Into::into).collect();
        Self::from_list(
            [PAD.to_string(), UNK.to_string()]
                .into_iter()
                .chain(distinct.into_iter().filter(|s| s != PAD && s != UNK)),
        )
    }

    /// Builds from an explicit id order (used when loading checkpoints).
    pub fn from_list<I: IntoIterator<Item = String>>(items: I) -> Self {
        let items: Vec<String> = items.into_iter().collect();
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { items, index }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id(&self, item: &str) -> usize {
        self.index.get(item).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Character ids: the leftmost `per_side` characters padded on the right,
/// then the rightmost `per_side` characters padded on the left.
pub fn char_ids(token: &str, chars: &Vocab, per_side: usize) -> Vec<usize> {
    let cs: Vec<String> = token.chars().map(String::from).collect();
    let mut ids = Vec::with_capacity(2 * per_side);
    for k in 0..per_side {
        ids.push(cs.get(k).map_or(Vocab::PAD_ID, |c| chars.id(c)));
    }
    let len = cs.len();
    for k in 0..per_side {
        // Slot k holds character len - per_side + k, when that exists.
        let pos = (len + k).checked_sub(per_side);
        ids.push(pos.map_or(Vocab::PAD_ID, |p| chars.id(&cs[p])));
    }
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDims {
    pub word_dim: usize,
    pub cap_dim: usize,
    pub char_dim: usize,
    pub chars_per_side: usize,
    pub window: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            word_dim: 100,
            cap_dim: 5,
            char_dim: 5,
            chars_per_side: 5,
            window: 3,
        }
    }
}

impl FeatureDims {
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.cap_dim + 2 * self.chars_per_side * self.char_dim
    }

    pub fn input_dim(&self) -> usize {
        self.token_dim() * self.window
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window.is_multiple_of(2) {
            return Err(FeatureError::EvenWindow(self.window));
        }
        Ok(())
    }

    pub fn param_count(&self, words: usize, chars: usize) -> usize {
        words * self.word_dim
            + (CapCategory::COUNT + 1) * self.cap_dim
            + chars * self.char_dim
            + self.window * self.token_dim()
    }
}

/// Lookup-table ids for one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedToken {
    pub word: usize,
    pub cap: usize,
    pub chars: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub dims: FeatureDims,
    pub words: Vocab,
    pub chars: Vocab,
    pub word_table: ParamId,
    pub cap_table: ParamId,
    pub char_table: ParamId,
    /// One pre-sigmoid gate vector per window offset, `window × token_dim`.
    pub window_gate: ParamId,
}

impl FeatureParams {
    /// Registers the lookup tables (Gaussian with unit fan-in) and the window
    /// gates (zero, so every gate starts at 0.5).
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        dims: FeatureDims,
        words: Vocab,
        chars: Vocab,
        rng: &mut R,
    ) -> Result<Self, FeatureError> {
        dims.validate()?;
        let word_table = ps.add("features.word", gaussian_init(words.len(), dims.word_dim, 1, rng));
        let cap_table = ps.add(
            "features.cap",
            gaussian_init(CapCategory::COUNT + 1, dims.cap_dim, 1, rng),
        );
        let char_table = ps.add("features.char", gaussian_init(chars.len(), dims.char_dim, 1, rng));
        let window_gate = ps.add(
            "features.window_gate",
            Matrix::zeros(dims.window, dims.token_dim()),
        );
        Ok(Self {
            dims,
            words,
            chars,
            word_table,
            cap_table,
            char_table,
            window_gate,
        })
    }

    pub fn encode(&self, raw: &str) -> Result<EncodedToken, FeatureError> {
        let norm = normalize(raw)?;
        Ok(EncodedToken {
            word: self.words.id(&norm),
            cap: cap_category(raw).index(),
            chars: char_ids(&norm, &self.chars, self.dims.chars_per_side),
        })
    }

    pub fn pad_token(&self) -> EncodedToken {
        EncodedToken {
            word: Vocab::PAD_ID,
            cap: CapCategory::PAD_ROW,
            chars: vec![Vocab::PAD_ID; 2 * self.dims.chars_per_side],
        }
    }

    /// `[L_w(w); L_a(a); L_c(c_1); …; L_c(c_k)]`.
    pub fn token_feature<T: Scalar>(&self, tape: &mut Tape<'_, T>, tok: &EncodedToken) -> NodeId {
        let mut parts = Vec::with_capacity(2 + tok.chars.len());
        parts.push(tape.row(self.word_table, tok.word));
        parts.push(tape.row(self.cap_table, tok.cap));
        for &c in &tok.chars {
            parts.push(tape.row(self.char_table, c));
        }
        tape.concat(&parts)
    }

    /// Gated window around position `t` (0-based): for each offset, the
    /// sigmoid of that offset's gate times the neighbour's feature, with the
    /// padding feature outside the sentence.
    pub fn window_input<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        feats: &[NodeId],
        pad: NodeId,
        t: usize,
    ) -> NodeId {
        let half = self.dims.window / 2;
        let parts: Vec<NodeId> = (0..self.dims.window)
            .map(|slot| {
                let pos = (t + slot).checked_sub(half).filter(|&p| p < feats.len());
                let f = pos.map_or(pad, |p| feats[p]);
                let r = tape.row(self.window_gate, slot);
                let gate = tape.sigmoid(r);
                tape.mul(gate, f)
            })
            .collect();
        tape.concat(&parts)
    }

    /// Window inputs for a whole sentence, with window dropout applied
    /// (masked in train mode, scaled by `1 − p` in test mode).
    pub fn sentence_inputs<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: &[EncodedToken],
        window_drop: f64,
        sampler: &mut Sampler<'_, T>,
    ) -> Vec<NodeId> {
        let feats: Vec<NodeId> = tokens.iter().map(|t| self.token_feature(tape, t)).collect();
        let pad = self.token_feature(tape, &self.pad_token());
        (0..tokens.len())
            .map(|t| {
                let x = self.window_input(tape, &feats, pad, t);
                if window_drop == 0.0 {
                    return x;
                }
                match sampler.mode() {
                    Mode::Train => {
                        let mask = sampler.dropout(self.dims.input_dim(), window_drop);
                        tape.mul_const(x, mask)
                    }
                    Mode::Test => tape.scale(x, T::lit(1.0 - window_drop)),
                }
            })
            .collect()
    }
}

/// Loads `token v1 … vk` lines into the word table. Tokens are normalized
/// before lookup; tokens outside the vocabulary are skipped. Returns how many
/// rows were overwritten.
pub fn load_pretrained<T: Scalar>(
    path: &Path,
    ps: &mut ParamSet<T>,
    features: &FeatureParams,
) -> Result<usize, FeatureError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| FeatureError::Io {
        path: display.clone(),
        source,
    })?;
    let dim = features.dims.word_dim;
    let mut set = 0;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FeatureError::Io {
            path: display.clone(),
            source,
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let err = |msg: String| FeatureError::Embeddings {
            path: display.clone(),
            line: lineno + 1,
            msg,
        };
        let values: Vec<T> = fields
            .map(|f| f.parse::<f64>().map(T::lit).map_err(|e| err(format!("bad value '{f}': {e}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(err(format!("expected {dim} values, found {}", values.len())));
        }
        let norm = normalize(token)?;
        if !features.words.contains(&norm) || norm == PAD || norm == UNK {
            continue;
        }
        let id = features.words.id(&norm);
        ps.value_mut(features.word_table).row_mut(id).copy_from_slice(&values);
        set += 1;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn letters() -> Vocab {
        Vocab::build(('a'..='z').map(String::from))
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize("IBM2000").unwrap(), "ibm9999");
        assert_eq!(normalize("The").unwrap(), "the");
        assert_eq!(normalize("3.14").unwrap(), "9.99");
        assert!(matches!(normalize(""), Err(FeatureError::EmptyToken)));
    }

    #[test]
    fn capitalization_examples() {
        assert_eq!(cap_category("the"), CapCategory::AllLower);
        assert_eq!(cap_category("NATO"), CapCategory::AllCaps);
        assert_eq!(cap_category("iPhone"), CapCategory::Mixed);
        assert_eq!(cap_category("The"), CapCategory::InitialCap);
        assert_eq!(cap_category("3.14"), CapCategory::NonAlpha);
        assert_eq!(cap_category("McDonald"), CapCategory::Mixed);
    }

    #[test]
    fn char_padding_examples() {
        let v = letters();
        let id = |c: &str| v.id(c);
        let p = Vocab::PAD_ID;
        assert_eq!(
            char_ids("cat", &v, 5),
            vec![id("c"), id("a"), id("t"), p, p, p, p, id("c"), id("a"), id("t")]
        );
        let expected: Vec<usize> = "internally".chars().map(|c| id(&c.to_string())).collect();
        assert_eq!(char_ids("internationally", &v, 5), expected);
        assert_eq!(char_ids("a", &v, 5), vec![id("a"), p, p, p, p, p, p, p, p, id("a")]);
        assert_eq!(char_ids("é", &v, 2), vec![Vocab::UNK_ID, p, p, Vocab::UNK_ID]);
    }

    #[test]
    fn vocab_reserved_ids() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.id(PAD), Vocab::PAD_ID);
        assert_eq!(v.id(UNK), Vocab::UNK_ID);
        assert_ne!(Vocab::PAD_ID, Vocab::UNK_ID);
        assert_eq!(v.items(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("zzz"), Vocab::UNK_ID);
    }

    #[test]
    fn default_dims_give_465_inputs() {
        let d = FeatureDims::default();
        assert_eq!(d.token_dim(), 155);
        assert_eq!(d.input_dim(), 465);
    }

    #[test]
    fn even_window_rejected() {
        let d = FeatureDims {
            window: 2,
            ..Default::default()
        };
        assert!(matches!(d.validate(), Err(FeatureError::EvenWindow(2))));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[A-Za-z0-9.,'-]{1,20}") {
            let once = normalize(&s).unwrap();
            prop_assert_eq!(normalize(&once).unwrap(), once);
        }

        #[test]
        fn char_ids_shape(s in "[a-z]{1,25}") {
            let ids = char_ids(&s, &letters(), 5);
            prop_assert_eq!(ids.len(), 10);
            if s.chars().count() >= 10 {
                prop_assert!(!ids.contains(&Vocab::PAD_ID));
            }
        }
    }
}
