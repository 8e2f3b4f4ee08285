//! Finite-difference gradient check of the full tagger over every cell rule,
//! gate kind and topology, on a tiny model.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::autodiff::{grad_check, Difference, Fault, GradCheckError, GradCheckOptions, GradCheckReport};
use crate::cells::{CellRule, GateKind};
use crate::data::{synthetic_tag, synthetic_token, Sentence, TaggedCorpus};
use crate::features::FeatureDims;
use crate::model::{ModelConfig, ModelError, TaggerModel, Vocabularies};
use crate::sampling::{BernoulliGrad, Sampler};
use crate::stack::{Combine, StackConfig, Topology};
use crate::{seeded_rng, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub vocab: usize,
    pub tags: usize,
    pub dims: FeatureDims,
    pub combine: Combine,
    /// Probability used for the fixed-Bernoulli gate kind.
    pub bernoulli_p: f64,
    /// Standard deviation of the random parameter values the check runs at.
    pub init_std: f64,
    pub eps: f64,
    pub difference: Difference,
    pub tolerance: f64,
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            hidden: 4,
            layers: 5,
            steps: 3,
            vocab: 10,
            tags: 5,
            dims: FeatureDims {
                word_dim: 2,
                cap_dim: 1,
                char_dim: 1,
                chars_per_side: 1,
                window: 3,
            },
            combine: Combine::Sum,
            bernoulli_p: 0.5,
            init_std: 0.5,
            eps: 1e-5,
            difference: Difference::Propagated,
            tolerance: 1e-4,
            max_entries_per_param: None,
            seed: 7,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Training mode with every mask frozen to a recorded draw.
    FrozenMasks,
    /// Deterministic test mode (expected values of stochastic gates).
    Test,
}

impl fmt::Display for CheckMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckMode::FrozenMasks => "train",
            CheckMode::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub rule: CellRule,
    pub gate: GateKind,
    pub topology: Topology,
    pub mode: CheckMode,
    pub report: GradCheckReport,
}

impl GradcheckEntry {
    pub fn name(&self) -> String {
        format!("{} / {} / {} / {}", self.rule, self.gate, self.topology, self.mode)
    }
}

impl fmt::Display for GradcheckEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:<20} {:<3} {:<5} {:.3e}", self.rule, self.gate, self.topology, self.mode, self.report.max_relative_error)?;
        if let Some((name, i)) = &self.report.worst {
            write!(f, "  worst {name}[{i}]")?;
        }
        Ok(())
    }
}

/// Every (rule, gate, topology) triple, in a fixed order.
pub fn combinations(bernoulli_p: f64) -> Vec<(CellRule, GateKind, Topology)> {
    let mut out = Vec::new();
    for rule in CellRule::ALL {
        for gate in GateKind::all(bernoulli_p) {
            for topology in Topology::ALL {
                out.push((rule, gate, topology));
            }
        }
    }
    out
}

fn tiny_corpus(config: &GradcheckConfig, seed: u64) -> (TaggedCorpus, Sentence) {
    let all = Sentence {
        tokens: (0..config.vocab).map(synthetic_token).collect(),
        tags: (0..config.vocab).map(|i| synthetic_tag(i % config.tags)).collect(),
    };
    let mut rng = seeded_rng(seed);
    let pick: Vec<usize> = (0..config.steps).map(|_| rng.random_range(0..config.vocab)).collect();
    let sentence = Sentence {
        // Mixed casing exercises more than one capitalization row.
        tokens: pick
            .iter()
            .enumerate()
            .map(|(t, &i)| {
                let w = synthetic_token(i);
                if t % 2 == 0 { w.to_uppercase() } else { w }
            })
            .collect(),
        tags: (0..config.steps).map(|_| synthetic_tag(rng.random_range(0..config.tags))).collect(),
    };
    (TaggedCorpus { sentences: vec![all] }, sentence)
}

/// Builds the tiny model for one combination with every parameter redrawn
/// from `N(0, init_std²)`.
pub fn tiny_model(
    config: &GradcheckConfig,
    rule: CellRule,
    gate: GateKind,
    topology: Topology,
    seed: u64,
) -> Result<(TaggerModel<f64>, Sentence), ModelError> {
    let (corpus, sentence) = tiny_corpus(config, seed);
    let model_config = ModelConfig {
        dims: config.dims,
        stack: StackConfig {
            layers: config.layers,
            hidden: config.hidden,
            topology,
            rule,
            gate,
            combine: config.combine,
        },
        window_drop: 0.25,
        hidden_drop: 0.5,
    };
    let mut rng = seeded_rng(seed);
    let mut model = TaggerModel::new(model_config, Vocabularies::from_corpus(&corpus)?, &mut rng)?;
    let normal = Normal::new(0.0, config.init_std).expect("finite std");
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.value_mut(id).as_mut_slice() {
            *v = normal.sample(&mut rng);
        }
    }
    Ok((model, sentence))
}

/// Checks one combination in one mode.
pub fn check_one(
    config: &GradcheckConfig,
    rule: CellRule,
    gate: GateKind,
    topology: Topology,
    mode: CheckMode,
    seed: u64,
) -> Result<GradcheckEntry, GradCheckError<ModelError>> {
    let (mut model, sentence) = tiny_model(config, rule, gate, topology, seed).map_err(GradCheckError::Model)?;
    let enc = model.net.encode(&sentence.tokens).map_err(GradCheckError::Model)?;
    let gold = model.net.gold_ids(&sentence.tags);

    let masks = match mode {
        CheckMode::FrozenMasks => {
            let mut rng = seeded_rng(seed ^ 0x9e37_79b9);
            let mut tape = Tape::new(&model.params);
            let mut sampler = Sampler::recording(&mut rng).with_bernoulli_grad(BernoulliGrad::FrozenMask);
            model.net.loss(&mut tape, &enc, &gold, &mut sampler).map_err(GradCheckError::Model)?;
            sampler.into_recorded().unwrap_or_default()
        }
        CheckMode::Test => Vec::new(),
    };

    let options = GradCheckOptions {
        eps: config.eps,
        difference: config.difference,
        max_entries_per_param: config.max_entries_per_param,
        fault: config.fault,
    };
    let net = model.net.clone();
    let report = grad_check(&mut model.params, options, |tape| {
        let mut sampler = match mode {
            CheckMode::FrozenMasks => Sampler::replay(&masks).with_bernoulli_grad(BernoulliGrad::FrozenMask),
            CheckMode::Test => Sampler::test(),
        };
        net.loss(tape, &enc, &gold, &mut sampler)
    })?;
    Ok(GradcheckEntry {
        rule,
        gate,
        topology,
        mode,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckSummary {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradcheckEntry> {
        self.entries.iter().filter(|e| !matches!(e.report.max_relative_error.partial_cmp(&self.tolerance), Some(Ordering::Less | Ordering::Equal)))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Runs every combination in frozen-mask training mode, plus test mode for
/// the stochastic gate kinds. Combinations run in parallel.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckSummary, GradCheckError<ModelError>> {
    let mut jobs = Vec::new();
    for (k, (rule, gate, topology)) in combinations(config.bernoulli_p).into_iter().enumerate() {
        let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        jobs.push((rule, gate, topology, CheckMode::FrozenMasks, seed));
        if gate.is_stochastic() {
            jobs.push((rule, gate, topology, CheckMode::Test, seed));
        }
    }
    let entries = jobs
        .into_par_iter()
        .map(|(rule, gate, topology, mode, seed)| check_one(config, rule, gate, topology, mode, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradcheckSummary {
        entries,
        tolerance: config.tolerance,
    })
}
