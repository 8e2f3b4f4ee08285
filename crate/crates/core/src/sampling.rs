//! Source of the binary masks drawn during a training-mode forward pass:
//! dropout masks and stochastic shortcut gates.
//!
//! A forward pass either runs in test mode (no masks), draws masks from a
//! seeded generator (optionally recording them), or replays a recorded list.
//! Replay is what makes a stochastic forward pass a deterministic function
//! of the parameters, as the gradient checker requires.

use rand::{Rng, RngCore};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// How gradients reach a learned Bernoulli probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BernoulliGrad {
    /// The sampled mask's gradient is routed to `p` as if `∂g/∂p = 1`.
    #[default]
    StraightThrough,
    /// The mask is a constant; `p` receives no gradient through it.
    FrozenMask,
}

enum Source<'a, T> {
    Test,
    Draw {
        rng: &'a mut dyn RngCore,
        record: Option<Vec<Vec<T>>>,
    },
    Replay {
        masks: &'a [Vec<T>],
        next: usize,
    },
}

pub struct Sampler<'a, T> {
    source: Source<'a, T>,
    pub bernoulli_grad: BernoulliGrad,
}

impl<'a, T: Scalar> Sampler<'a, T> {
    pub fn test() -> Self {
        Self {
            source: Source::Test,
            bernoulli_grad: BernoulliGrad::default(),
        }
    }

    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self {
            source: Source::Draw { rng, record: None },
            bernoulli_grad: BernoulliGrad::default(),
        }
    }

    /// Draws like [`Sampler::train`] and keeps every mask for later replay.
    pub fn recording(rng: &'a mut dyn RngCore) -> Self {
        Self {
            source: Source::Draw {
                rng,
                record: Some(Vec::new()),
            },
            bernoulli_grad: BernoulliGrad::default(),
        }
    }

    pub fn replay(masks: &'a [Vec<T>]) -> Self {
        Self {
            source: Source::Replay { masks, next: 0 },
            bernoulli_grad: BernoulliGrad::default(),
        }
    }

    pub fn with_bernoulli_grad(mut self, grad: BernoulliGrad) -> Self {
        self.bernoulli_grad = grad;
        self
    }

    pub fn mode(&self) -> Mode {
        match self.source {
            Source::Test => Mode::Test,
            _ => Mode::Train,
        }
    }

    /// Elementwise `1[u < p_i]` with `u ~ U[0,1)`. Panics in test mode, or
    /// when a replayed mask does not line up with the request.
    pub fn bernoulli(&mut self, probs: &[T]) -> Vec<T> {
        match &mut self.source {
            Source::Test => panic!("masks are never drawn in test mode"),
            Source::Draw { rng, record } => {
                let mask = draw_bernoulli(&mut **rng, probs);
                if let Some(r) = record {
                    r.push(mask.clone());
                }
                mask
            }
            Source::Replay { masks, next } => {
                let mask = masks
                    .get(*next)
                    .unwrap_or_else(|| panic!("replay exhausted after {next} masks"));
                assert_eq!(mask.len(), probs.len(), "replayed mask {next} has the wrong length");
                *next += 1;
                mask.clone()
            }
        }
    }

    /// Keep-mask for dropout rate `p`: each entry is 1 with probability `1 − p`.
    pub fn dropout(&mut self, len: usize, p: f64) -> Vec<T> {
        let keep = vec![T::lit(1.0 - p); len];
        self.bernoulli(&keep)
    }

    /// Masks drawn so far, when recording.
    pub fn into_recorded(self) -> Option<Vec<Vec<T>>> {
        match self.source {
            Source::Draw { record, .. } => record,
            _ => None,
        }
    }
}

pub(crate) fn draw_bernoulli<T: Scalar, R: RngCore + ?Sized>(rng: &mut R, probs: &[T]) -> Vec<T> {
    probs
        .iter()
        .map(|&p| {
            let u: f64 = rng.random();
            if u < p.to_f64_lossless() {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn recorded_masks_replay_identically() {
        let mut rng = seeded_rng(5);
        let mut s = Sampler::<f64>::recording(&mut rng);
        let a = s.bernoulli(&[0.5; 6]);
        let b = s.dropout(4, 0.25);
        let rec = s.into_recorded().unwrap();
        let mut r = Sampler::replay(&rec);
        assert_eq!(r.bernoulli(&[0.9; 6]), a);
        assert_eq!(r.dropout(4, 0.0), b);
    }

    #[test]
    fn degenerate_probabilities() {
        let mut rng = seeded_rng(1);
        let mut s = Sampler::<f64>::train(&mut rng);
        assert!(s.bernoulli(&[0.0; 100]).iter().all(|&x| x == 0.0));
        assert!(s.bernoulli(&[1.0; 100]).iter().all(|&x| x == 1.0));
        assert!(s.dropout(50, 0.0).iter().all(|&x| x == 1.0));
    }

    #[test]
    #[should_panic(expected = "test mode")]
    fn test_mode_never_samples() {
        Sampler::<f64>::test().bernoulli(&[0.5]);
    }
}
