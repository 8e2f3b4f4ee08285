//! Stacked bidirectional layers wired under one of five skip topologies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};
use crate::cells::{cell_param_count, shortcut_block_step, CellError, CellParams, CellRule, CellState, GateKind, Skip};
use crate::linalg::gaussian_init;
use crate::sampling::{Mode, Sampler};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StackError {
    #[error("layer {layer} is outside 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("stack needs at least one layer and width >= 1 (got {layers} layers, width {hidden})")]
    EmptyStack { layers: usize, hidden: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("unknown {what} '{value}'")]
    Parse { what: &'static str, value: String },
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// Which lower layers feed gated skips into each layer.
///
/// Layer indices are 1-based. Rules for a layer `l`:
/// - `T1`: layer 1 feeds every layer from 3 up.
/// - `T2`: span-1 blocks, `l − 2 → l`.
/// - `T3`: span-2 blocks, `l − 3 → l`.
/// - `T4`: nested; layer 1 feeds layer 3 and every odd layer from 5 up,
///   which also receives `l − 2`.
/// - `T5`: dense nesting, `{l − 2, l − 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl Topology {
    pub const ALL: [Topology; 5] = [Topology::T1, Topology::T2, Topology::T3, Topology::T4, Topology::T5];
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::T1 => "T1",
            Topology::T2 => "T2",
            Topology::T3 => "T3",
            Topology::T4 => "T4",
            Topology::T5 => "T5",
        };
        f.write_str(s)
    }
}

impl FromStr for Topology {
    type Err = StackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topology::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StackError::Parse {
                what: "topology",
                value: s.to_string(),
            })
    }
}

/// Skip sources of 1-based layer `l` in a stack of `layers`, highest first.
pub fn skip_sources(topology: Topology, l: usize, layers: usize) -> Result<Vec<usize>, StackError> {
    if l == 0 || l > layers {
        return Err(StackError::LayerOutOfRange { layer: l, layers });
    }
    let sources = match topology {
        Topology::T1 if l >= 3 => vec![1],
        Topology::T2 if l >= 3 => vec![l - 2],
        Topology::T3 if l >= 4 => vec![l - 3],
        Topology::T4 if l == 3 => vec![1],
        Topology::T4 if l >= 5 && l % 2 == 1 => vec![l - 2, 1],
        Topology::T5 if l >= 4 => vec![l - 2, l - 3],
        Topology::T5 if l == 3 => vec![1],
        _ => vec![],
    };
    Ok(sources)
}

/// How the two directions of a layer feed the next layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Combine {
    /// Elementwise sum of forward and backward outputs.
    #[default]
    Sum,
    /// `P·[fwd; bwd]` with a learned `n × 2n` projection per layer.
    ConcatProject,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Sum => "sum",
            Combine::ConcatProject => "concat-project",
        })
    }
}

impl FromStr for Combine {
    type Err = StackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sum" => Ok(Combine::Sum),
            "concat-project" => Ok(Combine::ConcatProject),
            other => Err(StackError::Parse {
                what: "combine mode",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    pub hidden: usize,
    pub topology: Topology,
    pub rule: CellRule,
    pub gate: GateKind,
    pub combine: Combine,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            layers: 9,
            hidden: 465,
            topology: Topology::T2,
            rule: CellRule::ShortcutBlock,
            gate: GateKind::NonlinearPrev,
            combine: Combine::Sum,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<(), StackError> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(StackError::EmptyStack {
                layers: self.layers,
                hidden: self.hidden,
            });
        }
        self.gate.validate()?;
        Ok(())
    }

    pub fn sources(&self, l: usize) -> Vec<usize> {
        if self.rule == CellRule::PlainLstm {
            return vec![];
        }
        skip_sources(self.topology, l, self.layers).expect("layer index in range")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    /// 1-based layer index.
    pub index: usize,
    pub rule: CellRule,
    pub sources: Vec<usize>,
    pub fwd: CellParams,
    pub bwd: CellParams,
    /// Projection applied to the previous layer's `[fwd; bwd]`.
    pub proj: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackParams {
    pub layers: Vec<LayerParams>,
}

impl StackParams {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        config: &StackConfig,
        d_in: usize,
        rng: &mut R,
    ) -> Result<Self, StackError> {
        config.validate()?;
        let n = config.hidden;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let sources = config.sources(l);
            let rule = config.rule.effective(sources.len());
            let width = if l == 1 { d_in } else { n };
            let proj = (l > 1 && config.combine == Combine::ConcatProject)
                .then(|| ps.add(format!("stack.layer{l}.proj"), gaussian_init(n, 2 * n, 2 * n, rng)));
            let mut cell = |dir: &str, rng: &mut R| {
                CellParams::register(
                    ps,
                    &format!("stack.layer{l}.{dir}"),
                    width,
                    n,
                    rule,
                    config.gate,
                    sources.len(),
                    rng,
                )
            };
            let fwd = cell("fwd", rng);
            let bwd = cell("bwd", rng);
            layers.push(LayerParams {
                index: l,
                rule,
                sources,
                fwd,
                bwd,
                proj,
            });
        }
        Ok(Self { layers })
    }
}

/// Closed-form trainable-parameter count of a stack.
pub fn stack_param_count(config: &StackConfig, d_in: usize) -> usize {
    let n = config.hidden;
    (1..=config.layers)
        .map(|l| {
            let skips = config.sources(l).len();
            let width = if l == 1 { d_in } else { n };
            let proj = if l > 1 && config.combine == Combine::ConcatProject {
                2 * n * n
            } else {
                0
            };
            2 * cell_param_count(width, n, config.rule, config.gate, skips) + proj
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

/// Dropout on hidden outputs: applied to the first layer's output (when the
/// stack has more than one layer) and to the top layer's concatenated output.
/// In test mode the activations are scaled by `1 − p` instead.
fn hidden_dropout<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: NodeId,
    p: f64,
    sampler: &mut Sampler<'_, T>,
) -> NodeId {
    if p == 0.0 {
        return x;
    }
    match sampler.mode() {
        Mode::Train => {
            let len = tape.value(x).len();
            let mask = sampler.dropout(len, p);
            tape.mul_const(x, mask)
        }
        Mode::Test => tape.scale(x, T::lit(1.0 - p)),
    }
}

/// Runs every layer in both directions and returns, per token, the
/// concatenation of the top layer's forward and backward outputs (`2n`).
pub fn stack_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &StackParams,
    config: &StackConfig,
    inputs: &[NodeId],
    hidden_drop: f64,
    sampler: &mut Sampler<'_, T>,
) -> Result<Vec<NodeId>, StackError> {
    let steps = inputs.len();
    if steps == 0 {
        return Err(StackError::EmptySequence);
    }
    let n = config.hidden;
    // [layer][direction][t]
    let mut hs: Vec<[Vec<NodeId>; 2]> = Vec::with_capacity(params.layers.len());
    let mut cs: Vec<[Vec<Option<NodeId>>; 2]> = Vec::with_capacity(params.layers.len());
    let mut layer_in: Vec<NodeId> = inputs.to_vec();

    for (li, layer) in params.layers.iter().enumerate() {
        let mut out_h: [Vec<NodeId>; 2] = [Vec::new(), Vec::new()];
        let mut out_c: [Vec<Option<NodeId>>; 2] = [Vec::new(), Vec::new()];
        for (di, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
            let cell = if dir == Direction::Forward { &layer.fwd } else { &layer.bwd };
            let mut h = vec![None; steps];
            let mut c = vec![None; steps];
            let mut state = CellState::zeros(tape, n, layer.rule.has_cell_state());
            let order: Vec<usize> = match dir {
                Direction::Forward => (0..steps).collect(),
                Direction::Backward => (0..steps).rev().collect(),
            };
            for t in order {
                let skips: Vec<Skip> = layer
                    .sources
                    .iter()
                    .map(|&s| Skip {
                        h: hs[s - 1][di][t],
                        c: cs[s - 1][di][t],
                    })
                    .collect();
                state = shortcut_block_step(
                    tape,
                    cell,
                    layer.rule,
                    config.gate,
                    layer_in[t],
                    &state,
                    &skips,
                    sampler,
                )?;
                h[t] = Some(state.h);
                c[t] = state.c;
            }
            out_h[di] = h.into_iter().map(|x| x.expect("every step visited")).collect();
            out_c[di] = c;
        }

        let is_top = li + 1 == params.layers.len();
        if li == 0 && !is_top {
            for dir in out_h.iter_mut() {
                for x in dir.iter_mut() {
                    *x = hidden_dropout(tape, *x, hidden_drop, sampler);
                }
            }
        }
        if !is_top {
            let next = &params.layers[li + 1];
            layer_in = (0..steps)
                .map(|t| {
                    let (f, b) = (out_h[0][t], out_h[1][t]);
                    match next.proj {
                        Some(p) => {
                            let fb = tape.concat(&[f, b]);
                            tape.matvec(p, fb)
                        }
                        None => tape.add(f, b),
                    }
                })
                .collect();
        }
        hs.push(out_h);
        cs.push(out_c);
    }

    let top = hs.last().expect("at least one layer");
    Ok((0..steps)
        .map(|t| {
            let fb = tape.concat(&[top[0][t], top[1][t]]);
            hidden_dropout(tape, fb, hidden_drop, sampler)
        })
        .collect())
}
