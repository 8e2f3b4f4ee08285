//! Recurrent update rules: the plain LSTM step, the shortcut block, its
//! ablation variants, and the shortcut gate functions.
//!
//! Every rule computes four pre-activation row blocks from
//! `W·[x; h_prev] + b`, laid out as `(i, f-or-g, o, s)`. Rules that keep a
//! self-connected cell state use the second block as the forget gate;
//! shortcut-block rules drop the cell state and leave that block unread.
//! Skip terms are added after the gate chosen by [`GateKind`] is applied.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};
use crate::linalg::{gaussian_init, orthogonal_init, Matrix};
use crate::sampling::{BernoulliGrad, Mode, Sampler};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CellError {
    #[error("rule {0} needs the previous cell state, but none was given")]
    MissingCellState(CellRule),
    #[error("rule {0} needs the skip source's cell state, but it has none")]
    MissingSkipCellState(CellRule),
    #[error("skip vector has length {found}, layer width is {expected}")]
    SkipShape { expected: usize, found: usize },
    #[error("Bernoulli gate probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("gate {kind} needs its {what} input")]
    MissingGateInput { kind: GateKind, what: &'static str },
    #[error("layer has {found} gate parameter sets, rule {rule} with {skips} skips needs {expected}")]
    GateCount {
        rule: CellRule,
        skips: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown {what} '{value}'")]
    Parse { what: &'static str, value: String },
}

/// Which update equations a layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellRule {
    PlainLstm,
    /// LSTM with a gated skip added to the output only.
    WuBaseline,
    Case1NoGate,
    Case1WithGate,
    Case1Highway,
    Case1SeparateGates,
    ShortcutBlock,
    SbNoGateInH,
    SbNoGateInM,
    SbSharedOutputGate,
    SbNoShortcutInternal,
    SbNoShortcutCellOutput,
}

impl CellRule {
    pub const ALL: [CellRule; 12] = [
        CellRule::PlainLstm,
        CellRule::WuBaseline,
        CellRule::Case1NoGate,
        CellRule::Case1WithGate,
        CellRule::Case1Highway,
        CellRule::Case1SeparateGates,
        CellRule::ShortcutBlock,
        CellRule::SbNoGateInH,
        CellRule::SbNoGateInM,
        CellRule::SbSharedOutputGate,
        CellRule::SbNoShortcutInternal,
        CellRule::SbNoShortcutCellOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellRule::PlainLstm => "PlainLSTM",
            CellRule::WuBaseline => "WuBaseline",
            CellRule::Case1NoGate => "Case1NoGate",
            CellRule::Case1WithGate => "Case1WithGate",
            CellRule::Case1Highway => "Case1Highway",
            CellRule::Case1SeparateGates => "Case1SeparateGates",
            CellRule::ShortcutBlock => "ShortcutBlock",
            CellRule::SbNoGateInH => "SB_NoGateInH",
            CellRule::SbNoGateInM => "SB_NoGateInM",
            CellRule::SbSharedOutputGate => "SB_SharedOutputGate",
            CellRule::SbNoShortcutInternal => "SB_NoShortcutInternal",
            CellRule::SbNoShortcutCellOutput => "SB_NoShortcutCellOutput",
        }
    }

    /// Whether the rule carries a self-connected cell state across time.
    pub fn has_cell_state(self) -> bool {
        matches!(
            self,
            CellRule::PlainLstm
                | CellRule::WuBaseline
                | CellRule::Case1NoGate
                | CellRule::Case1WithGate
                | CellRule::Case1Highway
                | CellRule::Case1SeparateGates
        )
    }

    /// Number of independent gates per skip source.
    pub fn gates_per_skip(self) -> usize {
        match self {
            CellRule::PlainLstm | CellRule::Case1NoGate => 0,
            CellRule::Case1SeparateGates => 2,
            _ => 1,
        }
    }

    /// The rule a layer actually runs given how many skip sources feed it.
    pub fn effective(self, num_skips: usize) -> CellRule {
        if num_skips == 0 {
            CellRule::PlainLstm
        } else {
            self
        }
    }
}

impl fmt::Display for CellRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellRule {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellRule::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CellError::Parse {
                what: "cell rule",
                value: s.to_string(),
            })
    }
}

/// How the shortcut gate `g` is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateKind {
    /// `g ⊙ h⁻` is replaced by a learned matrix product `A·h⁻`.
    LinearMap,
    /// `σ(W·h^{l-1} + b)`.
    NonlinearPrev,
    /// `σ(U·h^l_{t-1} + b)`.
    NonlinearRecurrent,
    /// `σ(V·h⁻ + b)`.
    NonlinearSkip,
    /// Elementwise Bernoulli with a fixed probability.
    BernoulliFixed(f64),
    /// Elementwise Bernoulli with `p = σ(H·h^{l-1} + b)`.
    BernoulliLearned,
    /// `σ(W·h^{l-1} + b)` gate, with the skip replaced by `tanh(h⁻)`.
    TanhScaledSkip,
}

/// Which vector a gate's weight matrix reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateInput {
    PrevLayer,
    PrevTime,
    Skip,
}

impl GateKind {
    /// The seven gate functions, with `p` for the fixed Bernoulli gate.
    pub fn all(p: f64) -> [GateKind; 7] {
        [
            GateKind::LinearMap,
            GateKind::NonlinearPrev,
            GateKind::NonlinearRecurrent,
            GateKind::NonlinearSkip,
            GateKind::BernoulliFixed(p),
            GateKind::BernoulliLearned,
            GateKind::TanhScaledSkip,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::LinearMap => "LinearMap",
            GateKind::NonlinearPrev => "NonlinearPrev",
            GateKind::NonlinearRecurrent => "NonlinearRecurrent",
            GateKind::NonlinearSkip => "NonlinearSkip",
            GateKind::BernoulliFixed(_) => "BernoulliFixed",
            GateKind::BernoulliLearned => "BernoulliLearned",
            GateKind::TanhScaledSkip => "TanhScaledSkip",
        }
    }

    pub fn weight_input(self) -> Option<GateInput> {
        match self {
            GateKind::LinearMap | GateKind::NonlinearSkip => Some(GateInput::Skip),
            GateKind::NonlinearPrev | GateKind::BernoulliLearned | GateKind::TanhScaledSkip => {
                Some(GateInput::PrevLayer)
            }
            GateKind::NonlinearRecurrent => Some(GateInput::PrevTime),
            GateKind::BernoulliFixed(_) => None,
        }
    }

    pub fn has_bias(self) -> bool {
        !matches!(self, GateKind::LinearMap | GateKind::BernoulliFixed(_))
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, GateKind::BernoulliFixed(_) | GateKind::BernoulliLearned)
    }

    pub fn validate(self) -> Result<(), CellError> {
        match self {
            GateKind::BernoulliFixed(p) if !(0.0..=1.0).contains(&p) => {
                Err(CellError::InvalidProbability(p))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateKind::BernoulliFixed(p) => write!(f, "BernoulliFixed({p})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for GateKind {
    type Err = CellError;

    /// Accepts the variant name; `BernoulliFixed` takes an optional
    /// `(p)` suffix and defaults to `p = 0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CellError::Parse {
            what: "gate kind",
            value: s.to_string(),
        };
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("BernoulliFixed") {
            let p = match rest.trim() {
                "" => 0.5,
                r => r
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|r| r.trim().parse::<f64>().ok())
                    .ok_or_else(bad)?,
            };
            let kind = GateKind::BernoulliFixed(p);
            kind.validate()?;
            return Ok(kind);
        }
        GateKind::all(0.5)
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(bad)
    }
}

/// Weights of one gate. Either may be absent depending on the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateParams {
    pub w: Option<ParamId>,
    pub b: Option<ParamId>,
}

/// Handles to one recurrent layer's parameters in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellParams {
    pub d_in: usize,
    pub n: usize,
    /// `4n × (d_in + n)`, row blocks `(i, f-or-g, o, s)`.
    pub w: ParamId,
    pub b: ParamId,
    /// Gate parameters, `gates_per_skip` consecutive entries per skip source.
    pub gates: Vec<GateParams>,
}

impl CellParams {
    /// Registers a layer's parameters under `prefix`. The input block of `W`
    /// is Gaussian, each of the four `n × n` recurrent blocks is an
    /// independent orthogonal matrix, and biases are zero.
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        d_in: usize,
        n: usize,
        rule: CellRule,
        kind: GateKind,
        num_skips: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = Matrix::zeros(4 * n, d_in + n);
        w.set_block(0, 0, &gaussian_init(4 * n, d_in, d_in, rng));
        for blk in 0..4 {
            w.set_block(blk * n, d_in, &orthogonal_init(n, rng));
        }
        let w = ps.add(format!("{prefix}.W"), w);
        let b = ps.add(format!("{prefix}.b"), Matrix::zeros(4 * n, 1));

        let count = rule.effective(num_skips).gates_per_skip() * num_skips;
        let gates = (0..count)
            .map(|k| {
                let gw = kind.weight_input().map(|input| {
                    let m = match input {
                        GateInput::PrevLayer => gaussian_init(n, d_in, d_in, rng),
                        GateInput::PrevTime => orthogonal_init(n, rng),
                        GateInput::Skip => gaussian_init(n, n, n, rng),
                    };
                    ps.add(format!("{prefix}.gate{k}.W"), m)
                });
                let gb = kind
                    .has_bias()
                    .then(|| ps.add(format!("{prefix}.gate{k}.b"), Matrix::zeros(n, 1)));
                GateParams { w: gw, b: gb }
            })
            .collect();
        Self {
            d_in,
            n,
            w,
            b,
            gates,
        }
    }
}

/// Closed-form parameter count of one layer, matching [`CellParams::register`].
pub fn cell_param_count(d_in: usize, n: usize, rule: CellRule, kind: GateKind, num_skips: usize) -> usize {
    let base = 4 * n * (d_in + n) + 4 * n;
    let gates = rule.effective(num_skips).gates_per_skip() * num_skips;
    let per_gate = match kind.weight_input() {
        Some(GateInput::PrevLayer) => n * d_in,
        Some(GateInput::PrevTime) | Some(GateInput::Skip) => n * n,
        None => 0,
    } + if kind.has_bias() { n } else { 0 };
    base + gates * per_gate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellState {
    /// Self-connected state; `None` for shortcut-block rules.
    pub c: Option<NodeId>,
    pub h: NodeId,
}

impl CellState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<'_, T>, n: usize, with_cell: bool) -> Self {
        let h = tape.zeros(n);
        let c = with_cell.then(|| tape.zeros(n));
        Self { c, h }
    }
}

/// Output (and cell state, if any) of a skip source layer at the current step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateValue {
    /// Gate vector applied elementwise.
    Elementwise(NodeId),
    /// Gate realized as a matrix product.
    Linear(ParamId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateResult {
    pub gate: GateValue,
    /// Bernoulli probability, for stochastic kinds.
    pub p: Option<NodeId>,
}

/// Inputs a gate may read.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs {
    pub prev_layer: Option<NodeId>,
    pub prev_time: Option<NodeId>,
    pub skip: Option<NodeId>,
}

pub fn gate_value<T: Scalar>(
    tape: &mut Tape<'_, T>,
    kind: GateKind,
    params: &GateParams,
    inputs: &GateInputs,
    n: usize,
    sampler: &mut Sampler<'_, T>,
) -> Result<GateResult, CellError> {
    kind.validate()?;
    let affine = |tape: &mut Tape<'_, T>| -> Result<NodeId, CellError> {
        let input = match kind.weight_input() {
            Some(GateInput::PrevLayer) => inputs.prev_layer.ok_or(CellError::MissingGateInput {
                kind,
                what: "previous-layer",
            })?,
            Some(GateInput::PrevTime) => inputs.prev_time.ok_or(CellError::MissingGateInput {
                kind,
                what: "previous-time",
            })?,
            _ => inputs.skip.ok_or(CellError::MissingGateInput { kind, what: "skip" })?,
        };
        let w = params.w.expect("gate weights registered for this kind");
        let z = tape.matvec(w, input);
        Ok(match params.b {
            Some(b) => {
                let bn = tape.param(b);
                tape.add(z, bn)
            }
            None => z,
        })
    };

    Ok(match kind {
        GateKind::LinearMap => GateResult {
            gate: GateValue::Linear(params.w.expect("linear gate matrix registered")),
            p: None,
        },
        GateKind::NonlinearPrev
        | GateKind::NonlinearRecurrent
        | GateKind::NonlinearSkip
        | GateKind::TanhScaledSkip => {
            let z = affine(tape)?;
            GateResult {
                gate: GateValue::Elementwise(tape.sigmoid(z)),
                p: None,
            }
        }
        GateKind::BernoulliFixed(p) => {
            let pv = vec![T::lit(p); n];
            let p_node = tape.constant(pv.clone());
            let g = match sampler.mode() {
                Mode::Test => p_node,
                Mode::Train => {
                    let mask = sampler.bernoulli(&pv);
                    tape.constant(mask)
                }
            };
            GateResult {
                gate: GateValue::Elementwise(g),
                p: Some(p_node),
            }
        }
        GateKind::BernoulliLearned => {
            let z = affine(tape)?;
            let p_node = tape.sigmoid(z);
            let g = match sampler.mode() {
                Mode::Test => p_node,
                Mode::Train => {
                    let probs = tape.value(p_node).to_vec();
                    let mask = sampler.bernoulli(&probs);
                    match sampler.bernoulli_grad {
                        BernoulliGrad::StraightThrough => tape.straight_through(p_node, mask),
                        BernoulliGrad::FrozenMask => tape.constant(mask),
                    }
                }
            };
            GateResult {
                gate: GateValue::Elementwise(g),
                p: Some(p_node),
            }
        }
    })
}

/// `g ⊙ v`, or `A·v` for a linear-map gate.
pub fn apply_gate<T: Scalar>(tape: &mut Tape<'_, T>, gate: &GateResult, v: NodeId) -> NodeId {
    match gate.gate {
        GateValue::Elementwise(g) => tape.mul(g, v),
        GateValue::Linear(a) => tape.matvec(a, v),
    }
}

/// `(1 − g) ⊙ v`, or `v − A·v` for a linear-map gate.
pub fn apply_carry<T: Scalar>(tape: &mut Tape<'_, T>, gate: &GateResult, v: NodeId) -> NodeId {
    match gate.gate {
        GateValue::Elementwise(g) => {
            let keep = tape.one_minus(g);
            tape.mul(keep, v)
        }
        GateValue::Linear(a) => {
            let av = tape.matvec(a, v);
            tape.sub(v, av)
        }
    }
}

struct Blocks {
    i: NodeId,
    f: Option<NodeId>,
    o: NodeId,
    s: NodeId,
}

fn blocks<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &CellParams,
    x: NodeId,
    h_prev: NodeId,
    with_forget: bool,
) -> Blocks {
    let n = params.n;
    let xh = tape.concat(&[x, h_prev]);
    let wx = tape.matvec(params.w, xh);
    let b = tape.param(params.b);
    let pre = tape.add(wx, b);
    let zi = tape.slice(pre, 0, n);
    let i = tape.sigmoid(zi);
    let f = with_forget.then(|| {
        let zf = tape.slice(pre, n, n);
        tape.sigmoid(zf)
    });
    let zo = tape.slice(pre, 2 * n, n);
    let o = tape.sigmoid(zo);
    let zs = tape.slice(pre, 3 * n, n);
    let s = tape.tanh(zs);
    Blocks { i, f, o, s }
}

/// One step of the plain LSTM: `c' = f⊙c + i⊙s`, `h' = o⊙tanh(c')`.
pub fn lstm_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &CellParams,
    x: NodeId,
    prev: &CellState,
) -> Result<CellState, CellError> {
    let c_prev = prev.c.ok_or(CellError::MissingCellState(CellRule::PlainLstm))?;
    let Blocks { i, f, o, s } = blocks(tape, params, x, prev.h, true);
    let f = f.expect("forget gate requested");
    let kept = tape.mul(f, c_prev);
    let inc = tape.mul(i, s);
    let c = tape.add(kept, inc);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    Ok(CellState { c: Some(c), h })
}

/// One step of `rule` with skip sources `skips`. With no skips (or the
/// plain LSTM rule) this is [`lstm_step`]. Multiple skip sources add their
/// gated terms.
#[allow(clippy::too_many_arguments)]
pub fn shortcut_block_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &CellParams,
    rule: CellRule,
    kind: GateKind,
    x: NodeId,
    prev: &CellState,
    skips: &[Skip],
    sampler: &mut Sampler<'_, T>,
) -> Result<CellState, CellError> {
    let rule = rule.effective(skips.len());
    if rule == CellRule::PlainLstm {
        return lstm_step(tape, params, x, prev);
    }
    let n = params.n;
    for s in skips {
        let found = tape.value(s.h).len();
        if found != n {
            return Err(CellError::SkipShape { expected: n, found });
        }
    }
    let gps = rule.gates_per_skip();
    if params.gates.len() != gps * skips.len() {
        return Err(CellError::GateCount {
            rule,
            skips: skips.len(),
            expected: gps * skips.len(),
            found: params.gates.len(),
        });
    }
    let c_prev = if rule.has_cell_state() {
        Some(prev.c.ok_or(CellError::MissingCellState(rule))?)
    } else {
        None
    };

    let inputs = |skip: &Skip| GateInputs {
        prev_layer: Some(x),
        prev_time: Some(prev.h),
        skip: Some(skip.h),
    };
    let mut gates: Vec<GateResult> = Vec::with_capacity(params.gates.len());
    for (k, skip) in skips.iter().enumerate() {
        for j in 0..gps {
            let gp = &params.gates[k * gps + j];
            gates.push(gate_value(tape, kind, gp, &inputs(skip), n, sampler)?);
        }
    }

    let transform = |tape: &mut Tape<'_, T>, v: NodeId| {
        if kind == GateKind::TanhScaledSkip {
            tape.tanh(v)
        } else {
            v
        }
    };
    let values: Vec<NodeId> = skips.iter().map(|s| transform(tape, s.h)).collect();
    let gated = |tape: &mut Tape<'_, T>, gate_offset: usize| -> NodeId {
        let terms: Vec<NodeId> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| apply_gate(tape, &gates[k * gps + gate_offset], v))
            .collect();
        tape.sum(&terms)
    };

    let Blocks { i, f, o, s } = blocks(tape, params, x, prev.h, rule.has_cell_state());
    let inc = tape.mul(i, s);

    if let Some(c_prev) = c_prev {
        let f = f.expect("forget gate requested");
        let kept = tape.mul(f, c_prev);
        let c_tilde = tape.add(inc, kept);
        let tc = tape.tanh(c_tilde);
        let h_tilde = tape.mul(o, tc);
        let (c, h) = match rule {
            CellRule::WuBaseline => {
                let sk = gated(tape, 0);
                (c_tilde, tape.add(h_tilde, sk))
            }
            CellRule::Case1NoGate => {
                let sk = tape.sum(&values);
                (tape.add(c_tilde, sk), tape.add(h_tilde, sk))
            }
            CellRule::Case1WithGate => {
                let sk = gated(tape, 0);
                (tape.add(c_tilde, sk), tape.add(h_tilde, sk))
            }
            CellRule::Case1Highway => {
                let mut cs = Vec::with_capacity(skips.len());
                let mut hs = Vec::with_capacity(skips.len());
                for (k, &v) in values.iter().enumerate() {
                    let g = &gates[k];
                    let carried = apply_gate(tape, g, v);
                    let cc = apply_carry(tape, g, c_tilde);
                    let hc = apply_carry(tape, g, h_tilde);
                    cs.push(tape.add(cc, carried));
                    hs.push(tape.add(hc, carried));
                }
                let (mut c, mut h) = (tape.sum(&cs), tape.sum(&hs));
                if skips.len() > 1 {
                    let inv = T::one() / T::lit(skips.len() as f64);
                    c = tape.scale(c, inv);
                    h = tape.scale(h, inv);
                }
                (c, h)
            }
            CellRule::Case1SeparateGates => {
                let mut c_terms = Vec::with_capacity(skips.len());
                for (k, skip) in skips.iter().enumerate() {
                    let sc = skip.c.ok_or(CellError::MissingSkipCellState(rule))?;
                    let vc = transform(tape, sc);
                    c_terms.push(apply_gate(tape, &gates[k * gps], vc));
                }
                let sc = tape.sum(&c_terms);
                let sh = gated(tape, 1);
                (tape.add(c_tilde, sc), tape.add(h_tilde, sh))
            }
            _ => unreachable!("rule {rule} has a cell state"),
        };
        return Ok(CellState { c: Some(c), h });
    }

    let (m, h_skip) = match rule {
        CellRule::ShortcutBlock => {
            let sk = gated(tape, 0);
            (tape.add(inc, sk), Some(sk))
        }
        CellRule::SbNoGateInH => {
            let sk = gated(tape, 0);
            let raw = tape.sum(&values);
            (tape.add(inc, sk), Some(raw))
        }
        CellRule::SbNoGateInM => {
            let raw = tape.sum(&values);
            let sk = gated(tape, 0);
            (tape.add(inc, raw), Some(sk))
        }
        CellRule::SbSharedOutputGate => {
            let sk = gated(tape, 0);
            let raw = tape.sum(&values);
            let shared = tape.mul(o, raw);
            (tape.add(inc, sk), Some(shared))
        }
        CellRule::SbNoShortcutInternal => {
            let sk = gated(tape, 0);
            (inc, Some(sk))
        }
        CellRule::SbNoShortcutCellOutput => {
            let sk = gated(tape, 0);
            (tape.add(inc, sk), None)
        }
        _ => unreachable!("rule {rule} has no cell state"),
    };
    let tm = tape.tanh(m);
    let core = tape.mul(o, tm);
    let h = match h_skip {
        Some(sk) => tape.add(core, sk),
        None => core,
    };
    Ok(CellState { c: None, h })
}
