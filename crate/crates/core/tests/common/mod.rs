//! Scalar-loop reference evaluation of cells and stacks, written against
//! the update equations rather than the tape.

#![allow(dead_code, clippy::too_many_arguments, clippy::type_complexity)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use shortcut_stack::cells::{CellParams, GateParams};
use shortcut_stack::linalg::Matrix;
use shortcut_stack::stack::StackParams;
use shortcut_stack::{CellRule, Combine, GateKind, ParamSet, StackConfig};

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn mv(m: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols(), x.len());
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn sum_all(vs: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

/// Overwrites every parameter with independent `N(0, std²)` draws.
pub fn randomize<R: Rng>(ps: &mut ParamSet<f64>, std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std).unwrap();
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        for v in ps.value_mut(id).as_mut_slice() {
            *v = normal.sample(rng);
        }
    }
}

pub fn zero_all(ps: &mut ParamSet<f64>) {
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        for v in ps.value_mut(id).as_mut_slice() {
            *v = 0.0;
        }
    }
}

/// A gate as seen by one skip term: elementwise `g` or a matrix.
enum RefGate {
    Vec(Vec<f64>),
    Mat(Matrix<f64>),
}

impl RefGate {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            RefGate::Vec(g) => mul(g, v),
            RefGate::Mat(a) => mv(a, v),
        }
    }

    fn carry(&self, v: &[f64]) -> Vec<f64> {
        match self {
            RefGate::Vec(g) => g.iter().zip(v).map(|(g, x)| (1.0 - g) * x).collect(),
            RefGate::Mat(a) => v.iter().zip(mv(a, v)).map(|(x, ax)| x - ax).collect(),
        }
    }
}

fn ref_gate(ps: &ParamSet<f64>, kind: GateKind, gp: &GateParams, x: &[f64], h_prev: &[f64], skip: &[f64], n: usize) -> RefGate {
    let affine = |input: &[f64]| {
        let mut z = mv(ps.value(gp.w.unwrap()), input);
        if let Some(b) = gp.b {
            z = add(&z, ps.value(b).as_slice());
        }
        z.into_iter().map(sig).collect::<Vec<_>>()
    };
    match kind {
        GateKind::LinearMap => RefGate::Mat(ps.value(gp.w.unwrap()).clone()),
        GateKind::NonlinearPrev | GateKind::TanhScaledSkip | GateKind::BernoulliLearned => RefGate::Vec(affine(x)),
        GateKind::NonlinearRecurrent => RefGate::Vec(affine(h_prev)),
        GateKind::NonlinearSkip => RefGate::Vec(affine(skip)),
        GateKind::BernoulliFixed(p) => RefGate::Vec(vec![p; n]),
    }
}

/// Test-mode reference step. Returns `(c, h)`.
pub fn ref_step(
    ps: &ParamSet<f64>,
    cell: &CellParams,
    rule: CellRule,
    kind: GateKind,
    x: &[f64],
    h_prev: &[f64],
    c_prev: Option<&[f64]>,
    skips: &[(Vec<f64>, Option<Vec<f64>>)],
) -> (Option<Vec<f64>>, Vec<f64>) {
    let n = cell.n;
    let rule = if skips.is_empty() { CellRule::PlainLstm } else { rule };
    let xh: Vec<f64> = x.iter().chain(h_prev).copied().collect();
    let pre = add(&mv(ps.value(cell.w), &xh), ps.value(cell.b).as_slice());
    let i: Vec<f64> = pre[0..n].iter().map(|&z| sig(z)).collect();
    let f: Vec<f64> = pre[n..2 * n].iter().map(|&z| sig(z)).collect();
    let o: Vec<f64> = pre[2 * n..3 * n].iter().map(|&z| sig(z)).collect();
    let s: Vec<f64> = pre[3 * n..4 * n].iter().map(|z| z.tanh()).collect();
    let inc = mul(&i, &s);

    let tf = |v: &[f64]| -> Vec<f64> {
        if kind == GateKind::TanhScaledSkip {
            v.iter().map(|z| z.tanh()).collect()
        } else {
            v.to_vec()
        }
    };
    let gps = match rule {
        CellRule::PlainLstm | CellRule::Case1NoGate => 0,
        CellRule::Case1SeparateGates => 2,
        _ => 1,
    };
    let gate = |k: usize, j: usize| ref_gate(ps, kind, &cell.gates[k * gps + j], x, h_prev, &skips[k].0, n);
    let vals: Vec<Vec<f64>> = skips.iter().map(|(h, _)| tf(h)).collect();
    let raw = sum_all(&vals, n);
    let gated = |j: usize| {
        let terms: Vec<Vec<f64>> = vals.iter().enumerate().map(|(k, v)| gate(k, j).apply(v)).collect();
        sum_all(&terms, n)
    };

    let out = |m: &[f64]| -> Vec<f64> { o.iter().zip(m).map(|(o, m)| o * m.tanh()).collect() };
    match rule {
        CellRule::PlainLstm => {
            let c = add(&mul(&f, c_prev.unwrap()), &inc);
            let h = out(&c);
            (Some(c), h)
        }
        CellRule::WuBaseline
        | CellRule::Case1NoGate
        | CellRule::Case1WithGate
        | CellRule::Case1Highway
        | CellRule::Case1SeparateGates => {
            let ct = add(&inc, &mul(&f, c_prev.unwrap()));
            let ht = out(&ct);
            match rule {
                CellRule::WuBaseline => (Some(ct), add(&ht, &gated(0))),
                CellRule::Case1NoGate => (Some(add(&ct, &raw)), add(&ht, &raw)),
                CellRule::Case1WithGate => {
                    let g = gated(0);
                    (Some(add(&ct, &g)), add(&ht, &g))
                }
                CellRule::Case1Highway => {
                    let k = skips.len() as f64;
                    let mut cs = Vec::new();
                    let mut hs = Vec::new();
                    for (j, v) in vals.iter().enumerate() {
                        let g = gate(j, 0);
                        cs.push(add(&g.carry(&ct), &g.apply(v)));
                        hs.push(add(&g.carry(&ht), &g.apply(v)));
                    }
                    let avg = |v: Vec<f64>| -> Vec<f64> {
                        if skips.len() > 1 {
                            v.into_iter().map(|x| x * (1.0 / k)).collect()
                        } else {
                            v
                        }
                    };
                    (Some(avg(sum_all(&cs, n))), avg(sum_all(&hs, n)))
                }
                _ => {
                    let cterms: Vec<Vec<f64>> = skips
                        .iter()
                        .enumerate()
                        .map(|(k, (_, c))| gate(k, 0).apply(&tf(c.as_ref().unwrap())))
                        .collect();
                    (Some(add(&ct, &sum_all(&cterms, n))), add(&ht, &gated(1)))
                }
            }
        }
        CellRule::ShortcutBlock => {
            let g = gated(0);
            let m = add(&inc, &g);
            (None, add(&out(&m), &g))
        }
        CellRule::SbNoGateInH => {
            let m = add(&inc, &gated(0));
            (None, add(&out(&m), &raw))
        }
        CellRule::SbNoGateInM => {
            let m = add(&inc, &raw);
            (None, add(&out(&m), &gated(0)))
        }
        CellRule::SbSharedOutputGate => {
            let m = add(&inc, &gated(0));
            (None, add(&out(&m), &mul(&o, &raw)))
        }
        CellRule::SbNoShortcutInternal => (None, add(&out(&inc), &gated(0))),
        CellRule::SbNoShortcutCellOutput => {
            let m = add(&inc, &gated(0));
            (None, out(&m))
        }
    }
}

/// Test-mode reference of the whole stack without dropout: per token the
/// top layer's `[fwd; bwd]`.
pub fn ref_stack(ps: &ParamSet<f64>, params: &StackParams, config: &StackConfig, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let steps = inputs.len();
    let n = config.hidden;
    // [layer][dir][t] -> (h, c)
    let mut outs: Vec<[Vec<(Vec<f64>, Option<Vec<f64>>)>; 2]> = Vec::new();
    let mut layer_in = inputs.to_vec();
    for (li, layer) in params.layers.iter().enumerate() {
        let mut dirs: [Vec<(Vec<f64>, Option<Vec<f64>>)>; 2] = [Vec::new(), Vec::new()];
        for (d, cell) in [&layer.fwd, &layer.bwd].into_iter().enumerate() {
            let mut res = vec![(Vec::new(), None); steps];
            let mut h = vec![0.0; n];
            let mut c = vec![0.0; n];
            let order: Vec<usize> = if d == 0 { (0..steps).collect() } else { (0..steps).rev().collect() };
            for t in order {
                let skips: Vec<(Vec<f64>, Option<Vec<f64>>)> =
                    layer.sources.iter().map(|&s| outs[s - 1][d][t].clone()).collect();
                let (c2, h2) = ref_step(ps, cell, config.rule, config.gate, &layer_in[t], &h, Some(&c), &skips);
                h = h2;
                if let Some(c2) = &c2 {
                    c = c2.clone();
                }
                res[t] = (h.clone(), c2);
            }
            dirs[d] = res;
        }
        if li + 1 < params.layers.len() {
            let next = &params.layers[li + 1];
            layer_in = (0..steps)
                .map(|t| {
                    let (f, b) = (&dirs[0][t].0, &dirs[1][t].0);
                    match (config.combine, next.proj) {
                        (Combine::ConcatProject, Some(p)) => {
                            let fb: Vec<f64> = f.iter().chain(b).copied().collect();
                            mv(ps.value(p), &fb)
                        }
                        _ => add(f, b),
                    }
                })
                .collect();
        }
        outs.push(dirs);
    }
    let top = outs.last().unwrap();
    (0..steps)
        .map(|t| top[0][t].0.iter().chain(&top[1][t].0).copied().collect())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Deterministic gate kinds plus the Bernoulli kinds (checked in test mode).
pub fn all_gates() -> [GateKind; 7] {
    GateKind::all(0.3)
}
