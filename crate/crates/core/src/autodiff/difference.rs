//! Cancellation-free evaluation of `f(θ₊) − f(θ₋)` when `θ₊` and `θ₋`
//! differ in a single parameter entry.
//!
//! Subtracting two separately rounded loss values loses everything below
//! one ulp of the loss, which swamps gradients smaller than about `1e-7`.
//! Here the difference is pushed through the recorded graph node by node
//! using exact identities (for example
//! `tanh b − tanh a = sinh(b − a) / (cosh a · cosh b)`), so it keeps full
//! relative precision. The graph must not depend on parameter values.

use std::borrow::Cow;

use crate::autodiff::params::ParamId;
use crate::autodiff::tape::{NodeId, Op, Tape};
use crate::linalg::{matvec_into, sigmoid_scalar, softmax_slice};
use crate::scalar::Scalar;

/// Value at `θ₋` and the exact change to `θ₊`, for nodes that depend on
/// the perturbed entry.
struct Changed<T> {
    lo: Vec<T>,
    delta: Vec<T>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// `f(θ₊) − f(θ₋)` for the scalar node `out`, where entry `index` of
    /// `param` is `hi` in `θ₊` and `lo` in `θ₋` and every other parameter
    /// keeps its recorded value.
    pub fn entry_difference(&self, param: ParamId, index: usize, lo: T, hi: T, out: NodeId) -> T {
        let pm = self.params.value(param);
        let (pr, pc) = (index / pm.cols(), index % pm.cols());
        let step = hi - lo;
        // Nothing before the first read of `param` can change.
        let first = self.nodes[..=out.0]
            .iter()
            .position(|n| matches!(n.op, Op::Param(id) | Op::Row(id, _) | Op::MatVec(id, _) if id == param))
            .unwrap_or(out.0 + 1);
        let mut state: Vec<Option<Changed<T>>> = Vec::with_capacity(out.0 + 1);
        state.resize_with(first, || None);

        for node in &self.nodes[first..=out.0] {
            let get = |id: NodeId| state[id.0].as_ref();
            let lo_of = |id: NodeId| -> Cow<'_, [T]> {
                get(id).map_or(Cow::Borrowed(&self.nodes[id.0].value[..]), |c| Cow::Borrowed(&c.lo[..]))
            };
            let delta_of = |id: NodeId| -> Cow<'_, [T]> {
                get(id).map_or_else(
                    || Cow::Owned(vec![T::zero(); self.nodes[id.0].value.len()]),
                    |c| Cow::Borrowed(&c.delta[..]),
                )
            };
            let touched = |ids: &[NodeId]| ids.iter().any(|&i| get(i).is_some());

            let changed = match &node.op {
                Op::Const | Op::StraightThrough(_) => None,
                Op::Param(id) if *id == param => {
                    let mut v = node.value.clone();
                    v[index] = lo;
                    let mut delta = vec![T::zero(); v.len()];
                    delta[index] = step;
                    Some(Changed { lo: v, delta })
                }
                Op::Row(id, r) if *id == param && *r == pr => {
                    let mut v = node.value.clone();
                    v[pc] = lo;
                    let mut delta = vec![T::zero(); v.len()];
                    delta[pc] = step;
                    Some(Changed { lo: v, delta })
                }
                Op::Param(_) | Op::Row(..) => None,
                Op::MatVec(w, x) => {
                    let own = *w == param;
                    if !own && !touched(&[*x]) {
                        None
                    } else {
                        let m = self.params.value(*w);
                        let xl = lo_of(*x);
                        let dx = delta_of(*x);
                        let mut vlo = vec![T::zero(); m.rows()];
                        matvec_into(m.as_slice(), &xl, &mut vlo);
                        let mut delta = vec![T::zero(); m.rows()];
                        matvec_into(m.as_slice(), &dx, &mut delta);
                        if own {
                            let row = m.row(pr);
                            // Swap the recorded entry for `lo` in row `pr`.
                            let mut r_lo = T::zero();
                            let mut r_d = T::zero();
                            for (j, &wj) in row.iter().enumerate() {
                                let wj = if j == pc { lo } else { wj };
                                r_lo += wj * xl[j];
                                r_d += wj * dx[j];
                            }
                            vlo[pr] = r_lo;
                            delta[pr] = r_d + step * (xl[pc] + dx[pc]);
                        }
                        Some(Changed { lo: vlo, delta })
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) if !touched(&[*a, *b]) => None,
                Op::Add(a, b) => Some(Changed {
                    lo: zip(&lo_of(*a), &lo_of(*b), |x, y| x + y),
                    delta: zip(&delta_of(*a), &delta_of(*b), |x, y| x + y),
                }),
                Op::Sub(a, b) => Some(Changed {
                    lo: zip(&lo_of(*a), &lo_of(*b), |x, y| x - y),
                    delta: zip(&delta_of(*a), &delta_of(*b), |x, y| x - y),
                }),
                Op::Mul(a, b) => {
                    let (al, bl) = (lo_of(*a), lo_of(*b));
                    let (da, db) = (delta_of(*a), delta_of(*b));
                    let delta = (0..al.len()).map(|k| (al[k] + da[k]) * db[k] + da[k] * bl[k]).collect();
                    Some(Changed {
                        lo: zip(&al, &bl, |x, y| x * y),
                        delta,
                    })
                }
                Op::Sum(xs) | Op::Concat(xs) if !touched(xs) => None,
                Op::Sum(xs) => {
                    let mut lo_v = lo_of(xs[0]).into_owned();
                    let mut d = delta_of(xs[0]).into_owned();
                    for &x in &xs[1..] {
                        add_into(&mut lo_v, &lo_of(x));
                        add_into(&mut d, &delta_of(x));
                    }
                    Some(Changed { lo: lo_v, delta: d })
                }
                Op::Concat(xs) => Some(Changed {
                    lo: xs.iter().flat_map(|&x| lo_of(x).into_owned()).collect(),
                    delta: xs.iter().flat_map(|&x| delta_of(x).into_owned()).collect(),
                }),
                Op::Sigmoid(a)
                | Op::Tanh(a)
                | Op::OneMinus(a)
                | Op::Scale(a, _)
                | Op::MulConst(a, _)
                | Op::Slice(a, _)
                | Op::SoftmaxNll(a, _)
                    if !touched(&[*a]) =>
                {
                    None
                }
                Op::Sigmoid(a) => {
                    let (al, da) = (lo_of(*a), delta_of(*a));
                    // σ(b) − σ(a) = σ(b)·σ(−a)·(1 − e^{−(b−a)})
                    let delta = (0..al.len())
                        .map(|k| sigmoid_scalar(al[k] + da[k]) * sigmoid_scalar(-al[k]) * -(-da[k]).exp_m1())
                        .collect();
                    Some(Changed {
                        lo: al.iter().map(|&x| sigmoid_scalar(x)).collect(),
                        delta,
                    })
                }
                Op::Tanh(a) => {
                    let (al, da) = (lo_of(*a), delta_of(*a));
                    let delta = (0..al.len())
                        .map(|k| da[k].sinh() / (al[k].cosh() * (al[k] + da[k]).cosh()))
                        .collect();
                    Some(Changed {
                        lo: al.iter().map(|&x| x.tanh()).collect(),
                        delta,
                    })
                }
                Op::OneMinus(a) => Some(Changed {
                    lo: lo_of(*a).iter().map(|&x| T::one() - x).collect(),
                    delta: delta_of(*a).iter().map(|&x| -x).collect(),
                }),
                Op::Scale(a, s) => Some(Changed {
                    lo: lo_of(*a).iter().map(|&x| x * *s).collect(),
                    delta: delta_of(*a).iter().map(|&x| x * *s).collect(),
                }),
                Op::MulConst(a, c) => Some(Changed {
                    lo: zip(&lo_of(*a), c, |x, y| x * y),
                    delta: zip(&delta_of(*a), c, |x, y| x * y),
                }),
                Op::Slice(a, start) => {
                    let len = node.value.len();
                    Some(Changed {
                        lo: lo_of(*a)[*start..start + len].to_vec(),
                        delta: delta_of(*a)[*start..start + len].to_vec(),
                    })
                }
                Op::SoftmaxNll(a, gold) => {
                    let (zl, dz) = (lo_of(*a), delta_of(*a));
                    let p = softmax_slice(&zl);
                    let max = zl.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = zl.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                    // lse(z + d) − lse(z) = ln(1 + Σ p_k (e^{d_k} − 1))
                    let s: T = p.iter().zip(dz.iter()).map(|(&pk, &d)| pk * d.exp_m1()).sum();
                    Some(Changed {
                        lo: vec![lse - zl[*gold]],
                        delta: vec![s.ln_1p() - dz[*gold]],
                    })
                }
            };
            state.push(changed);
        }
        state[out.0].as_ref().map_or(T::zero(), |c| c.delta[0])
    }
}

fn zip<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
