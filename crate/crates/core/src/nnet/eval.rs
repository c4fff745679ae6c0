//! Cache-free forward evaluation generic over the scalar type, used as the
//! finite-difference oracle in gradient checks.

use super::dd::Real;
use super::layers::LayerSpec;
use super::network::{NetworkState, PlannedLayer};
use super::tensor::Tensor;

struct Act<T> {
    len: usize,
    ch: usize,
    v: Vec<T>,
}

fn layer<T: Real>(spec: &LayerSpec, p: &[Vec<T>], x: Act<T>) -> Act<T> {
    let Act { len, ch, v } = x;
    match *spec {
        LayerSpec::Dense { units } => {
            let n = v.len();
            let y = (0..units)
                .map(|u| (0..n).fold(p[1][u], |acc, j| acc + p[0][u * n + j] * v[j]))
                .collect();
            Act { len: 1, ch: units, v: y }
        }
        LayerSpec::Conv1d { filters, kernel } => {
            let pad = (kernel - 1) / 2;
            let mut y = Vec::with_capacity(len * filters);
            for t in 0..len {
                for f in 0..filters {
                    let mut acc = p[1][f];
                    for k in 0..kernel {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else { continue };
                        for c in 0..ch {
                            acc = acc + p[0][(f * kernel + k) * ch + c] * v[src * ch + c];
                        }
                    }
                    y.push(acc);
                }
            }
            Act { len, ch: filters, v: y }
        }
        LayerSpec::MaxPool1d { pool } => {
            let out = len.div_ceil(pool);
            let mut y = Vec::with_capacity(out * ch);
            for t in 0..out {
                for c in 0..ch {
                    let mut best = v[t * pool * ch + c];
                    for s in t * pool + 1..((t + 1) * pool).min(len) {
                        if v[s * ch + c].gt(best) {
                            best = v[s * ch + c];
                        }
                    }
                    y.push(best);
                }
            }
            Act { len: out, ch, v: y }
        }
        LayerSpec::Lstm { units, return_sequences } => {
            let (w, r, b) = (&p[0], &p[1], &p[2]);
            let mut h = vec![T::zero(); units];
            let mut c = vec![T::zero(); units];
            let mut seq = Vec::with_capacity(len * units);
            for t in 0..len {
                let z: Vec<T> = (0..4 * units)
                    .map(|k| {
                        let mut acc = b[k];
                        for i in 0..ch {
                            acc = acc + w[k * ch + i] * v[t * ch + i];
                        }
                        for u in 0..units {
                            acc = acc + r[k * units + u] * h[u];
                        }
                        acc
                    })
                    .collect();
                for u in 0..units {
                    let i = z[u].sigmoid();
                    let f = z[units + u].sigmoid();
                    let g = z[2 * units + u].tanh();
                    let o = z[3 * units + u].sigmoid();
                    c[u] = f * c[u] + i * g;
                    h[u] = o * c[u].tanh();
                }
                seq.extend_from_slice(&h);
            }
            if return_sequences {
                Act { len, ch: units, v: seq }
            } else {
                Act { len: 1, ch: units, v: h }
            }
        }
        LayerSpec::Relu => Act { len, ch, v: v.into_iter().map(T::relu).collect() },
        LayerSpec::Softmax => {
            let max = v.iter().copied().fold(v[0], |m, x| if x.gt(m) { x } else { m });
            let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
            let sum = e.iter().copied().fold(T::zero(), |a, b| a + b);
            Act { len, ch, v: e.into_iter().map(|x| x / sum).collect() }
        }
        LayerSpec::Flatten => Act { len: 1, ch: len * ch, v },
    }
}

fn run<T: Real>(layers: &[PlannedLayer], params: &[Vec<T>], mut x: Act<T>) -> Act<T> {
    for l in layers {
        x = layer(&l.spec, &params[l.params.clone()], x);
    }
    x
}

/// Mean cross-entropy of `state`'s graph evaluated with `params` in scalar
/// type `T`. The terminal softmax is folded into a log-sum-exp.
pub(crate) fn mean_loss<T: Real>(state: &NetworkState, params: &[Vec<T>], inputs: &[Tensor], labels: &[usize]) -> T {
    let plan = state.plan();
    let (head_body, _) = plan.head.split_at(plan.head.len() - 1);
    let mut total = T::zero();
    for (x, &y) in inputs.iter().zip(labels) {
        let mut concat = Vec::new();
        for branch in &plan.branches {
            let input = Act { len: x.steps(), ch: x.channels(), v: x.data().iter().map(|&v| T::from_f64(v)).collect() };
            concat.extend(run(branch, params, input).v);
        }
        let width = concat.len();
        let z = run(head_body, params, Act { len: 1, ch: width, v: concat }).v;
        let max = z.iter().copied().fold(z[0], |m, v| if v.gt(m) { v } else { m });
        let lse = z.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        total = total + (lse - z[y]);
    }
    total / T::from_f64(inputs.len() as f64)
}
