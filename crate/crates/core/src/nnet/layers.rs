use serde::{Deserialize, Serialize};

use super::lstm::{self, LstmCache};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Fully connected over the flattened input; output `[1, units]`.
    Dense { units: usize },
    /// Same-padding, stride-1 cross-correlation; output `[L, filters]`.
    Conv1d { filters: usize, kernel: usize },
    /// Non-overlapping max pooling with a partial final window; output `[⌈L/pool⌉, C]`.
    MaxPool1d { pool: usize },
    /// Output `[L, units]` with `return_sequences`, else `[1, units]`.
    Lstm { units: usize, return_sequences: bool },
    Relu,
    /// Softmax over every element of the input.
    Softmax,
    Flatten,
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn conv1d(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d { filters, kernel }
    }

    pub fn maxpool(pool: usize) -> Self {
        LayerSpec::MaxPool1d { pool }
    }

    pub fn lstm(units: usize, return_sequences: bool) -> Self {
        LayerSpec::Lstm { units, return_sequences }
    }

    /// Output shape for an input of shape `(len, channels)`.
    pub fn output_shape(&self, (len, ch): (usize, usize)) -> Result<(usize, usize), NnError> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(NnError::InvalidSpec(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        Ok(match *self {
            LayerSpec::Dense { units } => {
                positive(units, "dense units")?;
                (1, units)
            }
            LayerSpec::Conv1d { filters, kernel } => {
                positive(filters, "conv filters")?;
                positive(kernel, "conv kernel")?;
                (len, filters)
            }
            LayerSpec::MaxPool1d { pool } => {
                positive(pool, "pool size")?;
                (len.div_ceil(pool), ch)
            }
            LayerSpec::Lstm { units, return_sequences } => {
                positive(units, "lstm units")?;
                (if return_sequences { len } else { 1 }, units)
            }
            LayerSpec::Relu | LayerSpec::Softmax => (len, ch),
            LayerSpec::Flatten => (1, len * ch),
        })
    }

    /// Parameter tensor shapes paired with their fan-in (0 for biases).
    pub fn param_shapes(&self, (len, ch): (usize, usize)) -> Vec<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Dense { units } => vec![(vec![units, len * ch], len * ch), (vec![units], 0)],
            LayerSpec::Conv1d { filters, kernel } => {
                vec![(vec![filters, kernel, ch], kernel * ch), (vec![filters], 0)]
            }
            LayerSpec::Lstm { units, .. } => {
                vec![(vec![4 * units, ch], ch), (vec![4 * units, units], units), (vec![4 * units], 0)]
            }
            _ => Vec::new(),
        }
    }
}

/// Intermediate values kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Pool { argmax: Vec<usize>, in_len: usize },
    Softmax(Tensor),
    Flatten { len: usize, ch: usize },
    Lstm(LstmCache),
}

pub(crate) fn forward(spec: &LayerSpec, p: &[Tensor], x: Tensor) -> (Tensor, Cache) {
    match *spec {
        LayerSpec::Dense { units } => {
            let (w, b) = (p[0].data(), p[1].data());
            let n = x.len();
            let xs = x.data();
            let y = (0..units)
                .map(|u| b[u] + w[u * n..(u + 1) * n].iter().zip(xs).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            (Tensor::seq(1, units, y), Cache::Input(x))
        }
        LayerSpec::Conv1d { filters, kernel } => {
            let (len, ch) = (x.steps(), x.channels());
            let (w, b) = (p[0].data(), p[1].data());
            let pad = (kernel - 1) / 2;
            let xs = x.data();
            let mut y = vec![0.0; len * filters];
            for t in 0..len {
                for f in 0..filters {
                    let mut acc = b[f];
                    for k in 0..kernel {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else { continue };
                        let wrow = &w[(f * kernel + k) * ch..(f * kernel + k + 1) * ch];
                        acc += wrow.iter().zip(&xs[src * ch..(src + 1) * ch]).map(|(a, c)| a * c).sum::<f64>();
                    }
                    y[t * filters + f] = acc;
                }
            }
            (Tensor::seq(len, filters, y), Cache::Input(x))
        }
        LayerSpec::MaxPool1d { pool } => {
            let (len, ch) = (x.steps(), x.channels());
            let out_len = len.div_ceil(pool);
            let xs = x.data();
            let mut y = vec![0.0; out_len * ch];
            let mut argmax = vec![0; out_len * ch];
            for t in 0..out_len {
                for c in 0..ch {
                    let mut best = t * pool;
                    for s in t * pool + 1..((t + 1) * pool).min(len) {
                        if xs[s * ch + c] > xs[best * ch + c] {
                            best = s;
                        }
                    }
                    y[t * ch + c] = xs[best * ch + c];
                    argmax[t * ch + c] = best;
                }
            }
            (Tensor::seq(out_len, ch, y), Cache::Pool { argmax, in_len: len })
        }
        LayerSpec::Lstm { units, return_sequences } => {
            let (y, cache) = lstm::forward(p, &x, units, return_sequences);
            (y, Cache::Lstm(cache))
        }
        LayerSpec::Relu => {
            let y: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
            (Tensor::new(x.shape().to_vec(), y), Cache::Input(x))
        }
        LayerSpec::Softmax => {
            let y = Tensor::new(x.shape().to_vec(), crate::softmax(x.data()));
            (y.clone(), Cache::Softmax(y))
        }
        LayerSpec::Flatten => {
            let (len, ch) = (x.steps(), x.channels());
            (x.reshaped(&[1, len * ch]), Cache::Flatten { len, ch })
        }
    }
}

/// Accumulates parameter gradients into `g` and returns the input gradient.
pub(crate) fn backward(spec: &LayerSpec, p: &[Tensor], cache: &Cache, dy: &Tensor, g: &mut [Tensor]) -> Tensor {
    match (*spec, cache) {
        (LayerSpec::Dense { units }, Cache::Input(x)) => {
            let n = x.len();
            let (xs, dys, w) = (x.data(), dy.data(), p[0].data());
            let mut dx = vec![0.0; n];
            {
                let gw = g[0].data_mut();
                for u in 0..units {
                    let d = dys[u];
                    for ((gwj, xj), (dxj, wj)) in
                        gw[u * n..(u + 1) * n].iter_mut().zip(xs).zip(dx.iter_mut().zip(&w[u * n..(u + 1) * n]))
                    {
                        *gwj += d * xj;
                        *dxj += d * wj;
                    }
                }
            }
            for (gb, d) in g[1].data_mut().iter_mut().zip(dys) {
                *gb += d;
            }
            Tensor::new(x.shape().to_vec(), dx)
        }
        (LayerSpec::Conv1d { filters, kernel }, Cache::Input(x)) => {
            let (len, ch) = (x.steps(), x.channels());
            let pad = (kernel - 1) / 2;
            let (xs, dys, w) = (x.data(), dy.data(), p[0].data());
            let mut dx = vec![0.0; len * ch];
            for t in 0..len {
                for f in 0..filters {
                    let d = dys[t * filters + f];
                    g[1].data_mut()[f] += d;
                    for k in 0..kernel {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < len) else { continue };
                        let off = (f * kernel + k) * ch;
                        let gw = &mut g[0].data_mut()[off..off + ch];
                        for c in 0..ch {
                            gw[c] += d * xs[src * ch + c];
                            dx[src * ch + c] += d * w[off + c];
                        }
                    }
                }
            }
            Tensor::seq(len, ch, dx)
        }
        (LayerSpec::MaxPool1d { .. }, Cache::Pool { argmax, in_len }) => {
            let ch = dy.channels();
            let mut dx = vec![0.0; in_len * ch];
            for (i, (&src, d)) in argmax.iter().zip(dy.data()).enumerate() {
                dx[src * ch + i % ch] += d;
            }
            Tensor::seq(*in_len, ch, dx)
        }
        (LayerSpec::Lstm { units, return_sequences }, Cache::Lstm(c)) => {
            lstm::backward(p, c, dy, g, units, return_sequences)
        }
        (LayerSpec::Relu, Cache::Input(x)) => {
            let dx = x.data().iter().zip(dy.data()).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
            Tensor::new(x.shape().to_vec(), dx)
        }
        (LayerSpec::Softmax, Cache::Softmax(y)) => {
            let dot: f64 = y.data().iter().zip(dy.data()).map(|(p, d)| p * d).sum();
            let dx = y.data().iter().zip(dy.data()).map(|(p, d)| p * (d - dot)).collect();
            Tensor::new(y.shape().to_vec(), dx)
        }
        (LayerSpec::Flatten, Cache::Flatten { len, ch }) => dy.clone().reshaped(&[*len, *ch]),
        _ => unreachable!("cache kind always matches the layer that produced it"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(spec: LayerSpec, p: &[Tensor], x: Tensor) -> Tensor {
        forward(&spec, p, x).0
    }

    #[test]
    fn identity_kernel_convolution() {
        let w = Tensor::new(vec![1, 3, 1], vec![0.0, 1.0, 0.0]);
        let y = run(LayerSpec::conv1d(1, 3), &[w, Tensor::zeros(&[1])], Tensor::seq(4, 1, vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y.shape(), &[4, 1]);
    }

    #[test]
    fn same_padding_edges() {
        // Kernel [1,1,1] sums the neighbourhood, with zeros beyond the ends.
        let w = Tensor::new(vec![1, 3, 1], vec![1.0; 3]);
        let y = run(LayerSpec::conv1d(1, 3), &[w, Tensor::zeros(&[1])], Tensor::seq(4, 1, vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn ceiling_pooling() {
        let y = run(LayerSpec::maxpool(2), &[], Tensor::seq(5, 1, vec![1.0, 3.0, 2.0, 0.0, 7.0]));
        assert_eq!(y.data(), &[3.0, 2.0, 7.0]);
        let one = run(LayerSpec::maxpool(2), &[], Tensor::seq(1, 2, vec![4.0, -1.0]));
        assert_eq!((one.shape(), one.data()), (&[1usize, 2][..], &[4.0, -1.0][..]));
        let mut len = 8;
        let mut chain = vec![len];
        for _ in 0..4 {
            len = LayerSpec::maxpool(2).output_shape((len, 1)).unwrap().0;
            chain.push(len);
        }
        assert_eq!(chain, vec![8, 4, 2, 1, 1]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = run(LayerSpec::Softmax, &[], Tensor::seq(1, 22, vec![0.0; 22]));
        assert!(y.data().iter().all(|&p| (p - 1.0 / 22.0).abs() < 1e-15));
    }

    #[test]
    fn dense_sum_loss_gradient() {
        // loss = Σ y, so dL/dy = 1 and dL/dW = 1 ⊗ x.
        let x = Tensor::seq(1, 3, vec![1.0, -2.0, 0.5]);
        let p = [Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), Tensor::zeros(&[2])];
        let (_, cache) = forward(&LayerSpec::dense(2), &p, x);
        let mut g = vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])];
        let dx = backward(&LayerSpec::dense(2), &p, &cache, &Tensor::seq(1, 2, vec![1.0, 1.0]), &mut g);
        assert_eq!(g[0].data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        assert_eq!(g[1].data(), &[1.0, 1.0]);
        for (got, want) in dx.data().iter().zip([0.5, 0.7, 0.9]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let x = Tensor::seq(4, 2, (0..8).map(|v| v as f64 * 0.3 - 1.0).collect());
        let p = [Tensor::new(vec![3, 3, 2], (0..18).map(|v| (v as f64).sin()).collect()), Tensor::zeros(&[3])];
        let spec = LayerSpec::conv1d(3, 3);
        let (y, cache) = forward(&spec, &p, x);
        let mut g = vec![Tensor::zeros(&[3, 3, 2]), Tensor::zeros(&[3])];
        let dx = backward(&spec, &p, &cache, &Tensor::zeros(y.shape()), &mut g);
        assert!(g.iter().chain([&dx]).all(|t| t.data().iter().all(|&v| v == 0.0)));
    }
}
