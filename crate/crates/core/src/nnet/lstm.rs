//! LSTM with gate order (i, f, g, o), zero initial state and full
//! backpropagation through time.

use super::tensor::Tensor;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Tensor,
    /// Post-activation gates per step, `[L, 4U]`.
    gates: Vec<f64>,
    /// Cell states per step, `[L, U]`.
    c: Vec<f64>,
    /// Hidden states per step, `[L, U]`.
    h: Vec<f64>,
}

/// Parameters: `p[0]` input weights `[4U, C]`, `p[1]` recurrent weights
/// `[4U, U]`, `p[2]` bias `[4U]`.
pub(crate) fn forward(p: &[Tensor], x: &Tensor, units: usize, return_sequences: bool) -> (Tensor, LstmCache) {
    let (len, ch) = (x.steps(), x.channels());
    let (w, r, b) = (p[0].data(), p[1].data(), p[2].data());
    let xs = x.data();
    let mut gates = vec![0.0; len * 4 * units];
    let mut c = vec![0.0; len * units];
    let mut h = vec![0.0; len * units];
    let mut z = vec![0.0; 4 * units];
    for t in 0..len {
        let xt = &xs[t * ch..(t + 1) * ch];
        for (k, zk) in z.iter_mut().enumerate() {
            let mut acc = b[k] + w[k * ch..(k + 1) * ch].iter().zip(xt).map(|(a, v)| a * v).sum::<f64>();
            if t > 0 {
                let hp = &h[(t - 1) * units..t * units];
                acc += r[k * units..(k + 1) * units].iter().zip(hp).map(|(a, v)| a * v).sum::<f64>();
            }
            *zk = acc;
        }
        let gt = &mut gates[t * 4 * units..(t + 1) * 4 * units];
        for u in 0..units {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[units + u]);
            let g = z[2 * units + u].tanh();
            let o = sigmoid(z[3 * units + u]);
            gt[u] = i;
            gt[units + u] = f;
            gt[2 * units + u] = g;
            gt[3 * units + u] = o;
            let c_prev = if t > 0 { c[(t - 1) * units + u] } else { 0.0 };
            let ct = f * c_prev + i * g;
            c[t * units + u] = ct;
            h[t * units + u] = o * ct.tanh();
        }
    }
    let y = if return_sequences {
        Tensor::seq(len, units, h.clone())
    } else {
        Tensor::seq(1, units, h[(len - 1) * units..].to_vec())
    };
    (y, LstmCache { x: x.clone(), gates, c, h })
}

pub(crate) fn backward(
    p: &[Tensor],
    cache: &LstmCache,
    dy: &Tensor,
    g: &mut [Tensor],
    units: usize,
    return_sequences: bool,
) -> Tensor {
    let x = &cache.x;
    let (len, ch) = (x.steps(), x.channels());
    let (w, r) = (p[0].data(), p[1].data());
    let xs = x.data();
    let dys = dy.data();
    let mut dx = vec![0.0; len * ch];
    let mut dh_next = vec![0.0; units];
    let mut dc_next = vec![0.0; units];
    let mut dz = vec![0.0; 4 * units];
    let (gw, rest) = g.split_at_mut(1);
    let (gr, gb) = rest.split_at_mut(1);
    let (gw, gr, gb) = (gw[0].data_mut(), gr[0].data_mut(), gb[0].data_mut());
    for t in (0..len).rev() {
        let gt = &cache.gates[t * 4 * units..(t + 1) * 4 * units];
        for u in 0..units {
            let mut dh = dh_next[u];
            if return_sequences {
                dh += dys[t * units + u];
            } else if t == len - 1 {
                dh += dys[u];
            }
            let (i, f, gg, o) = (gt[u], gt[units + u], gt[2 * units + u], gt[3 * units + u]);
            let ct = cache.c[t * units + u];
            let tc = ct.tanh();
            let c_prev = if t > 0 { cache.c[(t - 1) * units + u] } else { 0.0 };
            let dc = dh * o * (1.0 - tc * tc) + dc_next[u];
            dz[u] = dc * gg * i * (1.0 - i);
            dz[units + u] = dc * c_prev * f * (1.0 - f);
            dz[2 * units + u] = dc * i * (1.0 - gg * gg);
            dz[3 * units + u] = dh * tc * o * (1.0 - o);
            dc_next[u] = dc * f;
        }
        let xt = &xs[t * ch..(t + 1) * ch];
        let dxt = &mut dx[t * ch..(t + 1) * ch];
        dh_next.fill(0.0);
        for (k, &d) in dz.iter().enumerate() {
            gb[k] += d;
            for c in 0..ch {
                gw[k * ch + c] += d * xt[c];
                dxt[c] += d * w[k * ch + c];
            }
            if t > 0 {
                let hp = &cache.h[(t - 1) * units..t * units];
                for u in 0..units {
                    gr[k * units + u] += d * hp[u];
                    dh_next[u] += d * r[k * units + u];
                }
            }
        }
    }
    Tensor::seq(len, ch, dx)
}
