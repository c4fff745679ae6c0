use rand::Rng as _;

use super::network::{NetworkSpec, NetworkState};
use super::tensor::Tensor;
use super::dd::{Dd, Real};
use super::eval::mean_loss;
use super::train::loss_softmax_ce;
use super::NnError;
use crate::rng;

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between back-propagated and central-difference
/// gradients of the batch cross-entropy, over every parameter, for a freshly
/// initialised network on a random batch of three inputs.
///
/// Biases are drawn from U(±0.1) instead of starting at zero: zero biases put
/// ReLUs fed by all-zero windows exactly on their kink, where the derivative
/// does not exist and central differences report half a slope.
pub fn grad_check(spec: &NetworkSpec, seed: u64, eps: f64) -> Result<f64, NnError> {
    let mut state = NetworkState::init(spec.clone(), seed)?;
    let mut r = rng::seeded(rng::derive_seed(seed, 1));
    let bias_slots: Vec<bool> = state.params().iter().map(|t| t.shape().len() == 1).collect();
    for (p, is_bias) in state.param_data_mut().zip(bias_slots) {
        if is_bias {
            p.iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        }
    }
    let (len, ch) = spec.input;
    let inputs: Vec<Tensor> =
        (0..3).map(|_| Tensor::seq(len, ch, (0..len * ch).map(|_| r.gen_range(-1.5..1.5)).collect())).collect();
    let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..state.n_outputs())).collect();
    grad_check_state(&state, &inputs, &labels, eps)
}

/// Like [`grad_check`] for a given state and batch. The numerical side
/// evaluates the loss in double-double arithmetic, so the central difference
/// is not limited by f64 rounding of the loss value.
pub fn grad_check_state(state: &NetworkState, inputs: &[Tensor], labels: &[usize], eps: f64) -> Result<f64, NnError> {
    let mut analytic = state.zero_grads();
    let mut probs = Vec::new();
    let mut caches = Vec::new();
    for x in inputs {
        let (p, c) = state.forward(x)?;
        probs.push(p);
        caches.push(c);
    }
    let (_, dlogits) = loss_softmax_ce(&probs, labels, None)?;
    for (c, d) in caches.iter().zip(&dlogits) {
        state.backward_into(c, d, &mut analytic)?;
    }
    let mut params: Vec<Vec<Dd>> =
        state.params().iter().map(|t| t.data().iter().map(|&v| Dd::from_f64(v)).collect()).collect();
    let step = Dd::from_f64(eps);
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = params[t][j];
            params[t][j] = orig + step;
            let plus = mean_loss(state, &params, inputs, labels);
            params[t][j] = orig - step;
            let minus = mean_loss(state, &params, inputs, labels);
            params[t][j] = orig;
            let numeric = ((plus - minus) / (step + step)).to_f64();
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::LayerSpec;

    fn seq(input: (usize, usize), layers: Vec<LayerSpec>) -> NetworkSpec {
        NetworkSpec::sequential(input, layers).unwrap()
    }

    #[test]
    fn dense_relu_softmax() {
        let s = seq((5, 1), vec![LayerSpec::dense(6), LayerSpec::Relu, LayerSpec::dense(3), LayerSpec::Softmax]);
        assert!(grad_check(&s, 1, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn conv_pool_dense() {
        let s = seq(
            (7, 2),
            vec![LayerSpec::conv1d(3, 3), LayerSpec::maxpool(2), LayerSpec::Flatten, LayerSpec::dense(4), LayerSpec::Softmax],
        );
        assert!(grad_check(&s, 2, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn lstm_sequence_eight() {
        let s = seq((8, 1), vec![LayerSpec::lstm(4, false), LayerSpec::dense(3), LayerSpec::Softmax]);
        assert!(grad_check(&s, 3, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn stacked_lstm_with_sequences_and_interior_softmax() {
        let s = seq(
            (5, 2),
            vec![
                LayerSpec::lstm(3, true),
                LayerSpec::lstm(2, true),
                LayerSpec::Softmax,
                LayerSpec::Flatten,
                LayerSpec::dense(3),
                LayerSpec::Softmax,
            ],
        );
        assert!(grad_check(&s, 4, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
    }
}
