//! Baseline network architectures over tabular rows, presented as
//! `[n_features, 1]` sequences.

use super::layers::LayerSpec;
use super::network::NetworkSpec;

/// Hidden widths of the five-layer MLP (the fifth layer is the K-way output).
pub const MLP_WIDTHS: [usize; 4] = [64, 128, 64, 32];

fn seq(d: usize, layers: Vec<LayerSpec>) -> NetworkSpec {
    NetworkSpec::sequential((d, 1), layers).expect("zoo architectures end in softmax")
}

/// Single linear layer with softmax output.
pub fn perceptron(d: usize, k: usize) -> NetworkSpec {
    seq(d, vec![LayerSpec::dense(k), LayerSpec::Softmax])
}

/// Five dense layers. Hidden activations are ReLU, or alternate ReLU and
/// softmax when `alternate_softmax` is set.
pub fn mlp(d: usize, k: usize, alternate_softmax: bool) -> NetworkSpec {
    let mut layers = Vec::new();
    for (i, &w) in MLP_WIDTHS.iter().enumerate() {
        layers.push(LayerSpec::dense(w));
        layers.push(if alternate_softmax && i % 2 == 1 { LayerSpec::Softmax } else { LayerSpec::Relu });
    }
    layers.push(LayerSpec::dense(k));
    layers.push(LayerSpec::Softmax);
    seq(d, layers)
}

pub fn cnn(d: usize, k: usize, filters: usize, kernel: usize) -> NetworkSpec {
    seq(
        d,
        vec![
            LayerSpec::conv1d(filters, kernel),
            LayerSpec::Relu,
            LayerSpec::maxpool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(k),
            LayerSpec::Softmax,
        ],
    )
}

pub fn lstm(d: usize, k: usize, units: usize) -> NetworkSpec {
    seq(d, vec![LayerSpec::lstm(units, false), LayerSpec::dense(k), LayerSpec::Softmax])
}

/// Five stacked LSTMs; all but the last return full sequences.
pub fn lstm5(d: usize, k: usize, units: usize) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> = (0..5).map(|i| LayerSpec::lstm(units, i < 4)).collect();
    layers.push(LayerSpec::dense(k));
    layers.push(LayerSpec::Softmax);
    seq(d, layers)
}
