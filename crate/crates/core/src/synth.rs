//! Seeded synthetic data: glitch-like metadata tables for end-to-end runs
//! without the real catalogue, and Gaussian blobs for model tests.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{GlitchClass, GlitchFeatures, GlitchRecord, Ifo, CLASS_TABLE, N_CLASSES};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, seeded};

/// GPS span of the first observing run.
const GPS_START: f64 = 1_126_051_217.0;
const GPS_END: f64 = 1_137_254_417.0;

/// Per-class reference counts scaled by `scale`, each at least one.
pub fn o1_like_counts(scale: f64) -> Vec<usize> {
    CLASS_TABLE.iter().map(|c| ((c.expected_count as f64 * scale).round() as usize).max(1)).collect()
}

/// Class-conditional location of each log10 feature plus the L1 share.
struct Profile {
    log_centres: [f64; 5],
    l1_share: f64,
}

fn profile(class: usize) -> Profile {
    // Ranges (log10): peak freq, snr, central freq, duration, bandwidth.
    const RANGES: [(f64, f64); 5] = [(1.0, 3.5), (0.9, 2.5), (1.3, 3.5), (-1.5, 0.8), (0.5, 3.5)];
    let mut rng = seeded(derive_seed(0x5EED_C1A5, class as u64));
    let mut log_centres = [0.0; 5];
    for (c, (lo, hi)) in log_centres.iter_mut().zip(RANGES) {
        *c = rng.gen_range(lo..hi);
    }
    Profile { log_centres, l1_share: rng.gen_range(0.2..0.8) }
}

/// Labelled glitch-like records: `counts[c]` rows of class `c`, each numeric
/// feature log-normal around a fixed per-class centre with log10 spread
/// `spread`. Rows come out shuffled; ids are unique.
pub fn glitch_records(counts: &[usize], spread: f64, seed: u64) -> Vec<GlitchRecord> {
    assert!(counts.len() <= N_CLASSES, "at most {N_CLASSES} classes");
    let noise = Normal::new(0.0, spread).expect("spread must be finite and non-negative");
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (class, &n) in counts.iter().enumerate() {
        let p = profile(class);
        let label = GlitchClass::from_index(class).expect("class index in table");
        for _ in 0..n {
            let mut v = [0.0; 5];
            for (x, c) in v.iter_mut().zip(p.log_centres) {
                *x = 10f64.powf(c + noise.sample(&mut rng));
            }
            let ifo = if rng.gen_bool(p.l1_share) { Ifo::L1 } else { Ifo::H1 };
            out.push(GlitchRecord {
                features: GlitchFeatures {
                    gps_time: (rng.gen_range(GPS_START..GPS_END) * 1000.0).round() / 1000.0,
                    peak_freq: v[0],
                    snr: v[1],
                    central_freq: v[2],
                    duration: v[3],
                    bandwidth: v[4],
                    id: String::new(),
                    ifo,
                },
                label,
            });
        }
    }
    out.shuffle(&mut rng);
    for (i, r) in out.iter_mut().enumerate() {
        r.features.id = format!("syn{i:06}");
    }
    out
}

/// Isotropic Gaussian blobs: class `c` is centred at `sep·e_(c mod d)`, with
/// the sign flipped for every second wrap-around, unit noise scaled by
/// `noise`. Rows are grouped by class.
pub fn blobs(n_per_class: usize, n_classes: usize, n_features: usize, sep: f64, noise: f64, seed: u64) -> (Matrix, Vec<usize>) {
    assert!(n_features > 0 && n_classes <= 2 * n_features, "not enough dimensions for distinct centres");
    let dist = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n_per_class * n_classes * n_features);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for c in 0..n_classes {
        let axis = c % n_features;
        let sign = if (c / n_features).is_multiple_of(2) { 1.0 } else { -1.0 };
        for _ in 0..n_per_class {
            for j in 0..n_features {
                let centre = if j == axis { sign * sep } else { 0.0 };
                data.push(centre + dist.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    (Matrix::new(n_per_class * n_classes, n_features, data), labels)
}
