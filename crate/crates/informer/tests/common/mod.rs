#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratlab_informer::{Batch, Dataset, InformerConfig, InputSpec, LossKind};

pub fn micro_config(loss: LossKind) -> InformerConfig {
    InformerConfig {
        past_window: 6,
        d_model: 8,
        d_ff: 8,
        n_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        dropout: 0.0,
        loss,
        batch_size: 4,
        learning_rate: 1e-2,
        max_epochs: 1,
        patience: 2,
        validate_every: 10,
        seed: 11,
        ..Default::default()
    }
}

pub fn spec() -> InputSpec {
    InputSpec {
        n_real: 3,
        cardinalities: vec![24, 7],
    }
}

pub fn random_batch(size: usize, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        size,
        past_window: n,
        n_real: 3,
        real: (0..size * n * 3).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        cats: vec![
            (0..size * n).map(|_| rng.gen_range(0..24)).collect(),
            (0..size * n).map(|_| rng.gen_range(0..7)).collect(),
        ],
        targets: (0..size).map(|_| rng.gen_range(-0.02..0.02)).collect(),
    }
}

/// Periodic synthetic series: next return follows a sinusoid visible in the
/// lagged features.
pub fn sinusoid_dataset(len: usize, period: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = std::f64::consts::TAU / period as f64;
    let target: Vec<f64> = (0..len)
        .map(|t| 0.01 * (w * t as f64).sin() + noise * rng.gen_range(-1.0..1.0))
        .collect();
    let mut real = Vec::with_capacity(len * 3);
    for t in 0..len {
        real.push(target[t] * 100.0);
        real.push((w * t as f64).sin());
        real.push((w * t as f64).cos());
    }
    Dataset::new(
        3,
        real,
        vec![(0..len).map(|t| t % 24).collect(), (0..len).map(|t| (t / 24) % 7).collect()],
        vec![24, 7],
        target,
        (0..len as i64).map(|t| t * 60_000).collect(),
        0,
    )
    .unwrap()
}
