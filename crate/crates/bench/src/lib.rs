//! Synthetic inputs for the pipeline benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmav_core::CategoryDistribution;

/// `frames` normalized distributions over `labels` classes, reproducible from `seed`.
pub fn synthetic_stream(frames: u64, labels: usize, seed: u64) -> Vec<CategoryDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..labels).map(|i| format!("class-{i}")).collect();
    (1..=frames)
        .map(|frame_id| {
            let raw: Vec<f64> = (0..labels).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let pairs = names.iter().cloned().zip(raw.iter().map(|v| v / total));
            CategoryDistribution::from_pairs(frame_id, pairs).expect("generated scores are valid")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_normalized() {
        let a = synthetic_stream(50, 4, 7);
        assert_eq!(a, synthetic_stream(50, 4, 7));
        assert!(a.iter().all(|d| (d.sum() - 1.0).abs() < 1e-9 && d.scores.len() == 4));
        assert_eq!(a.last().unwrap().frame_id, 50);
    }
}
