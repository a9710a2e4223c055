//! Corpus-level statistics and file-format properties.

use jvae_core::autodiff::Tensor;
use jvae_core::data::{causal_convolve, generate_utterances, read_features, write_features, SynthConfig};
use proptest::prelude::*;

/// Mean per-frame distance between far-field and close-talk features on a
/// default 100-utterance corpus. The channel must distort well above the
/// within-state jitter floor 0.1*sqrt(D); the measured value is frozen with
/// a generous band to catch generator drift.
#[test]
fn channel_distortion_clears_the_jitter_floor() {
    let cfg = SynthConfig::default();
    let utts = generate_utterances(&cfg, 100, (20, 40)).unwrap();
    let mut dist_sum = 0.0;
    let mut frames = 0usize;
    for utt in &utts {
        for t in 0..utt.frames() {
            let d: f64 = utt
                .far_field
                .row(t)
                .iter()
                .zip(utt.close_talk.row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sum += d;
        }
        frames += utt.frames();
    }
    let mean_dist = dist_sum / frames as f64;
    let floor = 0.1 * (cfg.feature_dim as f64).sqrt();
    println!("mean |x - y| per frame = {mean_dist:.6} (floor {floor:.6})");
    assert!(mean_dist > floor);
    // Frozen measurement from the default generator settings.
    assert!((mean_dist - 0.905).abs() < 0.1, "measured {mean_dist}");
}

proptest! {
    /// The convolved component of the channel is exactly linear: doubling
    /// the close-talk input doubles the output.
    #[test]
    fn channel_convolution_is_linear(
        frames in 1usize..12,
        dim in 1usize..5,
        kernel_len in 1usize..6,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut rng = jvae_core::seed::SeedMix::new(seed).with_str("conv").rng();
        let data: Vec<f64> = (0..frames * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let kernel: Vec<f64> = (0..kernel_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let once = causal_convolve(&data, frames, dim, &kernel);
        let doubled_in: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        let doubled_out = causal_convolve(&doubled_in, frames, dim, &kernel);
        for (a, b) in once.iter().zip(&doubled_out) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    /// FBT1 write/read is the identity for all finite doubles, including
    /// subnormals and negative zero.
    #[test]
    fn feature_file_round_trip_for_hostile_values(
        values in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            1..24,
        ),
        cols in 1usize..4,
    ) {
        let rows = values.len().div_ceil(cols);
        let mut data = values;
        data.resize(rows * cols, 0.0);
        let m = Tensor::from_vec(data, &[rows, cols]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fbt");
        write_features(&path, &m).unwrap();
        let back = read_features(&path).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
