//! Oracle checks for the probabilistic primitives: numeric quadrature for
//! the closed-form KL, Monte-Carlo statistics for the reparameterized
//! sampler, a scalar log-sum-exp reference for cross-entropy, and
//! finite-difference gradients for every loss.

use jvae_core::autodiff::{check_gradients, Tensor};
use jvae_core::prob::{
    cross_entropy, hetero_nll, kld_to_standard_normal, mse, reparam_sample, standard_normal,
    GaussianParams,
};
use jvae_core::seed::SeedMix;
use proptest::prelude::*;
use rand::Rng;

/// KL( N(mu, sigma^2) || N(0,1) ) by Simpson quadrature of
/// q(z) * (ln q(z) - ln p(z)); independent of the closed form.
fn kl_quadrature(mu: f64, log_var: f64) -> f64 {
    let sigma = (0.5 * log_var).exp();
    let q_logpdf = |z: f64| -0.5 * ((z - mu) / sigma).powi(2) - sigma.ln();
    let p_logpdf = |z: f64| -0.5 * z * z;
    // The constant -ln sqrt(2 pi) cancels between the two log-densities.
    let integrand = |z: f64| {
        let lq = q_logpdf(z);
        let q = lq.exp() / (2.0 * std::f64::consts::PI).sqrt();
        q * (lq - p_logpdf(z))
    };
    let (lo, hi) = (mu - 15.0 * sigma, mu + 15.0 * sigma);
    let n = 40_000; // even
    let h = (hi - lo) / n as f64;
    let mut acc = integrand(lo) + integrand(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + k as f64 * h);
    }
    acc * h / 3.0
}

fn scalar_gaussian(mu: f64, log_var: f64) -> GaussianParams {
    GaussianParams::new(
        Tensor::from_vec(vec![mu], &[1, 1]).unwrap(),
        Tensor::from_vec(vec![log_var], &[1, 1]).unwrap(),
    )
    .unwrap()
}

#[test]
fn quadrature_reproduces_frozen_kld_values() {
    assert!((kl_quadrature(1.0, 0.0) - 0.5).abs() < 1e-9);
    assert!((kl_quadrature(0.0, 2.0f64.ln()) - 0.15342640972002736).abs() < 1e-9);
}

#[test]
fn closed_form_kld_matches_quadrature() {
    let mut rng = SeedMix::new(5).with_str("klq").rng();
    for _ in 0..10 {
        let mu = rng.gen_range(-2.0..2.0);
        let log_var = rng.gen_range(-2.0..1.0);
        let closed = kld_to_standard_normal(&scalar_gaussian(mu, log_var))
            .unwrap()
            .item();
        let numeric = kl_quadrature(mu, log_var);
        assert!(
            (closed - numeric).abs() < 1e-8,
            "mu={mu} log_var={log_var}: closed {closed} vs quadrature {numeric}"
        );
    }
}

#[test]
fn sampler_statistics_match_target_moments() {
    // mu = 0.5, sigma^2 = 0.25; one million draws.
    let n = 1_000_000usize;
    let mu = 0.5f64;
    let var = 0.25f64;
    let g = GaussianParams::new(
        Tensor::filled(&[1, n], mu),
        Tensor::filled(&[1, n], var.ln()),
    )
    .unwrap();
    let mut rng = SeedMix::new(11).with_str("mc").rng();
    let noise = standard_normal(&mut rng, &[1, n]);
    let sample = reparam_sample(&g, &noise).unwrap();

    let mean = sample.value.data().iter().sum::<f64>() / n as f64;
    let observed_var = sample
        .value
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;

    let se_mean = var.sqrt() / (n as f64).sqrt();
    let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((mean - mu).abs() < 3.0 * se_mean, "mean {mean} vs {mu}");
    assert!(
        (observed_var - var).abs() < 3.0 * se_var,
        "variance {observed_var} vs {var}"
    );
}

#[test]
fn cross_entropy_matches_scalar_logsumexp() {
    let (t_len, classes) = (3, 5);
    let mut rng = SeedMix::new(21).with_str("ce").rng();
    let data: Vec<f64> = (0..t_len * classes)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();
    let labels = [4usize, 0, 2];
    let logits = Tensor::from_vec(data.clone(), &[t_len, classes]).unwrap();

    let mut expected = 0.0;
    for t in 0..t_len {
        let row = &data[t * classes..(t + 1) * classes];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        expected += lse - row[labels[t]];
    }
    expected /= t_len as f64;

    let got = cross_entropy(&logits, &labels).unwrap().item();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let shape = [3usize, 4];
    let mut rng = SeedMix::new(31).with_str("fd").rng();
    let rand_t = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        Tensor::from_vec(
            (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(lo..hi))
                .collect(),
            &shape,
        )
        .unwrap()
    };
    let target = rand_t(&mut rng, -1.5, 1.5);
    let mean = rand_t(&mut rng, -1.5, 1.5);
    let log_var = rand_t(&mut rng, -1.5, 1.0);
    let noise = rand_t(&mut rng, -1.0, 1.0);

    // Reparameterized sample feeding a quadratic so mean and log-variance
    // both matter; noise must receive no gradient by construction.
    let sample_loss = |inputs: &[Tensor]| {
        let g = GaussianParams::new(inputs[0].clone(), inputs[1].clone())?;
        let s = reparam_sample(&g, &noise)?;
        s.value.square().sum()
    };
    check_gradients(&sample_loss, &[mean.clone(), log_var.clone()], 1e-5, 1e-4, 1e-7).unwrap();

    let kld_loss = |inputs: &[Tensor]| {
        kld_to_standard_normal(&GaussianParams::new(inputs[0].clone(), inputs[1].clone())?)
    };
    check_gradients(&kld_loss, &[mean.clone(), log_var.clone()], 1e-5, 1e-4, 1e-7).unwrap();

    let nll_loss = |inputs: &[Tensor]| {
        hetero_nll(
            &target,
            &GaussianParams::new(inputs[0].clone(), inputs[1].clone())?,
        )
    };
    check_gradients(&nll_loss, &[mean.clone(), log_var.clone()], 1e-5, 1e-4, 1e-7).unwrap();

    let mse_loss = |inputs: &[Tensor]| mse(&target, &inputs[0]);
    check_gradients(&mse_loss, &[mean.clone()], 1e-5, 1e-4, 1e-7).unwrap();

    let labels = [0usize, 2, 3];
    let ce_loss = |inputs: &[Tensor]| cross_entropy(&inputs[0], &labels);
    check_gradients(&ce_loss, &[mean], 1e-5, 1e-4, 1e-7).unwrap();
}

proptest! {
    /// KLD to the unit Gaussian is non-negative and vanishes only at the
    /// unit Gaussian itself.
    #[test]
    fn kld_is_nonnegative(seed in 0u64..500, rows in 1usize..4, cols in 1usize..4) {
        let mut rng = SeedMix::new(seed).with_str("kldprop").rng();
        let n = rows * cols;
        let mean = Tensor::from_vec((0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(), &[rows, cols]).unwrap();
        let log_var = Tensor::from_vec((0..n).map(|_| rng.gen_range(-3.0..2.0)).collect(), &[rows, cols]).unwrap();
        let all_zero = mean.data().iter().all(|&v| v == 0.0)
            && log_var.data().iter().all(|&v| v == 0.0);
        let g = GaussianParams::new(mean, log_var).unwrap();
        let kld = kld_to_standard_normal(&g).unwrap().item();
        prop_assert!(kld >= 0.0);
        if !all_zero {
            prop_assert!(kld > 0.0);
        }
    }
}
