//! Central finite-difference checks for every primitive and for composed
//! graphs: h = 1e-5, relative tolerance 1e-4, absolute floor 1e-7.

use jvae_core::autodiff::{check_gradients, Tensor};
use jvae_core::seed::SeedMix;
use rand::Rng;

const H: f64 = 1e-5;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-7;

fn random_tensor(tag: &str, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = SeedMix::new(42).with_str(tag).rng();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    Tensor::from_vec(data, shape).unwrap()
}

/// Weighted sum against a fixed random matrix so transposition errors in
/// backward cannot cancel out.
fn weighted_sum(t: &Tensor, tag: &str) -> Tensor {
    let r = random_tensor(tag, t.shape(), -1.0, 1.0);
    t.mul(&r).unwrap().sum().unwrap()
}

#[test]
fn add_gradient() {
    let a = random_tensor("add.a", &[3, 4], -2.0, 2.0);
    let b = random_tensor("add.b", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].add(&inputs[1])?, "add.r"));
    check_gradients(&f, &[a, b], H, REL, ABS).unwrap();
}

#[test]
fn sub_gradient() {
    let a = random_tensor("sub.a", &[3, 4], -2.0, 2.0);
    let b = random_tensor("sub.b", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].sub(&inputs[1])?, "sub.r"));
    check_gradients(&f, &[a, b], H, REL, ABS).unwrap();
}

#[test]
fn mul_gradient() {
    let a = random_tensor("mul.a", &[3, 4], -2.0, 2.0);
    let b = random_tensor("mul.b", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].mul(&inputs[1])?, "mul.r"));
    check_gradients(&f, &[a, b], H, REL, ABS).unwrap();
}

#[test]
fn matmul_gradient() {
    let a = random_tensor("matmul.a", &[3, 5], -2.0, 2.0);
    let b = random_tensor("matmul.b", &[5, 2], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].matmul(&inputs[1])?, "matmul.r"));
    check_gradients(&f, &[a, b], H, REL, ABS).unwrap();
}

#[test]
fn concat_gradient_both_axes() {
    for axis in 0..2 {
        let a = random_tensor("concat.a", &[2, 3], -2.0, 2.0);
        let b = random_tensor("concat.b", &[2, 3], -2.0, 2.0);
        let f = move |inputs: &[Tensor]| {
            Ok(weighted_sum(
                &Tensor::concat(&[&inputs[0], &inputs[1]], axis)?,
                "concat.r",
            ))
        };
        check_gradients(&f, &[a, b], H, REL, ABS).unwrap();
    }
}

#[test]
fn slice_gradient_both_axes() {
    let a = random_tensor("slice.a", &[4, 5], -2.0, 2.0);
    let f0 = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].slice(0, 1, 2)?, "slice.r0"));
    check_gradients(&f0, &[a.clone()], H, REL, ABS).unwrap();
    let f1 = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].slice(1, 2, 3)?, "slice.r1"));
    check_gradients(&f1, &[a], H, REL, ABS).unwrap();
}

#[test]
fn sum_gradient() {
    let a = random_tensor("sum.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| inputs[0].square().sum();
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn mean_gradient() {
    let a = random_tensor("mean.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| inputs[0].square().mean();
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn exp_gradient() {
    let a = random_tensor("exp.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].exp(), "exp.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn log_gradient() {
    let a = random_tensor("log.a", &[3, 4], 0.5, 2.5);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].log(), "log.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn tanh_gradient() {
    let a = random_tensor("tanh.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].tanh(), "tanh.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn sigmoid_gradient() {
    let a = random_tensor("sigmoid.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].sigmoid(), "sigmoid.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn square_gradient() {
    let a = random_tensor("square.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].square(), "square.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn softmax_gradient() {
    let a = random_tensor("softmax.a", &[3, 5], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].softmax_lastdim()?, "softmax.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn scale_gradient() {
    let a = random_tensor("scale.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].scale(-1.7), "scale.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

#[test]
fn clamp_gradient_away_from_boundary() {
    // FD is invalid at the clamp kinks; random values in (-2, 2) with a
    // (-3, 3) window stay clear of them.
    let a = random_tensor("clamp.a", &[3, 4], -2.0, 2.0);
    let f = |inputs: &[Tensor]| Ok(weighted_sum(&inputs[0].clamp(-3.0, 3.0), "clamp.r"));
    check_gradients(&f, &[a], H, REL, ABS).unwrap();
}

/// A five-parameter graph exercising every primitive at once.
#[test]
fn composite_of_all_primitives() {
    let w1 = random_tensor("comp.w1", &[4, 6], -1.0, 1.0);
    let w2 = random_tensor("comp.w2", &[3, 6], -1.0, 1.0);
    let w3 = random_tensor("comp.w3", &[6, 4], -1.0, 1.0);
    let w4 = random_tensor("comp.w4", &[2, 4], -1.0, 1.0);
    let w5 = random_tensor("comp.w5", &[2, 4], 0.5, 1.5);
    let f = |inputs: &[Tensor]| {
        let joined = Tensor::concat(&[&inputs[0], &inputs[1]], 0)?; // 7x6
        let mixed = joined.matmul(&inputs[2])?; // 7x4
        let a = mixed.slice(0, 0, 2)?.tanh().add(&inputs[3])?;
        let b = mixed.slice(0, 2, 2)?.sigmoid().mul(&inputs[4])?;
        let c = a.sub(&b)?.square().softmax_lastdim()?;
        let d = c.scale(3.0).exp().log().clamp(-5.0, 5.0);
        let lhs = d.sum()?;
        let rhs = inputs[4].log().mean()?;
        lhs.add(&rhs)
    };
    let report = check_gradients(&f, &[w1, w2, w3, w4, w5], H, REL, ABS).unwrap();
    assert!(report.elements > 80);
}
