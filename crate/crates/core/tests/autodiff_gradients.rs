use bistet_core::autodiff::{gradient_check, max_relative_error, numerical_gradient, Tensor, MASK_BIAS};
use bistet_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random linear readout so no gradient component is structurally zero.
fn readout(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, y.shape());
    Ok(y.mul(&w)?.sum())
}

fn check(name: &str, x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) {
    let err = gradient_check(f, x, EPS).unwrap();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[3, 4]);
    let other = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    check("add", &x, |x| readout(&x.add(&other)?, 2));
    check("sub", &x, |x| readout(&other.sub(x)?, 3));
    check("mul", &x, |x| readout(&x.mul(&other)?, 4));
    check("mul_self", &x, |x| readout(&x.mul(x)?, 5));
    check("broadcast_add_rhs", &row, |r| readout(&other.add(r)?, 6));
    check("broadcast_mul_rhs", &row, |r| readout(&other.mul(r)?, 7));
    check("scale", &x, |x| readout(&x.scale(-2.5), 8));
    check("add_scalar", &x, |x| readout(&x.add_scalar(0.3), 9));
    check("exp", &x, |x| readout(&x.exp(), 10));
    check("ln", &x.exp(), |x| readout(&x.ln(), 11));
    // keep inputs away from the kink
    let shifted = Tensor::new(
        x.shape(),
        x.data().iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect(),
    )
    .unwrap();
    check("relu", &shifted, |x| readout(&x.relu(), 12));
}

#[test]
fn shape_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = random(&mut rng, &[2, 3, 4]);
    let y = random(&mut rng, &[2, 1, 4]);
    check("reshape", &x, |x| readout(&x.reshape(&[6, 4])?, 21));
    check("permute", &x, |x| readout(&x.permute(&[2, 0, 1])?, 22));
    check("transpose", &x, |x| readout(&x.transpose(1, 2)?, 23));
    check("concat", &x, |x| readout(&Tensor::concat(&[x.clone(), y.clone()], 1)?, 24));
    check("concat_rhs", &y, |y| readout(&Tensor::concat(&[x.clone(), y.clone()], 1)?, 25));
    check("sum_axis", &x, |x| readout(&x.sum_axis(1)?, 26));
    check("mean_axis", &x, |x| readout(&x.mean_axis(0)?, 27));
    check("mean", &x, |x| Ok(x.mul(x)?.mean()));
    let table = random(&mut rng, &[5, 3]);
    check("gather_rows", &table, |t| readout(&t.gather_rows(&[4, 0, 4, 2])?, 28));
}

#[test]
fn matmul_both_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let a = random(&mut rng, &[2, 3, 4]);
    let b = random(&mut rng, &[4, 5]);
    check("matmul_lhs", &a, |a| readout(&a.matmul(&b)?, 31));
    check("matmul_rhs", &b, |b| readout(&a.matmul(b)?, 32));
    let c = random(&mut rng, &[2, 4, 3]);
    check("bmm_lhs", &a, |a| readout(&a.matmul(&c)?, 33));
    check("bmm_rhs", &c, |c| readout(&a.matmul(c)?, 34));
}

#[test]
fn softmax_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let x = random(&mut rng, &[3, 5]);
    check("softmax_last", &x, |x| readout(&x.softmax(1)?, 41));
    check("softmax_first", &x, |x| readout(&x.softmax(0)?, 42));
    check("log_softmax", &x, |x| readout(&x.log_softmax(1)?, 43));
    let mut bias = vec![0.0; 15];
    for r in 0..3 {
        for c in 0..5 {
            if c > r + 1 {
                bias[r * 5 + c] = MASK_BIAS;
            }
        }
    }
    let mask = Tensor::new(&[3, 5], bias).unwrap();
    check("masked_softmax", &x, |x| readout(&x.add(&mask)?.softmax(1)?, 44));
}

#[test]
fn layer_norm_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = random(&mut rng, &[4, 6]);
    let g = random(&mut rng, &[6]);
    let b = random(&mut rng, &[6]);
    check("ln_x", &x, |x| readout(&x.layer_norm(&g, &b, 1e-6)?, 51));
    check("ln_scale", &g, |g| readout(&x.layer_norm(g, &b, 1e-6)?, 52));
    check("ln_shift", &b, |b| readout(&x.layer_norm(&g, b, 1e-6)?, 53));
}

#[test]
fn conv2d_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let x = random(&mut rng, &[2, 6, 7, 2]);
    let w = random(&mut rng, &[3, 3, 2, 3]);
    let b = random(&mut rng, &[3]);
    for (stride, pad) in [((1, 1), (1, 1)), ((2, 2), (1, 1)), ((2, 1), (1, 0))] {
        check("conv_x", &x, |x| readout(&x.conv2d(&w, &b, stride, pad)?, 61));
        check("conv_w", &w, |w| readout(&x.conv2d(w, &b, stride, pad)?, 62));
        check("conv_b", &b, |b| readout(&x.conv2d(&w, b, stride, pad)?, 63));
    }
}

#[test]
fn linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let a = random(&mut rng, &[10]);
    let x = random(&mut rng, &[10]);
    let err = gradient_check(|x| Ok(x.mul(&a)?.sum()), &x, 1e-5).unwrap();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn cross_entropy_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let w = random(&mut rng, &[4, 6]);
    let inputs = random(&mut rng, &[3, 4]);
    let targets = [1usize, 5, 2];
    let mut onehot = vec![0.0; 18];
    for (r, &t) in targets.iter().enumerate() {
        onehot[r * 6 + t] = 1.0;
    }
    let onehot = Tensor::new(&[3, 6], onehot).unwrap();
    let f = |w: &Tensor| -> Result<Tensor> {
        let p = inputs.matmul(w)?.softmax(1)?;
        Ok(p.ln().mul(&onehot)?.sum().scale(-1.0 / 3.0))
    };
    let err = gradient_check(f, &w, 1e-5).unwrap();
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn perturbed_gradient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let x = random(&mut rng, &[3, 4]);
    let f = |x: &Tensor| readout(&x.softmax(1)?, 91);
    let leaf = Tensor::param(x.shape(), x.to_vec()).unwrap();
    f(&leaf).unwrap().backward().unwrap();
    let analytic: Vec<f64> = leaf.grad().unwrap().iter().map(|g| g * 1.01).collect();
    let numeric = numerical_gradient(f, &x, 1e-5).unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err > 1e-3, "{err:e}");
}

#[test]
fn eps_outside_range_is_rejected() {
    let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    assert!(gradient_check(|x| Ok(x.sum()), &x, 1e-2).is_err());
    assert!(gradient_check(|x| Ok(x.sum()), &x, 1e-9).is_err());
}

#[test]
fn matmul_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..10 {
        let a = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5, 3]);
        let c = random(&mut rng, &[3, 6]);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn accumulation_is_exact_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let w0 = random(&mut rng, &[4, 4]);
    let xa = random(&mut rng, &[3, 4]);
    let xb = random(&mut rng, &[5, 4]);
    let loss = |w: &Tensor, x: &Tensor| readout(&x.matmul(w).unwrap().matmul(w).unwrap().softmax(1).unwrap(), 111);

    let shared = Tensor::param(&[4, 4], w0.to_vec()).unwrap();
    loss(&shared, &xa).unwrap().backward().unwrap();
    loss(&shared, &xb).unwrap().backward().unwrap();

    let solo_a = Tensor::param(&[4, 4], w0.to_vec()).unwrap();
    loss(&solo_a, &xa).unwrap().backward().unwrap();
    let solo_b = Tensor::param(&[4, 4], w0.to_vec()).unwrap();
    loss(&solo_b, &xb).unwrap().backward().unwrap();

    let expected: Vec<f64> = solo_a
        .grad()
        .unwrap()
        .iter()
        .zip(solo_b.grad().unwrap())
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(shared.grad().unwrap(), expected);
}
