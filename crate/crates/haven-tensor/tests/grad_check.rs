//! Central finite-difference oracle for every differentiable op.
//!
//! The oracle only ever evaluates forward passes: for a scalar-valued
//! builder `f` over leaf parameters, the directional derivative at one
//! coordinate is estimated as `(f(x+h) - f(x-h)) / (2h)` and compared
//! against the analytic gradient produced by `backward()`.

use haven_tensor::{no_grad, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// Relative error with a floor so that near-zero gradients compare
/// absolutely; finite differences lose all significance there.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Checks every coordinate of every parameter against the FD oracle and
/// returns how many coordinates were checked.
fn fd_check(params: &[Tensor], build: &dyn Fn(&[Tensor]) -> Tensor) -> usize {
    for p in params {
        p.zero_grad();
    }
    let loss = build(params);
    loss.backward();
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut checked = 0;
    for (pi, p) in params.iter().enumerate() {
        let base = p.to_vec();
        for ci in 0..base.len() {
            let mut bumped = base.clone();
            bumped[ci] = base[ci] + H;
            p.set_values(&bumped);
            let plus = no_grad(|| build(params)).item();
            bumped[ci] = base[ci] - H;
            p.set_values(&bumped);
            let minus = no_grad(|| build(params)).item();
            p.set_values(&base);

            let fd = (plus - minus) / (2.0 * H);
            let analytic = grads[pi][ci];
            assert!(
                rel_err(analytic, fd) < REL_TOL,
                "param {pi} coord {ci}: analytic {analytic} vs fd {fd}"
            );
            checked += 1;
        }
    }
    checked
}

fn rand_vec(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Same, but nudged away from the relu/abs kink at zero where the
/// subgradient convention and the FD estimate legitimately disagree.
fn rand_vec_off_kink(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    rand_vec(rng, n)
        .into_iter()
        .map(|x| if x.abs() < 5e-2 { x + 0.1 } else { x })
        .collect()
}

#[test]
fn fd_matmul_2d_and_batched() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let a = Tensor::param(rand_vec(&mut rng, 12), &[3, 4]);
    let b = Tensor::param(rand_vec(&mut rng, 8), &[4, 2]);
    let c = Tensor::from_vec(rand_vec(&mut rng, 6), &[3, 2]);
    fd_check(&[a, b], &move |p| p[0].matmul(&p[1]).mul(&c).sum_all());

    let a3 = Tensor::param(rand_vec(&mut rng, 2 * 2 * 3), &[2, 2, 3]);
    let b3 = Tensor::param(rand_vec(&mut rng, 2 * 3 * 2), &[2, 3, 2]);
    let c3 = Tensor::from_vec(rand_vec(&mut rng, 8), &[2, 2, 2]);
    fd_check(&[a3, b3], &move |p| p[0].matmul(&p[1]).mul(&c3).sum_all());
}

#[test]
fn fd_add_sub_mul_with_broadcast() {
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let a = Tensor::param(rand_vec(&mut rng, 12), &[4, 3]);
    let b = Tensor::param(rand_vec(&mut rng, 12), &[4, 3]);
    let c = Tensor::param(rand_vec(&mut rng, 3), &[3]);
    let w = Tensor::from_vec(rand_vec(&mut rng, 12), &[4, 3]);
    fd_check(&[a.clone(), b.clone(), c.clone()], &move |p| {
        let same = p[0].mul(&p[1]).add(&p[1]).sub(&p[0]);
        let bcast = same.add(&p[2]).sub(&p[2].scale(0.5)).mul(&p[2]);
        bcast.mul(&w).sum_all()
    });
}

#[test]
fn fd_activations() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let w = Tensor::from_vec(rand_vec(&mut rng, 10), &[10]);

    let smooth = Tensor::param(rand_vec(&mut rng, 10), &[10]);
    let wc = w.clone();
    fd_check(&[smooth], &move |p| {
        p[0].tanh().add(&p[0].sigmoid()).add(&p[0].elu()).mul(&wc).sum_all()
    });

    let kinked = Tensor::param(rand_vec_off_kink(&mut rng, 10), &[10]);
    fd_check(&[kinked], &move |p| {
        p[0].relu().add(&p[0].abs()).mul(&w).sum_all()
    });
}

#[test]
fn fd_reductions_and_reshape() {
    let mut rng = ChaCha12Rng::seed_from_u64(14);
    let a = Tensor::param(rand_vec(&mut rng, 24), &[2, 3, 4]);
    let w0 = Tensor::from_vec(rand_vec(&mut rng, 8), &[2, 4]);
    let w1 = Tensor::from_vec(rand_vec(&mut rng, 6), &[2, 3]);
    fd_check(&[a], &move |p| {
        let s = p[0].sum_axis(1).mul(&w0).sum_all();
        let m = p[0].mean_axis(2).mul(&w1).sum_all();
        let f = p[0].reshape(&[6, 4]).mean_all();
        s.add(&m).add(&f).add(&p[0].sum_all().scale(0.25))
    });
}

#[test]
fn fd_concat_gather_slice() {
    let mut rng = ChaCha12Rng::seed_from_u64(15);
    let a = Tensor::param(rand_vec(&mut rng, 8), &[4, 2]);
    let b = Tensor::param(rand_vec(&mut rng, 12), &[4, 3]);
    let idx = vec![3usize, 0, 2, 4];
    let w = Tensor::from_vec(rand_vec(&mut rng, 8), &[4, 2]);
    fd_check(&[a, b], &move |p| {
        let cat = Tensor::concat(&[p[0].clone(), p[1].clone()]);
        let picked = cat.gather_last(&idx);
        let sliced = cat.slice_last(1, 2).mul(&w).sum_all();
        picked.sum_all().add(&sliced)
    });
}

#[test]
fn fd_squared_error_and_mse() {
    let mut rng = ChaCha12Rng::seed_from_u64(16);
    let a = Tensor::param(rand_vec(&mut rng, 9), &[3, 3]);
    let t = Tensor::from_vec(rand_vec(&mut rng, 9), &[3, 3]);
    fd_check(&[a], &move |p| {
        p[0].squared_error(&t).sum_all().scale(0.1).add(&p[0].mse(&t))
    });
}

/// The spec-level oracle case: a random two-layer network, at least 100
/// parameter coordinates checked against central differences.
#[test]
fn fd_random_two_layer_net() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let x = Tensor::from_vec(rand_vec(&mut rng, 4 * 6), &[4, 6]);
    let target = Tensor::from_vec(rand_vec(&mut rng, 4 * 3), &[4, 3]);
    let w1 = Tensor::param(rand_vec(&mut rng, 6 * 10), &[6, 10]);
    let b1 = Tensor::param(rand_vec(&mut rng, 10), &[10]);
    let w2 = Tensor::param(rand_vec(&mut rng, 10 * 3), &[10, 3]);
    let b2 = Tensor::param(rand_vec(&mut rng, 3), &[3]);

    let checked = fd_check(&[w1, b1, w2, b2], &move |p| {
        let h = x.matmul(&p[0]).add(&p[1]).tanh();
        let y = h.matmul(&p[2]).add(&p[3]);
        y.mse(&target)
    });
    assert!(checked >= 100, "only {checked} coordinates checked");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whole-op-set gradient property on random inputs in [-2, 2].
    #[test]
    fn prop_fd_whole_op_set(seed in 0u64..1_000_000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = Tensor::param(rand_vec_off_kink(&mut rng, 12), &[3, 4]);
        let b = Tensor::param(rand_vec(&mut rng, 8), &[4, 2]);
        let bias = Tensor::param(rand_vec(&mut rng, 2), &[2]);
        let idx: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let w = Tensor::from_vec(rand_vec(&mut rng, 6), &[3, 2]);
        let t = Tensor::from_vec(rand_vec(&mut rng, 3), &[3, 1]);

        fd_check(&[a, b, bias], &move |p| {
            let lin = p[0].matmul(&p[1]).add(&p[2]);
            let act = lin.tanh().add(&lin.sigmoid()).add(&lin.elu())
                .add(&p[0].relu().sum_axis(0).reshape(&[1, 4]).matmul(&p[1]).reshape(&[2]))
                .add(&p[0].abs().mean_axis(0).reshape(&[1, 4]).matmul(&p[1]).reshape(&[2]));
            let mixed = act.mul(&w);
            let picked = Tensor::concat(&[mixed.clone(), lin]).gather_last(&idx);
            picked.mse(&t).add(&mixed.slice_last(0, 1).mean_all())
        });
    }
}

/// Forward determinism across two separate processes: the same seeded
/// construction must produce bit-identical values.
#[test]
fn forward_bitwise_deterministic_across_processes() {
    fn forward_fingerprint() -> u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let x = Tensor::from_vec(rand_vec(&mut rng, 5 * 7), &[5, 7]);
        let w1 = Tensor::param(rand_vec(&mut rng, 7 * 9), &[7, 9]);
        let w2 = Tensor::param(rand_vec(&mut rng, 9 * 4), &[9, 4]);
        let y = x.matmul(&w1).tanh().matmul(&w2).sigmoid();
        let mut set = ParamSet::new();
        set.register("y", Tensor::param(y.to_vec(), y.shape()));
        // FNV-1a over the exact serialized bits
        let mut h: u64 = 0xcbf29ce484222325;
        for b in set.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    if std::env::var("HAVEN_FINGERPRINT_CHILD").is_ok() {
        println!("FINGERPRINT:{:016x}", forward_fingerprint());
        return;
    }

    let exe = std::env::current_exe().unwrap();
    let run = || {
        let out = std::process::Command::new(&exe)
            .args([
                "forward_bitwise_deterministic_across_processes",
                "--exact",
                "--nocapture",
            ])
            .env("HAVEN_FINGERPRINT_CHILD", "1")
            .output()
            .expect("spawn child test process");
        assert!(out.status.success());
        let stdout = String::from_utf8_lossy(&out.stdout).to_string();
        stdout
            .lines()
            .find_map(|l| l.split("FINGERPRINT:").nth(1))
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|| panic!("child output missing fingerprint: {stdout}"))
    };
    // the in-process fingerprint doubles as the reference value
    let here = format!("{:016x}", forward_fingerprint());
    let a = run();
    let b = run();
    assert_eq!(a, b, "child processes disagreed");
    assert_eq!(a, here, "child fingerprint differs from in-process value");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Checkpoint round-trips are exact for any f64 bit pattern.
    #[test]
    fn prop_checkpoint_roundtrip_exact(bits in proptest::collection::vec(any::<u64>(), 1..16)) {
        let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
        let n = values.len();
        let mut set = ParamSet::new();
        set.register("t", Tensor::param(values.clone(), &[n]));
        let text = set.to_text();

        let mut other = ParamSet::new();
        let loaded = Tensor::param(vec![0.0; n], &[n]);
        other.register("t", loaded.clone());
        other.load_text(&text).unwrap();
        let got = loaded.to_vec();
        for (v, g) in values.iter().zip(&got) {
            prop_assert_eq!(v.to_bits(), g.to_bits());
        }
    }
}
