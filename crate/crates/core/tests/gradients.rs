use deeppolar::nn::{bce_with_logits, AdamState, DenseNet, Mat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

fn close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-7 || diff <= 1e-4 * a.abs().max(b.abs())
}

/// Scalar objective `sum(out * weights)` so the output gradient is `weights`.
fn objective(net: &DenseNet, x: &Mat, w: &Mat) -> f64 {
    let y = net.forward(x).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Central differences flip rectifier states when a pre-activation sits
/// within a step of zero; such points are skipped.
fn near_kink(net: &DenseNet, x: &Mat) -> bool {
    let mut h = x.clone();
    for l in 0..net.num_layers() - 1 {
        let (w, b) = net.layer(l);
        let (fi, fo) = (net.widths()[l], net.widths()[l + 1]);
        let mut next = Mat::zeros(h.rows(), fo);
        for r in 0..h.rows() {
            for o in 0..fo {
                let z: f64 = b[o] + (0..fi).map(|i| w[o * fi + i] * h.get(r, i)).sum::<f64>();
                if z.abs() < 1e-3 {
                    return true;
                }
                next.set(r, o, z.max(0.0));
            }
        }
        h = next;
    }
    false
}

fn check_net(seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths: Vec<usize> = (0..4).map(|_| rng.random_range(1..=32)).collect();
    let mut net = DenseNet::init(&widths, &mut rng).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let x = Mat::from_vec(
        4,
        widths[0],
        (0..4 * widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let w = Mat::from_vec(
        4,
        widths[3],
        (0..4 * widths[3]).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    if near_kink(&net, &x) {
        return 0;
    }
    let (_, tape) = net.forward_taped(&x).unwrap();
    let g = net.backward(tape, &w, true).unwrap();

    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += STEP;
        let mut minus = net.clone();
        minus.params_mut()[i] -= STEP;
        let fd = (objective(&plus, &x, &w) - objective(&minus, &x, &w)) / (2.0 * STEP);
        assert!(close(g.params[i], fd), "seed {seed} param {i}: {} vs {fd}", g.params[i]);
    }
    let gi = g.input.unwrap();
    for i in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let fd = (objective(&net, &xp, &w) - objective(&net, &xm, &w)) / (2.0 * STEP);
        assert!(
            close(gi.data()[i], fd),
            "seed {seed} input {i}: {} vs {fd}",
            gi.data()[i]
        );
    }
    1
}

#[test]
fn finite_differences_on_random_nets() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 100 {
        checked += check_net(seed);
        seed += 1;
    }
    assert!(seed < 400, "too many nets skipped near rectifier kinks");
}

#[test]
fn finite_differences_8_16_16_4() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let net = DenseNet::init(&[8, 16, 16, 4], &mut rng).unwrap();
    let x = Mat::from_vec(3, 8, (0..24).map(|i| ((i * 7) as f64 * 0.13).sin()).collect()).unwrap();
    let w = Mat::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.71).cos()).collect()).unwrap();
    assert!(!near_kink(&net, &x));
    let (_, tape) = net.forward_taped(&x).unwrap();
    let g = net.backward(tape, &w, false).unwrap();
    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += STEP;
        let mut minus = net.clone();
        minus.params_mut()[i] -= STEP;
        let fd = (objective(&plus, &x, &w) - objective(&minus, &x, &w)) / (2.0 * STEP);
        assert!(close(g.params[i], fd));
    }
}

#[test]
fn backward_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::init(&[5, 12, 12, 3], &mut rng).unwrap();
    let x = Mat::from_vec(4, 5, (0..20).map(|i| (i as f64).sin()).collect()).unwrap();
    let w = Mat::filled(4, 3, 0.5);
    let run = || {
        let (y, tape) = net.forward_taped(&x).unwrap();
        let g = net.backward(tape, &w, true).unwrap();
        (y, g.params, g.input.unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_single_step_closed_form() {
    let mut p = vec![1.0];
    let mut st = AdamState::new(1, 1e-4);
    st.step(&mut p, &[0.1]).unwrap();
    // m_hat = 0.1, v_hat = 0.01, step = lr * 0.1 / (0.1 + 1e-8)
    let want = 1.0 - 1e-4 * 0.1 / (0.1 + 1e-8);
    assert!((p[0] - want).abs() < 1e-15);
}

#[test]
fn adam_disjoint_blocks_are_independent() {
    let grads_a = [0.3, -0.2];
    let grads_b = [1.0, 0.5, -0.7];
    let mut joint = vec![0.0; 5];
    let mut sj = AdamState::new(5, 1e-3);
    let mut a = vec![0.0; 2];
    let mut sa = AdamState::new(2, 1e-3);
    let mut b = vec![0.0; 3];
    let mut sb = AdamState::new(3, 1e-3);
    for _ in 0..3 {
        sj.step(&mut joint, &[grads_a.as_slice(), &grads_b].concat()).unwrap();
        sb.step(&mut b, &grads_b).unwrap();
        sa.step(&mut a, &grads_a).unwrap();
    }
    assert_eq!(&joint[..2], &a[..]);
    assert_eq!(&joint[2..], &b[..]);
}

proptest! {
    #[test]
    fn bce_is_convex_along_segments(
        a in proptest::collection::vec(-30.0f64..30.0, 4),
        b in proptest::collection::vec(-30.0f64..30.0, 4),
        t in proptest::collection::vec(0u8..2, 4),
    ) {
        let la = Mat::from_vec(1, 4, a.clone()).unwrap();
        let lb = Mat::from_vec(1, 4, b.clone()).unwrap();
        let mid = Mat::from_vec(1, 4, a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()).unwrap();
        let fa = bce_with_logits(&la, &t).unwrap().0;
        let fb = bce_with_logits(&lb, &t).unwrap().0;
        let fm = bce_with_logits(&mid, &t).unwrap().0;
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-9);
    }

    #[test]
    fn ste_forward_is_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
        let m = Mat::from_vec(1, v.len(), v).unwrap();
        let once = deeppolar::nn::ste_sign(&m);
        prop_assert!(once.data().iter().all(|&x| x == 1.0 || x == -1.0));
        prop_assert_eq!(deeppolar::nn::ste_sign(&once), once);
    }
}
