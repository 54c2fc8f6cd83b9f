use lakecache::nn::{Adam, Network, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(sizes: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            input: (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
            // Wide targets exercise both Huber regimes.
            target: rng.random_range(-3.0..3.0),
            action: rng.random_range(0..*sizes.last().unwrap()),
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients.
fn worst_gradient_error(sizes: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let net = Network::new(sizes, seed).unwrap();
    let batch = random_batch(sizes, 8, &mut rng);
    let (_, analytic) = net.loss_and_gradient(&batch).unwrap();
    let params = net.parameters();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_parameters(&p).unwrap();
        let (up, _) = probe.loss_and_gradient(&batch).unwrap();
        p[i] = params[i] - h;
        probe.set_parameters(&p).unwrap();
        let (down, _) = probe.loss_and_gradient(&batch).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for sizes in [vec![3, 4, 2], vec![6, 8, 8, 2], vec![2, 5, 3, 4, 2]] {
        for seed in 0..5 {
            let err = worst_gradient_error(&sizes, seed);
            assert!(err < 1e-4, "sizes {sizes:?} seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn fits_a_parabola() {
    let batch: Vec<Sample> = (0..64)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / 63.0;
            Sample { input: vec![x], target: x * x, action: 0 }
        })
        .collect();
    let mut net = Network::new(&[1, 16, 16, 2], 5).unwrap();
    let mut adam = Adam::new(&net, 1e-3);
    let (initial, _) = net.loss_and_gradient(&batch).unwrap();
    for _ in 0..2000 {
        net.train_batch(&mut adam, &batch).unwrap();
    }
    let (fin, _) = net.loss_and_gradient(&batch).unwrap();
    assert!(fin * 10.0 <= initial, "loss {initial} -> {fin}");
}
