//! Backpropagation against central finite differences.

#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{gradient_error, near_kink, random_case};
use nudgenet_core::resnet::{box_init, gradient, Batch, InitScheme, LossConfig, ResNetArch};
use nudgenet_core::rng;
use rand::Rng;

#[test]
fn backprop_matches_finite_differences_on_random_nets() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 100 {
        seed += 1;
        let (arch, params, inputs, targets, cfg) = random_case(seed);
        if near_kink(&params, &arch, &inputs, 1e-4) {
            continue;
        }
        let batch = Batch::new(&inputs, &targets, &arch).unwrap();
        let err = gradient_error(&arch, &params, &batch, &cfg);
        assert!(
            err <= 1e-6,
            "seed {seed}: relative error {err:e}, arch {:?}",
            arch.widths
        );
        checked += 1;
    }
}

#[test]
fn small_fixed_net_matches_finite_differences() {
    let arch = ResNetArch::new(vec![3, 4, 4, 2], 1.0, 0.1).unwrap();
    let params = box_init(&arch, 3, InitScheme::Box);
    let mut r = rng::stream(5, 1001, 0);
    let inputs: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
    assert!(!near_kink(&params, &arch, &inputs, 1e-4));
    let batch = Batch::new(&inputs, &targets, &arch).unwrap();
    let cfg = LossConfig {
        lambda: 0.0,
        gamma_penalty: 0.0,
        bias_ordering: false,
    };
    assert!(gradient_error(&arch, &params, &batch, &cfg) <= 1e-6);
}

#[test]
fn perfect_fit_has_zero_gradient() {
    let arch = ResNetArch::new(vec![2, 3, 3, 2], 1.0, 0.01).unwrap();
    let params = box_init(&arch, 4, InitScheme::Box);
    let inputs = [0.3, -0.2, 0.5, 0.1];
    let targets = nudgenet_core::resnet::forward_batch(&params, &arch, &inputs).unwrap();
    let batch = Batch::new(&inputs, &targets, &arch).unwrap();
    let cfg = LossConfig {
        lambda: 0.0,
        gamma_penalty: 0.0,
        bias_ordering: false,
    };
    let g = gradient(&params, &arch, &batch, &cfg).unwrap();
    assert!(g.values.iter().all(|v| *v == 0.0));
}
