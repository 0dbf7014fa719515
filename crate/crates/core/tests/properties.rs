use proptest::prelude::*;

use nudgenet_core::assimilate::{AssimilationRun, Method};
use nudgenet_core::dynamics::{lorenz96_rhs, Lorenz96Params, StateVector, Trajectory};
use nudgenet_core::evaluate::{fit_decay, rmse, ComponentReduction, RmseOptions};
use nudgenet_core::nudging::ObservationOperator;
use nudgenet_core::resnet::{
    activation, activation_deriv, bias_order_violation, ResNetArch, ResNetParams,
};

fn rotate(v: &[f64], k: usize) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| v[(i + n - k) % n]).collect()
}

proptest! {
    #[test]
    fn lorenz96_commutes_with_rotation(
        state in prop::collection::vec(-20.0f64..20.0, 4..48),
        shift in 0usize..48,
        forcing in -10.0f64..20.0,
    ) {
        let d = state.len();
        let k = shift % d;
        let p = Lorenz96Params { forcing, dim: d };
        let f = lorenz96_rhs(&StateVector::from_slice(&state).unwrap(), &p).unwrap();
        let g = lorenz96_rhs(&StateVector::from_slice(&rotate(&state, k)).unwrap(), &p).unwrap();
        // Each component is computed by the same expression on the same
        // operands, so the match is exact.
        prop_assert_eq!(g.as_slice(), &rotate(f.as_slice(), k)[..]);
    }

    #[test]
    fn observation_projection_is_idempotent(
        state in prop::collection::vec(-50.0f64..50.0, 6),
        mask in prop::collection::vec(any::<bool>(), 6),
    ) {
        let mut idx: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i + 1).collect();
        if idx.is_empty() {
            idx.push(3);
        }
        let op = ObservationOperator::new(idx.clone(), 6).unwrap();
        let once = op.embed(&op.apply(&state).unwrap()).unwrap();
        let twice = op.embed(&op.apply(once.as_slice()).unwrap()).unwrap();
        prop_assert_eq!(once.as_slice(), twice.as_slice());
        for (i, v) in once.as_slice().iter().enumerate() {
            let expected = if idx.contains(&(i + 1)) { state[i] } else { 0.0 };
            prop_assert_eq!(*v, expected);
        }
    }

    #[test]
    fn activation_stays_within_quarter_eps_of_relu(x in -10.0f64..10.0, eps in 1e-4f64..1.0) {
        let d = activation(x, eps) - x.max(0.0);
        prop_assert!(d >= 0.0 && d <= eps / 4.0 + 1e-15, "x {x} eps {eps} gap {d}");
        let s = activation_deriv(x, eps);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn activation_derivative_matches_secant(x in -2.0f64..2.0, eps in 1e-2f64..1.0) {
        let h = 1e-6;
        let fd = (activation(x + h, eps) - activation(x - h, eps)) / (2.0 * h);
        prop_assert!((fd - activation_deriv(x, eps)).abs() < 1e-5);
    }

    #[test]
    fn rmse_ignores_run_order(
        errors in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 2..6),
        seed in any::<u64>(),
    ) {
        let n = errors.len();
        let times = [0.0, 0.5, 1.0];
        let mk = |e: &[f64], base: f64| {
            let mut r = Trajectory::new(2);
            let mut u = Trajectory::new(2);
            for (k, t) in times.iter().enumerate() {
                u.push(*t, &[base + k as f64, -base]).unwrap();
                r.push(*t, &[base + k as f64 + e[2 * k], -base + e[2 * k + 1]]).unwrap();
            }
            (AssimilationRun { method: Method::Nudging, provenance: String::new(), states: r }, u)
        };
        let pairs: Vec<_> = errors.iter().enumerate().map(|(i, e)| mk(e, i as f64)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((seed % n as u64) as usize);
        order.swap(0, n - 1);
        for reduction in [ComponentReduction::Mean, ComponentReduction::Sum] {
            let opts = RmseOptions { k0_time: 0.5, horizon: 1.0, reduction, components: None };
            let runs: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
            let refs: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
            let a = rmse(&runs, &refs, &opts).unwrap().rmse;
            let runs: Vec<_> = order.iter().map(|&i| pairs[i].0.clone()).collect();
            let refs: Vec<_> = order.iter().map(|&i| pairs[i].1.clone()).collect();
            let b = rmse(&runs, &refs, &opts).unwrap().rmse;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn penalty_is_zero_exactly_when_biases_ascend(
        values in prop::collection::vec(-5.0f64..5.0, 256),
        sort in any::<bool>(),
    ) {
        let arch = ResNetArch::uniform(2, 5, 3, 2).unwrap();
        let mut params = ResNetParams::from_values(&arch, values[..arch.param_count()].to_vec()).unwrap();
        if sort {
            for l in (0..arch.layers()).filter(|&l| arch.has_bias(l)) {
                params.bias_mut(&arch, l).sort_by(f64::total_cmp);
            }
        }
        let ordered = (0..arch.layers())
            .filter(|&l| arch.has_bias(l))
            .all(|l| params.bias(&arch, l).windows(2).all(|w| w[0] <= w[1]));
        let p = bias_order_violation(&params, &arch);
        prop_assert!(p >= 0.0);
        prop_assert_eq!(p == 0.0, ordered);
    }
}

#[test]
fn decay_fit_recovers_known_rates() {
    for c in [0.1, 1.0, 10.0] {
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let energy: Vec<f64> = times.iter().map(|t| 42.0 * (-c * t).exp()).collect();
        let fit = fit_decay(&times, &energy, (0.0, 2.0)).unwrap();
        assert!(
            (fit.fitted_rate - c).abs() <= 1e-8,
            "c {c}: fitted {}",
            fit.fitted_rate
        );
        assert!(fit.r_squared > 1.0 - 1e-12);
    }
}
