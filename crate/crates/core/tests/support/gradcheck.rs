//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance target.

use nudgenet_core::resnet::{
    box_init, gradient, loss, Batch, InitScheme, LossConfig, ResNetArch, ResNetParams,
};
use nudgenet_core::rng;
use rand::Rng;

pub const STEP: f64 = 1e-6;

/// Whether any pre-activation of the batch lies within `margin` of a kink of
/// the smoothed ReLU (at ±eps), where finite differences are unreliable.
pub fn near_kink(params: &ResNetParams, arch: &ResNetArch, inputs: &[f64], margin: f64) -> bool {
    let n0 = arch.input_width();
    for x in inputs.chunks_exact(n0) {
        let mut y = x.to_vec();
        for l in 0..arch.layers() - 1 {
            let (ni, no) = (arch.widths[l], arch.widths[l + 1]);
            let w = params.weight(arch, l);
            let b = params.bias(arch, l);
            let z: Vec<f64> = (0..no)
                .map(|j| (0..ni).map(|i| w[j * ni + i] * y[i]).sum::<f64>() + b[j])
                .collect();
            if z.iter().any(|&v| (v.abs() - arch.eps).abs() < margin) {
                return true;
            }
            let act = |v: f64| nudgenet_core::resnet::activation(v, arch.eps);
            y = if l == 0 {
                z.iter().map(|&v| act(v)).collect()
            } else {
                y.iter()
                    .zip(&z)
                    .map(|(p, &v)| p + arch.tau * act(v))
                    .collect()
            };
        }
    }
    false
}

pub fn random_case(seed: u64) -> (ResNetArch, ResNetParams, Vec<f64>, Vec<f64>, LossConfig) {
    let mut r = rng::stream(seed, 1000, 0);
    let input = r.random_range(1..5);
    let width = r.random_range(1..6);
    let hidden = r.random_range(1..4);
    let output = r.random_range(1..4);
    let mut arch = ResNetArch::uniform(input, width, hidden, output).unwrap();
    arch.tau = r.random_range(0.2..1.5);
    arch.eps = r.random_range(0.05..0.5);
    let mut params = box_init(&arch, seed, InitScheme::Box);
    for v in params.values.iter_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let n = r.random_range(1..8);
    let inputs: Vec<f64> = (0..n * input).map(|_| r.random_range(-1.5..1.5)).collect();
    let targets: Vec<f64> = (0..n * output).map(|_| r.random_range(-1.0..1.0)).collect();
    let cfg = LossConfig {
        lambda: r.random_range(0.0..0.1),
        gamma_penalty: r.random_range(0.0..3.0),
        bias_ordering: r.random_bool(0.7),
    };
    (arch, params, inputs, targets, cfg)
}

/// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` for the analytic gradient against central
/// differences, skipping coordinates within `2·STEP` of an L1 kink.
pub fn gradient_error(
    arch: &ResNetArch,
    params: &ResNetParams,
    batch: &Batch<'_>,
    cfg: &LossConfig,
) -> f64 {
    let g = gradient(params, arch, batch, cfg).unwrap();
    let (mut diff, mut norm_g, mut norm_fd) = (0.0, 0.0, 0.0);
    for i in 0..params.values.len() {
        if cfg.lambda > 0.0 && params.values[i].abs() < 2.0 * STEP {
            continue;
        }
        let mut p = params.clone();
        p.values[i] += STEP;
        let up = loss(&p, arch, batch, cfg).unwrap();
        p.values[i] -= 2.0 * STEP;
        let down = loss(&p, arch, batch, cfg).unwrap();
        let fd = (up - down) / (2.0 * STEP);
        diff += (fd - g.values[i]) * (fd - g.values[i]);
        norm_g += g.values[i] * g.values[i];
        norm_fd += fd * fd;
    }
    let scale: f64 = f64::max(norm_g, norm_fd).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
