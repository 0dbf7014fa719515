//! Parameter initialisation.
//!
//! Box initialisation places every hidden neuron's switching hyperplane
//! through a random point of the box its inputs are expected to occupy, with
//! a random unit normal, and scales the neuron so that its activation spans
//! at most one unit over that box. The first layer assumes standardised
//! inputs in `[−1, 1]^n`. Residual layers see the stream of the previous
//! layer, assumed to lie in `[0, m_ℓ]^n` with `m_1 = 1` and growing by `τ/R`
//! per residual layer, where `R` is the number of residual layers; their
//! activations are scaled by `1/R` so the stream stays within `[0, 1 + τ]`.
//! The output layer uses Glorot-uniform weights.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ResNetArch, ResNetParams};
use crate::rng;

/// Recorded in model metadata alongside box-initialised parameters.
pub const BOX_INIT_NOTE: &str = "box initialisation (unit normal, point in box, unit activation \
                                 range); first layer box [-1,1], residual layers [0, 1 + tau*(l-1)/R] \
                                 scaled by 1/R; Glorot-uniform output layer";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitScheme {
    #[default]
    Box,
    /// `U(±√(6/n_in))` weights and zero biases.
    HeUniform,
}

fn unit_normal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Weights and bias of one neuron whose activation is zero on one side of a
/// hyperplane through a random point of `[lo, hi]^n` and reaches `scale` at
/// the far corner.
fn box_neuron<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, scale: f64) -> (Vec<f64>, f64) {
    let normal = unit_normal(rng, n);
    let point: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    // largest value of normal·(x − point) over the box
    let reach: f64 = normal
        .iter()
        .zip(&point)
        .map(|(&v, &p)| (v * (lo - p)).max(v * (hi - p)))
        .sum();
    let k = scale / reach.max(1e-12);
    let w: Vec<f64> = normal.iter().map(|v| k * v).collect();
    let b = -k * normal.iter().zip(&point).map(|(v, p)| v * p).sum::<f64>();
    (w, b)
}

/// Deterministic initialisation for `arch` from `seed`; layer `ℓ` draws from
/// its own random stream.
pub fn box_init(arch: &ResNetArch, seed: u64, scheme: InitScheme) -> ResNetParams {
    let mut params = ResNetParams::zeros(arch);
    let layers = arch.layers();
    let residual = (layers - 2).max(1) as f64;
    for l in 0..layers {
        let mut rng = rng::stream(seed, rng::domain::INIT, l as u64);
        let (ni, no) = (arch.widths[l], arch.widths[l + 1]);
        let last = !arch.has_bias(l);
        if last || scheme == InitScheme::HeUniform {
            let bound = if last {
                libm::sqrt(6.0 / (ni + no) as f64)
            } else {
                libm::sqrt(6.0 / ni as f64)
            };
            for w in params.weight_mut(arch, l) {
                *w = rng.random_range(-bound..bound);
            }
            continue;
        }
        let (lo, hi, scale) = if l == 0 {
            (-1.0, 1.0, 1.0)
        } else {
            (
                0.0,
                1.0 + arch.tau * (l - 1) as f64 / residual,
                1.0 / residual,
            )
        };
        let mut weights = Vec::with_capacity(ni * no);
        let mut biases = Vec::with_capacity(no);
        for _ in 0..no {
            let (w, b) = box_neuron(&mut rng, ni, lo, hi, scale);
            weights.extend(w);
            biases.push(b);
        }
        params.weight_mut(arch, l).copy_from_slice(&weights);
        params.bias_mut(arch, l).copy_from_slice(&biases);
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::activation;

    #[test]
    fn deterministic_per_seed() {
        let arch = ResNetArch::uniform(4, 50, 3, 3).unwrap();
        let a = box_init(&arch, 9, InitScheme::Box);
        let b = box_init(&arch, 9, InitScheme::Box);
        let c = box_init(&arch, 10, InitScheme::Box);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
    }

    #[test]
    fn first_layer_neurons_are_alive_on_normal_inputs() {
        let arch = ResNetArch::uniform(4, 50, 3, 3).unwrap();
        let p = box_init(&arch, 1, InitScheme::Box);
        let mut rng = rng::stream(77, 99, 0);
        let w = p.weight(&arch, 0);
        let b = p.bias(&arch, 0);
        let mut alive = [false; 50];
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            for j in 0..50 {
                let z: f64 = (0..4).map(|i| w[j * 4 + i] * x[i]).sum::<f64>() + b[j];
                if activation(z, arch.eps) > 0.0 {
                    alive[j] = true;
                }
            }
        }
        let dead = alive.iter().filter(|a| !**a).count();
        assert!(dead <= 5, "{dead} dead neurons");
    }
}
