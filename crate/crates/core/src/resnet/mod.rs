//! Residual network `y_1 = σ(W_0 y_0 + b_0)`, `y_{ℓ+1} = y_ℓ + τσ(W_ℓ y_ℓ + b_ℓ)`,
//! `y_L = W_{L−1} y_{L−1}` with a C¹ smoothed ReLU, its regularised loss
//! with the bias-ordering penalty, and exact reverse-mode gradients.

mod init;

pub use init::{box_init, InitScheme, BOX_INIT_NOTE};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::par::map_indexed;

/// Smoothed ReLU: `max{0,x}` outside `[−ε, ε]`, `x²/(4ε) + x/2 + ε/4` inside.
#[inline]
pub fn activation(x: f64, eps: f64) -> f64 {
    if x > eps {
        x
    } else if x < -eps {
        0.0
    } else {
        x * x / (4.0 * eps) + 0.5 * x + 0.25 * eps
    }
}

/// Derivative of [`activation`].
#[inline]
pub fn activation_deriv(x: f64, eps: f64) -> f64 {
    if x > eps {
        1.0
    } else if x < -eps {
        0.0
    } else {
        x / (2.0 * eps) + 0.5
    }
}

/// Layer widths `n_0..n_L`, residual step `tau` and activation half-width `eps`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResNetArch {
    pub widths: Vec<usize>,
    pub tau: f64,
    pub eps: f64,
}

impl ResNetArch {
    pub fn new(widths: Vec<usize>, tau: f64, eps: f64) -> Result<Self> {
        let arch = ResNetArch { widths, tau, eps };
        arch.validate()?;
        Ok(arch)
    }

    /// `hidden` residual-stream layers of equal `width` between `input` and `output`.
    pub fn uniform(input: usize, width: usize, hidden: usize, output: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(core::iter::repeat_n(width, hidden));
        widths.push(output);
        Self::new(widths, 1.0, 0.01)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 {
            return Err(Error::invalid("a network needs at least two layers"));
        }
        if w.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(self.tau > 0.0) || !(self.eps > 0.0) {
            return Err(Error::invalid("tau and eps must be positive"));
        }
        for l in 1..self.layers() - 1 {
            if w[l] != w[l + 1] {
                return Err(Error::invalid(format!(
                    "residual layer {l} must be square, got {} -> {}",
                    w[l],
                    w[l + 1]
                )));
            }
        }
        Ok(())
    }

    /// Number of weight matrices `L`.
    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// Whether layer `l` carries a bias (every layer but the last).
    pub fn has_bias(&self, l: usize) -> bool {
        l + 1 < self.layers()
    }

    fn layer_start(&self, l: usize) -> usize {
        (0..l).map(|j| self.layer_size(j)).sum()
    }

    fn layer_size(&self, l: usize) -> usize {
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        i * o + if self.has_bias(l) { o } else { 0 }
    }

    /// Range of `W_l` (row-major, `n_{l+1} × n_l`) in the flat parameter vector.
    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let s = self.layer_start(l);
        s..s + self.widths[l] * self.widths[l + 1]
    }

    /// Range of `b_l`; empty for the output layer.
    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let e = self.weight_range(l).end;
        if self.has_bias(l) {
            e..e + self.widths[l + 1]
        } else {
            e..e
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers()).map(|l| self.layer_size(l)).sum()
    }
}

/// Flat parameter vector; layer `l` stores `W_l` then `b_l`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ResNetParams {
    pub values: Vec<f64>,
}

impl ResNetParams {
    pub fn zeros(arch: &ResNetArch) -> Self {
        ResNetParams {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_values(arch: &ResNetArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::dim(
                "parameter vector",
                arch.param_count(),
                values.len(),
            ));
        }
        Ok(ResNetParams { values })
    }

    pub fn weight<'a>(&'a self, arch: &ResNetArch, l: usize) -> &'a [f64] {
        &self.values[arch.weight_range(l)]
    }

    pub fn weight_mut<'a>(&'a mut self, arch: &ResNetArch, l: usize) -> &'a mut [f64] {
        &mut self.values[arch.weight_range(l)]
    }

    pub fn bias<'a>(&'a self, arch: &ResNetArch, l: usize) -> &'a [f64] {
        &self.values[arch.bias_range(l)]
    }

    pub fn bias_mut<'a>(&'a mut self, arch: &ResNetArch, l: usize) -> &'a mut [f64] {
        &mut self.values[arch.bias_range(l)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check(&self, arch: &ResNetArch) -> Result<()> {
        if self.values.len() != arch.param_count() {
            return Err(Error::dim(
                "parameter vector",
                arch.param_count(),
                self.values.len(),
            ));
        }
        Ok(())
    }
}

/// Regularisation weight and bias-ordering penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma_penalty: f64,
    pub bias_ordering: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e-6,
            gamma_penalty: 1e2,
            bias_ordering: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.gamma_penalty >= 0.0) {
            return Err(Error::invalid(
                "lambda and gamma_penalty must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Inputs and targets, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub targets: &'a [f64],
    pub len: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], targets: &'a [f64], arch: &ResNetArch) -> Result<Self> {
        let (ni, no) = (arch.input_width(), arch.output_width());
        if !inputs.len().is_multiple_of(ni) {
            return Err(Error::dim("batch inputs", ni, inputs.len() % ni));
        }
        let len = inputs.len() / ni;
        if targets.len() != len * no {
            return Err(Error::dim("batch targets", len * no, targets.len()));
        }
        if len == 0 {
            return Err(Error::invalid("batch is empty"));
        }
        Ok(Batch {
            inputs,
            targets,
            len,
        })
    }
}

/// Rows per chunk when a batch is split for evaluation. Fixed so that
/// partial sums, and therefore results, do not depend on the thread count.
pub const CHUNK_ROWS: usize = 512;

/// `C = A·B + beta·C` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the bounds; every caller
    // passes dense buffers whose lengths match the dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Activations of one chunk, kept for the backward pass.
struct Tape {
    /// `y_0..y_L`, each `rows × n_l`.
    ys: Vec<Vec<f64>>,
    /// Pre-activations `z_0..z_{L−2}`.
    zs: Vec<Vec<f64>>,
}

fn forward_tape(arch: &ResNetArch, params: &ResNetParams, x: &[f64], rows: usize) -> Tape {
    let l_count = arch.layers();
    let mut ys = Vec::with_capacity(l_count + 1);
    let mut zs = Vec::with_capacity(l_count - 1);
    ys.push(x.to_vec());
    for l in 0..l_count {
        let (ni, no) = (arch.widths[l], arch.widths[l + 1]);
        let w = params.weight(arch, l);
        let mut z = vec![0.0; rows * no];
        gemm(
            rows,
            ni,
            no,
            &ys[l],
            (ni, 1),
            w,
            (1, ni),
            0.0,
            &mut z,
            (no, 1),
        );
        if !arch.has_bias(l) {
            ys.push(z);
            break;
        }
        let b = params.bias(arch, l);
        for row in z.chunks_exact_mut(no) {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        let y = if l == 0 {
            z.iter().map(|&v| activation(v, arch.eps)).collect()
        } else {
            ys[l]
                .iter()
                .zip(&z)
                .map(|(&prev, &v)| prev + arch.tau * activation(v, arch.eps))
                .collect()
        };
        zs.push(z);
        ys.push(y);
    }
    Tape { ys, zs }
}

/// Network outputs for `rows` inputs (row-major); chunks are evaluated in
/// parallel when the `parallel` feature is on.
pub fn forward_batch(params: &ResNetParams, arch: &ResNetArch, inputs: &[f64]) -> Result<Vec<f64>> {
    arch.validate()?;
    params.check(arch)?;
    let ni = arch.input_width();
    if !inputs.len().is_multiple_of(ni) {
        return Err(Error::dim("network input", ni, inputs.len() % ni));
    }
    let rows = inputs.len() / ni;
    let chunks = rows.div_ceil(CHUNK_ROWS);
    let parts = map_indexed(chunks, |c| {
        let r0 = c * CHUNK_ROWS;
        let r1 = (r0 + CHUNK_ROWS).min(rows);
        let mut tape = forward_tape(arch, params, &inputs[r0 * ni..r1 * ni], r1 - r0);
        tape.ys.pop().unwrap_or_default()
    });
    Ok(parts.concat())
}

/// Network output for a single input vector.
pub fn forward(params: &ResNetParams, arch: &ResNetArch, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != arch.input_width() {
        return Err(Error::dim("network input", arch.input_width(), input.len()));
    }
    forward_batch(params, arch, input)
}

/// `(λ/2) Σ (‖·‖₁ + ‖·‖₂²)` over all existing weights and biases.
pub fn regularization(params: &ResNetParams, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let s: f64 = params.values.iter().map(|v| v.abs() + v * v).sum();
    0.5 * lambda * s
}

/// `Σ_ℓ Σ_j min{b_ℓ^{j+1} − b_ℓ^j, 0}²` over every biased layer.
pub fn bias_order_violation(params: &ResNetParams, arch: &ResNetArch) -> f64 {
    (0..arch.layers())
        .filter(|&l| arch.has_bias(l))
        .map(|l| {
            params
                .bias(arch, l)
                .windows(2)
                .map(|w| {
                    let m = (w[1] - w[0]).min(0.0);
                    m * m
                })
                .sum::<f64>()
        })
        .sum()
}

/// Squared-error sum `Σ ‖y_L − target‖²` and optionally its gradient over one
/// chunk, accumulated into `grad`.
fn chunk_data_term(
    arch: &ResNetArch,
    params: &ResNetParams,
    x: &[f64],
    t: &[f64],
    rows: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let tape = forward_tape(arch, params, x, rows);
    let out = &tape.ys[arch.layers()];
    let mut dy: Vec<f64> = out.iter().zip(t).map(|(o, t)| o - t).collect();
    let sse: f64 = dy.iter().map(|d| d * d).sum();
    let Some(grad) = grad else {
        return sse;
    };
    // d(½Σ‖r‖²)/dy_L = r; scaling to the batch mean happens in the caller.
    for l in (0..arch.layers()).rev() {
        let (ni, no) = (arch.widths[l], arch.widths[l + 1]);
        let y_in = &tape.ys[l];
        let w = params.weight(arch, l);
        let dz: Vec<f64> = if !arch.has_bias(l) {
            core::mem::take(&mut dy)
        } else {
            let z = &tape.zs[l];
            let scale = if l == 0 { 1.0 } else { arch.tau };
            dy.iter()
                .zip(z)
                .map(|(&d, &z)| scale * d * activation_deriv(z, arch.eps))
                .collect()
        };
        let wr = arch.weight_range(l);
        gemm(
            no,
            rows,
            ni,
            &dz,
            (1, no),
            y_in,
            (ni, 1),
            1.0,
            &mut grad[wr],
            (ni, 1),
        );
        if arch.has_bias(l) {
            let br = arch.bias_range(l);
            let gb = &mut grad[br];
            for row in dz.chunks_exact(no) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        if l == 0 {
            break;
        }
        // residual layers pass the incoming gradient straight through
        let mut dprev = if l == arch.layers() - 1 {
            vec![0.0; rows * ni]
        } else {
            dy
        };
        gemm(
            rows,
            no,
            ni,
            &dz,
            (no, 1),
            w,
            (ni, 1),
            1.0,
            &mut dprev,
            (ni, 1),
        );
        dy = dprev;
    }
    sse
}

fn data_term(
    arch: &ResNetArch,
    params: &ResNetParams,
    batch: &Batch<'_>,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let (ni, no) = (arch.input_width(), arch.output_width());
    let chunks = batch.len.div_ceil(CHUNK_ROWS);
    let parts = map_indexed(chunks, |c| {
        let r0 = c * CHUNK_ROWS;
        let r1 = (r0 + CHUNK_ROWS).min(batch.len);
        let x = &batch.inputs[r0 * ni..r1 * ni];
        let t = &batch.targets[r0 * no..r1 * no];
        if want_grad {
            let mut g = vec![0.0; arch.param_count()];
            let s = chunk_data_term(arch, params, x, t, r1 - r0, Some(&mut g));
            (s, Some(g))
        } else {
            (chunk_data_term(arch, params, x, t, r1 - r0, None), None)
        }
    });
    let scale = 0.5 / batch.len as f64;
    let mut sse = 0.0;
    let mut grad: Option<Vec<f64>> = None;
    // fixed chunk order keeps the reduction deterministic
    for (s, g) in parts {
        sse += s;
        if let Some(g) = g {
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            }
        }
    }
    if let Some(g) = grad.as_mut() {
        let gs = 2.0 * scale;
        g.iter_mut().for_each(|v| *v *= gs);
    }
    (scale * sse, grad)
}

fn check_inputs(params: &ResNetParams, arch: &ResNetArch, cfg: &LossConfig) -> Result<()> {
    arch.validate()?;
    cfg.validate()?;
    params.check(arch)
}

/// Mean-squared data term `(1/2N) Σ ‖y_L − target‖²` alone.
pub fn data_loss(params: &ResNetParams, arch: &ResNetArch, batch: &Batch<'_>) -> Result<f64> {
    arch.validate()?;
    params.check(arch)?;
    Ok(data_term(arch, params, batch, false).0)
}

/// Full objective: data term, L1+L2 regularisation and, when enabled, the
/// one-sided bias-ordering penalty `(γ/2) Σ min{b^{j+1} − b^j, 0}²`.
pub fn loss(
    params: &ResNetParams,
    arch: &ResNetArch,
    batch: &Batch<'_>,
    cfg: &LossConfig,
) -> Result<f64> {
    check_inputs(params, arch, cfg)?;
    let (d, _) = data_term(arch, params, batch, false);
    let mut total = d + regularization(params, cfg.lambda);
    if cfg.bias_ordering {
        total += 0.5 * cfg.gamma_penalty * bias_order_violation(params, arch);
    }
    Ok(total)
}

/// Objective value and gradient. The L1 term uses the subgradient `sign(v)`
/// with value 0 at 0.
pub fn loss_and_gradient(
    params: &ResNetParams,
    arch: &ResNetArch,
    batch: &Batch<'_>,
    cfg: &LossConfig,
) -> Result<(f64, ResNetParams)> {
    check_inputs(params, arch, cfg)?;
    let (d, g) = data_term(arch, params, batch, true);
    let mut g = g.unwrap_or_else(|| vec![0.0; arch.param_count()]);
    let mut total = d;
    if cfg.lambda > 0.0 {
        total += regularization(params, cfg.lambda);
        let half = 0.5 * cfg.lambda;
        for (gi, &v) in g.iter_mut().zip(&params.values) {
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gi += half * sign + cfg.lambda * v;
        }
    }
    if cfg.bias_ordering && cfg.gamma_penalty > 0.0 {
        total += 0.5 * cfg.gamma_penalty * bias_order_violation(params, arch);
        for l in (0..arch.layers()).filter(|&l| arch.has_bias(l)) {
            let r = arch.bias_range(l);
            let b = &params.values[r.clone()];
            let gb = &mut g[r];
            for j in 0..b.len().saturating_sub(1) {
                let m = (b[j + 1] - b[j]).min(0.0);
                gb[j + 1] += cfg.gamma_penalty * m;
                gb[j] -= cfg.gamma_penalty * m;
            }
        }
    }
    Ok((total, ResNetParams { values: g }))
}

/// Gradient of [`loss`].
pub fn gradient(
    params: &ResNetParams,
    arch: &ResNetArch,
    batch: &Batch<'_>,
    cfg: &LossConfig,
) -> Result<ResNetParams> {
    loss_and_gradient(params, arch, batch, cfg).map(|(_, g)| g)
}
