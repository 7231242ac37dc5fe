//! Orthogonality verification.
//!
//! The operator `Π_s T_K` is materialized column by column from impulse
//! responses of [`conv2d_ref`], and its exact singular values decide whether
//! the convolution is orthogonal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockconv::KernelChain;
use crate::conv::{conv2d_ref, conv2d_transpose_ref};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::tensor::{ConvSpec, ImageTensor, KernelTensor};

/// Largest dense operator (rows × cols entries) we agree to build.
pub const TOEPLITZ_BUDGET: usize = 1 << 24;

/// Spectrum tolerance used when none is given.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relaxed tolerance for stacks built with the Cholesky scheme.
pub const CHOLESKY_TOLERANCE: f64 = 5e-2;

/// Desk-scale image side.
pub const DESK_SIZE: usize = 8;

fn check_budget(rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= TOEPLITZ_BUDGET => Ok(()),
        _ => Err(Error::Budget {
            rows,
            cols,
            budget: TOEPLITZ_BUDGET,
        }),
    }
}

fn check_image(spec: &ConvSpec, h: usize, w: usize) -> Result<()> {
    spec.validate()?;
    if h == 0 || w == 0 || h % spec.stride != 0 || w % spec.stride != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} must be non-empty and divisible by stride {}",
            spec.stride
        )));
    }
    Ok(())
}

/// Assemble a matrix from its columns.
fn from_columns(rows: usize, columns: Vec<Vec<f64>>) -> DenseMatrix {
    let cols = columns.len();
    DenseMatrix::from_fn(rows, cols, |r, c| columns[c][r])
}

/// Dense matrix of `x ↦ conv2d_ref(K, x)` on `c_in × h × w` inputs.
///
/// Column `(c, i, j)` is the flattened response to the unit impulse at
/// channel `c`, pixel `(i, j)`; the result is `(c_out·h·w/s²) × (c_in·h·w)`.
pub fn toeplitz_from_kernel(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
) -> Result<DenseMatrix> {
    spec.check_kernel(k)?;
    check_image(spec, h, w)?;
    let s = spec.stride;
    let rows = spec.c_out * (h / s) * (w / s);
    let cols = spec.c_in * h * w;
    check_budget(rows, cols)?;
    let columns = (0..cols)
        .into_par_iter()
        .map(|col| {
            let (c, rest) = (col / (h * w), col % (h * w));
            let e = ImageTensor::impulse([spec.c_in, h, w], c, rest / w, rest % w);
            conv2d_ref(k, &e, spec).map(ImageTensor::into_vec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(from_columns(rows, columns))
}

/// Dense matrix of `x ↦ conv2d_transpose_ref(K, x)`, built from its own
/// impulse responses; `(c_in·h·w) × (c_out·h·w/s²)`.
pub fn toeplitz_of_transpose(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
) -> Result<DenseMatrix> {
    spec.check_kernel(k)?;
    check_image(spec, h, w)?;
    let s = spec.stride;
    let (hs, ws) = (h / s, w / s);
    let rows = spec.c_in * h * w;
    let cols = spec.c_out * hs * ws;
    check_budget(rows, cols)?;
    let columns = (0..cols)
        .into_par_iter()
        .map(|col| {
            let (c, rest) = (col / (hs * ws), col % (hs * ws));
            let e = ImageTensor::impulse([spec.c_out, hs, ws], c, rest / ws, rest % ws);
            conv2d_transpose_ref(k, &e, spec).map(ImageTensor::into_vec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(from_columns(rows, columns))
}

/// Full singular spectrum, descending (nalgebra's bidiagonal SVD).
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.to_nalgebra().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// One-sided (Hestenes) Jacobi singular values, descending.
///
/// Rotates pairs of columns of the taller orientation until every pair is
/// orthogonal to working precision; the column norms are then the singular
/// values. Independent of [`singular_values`] and used to cross-check it.
pub fn jacobi_singular_values(m: &DenseMatrix) -> Vec<f64> {
    let a = if m.rows() >= m.cols() {
        m.clone()
    } else {
        m.transpose()
    };
    let (rows, n) = (a.rows(), a.cols());
    if rows == 0 || n == 0 {
        return Vec::new();
    }
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Largest absolute disagreement between the two spectrum routines.
pub fn spectrum_cross_check(m: &DenseMatrix) -> f64 {
    singular_values(m)
        .iter()
        .zip(jacobi_singular_values(m))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Outcome of an orthogonality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Max-abs entry of `OOᵀ − I` (or `OᵀO − I`) on the smaller Gram side.
    pub residual_inf: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub pass: bool,
    pub tolerance: f64,
}

impl SpectrumReport {
    /// Report for an already materialized operator.
    pub fn from_matrix(m: &DenseMatrix, tolerance: f64) -> Self {
        let sv = singular_values(m);
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let sigma_min = sv.last().copied().unwrap_or(0.0);
        Self {
            sigma_max,
            sigma_min,
            residual_inf: m.orthogonality_residual(),
            n_rows: m.rows(),
            n_cols: m.cols(),
            pass: (sigma_max - 1.0).abs().max((sigma_min - 1.0).abs()) <= tolerance,
            tolerance,
        }
    }

    /// `WWᵀ = I` is the claim being checked.
    pub fn is_row_orthogonal(&self) -> bool {
        self.n_rows <= self.n_cols
    }
}

/// Spectrum of `Π_s T_K` on `h × w` circular inputs against `tolerance`.
pub fn check_orthogonality(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
    tolerance: f64,
) -> Result<SpectrumReport> {
    spec.require_circular()?;
    let t = toeplitz_from_kernel(k, spec, h, w)?;
    Ok(SpectrumReport::from_matrix(&t, tolerance))
}

/// As [`check_orthogonality`], for the transposed convolution operator.
pub fn check_transposed_orthogonality(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
    tolerance: f64,
) -> Result<SpectrumReport> {
    spec.require_circular()?;
    let t = toeplitz_of_transpose(k, spec, h, w)?;
    Ok(SpectrumReport::from_matrix(&t, tolerance))
}

/// Which composition a roundtrip applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `conv(convT(x)) = x`, the identity of a row-orthogonal kernel.
    ConvAfterTranspose,
    /// `convT(conv(x)) = x`, the identity of a column-orthogonal kernel.
    TransposeAfterConv,
}

impl Direction {
    /// The identity `Π_s T_K` is expected to satisfy given its shape.
    pub fn natural(spec: &ConvSpec) -> Self {
        if spec.c_out <= spec.c_in * spec.stride * spec.stride {
            Direction::ConvAfterTranspose
        } else {
            Direction::TransposeAfterConv
        }
    }
}

const ROUNDTRIP_SEED: u64 = 0x0b5e_55ed;

/// Worst `‖roundtrip(x) − x‖∞` over `n_trials` seeded random inputs, in the
/// direction that fits the kernel's shape.
pub fn roundtrip_check(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
    n_trials: usize,
) -> Result<f64> {
    roundtrip_check_direction(k, spec, h, w, n_trials, Direction::natural(spec))
}

/// [`roundtrip_check`] with an explicit direction.
pub fn roundtrip_check_direction(
    k: &KernelTensor,
    spec: &ConvSpec,
    h: usize,
    w: usize,
    n_trials: usize,
    direction: Direction,
) -> Result<f64> {
    spec.check_kernel(k)?;
    spec.require_circular()?;
    check_image(spec, h, w)?;
    let s = spec.stride;
    let mut worst: f64 = 0.0;
    for t in 0..n_trials as u64 {
        let err = match direction {
            Direction::ConvAfterTranspose => {
                let x = ImageTensor::random([spec.c_out, h / s, w / s], ROUNDTRIP_SEED + t);
                let y = conv2d_ref(k, &conv2d_transpose_ref(k, &x, spec)?, spec)?;
                y.max_abs_diff(&x)
            }
            Direction::TransposeAfterConv => {
                let x = ImageTensor::random([spec.c_in, h, w], ROUNDTRIP_SEED + t);
                let y = conv2d_transpose_ref(k, &conv2d_ref(k, &x, spec)?, spec)?;
                y.max_abs_diff(&x)
            }
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Power-iteration estimate of `‖Π_s T_K‖₂` on `h × w` inputs, using the
/// convolution and its adjoint directly.
///
/// Starts from a seeded random image: a constant start would only ever see
/// the zero-frequency component of a circular convolution.
pub fn operator_norm(k: &KernelTensor, spec: &ConvSpec, h: usize, w: usize) -> Result<f64> {
    spec.check_kernel(k)?;
    check_image(spec, h, w)?;
    let mut x = ImageTensor::random([spec.c_in, h, w], ROUNDTRIP_SEED);
    let norm = |v: &ImageTensor| v.dot(v).sqrt();
    let n0 = norm(&x);
    x = x.scale(1.0 / n0);
    let mut sigma = 0.0;
    for _ in 0..500 {
        let y = conv2d_transpose_ref(k, &conv2d_ref(k, &x, spec)?, spec)?;
        let lambda = norm(&y);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let s = lambda.sqrt();
        x = y.scale(1.0 / lambda);
        let done = (s - sigma).abs() <= 1e-12 * s;
        sigma = s;
        if done {
            break;
        }
    }
    Ok(sigma)
}

/// Product of per-factor spectral norms: an upper bound on the spectral norm
/// of the fused kernel that costs one small power iteration per factor.
///
/// Each factor is measured as a unit-stride convolution on
/// [`DESK_SIZE`]`×`[`DESK_SIZE`] inputs. The bound is tight for chains of
/// orthogonal factors and loose otherwise.
pub fn product_bound(factors: &KernelChain) -> Result<f64> {
    factors
        .kernels()
        .iter()
        .map(|f| operator_norm(f, &ConvSpec::for_kernel(f), DESK_SIZE, DESK_SIZE))
        .try_fold(1.0, |acc, s| s.map(|s| acc * s))
}

/// Certified L2 radius of a prediction made by a 1-Lipschitz network: the
/// logit margin over the best other class, divided by `√2`. Negative when
/// `label` is not the top class.
pub fn robustness_certificate(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::Shape(format!(
            "a certificate needs at least two logits, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Shape(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((logits[label] - runner_up) / std::f64::consts::SQRT_2)
}
