//! Reference (direct summation) convolution operators.
//!
//! Index convention, shared by every module: output tap `(i, j)` of channel
//! `m` reads input position `(i*s - i'*d, j*s - j'*d)` for kernel tap
//! `(i', j')`, wrapped modulo the image size under circular padding and read
//! as zero outside the image under zero padding:
//!
//! ```text
//! y[m][i][j] = sum_c sum_i' sum_j' K[m][c][i'][j'] * x[c][i*s - i'*d][j*s - j'*d]
//! ```
//!
//! This is a true convolution anchored at tap zero, so composing two
//! convolutions is exactly the block-convolution of their kernels, for any
//! kernel size (odd or even).

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, ImageTensor, KernelTensor, Padding};

fn check_stride_divides(spec: &ConvSpec, h: usize, w: usize) -> Result<()> {
    if h % spec.stride != 0 || w % spec.stride != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible by stride {}",
            spec.stride
        )));
    }
    Ok(())
}

/// Source index along one axis, or `None` when it falls in zero padding.
#[inline]
fn source(out: usize, tap: usize, s: usize, d: usize, n: usize, padding: Padding) -> Option<usize> {
    let p = (out * s) as isize - (tap * d) as isize;
    match padding {
        Padding::Circular => Some(p.rem_euclid(n as isize) as usize),
        Padding::Zero => (p >= 0 && (p as usize) < n).then_some(p as usize),
    }
}

/// Strided, grouped, dilated 2-D convolution `y = K *_s x`.
///
/// Input `[c_in][h][w]`, output `[c_out][h/s][w/s]`.
pub fn conv2d_ref(k: &KernelTensor, x: &ImageTensor, spec: &ConvSpec) -> Result<ImageTensor> {
    spec.check_kernel(k)?;
    let [c, h, w] = x.shape();
    if c != spec.c_in {
        return Err(Error::Shape(format!(
            "input has {c} channels, spec expects {}",
            spec.c_in
        )));
    }
    check_stride_divides(spec, h, w)?;
    let (s, d) = (spec.stride, spec.dilation);
    let (ho, wo) = (h / s, w / s);
    let cin_g = spec.c_in_per_group();
    let cout_g = spec.c_out_per_group();
    let mut y = ImageTensor::zeros([spec.c_out, ho, wo]);
    for m in 0..spec.c_out {
        let base = (m / cout_g) * cin_g;
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for cl in 0..cin_g {
                    for ti in 0..spec.k_h {
                        let Some(si) = source(i, ti, s, d, h, spec.padding) else {
                            continue;
                        };
                        for tj in 0..spec.k_w {
                            let Some(sj) = source(j, tj, s, d, w, spec.padding) else {
                                continue;
                            };
                            acc += k[[m, cl, ti, tj]] * x[[base + cl, si, sj]];
                        }
                    }
                }
                y[[m, i, j]] = acc;
            }
        }
    }
    Ok(y)
}

/// Transposed convolution: applies `(Π_s T_K)ᵀ`, the exact adjoint of
/// [`conv2d_ref`] with the same kernel and spec.
///
/// Input `[c_out][h/s][w/s]`, output `[c_in][h][w]`.
pub fn conv2d_transpose_ref(
    k: &KernelTensor,
    x: &ImageTensor,
    spec: &ConvSpec,
) -> Result<ImageTensor> {
    spec.check_kernel(k)?;
    let [c, hs, ws] = x.shape();
    if c != spec.c_out {
        return Err(Error::Shape(format!(
            "transposed input has {c} channels, spec expects c_out = {}",
            spec.c_out
        )));
    }
    let (s, d) = (spec.stride, spec.dilation);
    let (h, w) = (hs * s, ws * s);
    let cin_g = spec.c_in_per_group();
    let cout_g = spec.c_out_per_group();
    let mut y = ImageTensor::zeros([spec.c_in, h, w]);
    for m in 0..spec.c_out {
        let base = (m / cout_g) * cin_g;
        for i in 0..hs {
            for j in 0..ws {
                let v = x[[m, i, j]];
                if v == 0.0 {
                    continue;
                }
                for cl in 0..cin_g {
                    for ti in 0..spec.k_h {
                        let Some(si) = source(i, ti, s, d, h, spec.padding) else {
                            continue;
                        };
                        for tj in 0..spec.k_w {
                            let Some(sj) = source(j, tj, s, d, w, spec.padding) else {
                                continue;
                            };
                            y[[base + cl, si, sj]] += k[[m, cl, ti, tj]] * v;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Swap the channel axes and reverse both spatial axes:
/// `Kᵀ[n][m][i][j] = K[m][n][k_h-1-i][k_w-1-j]`.
///
/// Grouped kernels are transposed group by group. Under the anchor-at-zero
/// convention `T(Kᵀ)` equals `T(K)ᵀ` followed by a circular shift of
/// `((k_h-1)*d, (k_w-1)*d)`, so `conv2d_ref(Kᵀ, x)` is the transposed
/// convolution rolled by that amount.
pub fn kernel_transpose(k: &KernelTensor) -> KernelTensor {
    let g = k.groups();
    if g > 1 {
        let parts: Vec<_> = (0..g).map(|q| kernel_transpose(&k.group(q))).collect();
        return KernelTensor::stack_groups(&parts).expect("per-group transposes share a shape");
    }
    let [co, ci, kh, kw] = k.shape();
    KernelTensor::from_fn([ci, co, kh, kw], |n, m, i, j| {
        k[[m, n, kh - 1 - i, kw - 1 - j]]
    })
}
