//! Block-convolution `B ⊡ A`: the single kernel equivalent to applying `A`
//! and then `B`.
//!
//! ```text
//! (B ⊡ A)[m][n][i][j] = sum_c sum_i' sum_j' B[m][c][i'][j'] * A[c][n][i-i'][j-j']
//! ```
//!
//! with `A` read as zero outside its support. The result has spatial size
//! `(k_A + k_B - 1)` on each axis and satisfies
//! `(B ⊡ A) *_s x = B *_s (A *_1 x)` under circular padding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::KernelTensor;

/// An ordered sequence of kernels, `kernels[0]` applied first.
///
/// Adjacent kernels are channel compatible: the input channel count of
/// `kernels[i + 1]` equals the output channel count of `kernels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelChain {
    kernels: Vec<KernelTensor>,
}

impl KernelChain {
    pub fn new(kernels: Vec<KernelTensor>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Shape("kernel chain must not be empty".into()));
        }
        for (i, pair) in kernels.windows(2).enumerate() {
            check_compat(&pair[1], &pair[0]).map_err(|e| match e {
                Error::Incompatible(msg) => {
                    Error::Incompatible(format!("chain links {i}->{}: {msg}", i + 1))
                }
                other => other,
            })?;
        }
        Ok(Self { kernels })
    }

    pub fn single(k: KernelTensor) -> Self {
        Self { kernels: vec![k] }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[KernelTensor] {
        &self.kernels
    }

    pub fn into_kernels(self) -> Vec<KernelTensor> {
        self.kernels
    }

    /// Append a kernel applied after everything already in the chain.
    pub fn then(mut self, k: KernelTensor) -> Result<Self> {
        check_compat(&k, self.kernels.last().expect("chain is non-empty"))?;
        self.kernels.push(k);
        Ok(self)
    }

    /// Sum of all entries of all factors; the parameter footprint of the
    /// chain before orthogonalization.
    pub fn entry_count(&self) -> usize {
        self.kernels.iter().map(|k| k.as_slice().len()).sum()
    }
}

/// `compat(A, B)`: `B` can consume the output of `A`.
fn check_compat(b: &KernelTensor, a: &KernelTensor) -> Result<()> {
    if b.groups() != a.groups() {
        return Err(Error::Incompatible(format!(
            "group counts differ ({} after {})",
            b.groups(),
            a.groups()
        )));
    }
    if b.c_in() != a.c_out() {
        return Err(Error::Incompatible(format!(
            "second kernel reads {} channels, first produces {}",
            b.c_in(),
            a.c_out()
        )));
    }
    Ok(())
}

fn fused_shape(b: &KernelTensor, a: &KernelTensor) -> [usize; 4] {
    [
        b.c_out(),
        a.c_in_per_group(),
        a.k_h() + b.k_h() - 1,
        a.k_w() + b.k_w() - 1,
    ]
}

/// The literal summation, one output entry at a time. Ungrouped kernels only.
pub fn block_conv_naive(b: &KernelTensor, a: &KernelTensor) -> Result<KernelTensor> {
    if a.groups() != 1 || b.groups() != 1 {
        return Err(Error::Shape(
            "block_conv_naive takes ungrouped kernels".into(),
        ));
    }
    check_compat(b, a)?;
    let shape = fused_shape(b, a);
    let c_int = a.c_out();
    let mut out = KernelTensor::zeros(shape);
    for m in 0..shape[0] {
        for n in 0..shape[1] {
            for i in 0..shape[2] {
                for j in 0..shape[3] {
                    let mut acc = 0.0;
                    for c in 0..c_int {
                        for ti in 0..b.k_h() {
                            for tj in 0..b.k_w() {
                                acc += b[[m, c, ti, tj]]
                                    * a.get_padded(
                                        c,
                                        n,
                                        i as isize - ti as isize,
                                        j as isize - tj as isize,
                                    );
                            }
                        }
                    }
                    out[[m, n, i, j]] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Batched, grouped, zero-padded 2-D cross-correlation
/// (`torch.nn.functional.conv2d` semantics), computed per batch item and
/// group as an im2col matrix product.
///
/// `input` is `[n][c][h][w]`, `weight` is `[o][c/groups][kh][kw]`; the result
/// is `[n][o][h + 2ph - kh + 1][w + 2pw - kw + 1]`.
fn cross_correlate(
    input: &[f64],
    [n, c, h, w]: [usize; 4],
    weight: &[f64],
    [o, cpg, kh, kw]: [usize; 4],
    (ph, pw): (usize, usize),
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    debug_assert_eq!(c, cpg * groups);
    debug_assert_eq!(o % groups, 0);
    let ho = h + 2 * ph + 1 - kh;
    let wo = w + 2 * pw + 1 - kw;
    let opg = o / groups;
    let patch = cpg * kh * kw;
    let plane = ho * wo;
    let mut out = vec![0.0; n * o * plane];
    let mut cols = vec![0.0; patch * plane];

    for b in 0..n {
        for q in 0..groups {
            // im2col: row (cl, t, u), column (p, r).
            for cl in 0..cpg {
                let chan = &input[((b * c) + q * cpg + cl) * h * w..][..h * w];
                for t in 0..kh {
                    for u in 0..kw {
                        let row = &mut cols[((cl * kh + t) * kw + u) * plane..][..plane];
                        for p in 0..ho {
                            let si = p + t;
                            let dst = &mut row[p * wo..(p + 1) * wo];
                            if si < ph || si - ph >= h {
                                dst.fill(0.0);
                                continue;
                            }
                            let src = &chan[(si - ph) * w..(si - ph + 1) * w];
                            for (r, v) in dst.iter_mut().enumerate() {
                                let sj = r + u;
                                *v = if sj < pw || sj - pw >= w {
                                    0.0
                                } else {
                                    src[sj - pw]
                                };
                            }
                        }
                    }
                }
            }
            // out[b][q*opg + a] = W[q*opg + a] . cols
            for a in 0..opg {
                let oc = q * opg + a;
                let wrow = &weight[oc * patch..(oc + 1) * patch];
                let dst = &mut out[(b * o + oc) * plane..][..plane];
                for (kidx, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let src = &cols[kidx * plane..(kidx + 1) * plane];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}

/// `B ⊡ A` as one grouped cross-correlation.
///
/// `A`'s first two axes are swapped so its input channels become the batch
/// axis, `B` is flipped spatially and used as the weight, the correlation runs
/// with full zero padding `(k_B - 1)` on each side, and the first two axes of
/// the result are swapped back. Both kernels must carry the same group count;
/// the result is the grouped kernel of the composed grouped convolutions.
pub fn block_conv_fast(b: &KernelTensor, a: &KernelTensor) -> Result<KernelTensor> {
    check_compat(b, a)?;
    let g = a.groups();
    let [c_int, ci_g, ah, aw] = a.shape();
    let [c_o, _, bh, bw] = b.shape();

    // A: [c_int][ci_g][ah][aw] -> input batch [ci_g][c_int][ah][aw]
    let mut input = vec![0.0; c_int * ci_g * ah * aw];
    let sp = ah * aw;
    for m in 0..c_int {
        for n in 0..ci_g {
            let src = &a.as_slice()[(m * ci_g + n) * sp..][..sp];
            input[(n * c_int + m) * sp..][..sp].copy_from_slice(src);
        }
    }
    // B flipped on both spatial axes.
    let bsp = bh * bw;
    let mut weight = b.as_slice().to_vec();
    for blk in weight.chunks_mut(bsp) {
        blk.reverse();
    }

    let (r, [n, o, ho, wo]) = cross_correlate(
        &input,
        [ci_g, c_int, ah, aw],
        &weight,
        b.shape(),
        (bh - 1, bw - 1),
        g,
    );
    debug_assert_eq!((n, o), (ci_g, c_o));

    // [ci_g][c_o][ho][wo] -> [c_o][ci_g][ho][wo]
    let osp = ho * wo;
    let mut data = vec![0.0; c_o * ci_g * osp];
    for nb in 0..ci_g {
        for m in 0..c_o {
            data[(m * ci_g + nb) * osp..][..osp].copy_from_slice(&r[(nb * c_o + m) * osp..][..osp]);
        }
    }
    KernelTensor::new([c_o, ci_g, ho, wo], g, data)
}

/// Elementwise `bs[i] ⊡ as_[i]` in a single grouped call: the pairs are
/// concatenated into `g`-group kernels and split again afterwards.
pub fn block_conv_batched(bs: &[KernelTensor], as_: &[KernelTensor]) -> Result<Vec<KernelTensor>> {
    if bs.is_empty() || as_.is_empty() {
        return Err(Error::Shape(
            "block_conv_batched needs at least one pair".into(),
        ));
    }
    if bs.len() != as_.len() {
        return Err(Error::Shape(format!(
            "{} left kernels against {} right kernels",
            bs.len(),
            as_.len()
        )));
    }
    let b_stack = KernelTensor::stack_groups(bs)?;
    let a_stack = KernelTensor::stack_groups(as_)?;
    let fused = block_conv_fast(&b_stack, &a_stack)?;
    Ok((0..fused.groups()).map(|q| fused.group(q)).collect())
}

/// Sequential left fold `chain[n-1] ⊡ ... ⊡ chain[0]`.
pub fn compose_sequential(chain: &KernelChain) -> Result<KernelTensor> {
    let mut iter = chain.kernels().iter();
    let mut acc = iter.next().expect("chain is non-empty").clone();
    for k in iter {
        acc = block_conv_fast(k, &acc)?;
    }
    Ok(acc)
}

/// Tree reduction of a kernel chain.
///
/// Each round fuses adjacent pairs `(chain[2i+1] ⊡ chain[2i])`; an odd last
/// element is carried to the next round unchanged. When every pair of a round
/// shares one shape the round is a single [`block_conv_batched`] call,
/// otherwise pairs are fused independently (in parallel). The result equals
/// the sequential fold by associativity and takes `ceil(log2 n)` rounds.
pub fn scan_compose(chain: &KernelChain) -> Result<KernelTensor> {
    scan_compose_counted(chain).map(|(k, _)| k)
}

/// [`scan_compose`] also returning the number of rounds used.
pub fn scan_compose_counted(chain: &KernelChain) -> Result<(KernelTensor, usize)> {
    let mut level: Vec<KernelTensor> = chain.kernels().to_vec();
    let mut rounds = 0;
    while level.len() > 1 {
        let carry = if level.len() % 2 == 1 {
            level.pop()
        } else {
            None
        };
        let (firsts, seconds): (Vec<_>, Vec<_>) = level
            .chunks_exact(2)
            .map(|p| (p[0].clone(), p[1].clone()))
            .unzip();
        let uniform = firsts.len() > 1
            && firsts
                .iter()
                .all(|k| k.groups() == 1 && k.shape() == firsts[0].shape())
            && seconds
                .iter()
                .all(|k| k.groups() == 1 && k.shape() == seconds[0].shape());
        let mut next = if uniform {
            block_conv_batched(&seconds, &firsts)?
        } else {
            firsts
                .par_iter()
                .zip(seconds.par_iter())
                .map(|(a, b)| block_conv_fast(b, a))
                .collect::<Result<Vec<_>>>()?
        };
        next.extend(carry);
        level = next;
        rounds += 1;
    }
    Ok((level.pop().expect("chain is non-empty"), rounds))
}
