//! Orthogonal kernel constructions.
//!
//! * BCOP: a 1×1 orthogonal channel map composed with 2×1 and 1×2 kernels
//!   built from symmetric projectors.
//! * SC-Fac: the same factors in a different order.
//! * RKO: an orthogonal matrix reshaped into a kernel; orthogonal as a
//!   convolution when the kernel size equals the stride.
//! * AOC: RKO fused with BCOP, covering stride, groups, dilation and
//!   transposition.
//! * The explicit exponential of a skew kernel.
//!
//! Every random factor is drawn from its own stream of the configured seed,
//! so a configuration always produces the same kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockconv::{block_conv_fast, scan_compose, KernelChain};
use crate::conv::{conv2d_transpose_ref, kernel_transpose};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::orthogonalize::{
    orthogonalize, OrthoSettings, ProjectorPair, Scheme, PROJECTOR_BASIS_TOL,
};
use crate::tensor::{ConvSpec, ImageTensor, KernelTensor};
use crate::verify::{self, DEFAULT_TOLERANCE, DESK_SIZE};

/// Björck iterations used by construction unless configured otherwise.
///
/// Raw factors are Gaussian, and square Gaussian matrices can be
/// ill-conditioned enough that 12 iterations leave a residual above 1e-4;
/// 25 iterations clear every channel width used here.
pub const CONSTRUCT_ITERS: usize = 25;

/// Orthogonalization settings plus the seed every factor is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub settings: OrthoSettings,
    pub seed: u64,
}

impl KernelParams {
    pub fn new(seed: u64) -> Self {
        Self {
            settings: OrthoSettings::default().with_iters(CONSTRUCT_ITERS),
            seed,
        }
    }

    pub fn with_settings(mut self, settings: OrthoSettings) -> Self {
        self.settings = settings;
        self
    }

    fn stream(&self) -> ParamStream {
        ParamStream {
            params: *self,
            next: 0,
        }
    }
}

/// Hands out orthogonal factors drawn from consecutive generator streams.
struct ParamStream {
    params: KernelParams,
    next: u64,
}

impl ParamStream {
    fn raw(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        let m = DenseMatrix::random(rows, cols, self.params.seed, self.next);
        self.next += 1;
        m
    }

    /// Row-orthogonal if wide, column-orthogonal if tall.
    fn orthogonal(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let w = self.raw(rows, cols);
        orthogonalize(&w, &self.params.settings.effective_for(rows, cols))
    }

    fn projector(&mut self, c: usize) -> Result<ProjectorPair> {
        let basis = self.orthogonal(c, c / 2)?;
        // Cholesky bases are only accurate to its looser tolerance.
        let tol = match self.params.settings.scheme {
            Scheme::Cholesky => verify::CHOLESKY_TOLERANCE,
            _ => PROJECTOR_BASIS_TOL,
        };
        crate::orthogonalize::projector_pair_with_tolerance(&basis, tol)
    }
}

/// `[N, I−N]` along the last axis: a 1×2 kernel.
pub fn horizontal_projector_kernel(p: &ProjectorPair) -> KernelTensor {
    let c = p.dim();
    KernelTensor::from_fn([c, c, 1, 2], |m, n, _, j| {
        if j == 0 {
            p.n()[(m, n)]
        } else {
            p.complement()[(m, n)]
        }
    })
}

/// `[N, I−N]` along the penultimate axis: a 2×1 kernel.
pub fn vertical_projector_kernel(p: &ProjectorPair) -> KernelTensor {
    let c = p.dim();
    KernelTensor::from_fn([c, c, 2, 1], |m, n, i, _| {
        if i == 0 {
            p.n()[(m, n)]
        } else {
            p.complement()[(m, n)]
        }
    })
}

/// Factors of a construction together with the number of unconstrained
/// parameters they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub chain: KernelChain,
    pub param_count: usize,
}

fn check_sizes(c_in: usize, c_out: usize, k1: usize, k2: usize) -> Result<()> {
    if c_in == 0 || c_out == 0 || k1 == 0 || k2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "channels and kernel sizes must be positive (c_in={c_in}, c_out={c_out}, k={k1}x{k2})"
        )));
    }
    Ok(())
}

fn require_projector_width(c: usize, what: &str) -> Result<()> {
    if c < 2 {
        return Err(Error::Unsupported(format!(
            "{what} needs a channel width of at least 2 for its projector factors, got {c}"
        )));
    }
    Ok(())
}

/// Interleave `(k1−1)` vertical and `(k2−1)` horizontal projector kernels at
/// width `c`, in application order.
fn projector_factors(
    stream: &mut ParamStream,
    c: usize,
    k1: usize,
    k2: usize,
) -> Result<(Vec<KernelTensor>, usize)> {
    let mut out = Vec::with_capacity(k1 + k2);
    let mut count = 0;
    for i in 0..(k1 - 1).max(k2 - 1) {
        if i < k1 - 1 {
            out.push(vertical_projector_kernel(&stream.projector(c)?));
            count += c * (c / 2);
        }
        if i < k2 - 1 {
            out.push(horizontal_projector_kernel(&stream.projector(c)?));
            count += c * (c / 2);
        }
    }
    Ok((out, count))
}

fn bcop_factors(
    stream: &mut ParamStream,
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
) -> Result<Factorization> {
    check_sizes(c_in, c_out, k1, k2)?;
    let c = c_in.max(c_out);
    if k1 * k2 > 1 {
        require_projector_width(c, "BCOP")?;
    }
    let m = KernelTensor::from_channel_matrix(&stream.orthogonal(c_out, c_in)?);
    let (projectors, count) = projector_factors(stream, c, k1, k2)?;
    let param_count = count + c_out * c_in;
    // The channel map runs first when it widens (or keeps) the channel count
    // and last when it narrows it, so the projectors always act at width c.
    let kernels = if c_out >= c_in {
        std::iter::once(m).chain(projectors).collect()
    } else {
        projectors.into_iter().chain(std::iter::once(m)).collect()
    };
    Ok(Factorization {
        chain: KernelChain::new(kernels)?,
        param_count,
    })
}

fn scfac_factors(
    stream: &mut ParamStream,
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
) -> Result<Factorization> {
    check_sizes(c_in, c_out, k1, k2)?;
    if k1 > 1 {
        require_projector_width(c_in, "SC-Fac")?;
    }
    if k2 > 1 {
        require_projector_width(c_out, "SC-Fac")?;
    }
    let m = KernelTensor::from_channel_matrix(&stream.orthogonal(c_out, c_in)?);
    let mut kernels = Vec::with_capacity(k1 + k2 - 1);
    let mut param_count = c_out * c_in;
    for _ in 1..k1 {
        kernels.push(vertical_projector_kernel(&stream.projector(c_in)?));
        param_count += c_in * (c_in / 2);
    }
    kernels.push(m);
    for _ in 1..k2 {
        kernels.push(horizontal_projector_kernel(&stream.projector(c_out)?));
        param_count += c_out * (c_out / 2);
    }
    Ok(Factorization {
        chain: KernelChain::new(kernels)?,
        param_count,
    })
}

/// BCOP factors in application order: the orthogonal channel map and
/// `(k1−1)` vertical plus `(k2−1)` horizontal projector kernels, all at width
/// `max(c_in, c_out)`.
pub fn bcop_chain(
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
    params: &KernelParams,
) -> Result<Factorization> {
    bcop_factors(&mut params.stream(), c_in, c_out, k1, k2)
}

/// The fused BCOP kernel `(c_out, c_in, k1, k2)`: row orthogonal at unit
/// stride when `c_out ≤ c_in`, column orthogonal otherwise.
pub fn bcop_kernel(
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
    params: &KernelParams,
) -> Result<KernelTensor> {
    scan_compose(&bcop_chain(c_in, c_out, k1, k2, params)?.chain)
}

/// SC-Fac factors in application order: `(k1−1)` vertical projector kernels
/// at width `c_in`, the channel map, then `(k2−1)` horizontal projector
/// kernels at width `c_out`.
pub fn scfac_chain(
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
    params: &KernelParams,
) -> Result<Factorization> {
    scfac_factors(&mut params.stream(), c_in, c_out, k1, k2)
}

pub fn scfac_kernel(
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
    params: &KernelParams,
) -> Result<KernelTensor> {
    scan_compose(&scfac_chain(c_in, c_out, k1, k2, params)?.chain)
}

fn rko_from(
    stream: &mut ParamStream,
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
) -> Result<KernelTensor> {
    check_sizes(c_in, c_out, k1, k2)?;
    let m = stream.orthogonal(c_out, c_in * k1 * k2)?;
    KernelTensor::from_flat_matrix(&m, c_in, k1, k2)
}

/// Orthogonalize the `c_out × (c_in·k1·k2)` flattening and reshape it back.
///
/// Orthogonal as a strided convolution exactly when `k1 = k2 = s`; for other
/// sizes it is only a building block.
pub fn rko_kernel(
    c_in: usize,
    c_out: usize,
    k1: usize,
    k2: usize,
    params: &KernelParams,
) -> Result<KernelTensor> {
    rko_from(&mut params.stream(), c_in, c_out, k1, k2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    #[default]
    Bcop,
    Scfac,
}

/// Which AOC branch produced a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    /// Unit stride: a BCOP kernel.
    Bcop,
    /// Kernel size equal to the stride: an RKO kernel.
    Rko,
    /// Full-size BCOP kernel with the stride applied directly.
    DirectStride,
    /// `RKO(s×s) ⊡ BCOP(k−s+1)`.
    Fused,
}

impl BranchTag {
    pub fn name(self) -> &'static str {
        match self {
            BranchTag::Bcop => "bcop",
            BranchTag::Rko => "rko",
            BranchTag::DirectStride => "direct_stride",
            BranchTag::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AocConfig {
    pub spec: ConvSpec,
    pub settings: OrthoSettings,
    pub seed: u64,
    #[serde(default)]
    pub ordering: Ordering,
    /// Allow the direct-stride branch when it verifies.
    #[serde(default = "default_true")]
    pub direct_stride: bool,
}

fn default_true() -> bool {
    true
}

impl AocConfig {
    pub fn new(spec: ConvSpec, seed: u64) -> Self {
        Self {
            spec,
            settings: KernelParams::new(seed).settings,
            seed,
            ordering: Ordering::Bcop,
            direct_stride: true,
        }
    }

    pub fn with_settings(mut self, settings: OrthoSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_ordering(mut self, ordering: Ordering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn with_direct_stride(mut self, enabled: bool) -> Self {
        self.direct_stride = enabled;
        self
    }

    /// Reject configurations for which no orthogonal kernel can be built.
    pub fn validate(&self) -> Result<()> {
        let spec = &self.spec;
        spec.validate()?;
        self.settings.validate()?;
        let s = spec.stride;
        if s > spec.k_h || s > spec.k_w {
            return Err(Error::Unsupported(format!(
                "no orthogonal kernel exists when the stride ({s}) exceeds the kernel size ({}x{})",
                spec.k_h, spec.k_w
            )));
        }
        if s > 1 && gcd(s, spec.dilation) > 1 {
            return Err(Error::Unsupported(format!(
                "stride {s} and dilation {} share a factor; the strided dilated convolution \
                 then skips input pixels and cannot be orthogonal",
                spec.dilation
            )));
        }
        let (ci, co) = (spec.c_in_per_group(), spec.c_out_per_group());
        let needs_bcop = spec.k_h > s || spec.k_w > s;
        let width = if s == 1 {
            ci.max(co)
        } else {
            internal_width(ci, co, s)
        };
        if needs_bcop && width < 2 {
            return Err(Error::Unsupported(format!(
                "per-group width {ci} -> {co} with kernel {}x{} and stride {s} needs a BCOP factor, \
                 which requires at least 2 channels",
                spec.k_h, spec.k_w
            )));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Internal channel count of the fused branch: `max(c_i, ⌊c_o/s²⌋)`.
pub fn internal_width(c_in: usize, c_out: usize, stride: usize) -> usize {
    c_in.max(c_out / (stride * stride))
}

/// Smallest multiple of `s` that is at least [`DESK_SIZE`].
pub fn desk_size_for(stride: usize) -> usize {
    DESK_SIZE.div_ceil(stride) * stride
}

fn bcop_or_scfac(
    stream: &mut ParamStream,
    ordering: Ordering,
    ci: usize,
    co: usize,
    k1: usize,
    k2: usize,
) -> Result<Factorization> {
    match ordering {
        Ordering::Bcop => bcop_factors(stream, ci, co, k1, k2),
        Ordering::Scfac => scfac_factors(stream, ci, co, k1, k2),
    }
}

/// Per-group factor chain for `branch`, in application order.
fn group_factors(cfg: &AocConfig, branch: BranchTag, seed: u64) -> Result<Vec<KernelTensor>> {
    let spec = &cfg.spec;
    let (ci, co, s) = (spec.c_in_per_group(), spec.c_out_per_group(), spec.stride);
    let (k1, k2) = (spec.k_h, spec.k_w);
    let mut stream = KernelParams {
        settings: cfg.settings,
        seed,
    }
    .stream();
    Ok(match branch {
        BranchTag::Bcop | BranchTag::DirectStride => {
            bcop_or_scfac(&mut stream, cfg.ordering, ci, co, k1, k2)?
                .chain
                .into_kernels()
        }
        BranchTag::Rko => vec![rko_from(&mut stream, ci, co, k1, k2)?],
        BranchTag::Fused => {
            let c = internal_width(ci, co, s);
            let mut ks = bcop_or_scfac(&mut stream, cfg.ordering, ci, c, k1 - s + 1, k2 - s + 1)?
                .chain
                .into_kernels();
            ks.push(rko_from(&mut stream, c, co, s, s)?);
            ks
        }
    })
}

/// The factor chain of an AOC kernel, in application order, with the
/// per-group factors stacked into grouped kernels. Also returns the branch.
pub fn aoc_chain(cfg: &AocConfig) -> Result<(KernelChain, BranchTag)> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let s = spec.stride;
    let initial = if s == 1 {
        BranchTag::Bcop
    } else if spec.k_h == s && spec.k_w == s {
        BranchTag::Rko
    } else if cfg.direct_stride && spec.c_out_per_group() <= spec.c_in_per_group() {
        BranchTag::DirectStride
    } else {
        BranchTag::Fused
    };
    let chain = grouped_chain(cfg, initial)?;
    if initial != BranchTag::DirectStride {
        return Ok((chain, initial));
    }
    // The direct-stride shortcut is kept only if every group verifies.
    let fused = scan_compose(&chain)?;
    let n = desk_size_for(s);
    let ok = (0..spec.groups).into_par_iter().map(|q| {
        let g = fused.group(q);
        let gspec = ConvSpec {
            c_in: spec.c_in_per_group(),
            c_out: spec.c_out_per_group(),
            groups: 1,
            dilation: 1,
            ..*spec
        };
        verify::check_orthogonality(&g, &gspec, n, n, DEFAULT_TOLERANCE).map(|r| r.pass)
    });
    if ok.collect::<Result<Vec<_>>>()?.into_iter().all(|p| p) {
        Ok((chain, BranchTag::DirectStride))
    } else {
        Ok((grouped_chain(cfg, BranchTag::Fused)?, BranchTag::Fused))
    }
}

fn grouped_chain(cfg: &AocConfig, branch: BranchTag) -> Result<KernelChain> {
    let g = cfg.spec.groups;
    let per_group = (0..g as u64)
        .into_par_iter()
        .map(|q| group_factors(cfg, branch, cfg.seed.wrapping_add(q)))
        .collect::<Result<Vec<_>>>()?;
    if g == 1 {
        return KernelChain::new(per_group.into_iter().next().expect("one group"));
    }
    let len = per_group[0].len();
    let stacked = (0..len)
        .map(|i| {
            let parts: Vec<_> = per_group.iter().map(|f| f[i].clone()).collect();
            KernelTensor::stack_groups(&parts)
        })
        .collect::<Result<Vec<_>>>()?;
    KernelChain::new(stacked)
}

/// Build the AOC kernel for `cfg`: shape `(c_out, c_in/g, k_h, k_w)` with
/// `g` groups, orthogonal as the convolution `cfg.spec` describes (row
/// orthogonal when `c_out ≤ c_in·s²`, column orthogonal otherwise).
///
/// Dilation does not change the kernel; it only changes how the spec applies
/// it.
pub fn aoc_kernel(cfg: &AocConfig) -> Result<(KernelTensor, BranchTag)> {
    let (chain, branch) = aoc_chain(cfg)?;
    Ok((scan_compose(&chain)?, branch))
}

/// The kernel and spec of the transposed layer realizing `(Π_s T_K)ᵀ`.
///
/// The kernel keeps its storage (a transposed convolution reads the same
/// `(c_out, c_in/g, k_h, k_w)` weights); the spec describes the layer as
/// seen from its input, with channel counts swapped. Apply it with
/// [`conv_transpose_layer`].
pub fn transpose_kernel_for(k: &KernelTensor, spec: &ConvSpec) -> (KernelTensor, ConvSpec) {
    (k.clone(), spec.swapped())
}

/// Apply a transposed layer returned by [`transpose_kernel_for`].
pub fn conv_transpose_layer(
    k: &KernelTensor,
    layer: &ConvSpec,
    x: &ImageTensor,
) -> Result<ImageTensor> {
    conv2d_transpose_ref(k, x, &layer.swapped())
}

/// `K − Kᵀ` for a square-channel, odd-sized kernel.
///
/// Convolving with the result and then shifting back by half the kernel size
/// is a skew-symmetric operator.
pub fn skew_kernel(k: &KernelTensor) -> Result<KernelTensor> {
    if k.groups() != 1 || k.c_out() != k.c_in() {
        return Err(Error::Shape(format!(
            "skew kernel needs square ungrouped channels, got {:?} with {} groups",
            k.shape(),
            k.groups()
        )));
    }
    if k.k_h() % 2 == 0 || k.k_w() % 2 == 0 {
        return Err(Error::Unsupported(format!(
            "skew kernel needs odd spatial extents, got {}x{}",
            k.k_h(),
            k.k_w()
        )));
    }
    k.add_scaled(&kernel_transpose(k), -1.0)
}

/// [`skew_kernel`] scaled so that its operator norm (the single-factor
/// product bound) is one.
pub fn skew_normalized(k: &KernelTensor) -> Result<KernelTensor> {
    let s = skew_kernel(k)?;
    let norm = verify::product_bound(&KernelChain::single(s.clone()))?;
    if norm == 0.0 {
        return Ok(s);
    }
    Ok(s.scale(1.0 / norm))
}

/// Default number of series terms for [`soc_explicit_kernel`].
pub const SOC_TERMS: usize = 12;

/// Truncated exponential `Σ_{j=0}^{terms} S^{⊡j}/j!` of a square-channel
/// kernel as one kernel of size `terms·(k−1)+1` per axis.
///
/// Each power is placed centered in the output, so the result applied once
/// equals the truncated series of the half-kernel-shifted operator, followed
/// by one fixed shift of `terms·(k−1)/2`. For a skew kernel this is an
/// orthogonal convolution up to the truncation error.
pub fn soc_explicit_kernel(s: &KernelTensor, terms: usize) -> Result<KernelTensor> {
    if s.groups() != 1 || s.c_out() != s.c_in() {
        return Err(Error::Shape(format!(
            "explicit exponential needs square ungrouped channels, got {:?}",
            s.shape()
        )));
    }
    if s.k_h() % 2 == 0 || s.k_w() % 2 == 0 {
        return Err(Error::Unsupported(
            "explicit exponential needs odd spatial extents".into(),
        ));
    }
    if terms == 0 {
        return Err(Error::InvalidConfig(
            "explicit exponential needs at least one term".into(),
        ));
    }
    let (rh, rw) = ((s.k_h() - 1) / 2, (s.k_w() - 1) / 2);
    let (eh, ew) = (2 * terms * rh + 1, 2 * terms * rw + 1);
    let c = s.c_out();
    let mut out = KernelTensor::centered_identity(c, eh, ew);
    let mut term = KernelTensor::identity(c);
    for j in 1..=terms {
        term = block_conv_fast(s, &term)?.scale(1.0 / j as f64);
        let (top, left) = ((terms - j) * rh, (terms - j) * rw);
        out = out.add_scaled(&term.embed(eh, ew, top, left), 1.0)?;
    }
    Ok(out)
}
