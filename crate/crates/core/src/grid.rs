//! The verification grid: AOC configurations grouped by category, each
//! checked by the exact spectrum of its strided (or transposed) operator.

use rayon::prelude::*;
use serde::Serialize;

use crate::construct::{aoc_kernel, desk_size_for, AocConfig, BranchTag};
use crate::error::Result;
use crate::orthogonalize::{OrthoSettings, Scheme};
use crate::tensor::ConvSpec;
use crate::verify::{self, SpectrumReport, CHOLESKY_TOLERANCE, DEFAULT_TOLERANCE, DESK_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CommonCnn,
    ExtendedStrided,
    EvenKernel,
    DepthwiseKernelStride,
    KernelEqualsStride,
    Transposed,
    Grouped,
    Dilated,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::CommonCnn,
        Category::ExtendedStrided,
        Category::EvenKernel,
        Category::DepthwiseKernelStride,
        Category::KernelEqualsStride,
        Category::Transposed,
        Category::Grouped,
        Category::Dilated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::CommonCnn => "common_cnn",
            Category::ExtendedStrided => "extended_strided",
            Category::EvenKernel => "even_kernel",
            Category::DepthwiseKernelStride => "depthwise_k_eq_s",
            Category::KernelEqualsStride => "kernel_eq_stride",
            Category::Transposed => "transposed",
            Category::Grouped => "grouped",
            Category::Dilated => "dilated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCase {
    pub category: Category,
    pub spec: ConvSpec,
    pub seed: u64,
    /// Check the transposed operator instead of the forward one.
    pub transposed: bool,
}

impl GridCase {
    /// Stable key used for ordering output.
    pub fn key(&self) -> String {
        let s = &self.spec;
        format!(
            "{}/ci{}-co{}-k{}x{}-s{}-g{}-d{}{}",
            self.category.name(),
            s.c_in,
            s.c_out,
            s.k_h,
            s.k_w,
            s.stride,
            s.groups,
            s.dilation,
            if self.transposed { "-T" } else { "" }
        )
    }

    /// Image side used for this case.
    pub fn image_size(&self) -> usize {
        grid_image_size(&self.spec)
    }

    pub fn config(&self, settings: OrthoSettings) -> AocConfig {
        AocConfig::new(self.spec, self.seed).with_settings(settings)
    }
}

/// Smallest image side ≥ 8 divisible by the stride, and by `s·d` when both
/// stride and dilation exceed one.
pub fn grid_image_size(spec: &ConvSpec) -> usize {
    if spec.stride > 1 && spec.dilation > 1 {
        let m = spec.stride * spec.dilation;
        DESK_SIZE.div_ceil(m) * m
    } else {
        desk_size_for(spec.stride)
    }
}

type Row = (usize, usize, usize, usize, usize, usize);

fn rows(category: Category, transposed: bool, rows: &[Row]) -> impl Iterator<Item = GridCase> + '_ {
    rows.iter().map(move |&(c_in, c_out, k, s, g, d)| GridCase {
        category,
        spec: ConvSpec::new(c_in, c_out, k)
            .with_stride(s)
            .with_groups(g)
            .with_dilation(d),
        seed: 0,
        transposed,
    })
}

/// The full grid. Rows are `(c_in, c_out, k, s, g, d)`.
pub fn default_grid() -> Vec<GridCase> {
    use Category::*;
    let mut cases: Vec<GridCase> = Vec::new();
    cases.extend(rows(
        CommonCnn,
        false,
        &[
            (1, 1, 1, 1, 1, 1),
            (5, 3, 1, 1, 1, 1),
            (16, 16, 1, 1, 1, 1),
            (2, 2, 3, 1, 1, 1),
            (4, 4, 3, 1, 1, 1),
            (8, 8, 3, 1, 1, 1),
            (16, 16, 3, 1, 1, 1),
            (3, 16, 3, 1, 1, 1),
            (16, 8, 3, 1, 1, 1),
            (4, 8, 3, 1, 1, 1),
            (8, 4, 3, 1, 1, 1),
            (4, 4, 5, 1, 1, 1),
            (8, 8, 5, 1, 1, 1),
            (3, 8, 5, 1, 1, 1),
        ],
    ));
    cases.extend(rows(
        ExtendedStrided,
        false,
        &[
            (8, 4, 3, 2, 1, 1),
            (4, 8, 3, 2, 1, 1),
            (4, 16, 3, 2, 1, 1),
            (2, 16, 3, 2, 1, 1),
            (1, 8, 3, 2, 1, 1),
            (16, 4, 3, 2, 1, 1),
            (16, 16, 3, 2, 1, 1),
            (8, 8, 5, 2, 1, 1),
            (6, 12, 3, 2, 1, 1),
            (4, 4, 5, 3, 1, 1),
            (4, 2, 5, 3, 1, 1),
            (2, 18, 5, 3, 1, 1),
            (1, 18, 5, 3, 1, 1),
        ],
    ));
    cases.extend(rows(
        EvenKernel,
        false,
        &[
            (4, 4, 2, 1, 1, 1),
            (8, 8, 2, 1, 1, 1),
            (3, 6, 2, 1, 1, 1),
            (8, 4, 4, 1, 1, 1),
            (4, 8, 4, 2, 1, 1),
            (6, 6, 4, 2, 1, 1),
        ],
    ));
    cases.extend(rows(
        DepthwiseKernelStride,
        false,
        &[
            (2, 2, 2, 2, 2, 1),
            (4, 4, 2, 2, 4, 1),
            (8, 8, 2, 2, 8, 1),
            (3, 3, 3, 3, 3, 1),
            (4, 4, 1, 1, 4, 1),
        ],
    ));
    cases.extend(rows(
        KernelEqualsStride,
        false,
        &[
            (3, 12, 2, 2, 1, 1),
            (4, 8, 2, 2, 1, 1),
            (2, 16, 2, 2, 1, 1),
            (8, 2, 2, 2, 1, 1),
            (4, 4, 2, 2, 1, 1),
            (1, 4, 2, 2, 1, 1),
            (1, 9, 3, 3, 1, 1),
            (2, 6, 3, 3, 1, 1),
        ],
    ));
    cases.extend(rows(
        Transposed,
        true,
        &[
            (4, 8, 3, 1, 1, 1),
            (8, 4, 3, 2, 1, 1),
            (4, 8, 3, 2, 1, 1),
            (4, 16, 2, 2, 1, 1),
            (2, 16, 3, 2, 1, 1),
            (8, 8, 3, 1, 2, 1),
        ],
    ));
    cases.extend(rows(
        Grouped,
        false,
        &[
            (8, 8, 3, 1, 2, 1),
            (8, 16, 3, 1, 4, 1),
            (16, 16, 3, 1, 4, 1),
            (4, 4, 5, 1, 2, 1),
            (8, 4, 3, 2, 2, 1),
            (4, 8, 3, 2, 2, 1),
            (16, 8, 3, 2, 2, 1),
            (8, 8, 2, 2, 4, 1),
        ],
    ));
    cases.extend(rows(
        Dilated,
        false,
        &[
            (4, 4, 3, 1, 1, 2),
            (8, 8, 3, 1, 1, 2),
            (4, 8, 2, 1, 1, 2),
            (8, 4, 3, 1, 2, 2),
            (3, 6, 5, 1, 1, 2),
            (4, 4, 5, 3, 1, 2),
            (2, 8, 3, 3, 1, 2),
        ],
    ));
    for (i, c) in cases.iter_mut().enumerate() {
        c.seed = 1000 + i as u64;
    }
    cases
}

/// Result of building and checking one grid case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub key: String,
    pub category: Category,
    pub branch: BranchTag,
    pub image_size: usize,
    pub report: SpectrumReport,
}

/// Spectrum tolerance for stacks built with `settings`.
pub fn tolerance_for(settings: &OrthoSettings) -> f64 {
    match settings.scheme {
        Scheme::Cholesky => CHOLESKY_TOLERANCE,
        _ => DEFAULT_TOLERANCE,
    }
}

/// Build the case's AOC kernel with `settings` and check its spectrum.
pub fn run_case(case: &GridCase, settings: OrthoSettings) -> Result<CaseOutcome> {
    let (kernel, branch) = aoc_kernel(&case.config(settings))?;
    let n = case.image_size();
    let tol = tolerance_for(&settings);
    let report = if case.transposed {
        verify::check_transposed_orthogonality(&kernel, &case.spec, n, n, tol)?
    } else {
        verify::check_orthogonality(&kernel, &case.spec, n, n, tol)?
    };
    Ok(CaseOutcome {
        key: case.key(),
        category: case.category,
        branch,
        image_size: n,
        report,
    })
}

/// Run every case (in parallel) and return outcomes sorted by key.
pub fn run_grid(cases: &[GridCase], settings: OrthoSettings) -> Result<Vec<CaseOutcome>> {
    let mut out = cases
        .par_iter()
        .map(|c| run_case(c, settings))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}
