//! The subcommands. Each writes its result to stdout as JSON and returns the
//! exit status.

use std::collections::BTreeMap;
use std::path::Path;

use orthokernel::construct::{aoc_chain, internal_width};
use orthokernel::grid::{default_grid, grid_image_size, run_grid, CaseOutcome};
use orthokernel::io::{read_kernel, sidecar_path, write_kernel, Dtype};
use orthokernel::verify::{
    check_orthogonality, check_transposed_orthogonality, singular_values, toeplitz_from_kernel,
    toeplitz_of_transpose,
};
use orthokernel::{scan_compose, BranchTag, ConvSpec, KernelTensor, OrthoSettings};
use serde::{Deserialize, Serialize};

use crate::config::{BuildConfig, PartialConfig};
use crate::{bench, CliError, CliResult, Status};

/// Contents of `<kernel>.meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: BuildConfig,
    pub branch: BranchTag,
    pub spec: ConvSpec,
    /// Settings used for rectangular factors (differs from the configured
    /// ones only for the exponential scheme).
    pub rectangular_settings: OrthoSettings,
    pub internal_width: Option<usize>,
    pub factors: usize,
    pub shape: [usize; 4],
    pub dtype: Dtype,
}

pub fn build(
    config: Option<&Path>,
    flags: PartialConfig,
    out: &Path,
    dtype: Dtype,
) -> CliResult<Status> {
    let base = match config {
        Some(p) => PartialConfig::from_file(p)?,
        None => PartialConfig::default(),
    };
    let cfg = base.overlay(flags).finish()?;
    let aoc = cfg.aoc();
    aoc.validate()?;
    let (chain, branch) = aoc_chain(&aoc)?;
    let kernel = scan_compose(&chain)?;
    let spec = cfg.spec();
    write_kernel(out, &kernel, dtype).map_err(|e| io_error(out, e))?;
    let sidecar = Sidecar {
        config: cfg,
        branch,
        spec,
        rectangular_settings: cfg.settings().effective_for(1, 2),
        internal_width: (branch == BranchTag::Fused)
            .then(|| internal_width(spec.c_in_per_group(), spec.c_out_per_group(), spec.stride)),
        factors: chain.len(),
        shape: kernel.shape(),
        dtype,
    };
    let meta = sidecar_path(out);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(&meta, text)
        .map_err(|e| CliError::bad_input(format!("cannot write {}: {e}", meta.display())))?;
    println!("{}", serde_json::to_string(&sidecar)?);
    Ok(Status::Pass)
}

fn io_error(path: &Path, e: orthokernel::Error) -> CliError {
    CliError::bad_input(format!("{}: {e}", path.display()))
}

/// Layer options shared by `verify` and `spectrum`. Unset values come from
/// the kernel's sidecar when one exists, otherwise from the defaults.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerFlags {
    pub stride: Option<usize>,
    pub dilation: Option<usize>,
    pub transposed: bool,
    pub size: Option<[usize; 2]>,
}

struct Layer {
    kernel: KernelTensor,
    spec: ConvSpec,
    h: usize,
    w: usize,
    transposed: bool,
}

#[derive(Serialize)]
struct LayerJson<'a> {
    kernel: &'a str,
    spec: ConvSpec,
    image: [usize; 2],
    transposed: bool,
}

fn load_layer(path: &Path, flags: LayerFlags) -> CliResult<Layer> {
    let kernel = read_kernel(path).map_err(|e| io_error(path, e))?;
    let meta = sidecar_path(path);
    let sidecar: Option<Sidecar> = if meta.exists() {
        let text = std::fs::read_to_string(&meta)
            .map_err(|e| CliError::bad_input(format!("{}: {e}", meta.display())))?;
        Some(
            serde_json::from_str(&text)
                .map_err(|e| CliError::bad_input(format!("{}: {e}", meta.display())))?,
        )
    } else {
        None
    };
    let mut spec = ConvSpec::for_kernel(&kernel);
    spec.stride = flags
        .stride
        .or(sidecar.as_ref().map(|s| s.spec.stride))
        .unwrap_or(1);
    spec.dilation = flags
        .dilation
        .or(sidecar.as_ref().map(|s| s.spec.dilation))
        .unwrap_or(1);
    spec.check_kernel(&kernel)?;
    let [h, w] = flags.size.unwrap_or_else(|| {
        let n = grid_image_size(&spec);
        [n, n]
    });
    Ok(Layer {
        kernel,
        spec,
        h,
        w,
        transposed: flags.transposed,
    })
}

impl Layer {
    fn json<'a>(&self, path: &'a Path) -> LayerJson<'a> {
        LayerJson {
            kernel: path.to_str().unwrap_or("<non-utf8 path>"),
            spec: self.spec,
            image: [self.h, self.w],
            transposed: self.transposed,
        }
    }
}

#[derive(Serialize)]
struct VerifyJson<'a> {
    config: LayerJson<'a>,
    sigma_min: f64,
    sigma_max: f64,
    residual_inf: f64,
    pass: bool,
    tolerance: f64,
}

pub fn verify(path: &Path, flags: LayerFlags, tolerance: f64) -> CliResult<Status> {
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(CliError::bad_input(format!(
            "--tol must be a non-negative number, got {tolerance}"
        )));
    }
    let layer = load_layer(path, flags)?;
    let report = if layer.transposed {
        check_transposed_orthogonality(&layer.kernel, &layer.spec, layer.h, layer.w, tolerance)?
    } else {
        check_orthogonality(&layer.kernel, &layer.spec, layer.h, layer.w, tolerance)?
    };
    let out = VerifyJson {
        config: layer.json(path),
        sigma_min: report.sigma_min,
        sigma_max: report.sigma_max,
        residual_inf: report.residual_inf,
        pass: report.pass,
        tolerance,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(if report.pass {
        Status::Pass
    } else {
        Status::VerifyFailed
    })
}

#[derive(Serialize)]
struct SpectrumJson<'a> {
    config: LayerJson<'a>,
    singular_values: Vec<f64>,
}

pub fn spectrum(path: &Path, flags: LayerFlags) -> CliResult<Status> {
    let layer = load_layer(path, flags)?;
    let t = if layer.transposed {
        toeplitz_of_transpose(&layer.kernel, &layer.spec, layer.h, layer.w)?
    } else {
        toeplitz_from_kernel(&layer.kernel, &layer.spec, layer.h, layer.w)?
    };
    let out = SpectrumJson {
        config: layer.json(path),
        singular_values: singular_values(&t),
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(Status::Pass)
}

#[derive(Debug, Default, Serialize)]
pub struct CategoryCount {
    pub passed: usize,
    pub total: usize,
}

#[derive(Serialize)]
struct SelftestJson<'a> {
    settings: OrthoSettings,
    cases: usize,
    passed: usize,
    categories: BTreeMap<&'static str, CategoryCount>,
    failures: Vec<&'a CaseOutcome>,
}

pub fn selftest(settings: OrthoSettings, verbose: bool) -> CliResult<Status> {
    let outcomes = run_grid(&default_grid(), settings)?;
    let mut categories: BTreeMap<&'static str, CategoryCount> = BTreeMap::new();
    for o in &outcomes {
        let c = categories.entry(o.category.name()).or_default();
        c.total += 1;
        c.passed += o.report.pass as usize;
        if verbose {
            eprintln!(
                "{:<4} {:<52} {:<14} sigma [{:.12}, {:.12}]",
                if o.report.pass { "ok" } else { "FAIL" },
                o.key,
                o.branch.name(),
                o.report.sigma_min,
                o.report.sigma_max
            );
        }
    }
    for (name, c) in &categories {
        eprintln!("{name:<20} {}/{}", c.passed, c.total);
    }
    let passed = outcomes.iter().filter(|o| o.report.pass).count();
    let out = SelftestJson {
        settings,
        cases: outcomes.len(),
        passed,
        categories,
        failures: outcomes.iter().filter(|o| !o.report.pass).collect(),
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(if passed == outcomes.len() {
        Status::Pass
    } else {
        Status::VerifyFailed
    })
}

pub fn bench(channels: usize, kernel: usize, reps: usize, json: bool) -> CliResult<Status> {
    let report = bench::run(channels, kernel, reps)?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(Status::Pass)
}
