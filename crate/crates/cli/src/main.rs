use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use orthokernel::io::Dtype;
use orthokernel::{KernelParams, Ordering, Scheme};
use orthokernel_cli::commands::{self, LayerFlags};
use orthokernel_cli::config::PartialConfig;
use orthokernel_cli::{configure_threads, CliResult, Status};

/// Build and verify orthogonal convolution kernels.
#[derive(Parser)]
#[command(name = "orthokernel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a kernel and write it as okt-v1, with a `.meta.json` sidecar.
    Build {
        /// JSON build configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        flags: BuildFlags,
        #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
        dtype: DtypeArg,
    },
    /// Check the exact spectrum of a kernel's convolution; prints a JSON report.
    Verify {
        kernel: PathBuf,
        #[command(flatten)]
        layer: LayerArgs,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print the singular values of a kernel's convolution, descending.
    Spectrum {
        kernel: PathBuf,
        #[command(flatten)]
        layer: LayerArgs,
    },
    /// Build and verify every configuration of the built-in grid.
    Selftest {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        #[arg(long)]
        iters: Option<usize>,
        /// Print one line per case to stderr.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Time naive against fast block convolution, and sequential against
    /// scan composition.
    Bench {
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct BuildFlags {
    #[arg(long)]
    c_in: Option<usize>,
    #[arg(long)]
    c_out: Option<usize>,
    /// Kernel size: `K` or `KH,KW`.
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<[usize; 2]>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ordering: Option<OrderingArg>,
    /// Cholesky diagonal shift.
    #[arg(long)]
    eps: Option<f64>,
    /// Disable the direct-stride shortcut.
    #[arg(long)]
    no_direct_stride: bool,
}

#[derive(Args)]
struct LayerArgs {
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    dilation: Option<usize>,
    /// Check the transposed convolution instead.
    #[arg(long)]
    transposed: bool,
    /// Image height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    size: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F64,
    F32,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Bcop,
    Scfac,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: orthokernel::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [k] => Ok([num(k)?; 2]),
        [h, w] => Ok([num(h)?, num(w)?]),
        _ => Err(format!("expected K or KH,KW, got {s:?}")),
    }
}

impl BuildFlags {
    fn partial(&self) -> PartialConfig {
        PartialConfig {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            stride: self.stride,
            groups: self.groups,
            dilation: self.dilation,
            scheme: self.scheme,
            iters: self.iters,
            beta: self.beta,
            seed: self.seed,
            ordering: self.ordering.map(|o| match o {
                OrderingArg::Bcop => Ordering::Bcop,
                OrderingArg::Scfac => Ordering::Scfac,
            }),
            eps: self.eps,
            direct_stride: self.no_direct_stride.then_some(false),
        }
    }
}

impl LayerArgs {
    fn flags(&self) -> LayerFlags {
        LayerFlags {
            stride: self.stride,
            dilation: self.dilation,
            transposed: self.transposed,
            size: self.size.as_ref().map(|v| [v[0], v[1]]),
        }
    }
}

fn run(cli: Cli) -> CliResult<Status> {
    configure_threads()?;
    match cli.command {
        Command::Build {
            config,
            out,
            flags,
            dtype,
        } => {
            let dtype = match dtype {
                DtypeArg::F64 => Dtype::F64,
                DtypeArg::F32 => Dtype::F32,
            };
            commands::build(config.as_deref(), flags.partial(), &out, dtype)
        }
        Command::Verify { kernel, layer, tol } => commands::verify(&kernel, layer.flags(), tol),
        Command::Spectrum { kernel, layer } => commands::spectrum(&kernel, layer.flags()),
        Command::Selftest {
            scheme,
            iters,
            verbose,
        } => {
            let mut settings = KernelParams::new(0).settings;
            if let Some(s) = scheme {
                settings.scheme = s;
            }
            if let Some(n) = iters {
                settings.iters = n;
            }
            commands::selftest(settings, verbose)
        }
        Command::Bench {
            channels,
            kernel,
            reps,
            json,
        } => commands::bench(channels, kernel, reps, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status.code() as u8)
        }
    }
}
