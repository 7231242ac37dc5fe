//! Wall-clock comparison of the naive and fast block-convolution paths and
//! of sequential versus tree-reduced composition.

use std::time::Instant;

use orthokernel::blockconv::compose_sequential;
use orthokernel::construct::bcop_chain;
use orthokernel::{block_conv_fast, block_conv_naive, scan_compose, KernelParams, KernelTensor};
use serde::Serialize;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Timing {
    pub baseline_s: f64,
    pub candidate_s: f64,
}

impl Timing {
    pub fn speedup(&self) -> f64 {
        self.baseline_s / self.candidate_s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub channels: usize,
    pub kernel: usize,
    pub reps: usize,
    /// Naive quadruple loop (baseline) against the fast path (candidate).
    pub block_conv: Timing,
    /// Sequential fold (baseline) against the tree scan (candidate) over a
    /// BCOP factor chain.
    pub composition: Timing,
    pub chain_len: usize,
}

fn median_seconds(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let mid = times.len() / 2;
    if times.len() % 2 == 1 {
        times[mid]
    } else {
        (times[mid - 1] + times[mid]) / 2.0
    }
}

pub fn run(channels: usize, kernel: usize, reps: usize) -> CliResult<BenchReport> {
    if reps == 0 {
        return Err(CliError::bad_input("--reps must be at least 1"));
    }
    if channels < 2 || kernel == 0 {
        return Err(CliError::bad_input(
            "--channels must be at least 2 and --kernel at least 1",
        ));
    }
    let b = KernelTensor::random([channels, channels, kernel, kernel], 1);
    let a = KernelTensor::random([channels, channels, kernel, kernel], 2);
    // Warm both paths once so allocation and thread start-up are not timed.
    block_conv_fast(&b, &a)?;
    block_conv_naive(&b, &a)?;
    let naive = median_seconds(reps, || {
        std::hint::black_box(block_conv_naive(&b, &a).expect("compatible"));
    });
    let fast = median_seconds(reps, || {
        std::hint::black_box(block_conv_fast(&b, &a).expect("compatible"));
    });

    let chain = bcop_chain(channels, channels, kernel, kernel, &KernelParams::new(3))?.chain;
    scan_compose(&chain)?;
    let sequential = median_seconds(reps, || {
        std::hint::black_box(compose_sequential(&chain).expect("compatible"));
    });
    let scan = median_seconds(reps, || {
        std::hint::black_box(scan_compose(&chain).expect("compatible"));
    });

    Ok(BenchReport {
        channels,
        kernel,
        reps,
        block_conv: Timing {
            baseline_s: naive,
            candidate_s: fast,
        },
        composition: Timing {
            baseline_s: sequential,
            candidate_s: scan,
        },
        chain_len: chain.len(),
    })
}

impl BenchReport {
    pub fn table(&self) -> String {
        let ms = |s: f64| format!("{:>12.4}", s * 1e3);
        let mut out = format!(
            "C={} k={} reps={} (median ms)\n{:<26}{:>12}{:>12}{:>10}\n",
            self.channels, self.kernel, self.reps, "operation", "baseline", "candidate", "speedup"
        );
        for (name, t) in [
            ("block conv naive/fast", self.block_conv),
            (
                &*format!("compose seq/scan (n={})", self.chain_len),
                self.composition,
            ),
        ] {
            out.push_str(&format!(
                "{name:<26}{}{}{:>9.2}x\n",
                ms(t.baseline_s),
                ms(t.candidate_s),
                t.speedup()
            ));
        }
        out
    }
}
