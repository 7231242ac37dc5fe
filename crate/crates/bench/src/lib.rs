//! Benchmark fixtures shared by the criterion targets in `benches/`.

use orthokernel::KernelTensor;

/// A compatible `(B, A)` pair of random `c×c` kernels of spatial size `k`.
pub fn kernel_pair(c: usize, k: usize, seed: u64) -> (KernelTensor, KernelTensor) {
    (
        KernelTensor::random([c, c, k, k], seed),
        KernelTensor::random([c, c, k, k], seed + 1),
    )
}
