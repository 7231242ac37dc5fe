#![allow(dead_code)]

use orthokernel::{ConvSpec, ImageTensor, KernelTensor};

/// Random kernel matching `spec` (grouped layout included).
pub fn kernel_for(spec: &ConvSpec, seed: u64) -> KernelTensor {
    KernelTensor::random(
        [spec.c_out, spec.c_in_per_group(), spec.k_h, spec.k_w],
        seed,
    )
    .with_groups(spec.groups)
    .unwrap()
}

pub fn image(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
    ImageTensor::random([c, h, w], seed)
}

/// A spread of convolution shapes: strides, groups, dilation, even and
/// non-square kernels.
pub fn spec_bank() -> Vec<ConvSpec> {
    vec![
        ConvSpec::new(1, 1, 1),
        ConvSpec::new(3, 2, 3),
        ConvSpec::new(2, 4, 2),
        ConvSpec::new(4, 4, 3).with_kernel_size(3, 2),
        ConvSpec::new(4, 2, 3).with_stride(2),
        ConvSpec::new(2, 8, 2).with_stride(2),
        ConvSpec::new(4, 4, 5).with_stride(2),
        ConvSpec::new(4, 6, 3).with_groups(2),
        ConvSpec::new(4, 4, 2).with_stride(2).with_groups(4),
        ConvSpec::new(3, 3, 3).with_dilation(2),
        ConvSpec::new(4, 2, 2).with_groups(2).with_dilation(2),
    ]
}

/// Size the image for `spec`: 8 unless the stride needs a multiple.
pub fn side(spec: &ConvSpec) -> usize {
    orthokernel::grid::grid_image_size(spec)
}

/// Proptest settings with a fixed seed: numerical bounds on random draws
/// should be reproducible run to run.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x0c0f_fee5),
        failure_persistence: None,
        ..Default::default()
    }
}
