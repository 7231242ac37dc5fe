//! Dense kernel and image tensors plus the convolution contract.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng;

/// A convolution kernel indexed `[c_out][c_in / groups][k_h][k_w]`, row-major.
///
/// Grouped kernels keep the output channels of group `q` in the contiguous
/// block `[q * c_out / g, (q + 1) * c_out / g)`, reading input channels
/// `[q * c_in / g, (q + 1) * c_in / g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    shape: [usize; 4],
    groups: usize,
    data: Vec<f64>,
}

impl KernelTensor {
    pub fn new(shape: [usize; 4], groups: usize, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "kernel extents must be >= 1, got {shape:?}"
            )));
        }
        if groups == 0 || shape[0] % groups != 0 {
            return Err(Error::Shape(format!(
                "c_out = {} is not divisible by groups = {groups}",
                shape[0]
            )));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "kernel data has {} entries, shape {shape:?} needs {}",
                data.len(),
                shape.iter().product::<usize>()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel"));
        }
        Ok(Self {
            shape,
            groups,
            data,
        })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::zeros_grouped(shape, 1)
    }

    pub fn zeros_grouped(shape: [usize; 4], groups: usize) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "kernel extents must be >= 1");
        assert!(
            groups > 0 && shape[0] % groups == 0,
            "c_out must be divisible by groups"
        );
        Self {
            shape,
            groups,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut k = Self::zeros(shape);
        for m in 0..shape[0] {
            for n in 0..shape[1] {
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        k[[m, n, i, j]] = f(m, n, i, j);
                    }
                }
            }
        }
        k
    }

    /// Seeded standard-normal kernel (ungrouped).
    pub fn random(shape: [usize; 4], seed: u64) -> Self {
        let data = rng::gaussian(shape.iter().product(), seed, 0);
        Self {
            shape,
            groups: 1,
            data,
        }
    }

    /// The 1x1 identity kernel on `c` channels.
    pub fn identity(c: usize) -> Self {
        Self::centered_identity(c, 1, 1)
    }

    /// Identity channel map placed at the spatial center of a `k_h x k_w`
    /// kernel. Both extents must be odd.
    ///
    /// With the anchor-at-zero convolution convention this is a circular
    /// shift by `((k_h - 1) / 2, (k_w - 1) / 2)`; it is what `K ⊡ Kᵀ` equals
    /// for a row-orthogonal `K`.
    pub fn centered_identity(c: usize, k_h: usize, k_w: usize) -> Self {
        assert!(
            k_h % 2 == 1 && k_w % 2 == 1,
            "centered identity needs odd extents"
        );
        let mut k = Self::zeros([c, c, k_h, k_w]);
        for m in 0..c {
            k[[m, m, k_h / 2, k_w / 2]] = 1.0;
        }
        k
    }

    /// Reshape a `c_out x c_in` matrix into a 1x1 kernel.
    pub fn from_channel_matrix(m: &DenseMatrix) -> Self {
        Self {
            shape: [m.rows(), m.cols(), 1, 1],
            groups: 1,
            data: m.as_slice().to_vec(),
        }
    }

    /// Reshape a `c_out x (c_in * k_h * k_w)` matrix into a kernel.
    pub fn from_flat_matrix(m: &DenseMatrix, c_in: usize, k_h: usize, k_w: usize) -> Result<Self> {
        if m.cols() != c_in * k_h * k_w {
            return Err(Error::Shape(format!(
                "matrix has {} columns, expected {c_in}*{k_h}*{k_w}",
                m.cols()
            )));
        }
        Self::new([m.rows(), c_in, k_h, k_w], 1, m.as_slice().to_vec())
    }

    /// Flatten to the `c_out x (c_in_per_group * k_h * k_w)` matrix.
    pub fn to_flat_matrix(&self) -> DenseMatrix {
        let cols = self.shape[1] * self.shape[2] * self.shape[3];
        DenseMatrix::from_vec(self.shape[0], cols, self.data.clone())
            .expect("kernel storage matches its shape")
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn c_out(&self) -> usize {
        self.shape[0]
    }

    pub fn c_in_per_group(&self) -> usize {
        self.shape[1]
    }

    pub fn c_in(&self) -> usize {
        self.shape[1] * self.groups
    }

    pub fn k_h(&self) -> usize {
        self.shape[2]
    }

    pub fn k_w(&self) -> usize {
        self.shape[3]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Same data reinterpreted with a different group count.
    pub fn with_groups(mut self, groups: usize) -> Result<Self> {
        if groups == 0 || self.shape[0] % groups != 0 {
            return Err(Error::Shape(format!(
                "c_out = {} is not divisible by groups = {groups}",
                self.shape[0]
            )));
        }
        self.groups = groups;
        Ok(self)
    }

    #[inline]
    fn offset(&self, m: usize, n: usize, i: usize, j: usize) -> usize {
        ((m * self.shape[1] + n) * self.shape[2] + i) * self.shape[3] + j
    }

    /// Entry with zero padding outside the spatial support.
    #[inline]
    pub fn get_padded(&self, m: usize, n: usize, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i as usize >= self.shape[2] || j as usize >= self.shape[3] {
            0.0
        } else {
            self.data[self.offset(m, n, i as usize, j as usize)]
        }
    }

    /// The ungrouped kernel of group `q`.
    pub fn group(&self, q: usize) -> KernelTensor {
        assert!(q < self.groups);
        let per = self.shape[0] / self.groups;
        let block = per * self.shape[1] * self.shape[2] * self.shape[3];
        KernelTensor {
            shape: [per, self.shape[1], self.shape[2], self.shape[3]],
            groups: 1,
            data: self.data[q * block..(q + 1) * block].to_vec(),
        }
    }

    /// Stack equally shaped ungrouped kernels into one grouped kernel.
    pub fn stack_groups(parts: &[KernelTensor]) -> Result<KernelTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list of kernels".into()))?;
        if parts
            .iter()
            .any(|p| p.shape != first.shape || p.groups != 1)
        {
            return Err(Error::Shape(
                "stacked kernels must share one ungrouped shape".into(),
            ));
        }
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape;
        shape[0] *= parts.len();
        KernelTensor::new(shape, parts.len(), data)
    }

    /// Zero-pad spatially to `k_h x k_w`, placing this kernel at `(top, left)`.
    pub fn embed(&self, k_h: usize, k_w: usize, top: usize, left: usize) -> KernelTensor {
        assert!(top + self.shape[2] <= k_h && left + self.shape[3] <= k_w);
        let mut out =
            KernelTensor::zeros_grouped([self.shape[0], self.shape[1], k_h, k_w], self.groups);
        for m in 0..self.shape[0] {
            for n in 0..self.shape[1] {
                for i in 0..self.shape[2] {
                    for j in 0..self.shape[3] {
                        out[[m, n, top + i, left + j]] = self[[m, n, i, j]];
                    }
                }
            }
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> KernelTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha * other`; shapes must match exactly.
    pub fn add_scaled(&self, other: &KernelTensor, alpha: f64) -> Result<KernelTensor> {
        if self.shape != other.shape || self.groups != other.groups {
            return Err(Error::Shape(format!(
                "cannot add kernels of shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += alpha * v;
        }
        Ok(out)
    }

    /// Largest absolute entrywise difference; `INFINITY` if shapes differ.
    pub fn max_abs_diff(&self, other: &KernelTensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl Index<[usize; 4]> for KernelTensor {
    type Output = f64;

    #[inline]
    fn index(&self, [m, n, i, j]: [usize; 4]) -> &f64 {
        &self.data[self.offset(m, n, i, j)]
    }
}

impl IndexMut<[usize; 4]> for KernelTensor {
    #[inline]
    fn index_mut(&mut self, [m, n, i, j]: [usize; 4]) -> &mut f64 {
        let o = self.offset(m, n, i, j);
        &mut self.data[o]
    }
}

/// A single image indexed `[c][h][w]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "image extents must be >= 1, got {shape:?}"
            )));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "image data has {} entries, shape {shape:?} needs {}",
                data.len(),
                shape.iter().product::<usize>()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "image extents must be >= 1");
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn random(shape: [usize; 3], seed: u64) -> Self {
        Self {
            shape,
            data: rng::gaussian(shape.iter().product(), seed, 1),
        }
    }

    /// Unit impulse at `(c, i, j)`.
    pub fn impulse(shape: [usize; 3], c: usize, i: usize, j: usize) -> Self {
        let mut x = Self::zeros(shape);
        x[[c, i, j]] = 1.0;
        x
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Circular shift: `out[c][i][j] = self[c][i - di][j - dj]`.
    pub fn roll(&self, di: isize, dj: isize) -> ImageTensor {
        let [c, h, w] = self.shape;
        let mut out = Self::zeros(self.shape);
        for ch in 0..c {
            for i in 0..h {
                let si = (i as isize - di).rem_euclid(h as isize) as usize;
                for j in 0..w {
                    let sj = (j as isize - dj).rem_euclid(w as isize) as usize;
                    out[[ch, i, j]] = self[[ch, si, sj]];
                }
            }
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> ImageTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &ImageTensor, alpha: f64) -> Result<ImageTensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add images of shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += alpha * v;
        }
        Ok(out)
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<[usize; 3]> for ImageTensor {
    type Output = f64;

    #[inline]
    fn index(&self, [c, i, j]: [usize; 3]) -> &f64 {
        &self.data[(c * self.shape[1] + i) * self.shape[2] + j]
    }
}

impl IndexMut<[usize; 3]> for ImageTensor {
    #[inline]
    fn index_mut(&mut self, [c, i, j]: [usize; 3]) -> &mut f64 {
        &mut self.data[(c * self.shape[1] + i) * self.shape[2] + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Circular,
    Zero,
}

/// Shape contract of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub groups: usize,
    pub dilation: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl ConvSpec {
    /// Square kernel, stride 1, one group, no dilation, circular padding.
    pub fn new(c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            c_in,
            c_out,
            k_h: k,
            k_w: k,
            stride: 1,
            groups: 1,
            dilation: 1,
            padding: Padding::Circular,
        }
    }

    /// The spec a kernel implies with unit stride and dilation.
    pub fn for_kernel(k: &KernelTensor) -> Self {
        Self {
            c_in: k.c_in(),
            c_out: k.c_out(),
            k_h: k.k_h(),
            k_w: k.k_w(),
            stride: 1,
            groups: k.groups(),
            dilation: 1,
            padding: Padding::Circular,
        }
    }

    pub fn with_kernel_size(mut self, k_h: usize, k_w: usize) -> Self {
        self.k_h = k_h;
        self.k_w = k_w;
        self
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn with_padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn c_in_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn c_out_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// The spec of the transposed layer: channels swapped, everything else kept.
    pub fn swapped(&self) -> Self {
        Self {
            c_in: self.c_out,
            c_out: self.c_in,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_in", self.c_in),
            ("c_out", self.c_out),
            ("k_h", self.k_h),
            ("k_w", self.k_w),
            ("stride", self.stride),
            ("groups", self.groups),
            ("dilation", self.dilation),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.c_in % self.groups != 0 || self.c_out % self.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "c_in = {} and c_out = {} must both be divisible by groups = {}",
                self.c_in, self.c_out, self.groups
            )));
        }
        Ok(())
    }

    /// Check that `k` has the shape this spec describes.
    pub fn check_kernel(&self, k: &KernelTensor) -> Result<()> {
        self.validate()?;
        let expected = [self.c_out, self.c_in_per_group(), self.k_h, self.k_w];
        if k.shape() != expected || k.groups() != self.groups {
            return Err(Error::Shape(format!(
                "kernel has shape {:?} with {} groups, spec expects {expected:?} with {} groups",
                k.shape(),
                k.groups(),
                self.groups
            )));
        }
        Ok(())
    }

    /// Orthogonality statements only hold for circular padding.
    pub fn require_circular(&self) -> Result<()> {
        match self.padding {
            Padding::Circular => Ok(()),
            Padding::Zero => Err(Error::InvalidConfig(
                "orthogonality is only defined here for circular padding".into(),
            )),
        }
    }
}
