use crate::tensor::{Tensor, TensorError};

use super::LayerGrads;

/// Cross-correlation parameters. Weights are `[out_channels, in_channels, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        weights.expect_rank("conv2d weights", 4)?;
        let s = weights.shape();
        if s[2] != s[3] {
            return Err(TensorError::InvalidArgument(format!(
                "conv2d: kernel must be square, got {}x{}",
                s[2], s[3]
            )));
        }
        bias.expect_shape("conv2d bias", &[s[0]])?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument(
                "conv2d: stride must be >= 1".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let k = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(TensorError::OutputSize {
                op: "conv2d",
                detail: format!("padded input {ph}x{pw} smaller than kernel {k}x{k}"),
            });
        }
        if !(ph - k).is_multiple_of(self.stride) || !(pw - k).is_multiple_of(self.stride) {
            return Err(TensorError::OutputSize {
                op: "conv2d",
                detail: format!(
                    "padded input {ph}x{pw} with kernel {k} and stride {} gives a non-integer output size",
                    self.stride
                ),
            });
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &Tensor, params: &ConvParams) -> Result<Self, TensorError> {
        input.expect_rank("conv2d input", 3)?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if c != params.in_channels() {
            return Err(TensorError::DimensionMismatch {
                op: "conv2d",
                what: "input channels",
                expected: params.in_channels(),
                actual: c,
            });
        }
        let (oh, ow) = params.output_dims(h, w)?;
        Ok(Self {
            c,
            h,
            w,
            k: params.kernel_size(),
            oh,
            ow,
            stride: params.stride,
            pad: params.padding,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row index for output row `o` and kernel row `ky`, if inside the image.
    #[inline]
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        (o * self.stride + kk)
            .checked_sub(self.pad)
            .filter(|&i| i < limit)
    }
}

/// Unrolls input windows into a `[c*k*k, oh*ow]` matrix (widened to f64).
fn im2col(input: &[f32], g: &Geometry) -> Vec<f64> {
    let p = g.cols();
    let mut cols = vec![0.0f64; g.rows() * p];
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        continue;
                    };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            *d = src_row[ix] as f64;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.cols();
    let mut out = vec![0.0f64; g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            plane[iy * g.w + ix] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c = a * b` for row-major `a: m x k`, `b: k x n` given explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index reached through the strides lies within the slices:
    // a spans (m-1)*rsa + (k-1)*csa, b spans (k-1)*rsb + (n-1)*csb, c is m x n
    // row-major; callers pass strides that describe their buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Forward convolution of a `[c, h, w]` input. Output is
/// `[out_channels, (h + 2p - k)/s + 1, (w + 2p - k)/s + 1]`.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor, TensorError> {
    let g = Geometry::new(input, params)?;
    let (oc, kdim, p) = (params.out_channels(), g.rows(), g.cols());
    let cols = im2col(input.data(), &g);
    let w = widen(&params.weights);
    let mut out = vec![0.0f64; oc * p];
    gemm(oc, kdim, p, &w, (kdim, 1), &cols, (p, 1), &mut out);
    let data = out
        .chunks_exact(p)
        .zip(params.bias.data())
        .flat_map(|(row, &b)| row.iter().map(move |v| (v + b as f64) as f32))
        .collect();
    Tensor::new([oc, g.oh, g.ow], data)
}

/// Adjoints of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_grad(
    input: &Tensor,
    params: &ConvParams,
    upstream: &Tensor,
) -> Result<LayerGrads, TensorError> {
    let g = Geometry::new(input, params)?;
    let (oc, kdim, p) = (params.out_channels(), g.rows(), g.cols());
    upstream.expect_shape("conv2d_grad upstream", &[oc, g.oh, g.ow])?;

    let up = widen(upstream);
    let d_bias: Vec<f32> = up
        .chunks_exact(p)
        .map(|row| row.iter().sum::<f64>() as f32)
        .collect();

    let cols = im2col(input.data(), &g);
    let mut dw = vec![0.0f64; oc * kdim];
    // up [oc x p] * cols^T [p x kdim]
    gemm(oc, p, kdim, &up, (p, 1), &cols, (1, p), &mut dw);

    let w = widen(&params.weights);
    let mut dcols = vec![0.0f64; kdim * p];
    // w^T [kdim x oc] * up [oc x p]
    gemm(kdim, oc, p, &w, (1, kdim), &up, (p, 1), &mut dcols);
    let d_input = col2im(&dcols, &g);

    Ok(LayerGrads {
        d_weights: Tensor::new(
            params.weights.shape(),
            dw.into_iter().map(|v| v as f32).collect(),
        )?,
        d_bias: Tensor::new([oc], d_bias)?,
        d_input: Tensor::new(
            input.shape(),
            d_input.into_iter().map(|v| v as f32).collect(),
        )?,
    })
}
