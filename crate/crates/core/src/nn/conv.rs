//! Stride-1, resolution-preserving (dilated) 2-D convolution via im2col.
//!
//! Weights are laid out `[out, in, k, k]`; padding is `dilation·(k−1)/2`
//! zeros on every side so that the output has the input's spatial size.

use crate::nn::{gemm, Real, Tensor};

/// Static description of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// Side length of the window one output pixel sees.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Valid destination range `[lo, hi)` along one axis for a tap offset.
#[inline]
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds `input` (`C×H×W`) into a `(C·k·k)×(H·W)` column matrix.
pub fn im2col<T: Real>(input: &[T], shape: &ConvShape, height: usize, width: usize, col: &mut [T]) {
    let n = height * width;
    let k = shape.kernel;
    let pad = shape.padding() as isize;
    let d = shape.dilation as isize;
    debug_assert_eq!(col.len(), shape.col_rows() * n);
    for c in 0..shape.in_channels {
        let plane = &input[c * n..(c + 1) * n];
        for ky in 0..k {
            let oy = ky as isize * d - pad;
            let (y_lo, y_hi) = valid_range(height, oy);
            for kx in 0..k {
                let ox = kx as isize * d - pad;
                let (x_lo, x_hi) = valid_range(width, ox);
                let row = ((c * k + ky) * k + kx) * n;
                let dst = &mut col[row..row + n];
                for y in 0..height {
                    let line = &mut dst[y * width..(y + 1) * width];
                    if y < y_lo || y >= y_hi || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let sy = (y as isize + oy) as usize;
                    let src_lo = (x_lo as isize + ox) as usize;
                    let src = &plane[sy * width + src_lo..sy * width + src_lo + (x_hi - x_lo)];
                    line[..x_lo].fill(T::zero());
                    line[x_lo..x_hi].copy_from_slice(src);
                    line[x_hi..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back onto `out`.
pub fn col2im_add<T: Real>(col: &[T], shape: &ConvShape, height: usize, width: usize, out: &mut [T]) {
    let n = height * width;
    let k = shape.kernel;
    let pad = shape.padding() as isize;
    let d = shape.dilation as isize;
    for c in 0..shape.in_channels {
        let plane = &mut out[c * n..(c + 1) * n];
        for ky in 0..k {
            let oy = ky as isize * d - pad;
            let (y_lo, y_hi) = valid_range(height, oy);
            for kx in 0..k {
                let ox = kx as isize * d - pad;
                let (x_lo, x_hi) = valid_range(width, ox);
                if x_lo >= x_hi {
                    continue;
                }
                let row = ((c * k + ky) * k + kx) * n;
                let src = &col[row..row + n];
                for y in y_lo..y_hi {
                    let sy = (y as isize + oy) as usize;
                    let dst_lo = (x_lo as isize + ox) as usize;
                    let dst = &mut plane[sy * width + dst_lo..sy * width + dst_lo + (x_hi - x_lo)];
                    for (o, &v) in dst.iter_mut().zip(&src[y * width + x_lo..y * width + x_hi]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, shape: &ConvShape, weight: &[T], bias: &[T]) -> Tensor<T> {
    assert_eq!(input.channels, shape.in_channels, "conv input channels");
    assert_eq!(weight.len(), shape.weight_len(), "conv weight length");
    assert_eq!(bias.len(), shape.out_channels, "conv bias length");
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let mut out = Tensor::zeros(shape.out_channels, h, w);
    for (o, &b) in bias.iter().enumerate() {
        out.data[o * n..(o + 1) * n].fill(b);
    }
    if shape.kernel == 1 {
        gemm(false, false, shape.out_channels, n, shape.in_channels, weight, &input.data, T::one(), &mut out.data);
    } else {
        let mut col = vec![T::zero(); shape.col_rows() * n];
        im2col(&input.data, shape, h, w, &mut col);
        gemm(false, false, shape.out_channels, n, shape.col_rows(), weight, &col, T::one(), &mut out.data);
    }
    out
}

/// Accumulates weight/bias gradients and, when requested, writes the input
/// gradient (added onto `grad_input`).
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    shape: &ConvShape,
    weight: &[T],
    grad_output: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
) {
    let (h, w) = (input.height, input.width);
    let n = h * w;
    assert_eq!(grad_output.len(), shape.out_channels * n, "conv grad_output length");
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_output[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    let rows = shape.col_rows();
    if shape.kernel == 1 {
        gemm(false, true, shape.out_channels, rows, n, grad_output, &input.data, T::one(), grad_weight);
        if let Some(gi) = grad_input {
            gemm(true, false, rows, n, shape.out_channels, weight, grad_output, T::one(), gi);
        }
        return;
    }
    let mut col = vec![T::zero(); rows * n];
    im2col(&input.data, shape, h, w, &mut col);
    gemm(false, true, shape.out_channels, rows, n, grad_output, &col, T::one(), grad_weight);
    if let Some(gi) = grad_input {
        gemm(true, false, rows, n, shape.out_channels, weight, grad_output, T::zero(), &mut col);
        col2im_add(&col, shape, h, w, gi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn direct(input: &Tensor<f64>, s: &ConvShape, weight: &[f64], bias: &[f64]) -> Tensor<f64> {
        let (h, w) = (input.height as isize, input.width as isize);
        let pad = s.padding() as isize;
        let k = s.kernel;
        let mut out = Tensor::zeros(s.out_channels, input.height, input.width);
        for o in 0..s.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..s.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y + (ky * s.dilation) as isize - pad;
                                let sx = x + (kx * s.dilation) as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                acc += weight[((o * s.in_channels + c) * k + ky) * k + kx]
                                    * input.data[(c * input.height + sy as usize) * input.width + sx as usize];
                            }
                        }
                    }
                    out.data[(o * input.height + y as usize) * input.width + x as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    #[test]
    fn forward_matches_direct_convolution() {
        for (kernel, dilation) in [(3, 1), (3, 2), (3, 3), (1, 1)] {
            let s = ConvShape { in_channels: 2, out_channels: 3, kernel, dilation };
            let input = Tensor::from_vec(2, 7, 9, pseudo(2 * 7 * 9, 0.7)).unwrap();
            let weight = pseudo(s.weight_len(), 1.3);
            let bias = pseudo(3, 2.1);
            let got = conv2d_forward(&input, &s, &weight, &bias);
            let want = direct(&input, &s, &weight, &bias);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12, "k={kernel} d={dilation}");
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint_of_forward() {
        // <dy, conv(x)> is linear in x and w, so the gradients are exact adjoints.
        let s = ConvShape { in_channels: 2, out_channels: 2, kernel: 3, dilation: 2 };
        let input = Tensor::from_vec(2, 6, 5, pseudo(60, 0.3)).unwrap();
        let weight = pseudo(s.weight_len(), 0.9);
        let dy = pseudo(60, 1.7);
        let mut gw = vec![0.0; s.weight_len()];
        let mut gb = vec![0.0; 2];
        let mut gx = vec![0.0; 60];
        conv2d_backward(&input, &s, &weight, &dy, &mut gw, &mut gb, Some(&mut gx));
        let zero_bias = [0.0, 0.0];
        let dot = |t: &Tensor<f64>| t.data.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        // input gradient: perturb each input coordinate exactly
        for i in 0..60 {
            let mut e = Tensor::zeros(2, 6, 5);
            e.data[i] = 1.0;
            let want = dot(&direct(&e, &s, &weight, &zero_bias));
            assert!((gx[i] - want).abs() < 1e-12);
        }
        for i in 0..s.weight_len() {
            let mut e = vec![0.0; s.weight_len()];
            e[i] = 1.0;
            let want = dot(&direct(&input, &s, &e, &zero_bias));
            assert!((gw[i] - want).abs() < 1e-12);
        }
        assert!((gb[0] - dy[..30].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn receptive_field_of_dilated_kernels() {
        let rf: Vec<usize> = [1, 2, 3]
            .iter()
            .map(|&d| ConvShape { in_channels: 1, out_channels: 1, kernel: 3, dilation: d }.receptive_field())
            .collect();
        assert_eq!(rf, vec![3, 5, 7]);
    }
}
